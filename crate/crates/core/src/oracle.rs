//! Brute-force verifiers. None of these share arithmetic with the modules they check:
//! probabilities are naive products of exponentials, covariances use E[ab] − E[a]E[b],
//! pseudo-inverses go through an SVD, and the min-norm oracle enumerates simplex faces.

use nalgebra::{DMatrix, DVector};

use crate::env::EnvSpec;
use crate::error::{Error, Result};

pub const ORDER_BAND: (f64, f64) = (0.15, 0.35);
pub const ORDER_FLOOR: f64 = 1e-13;

/// E_q[s] − (1/η) KL(q‖p); −∞ where q puts mass outside the support of p.
pub fn kl_objective(q: &[f64], p: &[f64], scores: &[f64], eta: f64) -> f64 {
    let mut lin = 0.0;
    let mut kl = 0.0;
    for i in 0..q.len() {
        lin += q[i] * scores[i];
        if q[i] > 0.0 {
            if p[i] == 0.0 {
                return f64::NEG_INFINITY;
            }
            kl += q[i] * (q[i] / p[i]).ln();
        }
    }
    lin - kl / eta
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMaximum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluated: usize,
}

/// Exhaustive search over the simplex grid {k · step}.
pub fn grid_maximize_kl_objective(p: &[f64], scores: &[f64], eta: f64, grid_step: f64) -> Result<GridMaximum> {
    let n = p.len();
    if n == 0 || n > 4 {
        return Err(Error::InvalidInput(format!("grid search needs 1..=4 outcomes, got {n}")));
    }
    if scores.len() != n {
        return Err(Error::Shape("scores and distribution differ in length".into()));
    }
    if !(grid_step > 0.0 && grid_step <= 0.02) {
        return Err(Error::InvalidInput(format!("grid step must lie in (0, 0.02], got {grid_step}")));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let units = (1.0 / grid_step).round() as usize;
    let mut best = GridMaximum {
        point: Vec::new(),
        value: f64::NEG_INFINITY,
        evaluated: 0,
    };
    let mut counts = vec![0usize; n];
    fn rec(i: usize, left: usize, counts: &mut [usize], f: &mut dyn FnMut(&[usize])) {
        if i + 1 == counts.len() {
            counts[i] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[i] = c;
            rec(i + 1, left - c, counts, f);
        }
    }
    rec(0, units, &mut counts, &mut |c| {
        let q: Vec<f64> = c.iter().map(|&k| k as f64 / units as f64).collect();
        let v = kl_objective(&q, p, scores, eta);
        best.evaluated += 1;
        if v > best.value || best.point.is_empty() {
            best.value = v;
            best.point = q;
        }
    });
    Ok(best)
}

/// Central differences (f(x + h e_i) − f(x − h e_i)) / 2h.
pub fn finite_diff_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    let mut x = point.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::NonFinite(format!("function value at coordinate {i}")));
        }
        g.push((fp - fm) / (2.0 * step));
    }
    Ok(g)
}

/// p(y|x) for every completion as a product of plainly normalized exponentials.
pub fn brute_force_completion_probs(env: &EnvSpec, logits: &[f64], prompt: usize) -> Vec<f64> {
    let v = env.vocab_size();
    let len = env.out_len();
    let blocks_per_prompt: usize = (0..len).map(|l| v.pow(l as u32)).sum();
    let n = v.pow(len as u32);
    (0..n)
        .map(|y| {
            // Big-endian digits of y.
            let tokens: Vec<usize> = (0..len).map(|l| (y / v.pow((len - 1 - l) as u32)) % v).collect();
            let mut prob = 1.0;
            let mut level_start = 0;
            for l in 0..len {
                let prefix = tokens[..l].iter().fold(0, |acc, t| acc * v + t);
                let block = prompt * blocks_per_prompt + level_start + prefix;
                let z = &logits[block * v..(block + 1) * v];
                let denom: f64 = z.iter().map(|a| a.exp()).sum();
                prob *= z[tokens[l]].exp() / denom;
                level_start += v.pow(l as u32);
            }
            prob
        })
        .collect()
}

pub fn brute_force_expectation(probs: &[f64], values: &[f64]) -> f64 {
    probs.iter().zip(values).map(|(p, v)| p * v).sum()
}

/// E[ab] − E[a] E[b].
pub fn brute_force_covariance(probs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    brute_force_expectation(probs, &ab) - brute_force_expectation(probs, a) * brute_force_expectation(probs, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderCheckResult {
    pub etas: Vec<f64>,
    pub residuals: Vec<f64>,
    /// residual(η_{i+1}) / residual(η_i); `None` where a residual is below the floor.
    pub ratios: Vec<Option<f64>>,
    pub pass: bool,
    /// Every residual fell below the floor.
    pub degenerate: bool,
}

/// Residuals at η, η/2, …, η/2^halvings; passes iff every defined ratio lies in the band.
pub fn order_check(mut residual: impl FnMut(f64) -> f64, eta_start: f64, halvings: usize) -> Result<OrderCheckResult> {
    if halvings < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 halvings, got {halvings}")));
    }
    let etas: Vec<f64> = (0..=halvings).map(|i| eta_start / 2f64.powi(i as i32)).collect();
    order_check_at(&etas, etas.iter().map(|&e| residual(e).abs()).collect())
}

/// Same verdict for an arbitrary decreasing η list with precomputed residuals.
pub fn order_check_at(etas: &[f64], residuals: Vec<f64>) -> Result<OrderCheckResult> {
    if etas.len() != residuals.len() || etas.len() < 2 {
        return Err(Error::InvalidInput("need matching eta and residual lists of length >= 2".into()));
    }
    let ratios: Vec<Option<f64>> = residuals
        .windows(2)
        .map(|w| {
            if w[0].abs() < ORDER_FLOOR || w[1].abs() < ORDER_FLOOR {
                None
            } else {
                Some(w[1].abs() / w[0].abs())
            }
        })
        .collect();
    let degenerate = ratios.iter().all(|r| r.is_none());
    let pass = ratios
        .iter()
        .flatten()
        .all(|r| *r >= ORDER_BAND.0 && *r <= ORDER_BAND.1);
    Ok(OrderCheckResult {
        etas: etas.to_vec(),
        residuals,
        ratios,
        pass,
        degenerate,
    })
}

/// Pseudo-inverse through an SVD with singular values below rel · σ_max dropped.
pub fn svd_pseudo_inverse(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > rel * smax && *s > 0.0 {
            out += vt.row(i).transpose() * u.column(i).transpose() / *s;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormOracle {
    pub weights: Vec<f64>,
    pub norm_sq: f64,
}

/// Min ‖Σ w g‖² over the simplex by solving the equality-constrained problem on every face.
pub fn brute_force_min_norm(gradients: &[Vec<f64>]) -> Result<MinNormOracle> {
    let m = gradients.len();
    if m == 0 || m > 10 {
        return Err(Error::InvalidInput(format!("face enumeration needs 1..=10 vectors, got {m}")));
    }
    let gram = DMatrix::from_fn(m, m, |i, j| {
        gradients[i].iter().zip(&gradients[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let mut best: Option<MinNormOracle> = None;
    for mask in 1usize..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let k = idx.len();
        let kkt = DMatrix::from_fn(k + 1, k + 1, |i, j| match (i < k, j < k) {
            (true, true) => gram[(idx[i], idx[j])],
            (true, false) | (false, true) => 1.0,
            (false, false) => 0.0,
        });
        let mut rhs = DVector::zeros(k + 1);
        rhs[k] = 1.0;
        let sol = svd_pseudo_inverse(&kkt, 1e-12) * rhs;
        let ws: Vec<f64> = (0..k).map(|i| sol[i]).collect();
        if ws.iter().any(|w| *w < -1e-12) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            continue;
        }
        let mut w = vec![0.0; m];
        for (i, &j) in idx.iter().enumerate() {
            w[j] = ws[i].max(0.0);
        }
        let wv = DVector::from_vec(w.clone());
        let val = (wv.transpose() * &gram * &wv)[(0, 0)];
        if best.as_ref().is_none_or(|b| val < b.norm_sq) {
            best = Some(MinNormOracle { weights: w, norm_sq: val });
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no feasible face".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_constant_scores_returns_p() {
        let p = [0.2, 0.3, 0.5];
        let g = grid_maximize_kl_objective(&p, &[1.0, 1.0, 1.0], 0.5, 0.02).unwrap();
        for (a, b) in g.point.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = grid_maximize_kl_objective(&p, &[0.0, 1.0, 3.0], 1e-6, 0.02).unwrap();
        for (a, b) in g.point.iter().zip(&p) {
            assert!((a - b).abs() <= 0.02);
        }
    }

    #[test]
    fn support_mismatch_is_minus_infinity() {
        assert_eq!(kl_objective(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 0.0], 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_gradient(|x| 3.0 * x[0] - 2.0 * x[1], &[0.4, -1.0], 1e-3).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-10 && (g[1] + 2.0).abs() < 1e-10);
        let g = finite_diff_gradient(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        assert!(finite_diff_gradient(|_| f64::NAN, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn order_check_examples() {
        let r = order_check(|e| e * e, 1e-2, 3).unwrap();
        assert!(r.pass && !r.degenerate);
        assert!(r.ratios.iter().all(|x| (x.unwrap() - 0.25).abs() < 1e-12));
        let r = order_check(|e| e, 1e-2, 3).unwrap();
        assert!(!r.pass);
        let r = order_check(|_| 0.0, 1e-2, 3).unwrap();
        assert!(r.pass && r.degenerate);
        assert!(order_check(|e| e, 1e-2, 2).is_err());
    }

    #[test]
    fn brute_probs_match_hand_values() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let p = brute_force_completion_probs(&env, &[3f64.ln(), 0.0], 0);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        assert!((brute_force_covariance(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0]) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn min_norm_faces() {
        let r = brute_force_min_norm(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((r.norm_sq - 0.5).abs() < 1e-12);
        let r = brute_force_min_norm(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(r.norm_sq.abs() < 1e-12);
    }

    #[test]
    fn svd_pinv_of_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = svd_pseudo_inverse(&m, 1e-10);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
    }
}
