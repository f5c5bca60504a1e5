//! Min-norm point in the convex hull of per-objective gradients.
//!
//! Frank-Wolfe with away steps on the Gram matrix. The Gram matrix is divided by its
//! largest diagonal entry first, so the weights do not depend on a common gradient scale.

use crate::error::{Error, Result};

const MAX_ITERS: usize = 10_000;
const GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MgdaResult {
    pub weights: Vec<f64>,
    pub combined: Vec<f64>,
    /// ‖Σ w_m g_m‖².
    pub norm_sq: f64,
    pub iterations: usize,
    /// Final Frank-Wolfe duality gap on the normalized problem.
    pub gap: f64,
}

fn gram(gradients: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = gradients.len();
    let mut g = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v: f64 = gradients[i].iter().zip(&gradients[j]).map(|(a, b)| a * b).sum();
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    g
}

fn two_point(g: &[Vec<f64>]) -> f64 {
    // w on the first vector minimizing ‖w a + (1−w) b‖².
    let denom = g[0][0] - 2.0 * g[0][1] + g[1][1];
    if denom <= 0.0 {
        return 0.5;
    }
    ((g[1][1] - g[0][1]) / denom).clamp(0.0, 1.0)
}

fn frank_wolfe(g: &[Vec<f64>]) -> (Vec<f64>, usize, f64) {
    let m = g.len();
    let mut w = vec![1.0 / m as f64; m];
    // grad_i = (G w)_i; objective wᵀ G w.
    let mut gw: Vec<f64> = (0..m).map(|i| (0..m).map(|j| g[i][j] * w[j]).sum()).collect();
    let mut gap = f64::INFINITY;
    let mut iters = 0;
    while iters < MAX_ITERS {
        iters += 1;
        let wgw: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        let (s, gs) = gw
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
        let (a, ga) = gw
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] > 0.0)
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        gap = wgw - gs;
        if gap <= GAP_TOL {
            break;
        }
        // Direction d = e_s − w (toward) or w − e_a (away), whichever has more descent.
        let away = ga - wgw > gap && w[a] < 1.0;
        let (dir, max_step): (Vec<f64>, f64) = if away {
            let mut d: Vec<f64> = w.clone();
            d[a] -= 1.0;
            (d, w[a] / (1.0 - w[a]))
        } else {
            let mut d: Vec<f64> = w.iter().map(|v| -v).collect();
            d[s] += 1.0;
            (d, 1.0)
        };
        let gd: Vec<f64> = (0..m).map(|i| (0..m).map(|j| g[i][j] * dir[j]).sum()).collect();
        let slope: f64 = gw.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let curv: f64 = dir.iter().zip(&gd).map(|(a, b)| a * b).sum();
        let step = if curv <= 0.0 { max_step } else { (-slope / curv).clamp(0.0, max_step) };
        if step == 0.0 {
            break;
        }
        for i in 0..m {
            w[i] += step * dir[i];
            gw[i] += step * gd[i];
        }
        if away && step == max_step {
            w[a] = 0.0;
        }
        for v in w.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (w, iters, gap)
}

pub fn mgda_minnorm(gradients: &[Vec<f64>]) -> Result<MgdaResult> {
    let m = gradients.len();
    if m == 0 {
        return Err(Error::InvalidInput("no gradients".into()));
    }
    let dim = gradients[0].len();
    if gradients.iter().any(|g| g.len() != dim) {
        return Err(Error::Shape("gradients differ in dimension".into()));
    }
    if gradients.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite gradient entry".into()));
    }
    let mut g = gram(gradients);
    let scale = (0..m).map(|i| g[i][i]).fold(0.0, f64::max);
    if scale > 0.0 {
        g.iter_mut().flatten().for_each(|v| *v /= scale);
    }
    let (weights, iterations, gap) = match m {
        1 => (vec![1.0], 0, 0.0),
        2 => {
            let a = two_point(&g);
            (vec![a, 1.0 - a], 0, 0.0)
        }
        _ if scale == 0.0 => (vec![1.0 / m as f64; m], 0, 0.0),
        _ => frank_wolfe(&g),
    };
    let mut combined = vec![0.0; dim];
    for (w, grad) in weights.iter().zip(gradients) {
        for (c, v) in combined.iter_mut().zip(grad) {
            *c += w * v;
        }
    }
    let norm_sq = combined.iter().map(|v| v * v).sum();
    Ok(MgdaResult {
        weights,
        combined,
        norm_sq,
        iterations,
        gap,
    })
}

/// max_m (‖d‖² − g_mᵀ d)⁺ for d = Σ w g; zero at the min-norm point.
pub fn kkt_residual(gradients: &[Vec<f64>], weights: &[f64]) -> f64 {
    let dim = gradients.first().map_or(0, |g| g.len());
    let mut d = vec![0.0; dim];
    for (w, g) in weights.iter().zip(gradients) {
        for (c, v) in d.iter_mut().zip(g) {
            *c += w * v;
        }
    }
    let dd: f64 = d.iter().map(|v| v * v).sum();
    gradients
        .iter()
        .map(|g| dd - g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>())
        .fold(0.0, f64::max)
}
