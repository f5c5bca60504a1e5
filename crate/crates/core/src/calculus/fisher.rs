//! Fisher matrices and natural-gradient solves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{log_softmax, CompletionDist, TabularPolicy};

/// Eigenvalues at or below this fraction of the largest one are treated as null space.
pub const PINV_REL_THRESHOLD: f64 = 1e-10;

/// Largest per-prompt parameter dimension for which a dense Fisher is formed.
pub const FISHER_DIM_CAP: usize = 1024;

/// diag(p) − p pᵀ.
pub fn fisher_categorical(dist: &CompletionDist) -> DMatrix<f64> {
    let p = dist.probs();
    let n = p.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { p[i] } else { 0.0 };
        d - p[i] * p[j]
    })
}

/// Sparse ψ(y) = Σ_l φ_l(x, y; θ) in prompt-local coordinates.
fn trajectory_feature(policy: &TabularPolicy, prompt: usize, completion: usize) -> Vec<(usize, f64)> {
    let env = policy.env();
    let base = env.prompt_offset(prompt);
    let mut out = Vec::with_capacity(env.out_len() * env.vocab_size());
    for l in 0..env.out_len() {
        let b = env.block_index(prompt, l, env.prefix_of(completion, l));
        let off = env.block_offset(b) - base;
        let tok = env.token(completion, l);
        for (t, v) in log_softmax(policy.block(b)).iter().enumerate() {
            let e = if t == tok { 1.0 } else { 0.0 };
            out.push((off + t, e - v.exp()));
        }
    }
    out
}

fn check_fisher_dims(policy: &TabularPolicy, prompt: usize, group_size: usize) -> Result<usize> {
    let env = policy.env();
    env.check_prompt(prompt)?;
    if group_size == 0 {
        return Err(Error::InvalidGroup("group size must be positive".into()));
    }
    let dim = env.params_per_prompt();
    if dim > FISHER_DIM_CAP {
        return Err(Error::Capacity(format!(
            "per-prompt parameter dimension {dim} exceeds Fisher cap {FISHER_DIM_CAP}"
        )));
    }
    Ok(dim)
}

/// E[(Σ_k Σ_l φ_{k,l})(Σ_k Σ_l φ_{k,l})ᵀ] for K completions drawn from `policy` itself,
/// in the coordinates of `prompt`'s parameter slice.
pub fn fisher_aggregated(policy: &TabularPolicy, prompt: usize, group_size: usize) -> Result<DMatrix<f64>> {
    fisher_aggregated_under(policy, policy, prompt, group_size)
}

/// As [`fisher_aggregated`], with φ evaluated at `policy` and completions drawn from `sampler`.
///
/// Independence across the group gives K E_q[ψψᵀ] + K(K−1) E_q[ψ] E_q[ψ]ᵀ exactly.
pub fn fisher_aggregated_under(
    policy: &TabularPolicy,
    sampler: &TabularPolicy,
    prompt: usize,
    group_size: usize,
) -> Result<DMatrix<f64>> {
    let dim = check_fisher_dims(policy, prompt, group_size)?;
    let q: Vec<f64> = sampler.completion_log_probs(prompt).iter().map(|v| v.exp()).collect();
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    let mut mean = DVector::<f64>::zeros(dim);
    for (y, &qy) in q.iter().enumerate() {
        if qy == 0.0 {
            continue;
        }
        let psi = trajectory_feature(policy, prompt, y);
        for &(i, a) in &psi {
            mean[i] += qy * a;
            for &(j, b) in &psi {
                second[(i, j)] += qy * a * b;
            }
        }
    }
    let k = group_size as f64;
    let mut f = second * k;
    if group_size > 1 {
        f += &mean * mean.transpose() * (k * (k - 1.0));
    }
    Ok(f)
}

/// Sample-average estimate of the aggregated Fisher over `groups` groups.
pub fn fisher_aggregated_monte_carlo<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    sampler: &TabularPolicy,
    prompt: usize,
    group_size: usize,
    groups: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let dim = check_fisher_dims(policy, prompt, group_size)?;
    if groups == 0 {
        return Err(Error::InvalidInput("groups must be positive".into()));
    }
    let mut f = DMatrix::<f64>::zeros(dim, dim);
    let mut v = DVector::<f64>::zeros(dim);
    for _ in 0..groups {
        v.fill(0.0);
        for _ in 0..group_size {
            let y = sampler.sample_completion(prompt, rng)?.completion;
            for (i, a) in trajectory_feature(policy, prompt, y) {
                v[i] += a;
            }
        }
        f.syger(1.0, &v, &v, 1.0);
    }
    f.fill_upper_triangle_with_lower_triangle();
    Ok(f / groups as f64)
}

/// Canonical sum-zero solution d = w − E_p[w] of F d = ∇E[w] in flat coordinates.
pub fn natural_gradient_flat(dist: &CompletionDist, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != dist.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} completions",
            weights.len(),
            dist.len()
        )));
    }
    let mean = dist.expectation(weights);
    let d: Vec<f64> = weights.iter().map(|w| w - mean).collect();
    if cfg!(debug_assertions) {
        // F d = p ⊙ (w − E w), which is the flat gradient of E[w]
        let f = fisher_categorical(dist);
        let fd = &f * DVector::from_column_slice(&d);
        for (i, p) in dist.probs().iter().enumerate() {
            debug_assert!((fd[i] - p * d[i]).abs() <= 1e-9);
        }
    }
    Ok(d)
}

/// Eigendecomposition pseudo-inverse of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    cutoff: f64,
}

impl PseudoInverse {
    pub fn new(f: &DMatrix<f64>) -> Result<Self> {
        if !f.is_square() {
            return Err(Error::Shape("Fisher matrix must be square".into()));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Fisher matrix entry".into()));
        }
        // symmetrize to remove rounding asymmetry before the symmetric solver
        let sym = (f + f.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            cutoff: PINV_REL_THRESHOLD * max,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    fn in_range(&self, i: usize) -> bool {
        self.eigenvalues[i] > self.cutoff && self.eigenvalues[i] > 0.0
    }

    pub fn rank(&self) -> usize {
        (0..self.eigenvalues.len()).filter(|&i| self.in_range(i)).count()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    fn coords(&self, v: &[f64]) -> DVector<f64> {
        self.eigenvectors.tr_mul(&DVector::from_column_slice(v))
    }

    /// F⁺ v.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut c = self.coords(v);
        for i in 0..c.len() {
            c[i] = if self.in_range(i) { c[i] / self.eigenvalues[i] } else { 0.0 };
        }
        (&self.eigenvectors * c).iter().cloned().collect()
    }

    /// vᵀ F⁺ v, the squared norm of F^{+1/2} v.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let c = self.coords(v);
        (0..c.len())
            .filter(|&i| self.in_range(i))
            .map(|i| c[i] * c[i] / self.eigenvalues[i])
            .sum()
    }

    /// Norm of the component of v outside the range of F.
    pub fn null_component(&self, v: &[f64]) -> f64 {
        let c = self.coords(v);
        (0..c.len())
            .filter(|&i| !self.in_range(i))
            .map(|i| c[i] * c[i])
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGradient {
    pub direction: Vec<f64>,
    /// ‖rhs component in the null space of F‖.
    pub null_residual: f64,
    /// Set when the null-space component exceeds 1e-6 ‖rhs‖.
    pub inconsistent: bool,
}

/// Minimum-norm solution d = F⁺ rhs, lying in the range of F.
pub fn natural_gradient_general(f: &DMatrix<f64>, rhs: &[f64]) -> Result<NaturalGradient> {
    if f.nrows() != rhs.len() {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, rhs has {} entries",
            f.nrows(),
            f.ncols(),
            rhs.len()
        )));
    }
    let pinv = PseudoInverse::new(f)?;
    let null_residual = pinv.null_component(rhs);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(NaturalGradient {
        direction: pinv.solve(rhs),
        null_residual,
        inconsistent: null_residual > 1e-6 * rhs_norm,
    })
}
