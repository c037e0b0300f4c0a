//! Gaussian-process Bayesian optimization over the unit cube.
//!
//! Search spaces are presented to the optimizer as `[0, 1]^d`; the [`Space`]
//! trait lets callers snap relaxed points onto their discrete grid and
//! reject points that violate a complexity constraint.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::costmodel::CostTotals;

/// Candidates drawn per acquisition maximization.
pub const N_CANDIDATES: usize = 2048;
/// Length scale of every dimension, relative to the normalized range.
pub const DEFAULT_LENGTH_SCALE: f64 = 0.3;
/// Diagonal jitter relative to the signal variance.
pub const BASE_JITTER: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("covariance is not positive definite even with jitter {jitter:e}")]
    SingularCovariance { jitter: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no candidate satisfies the constraint")]
    InfeasibleSpace,
    #[error("objective failed at {theta:?}: {message}")]
    Objective { theta: Vec<f64>, message: String },
}

/// One observation `(θ, f(θ))`, with θ in the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub theta: Vec<f64>,
    pub score: f64,
    pub cost: Option<CostTotals>,
}

/// What an objective returns for one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub cost: Option<CostTotals>,
}

impl From<f64> for Evaluation {
    fn from(score: f64) -> Self {
        Evaluation { score, cost: None }
    }
}

/// Unit-cube view of a search space.
pub trait Space {
    fn dim(&self) -> usize;

    /// Representative point of the grid cell containing `u`.
    fn canonical(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }

    fn feasible(&self, _u: &[f64]) -> bool {
        true
    }
}

/// Unconstrained continuous `[0, 1]^d`.
#[derive(Debug, Clone, Copy)]
pub struct UnitCube(pub usize);

impl Space for UnitCube {
    fn dim(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    /// Absolute jitter added to the diagonal.
    pub jitter: f64,
}

impl KernelParams {
    /// Fixed heuristics: `ℓ_d = 0.3`, `σ_s²` = sample variance of the
    /// scores (1 when degenerate), jitter `10⁻⁸·σ_s²`.
    pub fn heuristic(dim: usize, scores: &[f64]) -> Self {
        let n = scores.len();
        let mut var = 1.0;
        if n >= 2 {
            let mean = scores.iter().sum::<f64>() / n as f64;
            let v = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if v.is_finite() && v > 0.0 {
                var = v;
            }
        }
        KernelParams {
            signal_var: var,
            length_scales: vec![DEFAULT_LENGTH_SCALE; dim],
            jitter: BASE_JITTER * var,
        }
    }
}

/// Squared-exponential covariance `σ_s²·exp(−½ Σ ((x_d − x'_d)/ℓ_d)²)`.
pub fn kernel(x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64, BoError> {
    if x.len() != y.len() {
        return Err(BoError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if params.length_scales.len() != x.len() {
        return Err(BoError::DimensionMismatch {
            expected: params.length_scales.len(),
            found: x.len(),
        });
    }
    Ok(sq_exp(x, y, params))
}

fn sq_exp(x: &[f64], y: &[f64], params: &KernelParams) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(&params.length_scales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    params.signal_var * (-0.5 * r2).exp()
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub inputs: Vec<Vec<f64>>,
    /// Training scores minus `prior_mean`.
    pub centered: Vec<f64>,
    pub prior_mean: f64,
    pub params: KernelParams,
    chol: Cholesky<f64, Dyn>,
    /// Mean weights `K⁻¹(y − m)` for the un-jittered `K`, in double-double.
    alpha: Vec<dd::Dd>,
}

impl GpModel {
    pub fn dim(&self) -> usize {
        self.params.length_scales.len()
    }

    /// Lower-triangular factor of the jittered covariance.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Jittered training covariance the factor was computed from.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.inputs.len();
        DMatrix::from_fn(n, n, |i, j| {
            sq_exp(&self.inputs[i], &self.inputs[j], &self.params) + if i == j { self.params.jitter } else { 0.0 }
        })
    }
}

/// Keep one trial per distinct θ, the best-scoring one.
pub fn dedup_trials(trials: &[Trial]) -> Vec<Trial> {
    let mut out: Vec<Trial> = Vec::with_capacity(trials.len());
    for t in trials {
        match out.iter_mut().find(|o| o.theta == t.theta) {
            Some(o) if t.score > o.score => *o = t.clone(),
            Some(_) => {}
            None => out.push(t.clone()),
        }
    }
    out
}

/// Exact GP regression on (deduplicated) trials.
///
/// The covariance factor carries diagonal jitter, escalated ×10 up to
/// `10⁻⁴·σ_s²` if the factorization fails; it serves the posterior variance.
/// The posterior-mean weights solve the un-jittered system in double-double
/// arithmetic, so the mean interpolates the training scores even when nearby
/// points make `K` numerically singular in f64.
pub fn gp_fit(trials: &[Trial], params: &KernelParams) -> Result<GpModel, BoError> {
    if trials.is_empty() {
        return Err(BoError::Domain("gp_fit needs at least one trial".into()));
    }
    let dim = params.length_scales.len();
    for t in trials {
        if t.theta.len() != dim {
            return Err(BoError::DimensionMismatch {
                expected: dim,
                found: t.theta.len(),
            });
        }
        if !t.score.is_finite() {
            return Err(BoError::Domain(format!("non-finite score at {:?}", t.theta)));
        }
    }
    let trials = dedup_trials(trials);
    let n = trials.len();
    let prior_mean = trials.iter().map(|t| t.score).sum::<f64>() / n as f64;
    let centered: Vec<f64> = trials.iter().map(|t| t.score - prior_mean).collect();
    let inputs: Vec<Vec<f64>> = trials.into_iter().map(|t| t.theta).collect();
    let base = DMatrix::from_fn(n, n, |i, j| sq_exp(&inputs[i], &inputs[j], params));

    let ceiling = MAX_JITTER * params.signal_var.max(f64::MIN_POSITIVE) * (1.0 + 1e-9);
    let mut jitter = params.jitter;
    loop {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            let alpha = dd::solve(&base, &centered)
                .or_else(|| dd::solve(&(&base + DMatrix::identity(n, n) * jitter), &centered))
                .ok_or(BoError::SingularCovariance { jitter })?;
            let mut p = params.clone();
            p.jitter = jitter;
            return Ok(GpModel {
                inputs,
                centered,
                prior_mean,
                params: p,
                chol,
                alpha,
            });
        }
        jitter = if jitter > 0.0 {
            jitter * 10.0
        } else {
            BASE_JITTER * params.signal_var
        };
        if jitter > ceiling {
            return Err(BoError::SingularCovariance { jitter });
        }
    }
}

/// Posterior mean and standard deviation at `theta`.
pub fn gp_predict(model: &GpModel, theta: &[f64]) -> (f64, f64) {
    let (mu, var) = gp_predict_raw(model, theta);
    (mu, var.max(0.0).sqrt())
}

/// Posterior mean and unclamped variance.
pub fn gp_predict_raw(model: &GpModel, theta: &[f64]) -> (f64, f64) {
    let k_star = DVector::from_iterator(
        model.inputs.len(),
        model.inputs.iter().map(|x| sq_exp(x, theta, &model.params)),
    );
    let mu = model
        .inputs
        .iter()
        .zip(&model.alpha)
        .fold(dd::Dd::from(model.prior_mean), |acc, (x, a)| {
            acc + dd::Dd::from(sq_exp(x, theta, &model.params)) * *a
        })
        .to_f64();
    let v = model
        .chol
        .l_dirty()
        .solve_lower_triangular(&k_star)
        .expect("cholesky factor has a positive diagonal");
    let var = model.params.signal_var - v.dot(&v);
    (mu, var)
}

/// Expected improvement over the incumbent `f_plus` (maximization).
pub fn expected_improvement(mu: f64, sigma: f64, f_plus: f64) -> Result<f64, BoError> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(BoError::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    let gain = mu - f_plus;
    if sigma == 0.0 {
        return Ok(gain.max(0.0));
    }
    let z = gain / sigma;
    let n = Normal::standard();
    Ok((gain * n.cdf(z) + sigma * n.pdf(z)).max(0.0))
}

/// `a(θ)` at one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionEval {
    pub theta: Vec<f64>,
    pub ei: f64,
}

/// SplitMix64 step; derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_point<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Maximize EI over `N_CANDIDATES` seeded uniform candidates that pass the
/// space's constraint; ties go to the lowest candidate index.
pub fn propose_next<S: Space + ?Sized>(
    model: &GpModel,
    space: &S,
    f_plus: f64,
    seed: u64,
) -> Result<AcquisitionEval, BoError> {
    let dim = space.dim();
    if dim != model.dim() {
        return Err(BoError::DimensionMismatch {
            expected: model.dim(),
            found: dim,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<AcquisitionEval> = None;
    for _ in 0..N_CANDIDATES {
        let theta = space.canonical(&random_point(dim, &mut rng));
        if !space.feasible(&theta) {
            continue;
        }
        let (mu, sigma) = gp_predict(model, &theta);
        let ei = expected_improvement(mu, sigma, f_plus)?;
        if best.as_ref().is_none_or(|b| ei > b.ei) {
            best = Some(AcquisitionEval { theta, ei });
        }
    }
    best.ok_or(BoError::InfeasibleSpace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoConfig {
    pub max_iters: usize,
    pub n_init: usize,
    pub seed: u64,
}

/// Draw a feasible canonical point by rejection, giving up after
/// `N_CANDIDATES` tries.
fn feasible_random<S: Space + ?Sized, R: Rng>(space: &S, rng: &mut R) -> Result<Vec<f64>, BoError> {
    for _ in 0..N_CANDIDATES {
        let theta = space.canonical(&random_point(space.dim(), rng));
        if space.feasible(&theta) {
            return Ok(theta);
        }
    }
    Err(BoError::InfeasibleSpace)
}

fn evaluate<F>(objective: &mut F, theta: Vec<f64>) -> Result<Trial, BoError>
where
    F: FnMut(&[f64]) -> Result<Evaluation, String>,
{
    let eval = objective(&theta).map_err(|message| BoError::Objective {
        theta: theta.clone(),
        message,
    })?;
    if !eval.score.is_finite() {
        return Err(BoError::Objective {
            theta,
            message: format!("non-finite score {}", eval.score),
        });
    }
    Ok(Trial {
        theta,
        score: eval.score,
        cost: eval.cost,
    })
}

fn best_of(history: &[Trial]) -> Trial {
    history
        .iter()
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.score >= t.score => Some(b),
            _ => Some(t),
        })
        .expect("history is nonempty")
        .clone()
}

/// Seeded random initialization followed by `max_iters` rounds of
/// fit → propose → evaluate. Returns the best trial and the full history
/// (`n_init + max_iters` trials, in evaluation order).
pub fn bo_optimize<S, F>(mut objective: F, space: &S, config: BoConfig) -> Result<(Trial, Vec<Trial>), BoError>
where
    S: Space + ?Sized,
    F: FnMut(&[f64]) -> Result<Evaluation, String>,
{
    if config.max_iters == 0 || config.n_init == 0 {
        return Err(BoError::Domain("max_iters and n_init must be >= 1".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut history = Vec::with_capacity(config.n_init + config.max_iters);
    for _ in 0..config.n_init {
        let theta = feasible_random(space, &mut init_rng)?;
        history.push(evaluate(&mut objective, theta)?);
    }
    for iter in 0..config.max_iters {
        let scores: Vec<f64> = history.iter().map(|t| t.score).collect();
        let params = KernelParams::heuristic(space.dim(), &scores);
        let model = gp_fit(&history, &params)?;
        let f_plus = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let next = propose_next(&model, space, f_plus, derive_seed(config.seed, iter as u64 + 1))?;
        history.push(evaluate(&mut objective, next.theta)?);
    }
    Ok((best_of(&history), history))
}

/// Seeded random-search reference with the same evaluation budget semantics.
pub fn random_search<S, F>(
    mut objective: F,
    space: &S,
    n_evals: usize,
    seed: u64,
) -> Result<(Trial, Vec<Trial>), BoError>
where
    S: Space + ?Sized,
    F: FnMut(&[f64]) -> Result<Evaluation, String>,
{
    if n_evals == 0 {
        return Err(BoError::Domain("n_evals must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut history = Vec::with_capacity(n_evals);
    for _ in 0..n_evals {
        let theta = feasible_random(space, &mut rng)?;
        history.push(evaluate(&mut objective, theta)?);
    }
    Ok((best_of(&history), history))
}

/// Minimal double-double arithmetic for the mean-weight solve.
mod dd {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    use nalgebra::DMatrix;

    /// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Dd {
        hi: f64,
        lo: f64,
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    impl Dd {
        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        fn abs_hi(self) -> f64 {
            self.hi.abs()
        }
    }

    impl From<f64> for Dd {
        fn from(hi: f64) -> Self {
            Dd { hi, lo: 0.0 }
        }
    }

    impl Add for Dd {
        type Output = Dd;
        fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            let (t, f) = two_sum(self.lo, o.lo);
            let (s, e) = quick_two_sum(s, e + t);
            let (hi, lo) = quick_two_sum(s, e + f);
            Dd { hi, lo }
        }
    }

    impl Neg for Dd {
        type Output = Dd;
        fn neg(self) -> Dd {
            Dd {
                hi: -self.hi,
                lo: -self.lo,
            }
        }
    }

    impl Sub for Dd {
        type Output = Dd;
        fn sub(self, o: Dd) -> Dd {
            self + -o
        }
    }

    impl Mul for Dd {
        type Output = Dd;
        fn mul(self, o: Dd) -> Dd {
            let p = self.hi * o.hi;
            let e = self.hi.mul_add(o.hi, -p) + (self.hi * o.lo + self.lo * o.hi);
            let (hi, lo) = quick_two_sum(p, e);
            Dd { hi, lo }
        }
    }

    impl Div for Dd {
        type Output = Dd;
        fn div(self, o: Dd) -> Dd {
            let q1 = self.hi / o.hi;
            let r = self - o * Dd::from(q1);
            let q2 = r.hi / o.hi;
            let r = r - o * Dd::from(q2);
            let q3 = r.hi / o.hi;
            let (hi, lo) = quick_two_sum(q1, q2);
            Dd { hi, lo } + Dd::from(q3)
        }
    }

    /// Gaussian elimination with partial pivoting; `None` on a zero pivot.
    pub fn solve(k: &DMatrix<f64>, y: &[f64]) -> Option<Vec<Dd>> {
        let n = y.len();
        let mut a: Vec<Vec<Dd>> = (0..n).map(|i| (0..n).map(|j| Dd::from(k[(i, j)])).collect()).collect();
        let mut b: Vec<Dd> = y.iter().map(|&v| Dd::from(v)).collect();
        for c in 0..n {
            let p = (c..n).fold(c, |p, r| if a[r][c].abs_hi() > a[p][c].abs_hi() { r } else { p });
            if a[p][c].hi == 0.0 || !a[p][c].hi.is_finite() {
                return None;
            }
            a.swap(p, c);
            b.swap(p, c);
            let pivot = a[c].clone();
            for r in c + 1..n {
                let f = a[r][c] / pivot[c];
                for (x, p) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *x = *x - f * *p;
                }
                b[r] = b[r] - f * b[c];
            }
        }
        let mut x = vec![Dd::from(0.0); n];
        for r in (0..n).rev() {
            let mut s = b[r];
            for j in r + 1..n {
                s = s - a[r][j] * x[j];
            }
            x[r] = s / a[r][r];
            if !x[r].hi.is_finite() {
                return None;
            }
        }
        Some(x)
    }
}
