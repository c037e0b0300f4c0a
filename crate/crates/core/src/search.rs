//! Architecture search spaces, k-fold scoring on a synthetic FIR
//! symbol-recovery task, budgeted BO search and complexity sweeps.
//!
//! Architectures are scored reservoir-style: every layer keeps seeded random
//! weights and only a linear readout is fitted, by ridge regression. If the
//! network ends in a single-output linear dense layer, that layer *is* the
//! readout (its cost is counted, its weights are fitted); otherwise the
//! readout sits outside the network.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::arch::{
    network_from_value, validate_network, Activation, ArchError, BitwidthConfig, LayerKind, NetworkSpec,
};
use crate::bayesopt::{bo_optimize, BoConfig, BoError, Evaluation, Space};
use crate::costmodel::{cost_report, CostTotals, Metric};
use crate::interp::{fir_filter, run_network, ExecMode, InterpError, LayerWeights};
use crate::quant::QuantScheme;

/// Ridge penalty of the readout fit.
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search space: {0}")]
    Space(String),
    #[error("task: {0}")]
    Task(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("architecture: {0}")]
    Arch(#[from] ArchError),
    #[error("interpreter: {0}")]
    Interp(#[from] InterpError),
    #[error("readout fit failed: {0}")]
    Training(String),
    #[error("no architecture satisfies {metric} <= {budget}")]
    InfeasibleSpace { metric: &'static str, budget: u64 },
    #[error(transparent)]
    Bo(BoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One searchable hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dimension {
    Int {
        low: i64,
        high: i64,
    },
    Categorical {
        values: Vec<Value>,
    },
    Continuous {
        low: f64,
        high: f64,
        #[serde(default)]
        log: bool,
    },
}

impl Dimension {
    fn check(&self, name: &str) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Space(format!("dimension {name:?}: {m}")));
        match self {
            Dimension::Int { low, high } if low > high => bad(format!("empty range [{low}, {high}]")),
            Dimension::Categorical { values } if values.is_empty() => bad("no values".into()),
            Dimension::Continuous { low, high, log } => {
                if !(low.is_finite() && high.is_finite()) || low > high {
                    bad(format!("empty range [{low}, {high}]"))
                } else if *log && *low <= 0.0 {
                    bad("log scale needs low > 0".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn buckets(&self) -> Option<usize> {
        match self {
            Dimension::Int { low, high } => Some((high - low + 1) as usize),
            Dimension::Categorical { values } => Some(values.len()),
            Dimension::Continuous { .. } => None,
        }
    }

    fn bucket(u: f64, n: usize) -> usize {
        ((u.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1)
    }

    /// Concrete value of unit coordinate `u`.
    pub fn decode(&self, u: f64) -> Value {
        match self {
            Dimension::Int { low, .. } => Value::from(low + Self::bucket(u, self.buckets().unwrap()) as i64),
            Dimension::Categorical { values } => values[Self::bucket(u, values.len())].clone(),
            Dimension::Continuous { low, high, log } => {
                let u = u.clamp(0.0, 1.0);
                let x = if *log {
                    (low.ln() + u * (high.ln() - low.ln())).exp()
                } else {
                    low + u * (high - low)
                };
                Value::from(x)
            }
        }
    }

    /// Centre of the bucket containing `u` (identity for continuous).
    pub fn canonical(&self, u: f64) -> f64 {
        match self.buckets() {
            Some(n) => (Self::bucket(u, n) as f64 + 0.5) / n as f64,
            None => u.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDimension {
    pub name: String,
    #[serde(flatten)]
    pub dim: Dimension,
}

/// Complexity limit `metric ≤ budget`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub metric: Metric,
    pub budget: u64,
}

/// Search space document:
///
/// ```json
/// {"dimensions": [{"name": "h", "type": "int", "low": 1, "high": 16}],
///  "template": {"layers": [{"type": "dense", "n_n": "$h", "n_i": 4}]},
///  "constraint": {"metric": "nabs", "budget": 500},
///  "bits": {"b_w": 4, "b_i": 4, "b_a": 4}, "scheme": "pot"}
/// ```
///
/// Every string `"$name"` in the template is replaced by the dimension's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub dimensions: Vec<NamedDimension>,
    pub template: Value,
    #[serde(default)]
    pub constraint: Option<Constraint>,
    #[serde(default)]
    pub bits: BitwidthConfig,
    /// `float`, `uniform`, `pot` or `apot:K`, at `bits.b_w`.
    #[serde(default = "default_scheme")]
    pub scheme: String,
}

fn default_scheme() -> String {
    "uniform".into()
}

fn substitute(template: &Value, values: &HashMap<&str, Value>) -> Result<Value, SearchError> {
    Ok(match template {
        Value::String(s) if s.starts_with('$') => values
            .get(&s[1..])
            .cloned()
            .ok_or_else(|| SearchError::Space(format!("template references unknown dimension {s:?}")))?,
        Value::Array(items) => Value::Array(items.iter().map(|v| substitute(v, values)).collect::<Result<_, _>>()?),
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                out.insert(k.clone(), substitute(v, values)?);
            }
            Value::Object(out)
        }
        other => other.clone(),
    })
}

impl SearchSpace {
    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        let space: SearchSpace = serde_json::from_str(text).map_err(|e| SearchError::Space(e.to_string()))?;
        space.check()?;
        Ok(space)
    }

    pub fn check(&self) -> Result<(), SearchError> {
        if self.dimensions.is_empty() {
            return Err(SearchError::Space("no dimensions".into()));
        }
        for (i, d) in self.dimensions.iter().enumerate() {
            d.dim.check(&d.name)?;
            if self.dimensions[..i].iter().any(|o| o.name == d.name) {
                return Err(SearchError::Space(format!("duplicate dimension {:?}", d.name)));
            }
        }
        BitwidthConfig::new(self.bits.b_w, self.bits.b_i, self.bits.b_a)
            .map_err(|e| SearchError::Space(e.to_string()))?;
        self.quant_scheme()?;
        // both corners must yield valid networks
        for u in [0.0, 1.0] {
            let net = self.instantiate(&vec![u; self.dim()])?;
            let violations = validate_network(&net);
            if !violations.is_empty() {
                return Err(SearchError::Space(format!(
                    "template is invalid at the {} corner: {}",
                    if u == 0.0 { "low" } else { "high" },
                    violations[0]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dimensions.len()
    }

    pub fn quant_scheme(&self) -> Result<QuantScheme, SearchError> {
        QuantScheme::from_cli(&self.scheme, self.bits.b_w).map_err(|e| SearchError::Space(e.to_string()))
    }

    /// Named concrete values of a unit-cube point, as a JSON object.
    pub fn decode(&self, theta: &[f64]) -> Map<String, Value> {
        self.dimensions
            .iter()
            .zip(theta)
            .map(|(d, &u)| (d.name.clone(), d.dim.decode(u)))
            .collect()
    }

    pub fn canonical(&self, theta: &[f64]) -> Vec<f64> {
        self.dimensions
            .iter()
            .zip(theta)
            .map(|(d, &u)| d.dim.canonical(u))
            .collect()
    }

    pub fn instantiate(&self, theta: &[f64]) -> Result<NetworkSpec, SearchError> {
        if theta.len() != self.dim() {
            return Err(SearchError::Domain(format!(
                "theta has {} components, space has {}",
                theta.len(),
                self.dim()
            )));
        }
        let decoded = self.decode(theta);
        let values: HashMap<&str, Value> = decoded.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        Ok(network_from_value(&substitute(&self.template, &values)?)?)
    }

    /// Cost totals of θ's architecture, `None` if it is not a valid network.
    pub fn cost_of(&self, theta: &[f64]) -> Option<CostTotals> {
        let scheme = self.quant_scheme().ok()?;
        let net = self.instantiate(theta).ok()?;
        cost_report(&net, &self.bits, &scheme).ok().map(|r| r.totals)
    }
}

/// Unit-cube view of a [`SearchSpace`] under an optional constraint, with a
/// per-cell feasibility cache.
pub struct ConstrainedSpace<'a> {
    pub space: &'a SearchSpace,
    pub constraint: Option<Constraint>,
    cache: RefCell<HashMap<Vec<u64>, bool>>,
}

impl<'a> ConstrainedSpace<'a> {
    pub fn new(space: &'a SearchSpace, constraint: Option<Constraint>) -> Self {
        ConstrainedSpace {
            space,
            constraint,
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn check(&self, theta: &[f64]) -> bool {
        match self.space.cost_of(theta) {
            None => false,
            Some(cost) => self.constraint.is_none_or(|c| cost.get(c.metric) <= c.budget),
        }
    }
}

impl Space for ConstrainedSpace<'_> {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn canonical(&self, u: &[f64]) -> Vec<f64> {
        self.space.canonical(u)
    }

    fn feasible(&self, u: &[f64]) -> bool {
        let key: Vec<u64> = u.iter().map(|v| v.to_bits()).collect();
        if let Some(&hit) = self.cache.borrow().get(&key) {
            return hit;
        }
        let ok = self.check(u);
        self.cache.borrow_mut().insert(key, ok);
        ok
    }
}

/// Generation parameters of the FIR symbol-recovery task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    pub taps: Vec<f64>,
    pub noise_std: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Received samples (inputs) and the clean symbols (targets).
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub params: TaskParams,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Task {
    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        let p: TaskParams = serde_json::from_str(text).map_err(|e| SearchError::Task(e.to_string()))?;
        synth_task_fir(&p.taps, p.noise_std, p.n_samples, p.seed)
    }

    /// Channel output for known symbols, noise-free.
    pub fn from_symbols(taps: &[f64], symbols: &[f64]) -> Self {
        Task {
            params: TaskParams {
                taps: taps.to_vec(),
                noise_std: 0.0,
                n_samples: symbols.len(),
                seed: 0,
            },
            inputs: fir_filter(taps, symbols),
            targets: symbols.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Random ±1 symbols through `fir_filter(taps)` plus Gaussian noise.
pub fn synth_task_fir(taps: &[f64], noise_std: f64, n_samples: usize, seed: u64) -> Result<Task, SearchError> {
    if taps.is_empty() || taps.iter().any(|t| !t.is_finite()) {
        return Err(SearchError::Task("taps must be nonempty and finite".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(SearchError::Task(format!("noise_std must be >= 0, got {noise_std}")));
    }
    if n_samples == 0 {
        return Err(SearchError::Task("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols: Vec<f64> = (0..n_samples)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut task = Task::from_symbols(taps, &symbols);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| SearchError::Task(e.to_string()))?;
        for x in &mut task.inputs {
            *x += normal.sample(&mut rng);
        }
    }
    task.params.noise_std = noise_std;
    task.params.seed = seed;
    Ok(task)
}

/// Assignment of every sample to exactly one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldPlan {
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &f) in self.fold_of.iter().enumerate() {
            out[f].push(i);
        }
        out
    }
}

/// Seeded shuffle then contiguous partition; the first `n mod k` folds get
/// the extra sample.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan, SearchError> {
    if k < 2 || k > n {
        return Err(SearchError::Domain(format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &i in &order[pos..pos + size] {
            fold_of[i] = f;
        }
        pos += size;
    }
    Ok(FoldPlan { k, fold_of })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerParams {
    pub ridge: f64,
}

impl Default for TrainerParams {
    fn default() -> Self {
        TrainerParams { ridge: DEFAULT_RIDGE }
    }
}

/// Whether the final layer is a fitted single-output linear readout.
fn has_internal_readout(net: &NetworkSpec) -> bool {
    matches!(
        net.layers.last(),
        Some(l) if matches!(l.kind, LayerKind::Dense { n_n: 1, .. }) && l.activation == Activation::Linear
    )
}

/// Feature rows (with a trailing bias 1) for every sample: sample `i` feeds
/// the window `inputs[i..i+W]`, zero-padded, to the fixed-weight network.
pub fn features(task: &Task, net: &NetworkSpec, seed: u64) -> Result<Vec<Vec<f64>>, SearchError> {
    let violations = validate_network(net);
    if !violations.is_empty() {
        return Err(InterpError::Invalid(violations).into());
    }
    let body = if has_internal_readout(net) {
        &net.layers[..net.layers.len() - 1]
    } else {
        &net.layers[..]
    };
    let width = net.layers[0].input_shape().total();
    let body_net = NetworkSpec::new(net.name.clone(), body.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<LayerWeights> = body.iter().map(|l| LayerWeights::random_fan_in(l, &mut rng)).collect();
    let n = task.len();
    (0..n)
        .map(|i| {
            let window: Vec<f64> = (i..i + width)
                .map(|j| task.inputs.get(j).copied().unwrap_or(0.0))
                .collect();
            let mut row: Vec<f64> = if body.is_empty() {
                window
            } else {
                let (y, _) = run_network(&body_net, &weights, &vec![window], &ExecMode::Float, false)?;
                y.concat()
            };
            row.push(1.0);
            Ok(row)
        })
        .collect()
}

/// Ridge regression `(ΦᵀΦ + λI) w = Φᵀ y`.
pub fn fit_readout(rows: &[&[f64]], targets: &[f64], ridge: f64) -> Result<Vec<f64>, SearchError> {
    let p = rows.first().map_or(0, |r| r.len());
    let phi = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);
    let gram = phi.transpose() * &phi + DMatrix::identity(p, p) * ridge;
    let chol = gram
        .cholesky()
        .ok_or_else(|| SearchError::Training("normal equations are not positive definite".into()))?;
    let w = chol.solve(&(phi.transpose() * y));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(SearchError::Training("non-finite readout weights".into()));
    }
    Ok(w.iter().copied().collect())
}

/// Held-out score (negative MSE) of every fold.
pub fn kfold_scores(
    task: &Task,
    arch: &NetworkSpec,
    trainer: &TrainerParams,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>, SearchError> {
    let plan = kfold_split(task.len(), k, seed)?;
    let phi = features(task, arch, seed)?;
    plan.folds()
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train: Vec<usize> = (0..task.len()).filter(|&i| plan.fold_of[i] != f).collect();
            let rows: Vec<&[f64]> = train.iter().map(|&i| phi[i].as_slice()).collect();
            let ys: Vec<f64> = train.iter().map(|&i| task.targets[i]).collect();
            let w = fit_readout(&rows, &ys, trainer.ridge)?;
            let mse = test
                .iter()
                .map(|&i| {
                    let pred: f64 = phi[i].iter().zip(&w).map(|(a, b)| a * b).sum();
                    (pred - task.targets[i]).powi(2)
                })
                .sum::<f64>()
                / test.len() as f64;
            Ok(-mse)
        })
        .collect()
}

/// Mean held-out score over `k` folds.
pub fn kfold_score(
    task: &Task,
    arch: &NetworkSpec,
    trainer: &TrainerParams,
    k: usize,
    seed: u64,
) -> Result<f64, SearchError> {
    let scores = kfold_scores(task, arch, trainer, k, seed)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Score and cost of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchTrial {
    pub arch: NetworkSpec,
    pub score: f64,
    pub cost: CostTotals,
}

pub fn evaluate_arch(
    task: &Task,
    arch: &NetworkSpec,
    bits: &BitwidthConfig,
    scheme: &QuantScheme,
    k: usize,
    seed: u64,
) -> Result<ArchTrial, SearchError> {
    let cost = cost_report(arch, bits, scheme)
        .map_err(|e| SearchError::Domain(e.to_string()))?
        .totals;
    let score = kfold_score(task, arch, &TrainerParams::default(), k, seed)?;
    Ok(ArchTrial {
        arch: arch.clone(),
        score,
        cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub iters: usize,
    pub n_init: usize,
    /// Drives the BO loop.
    pub seed: u64,
    /// Drives the fixed feature weights and fold assignment, so one
    /// architecture scores the same in every search that shares it.
    pub eval_seed: u64,
    pub k: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            iters: 15,
            n_init: 5,
            seed: 0,
            eval_seed: 0,
            k: 5,
        }
    }
}

/// One evaluated point of a search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrial {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub values: Map<String, Value>,
    pub score: f64,
    pub cost: CostTotals,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub constraint: Option<Constraint>,
    pub best: SearchTrial,
    pub history: Vec<SearchTrial>,
}

/// Budgeted BO over `space`. `constraint` overrides the space's own.
pub fn run_search(
    space: &SearchSpace,
    task: &Task,
    constraint: Option<Constraint>,
    opts: &SearchOptions,
) -> Result<SearchResult, SearchError> {
    let constraint = constraint.or(space.constraint);
    let scheme = space.quant_scheme()?;
    let view = ConstrainedSpace::new(space, constraint);
    let mut cache: HashMap<Vec<u64>, (f64, CostTotals)> = HashMap::new();
    let objective = |theta: &[f64]| -> Result<Evaluation, String> {
        let key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        if let Some(&(score, cost)) = cache.get(&key) {
            return Ok(Evaluation {
                score,
                cost: Some(cost),
            });
        }
        let net = space.instantiate(theta).map_err(|e| e.to_string())?;
        let t = evaluate_arch(task, &net, &space.bits, &scheme, opts.k, opts.eval_seed).map_err(|e| e.to_string())?;
        cache.insert(key, (t.score, t.cost));
        Ok(Evaluation {
            score: t.score,
            cost: Some(t.cost),
        })
    };
    let config = BoConfig {
        max_iters: opts.iters,
        n_init: opts.n_init,
        seed: opts.seed,
    };
    let (_, history) = bo_optimize(objective, &view, config).map_err(|e| match e {
        BoError::InfeasibleSpace => match constraint {
            Some(c) => SearchError::InfeasibleSpace {
                metric: c.metric.name(),
                budget: c.budget,
            },
            None => SearchError::Space("no valid architecture in the space".into()),
        },
        other => SearchError::Bo(other),
    })?;
    let history: Vec<SearchTrial> = history
        .into_iter()
        .enumerate()
        .map(|(iteration, t)| {
            let cost = t.cost.unwrap_or_default();
            SearchTrial {
                iteration,
                values: space.decode(&t.theta),
                feasible: constraint.is_none_or(|c| cost.get(c.metric) <= c.budget),
                theta: t.theta,
                score: t.score,
                cost,
            }
        })
        .collect();
    let best = history
        .iter()
        .fold(None::<&SearchTrial>, |b, t| match b {
            Some(b) if b.score >= t.score => Some(b),
            _ => Some(t),
        })
        .expect("history is nonempty")
        .clone();
    Ok(SearchResult {
        constraint,
        best,
        history,
    })
}

/// One budget point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub budget: u64,
    pub metric: Metric,
    pub result: SearchResult,
}

/// One BO search per budget (BO seed `seed + i` for the i-th budget, shared
/// evaluation seed), run concurrently. Budgets must be ascending.
pub fn complexity_sweep(
    space: &SearchSpace,
    task: &Task,
    budgets: &[u64],
    metric: Metric,
    opts: &SearchOptions,
) -> Result<Vec<SweepPoint>, SearchError> {
    if budgets.is_empty() {
        return Err(SearchError::Domain("no budgets".into()));
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(SearchError::Domain("budgets must be sorted ascending".into()));
    }
    let results: Vec<Result<SearchResult, SearchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = budgets
            .iter()
            .enumerate()
            .map(|(i, &budget)| {
                let opts = SearchOptions {
                    seed: opts.seed.wrapping_add(i as u64),
                    ..*opts
                };
                s.spawn(move || run_search(space, task, Some(Constraint { metric, budget }), &opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    budgets
        .iter()
        .zip(results)
        .map(|(&budget, r)| {
            Ok(SweepPoint {
                budget,
                metric,
                result: r?,
            })
        })
        .collect()
}

/// Running maximum of the best scores along the budget axis.
pub fn running_max(points: &[SweepPoint]) -> Vec<f64> {
    points
        .iter()
        .scan(f64::NEG_INFINITY, |m, p| {
            *m = m.max(p.result.best.score);
            Some(*m)
        })
        .collect()
}

fn value_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// History CSV: `iteration, <dimension names>, score, nabs, feasible`.
pub fn write_history_csv<W: Write>(space: &SearchSpace, result: &SearchResult, out: W) -> Result<(), SearchError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend(space.dimensions.iter().map(|d| d.name.clone()));
    header.extend(["score", "nabs", "feasible"].map(String::from));
    w.write_record(&header)?;
    for t in &result.history {
        let mut rec = vec![t.iteration.to_string()];
        rec.extend(space.dimensions.iter().map(|d| value_cell(&t.values[&d.name])));
        rec.push(t.score.to_string());
        rec.push(t.cost.nabs.to_string());
        rec.push(t.feasible.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep CSV: `budget, metric, best_score, best_theta_json, rm, bop, nabs`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<(), SearchError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["budget", "metric", "best_score", "best_theta_json", "rm", "bop", "nabs"])?;
    for p in points {
        let best = &p.result.best;
        w.write_record([
            p.budget.to_string(),
            p.metric.name().to_string(),
            best.score.to_string(),
            Value::Object(best.values.clone()).to_string(),
            best.cost.rm.to_string(),
            best.cost.bop.to_string(),
            best.cost.nabs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::LayerSpec;

    fn toy_space() -> SearchSpace {
        SearchSpace::from_json(
            r#"{
              "dimensions": [
                {"name": "w", "type": "int", "low": 1, "high": 6},
                {"name": "h", "type": "int", "low": 1, "high": 8}
              ],
              "template": {"name": "mlp", "layers": [
                {"type": "dense", "n_n": "$h", "n_i": "$w", "activation": "tanh"},
                {"type": "dense", "n_n": 1, "n_i": "$h"}
              ]},
              "bits": {"b_w": 4, "b_i": 4, "b_a": 4},
              "scheme": "pot"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn kfold_examples() {
        let p = kfold_split(10, 5, 1).unwrap();
        assert!(p.folds().iter().all(|f| f.len() == 2));
        let sizes: Vec<usize> = kfold_split(10, 3, 1).unwrap().folds().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(matches!(kfold_split(10, 11, 0), Err(SearchError::Domain(_))));
        assert!(matches!(kfold_split(10, 1, 0), Err(SearchError::Domain(_))));
        let mut all: Vec<usize> = p.folds().concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn task_examples() {
        let t = synth_task_fir(&[1.0], 0.0, 50, 3).unwrap();
        assert_eq!(t.inputs, t.targets);
        let t = Task::from_symbols(&[0.5, 0.5], &[1.0, -1.0, 1.0]);
        assert_eq!(t.inputs, vec![0.5, 0.0, 0.0]);
        let a = synth_task_fir(&[0.8, 0.3], 0.1, 40, 9).unwrap();
        assert_eq!(a, synth_task_fir(&[0.8, 0.3], 0.1, 40, 9).unwrap());
        assert!(synth_task_fir(&[], 0.0, 5, 0).is_err());
        assert!(synth_task_fir(&[1.0], -1.0, 5, 0).is_err());
    }

    #[test]
    fn representable_targets_score_zero() {
        let task = synth_task_fir(&[1.0], 0.0, 60, 2).unwrap();
        let net = NetworkSpec::new("lin", vec![LayerSpec::dense(4, 2)]);
        let scores = kfold_scores(&task, &net, &TrainerParams::default(), 5, 1).unwrap();
        assert!(scores.iter().all(|s| -s <= 1e-10), "{scores:?}");
        let mean = kfold_score(&task, &net, &TrainerParams::default(), 5, 1).unwrap();
        assert_eq!(mean, scores.iter().sum::<f64>() / 5.0);
    }

    #[test]
    fn evaluate_examples() {
        let task = synth_task_fir(&[1.0, 0.4], 0.05, 80, 4).unwrap();
        let bits = BitwidthConfig::default();
        let scheme = QuantScheme::FixedUniform { b_w: 8 };
        let small = NetworkSpec::new("s", vec![LayerSpec::dense(3, 3).with_activation(Activation::Tanh)]);
        let large = NetworkSpec::new("l", vec![LayerSpec::dense(6, 3).with_activation(Activation::Tanh)]);
        let a = evaluate_arch(&task, &small, &bits, &scheme, 4, 7).unwrap();
        let b = evaluate_arch(&task, &large, &bits, &scheme, 4, 7).unwrap();
        assert_eq!(a.cost, cost_report(&small, &bits, &scheme).unwrap().totals);
        assert!(b.cost.rm >= a.cost.rm);
        assert_eq!(a, evaluate_arch(&task, &small, &bits, &scheme, 4, 7).unwrap());
        assert!(a.score > -1.0);
    }

    #[test]
    fn space_decoding() {
        let s = toy_space();
        let v = s.decode(&[0.0, 0.999]);
        assert_eq!(v["w"], Value::from(1));
        assert_eq!(v["h"], Value::from(8));
        let c = s.canonical(&[0.01, 0.5]);
        assert_eq!(c, vec![1.0 / 12.0, 9.0 / 16.0]);
        let net = s.instantiate(&[0.5, 0.5]).unwrap();
        assert_eq!(net.layers.len(), 2);
        let bad = r#"{"dimensions": [], "template": {}}"#;
        assert!(SearchSpace::from_json(bad).is_err());
        let log = Dimension::Continuous {
            low: 1e-3,
            high: 1.0,
            log: true,
        };
        assert!((log.decode(0.5).as_f64().unwrap() - 10f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn search_respects_budget_and_is_deterministic() {
        let space = toy_space();
        let task = synth_task_fir(&[1.0, 0.5, -0.2], 0.05, 120, 1).unwrap();
        let opts = SearchOptions {
            iters: 6,
            n_init: 3,
            seed: 5,
            eval_seed: 5,
            k: 3,
        };
        let c = Constraint {
            metric: Metric::Nabs,
            budget: 400,
        };
        let r = run_search(&space, &task, Some(c), &opts).unwrap();
        assert_eq!(r.history.len(), 9);
        assert!(r.history.iter().all(|t| t.feasible && t.cost.nabs <= 400));
        assert_eq!(r, run_search(&space, &task, Some(c), &opts).unwrap());

        let zero = Constraint {
            metric: Metric::Nabs,
            budget: 0,
        };
        assert!(matches!(
            run_search(&space, &task, Some(zero), &opts),
            Err(SearchError::InfeasibleSpace { .. })
        ));

        let mut a = Vec::new();
        write_history_csv(&space, &r, &mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("iteration,w,h,score,nabs,feasible\n"));
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn sweep_running_max() {
        let space = toy_space();
        let task = synth_task_fir(&[1.0, 0.5], 0.05, 80, 1).unwrap();
        let opts = SearchOptions {
            iters: 3,
            n_init: 2,
            seed: 0,
            eval_seed: 0,
            k: 3,
        };
        let pts = complexity_sweep(&space, &task, &[100, 1000], Metric::Nabs, &opts).unwrap();
        assert_eq!(pts.len(), 2);
        let rm = running_max(&pts);
        assert!(rm[1] >= rm[0]);
        assert!(complexity_sweep(&space, &task, &[1000, 100], Metric::Nabs, &opts).is_err());
        let mut out = Vec::new();
        write_sweep_csv(&pts, &mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("budget,metric,best_score,best_theta_json,rm,bop,nabs\n"));
    }
}
