//! Weight quantization schemes and compression transforms.
//!
//! The shift-add cost of a multiplication depends on how the weight is
//! represented: a uniform `b_w`-bit multiplier needs up to `b_w - 1` adders,
//! a power-of-two weight needs a single shift, and an additive power-of-two
//! weight with `k` terms needs `k - 1` adders.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{conv1d_output_size, esn_row_nonzeros, BitwidthConfig, LayerKind, LayerSpec};
use crate::costmodel::rm_layer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mask has {found} entries but the layer has {expected} multiplicative weights")]
    Shape { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantScheme {
    Float,
    FixedUniform {
        b_w: u32,
    },
    #[serde(rename = "pot")]
    PoT {
        b_w: u32,
    },
    #[serde(rename = "apot")]
    APoT {
        b_w: u32,
        k_terms: u32,
    },
}

impl QuantScheme {
    pub fn validate(&self) -> Result<(), QuantError> {
        let check_bw = |b_w: u32| {
            if (2..=64).contains(&b_w) {
                Ok(())
            } else {
                Err(QuantError::InvalidScheme(format!("b_w = {b_w} outside [2, 64]")))
            }
        };
        match *self {
            QuantScheme::Float => Ok(()),
            QuantScheme::FixedUniform { b_w } | QuantScheme::PoT { b_w } => check_bw(b_w),
            QuantScheme::APoT { b_w, k_terms } => {
                check_bw(b_w)?;
                if k_terms < 1 || k_terms > b_w - 1 {
                    return Err(QuantError::InvalidScheme(format!(
                        "k_terms = {k_terms} outside [1, {}]",
                        b_w - 1
                    )));
                }
                Ok(())
            }
        }
    }

    /// Parse a CLI scheme name (`float`, `uniform`, `pot`, `apot:K`) using
    /// `b_w` for the fixed-point width.
    pub fn from_cli(name: &str, b_w: u32) -> Result<Self, QuantError> {
        let scheme = match name {
            "float" => QuantScheme::Float,
            "uniform" => QuantScheme::FixedUniform { b_w },
            "pot" => QuantScheme::PoT { b_w },
            other => match other.strip_prefix("apot:") {
                Some(k) => QuantScheme::APoT {
                    b_w,
                    k_terms: k
                        .parse()
                        .map_err(|_| QuantError::InvalidScheme(format!("bad term count {k:?}")))?,
                },
                None => return Err(QuantError::InvalidScheme(format!("unknown scheme {other:?}"))),
            },
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantScheme::Float => write!(f, "float"),
            QuantScheme::FixedUniform { b_w } => write!(f, "uniform{b_w}"),
            QuantScheme::PoT { b_w } => write!(f, "pot{b_w}"),
            QuantScheme::APoT { b_w, k_terms } => write!(f, "apot{b_w}:{k_terms}"),
        }
    }
}

impl FromStr for QuantScheme {
    type Err = QuantError;

    /// `float`, `uniform`, `pot`, `apot:K` at 8 bits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuantScheme::from_cli(s, 8)
    }
}

/// Adders needed at most to realize one multiplication under `scheme`.
/// `Float` is priced as a uniform multiplier of width `bits.b_w`.
pub fn x_w(scheme: &QuantScheme, bits: &BitwidthConfig) -> u64 {
    match *scheme {
        QuantScheme::Float => bits.b_w.saturating_sub(1) as u64,
        QuantScheme::FixedUniform { b_w } => (b_w - 1) as u64,
        QuantScheme::PoT { .. } => 0,
        QuantScheme::APoT { k_terms, .. } => (k_terms - 1) as u64,
    }
}

/// Representation of a single quantized weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightCode {
    Zero,
    /// Signed integer code, multiplied by the tensor scale.
    Int {
        code: i64,
    },
    /// `±Σ 2^e` with exponents relative to the tensor's power-of-two scale.
    Terms {
        negative: bool,
        exponents: Vec<i32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedWeights {
    pub scheme: QuantScheme,
    /// Step size for `Int` codes; `2^scale_exp` for `Terms` codes.
    pub scale: f64,
    /// Power-of-two normalization exponent for PoT/APoT.
    pub scale_exp: i32,
    pub codes: Vec<WeightCode>,
}

impl QuantizedWeights {
    pub fn dequantize_one(&self, code: &WeightCode) -> f64 {
        match code {
            WeightCode::Zero => 0.0,
            WeightCode::Int { code } => *code as f64 * self.scale,
            WeightCode::Terms { negative, exponents } => {
                let mag: f64 = exponents.iter().map(|&e| pow2(e + self.scale_exp)).sum();
                if *negative {
                    -mag
                } else {
                    mag
                }
            }
        }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|c| self.dequantize_one(c)).collect()
    }

    pub fn zero_mask(&self) -> Vec<bool> {
        self.codes.iter().map(|c| matches!(c, WeightCode::Zero)).collect()
    }
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

fn check_finite(weights: &[f64]) -> Result<(), QuantError> {
    match weights.iter().position(|w| !w.is_finite()) {
        Some(i) => Err(QuantError::Domain(format!("weight {i} is not finite"))),
        None => Ok(()),
    }
}

fn max_abs(weights: &[f64]) -> f64 {
    weights.iter().fold(0.0f64, |m, w| m.max(w.abs()))
}

/// Symmetric uniform quantizer with `2^(b_w-1) - 1` positive levels.
pub fn quantize_uniform(weights: &[f64], b_w: u32) -> Result<QuantizedWeights, QuantError> {
    let scheme = QuantScheme::FixedUniform { b_w };
    scheme.validate()?;
    check_finite(weights)?;
    let levels = ((1u128 << (b_w - 1)) - 1) as f64;
    let peak = max_abs(weights);
    if peak == 0.0 {
        return Ok(QuantizedWeights {
            scheme,
            scale: 0.0,
            scale_exp: 0,
            codes: vec![WeightCode::Zero; weights.len()],
        });
    }
    let scale = peak / levels;
    let codes = weights
        .iter()
        .map(|&w| {
            let q = (w / scale).round().clamp(-levels, levels);
            if q == 0.0 {
                WeightCode::Zero
            } else {
                WeightCode::Int { code: q as i64 }
            }
        })
        .collect();
    Ok(QuantizedWeights {
        scheme,
        scale,
        scale_exp: 0,
        codes,
    })
}

/// Smallest representable exponent for a `b_w`-bit PoT code (one sign bit,
/// the rest an exponent magnitude), kept inside the normal f64 range.
pub fn pot_min_exponent(b_w: u32) -> i32 {
    let span = (1i64 << (b_w - 1).min(62)) - 1;
    -(span.min(1000) as i32)
}

fn pow2_scale_exp(peak: f64) -> i32 {
    peak.log2().ceil() as i32
}

/// Nearest power of two to `u` among exponents in `[e_min, e_max]`,
/// ties toward the larger magnitude.
fn nearest_pow2(u: f64, e_min: i32, e_max: i32) -> i32 {
    let lo = (u.log2().floor() as i32).clamp(e_min, e_max);
    let hi = (lo + 1).min(e_max);
    if (u - pow2(hi)).abs() <= (u - pow2(lo)).abs() {
        hi
    } else {
        lo
    }
}

fn pot_terms(weights: &[f64], b_w: u32, k_terms: u32) -> QuantizedWeights {
    let scheme = if k_terms == 1 {
        QuantScheme::PoT { b_w }
    } else {
        QuantScheme::APoT { b_w, k_terms }
    };
    let peak = max_abs(weights);
    let scale_exp = if peak == 0.0 { 0 } else { pow2_scale_exp(peak) };
    let e_min = pot_min_exponent(b_w);
    let codes = weights
        .iter()
        .map(|&w| {
            if w == 0.0 {
                return WeightCode::Zero;
            }
            let u = w.abs() / pow2(scale_exp);
            WeightCode::Terms {
                negative: w < 0.0,
                exponents: apot_exponents(u, e_min, k_terms as usize),
            }
        })
        .collect();
    QuantizedWeights {
        scheme,
        scale: pow2(scale_exp),
        scale_exp,
        codes,
    }
}

/// Exponents approximating `u ∈ (0, 1]` by a sum of at most `k` distinct
/// powers of two in `[e_min, 0]`. Candidate `m` takes the first `m - 1` terms
/// of the binary expansion and one nearest term for the remainder; the best
/// candidate wins, fewer terms on ties. Candidate 1 is plain PoT.
fn apot_exponents(u: f64, e_min: i32, k: usize) -> Vec<i32> {
    let mut best = vec![nearest_pow2(u, e_min, 0)];
    let mut best_err = (u - pow2(best[0])).abs();
    let mut prefix: Vec<i32> = Vec::new();
    let mut residual = u;
    for _m in 2..=k {
        if residual <= 0.0 {
            break;
        }
        let e_max = prefix.last().map_or(0, |&e| e - 1);
        let e = (residual.log2().floor() as i32).min(e_max);
        if e < e_min {
            break;
        }
        prefix.push(e);
        residual -= pow2(e);
        if residual == 0.0 {
            if best_err > 0.0 {
                best = prefix.clone();
            }
            break;
        }
        let mut cand = prefix.clone();
        let mut err = residual;
        let tail_max = e - 1;
        if tail_max >= e_min {
            let t = nearest_pow2(residual, e_min, tail_max);
            let with_tail = (residual - pow2(t)).abs();
            if with_tail < err {
                cand.push(t);
                err = with_tail;
            }
        }
        if err < best_err {
            best = cand;
            best_err = err;
        }
    }
    best
}

/// Power-of-two quantization: each nonzero weight becomes `±2^e`.
pub fn quantize_pot(weights: &[f64], b_w: u32) -> Result<QuantizedWeights, QuantError> {
    QuantScheme::PoT { b_w }.validate()?;
    check_finite(weights)?;
    Ok(pot_terms(weights, b_w, 1))
}

/// Additive power-of-two quantization with up to `k_terms` terms per weight.
pub fn quantize_apot(weights: &[f64], b_w: u32, k_terms: u32) -> Result<QuantizedWeights, QuantError> {
    QuantScheme::APoT { b_w, k_terms }.validate()?;
    check_finite(weights)?;
    Ok(pot_terms(weights, b_w, k_terms))
}

/// Quantize under any fixed scheme. `Float` returns `None`.
pub fn quantize(weights: &[f64], scheme: &QuantScheme) -> Result<Option<QuantizedWeights>, QuantError> {
    match *scheme {
        QuantScheme::Float => Ok(None),
        QuantScheme::FixedUniform { b_w } => quantize_uniform(weights, b_w).map(Some),
        QuantScheme::PoT { b_w } => quantize_pot(weights, b_w).map(Some),
        QuantScheme::APoT { b_w, k_terms } => quantize_apot(weights, b_w, k_terms).map(Some),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub keep: Vec<bool>,
    /// Fraction of weights pruned.
    pub sparsity: f64,
}

impl PruneMask {
    pub fn all_kept(n: usize) -> Self {
        PruneMask {
            keep: vec![true; n],
            sparsity: 0.0,
        }
    }

    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn apply(&self, weights: &mut [f64]) {
        for (w, keep) in weights.iter_mut().zip(&self.keep) {
            if !keep {
                *w = 0.0;
            }
        }
    }
}

/// One-shot magnitude pruning: the `ceil(s·n)` smallest-magnitude weights are
/// removed, lower index first among equal magnitudes.
pub fn magnitude_prune(weights: &[f64], sparsity: f64) -> Result<PruneMask, QuantError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(QuantError::Domain(format!("sparsity {sparsity} outside [0, 1)")));
    }
    check_finite(weights)?;
    let n = weights.len();
    // guard against s·n landing a hair above an integer
    let count = ((sparsity * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()).then(a.cmp(&b)));
    let mut keep = vec![true; n];
    for &i in order.iter().take(count) {
        keep[i] = false;
    }
    Ok(PruneMask {
        keep,
        sparsity: if n == 0 { 0.0 } else { count as f64 / n as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedWeights {
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Lloyd objective after each assignment step.
    pub objective_trace: Vec<f64>,
}

impl SharedWeights {
    pub fn reconstruct(&self) -> Vec<f64> {
        self.assignments.iter().map(|&a| self.centroids[a]).collect()
    }

    pub fn distortion(&self, weights: &[f64]) -> f64 {
        weights
            .iter()
            .zip(&self.assignments)
            .map(|(w, &a)| (w - self.centroids[a]).powi(2))
            .sum()
    }
}

const MAX_LLOYD_ITERS: usize = 100;

fn nearest_centroid(w: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate() {
        if (w - c).abs() < (w - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

/// Weight sharing by 1-D k-means (Lloyd), linearly spaced initialization.
pub fn cluster_weights(weights: &[f64], c: usize) -> Result<SharedWeights, QuantError> {
    let n = weights.len();
    if c < 1 || c > n {
        return Err(QuantError::Domain(format!("cluster count {c} outside [1, {n}]")));
    }
    check_finite(weights)?;
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centroids: Vec<f64> = if c == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..c).map(|j| lo + (hi - lo) * j as f64 / (c - 1) as f64).collect()
    };
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let next: Vec<usize> = weights.iter().map(|&w| nearest_centroid(w, &centroids)).collect();
        trace.push(
            weights
                .iter()
                .zip(&next)
                .map(|(w, &a)| (w - centroids[a]).powi(2))
                .sum(),
        );
        let unchanged = next == assignments;
        assignments = next;
        let mut sums = vec![0.0; c];
        let mut counts = vec![0usize; c];
        for (w, &a) in weights.iter().zip(&assignments) {
            sums[a] += w;
            counts[a] += 1;
        }
        for j in 0..c {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        // Empty clusters take the farthest points, one each.
        let mut taken = vec![false; n];
        let mut reseeded = false;
        for j in 0..c {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, (weights[i] - centroids[assignments[i]]).abs()))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, d)) = far {
                if d > 0.0 {
                    taken[i] = true;
                    centroids[j] = weights[i];
                    reseeded = true;
                }
            }
        }
        if unchanged && !reseeded {
            break;
        }
    }
    Ok(SharedWeights {
        centroids,
        assignments,
        objective_trace: trace,
    })
}

/// Number of multiplicative weights of a layer (the length a [`PruneMask`]
/// for it must have) and how many times each is used per inference.
///
/// Ordering, per type: Dense `W` row-major; Conv1D filter-major, then kernel
/// tap, then channel; RNN `W` then `U`; LSTM gates i, f, o, c each `W` then
/// `U`; GRU gates z, r, h each `W` then `U`; ESN `W^in`, reservoir nonzeros
/// row-major, `W^o`.
pub fn weight_layout(layer: &LayerSpec) -> (usize, usize) {
    match layer.kind {
        LayerKind::Dense { n_n, n_i } => (n_n * n_i, 1),
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            padding,
            dilation,
            stride,
        } => (n_f * n_i * n_k, conv1d_output_size(n_s, n_k, padding, dilation, stride)),
        LayerKind::VanillaRnn { n_i, n_h, n_s } => (n_h * (n_i + n_h), n_s),
        LayerKind::Lstm { n_i, n_h, n_s } => (4 * n_h * (n_i + n_h), n_s),
        LayerKind::Gru { n_i, n_h, n_s } => (3 * n_h * (n_i + n_h), n_s),
        LayerKind::EchoState {
            n_i,
            n_r,
            s_p,
            n_o,
            n_s,
            ..
        } => (n_r * (n_i + esn_row_nonzeros(n_r, s_p) + n_o), n_s),
    }
}

/// RM after skipping every multiplication whose weight is pruned.
pub fn effective_rm(layer: &LayerSpec, mask: &PruneMask) -> Result<u64, QuantError> {
    let (count, uses) = weight_layout(layer);
    if mask.keep.len() != count {
        return Err(QuantError::Shape {
            expected: count,
            found: mask.keep.len(),
        });
    }
    Ok(rm_layer(layer) - (mask.pruned_count() * uses) as u64)
}
