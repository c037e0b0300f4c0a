//! Instrumented reference interpreter.
//!
//! Executes each layer equation literally, in float or simulated fixed-point
//! arithmetic, and counts every scalar multiplication, addition, shift and
//! activation evaluation. The counts are the measured counterpart of the
//! analytic cost model.
//!
//! Counting rules:
//! - a weight product is skipped (and not counted) when the stored weight is
//!   exactly zero, so sparse reservoirs and pruned weights cost nothing;
//! - Hadamard products and the leaky-integrator blend always count;
//! - under PoT/APoT weights every weight product is executed as shifts
//!   (one per power-of-two term) plus adders, and counted in `shift_mults`
//!   instead of `mults`.

use std::ops::{Add, AddAssign};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    conv1d_output_size, esn_row_nonzeros, validate_network, Activation, BitwidthConfig, LayerKind, LayerSpec,
    NetworkSpec, Violation,
};
use crate::costmodel::{acc_bits, nabs_layer, rm_layer};
use crate::quant::{quantize, weight_layout, PruneMask, QuantError, QuantScheme, QuantizedWeights, WeightCode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("convolution produces no output positions")]
    EmptyOutput,
    #[error("{0} is not a recurrent layer")]
    NotRecurrent(&'static str),
    #[error("invalid network: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T, InterpError> {
    Err(InterpError::Shape(msg.into()))
}

/// Sequence of feature vectors, one per time step or output position.
pub type Seq = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub mults: u64,
    pub adds: u64,
    pub shifts: u64,
    pub activations: u64,
    /// Weight products realized by shift-add instead of a multiplier.
    pub shift_mults: u64,
    /// Fixed-point accumulator saturations.
    pub overflows: u64,
}

impl OpCounters {
    /// Multiplications in the RM sense, however they were realized.
    pub fn multiplicative(&self) -> u64 {
        self.mults + self.shift_mults
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, o: Self) {
        self.mults += o.mults;
        self.adds += o.adds;
        self.shifts += o.shifts;
        self.activations += o.activations;
        self.shift_mults += o.shift_mults;
        self.overflows += o.overflows;
    }
}

impl Add for OpCounters {
    type Output = OpCounters;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::iter::Sum for OpCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(OpCounters::default(), |a, b| a + b)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Mat {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn random<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|w| *w *= factor);
    }

    fn shape_is(&self, rows: usize, cols: usize) -> bool {
        self.rows == rows && self.cols == cols && self.data.len() == rows * cols
    }
}

fn random_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Input weight, recurrent weight and bias of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub w: Mat,
    pub u: Mat,
    pub b: Vec<f64>,
}

impl GateWeights {
    fn random<R: Rng>(n_i: usize, n_h: usize, rng: &mut R) -> Self {
        GateWeights {
            w: Mat::random(n_h, n_i, rng),
            u: Mat::random(n_h, n_h, rng),
            b: random_vec(n_h, rng),
        }
    }

    pub fn zeros(n_i: usize, n_h: usize) -> Self {
        GateWeights {
            w: Mat::zeros(n_h, n_i),
            u: Mat::zeros(n_h, n_h),
            b: vec![0.0; n_h],
        }
    }

    fn check(&self, n_i: usize, n_h: usize, what: &str) -> Result<(), InterpError> {
        if !self.w.shape_is(n_h, n_i) || !self.u.shape_is(n_h, n_h) || self.b.len() != n_h {
            return shape_err(format!("{what} gate weights do not match n_i={n_i}, n_h={n_h}"));
        }
        Ok(())
    }
}

/// Per-type weight tensors. Gate order: LSTM `[i, f, o, c]`, GRU `[z, r, h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerWeights {
    Dense {
        w: Mat,
        b: Vec<f64>,
    },
    Conv1D {
        /// One `n_k × n_i` kernel per filter.
        kernels: Vec<Mat>,
        biases: Vec<f64>,
    },
    Rnn {
        w: Mat,
        u: Mat,
        b: Vec<f64>,
    },
    Lstm {
        gates: Vec<GateWeights>,
    },
    Gru {
        gates: Vec<GateWeights>,
    },
    Esn {
        w_in: Mat,
        w_r: Mat,
        /// Flat indices of the structural nonzeros of `w_r`, row-major.
        w_r_support: Vec<usize>,
        w_back: Mat,
        w_o: Mat,
        b_o: Vec<f64>,
    },
}

impl LayerWeights {
    /// Weights drawn uniformly from [-1, 1]. The reservoir gets exactly
    /// `max(1, round(N_r·s_p))` nonzeros per row at random columns.
    pub fn random<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Self {
        match spec.kind {
            LayerKind::Dense { n_n, n_i } => LayerWeights::Dense {
                w: Mat::random(n_n, n_i, rng),
                b: random_vec(n_n, rng),
            },
            LayerKind::Conv1D { n_f, n_i, n_k, .. } => LayerWeights::Conv1D {
                kernels: (0..n_f).map(|_| Mat::random(n_k, n_i, rng)).collect(),
                biases: random_vec(n_f, rng),
            },
            LayerKind::VanillaRnn { n_i, n_h, .. } => LayerWeights::Rnn {
                w: Mat::random(n_h, n_i, rng),
                u: Mat::random(n_h, n_h, rng),
                b: random_vec(n_h, rng),
            },
            LayerKind::Lstm { n_i, n_h, .. } => LayerWeights::Lstm {
                gates: (0..4).map(|_| GateWeights::random(n_i, n_h, rng)).collect(),
            },
            LayerKind::Gru { n_i, n_h, .. } => LayerWeights::Gru {
                gates: (0..3).map(|_| GateWeights::random(n_i, n_h, rng)).collect(),
            },
            LayerKind::EchoState { n_i, n_r, s_p, n_o, .. } => {
                let k = esn_row_nonzeros(n_r, s_p);
                let mut w_r = Mat::zeros(n_r, n_r);
                let mut support = Vec::with_capacity(n_r * k);
                for r in 0..n_r {
                    let mut cols = sample(rng, n_r, k).into_vec();
                    cols.sort_unstable();
                    for c in cols {
                        // resample exact zeros so the support stays structural
                        let mut v = 0.0;
                        while v == 0.0 {
                            v = rng.random_range(-1.0..=1.0);
                        }
                        w_r.data[r * n_r + c] = v;
                        support.push(r * n_r + c);
                    }
                }
                LayerWeights::Esn {
                    w_in: Mat::random(n_r, n_i, rng),
                    w_r,
                    w_r_support: support,
                    w_back: Mat::random(n_r, n_o, rng),
                    w_o: Mat::random(n_o, n_r, rng),
                    b_o: random_vec(n_o, rng),
                }
            }
        }
    }

    /// Like [`LayerWeights::random`] with every matrix scaled by
    /// `1/sqrt(fan-in)`, which keeps pre-activations O(1).
    pub fn random_fan_in<R: Rng>(spec: &LayerSpec, rng: &mut R) -> Self {
        let mut w = Self::random(spec, rng);
        let inv = |n: usize| 1.0 / (n.max(1) as f64).sqrt();
        match (&mut w, &spec.kind) {
            (LayerWeights::Dense { w, .. }, LayerKind::Dense { n_i, .. }) => w.scale(inv(*n_i)),
            (LayerWeights::Conv1D { kernels, .. }, LayerKind::Conv1D { n_i, n_k, .. }) => {
                kernels.iter_mut().for_each(|k| k.scale(inv(n_i * n_k)))
            }
            (LayerWeights::Rnn { w, u, .. }, LayerKind::VanillaRnn { n_i, n_h, .. }) => {
                w.scale(inv(*n_i));
                u.scale(inv(*n_h));
            }
            (LayerWeights::Lstm { gates }, LayerKind::Lstm { n_i, n_h, .. })
            | (LayerWeights::Gru { gates }, LayerKind::Gru { n_i, n_h, .. }) => {
                for g in gates {
                    g.w.scale(inv(*n_i));
                    g.u.scale(inv(*n_h));
                }
            }
            (
                LayerWeights::Esn {
                    w_in, w_r, w_back, w_o, ..
                },
                LayerKind::EchoState { n_i, n_r, s_p, n_o, .. },
            ) => {
                w_in.scale(inv(*n_i));
                w_r.scale(inv(esn_row_nonzeros(*n_r, *s_p)));
                w_back.scale(inv(*n_o));
                w_o.scale(inv(*n_r));
            }
            _ => unreachable!("random() matches the spec type"),
        }
        w
    }

    /// Verify every tensor shape against `spec`.
    pub fn check(&self, spec: &LayerSpec) -> Result<(), InterpError> {
        match (self, &spec.kind) {
            (LayerWeights::Dense { w, b }, LayerKind::Dense { n_n, n_i }) => {
                if !w.shape_is(*n_n, *n_i) || b.len() != *n_n {
                    return shape_err(format!("dense weights do not match {n_n}x{n_i}"));
                }
            }
            (LayerWeights::Conv1D { kernels, biases }, LayerKind::Conv1D { n_f, n_i, n_k, .. }) => {
                if kernels.len() != *n_f || biases.len() != *n_f || kernels.iter().any(|k| !k.shape_is(*n_k, *n_i)) {
                    return shape_err("conv1d kernels do not match n_f, n_k, n_i");
                }
            }
            (LayerWeights::Rnn { w, u, b }, LayerKind::VanillaRnn { n_i, n_h, .. }) => {
                if !w.shape_is(*n_h, *n_i) || !u.shape_is(*n_h, *n_h) || b.len() != *n_h {
                    return shape_err("rnn weights do not match n_i, n_h");
                }
            }
            (LayerWeights::Lstm { gates }, LayerKind::Lstm { n_i, n_h, .. }) => {
                if gates.len() != 4 {
                    return shape_err("lstm needs 4 gates");
                }
                for g in gates {
                    g.check(*n_i, *n_h, "lstm")?;
                }
            }
            (LayerWeights::Gru { gates }, LayerKind::Gru { n_i, n_h, .. }) => {
                if gates.len() != 3 {
                    return shape_err("gru needs 3 gates");
                }
                for g in gates {
                    g.check(*n_i, *n_h, "gru")?;
                }
            }
            (
                LayerWeights::Esn {
                    w_in,
                    w_r,
                    w_r_support,
                    w_back,
                    w_o,
                    b_o,
                },
                LayerKind::EchoState { n_i, n_r, n_o, .. },
            ) => {
                if !w_in.shape_is(*n_r, *n_i)
                    || !w_r.shape_is(*n_r, *n_r)
                    || !w_back.shape_is(*n_r, *n_o)
                    || !w_o.shape_is(*n_o, *n_r)
                    || b_o.len() != *n_o
                    || w_r_support.iter().any(|&i| i >= n_r * n_r)
                {
                    return shape_err("esn weights do not match n_i, N_r, n_o");
                }
            }
            _ => return shape_err(format!("weights do not belong to a {} layer", spec.type_name())),
        }
        Ok(())
    }

    /// Multiplicative weights in the order documented on
    /// [`weight_layout`](crate::quant::weight_layout).
    pub fn flat_weights_mut(&mut self) -> Vec<&mut f64> {
        match self {
            LayerWeights::Dense { w, .. } => w.data.iter_mut().collect(),
            LayerWeights::Conv1D { kernels, .. } => kernels.iter_mut().flat_map(|k| k.data.iter_mut()).collect(),
            LayerWeights::Rnn { w, u, .. } => w.data.iter_mut().chain(u.data.iter_mut()).collect(),
            LayerWeights::Lstm { gates } | LayerWeights::Gru { gates } => gates
                .iter_mut()
                .flat_map(|g| g.w.data.iter_mut().chain(g.u.data.iter_mut()))
                .collect(),
            LayerWeights::Esn {
                w_in,
                w_r,
                w_r_support,
                w_o,
                ..
            } => {
                let support: std::collections::HashSet<usize> = w_r_support.iter().copied().collect();
                let reservoir = w_r
                    .data
                    .iter_mut()
                    .enumerate()
                    .filter(move |(i, _)| support.contains(i))
                    .map(|(_, w)| w);
                w_in.data
                    .iter_mut()
                    .chain(reservoir)
                    .chain(w_o.data.iter_mut())
                    .collect()
            }
        }
    }

    /// Zero every weight the mask prunes.
    pub fn apply_mask(&mut self, spec: &LayerSpec, mask: &PruneMask) -> Result<(), InterpError> {
        let (count, _) = weight_layout(spec);
        if mask.keep.len() != count {
            return shape_err(format!(
                "mask has {} entries, layer has {count} weights",
                mask.keep.len()
            ));
        }
        let flat = self.flat_weights_mut();
        if flat.len() != count {
            return shape_err("weights do not match the layer's weight layout");
        }
        for (w, keep) in flat.into_iter().zip(&mask.keep) {
            if !keep {
                *w = 0.0;
            }
        }
        Ok(())
    }
}

/// Arithmetic used for weight products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExecMode {
    Float,
    /// Inputs quantized to `b_i` bits, recurrent state to `b_a` bits,
    /// weights per `scheme`; dot products accumulate in saturating integer
    /// accumulators sized by `acc_bits`.
    Fixed {
        bits: BitwidthConfig,
        scheme: QuantScheme,
    },
}

impl ExecMode {
    pub fn name(&self) -> String {
        match self {
            ExecMode::Float => "float".into(),
            ExecMode::Fixed { scheme, .. } => format!("fixed/{scheme}"),
        }
    }
}

/// Operand of a matrix-vector product, with integer codes in fixed mode.
struct Operand {
    values: Vec<f64>,
    codes: Option<Vec<i128>>,
    scale: f64,
}

fn quantize_operand(values: &[f64], bits: u32) -> (Vec<i128>, f64) {
    let levels = if bits >= 2 {
        ((1u128 << (bits - 1).min(126)) - 1) as f64
    } else {
        1.0
    };
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return (vec![0; values.len()], 0.0);
    }
    let scale = peak / levels;
    let codes = values
        .iter()
        .map(|v| (v / scale).round().clamp(-levels, levels) as i128)
        .collect();
    (codes, scale)
}

/// Matrix prepared for one layer execution.
struct Prepared<'a> {
    mat: &'a Mat,
    quant: Option<QuantizedWeights>,
    frac_bits: u32,
    acc_limit: i128,
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Per-execution arithmetic context and op counters.
struct Engine {
    mode: ExecMode,
    counters: OpCounters,
}

impl Engine {
    fn new(mode: &ExecMode) -> Self {
        Engine {
            mode: *mode,
            counters: OpCounters::default(),
        }
    }

    fn prepare<'a>(&self, mat: &'a Mat, operand_bits: u32) -> Result<Prepared<'a>, InterpError> {
        let ExecMode::Fixed { bits, scheme } = self.mode else {
            return Ok(Prepared {
                mat,
                quant: None,
                frac_bits: 0,
                acc_limit: i128::MAX,
            });
        };
        let quant = quantize(&mat.data, &scheme)?;
        let deepest = quant.as_ref().map_or(0, |q| {
            q.codes
                .iter()
                .filter_map(|c| match c {
                    WeightCode::Terms { exponents, .. } => exponents.iter().min().copied(),
                    _ => None,
                })
                .min()
                .map_or(0, |e| (-e).max(0) as u32)
        });
        let headroom = 125u32.saturating_sub(operand_bits + ceil_log2(mat.cols));
        let frac_bits = deepest.min(headroom);
        let b_w = match scheme {
            QuantScheme::Float => bits.b_w,
            QuantScheme::FixedUniform { b_w } | QuantScheme::PoT { b_w } | QuantScheme::APoT { b_w, .. } => b_w,
        };
        let width = acc_bits(mat.cols.max(1) as u64, b_w, operand_bits).expect("cols >= 1") + frac_bits as u64;
        let acc_limit = if width >= 127 {
            i128::MAX
        } else {
            (1i128 << (width - 1)) - 1
        };
        Ok(Prepared {
            mat,
            quant,
            frac_bits,
            acc_limit,
        })
    }

    fn operand(&self, values: &[f64], bits: u32) -> Operand {
        match self.mode {
            ExecMode::Float => Operand {
                values: values.to_vec(),
                codes: None,
                scale: 1.0,
            },
            ExecMode::Fixed { .. } => {
                let (codes, scale) = quantize_operand(values, bits);
                Operand {
                    values: values.to_vec(),
                    codes: Some(codes),
                    scale,
                }
            }
        }
    }

    fn saturating_acc(&mut self, acc: i128, term: i128, limit: i128) -> i128 {
        let sum = acc.saturating_add(term);
        if sum > limit {
            self.counters.overflows += 1;
            limit
        } else if sum < -limit {
            self.counters.overflows += 1;
            -limit
        } else {
            sum
        }
    }

    fn matvec(&mut self, p: &Prepared<'_>, x: &Operand) -> Vec<f64> {
        let mat = p.mat;
        debug_assert_eq!(mat.cols, x.values.len());
        let mut out = Vec::with_capacity(mat.rows);
        for r in 0..mat.rows {
            let row = mat.row(r);
            let mut terms = 0u64;
            let value = match (&x.codes, &p.quant) {
                (None, _) => {
                    let mut sum = 0.0;
                    for (w, v) in row.iter().zip(&x.values) {
                        if *w != 0.0 {
                            sum += w * v;
                            self.counters.mults += 1;
                            terms += 1;
                        }
                    }
                    sum
                }
                (Some(_), None) => {
                    // float weights against quantized operand
                    let codes = x.codes.as_ref().unwrap();
                    let mut sum = 0.0;
                    for (w, c) in row.iter().zip(codes) {
                        if *w != 0.0 {
                            sum += w * (*c as f64 * x.scale);
                            self.counters.mults += 1;
                            terms += 1;
                        }
                    }
                    sum
                }
                (Some(codes), Some(q)) => {
                    let qrow = &q.codes[r * mat.cols..(r + 1) * mat.cols];
                    let mut acc: i128 = 0;
                    let mut shifted = false;
                    for ((w, code), xq) in row.iter().zip(qrow).zip(codes) {
                        if *w == 0.0 {
                            continue;
                        }
                        terms += 1;
                        let term = match code {
                            // a zero code under a shift-add scheme needs no
                            // multiplier; uniform codes stay real multiplies
                            WeightCode::Zero
                                if matches!(q.scheme, QuantScheme::PoT { .. } | QuantScheme::APoT { .. }) =>
                            {
                                self.counters.shift_mults += 1;
                                0
                            }
                            WeightCode::Zero => {
                                self.counters.mults += 1;
                                0
                            }
                            WeightCode::Int { code } => {
                                self.counters.mults += 1;
                                xq.saturating_mul(*code as i128)
                            }
                            WeightCode::Terms { negative, exponents } => {
                                shifted = true;
                                self.counters.shift_mults += 1;
                                self.counters.shifts += exponents.len() as u64;
                                self.counters.adds += exponents.len().saturating_sub(1) as u64;
                                let base = xq << p.frac_bits;
                                let mag: i128 = exponents
                                    .iter()
                                    .map(|&e| {
                                        let s = (-e) as u32;
                                        if s >= 127 {
                                            if base < 0 {
                                                -1
                                            } else {
                                                0
                                            }
                                        } else {
                                            base >> s
                                        }
                                    })
                                    .sum();
                                if *negative {
                                    -mag
                                } else {
                                    mag
                                }
                            }
                        };
                        acc = self.saturating_acc(acc, term, p.acc_limit);
                    }
                    let unit = if shifted || matches!(q.scheme, QuantScheme::PoT { .. } | QuantScheme::APoT { .. }) {
                        q.scale * 2f64.powi(-(p.frac_bits as i32))
                    } else {
                        q.scale
                    };
                    acc as f64 * x.scale * unit
                }
            };
            self.counters.adds += terms.saturating_sub(1);
            out.push(value);
        }
        out
    }

    fn add(&mut self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.counters.adds += a.len() as u64;
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn hadamard(&mut self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.counters.mults += a.len() as u64;
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }

    fn activate(&mut self, v: &[f64], act: Activation) -> Vec<f64> {
        self.counters.activations += v.len() as u64;
        v.iter().map(|&x| act.apply(x)).collect()
    }

    fn input_bits(&self) -> u32 {
        match self.mode {
            ExecMode::Float => 64,
            ExecMode::Fixed { bits, .. } => bits.b_i,
        }
    }

    fn state_bits(&self) -> u32 {
        match self.mode {
            ExecMode::Float => 64,
            ExecMode::Fixed { bits, .. } => bits.b_a,
        }
    }
}

fn check_seq(x: &Seq, width: usize, what: &str) -> Result<(), InterpError> {
    if x.is_empty() {
        return shape_err(format!("{what}: empty input sequence"));
    }
    if let Some(t) = x.iter().position(|v| v.len() != width) {
        return shape_err(format!(
            "{what}: step {t} has {} features, expected {width}",
            x[t].len()
        ));
    }
    Ok(())
}

pub fn forward_dense(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x: &[f64],
    mode: &ExecMode,
) -> Result<(Vec<f64>, OpCounters), InterpError> {
    weights.check(spec)?;
    let (LayerKind::Dense { n_i, .. }, LayerWeights::Dense { w, b }) = (&spec.kind, weights) else {
        return shape_err("forward_dense needs a dense layer");
    };
    if x.len() != *n_i {
        return shape_err(format!("dense input has {} values, expected {n_i}", x.len()));
    }
    let mut eng = Engine::new(mode);
    let pw = eng.prepare(w, eng.input_bits())?;
    let xo = eng.operand(x, eng.input_bits());
    let wx = eng.matvec(&pw, &xo);
    let pre = eng.add(&wx, b);
    let y = eng.activate(&pre, spec.activation);
    Ok((y, eng.counters))
}

/// Generalized 1-D convolution (cross-correlation) with zero padding,
/// dilation and stride. Output is one row per kernel placement, `n_f` wide.
pub fn forward_conv1d(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x: &Seq,
    mode: &ExecMode,
) -> Result<(Seq, OpCounters), InterpError> {
    weights.check(spec)?;
    let (
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            padding,
            dilation,
            stride,
        },
        LayerWeights::Conv1D { kernels, biases },
    ) = (&spec.kind, weights)
    else {
        return shape_err("forward_conv1d needs a conv1d layer");
    };
    let (n_f, n_i, n_k, n_s) = (*n_f, *n_i, *n_k, *n_s);
    check_seq(x, n_i, "conv1d")?;
    if x.len() != n_s {
        return shape_err(format!("conv1d input has {} steps, expected {n_s}", x.len()));
    }
    let out_len = conv1d_output_size(n_s, n_k, *padding, *dilation, *stride);
    if out_len == 0 {
        return Err(InterpError::EmptyOutput);
    }
    let bank = Mat {
        rows: n_f,
        cols: n_k * n_i,
        data: kernels.iter().flat_map(|k| k.data.iter().copied()).collect(),
    };
    let mut eng = Engine::new(mode);
    let pk = eng.prepare(&bank, eng.input_bits())?;
    let flat: Vec<f64> = x.concat();
    let whole = eng.operand(&flat, eng.input_bits());
    let mut out = Vec::with_capacity(out_len);
    for pos in 0..out_len {
        let mut values = Vec::with_capacity(n_k * n_i);
        let mut codes = whole.codes.as_ref().map(|_| Vec::with_capacity(n_k * n_i));
        for j in 0..n_k {
            let idx = (pos * stride + j * dilation) as i64 - *padding as i64;
            for c in 0..n_i {
                let (v, q) = if idx >= 0 && (idx as usize) < n_s {
                    let at = idx as usize * n_i + c;
                    (flat[at], whole.codes.as_ref().map_or(0, |cs| cs[at]))
                } else {
                    (0.0, 0)
                };
                values.push(v);
                if let Some(cs) = codes.as_mut() {
                    cs.push(q);
                }
            }
        }
        let window = Operand {
            values,
            codes,
            scale: whole.scale,
        };
        let z = eng.matvec(&pk, &window);
        let pre = eng.add(&z, biases);
        out.push(eng.activate(&pre, spec.activation));
    }
    Ok((out, eng.counters))
}

/// Recurrent state carried between steps and batches.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellState {
    pub h: Vec<f64>,
    /// LSTM cell vector.
    pub c: Vec<f64>,
    /// ESN reservoir state.
    pub s: Vec<f64>,
    /// ESN previous output (feedback path).
    pub y_prev: Vec<f64>,
}

impl CellState {
    pub fn zeros(spec: &LayerSpec) -> Self {
        match spec.kind {
            LayerKind::VanillaRnn { n_h, .. } | LayerKind::Gru { n_h, .. } => CellState {
                h: vec![0.0; n_h],
                ..Default::default()
            },
            LayerKind::Lstm { n_h, .. } => CellState {
                h: vec![0.0; n_h],
                c: vec![0.0; n_h],
                ..Default::default()
            },
            LayerKind::EchoState { n_r, n_o, .. } => CellState {
                s: vec![0.0; n_r],
                y_prev: vec![0.0; n_o],
                ..Default::default()
            },
            _ => CellState::default(),
        }
    }

    fn check(&self, spec: &LayerSpec) -> Result<(), InterpError> {
        let z = CellState::zeros(spec);
        if self.h.len() != z.h.len()
            || self.c.len() != z.c.len()
            || self.s.len() != z.s.len()
            || self.y_prev.len() != z.y_prev.len()
        {
            return shape_err("initial state does not match the layer");
        }
        Ok(())
    }
}

fn initial_state(spec: &LayerSpec, init: Option<&CellState>) -> Result<CellState, InterpError> {
    match init {
        Some(s) => {
            s.check(spec)?;
            Ok(s.clone())
        }
        None => Ok(CellState::zeros(spec)),
    }
}

/// Vanilla RNN, `h_t = φ(W x_t + U h_{t-1} + b)`.
pub fn forward_rnn(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x_seq: &Seq,
    mode: &ExecMode,
    init: Option<&CellState>,
) -> Result<(Seq, CellState, OpCounters), InterpError> {
    weights.check(spec)?;
    let (LayerKind::VanillaRnn { n_i, .. }, LayerWeights::Rnn { w, u, b }) = (&spec.kind, weights) else {
        return shape_err("forward_rnn needs an rnn layer");
    };
    check_seq(x_seq, *n_i, "rnn")?;
    let mut state = initial_state(spec, init)?;
    let mut eng = Engine::new(mode);
    let pw = eng.prepare(w, eng.input_bits())?;
    let pu = eng.prepare(u, eng.state_bits())?;
    let mut out = Vec::with_capacity(x_seq.len());
    for x in x_seq {
        let xo = eng.operand(x, eng.input_bits());
        let ho = eng.operand(&state.h, eng.state_bits());
        let wx = eng.matvec(&pw, &xo);
        let uh = eng.matvec(&pu, &ho);
        let sum = eng.add(&wx, &uh);
        let pre = eng.add(&sum, b);
        state.h = eng.activate(&pre, spec.activation);
        out.push(state.h.clone());
    }
    Ok((out, state, eng.counters))
}

struct GatePrep<'a> {
    w: Prepared<'a>,
    u: Prepared<'a>,
    b: &'a [f64],
}

fn prep_gates<'a>(eng: &Engine, gates: &'a [GateWeights]) -> Result<Vec<GatePrep<'a>>, InterpError> {
    gates
        .iter()
        .map(|g| {
            Ok(GatePrep {
                w: eng.prepare(&g.w, eng.input_bits())?,
                u: eng.prepare(&g.u, eng.state_bits())?,
                b: &g.b,
            })
        })
        .collect()
}

fn gate_pre(eng: &mut Engine, g: &GatePrep<'_>, xo: &Operand, ho: &Operand) -> Vec<f64> {
    let wx = eng.matvec(&g.w, xo);
    let uh = eng.matvec(&g.u, ho);
    let sum = eng.add(&wx, &uh);
    eng.add(&sum, g.b)
}

/// LSTM with input, forget and output gates; `φ` is the layer activation.
pub fn forward_lstm(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x_seq: &Seq,
    mode: &ExecMode,
    init: Option<&CellState>,
) -> Result<(Seq, CellState, OpCounters), InterpError> {
    weights.check(spec)?;
    let (LayerKind::Lstm { n_i, .. }, LayerWeights::Lstm { gates }) = (&spec.kind, weights) else {
        return shape_err("forward_lstm needs an lstm layer");
    };
    check_seq(x_seq, *n_i, "lstm")?;
    let mut state = initial_state(spec, init)?;
    let mut eng = Engine::new(mode);
    let g = prep_gates(&eng, gates)?;
    let mut out = Vec::with_capacity(x_seq.len());
    for x in x_seq {
        let xo = eng.operand(x, eng.input_bits());
        let ho = eng.operand(&state.h, eng.state_bits());
        let pre_i = gate_pre(&mut eng, &g[0], &xo, &ho);
        let i_t = eng.activate(&pre_i, Activation::Sigmoid);
        let pre_f = gate_pre(&mut eng, &g[1], &xo, &ho);
        let f_t = eng.activate(&pre_f, Activation::Sigmoid);
        let pre_o = gate_pre(&mut eng, &g[2], &xo, &ho);
        let o_t = eng.activate(&pre_o, Activation::Sigmoid);
        let pre_c = gate_pre(&mut eng, &g[3], &xo, &ho);
        let cand = eng.activate(&pre_c, spec.activation);
        let keep = eng.hadamard(&f_t, &state.c);
        let write = eng.hadamard(&i_t, &cand);
        state.c = eng.add(&keep, &write);
        let squashed = eng.activate(&state.c, spec.activation);
        state.h = eng.hadamard(&o_t, &squashed);
        out.push(state.h.clone());
    }
    Ok((out, state, eng.counters))
}

/// Fully gated GRU; `φ` is the layer activation.
pub fn forward_gru(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x_seq: &Seq,
    mode: &ExecMode,
    init: Option<&CellState>,
) -> Result<(Seq, CellState, OpCounters), InterpError> {
    weights.check(spec)?;
    let (LayerKind::Gru { n_i, .. }, LayerWeights::Gru { gates }) = (&spec.kind, weights) else {
        return shape_err("forward_gru needs a gru layer");
    };
    check_seq(x_seq, *n_i, "gru")?;
    let mut state = initial_state(spec, init)?;
    let mut eng = Engine::new(mode);
    let g = prep_gates(&eng, gates)?;
    let mut out = Vec::with_capacity(x_seq.len());
    for x in x_seq {
        let xo = eng.operand(x, eng.input_bits());
        let ho = eng.operand(&state.h, eng.state_bits());
        let pre_z = gate_pre(&mut eng, &g[0], &xo, &ho);
        let z = eng.activate(&pre_z, Activation::Sigmoid);
        let pre_r = gate_pre(&mut eng, &g[1], &xo, &ho);
        let r = eng.activate(&pre_r, Activation::Sigmoid);
        let wx = eng.matvec(&g[2].w, &xo);
        let uh = eng.matvec(&g[2].u, &ho);
        let gated = eng.hadamard(&r, &uh);
        let sum = eng.add(&wx, &gated);
        let pre_h = eng.add(&sum, g[2].b);
        let cand = eng.activate(&pre_h, spec.activation);
        eng.counters.adds += z.len() as u64; // 1 - z
        let one_minus_z: Vec<f64> = z.iter().map(|v| 1.0 - v).collect();
        let carried = eng.hadamard(&z, &state.h);
        let fresh = eng.hadamard(&one_minus_z, &cand);
        state.h = eng.add(&carried, &fresh);
        out.push(state.h.clone());
    }
    Ok((out, state, eng.counters))
}

/// Leaky echo-state network. Returns the readout sequence `y_t`.
pub fn forward_esn(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x_seq: &Seq,
    mode: &ExecMode,
    feedback_enabled: bool,
    init: Option<&CellState>,
) -> Result<(Seq, CellState, OpCounters), InterpError> {
    weights.check(spec)?;
    let (
        LayerKind::EchoState { n_i, leak, .. },
        LayerWeights::Esn {
            w_in,
            w_r,
            w_back,
            w_o,
            b_o,
            ..
        },
    ) = (&spec.kind, weights)
    else {
        return shape_err("forward_esn needs an esn layer");
    };
    forward_esn_with_leak(
        spec,
        *n_i,
        *leak,
        w_in,
        w_r,
        w_back,
        w_o,
        b_o,
        x_seq,
        mode,
        feedback_enabled,
        init,
    )
}

#[allow(clippy::too_many_arguments)]
fn forward_esn_with_leak(
    spec: &LayerSpec,
    n_i: usize,
    leak: f64,
    w_in: &Mat,
    w_r: &Mat,
    w_back: &Mat,
    w_o: &Mat,
    b_o: &[f64],
    x_seq: &Seq,
    mode: &ExecMode,
    feedback_enabled: bool,
    init: Option<&CellState>,
) -> Result<(Seq, CellState, OpCounters), InterpError> {
    check_seq(x_seq, n_i, "esn")?;
    let mut state = initial_state(spec, init)?;
    let mut eng = Engine::new(mode);
    let p_in = eng.prepare(w_in, eng.input_bits())?;
    let p_r = eng.prepare(w_r, eng.state_bits())?;
    let p_back = eng.prepare(w_back, eng.state_bits())?;
    let p_o = eng.prepare(w_o, eng.state_bits())?;
    let keep = 1.0 - leak;
    let mut out = Vec::with_capacity(x_seq.len());
    for x in x_seq {
        let xo = eng.operand(x, eng.input_bits());
        let so = eng.operand(&state.s, eng.state_bits());
        let rs = eng.matvec(&p_r, &so);
        let wx = eng.matvec(&p_in, &xo);
        let mut pre = eng.add(&rs, &wx);
        if feedback_enabled {
            let yo = eng.operand(&state.y_prev, eng.state_bits());
            let fb = eng.matvec(&p_back, &yo);
            pre = eng.add(&pre, &fb);
        }
        let a = eng.activate(&pre, spec.activation);
        // (1 - μ) s + μ a: two multiplies and one add per unit
        eng.counters.mults += 2 * a.len() as u64;
        eng.counters.adds += a.len() as u64;
        state.s = state.s.iter().zip(&a).map(|(s, a)| keep * s + leak * a).collect();
        let so = eng.operand(&state.s, eng.state_bits());
        let ws = eng.matvec(&p_o, &so);
        let y = eng.add(&ws, b_o);
        state.y_prev = y.clone();
        out.push(y);
    }
    Ok((out, state, eng.counters))
}

/// ESN run with an explicit leak rate, bypassing the `(0, 1]` parse-time
/// restriction (used to probe the frozen-state limit `μ = 0`).
pub fn forward_esn_with_leak_override(
    spec: &LayerSpec,
    weights: &LayerWeights,
    x_seq: &Seq,
    leak: f64,
    init: Option<&CellState>,
) -> Result<(Seq, CellState, OpCounters), InterpError> {
    weights.check(spec)?;
    let (
        LayerKind::EchoState { n_i, .. },
        LayerWeights::Esn {
            w_in,
            w_r,
            w_back,
            w_o,
            b_o,
            ..
        },
    ) = (&spec.kind, weights)
    else {
        return shape_err("needs an esn layer");
    };
    forward_esn_with_leak(
        spec,
        *n_i,
        leak,
        w_in,
        w_r,
        w_back,
        w_o,
        b_o,
        x_seq,
        &ExecMode::Float,
        false,
        init,
    )
}

/// Run any layer on a sequence signal, returning its output sequence
/// (a dense layer yields a single row). The input is reshaped when it is
/// a single row of the right total width.
pub fn forward_layer(
    spec: &LayerSpec,
    weights: &LayerWeights,
    input: &Seq,
    mode: &ExecMode,
    esn_feedback: bool,
) -> Result<(Seq, OpCounters), InterpError> {
    let flat: Vec<f64> = input.concat();
    let as_seq = |steps: usize, features: usize| -> Result<Seq, InterpError> {
        if input.len() == steps && input.iter().all(|r| r.len() == features) {
            return Ok(input.clone());
        }
        if flat.len() == steps * features && features > 0 {
            return Ok(flat.chunks(features).map(<[f64]>::to_vec).collect());
        }
        shape_err(format!(
            "{} layer expects {steps}x{features} input, got {} values",
            spec.type_name(),
            flat.len()
        ))
    };
    match spec.kind {
        LayerKind::Dense { .. } => {
            let (y, c) = forward_dense(spec, weights, &flat, mode)?;
            Ok((vec![y], c))
        }
        LayerKind::Conv1D { n_i, n_s, .. } => forward_conv1d(spec, weights, &as_seq(n_s, n_i)?, mode),
        LayerKind::VanillaRnn { n_i, n_s, .. } => {
            forward_rnn(spec, weights, &as_seq(n_s, n_i)?, mode, None).map(|(y, _, c)| (y, c))
        }
        LayerKind::Lstm { n_i, n_s, .. } => {
            forward_lstm(spec, weights, &as_seq(n_s, n_i)?, mode, None).map(|(y, _, c)| (y, c))
        }
        LayerKind::Gru { n_i, n_s, .. } => {
            forward_gru(spec, weights, &as_seq(n_s, n_i)?, mode, None).map(|(y, _, c)| (y, c))
        }
        LayerKind::EchoState { n_i, n_s, .. } => {
            forward_esn(spec, weights, &as_seq(n_s, n_i)?, mode, esn_feedback, None).map(|(y, _, c)| (y, c))
        }
    }
}

/// Run a whole network; returns the final output and per-layer counters.
pub fn run_network(
    net: &NetworkSpec,
    weights: &[LayerWeights],
    input: &Seq,
    mode: &ExecMode,
    esn_feedback: bool,
) -> Result<(Seq, Vec<OpCounters>), InterpError> {
    if weights.len() != net.layers.len() {
        return shape_err(format!("{} weight sets for {} layers", weights.len(), net.layers.len()));
    }
    let mut signal = input.clone();
    let mut per_layer = Vec::with_capacity(net.layers.len());
    for (spec, w) in net.layers.iter().zip(weights) {
        let (next, c) = forward_layer(spec, w, &signal, mode, esn_feedback)?;
        signal = next;
        per_layer.push(c);
    }
    Ok((signal, per_layer))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMode {
    /// State reset to zero before every batch.
    Stateless,
    /// Final state of one batch initializes the next.
    Stateful,
}

/// Run a recurrent layer over consecutive batches.
pub fn run_batches(
    spec: &LayerSpec,
    weights: &LayerWeights,
    batches: &[Seq],
    state_mode: StateMode,
    mode: &ExecMode,
) -> Result<(Vec<Seq>, OpCounters), InterpError> {
    if !spec.is_recurrent() {
        return Err(InterpError::NotRecurrent(spec.type_name()));
    }
    if batches.is_empty() {
        return shape_err("no batches");
    }
    let mut state = CellState::zeros(spec);
    let mut outputs = Vec::with_capacity(batches.len());
    let mut total = OpCounters::default();
    for batch in batches {
        if state_mode == StateMode::Stateless {
            state = CellState::zeros(spec);
        }
        let (y, next, c) = match spec.kind {
            LayerKind::VanillaRnn { .. } => forward_rnn(spec, weights, batch, mode, Some(&state))?,
            LayerKind::Lstm { .. } => forward_lstm(spec, weights, batch, mode, Some(&state))?,
            LayerKind::Gru { .. } => forward_gru(spec, weights, batch, mode, Some(&state))?,
            LayerKind::EchoState { .. } => forward_esn(spec, weights, batch, mode, false, Some(&state))?,
            _ => unreachable!("checked recurrent"),
        };
        state = next;
        total += c;
        outputs.push(y);
    }
    Ok((outputs, total))
}

/// FIR filter `y_i = Σ_m x_{i-m} κ_m`, zero history.
pub fn fir_filter(taps: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| taps.iter().enumerate().take(i + 1).map(|(m, k)| x[i - m] * k).sum())
        .collect()
}

/// IIR difference equation `y(t) = Σ_{k=0..q} a_k x(t-k) + Σ_{k=1..p} b_k y(t-k)`,
/// zero initial conditions. `b[0]` is the coefficient of `y(t-1)`.
pub fn iir_filter(a: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y: Vec<f64> = Vec::with_capacity(x.len());
    for t in 0..x.len() {
        let ff: f64 = a.iter().enumerate().take(t + 1).map(|(k, ak)| ak * x[t - k]).sum();
        let fb: f64 = b.iter().enumerate().take(t).map(|(k, bk)| bk * y[t - 1 - k]).sum();
        y.push(ff + fb);
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticCounts {
    pub rm: u64,
    pub nabs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLayer {
    pub layer_index: usize,
    pub layer_type: String,
    pub analytic: AnalyticCounts,
    pub measured: OpCounters,
    /// Measured multiplications (however realized) minus analytic RM.
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTotals {
    pub analytic: AnalyticCounts,
    pub measured: OpCounters,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seed: u64,
    pub mode: String,
    pub esn_feedback: bool,
    pub per_layer: Vec<AuditLayer>,
    pub totals: AuditTotals,
    pub overflow_count: u64,
}

impl AuditRecord {
    pub fn is_exact(&self) -> bool {
        self.per_layer.iter().all(|l| l.delta == 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit record serializes")
    }
}

/// Seeded random weights for every layer of `net`.
pub fn random_network_weights<R: Rng>(net: &NetworkSpec, rng: &mut R) -> Vec<LayerWeights> {
    net.layers.iter().map(|l| LayerWeights::random(l, rng)).collect()
}

/// Random input matching the first layer's shape.
pub fn random_input<R: Rng>(net: &NetworkSpec, rng: &mut R) -> Seq {
    let first = &net.layers[0];
    match first.kind {
        LayerKind::Dense { n_i, .. } => vec![random_vec(n_i, rng)],
        LayerKind::Conv1D { n_i, n_s, .. }
        | LayerKind::VanillaRnn { n_i, n_s, .. }
        | LayerKind::Lstm { n_i, n_s, .. }
        | LayerKind::Gru { n_i, n_s, .. }
        | LayerKind::EchoState { n_i, n_s, .. } => (0..n_s).map(|_| random_vec(n_i, rng)).collect(),
    }
}

/// Reconcile analytic RM against interpreter-measured multiplications on
/// seeded random weights and inputs.
pub fn audit(
    net: &NetworkSpec,
    bits: &BitwidthConfig,
    scheme: &QuantScheme,
    seed: u64,
    mode: &ExecMode,
    esn_feedback: bool,
) -> Result<AuditRecord, InterpError> {
    let violations = validate_network(net);
    if !violations.is_empty() {
        return Err(InterpError::Invalid(violations));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random_network_weights(net, &mut rng);
    let input = random_input(net, &mut rng);
    let (_, measured) = run_network(net, &weights, &input, mode, esn_feedback)?;
    let per_layer: Vec<AuditLayer> = net
        .layers
        .iter()
        .zip(&measured)
        .enumerate()
        .map(|(i, (layer, m))| {
            let rm = rm_layer(layer);
            AuditLayer {
                layer_index: i,
                layer_type: layer.type_name().to_string(),
                analytic: AnalyticCounts {
                    rm,
                    nabs: nabs_layer(layer, bits, scheme),
                },
                measured: *m,
                delta: m.multiplicative() as i64 - rm as i64,
            }
        })
        .collect();
    let analytic = per_layer
        .iter()
        .fold(AnalyticCounts { rm: 0, nabs: 0 }, |t, l| AnalyticCounts {
            rm: t.rm + l.analytic.rm,
            nabs: t.nabs + l.analytic.nabs,
        });
    let measured_total: OpCounters = measured.iter().copied().sum();
    Ok(AuditRecord {
        seed,
        mode: mode.name(),
        esn_feedback,
        totals: AuditTotals {
            analytic,
            measured: measured_total,
            delta: per_layer.iter().map(|l| l.delta).sum(),
        },
        overflow_count: measured_total.overflows,
        per_layer,
    })
}
