//! Analytic inference-complexity metrics.
//!
//! Three levels, from software to hardware: real multiplications (RM),
//! bit operations (BOP) for fixed-point arithmetic at given bitwidths, and
//! additions-and-bit-shifts (NABS) once every multiplication is decomposed
//! into shifts and adders. Shifts are free, so NABS counts adders only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    conv1d_output_size, esn_row_nonzeros, validate_network, BitwidthConfig, LayerKind, LayerSpec, NetworkSpec,
    Violation,
};
use crate::quant::{x_w, QuantScheme};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid network: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// Accumulator width that cannot overflow when summing `n` products of a
/// `b_w`-bit and a `b_i`-bit operand.
pub fn acc_bits(n: u64, b_w: u32, b_i: u32) -> Result<u64, CostError> {
    if n < 1 {
        return Err(CostError::Domain("accumulation length must be >= 1".into()));
    }
    Ok(b_w as u64 + b_i as u64 + ceil_log2(n))
}

/// Bit cost of `n` multiplications of `b_w` by `b_i` bits.
pub fn mult_bits(n: u64, b_w: u32, b_i: u32) -> u64 {
    n * b_w as u64 * b_i as u64
}

// Callers only pass lengths >= 1 taken from validated layers.
fn acc(n: usize, b_w: u32, b_i: u32) -> u64 {
    acc_bits(n.max(1) as u64, b_w, b_i).expect("n >= 1")
}

fn mult(n: usize, b_w: u32, b_i: u32) -> u64 {
    mult_bits(n as u64, b_w, b_i)
}

/// Real multiplications per inference pass.
pub fn rm_layer(layer: &LayerSpec) -> u64 {
    let u = |x: usize| x as u64;
    match layer.kind {
        LayerKind::Dense { n_n, n_i } => u(n_n) * u(n_i),
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            padding,
            dilation,
            stride,
        } => {
            let out = conv1d_output_size(n_s, n_k, padding, dilation, stride);
            u(n_f) * u(n_i) * u(n_k) * u(out)
        }
        LayerKind::VanillaRnn { n_i, n_h, n_s } => u(n_s) * u(n_h) * u(n_i + n_h),
        LayerKind::Lstm { n_i, n_h, n_s } => u(n_s) * u(n_h) * u(4 * n_i + 4 * n_h + 3),
        LayerKind::Gru { n_i, n_h, n_s } => u(n_s) * u(n_h) * u(3 * n_i + 3 * n_h + 3),
        LayerKind::EchoState {
            n_i,
            n_r,
            s_p,
            n_o,
            n_s,
            ..
        } => u(n_s) * u(n_r) * u(n_i + esn_row_nonzeros(n_r, s_p) + 2 + n_o),
    }
}

/// Bit operations per inference pass.
pub fn bop_layer(layer: &LayerSpec, bits: &BitwidthConfig) -> u64 {
    let BitwidthConfig { b_w, b_i, b_a } = *bits;
    let ba2 = b_a as u64 * b_a as u64;
    let u = |x: usize| x as u64;
    match layer.kind {
        LayerKind::Dense { n_n, n_i } => u(n_n) * u(n_i) * (b_w as u64 * b_i as u64 + acc(n_i, b_w, b_i)),
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            padding,
            dilation,
            stride,
        } => {
            let out = u(conv1d_output_size(n_s, n_k, padding, dilation, stride));
            let taps = n_i * n_k;
            out * u(n_f) * mult(taps, b_w, b_i) + u(n_f) * acc(taps, b_w, b_i)
        }
        LayerKind::VanillaRnn { n_i, n_h, n_s } => {
            let steps = u(n_s) * u(n_h);
            steps * mult(n_i, b_w, b_i) + steps * mult(n_h, b_w, b_a) + 2 * steps * acc(n_h, b_w, b_a)
        }
        LayerKind::Lstm { n_i, n_h, n_s } => {
            let steps = u(n_s) * u(n_h);
            4 * steps * mult(n_i, b_w, b_i)
                + 4 * steps * mult(n_h, b_w, b_a)
                + 3 * steps * ba2
                + 9 * steps * acc(n_h, b_w, b_a)
        }
        LayerKind::Gru { n_i, n_h, n_s } => {
            let steps = u(n_s) * u(n_h);
            3 * steps * mult(n_i, b_w, b_i)
                + 3 * steps * mult(n_h, b_w, b_a)
                + 3 * steps * ba2
                + 8 * steps * acc(n_h, b_w, b_a)
        }
        LayerKind::EchoState {
            n_i,
            n_r,
            s_p,
            n_o,
            n_s,
            ..
        } => {
            let steps = u(n_s) * u(n_r);
            let k = esn_row_nonzeros(n_r, s_p);
            steps * mult(n_i, b_w, b_i)
                + steps * mult(k, b_w, b_a)
                + steps * mult(n_o, b_w, b_a)
                + 2 * steps * ba2
                + 4 * steps * acc(n_r, b_w, b_a)
        }
    }
}

/// Adders per inference pass once multiplications are shift-add decomposed.
pub fn nabs_layer(layer: &LayerSpec, bits: &BitwidthConfig, scheme: &QuantScheme) -> u64 {
    let BitwidthConfig { b_w, b_i, b_a } = *bits;
    let x1 = x_w(scheme, bits) + 1;
    let u = |x: usize| x as u64;
    // n(X_w + 1) - 1 adders for an n-term dot product
    let dot = |n: usize| u(n) * x1 - 1;
    match layer.kind {
        LayerKind::Dense { n_n, n_i } => u(n_n) * u(n_i) * x1 * acc(n_i, b_w, b_i),
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            padding,
            dilation,
            stride,
        } => {
            let out = u(conv1d_output_size(n_s, n_k, padding, dilation, stride));
            let taps = n_i * n_k;
            out * u(n_f) * dot(taps) * acc(taps, b_w, b_i) + u(n_f) * acc(taps, b_w, b_i)
        }
        LayerKind::VanillaRnn { n_i, n_h, n_s } => {
            let steps = u(n_s) * u(n_h);
            steps * dot(n_i) * acc(n_i, b_w, b_i) + steps * (u(n_h) * x1 + 1) * acc(n_h, b_w, b_a)
        }
        LayerKind::Lstm { n_i, n_h, n_s } => {
            let steps = u(n_s) * u(n_h);
            4 * steps * dot(n_i) * acc(n_i, b_w, b_i)
                + 4 * steps * (u(n_h) * x1 + 1) * acc(n_h, b_w, b_a)
                + 6 * steps * b_a as u64
        }
        LayerKind::Gru { n_i, n_h, n_s } => {
            let steps = u(n_s) * u(n_h);
            3 * steps * dot(n_i) * acc(n_i, b_w, b_i)
                + steps * (3 * u(n_h) * x1 + 5) * acc(n_h, b_w, b_a)
                + 6 * steps * b_a as u64
        }
        LayerKind::EchoState {
            n_i,
            n_r,
            s_p,
            n_o,
            n_s,
            ..
        } => {
            let steps = u(n_s) * u(n_r);
            let k = esn_row_nonzeros(n_r, s_p);
            steps * dot(n_i) * acc(n_i, b_w, b_i)
                + steps * (u(k) * x1 + 3) * acc(n_r, b_w, b_a)
                + steps * dot(n_o) * acc(n_o, b_w, b_a)
                + 4 * steps * b_a as u64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTotals {
    pub rm: u64,
    pub bop: u64,
    pub nabs: u64,
}

impl CostTotals {
    pub fn get(&self, metric: Metric) -> u64 {
        match metric {
            Metric::Rm => self.rm,
            Metric::Bop => self.bop,
            Metric::Nabs => self.nabs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rm,
    Bop,
    Nabs,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rm => "rm",
            Metric::Bop => "bop",
            Metric::Nabs => "nabs",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rm" => Ok(Metric::Rm),
            "bop" => Ok(Metric::Bop),
            "nabs" => Ok(Metric::Nabs),
            other => Err(format!("unknown metric {other:?} (rm, bop, nabs)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_index: usize,
    pub layer_type: String,
    pub rm: u64,
    pub bop: u64,
    pub nabs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub totals: CostTotals,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }

    /// CSV with one row per layer plus a `TOTAL` row, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_index,layer_type,rm,bop,nabs\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.layer_index, l.layer_type, l.rm, l.bop, l.nabs
            ));
        }
        out.push_str(&format!(
            "TOTAL,,{},{},{}\n",
            self.totals.rm, self.totals.bop, self.totals.nabs
        ));
        out
    }
}

pub fn cost_report(net: &NetworkSpec, bits: &BitwidthConfig, scheme: &QuantScheme) -> Result<CostReport, CostError> {
    let violations = validate_network(net);
    if !violations.is_empty() {
        return Err(CostError::Validation(violations));
    }
    let layers: Vec<LayerCost> = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| LayerCost {
            layer_index: i,
            layer_type: layer.type_name().to_string(),
            rm: rm_layer(layer),
            bop: bop_layer(layer, bits),
            nabs: nabs_layer(layer, bits, scheme),
        })
        .collect();
    let totals = layers.iter().fold(CostTotals::default(), |t, l| CostTotals {
        rm: t.rm + l.rm,
        bop: t.bop + l.bop,
        nabs: t.nabs + l.nabs,
    });
    Ok(CostReport { layers, totals })
}

/// Training effort: epochs × batches per epoch.
pub fn nenb(epochs: u64, batches_per_epoch: u64) -> Result<u64, CostError> {
    if epochs < 1 || batches_per_epoch < 1 {
        return Err(CostError::Domain("epochs and batches per epoch must be >= 1".into()));
    }
    Ok(epochs * batches_per_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b8() -> BitwidthConfig {
        BitwidthConfig::default()
    }

    #[test]
    fn helper_examples() {
        assert_eq!(acc_bits(1, 8, 8).unwrap(), 16);
        assert_eq!(acc_bits(2, 8, 8).unwrap(), 17);
        assert_eq!(acc_bits(5, 4, 4).unwrap(), 11);
        assert!(acc_bits(0, 8, 8).is_err());
        assert_eq!(mult_bits(0, 8, 8), 0);
        assert_eq!(mult_bits(1, 8, 8), 64);
        assert_eq!(mult_bits(6, 4, 8), 192);
    }

    #[test]
    fn rm_examples() {
        assert_eq!(rm_layer(&LayerSpec::dense(10, 5)), 50);
        assert_eq!(rm_layer(&LayerSpec::lstm(4, 3, 2)), 186);
        assert_eq!(rm_layer(&LayerSpec::esn(2, 10, 0.5, 1, 1, 0.3)), 100);
        assert_eq!(rm_layer(&LayerSpec::gru(1, 2, 1)), 24);
        assert_eq!(rm_layer(&LayerSpec::rnn(3, 2, 2)), 20);
    }

    #[test]
    fn bop_examples() {
        assert_eq!(bop_layer(&LayerSpec::dense(1, 2), &b8()), 162);
        assert_eq!(
            bop_layer(&LayerSpec::dense(1, 1), &BitwidthConfig::uniform(1).unwrap()),
            3
        );
        // 4·64 + 4·64 + 3·64 + 9·Acc(1,8,8) with Acc(1,8,8) = 16
        assert_eq!(bop_layer(&LayerSpec::lstm(1, 1, 1), &b8()), 848);
    }

    #[test]
    fn nabs_examples() {
        let d = LayerSpec::dense(1, 2);
        assert_eq!(nabs_layer(&d, &b8(), &QuantScheme::FixedUniform { b_w: 8 }), 272);
        assert_eq!(nabs_layer(&d, &b8(), &QuantScheme::PoT { b_w: 8 }), 34);
    }

    #[test]
    fn report_totals() {
        let net = NetworkSpec::new("n", vec![LayerSpec::dense(10, 5), LayerSpec::dense(3, 10)]);
        let r = cost_report(&net, &b8(), &QuantScheme::PoT { b_w: 8 }).unwrap();
        assert_eq!(r.totals.rm, 80);
        assert_eq!(r.totals.bop, r.layers.iter().map(|l| l.bop).sum::<u64>());
        let csv = r.to_csv();
        assert!(csv.starts_with("layer_index,layer_type,rm,bop,nabs\n0,dense,50,"));
        assert!(csv.lines().last().unwrap().starts_with("TOTAL,,80,"));

        let single = NetworkSpec::new("s", vec![LayerSpec::dense(10, 5)]);
        let r = cost_report(&single, &b8(), &QuantScheme::PoT { b_w: 8 }).unwrap();
        assert_eq!(r.totals.rm, r.layers[0].rm);
        assert_eq!(r.totals.nabs, r.layers[0].nabs);

        let bad = NetworkSpec::new("b", vec![LayerSpec::dense(10, 5), LayerSpec::dense(3, 7)]);
        assert!(matches!(
            cost_report(&bad, &b8(), &QuantScheme::Float),
            Err(CostError::Validation(_))
        ));
    }

    #[test]
    fn nenb_examples() {
        assert_eq!(nenb(10, 32).unwrap(), 320);
        assert_eq!(nenb(1, 1).unwrap(), 1);
        assert!(nenb(0, 5).is_err());
    }
}
