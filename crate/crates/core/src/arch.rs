//! Architecture and bitwidth data model.
//!
//! A [`NetworkSpec`] is a linear chain of [`LayerSpec`]s. Documents are JSON
//! objects of the form `{"name": ..., "layers": [...]}`; each layer object
//! carries a `"type"` tag, an optional `"activation"`, and the hyperparameters
//! of its type under their exact field names (`n_n`, `n_i`, `n_f`, `n_k`,
//! `n_s`, `padding`, `dilation`, `stride`, `n_h`, `N_r`, `s_p`, `n_o`, `leak`).

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl ArchError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ArchError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "linear" => Some(Activation::Linear),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperparameters of one layer, by type.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense {
        n_n: usize,
        n_i: usize,
    },
    Conv1D {
        n_f: usize,
        n_i: usize,
        n_k: usize,
        n_s: usize,
        padding: usize,
        dilation: usize,
        stride: usize,
    },
    VanillaRnn {
        n_i: usize,
        n_h: usize,
        n_s: usize,
    },
    Lstm {
        n_i: usize,
        n_h: usize,
        n_s: usize,
    },
    Gru {
        n_i: usize,
        n_h: usize,
        n_s: usize,
    },
    EchoState {
        n_i: usize,
        n_r: usize,
        s_p: f64,
        n_o: usize,
        n_s: usize,
        leak: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// Shape of the signal flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Sequence { steps: usize, features: usize },
}

impl Shape {
    pub fn total(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Sequence { steps, features } => steps * features,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "vector({n})"),
            Shape::Sequence { steps, features } => write!(f, "sequence({steps}x{features})"),
        }
    }
}

impl LayerSpec {
    pub fn new(kind: LayerKind, activation: Activation) -> Self {
        LayerSpec { kind, activation }
    }

    pub fn dense(n_n: usize, n_i: usize) -> Self {
        Self::new(LayerKind::Dense { n_n, n_i }, Activation::Linear)
    }

    pub fn conv1d(n_f: usize, n_i: usize, n_k: usize, n_s: usize) -> Self {
        Self::new(
            LayerKind::Conv1D {
                n_f,
                n_i,
                n_k,
                n_s,
                padding: 0,
                dilation: 1,
                stride: 1,
            },
            Activation::Linear,
        )
    }

    pub fn rnn(n_i: usize, n_h: usize, n_s: usize) -> Self {
        Self::new(LayerKind::VanillaRnn { n_i, n_h, n_s }, Activation::Tanh)
    }

    pub fn lstm(n_i: usize, n_h: usize, n_s: usize) -> Self {
        Self::new(LayerKind::Lstm { n_i, n_h, n_s }, Activation::Tanh)
    }

    pub fn gru(n_i: usize, n_h: usize, n_s: usize) -> Self {
        Self::new(LayerKind::Gru { n_i, n_h, n_s }, Activation::Tanh)
    }

    pub fn esn(n_i: usize, n_r: usize, s_p: f64, n_o: usize, n_s: usize, leak: f64) -> Self {
        Self::new(
            LayerKind::EchoState {
                n_i,
                n_r,
                s_p,
                n_o,
                n_s,
                leak,
            },
            Activation::Tanh,
        )
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn type_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv1D { .. } => "conv1d",
            LayerKind::VanillaRnn { .. } => "rnn",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::Gru { .. } => "gru",
            LayerKind::EchoState { .. } => "esn",
        }
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::VanillaRnn { .. } | LayerKind::Lstm { .. } | LayerKind::Gru { .. } | LayerKind::EchoState { .. }
        )
    }

    /// Shape this layer consumes.
    pub fn input_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Dense { n_i, .. } => Shape::Vector(n_i),
            LayerKind::Conv1D { n_i, n_s, .. }
            | LayerKind::VanillaRnn { n_i, n_s, .. }
            | LayerKind::Lstm { n_i, n_s, .. }
            | LayerKind::Gru { n_i, n_s, .. }
            | LayerKind::EchoState { n_i, n_s, .. } => Shape::Sequence {
                steps: n_s,
                features: n_i,
            },
        }
    }

    /// Shape this layer produces. A Conv1D with zero valid placements yields
    /// an empty sequence.
    pub fn output_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Dense { n_n, .. } => Shape::Vector(n_n),
            LayerKind::Conv1D {
                n_f,
                n_k,
                n_s,
                padding,
                dilation,
                stride,
                ..
            } => Shape::Sequence {
                steps: conv1d_output_size(n_s, n_k, padding, dilation, stride),
                features: n_f,
            },
            LayerKind::VanillaRnn { n_h, n_s, .. }
            | LayerKind::Lstm { n_h, n_s, .. }
            | LayerKind::Gru { n_h, n_s, .. } => Shape::Sequence {
                steps: n_s,
                features: n_h,
            },
            LayerKind::EchoState { n_o, n_s, .. } => Shape::Sequence {
                steps: n_s,
                features: n_o,
            },
        }
    }

    /// Whether a signal of shape `incoming` can feed this layer.
    pub fn accepts(&self, incoming: Shape) -> bool {
        match self.input_shape() {
            Shape::Vector(n_i) => incoming.total() == n_i,
            expected @ Shape::Sequence { .. } => match incoming {
                Shape::Vector(len) => len == expected.total(),
                seq => seq == expected,
            },
        }
    }
}

/// Nonzeros per reservoir row: `N_r · s_p` rounded to nearest, at least 1.
pub fn esn_row_nonzeros(n_r: usize, s_p: f64) -> usize {
    ((n_r as f64 * s_p).round() as usize).clamp(1, n_r.max(1))
}

/// Number of valid kernel placements of a dilated, strided 1-D convolution
/// over a zero-padded input. Zero signals an unusable configuration.
pub fn conv1d_output_size(n_s: usize, n_k: usize, padding: usize, dilation: usize, stride: usize) -> usize {
    if n_k == 0 || dilation == 0 || stride == 0 {
        return 0;
    }
    let padded = (n_s + 2 * padding) as i64;
    let span = (dilation * (n_k - 1)) as i64 + 1;
    if span > padded {
        return 0;
    }
    ((padded - span) / stride as i64 + 1) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            name: name.into(),
            layers,
        }
    }

    pub fn to_value(&self) -> Value {
        let layers: Vec<Value> = self.layers.iter().map(layer_to_value).collect();
        let mut top = Map::new();
        top.insert("name".into(), Value::String(self.name.clone()));
        top.insert("layers".into(), Value::Array(layers));
        Value::Object(top)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("network spec serializes")
    }
}

fn layer_to_value(layer: &LayerSpec) -> Value {
    let mut m = Map::new();
    m.insert("type".into(), Value::from(layer.type_name()));
    m.insert("activation".into(), Value::from(layer.activation.name()));
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    match layer.kind {
        LayerKind::Dense { n_n, n_i } => {
            put("n_n", n_n.into());
            put("n_i", n_i.into());
        }
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            padding,
            dilation,
            stride,
        } => {
            put("n_f", n_f.into());
            put("n_i", n_i.into());
            put("n_k", n_k.into());
            put("n_s", n_s.into());
            put("padding", padding.into());
            put("dilation", dilation.into());
            put("stride", stride.into());
        }
        LayerKind::VanillaRnn { n_i, n_h, n_s }
        | LayerKind::Lstm { n_i, n_h, n_s }
        | LayerKind::Gru { n_i, n_h, n_s } => {
            put("n_i", n_i.into());
            put("n_h", n_h.into());
            put("n_s", n_s.into());
        }
        LayerKind::EchoState {
            n_i,
            n_r,
            s_p,
            n_o,
            n_s,
            leak,
        } => {
            put("n_i", n_i.into());
            put("N_r", n_r.into());
            put("s_p", s_p.into());
            put("n_o", n_o.into());
            put("n_s", n_s.into());
            put("leak", leak.into());
        }
    }
    Value::Object(m)
}

/// Parse a spec document. Per-field invariants are enforced here; width
/// chaining is left to [`validate_network`].
pub fn parse_spec(text: &str) -> Result<NetworkSpec, ArchError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ArchError::Syntax(e.to_string()))?;
    network_from_value(&doc)
}

pub fn network_from_value(doc: &Value) -> Result<NetworkSpec, ArchError> {
    let top = doc
        .as_object()
        .ok_or_else(|| ArchError::schema("$", "expected an object"))?;
    for key in top.keys() {
        if key != "name" && key != "layers" {
            return Err(ArchError::schema(format!("$.{key}"), "unknown field"));
        }
    }
    let name = match top.get("name") {
        None => "network".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ArchError::schema("$.name", "expected a string")),
    };
    let layers = top
        .get("layers")
        .ok_or_else(|| ArchError::schema("$.layers", "missing field"))?
        .as_array()
        .ok_or_else(|| ArchError::schema("$.layers", "expected an array"))?;
    let layers = layers
        .iter()
        .enumerate()
        .map(|(i, v)| parse_layer(v, &format!("$.layers[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NetworkSpec { name, layers })
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    path: &'a str,
    seen: Vec<&'static str>,
}

impl<'a> Fields<'a> {
    fn count(&mut self, key: &'static str) -> Result<usize, ArchError> {
        let v = self.require(key)?;
        let n = v
            .as_u64()
            .ok_or_else(|| ArchError::schema(self.at(key), "expected a non-negative integer"))?;
        if n < 1 {
            return Err(ArchError::schema(self.at(key), "must be >= 1"));
        }
        Ok(n as usize)
    }

    fn optional_int(&mut self, key: &'static str, default: usize, min: usize) -> Result<usize, ArchError> {
        self.seen.push(key);
        match self.obj.get(key) {
            None => Ok(default),
            Some(v) => {
                let n = v
                    .as_u64()
                    .ok_or_else(|| ArchError::schema(self.at(key), "expected a non-negative integer"))?
                    as usize;
                if n < min {
                    return Err(ArchError::schema(self.at(key), format!("must be >= {min}")));
                }
                Ok(n)
            }
        }
    }

    fn unit_fraction(&mut self, key: &'static str) -> Result<f64, ArchError> {
        let v = self.require(key)?;
        let x = v
            .as_f64()
            .ok_or_else(|| ArchError::schema(self.at(key), "expected a number"))?;
        if !(x > 0.0 && x <= 1.0) {
            return Err(ArchError::schema(self.at(key), "must lie in (0, 1]"));
        }
        Ok(x)
    }

    fn require(&mut self, key: &'static str) -> Result<&'a Value, ArchError> {
        self.seen.push(key);
        self.obj
            .get(key)
            .ok_or_else(|| ArchError::schema(self.at(key), "missing field"))
    }

    fn at(&self, key: &str) -> String {
        format!("{}.{}", self.path, key)
    }

    fn reject_unknown(&self) -> Result<(), ArchError> {
        for key in self.obj.keys() {
            let k = key.as_str();
            if k != "type" && k != "activation" && !self.seen.contains(&k) {
                return Err(ArchError::schema(self.at(k), "unknown field"));
            }
        }
        Ok(())
    }
}

fn parse_layer(v: &Value, path: &str) -> Result<LayerSpec, ArchError> {
    let obj = v
        .as_object()
        .ok_or_else(|| ArchError::schema(path, "expected an object"))?;
    let ty = match obj.get("type") {
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(ArchError::schema(format!("{path}.type"), "expected a string")),
        None => return Err(ArchError::schema(format!("{path}.type"), "missing field")),
    };
    let activation = match obj.get("activation") {
        None => Activation::Linear,
        Some(Value::String(s)) => Activation::from_name(s).ok_or_else(|| {
            ArchError::schema(
                format!("{path}.activation"),
                format!("unsupported activation {s:?} (linear, relu, tanh, sigmoid)"),
            )
        })?,
        Some(_) => return Err(ArchError::schema(format!("{path}.activation"), "expected a string")),
    };
    let mut f = Fields {
        obj,
        path,
        seen: Vec::new(),
    };
    let kind = match ty {
        "dense" => LayerKind::Dense {
            n_n: f.count("n_n")?,
            n_i: f.count("n_i")?,
        },
        "conv1d" => LayerKind::Conv1D {
            n_f: f.count("n_f")?,
            n_i: f.count("n_i")?,
            n_k: f.count("n_k")?,
            n_s: f.count("n_s")?,
            padding: f.optional_int("padding", 0, 0)?,
            dilation: f.optional_int("dilation", 1, 1)?,
            stride: f.optional_int("stride", 1, 1)?,
        },
        "rnn" | "lstm" | "gru" => {
            let (n_i, n_h, n_s) = (f.count("n_i")?, f.count("n_h")?, f.count("n_s")?);
            match ty {
                "rnn" => LayerKind::VanillaRnn { n_i, n_h, n_s },
                "lstm" => LayerKind::Lstm { n_i, n_h, n_s },
                _ => LayerKind::Gru { n_i, n_h, n_s },
            }
        }
        "esn" => LayerKind::EchoState {
            n_i: f.count("n_i")?,
            n_r: f.count("N_r")?,
            s_p: f.unit_fraction("s_p")?,
            n_o: f.count("n_o")?,
            n_s: f.count("n_s")?,
            leak: f.unit_fraction("leak")?,
        },
        other => {
            return Err(ArchError::schema(
                format!("{path}.type"),
                format!("unknown layer type {other:?}"),
            ))
        }
    };
    f.reject_unknown()?;
    Ok(LayerSpec { kind, activation })
}

/// Rule broken by a layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    EmptyNetwork,
    ZeroCount { field: &'static str },
    OutOfRange { field: &'static str, value: f64 },
    ZeroOutputWidth,
    WidthMismatch { expected: String, found: String },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::EmptyNetwork => write!(f, "network has no layers"),
            Rule::ZeroCount { field } => write!(f, "{field} must be >= 1"),
            Rule::OutOfRange { field, value } => write!(f, "{field} = {value} must lie in (0, 1]"),
            Rule::ZeroOutputWidth => write!(f, "convolution has zero valid kernel placements"),
            Rule::WidthMismatch { expected, found } => {
                write!(f, "input expects {expected} but previous layer produces {found}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub layer: usize,
    #[serde(flatten)]
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {}", self.layer, self.rule)
    }
}

fn layer_violations(index: usize, layer: &LayerSpec, out: &mut Vec<Violation>) {
    let mut zero = |field: &'static str, v: usize| {
        if v == 0 {
            out.push(Violation {
                layer: index,
                rule: Rule::ZeroCount { field },
            });
        }
    };
    match layer.kind {
        LayerKind::Dense { n_n, n_i } => {
            zero("n_n", n_n);
            zero("n_i", n_i);
        }
        LayerKind::Conv1D {
            n_f,
            n_i,
            n_k,
            n_s,
            dilation,
            stride,
            ..
        } => {
            zero("n_f", n_f);
            zero("n_i", n_i);
            zero("n_k", n_k);
            zero("n_s", n_s);
            zero("dilation", dilation);
            zero("stride", stride);
        }
        LayerKind::VanillaRnn { n_i, n_h, n_s }
        | LayerKind::Lstm { n_i, n_h, n_s }
        | LayerKind::Gru { n_i, n_h, n_s } => {
            zero("n_i", n_i);
            zero("n_h", n_h);
            zero("n_s", n_s);
        }
        LayerKind::EchoState {
            n_i,
            n_r,
            s_p,
            n_o,
            n_s,
            leak,
        } => {
            zero("n_i", n_i);
            zero("N_r", n_r);
            zero("n_o", n_o);
            zero("n_s", n_s);
            for (field, value) in [("s_p", s_p), ("leak", leak)] {
                if !(value > 0.0 && value <= 1.0) {
                    out.push(Violation {
                        layer: index,
                        rule: Rule::OutOfRange { field, value },
                    });
                }
            }
        }
    }
    if let LayerKind::Conv1D { .. } = layer.kind {
        let degenerate = out.iter().any(|v| v.layer == index);
        if !degenerate && layer.output_shape().total() == 0 {
            out.push(Violation {
                layer: index,
                rule: Rule::ZeroOutputWidth,
            });
        }
    }
}

/// All invariant and width-chaining violations of `net`; empty iff valid.
pub fn validate_network(net: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if net.layers.is_empty() {
        out.push(Violation {
            layer: 0,
            rule: Rule::EmptyNetwork,
        });
        return out;
    }
    for (i, layer) in net.layers.iter().enumerate() {
        layer_violations(i, layer, &mut out);
    }
    for (i, pair) in net.layers.windows(2).enumerate() {
        let produced = pair[0].output_shape();
        if !pair[1].accepts(produced) {
            out.push(Violation {
                layer: i + 1,
                rule: Rule::WidthMismatch {
                    expected: pair[1].input_shape().to_string(),
                    found: produced.to_string(),
                },
            });
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("bitwidth {field} = {value} outside [1, 64]")]
pub struct BitwidthError {
    pub field: &'static str,
    pub value: u32,
}

/// Fixed-point widths of weights, inputs and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitwidthConfig {
    pub b_w: u32,
    pub b_i: u32,
    pub b_a: u32,
}

impl BitwidthConfig {
    pub fn new(b_w: u32, b_i: u32, b_a: u32) -> Result<Self, BitwidthError> {
        for (field, value) in [("b_w", b_w), ("b_i", b_i), ("b_a", b_a)] {
            if !(1..=64).contains(&value) {
                return Err(BitwidthError { field, value });
            }
        }
        Ok(BitwidthConfig { b_w, b_i, b_a })
    }

    pub fn uniform(bits: u32) -> Result<Self, BitwidthError> {
        Self::new(bits, bits, bits)
    }
}

impl Default for BitwidthConfig {
    fn default() -> Self {
        BitwidthConfig { b_w: 8, b_i: 8, b_a: 8 }
    }
}
