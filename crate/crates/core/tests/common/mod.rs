//! Seeded random architectures shared by the integration tests.

#![allow(dead_code)]

use nncost::arch::{conv1d_output_size, Activation, LayerKind, LayerSpec, NetworkSpec, Shape};
use rand::Rng;

pub const MAX_DIM: usize = 64;
pub const MAX_STEPS: usize = 16;

fn activation<R: Rng>(rng: &mut R) -> Activation {
    [
        Activation::Linear,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
    ][rng.random_range(0..4)]
}

/// Random layer of type `kind` (0 dense, 1 conv1d, 2 rnn, 3 lstm, 4 gru,
/// 5 esn) consuming `input`, or a fresh input when `None`.
pub fn random_layer<R: Rng>(rng: &mut R, kind: usize, input: Option<Shape>) -> LayerSpec {
    let dim = |rng: &mut R| rng.random_range(1..=MAX_DIM);
    let (n_s, n_i) = match input {
        None => (rng.random_range(1..=MAX_STEPS), dim(rng)),
        Some(Shape::Sequence { steps, features }) => (steps, features),
        Some(Shape::Vector(n)) => (1, n),
    };
    let kind = match kind {
        0 => LayerKind::Dense {
            n_n: dim(rng),
            n_i: input.map_or_else(|| dim(rng), Shape::total),
        },
        1 => loop {
            let n_k = rng.random_range(1..=5);
            let padding = rng.random_range(0..=3);
            let dilation = rng.random_range(1..=3);
            let stride = rng.random_range(1..=3);
            if conv1d_output_size(n_s, n_k, padding, dilation, stride) > 0 {
                break LayerKind::Conv1D {
                    n_f: dim(rng),
                    n_i,
                    n_k,
                    n_s,
                    padding,
                    dilation,
                    stride,
                };
            }
        },
        2 => LayerKind::VanillaRnn {
            n_i,
            n_h: dim(rng),
            n_s,
        },
        3 => LayerKind::Lstm {
            n_i,
            n_h: dim(rng),
            n_s,
        },
        4 => LayerKind::Gru {
            n_i,
            n_h: dim(rng),
            n_s,
        },
        _ => LayerKind::EchoState {
            n_i,
            n_r: dim(rng),
            s_p: rng.random_range(0.01..=1.0),
            n_o: dim(rng),
            n_s,
            leak: rng.random_range(0.05..=1.0),
        },
    };
    LayerSpec::new(kind, activation(rng))
}

/// Chain of 1..=`max_layers` layers; `first` fixes the first layer type.
/// Later layers keep every hyperparameter within `MAX_DIM`.
pub fn random_network<R: Rng>(rng: &mut R, first: usize, max_layers: usize) -> NetworkSpec {
    let depth = rng.random_range(1..=max_layers);
    let mut layers = vec![random_layer(rng, first, None)];
    while layers.len() < depth {
        let out = layers.last().unwrap().output_shape();
        let kind = match out {
            Shape::Sequence { steps, .. } if steps > MAX_STEPS => {
                if out.total() > MAX_DIM {
                    break;
                }
                0
            }
            _ if out.total() <= MAX_DIM => rng.random_range(0..6),
            _ => rng.random_range(1..6),
        };
        layers.push(random_layer(rng, kind, Some(out)));
    }
    NetworkSpec::new(format!("net{first}"), layers)
}
