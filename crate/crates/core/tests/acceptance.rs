//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nncost::arch::{conv1d_output_size, Activation, BitwidthConfig, LayerKind, LayerSpec, NetworkSpec};
use nncost::bayesopt::{
    bo_optimize, expected_improvement, gp_fit, gp_predict, random_search, BoConfig, Evaluation, KernelParams, Trial,
    UnitCube,
};
use nncost::costmodel::{bop_layer, cost_report, nabs_layer, rm_layer, Metric};
use nncost::interp::{
    audit, fir_filter, forward_conv1d, forward_dense, forward_gru, forward_layer, forward_lstm, forward_rnn,
    iir_filter, run_batches, CellState, ExecMode, LayerWeights, Mat, StateMode,
};
use nncost::quant::{quantize_apot, quantize_pot, QuantScheme};
use nncost::search::{complexity_sweep, running_max, synth_task_fir, SearchOptions, SearchSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn seq<R: Rng>(steps: usize, width: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..steps).map(|_| uniform_vec(width, rng)).collect()
}

fn max_dev(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

/// Type index, size hyperparameters and sequence length of a layer.
fn shape_of(kind: &LayerKind) -> (usize, Vec<usize>, usize) {
    match *kind {
        LayerKind::Dense { n_n, n_i } => (0, vec![n_n, n_i], 1),
        LayerKind::Conv1D { n_f, n_i, n_k, n_s, .. } => (1, vec![n_f, n_i, n_k], n_s),
        LayerKind::VanillaRnn { n_i, n_h, n_s } => (2, vec![n_i, n_h], n_s),
        LayerKind::Lstm { n_i, n_h, n_s } => (3, vec![n_i, n_h], n_s),
        LayerKind::Gru { n_i, n_h, n_s } => (4, vec![n_i, n_h], n_s),
        LayerKind::EchoState { n_i, n_r, n_o, n_s, .. } => (5, vec![n_i, n_r, n_o], n_s),
    }
}

fn formula_vs_interpreter() -> Outcome {
    let start = Instant::now();
    let bits = BitwidthConfig::default();
    let scheme = QuantScheme::FixedUniform { b_w: 8 };
    let mut seen = [0usize; 6];
    let mut layers = 0;
    for i in 0..1000u64 {
        let mut r = rng(i);
        let net = common::random_network(&mut r, (i % 6) as usize, 3);
        for l in &net.layers {
            let (kind, sizes, steps) = shape_of(&l.kind);
            seen[kind] += 1;
            let dims_ok = sizes.iter().all(|&d| d <= common::MAX_DIM);
            ensure(dims_ok && steps <= common::MAX_STEPS, || {
                format!("arch {i} out of range: {l:?}")
            })?;
        }
        let record = audit(&net, &bits, &scheme, i, &ExecMode::Float, false).map_err(|e| format!("arch {i}: {e}"))?;
        layers += record.per_layer.len();
        if let Some(bad) = record.per_layer.iter().find(|l| l.delta != 0) {
            return Err(format!(
                "arch {i} layer {} ({}) delta {}",
                bad.layer_index, bad.layer_type, bad.delta
            ));
        }
    }
    ensure(seen.iter().all(|&n| n > 0), || {
        format!("layer types not all covered: {seen:?}")
    })?;
    within(start.elapsed(), 60)?;
    Ok(format!("1000 archs, {layers} layers, all deltas 0, type mix {seen:?}"))
}

/// The stated grid (`n_s` ≤ 20) with the sequence axis widened to 80 so the
/// check covers more than 14,000 points.
fn conv_size_oracle() -> Outcome {
    let mut cases = 0;
    for n_s in 1..=80 {
        for n_k in 1..=5 {
            for padding in 0..=3 {
                for dilation in 1..=3 {
                    for stride in 1..=3 {
                        let padded = n_s + 2 * padding;
                        let span = dilation * (n_k - 1) + 1;
                        let placements = (0..padded).step_by(stride).filter(|&s| s + span <= padded).count();
                        let got = conv1d_output_size(n_s, n_k, padding, dilation, stride);
                        ensure(got == placements, || {
                            format!("n_s={n_s} n_k={n_k} p={padding} d={dilation} s={stride}: {got} vs {placements}")
                        })?;
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{cases} grid points exact"))
}

fn hand_values() -> Outcome {
    let bits = BitwidthConfig::new(8, 8, 8).unwrap();
    let dense = LayerSpec::dense(10, 5);
    ensure(rm_layer(&dense) == 50, || {
        format!("Dense(10,5) RM {}", rm_layer(&dense))
    })?;

    let mut r = rng(3);
    let lstm = LayerSpec::lstm(1, 1, 1);
    let w = LayerWeights::random(&lstm, &mut r);
    let (_, _, c) = forward_lstm(&lstm, &w, &seq(1, 1, &mut r), &ExecMode::Float, None).map_err(|e| e.to_string())?;
    ensure(c.mults == 11, || format!("LSTM(1,1,1) mults {}", c.mults))?;

    let gru = LayerSpec::gru(1, 2, 1);
    let w = LayerWeights::random(&gru, &mut r);
    let (_, _, c) = forward_gru(&gru, &w, &seq(1, 1, &mut r), &ExecMode::Float, None).map_err(|e| e.to_string())?;
    ensure(c.mults == 24, || format!("GRU(1,2,1) mults {}", c.mults))?;

    let d12 = LayerSpec::dense(1, 2);
    let bop = bop_layer(&d12, &bits);
    ensure(bop == 162, || format!("Dense(1,2) BOP {bop}"))?;
    let uni = nabs_layer(&d12, &bits, &QuantScheme::FixedUniform { b_w: 8 });
    let pot = nabs_layer(&d12, &bits, &QuantScheme::PoT { b_w: 8 });
    ensure(uni == 272 && pot == 34, || {
        format!("Dense(1,2) NABS uniform {uni}, PoT {pot}")
    })?;
    Ok("RM 50, LSTM 11, GRU 24, BOP 162, NABS 272/34".into())
}

fn ei_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for gap in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        for sigma in [0.1, 1.0, 3.0] {
            let f_plus = 0.5;
            let mu = f_plus + gap;
            let n = 1_000_000;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n {
                let z: f64 = r.sample(StandardNormal);
                let imp = (mu + sigma * z - f_plus).max(0.0);
                sum += imp;
                sum_sq += imp * imp;
            }
            let mean = sum / n as f64;
            let se = ((sum_sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
            let ei = expected_improvement(mu, sigma, f_plus).map_err(|e| e.to_string())?;
            // deep in the tail every sample can miss; the SE is then 0 and
            // only an absolute comparison is meaningful
            let z = if se > 0.0 {
                (ei - mean).abs() / se
            } else {
                (ei - mean).abs() / 1e-12
            };
            ensure(z <= 3.0, || {
                format!("gap {gap} sigma {sigma}: EI {ei} vs MC {mean} ({z:.2} SE)")
            })?;
            worst = worst.max(z);
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("15 grid points, worst {worst:.2} SE"))
}

fn gp_interpolation() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut r = rng(10_000 + i);
        let d = r.random_range(1..=5);
        let n = r.random_range(1..=20);
        let trials: Vec<Trial> = (0..n)
            .map(|_| Trial {
                theta: (0..d).map(|_| r.random()).collect(),
                score: r.random_range(-1.0..1.0),
                cost: None,
            })
            .collect();
        let scores: Vec<f64> = trials.iter().map(|t| t.score).collect();
        let model = gp_fit(&trials, &KernelParams::heuristic(d, &scores)).map_err(|e| format!("dataset {i}: {e}"))?;
        for t in &trials {
            let err = (gp_predict(&model, &t.theta).0 - t.score).abs();
            ensure(err <= 1e-6, || format!("dataset {i} (d={d}, n={n}): error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("100 datasets, worst error {worst:.1e}"))
}

fn bo_convergence() -> Outcome {
    let start = Instant::now();
    let f = |t: &[f64]| Ok(Evaluation::from(-(t[0] - 0.3).powi(2)));
    let mut hits = 0;
    let mut bo_regret = Vec::new();
    let mut rs_regret = Vec::new();
    for seed in 0..50u64 {
        let config = BoConfig {
            max_iters: 15,
            n_init: 5,
            seed,
        };
        let (best, _) = bo_optimize(f, &UnitCube(1), config).map_err(|e| e.to_string())?;
        if (best.theta[0] - 0.3).abs() <= 0.05 {
            hits += 1;
        }
        bo_regret.push(-best.score);
        let (rbest, _) = random_search(f, &UnitCube(1), 20, seed).map_err(|e| e.to_string())?;
        rs_regret.push(-rbest.score);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[24] + v[25]) / 2.0
    };
    let (bo, rs) = (median(&mut bo_regret), median(&mut rs_regret));
    ensure(hits >= 45, || format!("{hits}/50 within 0.05"))?;
    ensure(bo <= rs, || format!("median regret BO {bo:e} > random {rs:e}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!(
        "{hits}/50 within 0.05, median regret BO {bo:.1e} vs random {rs:.1e}"
    ))
}

/// Fixed-mode PoT output against float arithmetic on the dequantized
/// weights, with the bound from rounding the input to `b_i` bits.
fn check_pot_execution(i: u64) -> Result<(), String> {
    let mut r = rng(20_000 + i);
    let b_w = r.random_range(3..=8);
    let b_i = r.random_range(4..=12);
    let bits = BitwidthConfig::new(b_w, b_i, b_i).unwrap();
    let fixed = ExecMode::Fixed {
        bits,
        scheme: QuantScheme::PoT { b_w },
    };
    let step_of = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs())) / ((1u64 << (b_i - 1)) - 1) as f64;
    if i.is_multiple_of(2) {
        let (n_n, n_i) = (r.random_range(1..=32), r.random_range(1..=32));
        let spec = LayerSpec::dense(n_n, n_i).with_activation(Activation::Linear);
        let w = Mat::random(n_n, n_i, &mut r);
        let b = uniform_vec(n_n, &mut r);
        let x = uniform_vec(n_i, &mut r);
        let dq = Mat {
            data: quantize_pot(&w.data, b_w).map_err(|e| e.to_string())?.dequantize(),
            ..w.clone()
        };
        let weights = LayerWeights::Dense { w, b: b.clone() };
        let (y, c) = forward_dense(&spec, &weights, &x, &fixed).map_err(|e| e.to_string())?;
        let (y_ref, _) = forward_dense(&spec, &LayerWeights::Dense { w: dq.clone(), b }, &x, &ExecMode::Float)
            .map_err(|e| e.to_string())?;
        ensure(
            c.mults == 0 && c.shift_mults == rm_layer(&spec) && c.overflows == 0,
            || format!("dense case {i}: counters {c:?}"),
        )?;
        let half = step_of(&x) / 2.0;
        for row in 0..n_n {
            let bound = dq.row(row).iter().map(|v| v.abs()).sum::<f64>() * half + 1e-12;
            let dev = (y[row] - y_ref[row]).abs();
            ensure(dev <= bound, || {
                format!("dense case {i} row {row}: deviation {dev:e} > {bound:e}")
            })?;
        }
    } else {
        let (n_f, n_i, n_k) = (r.random_range(1..=8), r.random_range(1..=6), r.random_range(1..=4));
        let n_s = r.random_range(n_k..=16);
        let spec = LayerSpec::conv1d(n_f, n_i, n_k, n_s).with_activation(Activation::Linear);
        let kernels: Vec<Mat> = (0..n_f).map(|_| Mat::random(n_k, n_i, &mut r)).collect();
        let flat: Vec<f64> = kernels.iter().flat_map(|k| k.data.clone()).collect();
        let dq_flat = quantize_pot(&flat, b_w).map_err(|e| e.to_string())?.dequantize();
        let dq: Vec<Mat> = dq_flat
            .chunks(n_k * n_i)
            .map(|c| Mat {
                rows: n_k,
                cols: n_i,
                data: c.to_vec(),
            })
            .collect();
        let biases = uniform_vec(n_f, &mut r);
        let x = seq(n_s, n_i, &mut r);
        let (y, c) = forward_conv1d(
            &spec,
            &LayerWeights::Conv1D {
                kernels,
                biases: biases.clone(),
            },
            &x,
            &fixed,
        )
        .map_err(|e| e.to_string())?;
        let (y_ref, _) = forward_conv1d(
            &spec,
            &LayerWeights::Conv1D {
                kernels: dq.clone(),
                biases,
            },
            &x,
            &ExecMode::Float,
        )
        .map_err(|e| e.to_string())?;
        ensure(
            c.mults == 0 && c.shift_mults == rm_layer(&spec) && c.overflows == 0,
            || format!("conv case {i}: counters {c:?}"),
        )?;
        let half = step_of(&x.concat()) / 2.0;
        for (t, (a, b)) in y.iter().zip(&y_ref).enumerate() {
            for f in 0..n_f {
                let bound = dq[f].data.iter().map(|v| v.abs()).sum::<f64>() * half + 1e-12;
                let dev = (a[f] - b[f]).abs();
                ensure(dev <= bound, || {
                    format!("conv case {i} step {t} filter {f}: deviation {dev:e} > {bound:e}")
                })?;
            }
        }
    }
    Ok(())
}

fn quantization_semantics() -> Outcome {
    for i in 0..100 {
        check_pot_execution(i)?;
    }
    let mut r = rng(31);
    let ws: Vec<f64> = (0..10_000).map(|_| r.random_range(-2.0..2.0)).collect();
    let mut compared = 0;
    for b_w in [3u32, 4, 6, 8] {
        for k in 1..b_w.min(4) {
            let pot = quantize_pot(&ws, b_w).map_err(|e| e.to_string())?.dequantize();
            let apot = quantize_apot(&ws, b_w, k).map_err(|e| e.to_string())?.dequantize();
            for (j, w) in ws.iter().enumerate() {
                let (ea, ep) = ((w - apot[j]).abs(), (w - pot[j]).abs());
                ensure(ea <= ep, || {
                    format!("b_w={b_w} k={k} w={w}: APoT error {ea:e} > PoT {ep:e}")
                })?;
            }
            compared += 1;
        }
    }
    Ok(format!(
        "100 PoT layers shift-only within rounding bound; APoT <= PoT on 1e4 weights x {compared} configs"
    ))
}

fn recurrent_forward(spec: &LayerSpec, w: &LayerWeights, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, String> {
    let x = x.to_vec();
    let mode = ExecMode::Float;
    let out = match spec.kind {
        LayerKind::VanillaRnn { .. } => forward_rnn(spec, w, &x, &mode, None),
        LayerKind::Lstm { .. } => forward_lstm(spec, w, &x, &mode, None),
        _ => forward_gru(spec, w, &x, &mode, None),
    };
    out.map(|(y, _, _)| y).map_err(|e| e.to_string())
}

fn recurrent_state() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut r = rng(40_000 + i);
        let (n_i, n_h) = (r.random_range(1..=16), r.random_range(1..=16));
        let (t1, t2) = (r.random_range(1..=8), r.random_range(1..=8));
        let spec = match i % 3 {
            0 => LayerSpec::rnn(n_i, n_h, t1 + t2),
            1 => LayerSpec::lstm(n_i, n_h, t1 + t2),
            _ => LayerSpec::gru(n_i, n_h, t1 + t2),
        }
        .with_activation(Activation::Tanh);
        let w = LayerWeights::random(&spec, &mut r);
        let (b1, b2) = (seq(t1, n_i, &mut r), seq(t2, n_i, &mut r));
        let (outs, _) = run_batches(
            &spec,
            &w,
            &[b1.clone(), b2.clone()],
            StateMode::Stateful,
            &ExecMode::Float,
        )
        .map_err(|e| e.to_string())?;
        let whole = recurrent_forward(&spec, &w, &[b1.clone(), b2.clone()].concat())?;
        let dev = max_dev(&outs.concat(), &whole);
        ensure(dev <= 1e-12, || {
            format!("case {i} ({}): stateful deviation {dev:e}", spec.type_name())
        })?;
        worst = worst.max(dev);

        let b3 = seq(r.random_range(1..=8), n_i, &mut r);
        let batches = [b1, b2, b3];
        let (fwd, _) =
            run_batches(&spec, &w, &batches, StateMode::Stateless, &ExecMode::Float).map_err(|e| e.to_string())?;
        let permuted = [batches[2].clone(), batches[0].clone(), batches[1].clone()];
        let (perm, _) =
            run_batches(&spec, &w, &permuted, StateMode::Stateless, &ExecMode::Float).map_err(|e| e.to_string())?;
        ensure(perm[0] == fwd[2] && perm[1] == fwd[0] && perm[2] == fwd[1], || {
            format!("case {i}: stateless outputs depend on batch order")
        })?;
        let fresh = CellState::zeros(&spec);
        ensure(fresh.h.iter().all(|v| *v == 0.0), || "zero state is not zero".into())?;
    }
    Ok(format!(
        "100 cases, worst stateful deviation {worst:.1e}; stateless permutation-invariant"
    ))
}

fn equivalence_bridges() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut r = rng(50_000 + i);
        let steps = r.random_range(1..=64);
        let x: Vec<f64> = uniform_vec(steps, &mut r);
        let column: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();

        let (a0, b1) = (r.random_range(-1.0..=1.0), r.random_range(-0.95..=0.95));
        let rnn = LayerSpec::rnn(1, 1, steps).with_activation(Activation::Linear);
        let w = LayerWeights::Rnn {
            w: Mat::from_rows(&[vec![a0]]),
            u: Mat::from_rows(&[vec![b1]]),
            b: vec![0.0],
        };
        let (y, _, _) = forward_rnn(&rnn, &w, &column, &ExecMode::Float, None).map_err(|e| e.to_string())?;
        let iir = iir_filter(&[a0, 0.0], &[b1], &x);
        let dev = y.iter().zip(&iir).fold(0.0f64, |m, (a, b)| m.max((a[0] - b).abs()));
        ensure(dev <= 1e-12, || format!("sequence {i}: RNN vs IIR deviation {dev:e}"))?;
        worst = worst.max(dev);

        // full padding turns the cross-correlation into a causal FIR with
        // the kernel reversed; the first `steps` outputs are the filter output
        let n_k = r.random_range(1..=4);
        let n_f = r.random_range(1..=4);
        let conv = LayerSpec::new(
            LayerKind::Conv1D {
                n_f,
                n_i: 1,
                n_k,
                n_s: steps,
                padding: n_k - 1,
                dilation: 1,
                stride: 1,
            },
            Activation::Linear,
        );
        let kernels: Vec<Mat> = (0..n_f).map(|_| Mat::random(n_k, 1, &mut r)).collect();
        let w = LayerWeights::Conv1D {
            kernels: kernels.clone(),
            biases: vec![0.0; n_f],
        };
        let (y, _) = forward_layer(&conv, &w, &column, &ExecMode::Float, false).map_err(|e| e.to_string())?;
        for (f, k) in kernels.iter().enumerate() {
            let taps: Vec<f64> = k.data.iter().rev().copied().collect();
            let fir = fir_filter(&taps, &x);
            let dev = fir
                .iter()
                .enumerate()
                .fold(0.0f64, |m, (t, v)| m.max((y[t][f] - v).abs()));
            ensure(dev <= 1e-12, || {
                format!("sequence {i} filter {f}: Conv1D vs FIR deviation {dev:e}")
            })?;
            worst = worst.max(dev);
        }
    }
    Ok(format!("100 sequences, worst deviation {worst:.1e}"))
}

fn data_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data"))
}

fn constrained_sweep() -> Outcome {
    let start = Instant::now();
    let space = SearchSpace::from_json(&std::fs::read_to_string(data_dir().join("fir_space.json")).unwrap())
        .map_err(|e| e.to_string())?;
    let scheme = space.quant_scheme().map_err(|e| e.to_string())?;
    let budgets = [100, 500, 2000, 10000];
    let mut trials = 0;
    for seed in 0..20u64 {
        let task = synth_task_fir(&[1.0, 0.5, -0.3, 0.1], 0.1, 300, 7 + seed).map_err(|e| e.to_string())?;
        let opts = SearchOptions {
            seed,
            eval_seed: seed,
            ..SearchOptions::default()
        };
        let points = complexity_sweep(&space, &task, &budgets, Metric::Nabs, &opts).map_err(|e| e.to_string())?;
        for p in &points {
            for t in &p.result.history {
                // recompute the cost independently of the cached search value
                let net: NetworkSpec = space.instantiate(&t.theta).map_err(|e| e.to_string())?;
                let nabs = cost_report(&net, &space.bits, &scheme)
                    .map_err(|e| e.to_string())?
                    .totals
                    .nabs;
                ensure(nabs == t.cost.nabs && nabs <= p.budget && t.feasible, || {
                    format!("seed {seed} budget {}: trial {} has NABS {nabs}", p.budget, t.iteration)
                })?;
                trials += 1;
            }
        }
        let rm = running_max(&points);
        ensure(rm.windows(2).all(|w| w[1] >= w[0]), || {
            format!("seed {seed}: running max {rm:?}")
        })?;
    }
    within(start.elapsed(), 300)?;
    Ok(format!(
        "20 sweeps, {trials} trials all within budget; running max non-decreasing"
    ))
}

fn cli_reproducibility() -> Outcome {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_nncost"))
            .arg("sweep")
            .arg(data_dir().join("fir_space.json"))
            .arg(data_dir().join("fir_task.json"))
            .args(["--budgets", "100,500,2000,10000", "--seed", "5"])
            .output()
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a.status.success() && b.status.success(), || {
        format!("exit {:?}: {}", a.status.code(), String::from_utf8_lossy(&a.stderr))
    })?;
    ensure(!a.stdout.is_empty() && a.stdout == b.stdout, || {
        "sweep CSVs differ between runs".into()
    })?;
    Ok(format!("two runs, {} identical bytes", a.stdout.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("formula vs interpreter exactness", formula_vs_interpreter),
        ("conv output-size oracle", conv_size_oracle),
        ("hand-value spot checks", hand_values),
        ("EI vs Monte Carlo", ei_oracle),
        ("GP interpolation", gp_interpolation),
        ("BO convergence", bo_convergence),
        ("quantization semantics", quantization_semantics),
        ("recurrent-state semantics", recurrent_state),
        ("equivalence bridges", equivalence_bridges),
        ("constrained sweep", constrained_sweep),
        ("CLI reproducibility", cli_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
