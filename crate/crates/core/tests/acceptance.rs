//! Acceptance criteria, one line per criterion:
//! `ACCEPTANCE <name>: PASS|FAIL (<details>)`.
//! Runs as a plain binary so the lines are always printed.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use fxhls::bench::fixtures::{blob_bdt, blob_fcnn, random_bdt, random_fcnn};
use fxhls::bench::{make_synthetic, metric_auc, MARGIN_GUARD};
use fxhls::dataset::Dataset;
use fxhls::emit::{
    emit_testbench, emit_verilog, interpreter_vectors, lint_verilog, run_simulator,
    simulator_from_env, write_outputs,
};
use fxhls::emulate::{
    emulate_fixed, emulate_float, quantize_input, AccumulationOrder, FixedEngine,
};
use fxhls::estimate::{estimate, CostModel};
use fxhls::fixedpoint::{fxp_add, fxp_mul, quantize_real, FixedPointValue};
use fxhls::lower::lower;
use fxhls::model::{Activation, DenseLayer, FcnnModel, Model};
use fxhls::netlist::{interpret_netlist, run_stream, verify, NetlistIr};
use fxhls::quantize::{
    calibrate_formats, prune_fcnn, quantize_model, PruningConfig, QuantizedModel, Widths,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Fixed-point oracle suite

const ORACLE_SAMPLES: usize = 1_000_000;

#[derive(Clone, Copy)]
enum Op {
    Add,
    Mul,
    Quantize,
}

fn oracle_chunk(op: Op, seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let out = random_format(&mut rng);
        let (got, want, what) = match op {
            Op::Add | Op::Mul => {
                let (fa, fb) = (random_format(&mut rng), random_format(&mut rng));
                let a = random_value(&mut rng, fa);
                let b = random_value(&mut rng, fb);
                let (got, exact_v) = match op {
                    Op::Add => (fxp_add(a, b, out), exact(&a) + exact(&b)),
                    _ => (fxp_mul(a, b, out), exact(&a) * exact(&b)),
                };
                (got.raw(), oracle_cast(&exact_v, out), format!("{a} , {b}"))
            }
            Op::Quantize => {
                let x = random_real(&mut rng, out);
                (
                    quantize_real(x, out).raw(),
                    oracle_cast(&exact_f64(x), out),
                    format!("{x:e}"),
                )
            }
        };
        if got != want {
            return Err(format!("{what} -> {out}: got raw {got}, oracle {want}"));
        }
    }
    Ok(())
}

fn fixed_point_oracle() -> Outcome {
    let start = Instant::now();
    let chunks = 200;
    for (op, name, salt) in [
        (Op::Add, "add", 1u64),
        (Op::Mul, "mul", 2),
        (Op::Quantize, "quantize", 3),
    ] {
        (0..chunks as u64)
            .into_par_iter()
            .map(|c| oracle_chunk(op, salt << 32 | c, ORACLE_SAMPLES / chunks))
            .collect::<Result<Vec<()>, String>>()
            .map_err(|e| format!("{name}: {e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:.1?}")
    })?;
    Ok(format!(
        "3 x {ORACLE_SAMPLES} triples, 0 mismatches, {elapsed:.1?}"
    ))
}

// ---------------------------------------------------------------------------
// Compiler correctness

fn calibrated<R: Rng>(rng: &mut R, m: &Model) -> Result<QuantizedModel, String> {
    let calib = random_dataset(rng, 200, m.n_features(), 3.0);
    let mut w = rng.random_range(10..=20);
    loop {
        match calibrate_formats(m, &calib, &Widths::uniform(w))
            .and_then(|c| quantize_model(m, &c, None))
        {
            Ok(q) => return Ok(q),
            Err(_) if w < 40 => w += 2,
            Err(e) => return Err(e.to_string()),
        }
    }
}

fn random_inputs<R: Rng>(rng: &mut R, q: &QuantizedModel, n: usize) -> Vec<Vec<FixedPointValue>> {
    let fmt = q.config().input_fmt;
    (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                (0..q.n_features())
                    .map(|_| random_value(rng, fmt))
                    .collect()
            } else {
                let x: Vec<f64> = (0..q.n_features())
                    .map(|_| rng.random_range(-4.0..4.0))
                    .collect();
                quantize_input(&x, fmt)
            }
        })
        .collect()
}

fn check_equivalence(
    q: &QuantizedModel,
    n: &NetlistIr,
    inputs: &[Vec<FixedPointValue>],
) -> Result<(), String> {
    verify(n).map_err(|e| format!("verifier: {e}"))?;
    let engine = FixedEngine::new(q, AccumulationOrder::Tree);
    let raws: Vec<Vec<i128>> = inputs
        .iter()
        .map(|x| x.iter().map(|v| v.raw()).collect())
        .collect();
    let streamed = run_stream(n, &raws).map_err(|e| e.to_string())?;
    for (k, (x, got)) in inputs.iter().zip(&streamed).enumerate() {
        let want: Vec<i128> = engine.run_quantized(x).iter().map(|v| v.raw()).collect();
        ensure(*got == want, || {
            format!("sample {k}: netlist {got:?} vs emulator {want:?}")
        })?;
        if k < 25 {
            let single = interpret_netlist(n, &raws[k]).map_err(|e| e.to_string())?;
            ensure(single == want, || {
                format!("sample {k} alone: {single:?} vs {want:?}")
            })?;
        }
    }
    Ok(())
}

fn random_model(seed: u64, bdt: bool) -> (Model, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if bdt {
        let n_features = rng.random_range(1..=8);
        let n_classes = rng.random_range(1..=3);
        let n_trees = rng.random_range(1..=16);
        let depth = rng.random_range(1..=5);
        (
            Model::Bdt(random_bdt(&mut rng, n_features, n_classes, n_trees, depth)),
            1,
        )
    } else {
        let n_layers = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..=n_layers).map(|_| rng.random_range(1..=32)).collect();
        (
            Model::Fcnn(random_fcnn(&mut rng, &sizes)),
            rng.random_range(1..=4),
        )
    }
}

fn compiler_correctness() -> Outcome {
    let start = Instant::now();
    let results: Vec<Result<(), String>> = (0..40u64)
        .into_par_iter()
        .map(|i| {
            let bdt = i < 20;
            let (m, reuse) = random_model(1000 + i, bdt);
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
            let q = calibrated(&mut rng, &m)?;
            let n = lower(&q, reuse, "dut").map_err(|e| e.to_string())?;
            let inputs = random_inputs(&mut rng, &q, 500);
            check_equivalence(&q, &n, &inputs)
                .map_err(|e| format!("{} model {i} (R={reuse}): {e}", m.kind()))
        })
        .collect();
    for r in results {
        r?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || {
        format!("took {elapsed:.1?}")
    })?;
    Ok(format!(
        "20 BDTs + 20 fcNNs x 500 inputs raw-equal, {elapsed:.1?}"
    ))
}

// ---------------------------------------------------------------------------
// Convergence

struct Agreement {
    all: f64,
    guarded: f64,
    n_guarded: usize,
}

fn agreement(m: &Model, d: &Dataset, width: u32) -> Result<Agreement, String> {
    let cfg = calibrate_formats(m, d, &Widths::uniform(width)).map_err(|e| e.to_string())?;
    let q = quantize_model(m, &cfg, None).map_err(|e| e.to_string())?;
    let fixed = emulate_fixed(&q, d, AccumulationOrder::Tree).map_err(|e| e.to_string())?;
    let float = emulate_float(m, d).map_err(|e| e.to_string())?;
    let (mut agree, mut g_agree, mut g_n) = (0usize, 0usize, 0usize);
    for (a, b) in fixed.iter().zip(&float) {
        let same = a.class == b.class;
        agree += same as usize;
        if b.margin.unwrap() > MARGIN_GUARD {
            g_n += 1;
            g_agree += same as usize;
        }
    }
    Ok(Agreement {
        all: agree as f64 / d.len() as f64,
        guarded: g_agree as f64 / g_n.max(1) as f64,
        n_guarded: g_n,
    })
}

fn convergence() -> Outcome {
    let d = make_synthetic(2024, 2000, 4, 2);
    let mut details = Vec::new();
    for m in [Model::Fcnn(blob_fcnn(&d)), Model::Bdt(blob_bdt(&d, 13))] {
        let wide = agreement(&m, &d, 24)?;
        let narrow = agreement(&m, &d, 6)?;
        ensure(wide.guarded == 1.0, || {
            format!(
                "{}: W=24 guarded agreement {} over {} samples",
                m.kind(),
                wide.guarded,
                wide.n_guarded
            )
        })?;
        ensure(narrow.all < 1.0, || {
            format!("{}: W=6 agreement still 100%", m.kind())
        })?;
        details.push(format!(
            "{} W=24 guarded {:.4} ({} samples), W=6 {:.4}",
            m.kind(),
            wide.guarded,
            wide.n_guarded,
            narrow.all
        ));
    }
    Ok(details.join("; "))
}

// ---------------------------------------------------------------------------
// Pruning payoff

fn pruning_payoff() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut layer = |n_in: usize, n_out: usize, act| DenseLayer {
        weights: (0..n_out)
            .map(|_| {
                (0..n_in)
                    .map(|_| {
                        let w: f64 = rng.random_range(0.1..1.0);
                        if rng.random_bool(0.5) {
                            w
                        } else {
                            -w
                        }
                    })
                    .collect()
            })
            .collect(),
        bias: vec![0.1; n_out],
        activation: act,
    };
    let net = FcnnModel {
        layers: vec![
            layer(16, 16, Activation::Relu),
            layer(16, 2, Activation::Linear),
        ],
    };
    let mut calib_rng = ChaCha8Rng::seed_from_u64(78);
    let calib = random_dataset(&mut calib_rng, 300, 16, 2.0);
    let mut dsps = Vec::new();
    for s in [0.0, 0.25, 0.5, 0.75, 0.9] {
        let (pruned, masks) =
            prune_fcnn(&net, &PruningConfig::uniform(s, 2)).map_err(|e| e.to_string())?;
        let pm = Model::Fcnn(pruned);
        let cfg =
            calibrate_formats(&pm, &calib, &Widths::uniform(16)).map_err(|e| e.to_string())?;
        let q = quantize_model(&pm, &cfg, Some(&masks)).map_err(|e| e.to_string())?;
        let n = lower(&q, 1, "pruned").map_err(|e| e.to_string())?;
        let dsp = estimate(&n, &CostModel::default())
            .map_err(|e| e.to_string())?
            .dsp;
        // Weights are at least 0.1 in magnitude, so only pruning zeroes them.
        let expected: u64 = [256u64, 32]
            .iter()
            .map(|&total| total - (s * total as f64).floor() as u64)
            .sum();
        let QuantizedModel::Fcnn(qf) = &q else {
            unreachable!()
        };
        let nonzero: u64 = qf.layers.iter().map(|l| l.nonzero_count() as u64).sum();
        ensure(dsp == expected && nonzero == expected, || {
            format!("sparsity {s}: dsp {dsp}, nonzero {nonzero}, expected {expected}")
        })?;
        dsps.push(dsp);
    }
    ensure(dsps.windows(2).all(|w| w[1] < w[0]), || {
        format!("dsp not strictly decreasing: {dsps:?}")
    })?;
    Ok(format!("dsp {dsps:?}"))
}

// ---------------------------------------------------------------------------
// Latency formulas

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

fn expected_latency(q: &QuantizedModel, reuse: u32) -> (u32, u32) {
    match q {
        QuantizedModel::Bdt(b) => {
            let mut per_class = vec![0u64; b.n_classes];
            for t in &b.trees {
                per_class[t.class_index] += 1;
            }
            let t_c = per_class.into_iter().max().unwrap_or(0);
            (3 + ceil_log2(t_c + 1), 1)
        }
        QuantizedModel::Fcnn(f) => {
            let mut latency = 0;
            let mut ii = 1;
            for l in &f.layers {
                let fan = l
                    .weights
                    .iter()
                    .map(|row| row.iter().filter(|w| **w != 0).count() as u64)
                    .max()
                    .unwrap_or(0);
                let r = (reuse as u64).min(fan).max(1) as u32;
                ii = ii.max(r);
                latency += r + ceil_log2(fan + 1) + 1;
            }
            (latency, ii)
        }
    }
}

fn latency_formulas() -> Outcome {
    let mut checked = 0;
    for i in 0..50u64 {
        let (m, reuse) = random_model(9000 + i, i % 2 == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9500 + i);
        let q = calibrated(&mut rng, &m)?;
        let n = lower(&q, reuse, "lat").map_err(|e| e.to_string())?;
        verify(&n).map_err(|e| format!("model {i}: verifier: {e}"))?;
        let (latency, ii) = expected_latency(&q, reuse);
        ensure(
            n.latency_cycles == latency && n.initiation_interval == ii,
            || {
                format!(
                    "{} model {i} R={reuse}: netlist L={} II={}, formula L={latency} II={ii}",
                    m.kind(),
                    n.latency_cycles,
                    n.initiation_interval
                )
            },
        )?;
        checked += 1;
    }
    Ok(format!("{checked} models verified"))
}

// ---------------------------------------------------------------------------
// Emission

fn emission() -> Outcome {
    let mut designs = Vec::new();
    for i in 0..20u64 {
        let (m, reuse) = random_model(12_000 + i, i % 2 == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(12_500 + i);
        let q = calibrated(&mut rng, &m)?;
        let n = lower(&q, reuse, &format!("design{i}")).map_err(|e| e.to_string())?;
        let inputs: Vec<Vec<i128>> = random_inputs(&mut rng, &q, 8)
            .iter()
            .map(|x| x.iter().map(|v| v.raw()).collect())
            .collect();
        designs.push((n, inputs));
    }
    for (n, inputs) in &designs {
        let v = emit_verilog(n).map_err(|e| e.to_string())?;
        ensure(v == emit_verilog(n).unwrap(), || {
            format!("{}: emission not deterministic", n.name)
        })?;
        let findings = lint_verilog(&v);
        ensure(findings.is_empty(), || format!("{}: {findings:?}", n.name))?;
        let vectors = interpreter_vectors(n, inputs).map_err(|e| e.to_string())?;
        let tb = emit_testbench(n, &vectors).map_err(|e| e.to_string())?;
        let findings = lint_verilog(&format!("{v}{tb}"));
        ensure(findings.is_empty(), || {
            format!("{} testbench: {findings:?}", n.name)
        })?;
    }
    let stump = lower(&golden_stump(), 1, "stump").map_err(|e| e.to_string())?;
    let golden = std::fs::read_to_string(golden_path("stump.v")).map_err(|e| e.to_string())?;
    ensure(emit_verilog(&stump).unwrap() == golden, || {
        "stump.v differs from golden file".into()
    })?;
    let sim = match simulator_from_env() {
        None => "external simulator skipped (FXHLS_HDL_SIM unset)".to_string(),
        Some(sim) => {
            let root =
                std::env::temp_dir().join(format!("fxhls_acceptance_{}", std::process::id()));
            let mut total = 0;
            for (n, inputs) in designs
                .iter()
                .step_by(4)
                .chain(std::iter::once(&(stump.clone(), vec![vec![0]])))
            {
                let vectors = interpreter_vectors(n, inputs).map_err(|e| e.to_string())?;
                let dir = root.join(&n.name);
                let files = write_outputs(n, &vectors, &dir).map_err(|e| e.to_string())?;
                let r =
                    run_simulator(&sim, &files, &dir.join("work")).map_err(|e| e.to_string())?;
                ensure(r.fail == 0 && r.pass == vectors.len(), || {
                    format!("{}: {}", n.name, r.log)
                })?;
                total += r.pass;
            }
            let _ = std::fs::remove_dir_all(&root);
            format!("external simulator {}: {total} vectors PASS", sim.display())
        }
    };
    Ok(format!(
        "{} designs lint-clean, golden stable, {sim}",
        designs.len()
    ))
}

// ---------------------------------------------------------------------------
// AUC

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins2, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                wins2 += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    wins2 as f64 / (2 * pairs) as f64
}

fn auc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..100 {
        let levels = [4, 16, 1000, 1 << 30][trial % 4];
        let scores: Vec<f64> = (0..200)
            .map(|_| rng.random_range(0..levels) as f64 / 7.0)
            .collect();
        let mut labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let fast = metric_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let slow = brute_auc(&scores, &labels);
        ensure(fast == slow, || {
            format!("trial {trial}: rank {fast} vs pairwise {slow}")
        })?;
    }
    Ok("100 trials exact".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("fixed-point oracle", fixed_point_oracle),
        ("compiler correctness", compiler_correctness),
        ("convergence", convergence),
        ("pruning payoff", pruning_payoff),
        ("latency formulas", latency_formulas),
        ("emission", emission),
        ("auc", auc),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("ACCEPTANCE {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("ACCEPTANCE {name}: FAIL ({detail})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
