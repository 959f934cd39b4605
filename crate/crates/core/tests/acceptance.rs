//! Acceptance criteria, one `PASS` / `FAIL` line each.
//!
//! The lines are written straight to stderr so they appear in the test
//! output even when the harness captures printing.

mod common;

use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use pms_core::config::RunConfig;
use pms_core::dataio::{denormalize, normalize_action, synth_dataset, MotionSequence, SynthSpec};
use pms_core::losses::loss_total;
use pms_core::model::{save_model, Forward, ForwardMode, GammaSchedule, ModelConfig, PmsModel};
use pms_core::training::{
    apply_ablation, eval_windows, evaluate_model, run_gradcheck_suite, train_multistage, AblationSpec, EvalReport,
};
use rand::Rng;

/// Sequences, frames and joints of the training benchmark.
const BENCH_SEQUENCES: usize = 200;
const BENCH_FRAMES: usize = 400;
const BENCH_JOINTS: usize = 8;
/// Held-out sequences evaluated for every benchmark model.
const HELD_OUT: usize = 20;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TIME_LIMIT: Duration = Duration::from_secs(15 * 60);

/// Settings that make the benchmark fit one core: a narrower network, a
/// wider window stride and slower synthetic motion than the defaults.
const BENCH_OVERRIDES: [(&str, &str); 4] = [("hidden", "64"), ("stride", "20"), ("synth.freq_min", "0.1"), ("synth.freq_max", "0.5")];

fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    static LOCK: Mutex<()> = Mutex::new(());
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let line = format!("criterion {id} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

/// Held by every timed or training-heavy section, so parallel test threads
/// on one core do not distort the measured run times.
fn heavy() -> std::sync::MutexGuard<'static, ()> {
    static HEAVY: Mutex<()> = Mutex::new(());
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn bench_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.set("seed", &seed.to_string()).unwrap();
    c.set("synth.sequences", &BENCH_SEQUENCES.to_string()).unwrap();
    c.set("synth.frames", &BENCH_FRAMES.to_string()).unwrap();
    c.set("synth.joints", &BENCH_JOINTS.to_string()).unwrap();
    for (k, v) in BENCH_OVERRIDES {
        c.set(k, v).unwrap();
    }
    c.resolved().unwrap()
}

fn bench_data(c: &RunConfig) -> (Vec<MotionSequence>, Vec<MotionSequence>) {
    let (spec, n) = c.synth_spec().unwrap();
    let train = synth_dataset(&spec, n).unwrap();
    let held_spec = SynthSpec {
        seed: spec.seed + 1000,
        ..spec.clone()
    };
    let mut held = synth_dataset(&held_spec, HELD_OUT).unwrap();
    for s in &mut held {
        s.name = format!("held_{}", s.name);
    }
    (train, held)
}

fn evaluate(model: &PmsModel, c: &RunConfig, held: &[MotionSequence]) -> EvalReport {
    let horizons = c.horizon_frames().unwrap();
    let needed = horizons.iter().map(|h| h.1).max().unwrap();
    let (windows, _) = eval_windows(model, held, 10, needed).unwrap();
    evaluate_model(model, &windows, &horizons).unwrap()
}

struct BenchRun {
    seconds: f64,
    report: EvalReport,
}

fn train_and_evaluate(c: &RunConfig) -> BenchRun {
    let (train, held) = bench_data(c);
    let _g = heavy();
    let start = Instant::now();
    let model = train_multistage(&train, c, None).unwrap().remove(0).model;
    let seconds = start.elapsed().as_secs_f64();
    BenchRun {
        seconds,
        report: evaluate(&model, c, &held),
    }
}

/// The default-configuration benchmark run of every seed, shared by the
/// training and ablation criteria.
fn bench_runs() -> &'static Vec<BenchRun> {
    static RUNS: OnceLock<Vec<BenchRun>> = OnceLock::new();
    RUNS.get_or_init(|| SEEDS.iter().map(|&s| train_and_evaluate(&bench_config(s))).collect())
}

#[test]
fn criterion_1_gradient_integrity() {
    let _g = heavy();
    let start = Instant::now();
    let entries = run_gradcheck_suite(false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = entries.iter().map(|e| e.report.max_rel_error()).fold(0.0, f64::max);
    let all = entries.iter().all(|e| e.report.passed() && e.report.max_rel_error() < 1e-3);
    let ok = report(1, "gradient integrity", all && secs < 60.0, &format!("{} checks, max rel error {worst:.2e}, {secs:.1}s", entries.len()));
    assert!(ok);
}

#[test]
fn criterion_2_oracle_equivalence() {
    let worst = oracle_sweep(77, 1200);
    let ok = report(2, "oracle equivalence", worst <= 1e-12, &format!("1200 instances, max deviation {worst:.1e}"));
    assert!(ok);
}

#[test]
fn criterion_3_structural_identities() {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    // Second differences and the loss sum.
    for _ in 0..200 {
        let window = random_frames(&mut r, 50, 2);
        let segs = oracle_segments(&window, 5, true);
        let inc = pms_core::increments::scale_increments(
            &window,
            5,
            pms_core::increments::Anchor::End,
            &pms_core::increments::FusionWeights::default(),
        )
        .unwrap();
        for k in 0..3 {
            worst = worst.max(max_diff(&inc.accel[k], &oracle_accel(&segs)[k]));
        }
        let (p, c, f) = (r.gen_range(0.0..5.0), r.gen_range(0.0..5.0), r.gen_range(0.0..5.0));
        worst = worst.max((loss_total(p, c, f, 0).l_total - (p + c + f)).abs());
    }
    // Zero attenuation repeats the last segment.
    let mut cfg = ModelConfig::new(2);
    cfg.hidden = 8;
    cfg.gamma = GammaSchedule::Explicit(vec![0.0; 10]);
    let model = PmsModel::new(cfg, 3).unwrap();
    let window = random_frames(&mut r, 50, 2);
    for (d, frames) in model.predict_short(&window).unwrap().branches {
        let expect: Vec<Vec<f64>> = (0..10).map(|t| window[50 - d + t % d].clone()).collect();
        worst = worst.max(max_diff(&frames, &expect));
    }
    // Long rollout prefix.
    let mut cfg = ModelConfig::new(2);
    cfg.hidden = 8;
    let model = PmsModel::new(cfg, 4).unwrap();
    let short = model.predict_short(&window).unwrap().frames;
    worst = worst.max(max_diff(&model.predict_long(&window, 25).unwrap()[..10], &short));
    let ok = report(3, "structural identities", worst <= 1e-12, &format!("max deviation {worst:.1e}"));
    assert!(ok);
}

#[test]
fn criterion_4_normalization() {
    let mut worst_bound: f64 = 0.0;
    let mut worst_trip: f64 = 0.0;
    let mut extrema_exact = true;
    for seed in 0..50 {
        let seq = pms_core::dataio::synth_generate(&SynthSpec {
            joints: 1 + seed as usize % 5,
            frames: 20 + seed as usize * 3,
            seed,
            amplitude: 0.5 + seed as f64,
            ..SynthSpec::default()
        })
        .unwrap();
        let (n, stats) = normalize_action(&seq).unwrap();
        for a in 0..3 {
            let vals: Vec<f64> = n.frames.iter().flatten().map(|p| p[a]).collect();
            worst_bound = vals.iter().fold(worst_bound, |w, v| w.max(v.abs()));
            extrema_exact &= vals.iter().cloned().fold(f64::INFINITY, f64::min) == -1.0;
            extrema_exact &= vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) == 1.0;
        }
        let back = denormalize(&n, &stats);
        for (fa, fb) in back.frames.iter().flatten().zip(seq.frames.iter().flatten()) {
            for a in 0..3 {
                worst_trip = worst_trip.max((fa[a] - fb[a]).abs());
            }
        }
    }
    let ok = report(
        4,
        "normalization",
        worst_bound <= 1.0 && extrema_exact && worst_trip <= 1e-9,
        &format!("max |x| {worst_bound}, extrema exact {extrema_exact}, round trip {worst_trip:.1e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_training_smoke_test() {
    let runs = bench_runs();
    let mut passing = 0;
    let mut details = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let (m, z) = (run.report.model.short_term, run.report.zero_velocity.short_term);
        let gain = 1.0 - m / z;
        let ok = run.seconds < TIME_LIMIT.as_secs_f64() && gain >= 0.30;
        passing += ok as usize;
        details.push(format!("seed {seed}: {:.0}s, gain {:.1}%", run.seconds, 100.0 * gain));
    }
    let ok = report(5, "training smoke test", passing >= 4, &format!("{passing}/5 seeds; {}", details.join("; ")));
    assert!(ok);
}

#[test]
fn criterion_6_ablation_direction() {
    let full = &bench_runs()[0].report.model;
    let c = bench_config(SEEDS[0]);
    let mut details = Vec::new();
    let mut all = true;
    for spec in [AblationSpec::WoT10, AblationSpec::WoVf] {
        let variant = apply_ablation(&c, spec).unwrap().resolved().unwrap();
        let run = train_and_evaluate(&variant);
        let ok = run.report.model.average >= full.average;
        all &= ok;
        details.push(format!("{} {:.4} vs full {:.4}", spec.name(), run.report.model.average, full.average));
    }
    let ok = report(6, "ablation direction", all, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_7_rollout_protocol() {
    let mut cfg = ModelConfig::new(3);
    cfg.hidden = 8;
    let model = PmsModel::new(cfg, 2).unwrap();
    let window = random_frames(&mut rng(9), 50, 3);
    let short = model.predict_short(&window).unwrap();
    let mut f = Forward::new(&model, ForwardMode::Infer, false);
    let frames = f.input(&[&window]).unwrap();
    let long = f.predict_long(&frames, 25).unwrap();
    let ok = short.frames.len() == 10
        && short.frames.iter().all(|r| r.len() == 9)
        && long.len() == 25
        && f.short_calls == 3
        && model.predict_short(&window[..49]).is_err();
    let ok = report(
        7,
        "rollout protocol",
        ok,
        &format!("50 in, {} out; horizon {} from {} steps", short.frames.len(), long.len(), f.short_calls),
    );
    assert!(ok);
}

#[test]
fn criterion_8_determinism() {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("hidden", "16"),
        ("synth.sequences", "4"),
        ("synth.frames", "150"),
        ("train.plan", "2@0.005:standard,1@0.005:plus_5x_accumulated,1@0.001:plus_longterm"),
        ("seed", "11"),
    ] {
        c.set(k, v).unwrap();
    }
    let c = c.resolved().unwrap();
    let (spec, n) = c.synth_spec().unwrap();
    let data = synth_dataset(&spec, n).unwrap();
    let run = || {
        let model = train_multistage(&data, &c, None).unwrap().remove(0).model;
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes).unwrap();
        let eval = evaluate(&model, &c, &data);
        (bytes, eval.to_kv(), eval.to_table())
    };
    let _g = heavy();
    let (a, b) = (run(), run());
    let ok = report(8, "determinism", a == b, &format!("model {} bytes, reports identical {}", a.0.len(), a.1 == b.1));
    assert!(ok);
}
