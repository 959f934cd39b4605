//! Trains a small model on synthetic motion and compares it with the zero-
//! and constant-velocity baselines on held-out sequences.

use pms_core::config::RunConfig;
use pms_core::dataio::synth_dataset;
use pms_core::training::{eval_windows, evaluate_model, train_multistage};

fn main() -> pms_core::error::Result<()> {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("hidden", "16"),
        ("lstm_layers", "1"),
        ("synth.sequences", "6"),
        ("synth.frames", "200"),
        ("synth.freq_max", "0.4"),
        ("train.plan", "6@0.005:standard,2@0.001:plus_longterm"),
        ("seed", "3"),
    ] {
        c.set(k, v)?;
    }
    let c = c.resolved()?;
    let (spec, n) = c.synth_spec()?;
    let train = synth_dataset(&spec, n)?;
    let held = synth_dataset(&pms_core::dataio::SynthSpec { seed: spec.seed + 1000, ..spec.clone() }, 2)?;

    let trained = train_multistage(&train, &c, None)?.remove(0);
    for r in trained.log.iter().filter(|r| r.epoch == 1 || r.epoch % 2 == 0) {
        println!("{}", r.log_line());
    }
    let horizons = c.horizon_frames()?;
    let needed = horizons.iter().map(|h| h.1).max().unwrap_or(10);
    let (windows, _) = eval_windows(&trained.model, &held, 10, needed)?;
    let report = evaluate_model(&trained.model, &windows, &horizons)?;
    print!("{}", report.to_table());
    Ok(())
}
