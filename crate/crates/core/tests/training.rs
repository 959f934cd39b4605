//! Training loop behavior on a tiny synthetic problem.

use pms_core::config::RunConfig;
use pms_core::dataio::synth_dataset;
use pms_core::model::{ModelConfig, PmsModel};
use pms_core::training::{prepare_windows, run_stage, train_multistage, Stage, StagePlan, TrainSettings};

fn tiny_config(plan: &str) -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("hidden", "8"),
        ("lstm_layers", "1"),
        ("synth.sequences", "2"),
        ("synth.joints", "2"),
        ("synth.frames", "120"),
        ("stride", "10"),
        ("train.batch_size", "4"),
        ("train.plan", plan),
        ("seed", "4"),
    ] {
        c.set(k, v).unwrap();
    }
    c.resolved().unwrap()
}

fn data(c: &RunConfig) -> Vec<pms_core::dataio::MotionSequence> {
    let (spec, n) = c.synth_spec().unwrap();
    synth_dataset(&spec, n).unwrap()
}

#[test]
fn training_is_deterministic() {
    let c = tiny_config("2@0.005:standard,1@0.005:plus_longterm");
    let a = train_multistage(&data(&c), &c, None).unwrap();
    let b = train_multistage(&data(&c), &c, None).unwrap();
    assert_eq!(a[0].model, b[0].model);
    assert_eq!(a[0].log, b[0].log);
    assert_eq!(a[0].log.len(), 3);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = tiny_config("2@0:standard");
    let trained = train_multistage(&data(&c), &c, None).unwrap().remove(0).model;
    let fresh = PmsModel::new(c.model_config(2).unwrap(), 4).unwrap();
    assert!(trained.params.iter().zip(fresh.params.iter()).all(|((_, a), (_, b))| a.values() == b.values()));
}

#[test]
fn accumulated_mode_changes_the_result() {
    let plain = tiny_config("1@0.005:standard");
    let mut accumulated = tiny_config("1@0.005:plus_5x_accumulated");
    accumulated.set("train.accumulate", "2").unwrap();
    let a = train_multistage(&data(&plain), &plain, None).unwrap().remove(0).model;
    let b = train_multistage(&data(&accumulated), &accumulated, None).unwrap().remove(0).model;
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn stage_loss_decreases() {
    let c = tiny_config("12@0.005:standard");
    let settings = TrainSettings::from_config(&c).unwrap();
    let (windows, _) = prepare_windows(&data(&c), &settings).unwrap();
    let mut cfg = ModelConfig::new(2);
    cfg.hidden = 8;
    cfg.lstm_layers = 1;
    let mut model = PmsModel::new(cfg, 4).unwrap();
    let stage: &Stage = &settings.plan.stages[0];
    let trace = run_stage(&mut model, &windows, stage, &settings).unwrap();
    let first = trace[0].l_total;
    let last = trace.last().unwrap().l_total;
    assert!(last < 0.9 * first, "first {first} last {last}");
}

#[test]
fn plan_parsing() {
    let plan = StagePlan::parse("3@0.01:standard:7,1@0.001:plus_longterm", 1).unwrap();
    assert_eq!(plan.stages.len(), 2);
    assert_eq!(plan.stages[0].shuffle_seed, 7);
    assert_eq!(plan.to_text(), "3@0.01:standard,1@0.001:plus_longterm");
    let again = StagePlan::parse(&plan.to_text(), 1).unwrap();
    assert_eq!(again.stages[1], plan.stages[1]);
    assert!(StagePlan::parse("3@x:standard", 1).is_err());
    assert!(StagePlan::parse("0@0.1:standard", 1).is_err());
    assert!(StagePlan::parse("1@0.1:nonsense", 1).is_err());
}

#[test]
fn invalid_settings_are_rejected() {
    let mut c = tiny_config("1@0.005:standard");
    c.set("train.batch_size", "0").unwrap();
    assert!(TrainSettings::from_config(&c).is_err());
}
