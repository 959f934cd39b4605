//! Finite-difference checks of every differentiable building block and of
//! the full training loss.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::dataio::{make_windows, normalize_action, synth_generate, SynthSpec};
use crate::error::Result;
use crate::model::{ForwardMode, ModelConfig, PmsModel};
use crate::numerics::layers::{bn_dropout_act, lstm_forward, seeded, uniform_init, BatchNormParams, LstmLayer};
use crate::numerics::{gradient_check, Activation, GradCheckOptions, GradCheckReport, Graph, LayerMode, ParamGroup, RunningStats, Tensor, Var};

use super::{batch_loss, TrainSettings};

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn line(&self) -> String {
        let worst = self.report.worst().map(|p| p.name.as_str()).unwrap_or("-");
        format!(
            "{:<24} max_rel_error={:.3e} worst={worst} {}",
            self.name,
            self.report.max_rel_error(),
            if self.report.passed() { "PASS" } else { "FAIL" }
        )
    }
}

type Grads = BTreeMap<String, Vec<f64>>;

/// A smooth scalar of `y` that weights every entry differently, so errors in
/// any single gradient entry cannot cancel.
fn probe_loss(g: &mut Graph, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let weights: Vec<f64> = (0..n).map(|i| 0.3 + 0.7 * ((i * 7919 % 97) as f64 / 97.0)).collect();
    let sq = g.mul(y, y)?;
    let w = g.mul_const(sq, weights.clone())?;
    let lin = g.mul_const(y, weights)?;
    let both = g.add(w, lin)?;
    g.sum(both)
}

fn finish(g: &Graph, loss: Var, vars: &[(String, Var)]) -> Result<(f64, Grads)> {
    let mut grads = g.backward(loss)?;
    Ok((g.value(loss).item(), vars.iter().map(|(n, v)| (n.clone(), grads.take(*v))).collect()))
}

fn params_of(g: &mut Graph, p: &ParamGroup) -> Vec<(String, Var)> {
    p.iter().map(|(n, t)| (n.to_string(), g.param(t.clone()))).collect()
}

fn lookup(vars: &[(String, Var)], name: &str) -> Var {
    vars.iter().find(|(n, _)| n == name).map(|(_, v)| *v).expect("known parameter")
}

fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
    uniform_init(vec![rows, cols], 1, &mut seeded(seed))
}

fn check_linear(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = seeded(11);
    let mut p = ParamGroup::new();
    p.insert("x", random_input(4, 5, 12));
    p.insert("w", uniform_init(vec![5, 3], 5, &mut rng));
    p.insert("b", uniform_init(vec![3], 5, &mut rng));
    gradient_check(
        &p,
        |p| {
            let mut g = Graph::new();
            let v = params_of(&mut g, p);
            let y = g.linear(lookup(&v, "x"), lookup(&v, "w"), Some(lookup(&v, "b")))?;
            let l = probe_loss(&mut g, y)?;
            finish(&g, l, &v)
        },
        opts,
    )
}

fn check_lstm(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (input, hidden, steps, batch) = (3, 4, 4, 2);
    let mut rng = seeded(21);
    let mut p = ParamGroup::new();
    for l in 0..2 {
        let fan = if l == 0 { input } else { hidden };
        p.insert(format!("l{l}.w_ih"), uniform_init(vec![fan, 4 * hidden], hidden, &mut rng));
        p.insert(format!("l{l}.w_hh"), uniform_init(vec![hidden, 4 * hidden], hidden, &mut rng));
        p.insert(format!("l{l}.b"), uniform_init(vec![4 * hidden], hidden, &mut rng));
    }
    for s in 0..steps {
        p.insert(format!("x{s}"), random_input(batch, input, 30 + s as u64));
    }
    gradient_check(
        &p,
        |p| {
            let mut g = Graph::new();
            let v = params_of(&mut g, p);
            let layers: Vec<LstmLayer> = (0..2)
                .map(|l| LstmLayer {
                    w_ih: lookup(&v, &format!("l{l}.w_ih")),
                    w_hh: lookup(&v, &format!("l{l}.w_hh")),
                    bias: lookup(&v, &format!("l{l}.b")),
                })
                .collect();
            let seq: Vec<Var> = (0..steps).map(|s| lookup(&v, &format!("x{s}"))).collect();
            let out = lstm_forward(&mut g, &seq, &layers)?;
            let all = g.concat_rows(&out)?;
            let l = probe_loss(&mut g, all)?;
            finish(&g, l, &v)
        },
        opts,
    )
}

fn check_batch_norm(train: bool, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut p = ParamGroup::new();
    p.insert("x", random_input(5, 3, 41));
    p.insert("gamma", Tensor::new(vec![3], vec![1.2, 0.7, -0.4])?);
    p.insert("beta", Tensor::new(vec![3], vec![0.1, -0.3, 0.2])?);
    let running = RunningStats {
        mean: vec![0.1, -0.2, 0.05],
        var: vec![0.5, 1.5, 0.8],
    };
    gradient_check(
        &p,
        |p| {
            let mut g = Graph::new();
            let v = params_of(&mut g, p);
            let bn = BatchNormParams {
                gamma: lookup(&v, "gamma"),
                beta: lookup(&v, "beta"),
            };
            let mut rng = seeded(5);
            let mut mode = if train {
                LayerMode::Train {
                    drop_rate: 0.3,
                    rng: &mut rng,
                }
            } else {
                LayerMode::Infer
            };
            let (y, _) = bn_dropout_act(&mut g, lookup(&v, "x"), &bn, &running, Activation::Tanh, &mut mode)?;
            let l = probe_loss(&mut g, y)?;
            finish(&g, l, &v)
        },
        opts,
    )
}

/// A small model, its training settings and a batch of windows.
fn small_setup(bn_relu: bool) -> Result<(PmsModel, TrainSettings, Vec<crate::dataio::UnitWindow>)> {
    let mut cfg = ModelConfig::new(2);
    cfg.hidden = 8;
    cfg.lstm_layers = 2;
    cfg.bn_relu = bn_relu;
    cfg.activation = Activation::Tanh;
    cfg.dropout = 0.2;
    let model = PmsModel::new(cfg, 3)?;
    let mut rc = RunConfig::default();
    rc.set("loss.future_deltas", "15")?;
    let settings = TrainSettings::from_config(&rc)?;
    let spec = SynthSpec {
        joints: 2,
        frames: 120,
        ..SynthSpec::default()
    };
    let (seq, _) = normalize_action(&synth_generate(&spec)?)?;
    let windows = make_windows(&seq, 50, 10, 10, 17)?.into_iter().take(3).collect();
    Ok((model, settings, windows))
}

fn check_model(train: bool, with_future: bool, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (model, settings, windows) = small_setup(true)?;
    let batch: Vec<_> = windows.iter().collect();
    let mode = if train {
        ForwardMode::Train { seed: 9, counter: 4 }
    } else {
        ForwardMode::Infer
    };
    let mut probe = model.clone();
    gradient_check(
        &model.params,
        |p| {
            probe.params = p.clone();
            let r = batch_loss(&probe, &batch, &settings, with_future, mode)?;
            Ok((r.loss.l_total, r.grads))
        },
        opts,
    )
}

/// Runs every check. With `quick`, a few entries per tensor are sampled.
pub fn run_gradcheck_suite(quick: bool) -> Result<Vec<SuiteEntry>> {
    let full = GradCheckOptions::default();
    let sampled = GradCheckOptions {
        max_entries: Some(if quick { 4 } else { 8 }),
        ..full
    };
    let layer_opts = if quick { sampled } else { full };
    Ok(vec![
        SuiteEntry {
            name: "linear",
            report: check_linear(&layer_opts)?,
        },
        SuiteEntry {
            name: "lstm",
            report: check_lstm(&layer_opts)?,
        },
        SuiteEntry {
            name: "batch_norm_train",
            report: check_batch_norm(true, &layer_opts)?,
        },
        SuiteEntry {
            name: "batch_norm_infer",
            report: check_batch_norm(false, &layer_opts)?,
        },
        SuiteEntry {
            name: "model_short_infer",
            report: check_model(false, false, &sampled)?,
        },
        SuiteEntry {
            name: "model_total_loss_train",
            report: check_model(true, true, &sampled)?,
        },
    ])
}
