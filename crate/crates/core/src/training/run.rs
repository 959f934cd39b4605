use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::plan::{LossMode, Stage};
use super::{TrainMode, TrainSettings};
use crate::config::RunConfig;
use crate::dataio::{make_windows, normalize_action, MotionSequence, NormStats, UnitWindow};
use crate::error::{Error, Result};
use crate::losses::tape::full_time_loss;
use crate::losses::{loss_total, LossBreakdown};
use crate::model::{save_model_file, Forward, ForwardMode, PmsModel};
use crate::numerics::{AdamConfig, BatchStats, RngState, Stream, Tensor};

type Grads = BTreeMap<String, Vec<f64>>;

/// Mean loss of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based stage index.
    pub stage: usize,
    /// 1-based epoch index within the stage.
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "stage={} epoch={} l_p={} l_c={} l_f={} l_a={}",
            self.stage, self.epoch, self.loss.l_past, self.loss.l_current, self.loss.l_future, self.loss.l_total
        )
    }
}

pub fn log_text(records: &[EpochRecord]) -> String {
    records.iter().map(|r| r.log_line() + "\n").collect()
}

/// Loss and gradients of one mini-batch, plus the batch-norm statistics it
/// observed.
pub struct BatchResult {
    pub loss: LossBreakdown,
    pub grads: Grads,
    pub bn_updates: Vec<(String, BatchStats)>,
}

/// Forward and backward pass of `L_a` over `batch` in training mode.
pub fn batch_loss(
    model: &PmsModel,
    batch: &[&UnitWindow],
    settings: &TrainSettings,
    with_future: bool,
    mode: ForwardMode,
) -> Result<BatchResult> {
    let out_len = model.config.output_len;
    let horizon = if with_future {
        out_len.max(settings.loss.max_future())
    } else {
        out_len
    };
    let mut f = Forward::new(model, mode, true);
    let observed: Vec<&[Vec<f64>]> = batch.iter().map(|w| w.observed.as_slice()).collect();
    let x = f.input(&observed)?;
    let pred = if horizon > out_len {
        f.predict_long(&x, horizon)?
    } else {
        f.predict_short(&x)?.frames
    };
    let dim = model.config.dim();
    let futures: Vec<Vec<&Vec<f64>>> = batch.iter().map(|w| w.future().collect()).collect();
    let mut truth = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut values = Vec::with_capacity(batch.len() * dim);
        for fut in &futures {
            match fut.get(t) {
                Some(row) => values.extend_from_slice(row),
                None => values.extend(std::iter::repeat(0.0).take(dim)),
            }
        }
        truth.push(f.graph.constant(Tensor::new(vec![batch.len(), dim], values)?));
    }
    let future_len: Vec<usize> = batch.iter().map(|w| w.future_len()).collect();
    let l = full_time_loss(&mut f.graph, &pred, &truth, out_len, &future_len, &settings.loss, with_future)?;
    let val = |v| f.graph.value(v).item();
    let loss = loss_total(val(l.past), val(l.current), l.future.map_or(0.0, val), l.skipped_future_terms);
    let grads = f.gradients(l.total)?;
    Ok(BatchResult {
        loss,
        grads,
        bn_updates: std::mem::take(&mut f.bn_updates),
    })
}

fn add_into(acc: &mut Grads, g: &Grads) {
    for (k, v) in g {
        match acc.get_mut(k) {
            Some(a) => a.iter_mut().zip(v).for_each(|(a, b)| *a += b),
            None => {
                acc.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Consecutive mini-batches of `order`; a trailing single window joins the
/// previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(1)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Runs one stage. `observer` sees the model after every optimizer step.
pub fn run_stage_with(
    model: &mut PmsModel,
    windows: &[UnitWindow],
    stage: &Stage,
    settings: &TrainSettings,
    observer: &mut dyn FnMut(&PmsModel),
) -> Result<Vec<LossBreakdown>> {
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let adam = (stage.learning_rate > 0.0).then(|| AdamConfig::with_learning_rate(stage.learning_rate)).transpose()?;
    let with_future = stage.mode == LossMode::PlusLongterm || settings.future_all_stages;
    let mut trace = Vec::with_capacity(stage.epochs);
    for epoch in 0..stage.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut RngState::new(stage.shuffle_seed, Stream::Shuffle).at(epoch as u64).generator());
        let mut acc: Grads = BTreeMap::new();
        let mut sums = [0.0; 3];
        let mut skipped = 0;
        for (bi, idx) in batches(&order, settings.batch_size).into_iter().enumerate() {
            let batch: Vec<&UnitWindow> = idx.iter().map(|&i| &windows[i]).collect();
            let mode = ForwardMode::Train {
                seed: stage.shuffle_seed,
                counter: (epoch as u64) << 32 | bi as u64,
            };
            let r = batch_loss(model, &batch, settings, with_future, mode)?;
            for (prefix, s) in &r.bn_updates {
                model.running.get_mut(prefix).expect("branch has running stats").update(s);
            }
            let w = batch.len() as f64;
            sums[0] += w * r.loss.l_past;
            sums[1] += w * r.loss.l_current;
            sums[2] += w * r.loss.l_future;
            skipped += r.loss.skipped_future_terms;
            let Some(adam) = &adam else {
                continue;
            };
            model.params.adam_step(&r.grads, adam)?;
            observer(model);
            let extra = match stage.mode {
                LossMode::PlusAccumulated => {
                    add_into(&mut acc, &r.grads);
                    let due = (bi + 1) % settings.accumulate == 0;
                    (due, due)
                }
                LossMode::PlusAccumulated2510 => {
                    add_into(&mut acc, &r.grads);
                    let pos = bi % 10 + 1;
                    (matches!(pos, 2 | 5 | 10), pos == 10)
                }
                _ => (false, false),
            };
            if extra.0 {
                model.params.adam_step(&acc, adam)?;
                observer(model);
            }
            if extra.1 {
                acc.clear();
            }
        }
        let n = windows.len() as f64;
        let mean = loss_total(sums[0] / n, sums[1] / n, sums[2] / n, skipped);
        if !mean.l_total.is_finite() {
            return Err(Error::NonFinite("epoch loss"));
        }
        if let Some(first) = trace.first().map(|b: &LossBreakdown| b.l_total) {
            if mean.l_total > settings.divergence_factor * first {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss: mean.l_total,
                    initial: first,
                    factor: settings.divergence_factor,
                });
            }
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Runs one stage; returns the mean loss of every epoch.
pub fn run_stage(model: &mut PmsModel, windows: &[UnitWindow], stage: &Stage, settings: &TrainSettings) -> Result<Vec<LossBreakdown>> {
    run_stage_with(model, windows, stage, settings, &mut |_| {})
}

/// Runs every stage of the plan, writing `<stem>.stage<k>.pms` after stage
/// `k` when `checkpoint_stem` is given.
pub fn train_model(
    model: &mut PmsModel,
    windows: &[UnitWindow],
    settings: &TrainSettings,
    checkpoint_stem: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    let mut records = Vec::new();
    for (k, stage) in settings.plan.stages.iter().enumerate() {
        let trace = run_stage(model, windows, stage, settings)?;
        records.extend(trace.into_iter().enumerate().map(|(e, loss)| EpochRecord {
            stage: k + 1,
            epoch: e + 1,
            loss,
        }));
        if let Some(stem) = checkpoint_stem {
            save_model_file(model, &suffixed(stem, &format!("stage{}.pms", k + 1)))?;
        }
    }
    Ok(records)
}

fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Normalizes every sequence by its own extrema and cuts windows.
pub fn prepare_windows(seqs: &[MotionSequence], settings: &TrainSettings) -> Result<(Vec<UnitWindow>, BTreeMap<String, NormStats>)> {
    let mut norms = BTreeMap::new();
    let mut windows = Vec::new();
    for seq in seqs {
        let (normed, stats) = normalize_action(seq)?;
        if norms.insert(seq.name.clone(), stats).is_some() {
            return Err(Error::Data(format!("duplicate action name `{}`", seq.name)));
        }
        windows.extend(make_windows(&normed, settings.input_len, settings.output_len, settings.extended, settings.stride)?);
    }
    Ok((windows, norms))
}

/// One trained model and its log.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// The action, in per-action mode.
    pub action: Option<String>,
    pub model: PmsModel,
    pub log: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn file_stem(&self) -> String {
        match &self.action {
            Some(a) => format!("model.{a}"),
            None => "model".into(),
        }
    }
}

/// Trains according to `config`. With `out_dir`, writes `model.pms` (or
/// `model.<action>.pms` per action), stage checkpoints and `train.log` /
/// `train.<action>.log`.
pub fn train_multistage(data: &[MotionSequence], config: &RunConfig, out_dir: Option<&Path>) -> Result<Vec<TrainedModel>> {
    let settings = TrainSettings::from_config(config)?;
    let joints = data.first().ok_or_else(|| Error::Data("no sequences".into()))?.joints;
    if let Some(s) = data.iter().find(|s| s.joints != joints) {
        return Err(Error::Data(format!("`{}` has {} joints, expected {joints}", s.name, s.joints)));
    }
    let model_cfg = config.model_config(joints)?;
    let groups: Vec<(Option<String>, Vec<MotionSequence>)> = match settings.mode {
        TrainMode::Pooled => vec![(None, data.to_vec())],
        TrainMode::PerAction => data.iter().map(|s| (Some(s.name.clone()), vec![s.clone()])).collect(),
    };
    let mut out = Vec::new();
    for (action, seqs) in groups {
        let (windows, norms) = prepare_windows(&seqs, &settings)?;
        if windows.is_empty() {
            return Err(Error::Data(format!(
                "no windows of {} frames in {}",
                settings.input_len + settings.output_len,
                action.as_deref().unwrap_or("the data")
            )));
        }
        let mut model = PmsModel::new(model_cfg.clone(), settings.seed)?;
        model.norm = norms;
        let mut trained = TrainedModel {
            action,
            model,
            log: Vec::new(),
        };
        let stem = out_dir.map(|d| d.join(trained.file_stem()));
        trained.log = train_model(&mut trained.model, &windows, &settings, stem.as_deref())?;
        if let (Some(dir), Some(stem)) = (out_dir, &stem) {
            save_model_file(&trained.model, &suffixed(stem, "pms"))?;
            let log_name = match &trained.action {
                Some(a) => format!("train.{a}.log"),
                None => "train.log".into(),
            };
            std::fs::write(dir.join(log_name), log_text(&trained.log))?;
        }
        out.push(trained);
    }
    Ok(out)
}
