//! MPJPE at fixed horizons for a model and two reference predictors.
//!
//! The error at a horizon is the mean joint distance at that frame. Values
//! are averaged over windows within an action, then over actions, so every
//! action weighs the same.

use std::collections::BTreeMap;

use crate::dataio::{make_windows, normalize_action, normalize_with, MotionSequence, NormStats, UnitWindow};
use crate::error::{Error, Result};
use crate::losses::mpjpe;
use crate::model::PmsModel;

/// Windows predicted together.
const EVAL_BATCH: usize = 256;

/// Errors of one predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    /// Action-balanced MPJPE per horizon, normalized units.
    pub per_horizon: Vec<f64>,
    /// The same in source units.
    pub per_horizon_denorm: Vec<f64>,
    /// Mean over horizons.
    pub average: f64,
    pub average_denorm: f64,
    /// Per action, per horizon, normalized units.
    pub per_action: BTreeMap<String, Vec<f64>>,
    /// Population variance over actions of the per-action averages.
    pub action_variance: f64,
    /// Action-balanced MPJPE averaged over the first `L` frames.
    pub short_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub horizons_ms: Vec<u32>,
    pub horizon_frames: Vec<usize>,
    pub windows: usize,
    pub model: ErrorRow,
    /// Repeats the last observed pose.
    pub zero_velocity: ErrorRow,
    /// Extrapolates the last observed frame-to-frame velocity.
    pub constant_velocity: ErrorRow,
}

/// Predicts `horizon` frames of every window.
pub type Predictor<'a> = dyn Fn(&[&UnitWindow], usize) -> Result<Vec<Vec<Vec<f64>>>> + 'a;

pub fn zero_velocity(windows: &[&UnitWindow], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(windows
        .iter()
        .map(|w| vec![w.observed.last().expect("non-empty window").clone(); horizon])
        .collect())
}

pub fn constant_velocity(windows: &[&UnitWindow], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    windows
        .iter()
        .map(|w| {
            let n = w.observed.len();
            if n < 2 {
                return Err(Error::InsufficientHistory { needed: 2, available: n });
            }
            let (last, prev) = (&w.observed[n - 1], &w.observed[n - 2]);
            Ok((1..=horizon)
                .map(|k| last.iter().zip(prev).map(|(a, b)| a + k as f64 * (a - b)).collect())
                .collect())
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn denorm_frames(frames: &[Vec<f64>], stats: &NormStats) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            stats.invert_flat(&mut f);
            f
        })
        .collect()
}

/// Scores `predict` on `windows`. `norms` maps actions to the statistics
/// that undo their normalization (identity when absent).
pub fn evaluate_predictor(
    predict: &Predictor<'_>,
    windows: &[UnitWindow],
    horizons: &[usize],
    short_len: usize,
    norms: &BTreeMap<String, NormStats>,
) -> Result<ErrorRow> {
    if windows.is_empty() {
        return Err(Error::Data("no evaluation windows".into()));
    }
    let max_h = horizons.iter().copied().max().unwrap_or(0).max(short_len);
    if let Some(w) = windows.iter().find(|w| w.future_len() < max_h) {
        return Err(Error::Data(format!(
            "window at frame {} of `{}` has {} future frames, {max_h} needed",
            w.start,
            w.action,
            w.future_len()
        )));
    }
    let mut by_action: BTreeMap<&str, Vec<&UnitWindow>> = BTreeMap::new();
    for w in windows {
        by_action.entry(&w.action).or_default().push(w);
    }
    let identity = NormStats::identity();
    let mut per_action = BTreeMap::new();
    let mut per_action_denorm = BTreeMap::new();
    let mut short = Vec::new();
    for (action, ws) in &by_action {
        let stats = norms.get(*action).unwrap_or(&identity);
        let mut sums = vec![0.0; horizons.len()];
        let mut sums_denorm = vec![0.0; horizons.len()];
        let mut short_sum = 0.0;
        for chunk in ws.chunks(EVAL_BATCH) {
            let preds = predict(chunk, max_h)?;
            for (w, pred) in chunk.iter().zip(&preds) {
                let truth: Vec<Vec<f64>> = w.future().take(max_h).cloned().collect();
                if pred.len() < max_h {
                    return Err(Error::shape("evaluate", &[max_h], &[pred.len()]));
                }
                let (pd, td) = (denorm_frames(pred, stats), denorm_frames(&truth, stats));
                for (i, &h) in horizons.iter().enumerate() {
                    sums[i] += mpjpe(&pred[h - 1..h], &truth[h - 1..h])?;
                    sums_denorm[i] += mpjpe(&pd[h - 1..h], &td[h - 1..h])?;
                }
                short_sum += mpjpe(&pred[..short_len], &truth[..short_len])?;
            }
        }
        let n = ws.len() as f64;
        per_action.insert(action.to_string(), sums.iter().map(|s| s / n).collect::<Vec<f64>>());
        per_action_denorm.insert(action.to_string(), sums_denorm.iter().map(|s| s / n).collect::<Vec<f64>>());
        short.push(short_sum / n);
    }
    let balanced = |m: &BTreeMap<String, Vec<f64>>| -> Vec<f64> {
        (0..horizons.len()).map(|i| mean(&m.values().map(|v| v[i]).collect::<Vec<_>>())).collect()
    };
    let per_horizon = balanced(&per_action);
    let per_horizon_denorm = balanced(&per_action_denorm);
    let action_means: Vec<f64> = per_action.values().map(|v| mean(v)).collect();
    let grand = mean(&action_means);
    let action_variance = mean(&action_means.iter().map(|m| (m - grand) * (m - grand)).collect::<Vec<_>>());
    Ok(ErrorRow {
        average: mean(&per_horizon),
        average_denorm: mean(&per_horizon_denorm),
        per_horizon,
        per_horizon_denorm,
        per_action,
        action_variance,
        short_term: mean(&short),
    })
}

/// Scores `model` and both reference predictors on identical windows.
pub fn evaluate_model(model: &PmsModel, windows: &[UnitWindow], horizons_ms: &[(u32, usize)]) -> Result<EvalReport> {
    let frames: Vec<usize> = horizons_ms.iter().map(|&(_, f)| f).collect();
    let short_len = model.config.output_len;
    let predict = |ws: &[&UnitWindow], h: usize| {
        let obs: Vec<&[Vec<f64>]> = ws.iter().map(|w| w.observed.as_slice()).collect();
        model.predict_batch(&obs, h)
    };
    Ok(EvalReport {
        horizons_ms: horizons_ms.iter().map(|&(m, _)| m).collect(),
        windows: windows.len(),
        model: evaluate_predictor(&predict, windows, &frames, short_len, &model.norm)?,
        zero_velocity: evaluate_predictor(&zero_velocity, windows, &frames, short_len, &model.norm)?,
        constant_velocity: evaluate_predictor(&constant_velocity, windows, &frames, short_len, &model.norm)?,
        horizon_frames: frames,
    })
}

/// Normalizes each sequence with the model's statistics for its action
/// (or its own extrema when the model has none) and keeps the windows with
/// at least `needed` future frames.
pub fn eval_windows(
    model: &PmsModel,
    seqs: &[MotionSequence],
    stride: usize,
    needed: usize,
) -> Result<(Vec<UnitWindow>, BTreeMap<String, NormStats>)> {
    let (k, l) = (model.config.input_len, model.config.output_len);
    let extended = needed.saturating_sub(l);
    let mut out = Vec::new();
    let mut norms = BTreeMap::new();
    for seq in seqs {
        let (normed, stats) = match model.norm.get(&seq.name) {
            Some(s) => (normalize_with(seq, s)?, *s),
            None => normalize_action(seq)?,
        };
        norms.insert(seq.name.clone(), stats);
        out.extend(
            make_windows(&normed, k, l, extended, stride)?
                .into_iter()
                .filter(|w| w.future_len() >= needed),
        );
    }
    Ok((out, norms))
}

impl EvalReport {
    /// Aligned text table: one row per predictor, one column per horizon.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header: String = self.horizons_ms.iter().map(|h| format!("{:>10}", format!("{h}ms"))).collect();
        out.push_str(&format!("{:<20}{header}{:>10}\n", "normalized", "avg"));
        let rows = [
            ("pms", &self.model),
            ("zero_velocity", &self.zero_velocity),
            ("constant_velocity", &self.constant_velocity),
        ];
        for (name, r) in rows {
            let cells: String = r.per_horizon.iter().map(|v| format!("{v:>10.4}")).collect();
            out.push_str(&format!("{name:<20}{cells}{:>10.4}\n", r.average));
        }
        out.push_str(&format!("{:<20}{header}{:>10}\n", "source units", "avg"));
        for (name, r) in rows {
            let cells: String = r.per_horizon_denorm.iter().map(|v| format!("{v:>10.4}")).collect();
            out.push_str(&format!("{name:<20}{cells}{:>10.4}\n", r.average_denorm));
        }
        out.push_str(&format!("{:<20}{header}{:>10}\n", "pms per action", "avg"));
        for (action, v) in &self.model.per_action {
            let cells: String = v.iter().map(|x| format!("{x:>10.4}")).collect();
            out.push_str(&format!("{action:<20}{cells}{:>10.4}\n", mean(v)));
        }
        out.push_str(&format!("windows = {}, action variance = {:.6}\n", self.windows, self.model.action_variance));
        out
    }

    /// `key = value` lines, e.g. `horizon_ms.80 = 0.0123`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut row = |prefix: &str, r: &ErrorRow| {
            for (h, v) in self.horizons_ms.iter().zip(&r.per_horizon) {
                out.push_str(&format!("{prefix}horizon_ms.{h} = {v}\n"));
            }
            for (h, v) in self.horizons_ms.iter().zip(&r.per_horizon_denorm) {
                out.push_str(&format!("{prefix}denorm.horizon_ms.{h} = {v}\n"));
            }
            out.push_str(&format!("{prefix}average = {}\n", r.average));
            out.push_str(&format!("{prefix}denorm.average = {}\n", r.average_denorm));
            out.push_str(&format!("{prefix}short_term = {}\n", r.short_term));
            out.push_str(&format!("{prefix}action_variance = {}\n", r.action_variance));
            for (action, v) in &r.per_action {
                for (h, x) in self.horizons_ms.iter().zip(v) {
                    out.push_str(&format!("{prefix}action.{action}.horizon_ms.{h} = {x}\n"));
                }
            }
        };
        row("", &self.model);
        row("zero_velocity.", &self.zero_velocity);
        row("constant_velocity.", &self.constant_velocity);
        out.push_str(&format!("windows = {}\n", self.windows));
        out
    }
}
