//! Full-time loss `L_a = L_p + L_c + L_f` and MPJPE.
//!
//! All L1 terms are mean absolute differences over the compared frames:
//!
//! - `L_c`: the whole `L`-frame prediction.
//! - `L_p`: one term per `Δ` in `past_deltas`, over the first `Δ` frames.
//! - `L_f`: one term per `Δ` in `future_deltas`, over the first `Δ` frames of
//!   an autoregressive rollout; skipped when fewer than `Δ` ground-truth
//!   future frames exist.
//!
//! Frames are flat `J·3` rows. The [`tape`] submodule evaluates the same
//! terms on a batched autodiff graph.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub past_deltas: Vec<usize>,
    pub future_deltas: Vec<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            past_deltas: vec![2, 5, 10],
            future_deltas: vec![20, 30],
        }
    }
}

impl LossConfig {
    pub fn validate(&self, output_len: usize) -> Result<()> {
        if self.past_deltas.iter().chain(&self.future_deltas).any(|&d| d == 0) {
            return Err(Error::Config("loss deltas must be at least 1".into()));
        }
        if let Some(&d) = self.past_deltas.iter().find(|&&d| d > output_len) {
            return Err(Error::Config(format!("past delta {d} exceeds output length {output_len}")));
        }
        Ok(())
    }

    pub fn max_future(&self) -> usize {
        self.future_deltas.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_past: f64,
    pub l_current: f64,
    pub l_future: f64,
    pub l_total: f64,
    pub skipped_future_terms: usize,
}

pub fn loss_total(l_past: f64, l_current: f64, l_future: f64, skipped_future_terms: usize) -> LossBreakdown {
    LossBreakdown {
        l_past,
        l_current,
        l_future,
        l_total: l_past + l_current + l_future,
        skipped_future_terms,
    }
}

fn check_frames(op: &'static str, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
    let width = |f: &[Vec<f64>]| f.first().map_or(0, Vec::len);
    if pred.len() != truth.len() || pred.iter().chain(truth).any(|f| f.len() != width(pred)) {
        return Err(Error::shape(op, &[pred.len(), width(pred)], &[truth.len(), width(truth)]));
    }
    if pred.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

fn mean_l1(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            sum += (a - b).abs();
        }
        n += p.len();
    }
    sum / n as f64
}

pub fn loss_current(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_frames("loss_current", pred, truth)?;
    Ok(mean_l1(pred, truth))
}

pub fn loss_past(pred: &[Vec<f64>], truth: &[Vec<f64>], deltas: &[usize]) -> Result<f64> {
    check_frames("loss_past", pred, truth)?;
    let mut total = 0.0;
    for &d in deltas {
        if d == 0 || d > pred.len() {
            return Err(Error::Config(format!("past delta {d} outside 1..={}", pred.len())));
        }
        total += mean_l1(&pred[..d], &truth[..d]);
    }
    Ok(total)
}

/// `rollout` and `future_truth` both start at the first predicted frame.
/// Returns the summed terms and the number skipped for lack of frames.
pub fn loss_future(rollout: &[Vec<f64>], future_truth: &[Vec<f64>], deltas: &[usize]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut skipped = 0;
    for &d in deltas {
        if d == 0 || rollout.len() < d || future_truth.len() < d {
            skipped += 1;
            continue;
        }
        check_frames("loss_future", &rollout[..d], &future_truth[..d])?;
        total += mean_l1(&rollout[..d], &future_truth[..d]);
    }
    Ok((total, skipped))
}

/// Mean Euclidean joint error over all frames and joints.
pub fn mpjpe(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_frames("mpjpe", pred, truth)?;
    if pred[0].len() % 3 != 0 {
        return Err(Error::shape("mpjpe", &[pred[0].len()], &[3]));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (pj, tj) in p.chunks_exact(3).zip(t.chunks_exact(3)) {
            let d2: f64 = pj.iter().zip(tj).map(|(a, b)| (a - b) * (a - b)).sum();
            sum += d2.sqrt();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Batched loss terms on the autodiff tape. Each frame is a `[batch, J·3]`
/// matrix; rows are windows.
pub mod tape {
    use super::LossConfig;
    use crate::error::{Error, Result};
    use crate::numerics::{Graph, Var};

    /// Mean |pred − truth| over the first `frames` frames and the rows where
    /// `row_mask` is 1. `None` when no row qualifies.
    pub fn masked_mean_l1(
        g: &mut Graph,
        pred: &[Var],
        truth: &[Var],
        frames: usize,
        row_mask: Option<&[f64]>,
    ) -> Result<Option<Var>> {
        if pred.len() < frames || truth.len() < frames || frames == 0 {
            return Err(Error::shape("masked_mean_l1", &[pred.len()], &[truth.len(), frames]));
        }
        let (rows, cols) = (g.value(pred[0]).rows(), g.value(pred[0]).cols());
        let valid = row_mask.map_or(rows as f64, |m| m.iter().sum());
        if valid == 0.0 {
            return Ok(None);
        }
        let elem_mask = row_mask.map(|m| m.iter().flat_map(|&r| std::iter::repeat(r).take(cols)).collect::<Vec<f64>>());
        let mut sums = Vec::with_capacity(frames);
        for i in 0..frames {
            let d = g.sub(pred[i], truth[i])?;
            let mut a = g.abs(d)?;
            if let Some(m) = &elem_mask {
                a = g.mul_const(a, m.clone())?;
            }
            sums.push(g.sum(a)?);
        }
        let scale = 1.0 / (valid * frames as f64 * cols as f64);
        let terms: Vec<(Var, f64)> = sums.into_iter().map(|s| (s, scale)).collect();
        Ok(Some(g.weighted_sum(&terms)?))
    }

    /// Loss nodes for one batch plus how many (window, Δ) future terms were
    /// skipped.
    pub struct TapeLoss {
        pub past: Var,
        pub current: Var,
        pub future: Option<Var>,
        pub total: Var,
        pub skipped_future_terms: usize,
    }

    /// `pred` holds at least `L` frames (more when a rollout is supervised);
    /// `truth` holds the same number of frames with zero rows where a window
    /// has no ground truth; `future_len[b]` counts window `b`'s available
    /// future frames.
    pub fn full_time_loss(
        g: &mut Graph,
        pred: &[Var],
        truth: &[Var],
        output_len: usize,
        future_len: &[usize],
        cfg: &LossConfig,
        with_future: bool,
    ) -> Result<TapeLoss> {
        let current = masked_mean_l1(g, pred, truth, output_len, None)?.expect("all rows valid");
        let mut past_terms = Vec::new();
        for &d in &cfg.past_deltas {
            past_terms.push((masked_mean_l1(g, pred, truth, d, None)?.expect("all rows valid"), 1.0));
        }
        let past = if past_terms.is_empty() {
            g.scale(current, 0.0)?
        } else {
            g.weighted_sum(&past_terms)?
        };
        let mut future_terms = Vec::new();
        let mut skipped = 0;
        if with_future {
            for &d in &cfg.future_deltas {
                let mask: Vec<f64> = future_len.iter().map(|&n| if n >= d { 1.0 } else { 0.0 }).collect();
                skipped += mask.iter().filter(|&&m| m == 0.0).count();
                if d > pred.len() {
                    continue;
                }
                if let Some(t) = masked_mean_l1(g, pred, truth, d, Some(&mask))? {
                    future_terms.push((t, 1.0));
                }
            }
        }
        let future = if future_terms.is_empty() {
            None
        } else {
            Some(g.weighted_sum(&future_terms)?)
        };
        let mut parts = vec![(past, 1.0), (current, 1.0)];
        if let Some(f) = future {
            parts.push((f, 1.0));
        }
        let total = g.weighted_sum(&parts)?;
        Ok(TapeLoss {
            past,
            current,
            future,
            total,
            skipped_future_terms: skipped,
        })
    }
}
