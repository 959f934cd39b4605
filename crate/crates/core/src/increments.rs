//! Multi-scale segmentation and incremental features.
//!
//! For a scale `δ` the observed window is cut into five consecutive
//! `δ`-frame segments `S₁..S₅`. Velocity increments are `ΔXₖ = Sₖ₊₁ − Sₖ`
//! (four of them), acceleration increments `ΔΔXₖ = ΔXₖ₊₁ − ΔXₖ` (three),
//! and each family is fused into a single `δ`-frame feature by a convex
//! weighted sum.
//!
//! These are the plain-array forms; the model evaluates the same formulas
//! on the autodiff tape.

use std::ops::Range;

use crate::error::{Error, Result};

pub const SEGMENTS: usize = 5;
pub const VELOCITY_DIFFS: usize = SEGMENTS - 1;
pub const ACCEL_DIFFS: usize = SEGMENTS - 2;

/// Weight sums must be within this of one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// `δ` consecutive frames, each a flat `J·3` row.
pub type Segment = Vec<Vec<f64>>;

/// Where the five segments sit inside the observed window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    /// The most recent `5·δ` frames.
    End,
    /// The first `5·δ` frames.
    Start,
}

impl std::str::FromStr for Anchor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end" => Ok(Anchor::End),
            "start" => Ok(Anchor::Start),
            other => Err(Error::Config(format!("anchor must be `end` or `start`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Anchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Anchor::End => "end",
            Anchor::Start => "start",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleConfig {
    /// Segment lengths, strictly decreasing (default 10, 5, 2).
    pub deltas: Vec<usize>,
    pub anchor: Anchor,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            deltas: vec![10, 5, 2],
            anchor: Anchor::End,
        }
    }
}

impl ScaleConfig {
    pub fn validate(&self, input_len: usize) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        if self.deltas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("scales must be strictly decreasing, got {:?}", self.deltas)));
        }
        for &d in &self.deltas {
            if d == 0 {
                return Err(Error::Config("scale 0 is not allowed".into()));
            }
            if SEGMENTS * d > input_len {
                return Err(Error::InsufficientHistory {
                    needed: SEGMENTS * d,
                    available: input_len,
                });
            }
        }
        Ok(())
    }
}

/// Fusion coefficients for one scale: four for velocity, three for acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    pub alpha: [f64; VELOCITY_DIFFS],
    pub beta: [f64; ACCEL_DIFFS],
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            alpha: [0.1, 0.2, 0.3, 0.4],
            beta: [0.2, 0.3, 0.5],
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        check_weights("alpha", &self.alpha)?;
        check_weights("beta", &self.beta)
    }
}

pub fn check_weights(label: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::Weights(format!("{label} coefficients must be non-negative: {w:?}")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Weights(format!("{label} coefficients sum to {sum}, not 1")));
    }
    Ok(())
}

/// Frame range covered by the five segments of a `window_len`-frame window.
pub fn covered_range(window_len: usize, delta: usize, anchor: Anchor) -> Result<Range<usize>> {
    let span = SEGMENTS * delta;
    if delta == 0 || window_len < span {
        return Err(Error::InsufficientHistory {
            needed: span,
            available: window_len,
        });
    }
    Ok(match anchor {
        Anchor::End => window_len - span..window_len,
        Anchor::Start => 0..span,
    })
}

/// Five contiguous, non-overlapping `δ`-frame segments, oldest first.
pub fn segment(window: &[Vec<f64>], delta: usize, anchor: Anchor) -> Result<Vec<Segment>> {
    let range = covered_range(window.len(), delta, anchor)?;
    Ok(window[range].chunks_exact(delta).map(<[Vec<f64>]>::to_vec).collect())
}

fn check_shapes(op: &'static str, parts: &[Segment], count: usize) -> Result<()> {
    if parts.len() != count {
        return Err(Error::shape(op, &[count], &[parts.len()]));
    }
    let frames = parts[0].len();
    let width = parts[0].first().map_or(0, Vec::len);
    for p in parts {
        if p.len() != frames || p.iter().any(|f| f.len() != width) {
            let w = p.first().map_or(0, Vec::len);
            return Err(Error::shape(op, &[frames, width], &[p.len(), w]));
        }
    }
    Ok(())
}

fn consecutive_diffs(parts: &[Segment]) -> Vec<Segment> {
    parts
        .windows(2)
        .map(|pair| {
            pair[1]
                .iter()
                .zip(&pair[0])
                .map(|(newer, older)| newer.iter().zip(older).map(|(a, b)| a - b).collect())
                .collect()
        })
        .collect()
}

/// `ΔXₖ = Sₖ₊₁ − Sₖ`, `k = 1..4`.
pub fn velocity_diffs(segments: &[Segment]) -> Result<Vec<Segment>> {
    check_shapes("velocity_diffs", segments, SEGMENTS)?;
    Ok(consecutive_diffs(segments))
}

/// `ΔΔXₖ = ΔXₖ₊₁ − ΔXₖ`, `k = 1..3`.
pub fn accel_diffs(velocity: &[Segment]) -> Result<Vec<Segment>> {
    check_shapes("accel_diffs", velocity, VELOCITY_DIFFS)?;
    Ok(consecutive_diffs(velocity))
}

fn weighted(diffs: &[Segment], weights: &[f64]) -> Segment {
    let mut out: Segment = diffs[0].iter().map(|f| f.iter().map(|v| weights[0] * v).collect()).collect();
    for (d, &w) in diffs.iter().zip(weights).skip(1) {
        for (of, df) in out.iter_mut().zip(d) {
            for (o, v) in of.iter_mut().zip(df) {
                *o += w * v;
            }
        }
    }
    out
}

/// `X_v = Σ αᵢ ΔXᵢ`.
pub fn fuse_velocity(diffs: &[Segment], alpha: &[f64; VELOCITY_DIFFS]) -> Result<Segment> {
    check_shapes("fuse_velocity", diffs, VELOCITY_DIFFS)?;
    check_weights("alpha", alpha)?;
    Ok(weighted(diffs, alpha))
}

/// `X_a = Σ βᵢ ΔΔXᵢ`.
pub fn fuse_accel(diffs: &[Segment], beta: &[f64; ACCEL_DIFFS]) -> Result<Segment> {
    check_shapes("fuse_accel", diffs, ACCEL_DIFFS)?;
    check_weights("beta", beta)?;
    Ok(weighted(diffs, beta))
}

/// Everything computed for one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleIncrements {
    pub delta: usize,
    pub segments: Vec<Segment>,
    pub velocity: Vec<Segment>,
    pub accel: Vec<Segment>,
    pub fused_velocity: Segment,
    pub fused_accel: Segment,
}

pub fn scale_increments(
    window: &[Vec<f64>],
    delta: usize,
    anchor: Anchor,
    weights: &FusionWeights,
) -> Result<ScaleIncrements> {
    let segments = segment(window, delta, anchor)?;
    let velocity = velocity_diffs(&segments)?;
    let accel = accel_diffs(&velocity)?;
    let fused_velocity = fuse_velocity(&velocity, &weights.alpha)?;
    let fused_accel = fuse_accel(&accel, &weights.beta)?;
    Ok(ScaleIncrements {
        delta,
        segments,
        velocity,
        accel,
        fused_velocity,
        fused_accel,
    })
}
