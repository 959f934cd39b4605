//! The PMS network.
//!
//! For every scale `δ` a velocity branch (and, with acceleration correction
//! on, an acceleration branch) maps the fused increment feature to a
//! predicted increment: per-step `fc_in`, a stacked LSTM over the `δ` steps,
//! `fc_mid` with batch norm / dropout / activation, then `fc_out_a` and
//! `fc_out_b`. The corrected increment extrapolates the anchor segment frame
//! by frame,
//!
//! ```text
//! X̂[n] = S₅[n] + sign·γₙ·ΔX̂[n]
//! ```
//!
//! and scales shorter than `L` repeat this on their own predictions until
//! `L` frames exist. Scale outputs are blended with weights `w_δ`; with
//! `adjust_rounds > 1` the blend is fed back as context and every branch is
//! recomputed.

pub mod config;
pub mod forward;
pub mod persist;

use std::collections::BTreeMap;

pub use config::{FusionMode, GammaSchedule, ModelConfig};
pub use forward::{Forward, ForwardMode, ShortOutput};
pub use persist::{load_model, load_model_file, save_model, save_model_file, FORMAT_VERSION, MAGIC};

use crate::dataio::NormStats;
use crate::error::{Error, Result};
use crate::increments::Segment;
use crate::numerics::layers::uniform_init;
use crate::numerics::{ParamGroup, RngState, RunningStats, Stream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BranchKind {
    Velocity,
    Acceleration,
}

impl BranchKind {
    pub fn tag(self) -> &'static str {
        match self {
            BranchKind::Velocity => "vel",
            BranchKind::Acceleration => "acc",
        }
    }
}

/// Parameter-name prefix of one branch, e.g. `s10.vel`.
pub fn branch_prefix(delta: usize, kind: BranchKind) -> String {
    format!("s{delta}.{}", kind.tag())
}

/// Batch-norm running statistics of one branch at one rollout step. Each
/// step of a scale's rollout sees its own activation distribution.
pub fn running_key(prefix: &str, step: usize) -> String {
    format!("{prefix}.step{step}")
}

/// Learnable parameters, batch-norm running statistics, fixed
/// hyperparameters and the normalization statistics of the training data.
///
/// Adam moments live in `params` while training but are not persisted.
#[derive(Clone, Debug)]
pub struct PmsModel {
    pub config: ModelConfig,
    pub params: ParamGroup,
    /// Keyed by branch prefix.
    pub running: BTreeMap<String, RunningStats>,
    /// Keyed by action name.
    pub norm: BTreeMap<String, NormStats>,
}

impl PartialEq for PmsModel {
    /// Equality of everything that is persisted (optimizer state excluded).
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.running == other.running
            && self.norm == other.norm
            && self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|((na, a), (nb, b))| {
                na == nb && a.dims() == b.dims() && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One predicted short horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `L` flat frames.
    pub frames: Vec<Vec<f64>>,
    /// Each scale's own `L`-frame prediction from the final round.
    pub branches: Vec<(usize, Vec<Vec<f64>>)>,
    pub model_id: u64,
    pub window_id: Option<String>,
}

impl PmsModel {
    /// A model with every parameter drawn uniformly from `±1/√fan_in`
    /// (batch-norm scale 1, shift 0).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed, Stream::Init).generator();
        let mut params = ParamGroup::new();
        for (name, dims, fan_in) in param_layout(&config) {
            let t = if name.ends_with("bn.gamma") {
                Tensor::filled(dims, 1.0)
            } else if name.ends_with("bn.beta") {
                Tensor::zeros(dims)
            } else {
                uniform_init(dims, fan_in, &mut rng)
            };
            params.insert(name, t);
        }
        Ok(Self::assemble(config, params))
    }

    /// A model whose learnable parameters are all zero, batch-norm scales
    /// included.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamGroup::new();
        for (name, dims, _) in param_layout(&config) {
            params.insert(name, Tensor::zeros(dims));
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ParamGroup) -> Self {
        let running = branch_list(&config)
            .into_iter()
            .filter(|_| config.bn_relu)
            .flat_map(|(d, k)| (0..config.output_len.div_ceil(d)).map(move |s| running_key(&branch_prefix(d, k), s)))
            .map(|key| (key, RunningStats::new(config.hidden)))
            .collect();
        PmsModel {
            config,
            params,
            running,
            norm: BTreeMap::new(),
        }
    }

    /// FNV-1a hash over the persisted state, used as the model id.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for (k, v) in self.config.to_kv() {
            h.bytes(k.as_bytes());
            h.bytes(v.as_bytes());
        }
        for (name, t) in self.params.iter() {
            h.bytes(name.as_bytes());
            t.values().iter().for_each(|v| h.bytes(&v.to_le_bytes()));
        }
        for (name, r) in &self.running {
            h.bytes(name.as_bytes());
            r.mean.iter().chain(&r.var).for_each(|v| h.bytes(&v.to_le_bytes()));
        }
        for (name, n) in &self.norm {
            h.bytes(name.as_bytes());
            n.min.iter().chain(&n.max).for_each(|v| h.bytes(&v.to_le_bytes()));
        }
        h.0
    }

    /// Per-frame attenuation for a segment of `delta` frames.
    pub fn gamma(&self, delta: usize) -> Result<Vec<f64>> {
        self.config
            .gamma
            .coefficients(delta)
            .ok_or_else(|| Error::Config(format!("gamma has fewer than {delta} entries")))
    }

    /// Short prediction for one window (inference mode).
    pub fn predict_short(&self, window: &[Vec<f64>]) -> Result<Prediction> {
        let mut f = Forward::new(self, ForwardMode::Infer, false);
        let frames = f.input(&[window])?;
        let out = f.predict_short(&frames)?;
        let take = |vars: &[crate::numerics::Var]| vars.iter().map(|&v| f.graph.value(v).row(0).to_vec()).collect();
        Ok(Prediction {
            frames: take(&out.frames),
            branches: out.branches.iter().map(|(d, v)| (*d, take(v))).collect(),
            model_id: self.fingerprint(),
            window_id: None,
        })
    }

    /// `horizon` frames by repeated short prediction (inference mode).
    pub fn predict_long(&self, window: &[Vec<f64>], horizon: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_batch(&[window], horizon)?.remove(0))
    }

    /// `horizon` frames for each window, evaluated as one batch.
    pub fn predict_batch(&self, windows: &[&[Vec<f64>]], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut f = Forward::new(self, ForwardMode::Infer, false);
        let frames = f.input(windows)?;
        let out = f.predict_long(&frames, horizon)?;
        Ok((0..windows.len())
            .map(|b| out.iter().map(|&v| f.graph.value(v).row(b).to_vec()).collect())
            .collect())
    }
}

/// `(δ, kind)` for every branch the configuration instantiates.
pub fn branch_list(config: &ModelConfig) -> Vec<(usize, BranchKind)> {
    let mut out = Vec::new();
    for &d in &config.scales.deltas {
        out.push((d, BranchKind::Velocity));
        if config.accel_correction {
            out.push((d, BranchKind::Acceleration));
        }
    }
    out
}

/// `(name, dims, fan_in)` of every learnable parameter.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let (d, h) = (config.dim(), config.hidden);
    let mut out = Vec::new();
    for (delta, kind) in branch_list(config) {
        let p = branch_prefix(delta, kind);
        let mut fc = |name: &str, input: usize, output: usize| {
            out.push((format!("{p}.{name}.w"), vec![input, output], input));
            if config.fc_bias {
                out.push((format!("{p}.{name}.b"), vec![output], input));
            }
        };
        fc("fc_in", d, h);
        fc("fc_mid", h, h);
        fc("fc_out_a", h, h);
        fc("fc_out_b", h, d);
        for l in 0..config.lstm_layers {
            out.push((format!("{p}.lstm{l}.w_ih"), vec![h, 4 * h], h));
            out.push((format!("{p}.lstm{l}.w_hh"), vec![h, 4 * h], h));
            out.push((format!("{p}.lstm{l}.b"), vec![4 * h], h));
        }
        if config.bn_relu {
            out.push((format!("{p}.bn.gamma"), vec![h], h));
            out.push((format!("{p}.bn.beta"), vec![h], h));
        }
    }
    out
}

fn check_same(op: &'static str, a: &Segment, b: &Segment) -> Result<()> {
    let w = |s: &Segment| s.first().map_or(0, Vec::len);
    if a.len() != b.len() || a.iter().chain(b).any(|f| f.len() != w(a)) {
        return Err(Error::shape(op, &[a.len(), w(a)], &[b.len(), w(b)]));
    }
    Ok(())
}

/// Acceleration-corrected velocity increment: the elementwise sum.
pub fn correct_velocity(v_inc: &Segment, a_inc: &Segment) -> Result<Segment> {
    check_same("correct_velocity", v_inc, a_inc)?;
    Ok(v_inc
        .iter()
        .zip(a_inc)
        .map(|(v, a)| v.iter().zip(a).map(|(x, y)| x + y).collect())
        .collect())
}

/// Frame `n` of the result is `last[n] + sign·γₙ·increment[n]`.
pub fn predict_segment(last: &Segment, increment: &Segment, gamma: &[f64], sign: f64) -> Result<Segment> {
    check_same("predict_segment", last, increment)?;
    if gamma.len() < last.len() {
        return Err(Error::Config(format!("gamma has {} entries, segment has {} frames", gamma.len(), last.len())));
    }
    Ok(last
        .iter()
        .zip(increment)
        .zip(gamma)
        .map(|((s, inc), g)| s.iter().zip(inc).map(|(x, d)| x + sign * g * d).collect())
        .collect())
}

/// Frame-wise `Σ w_δ·X̂^δ`.
pub fn combine_branches(outputs: &[Segment], weights: &[f64]) -> Result<Segment> {
    if outputs.is_empty() || outputs.len() != weights.len() {
        return Err(Error::shape("combine_branches", &[outputs.len()], &[weights.len()]));
    }
    for o in &outputs[1..] {
        check_same("combine_branches", &outputs[0], o)?;
    }
    let mut out: Segment = outputs[0].iter().map(|f| vec![0.0; f.len()]).collect();
    for (o, &w) in outputs.iter().zip(weights) {
        for (acc, f) in out.iter_mut().zip(o) {
            for (a, v) in acc.iter_mut().zip(f) {
                *a += w * v;
            }
        }
    }
    Ok(out)
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(rows: &[&[f64]]) -> Segment {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn correction_cases() {
        let v = seg(&[&[1.0, 1.0, 1.0]]);
        let a = seg(&[&[2.0, 2.0, 2.0]]);
        assert_eq!(correct_velocity(&v, &a).unwrap(), seg(&[&[3.0, 3.0, 3.0]]));
        let z = seg(&[&[0.0, 0.0, 0.0]]);
        assert_eq!(correct_velocity(&v, &z).unwrap(), v);
        assert!(correct_velocity(&v, &seg(&[&[1.0, 1.0]])).is_err());
    }

    #[test]
    fn segment_prediction_cases() {
        let last = seg(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let inc = seg(&[&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]]);
        assert_eq!(predict_segment(&last, &inc, &[0.0, 0.0], -1.0).unwrap(), last);
        let out = predict_segment(&last, &inc, &[1.0, 1.0], -1.0).unwrap();
        assert_eq!(out, seg(&[&[0.5, 1.5, 2.5], &[3.5, 4.5, 5.5]]));
        let half = predict_segment(&last, &inc, &[1.0, 0.5], 1.0).unwrap();
        assert_eq!(half[0][0] - last[0][0], 2.0 * (half[1][0] - last[1][0]));
        assert!(predict_segment(&last, &inc, &[1.0], -1.0).is_err());
    }

    #[test]
    fn parameter_layout_counts() {
        let c = ModelConfig::new(2);
        let layout = param_layout(&c);
        // 6 branches x (4 fc x 2 + 3 lstm x 3 + 2 bn).
        assert_eq!(layout.len(), 6 * 19);
        let mut no_acc = c.clone();
        no_acc.accel_correction = false;
        no_acc.fc_bias = false;
        assert_eq!(param_layout(&no_acc).len(), 3 * 15);
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let mut c = ModelConfig::new(2);
        c.hidden = 4;
        let a = PmsModel::new(c.clone(), 1).unwrap();
        let b = PmsModel::new(c.clone(), 1).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, b);
        let other = PmsModel::new(c, 2).unwrap();
        assert_ne!(a.fingerprint(), other.fingerprint());
    }
}
