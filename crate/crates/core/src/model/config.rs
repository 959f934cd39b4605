use std::collections::BTreeMap;

use crate::config::{fmt_list, parse_bool, parse_list, parse_scalar};
use crate::error::{Error, Result};
use crate::increments::{check_weights, Anchor, FusionWeights, ScaleConfig, WEIGHT_SUM_TOL};
use crate::numerics::Activation;

/// How a scale's increments become the branch input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Convex combination with `alpha` / `beta`.
    Weighted,
    /// The newest raw difference only.
    Newest,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(FusionMode::Weighted),
            "newest" => Ok(FusionMode::Newest),
            other => Err(Error::Config(format!("fusion must be `weighted` or `newest`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Weighted => "weighted",
            FusionMode::Newest => "newest",
        })
    }
}

pub(crate) fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        other => Err(Error::Config(format!("activation must be `relu` or `tanh`, got `{other}`"))),
    }
}

pub(crate) fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
    }
}

/// Attenuation coefficients `γ₁, γ₂, ...` applied to the frames of each
/// predicted segment.
#[derive(Clone, Debug, PartialEq)]
pub enum GammaSchedule {
    /// `γₙ = ρ^(n−1)`.
    Geometric(f64),
    Explicit(Vec<f64>),
}

impl GammaSchedule {
    /// The first `n` coefficients; `None` if an explicit list is too short.
    pub fn coefficients(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            GammaSchedule::Geometric(rho) => Some((0..n).map(|i| rho.powi(i as i32)).collect()),
            GammaSchedule::Explicit(v) => (v.len() >= n).then(|| v[..n].to_vec()),
        }
    }
}

/// Every fixed hyperparameter of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub joints: usize,
    /// Observed frames `K`.
    pub input_len: usize,
    /// Predicted frames `L` per short step.
    pub output_len: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub scales: ScaleConfig,
    /// One entry per scale, aligned with `scales.deltas`.
    pub fusion: Vec<FusionWeights>,
    pub fusion_mode: FusionMode,
    /// Add the acceleration branch's increment to the velocity branch's.
    pub accel_correction: bool,
    pub gamma: GammaSchedule,
    /// Branch blend weights `w_δ`, aligned with `scales.deltas`.
    pub combine_weights: Vec<f64>,
    pub adjust_rounds: usize,
    pub increment_sign: f64,
    pub fc_bias: bool,
    pub bn_relu: bool,
    pub activation: Activation,
    pub dropout: f64,
}

impl ModelConfig {
    /// Defaults for `joints` joints.
    pub fn new(joints: usize) -> Self {
        let scales = ScaleConfig::default();
        let n = scales.deltas.len();
        ModelConfig {
            joints,
            input_len: 50,
            output_len: 10,
            hidden: 256,
            lstm_layers: 3,
            fusion: vec![FusionWeights::default(); n],
            scales,
            fusion_mode: FusionMode::Weighted,
            accel_correction: true,
            gamma: GammaSchedule::Geometric(0.8),
            combine_weights: vec![1.0 / n as f64; n],
            adjust_rounds: 1,
            increment_sign: -1.0,
            fc_bias: true,
            bn_relu: true,
            activation: Activation::Relu,
            dropout: 0.4,
        }
    }

    /// Width of a flat frame, `J·3`.
    pub fn dim(&self) -> usize {
        self.joints * 3
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.joints == 0 || self.hidden == 0 || self.lstm_layers == 0 {
            return bad("joints, hidden and lstm_layers must be positive".into());
        }
        if self.output_len == 0 {
            return bad("output_len must be positive".into());
        }
        if self.output_len > self.input_len {
            return bad(format!("output_len {} exceeds input_len {}", self.output_len, self.input_len));
        }
        self.scales.validate(self.input_len)?;
        let n = self.scales.deltas.len();
        if self.fusion.len() != n || self.combine_weights.len() != n {
            return bad(format!(
                "{} scales but {} fusion entries and {} combine weights",
                n,
                self.fusion.len(),
                self.combine_weights.len()
            ));
        }
        for f in &self.fusion {
            f.validate()?;
        }
        check_weights("combine_weights", &self.combine_weights)?;
        let max_delta = self.scales.deltas[0];
        match self.gamma.coefficients(max_delta) {
            None => {
                return bad(format!("gamma.explicit needs at least {max_delta} entries"));
            }
            Some(g) if g.iter().any(|v| !v.is_finite() || *v < 0.0) => {
                return bad(format!("gamma coefficients must be finite and non-negative: {g:?}"));
            }
            _ => {}
        }
        if self.adjust_rounds == 0 {
            return bad("adjust_rounds must be at least 1".into());
        }
        if self.increment_sign != 1.0 && self.increment_sign != -1.0 {
            return bad(format!("increment_sign must be 1 or -1, got {}", self.increment_sign));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Removes scale `delta` and renormalizes the blend weights.
    pub fn drop_scale(&mut self, delta: usize) -> Result<()> {
        let i = self
            .scales
            .deltas
            .iter()
            .position(|&d| d == delta)
            .ok_or_else(|| Error::Config(format!("scale {delta} is not configured")))?;
        if self.scales.deltas.len() == 1 {
            return Err(Error::Config("cannot remove the only scale".into()));
        }
        self.scales.deltas.remove(i);
        self.fusion.remove(i);
        self.combine_weights.remove(i);
        let total: f64 = self.combine_weights.iter().sum();
        if total <= WEIGHT_SUM_TOL {
            let n = self.combine_weights.len() as f64;
            self.combine_weights.iter_mut().for_each(|w| *w = 1.0 / n);
        } else {
            self.combine_weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(())
    }

    /// The `key = value` pairs that fully describe this configuration.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("joints".to_string(), self.joints.to_string()),
            ("input_len".into(), self.input_len.to_string()),
            ("output_len".into(), self.output_len.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("lstm_layers".into(), self.lstm_layers.to_string()),
            ("scales".into(), fmt_list(&self.scales.deltas)),
            ("anchor".into(), self.scales.anchor.to_string()),
        ];
        for (d, f) in self.scales.deltas.iter().zip(&self.fusion) {
            kv.push((format!("alpha.{d}"), fmt_list(&f.alpha)));
            kv.push((format!("beta.{d}"), fmt_list(&f.beta)));
        }
        let (rho, explicit) = match &self.gamma {
            GammaSchedule::Geometric(r) => (r.to_string(), String::new()),
            GammaSchedule::Explicit(v) => ("0.8".to_string(), fmt_list(v)),
        };
        kv.extend([
            ("fusion".to_string(), self.fusion_mode.to_string()),
            ("accel_correction".into(), self.accel_correction.to_string()),
            ("gamma.rho".into(), rho),
            ("gamma.explicit".into(), explicit),
            ("combine_weights".into(), fmt_list(&self.combine_weights)),
            ("adjust_rounds".into(), self.adjust_rounds.to_string()),
            ("increment_sign".into(), self.increment_sign.to_string()),
            ("fc_bias".into(), self.fc_bias.to_string()),
            ("bn_relu".into(), self.bn_relu.to_string()),
            ("activation".into(), activation_name(self.activation).to_string()),
            ("dropout".into(), self.dropout.to_string()),
        ]);
        kv
    }

    /// Reads a configuration from resolved keys; absent keys keep their
    /// defaults and `combine_weights` may be empty for a uniform blend.
    pub fn from_kv(kv: &BTreeMap<String, String>, joints: usize) -> Result<Self> {
        let mut c = ModelConfig::new(joints);
        let get = |k: &str| kv.get(k).map(String::as_str);
        if let Some(v) = get("joints") {
            c.joints = parse_scalar("joints", v)?;
        }
        if let Some(v) = get("input_len") {
            c.input_len = parse_scalar("input_len", v)?;
        }
        if let Some(v) = get("output_len") {
            c.output_len = parse_scalar("output_len", v)?;
        }
        if let Some(v) = get("hidden") {
            c.hidden = parse_scalar("hidden", v)?;
        }
        if let Some(v) = get("lstm_layers") {
            c.lstm_layers = parse_scalar("lstm_layers", v)?;
        }
        if let Some(v) = get("scales") {
            c.scales.deltas = parse_list("scales", v)?;
        }
        if let Some(v) = get("anchor") {
            c.scales.anchor = v.parse::<Anchor>()?;
        }
        c.fusion = c
            .scales
            .deltas
            .iter()
            .map(|d| {
                let mut f = FusionWeights::default();
                if let Some(v) = get(&format!("alpha.{d}")) {
                    f.alpha = fixed(&format!("alpha.{d}"), v)?;
                }
                if let Some(v) = get(&format!("beta.{d}")) {
                    f.beta = fixed(&format!("beta.{d}"), v)?;
                }
                Ok(f)
            })
            .collect::<Result<_>>()?;
        if let Some(v) = get("fusion") {
            c.fusion_mode = v.parse()?;
        }
        if let Some(v) = get("accel_correction") {
            c.accel_correction = parse_bool("accel_correction", v)?;
        }
        let rho = match get("gamma.rho") {
            Some(v) => parse_scalar("gamma.rho", v)?,
            None => 0.8,
        };
        c.gamma = match get("gamma.explicit").filter(|v| !v.trim().is_empty()) {
            Some(v) => GammaSchedule::Explicit(parse_list("gamma.explicit", v)?),
            None => GammaSchedule::Geometric(rho),
        };
        let n = c.scales.deltas.len();
        c.combine_weights = match get("combine_weights").filter(|v| !v.trim().is_empty()) {
            Some(v) => parse_list("combine_weights", v)?,
            None => vec![1.0 / n as f64; n],
        };
        if let Some(v) = get("adjust_rounds") {
            c.adjust_rounds = parse_scalar("adjust_rounds", v)?;
        }
        if let Some(v) = get("increment_sign") {
            c.increment_sign = parse_scalar("increment_sign", v)?;
        }
        if let Some(v) = get("fc_bias") {
            c.fc_bias = parse_bool("fc_bias", v)?;
        }
        if let Some(v) = get("bn_relu") {
            c.bn_relu = parse_bool("bn_relu", v)?;
        }
        if let Some(v) = get("activation") {
            c.activation = parse_activation(v)?;
        }
        if let Some(v) = get("dropout") {
            c.dropout = parse_scalar("dropout", v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn fixed<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let list: Vec<f64> = parse_list(key, v)?;
    list.try_into()
        .map_err(|l: Vec<f64>| Error::Config(format!("`{key}` needs {N} values, got {}", l.len())))
}
