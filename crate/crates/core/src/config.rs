//! Flat `key = value` run configuration.
//!
//! One `key = value` per line, `#` starts a comment, keys are dotted
//! (`alpha.10 = 0.1,0.2,0.3,0.4`), lists are comma-separated. Values merge
//! as defaults, then a config file, then the `PMS_SEED` environment
//! variable, then command-line overrides. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::dataio::SynthSpec;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;

/// `(key, default, description)` for every fixed key. `alpha.<δ>` and
/// `beta.<δ>` are accepted for any positive `δ`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for initialization, dropout, shuffling and synthesis"),
    ("input_len", "50", "observed frames K per window"),
    ("output_len", "10", "predicted frames L per short step"),
    ("stride", "10", "frames between consecutive window starts"),
    ("extended", "30", "extra ground-truth frames kept per window for rollout losses (max 30)"),
    ("hidden", "256", "hidden width H of every branch"),
    ("lstm_layers", "3", "stacked LSTM layers per branch"),
    ("scales", "10,5,2", "segment lengths, strictly decreasing"),
    ("anchor", "end", "segment placement: end (latest 5·δ frames) or start"),
    ("fusion", "weighted", "increment fusion: weighted (alpha/beta) or newest (latest raw difference)"),
    ("accel_correction", "true", "add the acceleration branch's increment to the velocity branch's"),
    ("gamma.rho", "0.8", "attenuation ratio: gamma_n = rho^(n-1)"),
    ("gamma.explicit", "", "explicit per-frame attenuation list; overrides gamma.rho when set"),
    ("combine_weights", "", "per-scale blend weights summing to 1; empty means uniform"),
    ("adjust_rounds", "1", "adjustment rounds R (blend fed back and branches recomputed)"),
    ("increment_sign", "-1", "sign applied to increments when extrapolating (1 or -1)"),
    ("fc_bias", "true", "bias terms on the fully connected layers"),
    ("bn_relu", "true", "batch norm and activation after fc_mid"),
    ("activation", "relu", "activation after batch norm: relu or tanh"),
    ("dropout", "0.4", "dropout rate after fc_mid in training"),
    ("loss.past_deltas", "2,5,10", "past-loss windows (first Δ predicted frames)"),
    ("loss.future_deltas", "20,30", "rollout-loss horizons in frames"),
    ("loss.future_all_stages", "false", "apply the rollout loss in every stage, not only plus_longterm stages"),
    ("train.batch_size", "32", "windows per mini-batch"),
    (
        "train.plan",
        "10@0.005:standard,10@0.005:plus_5x_accumulated,10@0.001:standard,10@0.001:plus_longterm",
        "stages as epochs@learning_rate:mode[:shuffle_seed]",
    ),
    ("train.accumulate", "5", "batches whose gradients are summed for the accumulated extra update"),
    ("train.mode", "pooled", "pooled (one model) or per_action (one model per action)"),
    ("train.divergence_factor", "10", "abort when an epoch's mean loss exceeds this multiple of the first epoch's"),
    ("eval.horizons", "80,160,320,400,560,1000", "evaluation horizons in milliseconds"),
    ("eval.fps", "25", "frame rate used to convert horizons to frames"),
    ("synth.name", "synth", "base name of generated sequences"),
    ("synth.sequences", "4", "number of generated sequences"),
    ("synth.joints", "8", "joints per generated sequence"),
    ("synth.frames", "400", "frames per generated sequence"),
    ("synth.fps", "25", "frame rate of generated sequences"),
    ("synth.sinusoids", "2", "sinusoids per joint coordinate"),
    ("synth.freq_min", "0.2", "lowest sinusoid frequency (Hz)"),
    ("synth.freq_max", "1.0", "highest sinusoid frequency (Hz)"),
    ("synth.amplitude", "1.0", "upper bound of each sinusoid amplitude"),
    ("synth.noise", "0.005", "Gaussian noise standard deviation"),
    ("synth.trend_break", "", "frame at which frequencies change (empty for none)"),
];

pub fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_scalar(key, v)).collect()
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::Config(format!("`{key}`: expected a boolean, got `{other}`"))),
    }
}

pub fn fmt_list<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
/// Duplicate keys are an error.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("bad key `{k}`"),
            });
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key `{k}`"),
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn is_fusion_key(key: &str) -> bool {
    ["alpha.", "beta."]
        .iter()
        .any(|p| key.strip_prefix(p).is_some_and(|d| d.parse::<usize>().is_ok_and(|d| d > 0)))
}

/// The resolved key/value map of one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn is_known(key: &str) -> bool {
        KEYS.iter().any(|(k, _, _)| *k == key) || is_fusion_key(key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !Self::is_known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.merge_text(&text)
    }

    /// `PMS_SEED`, when set, replaces `seed`.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var("PMS_SEED") {
            parse_scalar::<u64>("PMS_SEED", &seed)?;
            self.set("seed", &seed)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_scalar(key, self.require(key)?)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        parse_list(key, self.require(key)?)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.require(key)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Model hyperparameters for data with `joints` joints.
    pub fn model_config(&self, joints: usize) -> Result<ModelConfig> {
        ModelConfig::from_kv(&self.values, joints)
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let cfg = LossConfig {
            past_deltas: self.list("loss.past_deltas")?,
            future_deltas: self.list("loss.future_deltas")?,
        };
        cfg.validate(self.parse("output_len")?)?;
        Ok(cfg)
    }

    /// Generator spec and sequence count.
    pub fn synth_spec(&self) -> Result<(SynthSpec, usize)> {
        let trend_break = match self.require("synth.trend_break")? {
            "" => None,
            v => Some(parse_scalar("synth.trend_break", v)?),
        };
        let spec = SynthSpec {
            name: self.require("synth.name")?.to_string(),
            joints: self.parse("synth.joints")?,
            frames: self.parse("synth.frames")?,
            fps: self.parse("synth.fps")?,
            sinusoids: self.parse("synth.sinusoids")?,
            freq_min: self.parse("synth.freq_min")?,
            freq_max: self.parse("synth.freq_max")?,
            amplitude: self.parse("synth.amplitude")?,
            noise_std: self.parse("synth.noise")?,
            trend_break,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok((spec, self.parse("synth.sequences")?))
    }

    /// Evaluation horizons converted to frame counts at `eval.fps`.
    pub fn horizon_frames(&self) -> Result<Vec<(u32, usize)>> {
        let fps: f64 = self.parse("eval.fps")?;
        let ms: Vec<u32> = self.list("eval.horizons")?;
        if ms.is_empty() {
            return Err(Error::Config("eval.horizons is empty".into()));
        }
        ms.into_iter()
            .map(|m| {
                let frames = (m as f64 * fps / 1000.0).round() as usize;
                if frames == 0 {
                    return Err(Error::Config(format!("horizon {m} ms is shorter than one frame")));
                }
                Ok((m, frames))
            })
            .collect()
    }

    /// Explicit `alpha.<δ>` / `beta.<δ>` for every configured scale, so the
    /// echoed file is complete.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut out = self.clone();
        let model = self.model_config(1)?;
        for (d, f) in model.scales.deltas.iter().zip(&model.fusion) {
            out.values.entry(format!("alpha.{d}")).or_insert_with(|| fmt_list(&f.alpha));
            out.values.entry(format!("beta.{d}")).or_insert_with(|| fmt_list(&f.beta));
        }
        Ok(out)
    }

    /// Checks that every section parses.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.model_config(1)?;
        self.loss_config()?;
        self.synth_spec()?;
        self.horizon_frames()?;
        crate::training::TrainSettings::from_config(self)?;
        let stride: usize = self.parse("stride")?;
        let extended: usize = self.parse("extended")?;
        if stride == 0 || extended > crate::dataio::windows::MAX_EXTENDED {
            return Err(Error::Config(format!("stride must be positive and extended at most 30 (got {stride}, {extended})")));
        }
        Ok(())
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every fixed key with its default and description.
    pub fn key_reference() -> String {
        let mut out = String::new();
        for (k, v, doc) in KEYS {
            out.push_str(&format!("{k:<26} {:<12} {doc}\n", if v.len() > 12 { "(see doc)" } else { v }));
        }
        out.push_str(&format!("{:<26} {:<12} {}\n", "alpha.<δ>", "0.1,...,0.4", "velocity fusion weights of scale δ"));
        out.push_str(&format!("{:<26} {:<12} {}\n", "beta.<δ>", "0.2,0.3,0.5", "acceleration fusion weights of scale δ"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("hiden", "8").is_err());
        assert!(c.set("alpha.5", "0,0,0,1").is_ok());
        assert!(c.set("alpha.x", "0,0,0,1").is_err());
        assert!(c.merge_text("bogus = 1").is_err());
    }

    #[test]
    fn comments_and_precedence() {
        let mut c = RunConfig::default();
        c.merge_text("# comment\nhidden = 16   # trailing\n\nalpha.10 = 0,0,0.4,0.6\n").unwrap();
        c.set_override("hidden=8").unwrap();
        assert_eq!(c.parse::<usize>("hidden").unwrap(), 8);
        let m = c.model_config(2).unwrap();
        assert_eq!(m.fusion[0].alpha, [0.0, 0.0, 0.4, 0.6]);
        assert!(c.merge_text("hidden = 1\nhidden = 2").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("gamma.explicit", "1,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5").unwrap();
        let resolved = c.resolved().unwrap();
        let mut back = RunConfig::default();
        back.merge_text(&resolved.to_text()).unwrap();
        assert_eq!(back, resolved);
        assert!(resolved.validate().is_ok());
    }

    #[test]
    fn horizons_to_frames() {
        let c = RunConfig::default();
        let h: Vec<usize> = c.horizon_frames().unwrap().into_iter().map(|(_, f)| f).collect();
        assert_eq!(h, vec![2, 4, 8, 10, 14, 25]);
    }
}
