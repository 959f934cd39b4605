use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Result<Self> {
        let cfg = AdamConfig {
            learning_rate,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {} / {}", self.beta1, self.beta2)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.len();
        Param {
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Named parameters with shared Adam state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGroup {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    /// Replaces a value in place (moments untouched).
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if p.value.dims() != value.dims() {
            return Err(Error::shape("param set", p.value.dims(), value.dims()));
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// One bias-corrected Adam update.
    ///
    /// Parameters absent from `grads` are treated as having zero gradient.
    /// A non-finite gradient anywhere aborts before any parameter changes.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Vec<f64>>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
            if g.len() != p.value.len() {
                return Err(Error::shape("adam_step", p.value.dims(), &[g.len()]));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::PoisonedUpdate(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let g = grads.get(name);
            let values = p.value.values_mut();
            for i in 0..values.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_group(v: f64) -> ParamGroup {
        let mut g = ParamGroup::new();
        g.insert("w", Tensor::scalar(v));
        g
    }

    fn grad(v: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), vec![v])])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut g = scalar_group(0.75);
        g.adam_step(&grad(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(g.get("w").unwrap().item(), 0.75);
        assert_eq!(g.step_count(), 1);
    }

    #[test]
    fn first_unit_step_moves_by_learning_rate() {
        let mut g = scalar_group(1.0);
        let cfg = AdamConfig::default();
        g.adam_step(&grad(1.0), &cfg).unwrap();
        let expected = 1.0 - 5e-3 * (1.0 / (1.0 + 1e-8));
        assert!((g.get("w").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_recurrence_over_several_steps() {
        let cfg = AdamConfig::with_learning_rate(1e-3).unwrap();
        let gs = [0.3, -1.2, 0.05, 2.0];
        let mut g = scalar_group(0.5);
        let (mut theta, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, &gi) in gs.iter().enumerate() {
            g.adam_step(&grad(gi), &cfg).unwrap();
            m = 0.9 * m + 0.1 * gi;
            v = 0.999 * v + 0.001 * gi * gi;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            theta -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            assert!((g.get("w").unwrap().item() - theta).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_is_rejected_untouched() {
        let mut g = scalar_group(1.0);
        let before = g.clone();
        let err = g.adam_step(&grad(f64::NAN), &AdamConfig::default());
        assert!(matches!(err, Err(Error::PoisonedUpdate(_))));
        assert_eq!(g, before);
    }

    #[test]
    fn staged_learning_rates_validate() {
        assert_eq!(AdamConfig::default().learning_rate, 5e-3);
        assert_eq!(AdamConfig::with_learning_rate(1e-3).unwrap().learning_rate, 1e-3);
        assert!(AdamConfig::with_learning_rate(0.0).is_err());
        assert!(AdamConfig {
            beta1: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
