use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{RngState, Stream};

/// What each mini-batch contributes beyond the ordinary update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// One update per batch.
    Standard,
    /// Plus one update on the summed loss of every `accumulate` consecutive
    /// batches.
    PlusAccumulated,
    /// Plus updates on the running sum after batches 2, 5 and 10 of every
    /// ten.
    PlusAccumulated2510,
    /// The rollout loss `L_f` is added.
    PlusLongterm,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Standard => "standard",
            LossMode::PlusAccumulated => "plus_5x_accumulated",
            LossMode::PlusAccumulated2510 => "plus_2_5_10_accumulated",
            LossMode::PlusLongterm => "plus_longterm",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LossMode::Standard),
            "plus_5x_accumulated" => Ok(LossMode::PlusAccumulated),
            "plus_2_5_10_accumulated" => Ok(LossMode::PlusAccumulated2510),
            "plus_longterm" => Ok(LossMode::PlusLongterm),
            other => Err(Error::Config(format!("unknown loss mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub epochs: usize,
    pub learning_rate: f64,
    pub mode: LossMode,
    /// Seeds the epoch shuffles and dropout masks of this stage.
    pub shuffle_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

pub const DEFAULT_PLAN: &str = "10@0.005:standard,10@0.005:plus_5x_accumulated,10@0.001:standard,10@0.001:plus_longterm";

/// Shuffle seed of stage `index` when the plan does not give one.
pub fn stage_seed(seed: u64, index: usize) -> u64 {
    RngState::new(seed, Stream::Shuffle).at(1 << 32 | index as u64).generator().gen()
}

impl StagePlan {
    /// Parses `epochs@learning_rate:mode[:shuffle_seed]` items separated by
    /// commas.
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let stages = text
            .split(',')
            .map(str::trim)
            .enumerate()
            .map(|(i, item)| {
                let bad = || Error::Config(format!("stage `{item}` is not epochs@lr:mode[:seed]"));
                let (epochs, rest) = item.split_once('@').ok_or_else(bad)?;
                let mut parts = rest.split(':');
                let lr = parts.next().ok_or_else(bad)?;
                let mode = parts.next().ok_or_else(bad)?;
                let shuffle_seed = match parts.next() {
                    Some(s) => s.trim().parse().map_err(|_| bad())?,
                    None => stage_seed(seed, i),
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Stage {
                    epochs: epochs.trim().parse().map_err(|_| bad())?,
                    learning_rate: lr.trim().parse().map_err(|_| bad())?,
                    mode: mode.trim().parse()?,
                    shuffle_seed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = StagePlan { stages };
        plan.validate()?;
        Ok(plan)
    }

    pub fn default_plan(seed: u64) -> Self {
        Self::parse(DEFAULT_PLAN, seed).expect("default plan parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("plan has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.epochs == 0 {
                return Err(Error::Config(format!("stage {} has zero epochs", i + 1)));
            }
            if !(s.learning_rate >= 0.0 && s.learning_rate.is_finite()) {
                return Err(Error::Config(format!("stage {} learning rate {} is invalid", i + 1, s.learning_rate)));
            }
        }
        Ok(())
    }

    /// Canonical text form (without explicit seeds).
    pub fn to_text(&self) -> String {
        self.stages
            .iter()
            .map(|s| format!("{}@{}:{}", s.epochs, s.learning_rate, s.mode.name()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_shape() {
        let p = StagePlan::default_plan(0);
        assert_eq!(p.stages.len(), 4);
        assert!(p.stages.iter().all(|s| s.epochs == 10));
        let lrs: Vec<f64> = p.stages.iter().map(|s| s.learning_rate).collect();
        assert_eq!(lrs, vec![5e-3, 5e-3, 1e-3, 1e-3]);
        assert_eq!(p.stages[1].mode, LossMode::PlusAccumulated);
        assert_eq!(p.stages[3].mode, LossMode::PlusLongterm);
        assert_eq!(p.to_text(), DEFAULT_PLAN);
    }

    #[test]
    fn explicit_seed_and_errors() {
        let p = StagePlan::parse("1@0:standard:42", 0).unwrap();
        assert_eq!(p.stages[0].shuffle_seed, 42);
        assert!(StagePlan::parse("0@0.1:standard", 0).is_err());
        assert!(StagePlan::parse("1@0.1:fancy", 0).is_err());
        assert!(StagePlan::parse("1:0.1", 0).is_err());
    }
}
