//! Multi-stage training, ablation variants and evaluation.

pub mod ablation;
pub mod eval;
pub mod gradsuite;
pub mod plan;
pub mod run;

pub use ablation::{apply_ablation, config_diff, AblationSpec};
pub use eval::{eval_windows, evaluate_model, EvalReport, ErrorRow};
pub use gradsuite::{run_gradcheck_suite, SuiteEntry};
pub use plan::{LossMode, Stage, StagePlan, DEFAULT_PLAN};
pub use run::{
    batch_loss, log_text, prepare_windows, run_stage, run_stage_with, train_model, train_multistage, EpochRecord,
    TrainedModel,
};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;

/// One model over all actions, or one model per action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Pooled,
    PerAction,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(TrainMode::Pooled),
            "per_action" => Ok(TrainMode::PerAction),
            other => Err(Error::Config(format!("unknown train.mode `{other}`"))),
        }
    }
}

/// Everything the training loop reads from a run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub seed: u64,
    pub batch_size: usize,
    pub plan: StagePlan,
    pub accumulate: usize,
    pub mode: TrainMode,
    /// An epoch whose mean loss exceeds this multiple of the stage's first
    /// epoch aborts training.
    pub divergence_factor: f64,
    pub loss: LossConfig,
    /// Adds the rollout loss in every stage, not just `plus_longterm` ones.
    pub future_all_stages: bool,
    pub input_len: usize,
    pub output_len: usize,
    pub stride: usize,
    pub extended: usize,
}

impl TrainSettings {
    pub fn from_config(c: &RunConfig) -> Result<Self> {
        let seed = c.seed()?;
        let s = TrainSettings {
            seed,
            batch_size: c.parse("train.batch_size")?,
            plan: StagePlan::parse(c.get("train.plan").unwrap_or_default(), seed)?,
            accumulate: c.parse("train.accumulate")?,
            mode: c.parse("train.mode")?,
            divergence_factor: c.parse("train.divergence_factor")?,
            loss: c.loss_config()?,
            future_all_stages: c.flag("loss.future_all_stages")?,
            input_len: c.parse("input_len")?,
            output_len: c.parse("output_len")?,
            stride: c.parse("stride")?,
            extended: c.parse("extended")?,
        };
        if s.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if s.accumulate == 0 {
            return Err(Error::Config("train.accumulate must be at least 1".into()));
        }
        if s.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(s.divergence_factor > 1.0) {
            return Err(Error::Config("train.divergence_factor must exceed 1".into()));
        }
        s.loss.validate(s.output_len)?;
        Ok(s)
    }

    /// Future frames each training window carries.
    pub fn future_needed(&self) -> usize {
        self.output_len + self.extended
    }
}
