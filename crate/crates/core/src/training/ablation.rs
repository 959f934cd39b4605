//! Named ablation variants as configuration overrides.
//!
//! `baseline1` strips the bias terms, batch norm / activation and the
//! accumulated extra update from the base configuration; `baseline2` puts
//! those three back, so with default settings it is the full model. Each
//! other variant is one of the two baselines plus a small change.

use crate::config::{fmt_list, RunConfig};
use crate::error::{Error, Result};
use crate::training::plan::{LossMode, StagePlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationSpec {
    Baseline1,
    FcBias,
    BnRelu,
    Loss5x,
    Loss2510x,
    Loss800ms,
    Baseline2,
    WoT2,
    WoT5,
    WoT10,
    WoA,
    WoVf,
    W0406,
    Baseline2V2,
    Loss6x,
    Loss480ms,
    Loss600ms,
}

impl AblationSpec {
    pub const ALL: [AblationSpec; 17] = [
        AblationSpec::Baseline1,
        AblationSpec::FcBias,
        AblationSpec::BnRelu,
        AblationSpec::Loss5x,
        AblationSpec::Loss2510x,
        AblationSpec::Loss800ms,
        AblationSpec::Baseline2,
        AblationSpec::WoT2,
        AblationSpec::WoT5,
        AblationSpec::WoT10,
        AblationSpec::WoA,
        AblationSpec::WoVf,
        AblationSpec::W0406,
        AblationSpec::Baseline2V2,
        AblationSpec::Loss6x,
        AblationSpec::Loss480ms,
        AblationSpec::Loss600ms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationSpec::Baseline1 => "baseline1",
            AblationSpec::FcBias => "fc_bias",
            AblationSpec::BnRelu => "bn_relu",
            AblationSpec::Loss5x => "loss_5x",
            AblationSpec::Loss2510x => "loss_2_5_10x",
            AblationSpec::Loss800ms => "loss_800ms",
            AblationSpec::Baseline2 => "baseline2",
            AblationSpec::WoT2 => "wo_t2",
            AblationSpec::WoT5 => "wo_t5",
            AblationSpec::WoT10 => "wo_t10",
            AblationSpec::WoA => "wo_a",
            AblationSpec::WoVf => "wo_vf",
            AblationSpec::W0406 => "w_0406",
            AblationSpec::Baseline2V2 => "baseline2_v2",
            AblationSpec::Loss6x => "loss_6x",
            AblationSpec::Loss480ms => "loss_480ms",
            AblationSpec::Loss600ms => "loss_600ms",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            AblationSpec::Baseline1 => "no fc bias, no batch norm/activation, no accumulated extra update",
            AblationSpec::FcBias => "baseline1 + fc bias",
            AblationSpec::BnRelu => "baseline1 + batch norm and activation",
            AblationSpec::Loss5x => "baseline1 + extra update on the summed loss of 5 batches",
            AblationSpec::Loss2510x => "baseline1 + extra updates after batches 2, 5 and 10 of every 10",
            AblationSpec::Loss800ms => "baseline1 + 20-frame rollout loss in every stage",
            AblationSpec::Baseline2 => "baseline1 + fc bias + batch norm/activation + 5-batch extra update",
            AblationSpec::WoT2 => "baseline2 without the 2-frame scale",
            AblationSpec::WoT5 => "baseline2 without the 5-frame scale",
            AblationSpec::WoT10 => "baseline2 without the 10-frame scale",
            AblationSpec::WoA => "baseline2 without acceleration correction",
            AblationSpec::WoVf => "baseline2 with newest-difference features and no acceleration correction",
            AblationSpec::W0406 => "baseline2 with alpha = 0,0,0.4,0.6 on every scale",
            AblationSpec::Baseline2V2 => "baseline2 with every learning rate divided by 5",
            AblationSpec::Loss6x => "baseline2_v2 with the extra update over 6 batches",
            AblationSpec::Loss480ms => "baseline2_v2 + 12-frame rollout loss in every stage",
            AblationSpec::Loss600ms => "baseline2_v2 + 15-frame rollout loss in every stage",
        }
    }
}

impl std::str::FromStr for AblationSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AblationSpec::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }
}

fn plan_with(base: &RunConfig, f: impl FnMut(&mut crate::training::plan::Stage)) -> Result<String> {
    let mut plan = StagePlan::parse(base.get("train.plan").unwrap_or_default(), base.seed()?)?;
    plan.stages.iter_mut().for_each(f);
    // Keep per-stage seeds explicit so the rewritten plan shuffles exactly
    // as the original did.
    Ok(plan
        .stages
        .iter()
        .map(|s| format!("{}@{}:{}:{}", s.epochs, s.learning_rate, s.mode.name(), s.shuffle_seed))
        .collect::<Vec<_>>()
        .join(","))
}

fn is_accumulated(mode: LossMode) -> bool {
    matches!(mode, LossMode::PlusAccumulated | LossMode::PlusAccumulated2510)
}

fn baseline1(base: &RunConfig) -> Result<RunConfig> {
    let mut c = base.clone();
    c.set("fc_bias", "false")?;
    c.set("bn_relu", "false")?;
    c.set(
        "train.plan",
        &plan_with(base, |s| {
            if is_accumulated(s.mode) {
                s.mode = LossMode::Standard
            }
        })?,
    )?;
    Ok(c)
}

fn baseline2(base: &RunConfig) -> Result<RunConfig> {
    let mut c = baseline1(base)?;
    c.set("fc_bias", "true")?;
    c.set("bn_relu", "true")?;
    c.set("train.plan", &accumulated_plan(base, LossMode::PlusAccumulated)?)?;
    Ok(c)
}

/// The base plan with its accumulated stages (or, if it has none, its
/// second stage) switched to `mode`.
fn accumulated_plan(base: &RunConfig, mode: LossMode) -> Result<String> {
    let plan = StagePlan::parse(base.get("train.plan").unwrap_or_default(), base.seed()?)?;
    let any = plan.stages.iter().any(|s| is_accumulated(s.mode));
    let second = plan.stages.len().min(2) - 1;
    let mut index = 0;
    plan_with(base, |s| {
        if (any && is_accumulated(s.mode)) || (!any && index == second && s.mode == LossMode::Standard) {
            s.mode = mode;
        }
        index += 1;
    })
}

fn without_scale(c: &mut RunConfig, delta: usize) -> Result<()> {
    let mut m = c.model_config(1)?;
    let explicit = !c.get("combine_weights").unwrap_or_default().is_empty();
    m.drop_scale(delta)?;
    c.set("scales", &fmt_list(&m.scales.deltas))?;
    if explicit {
        c.set("combine_weights", &fmt_list(&m.combine_weights))?;
    }
    Ok(())
}

/// The configuration of variant `spec` built from `base`.
pub fn apply_ablation(base: &RunConfig, spec: AblationSpec) -> Result<RunConfig> {
    use AblationSpec::*;
    let mut c = match spec {
        Baseline1 | FcBias | BnRelu | Loss5x | Loss2510x | Loss800ms => baseline1(base)?,
        Baseline2 | WoT2 | WoT5 | WoT10 | WoA | WoVf | W0406 | Baseline2V2 => baseline2(base)?,
        Loss6x | Loss480ms | Loss600ms => apply_ablation(base, Baseline2V2)?,
    };
    match spec {
        Baseline1 | Baseline2 => {}
        FcBias => c.set("fc_bias", "true")?,
        BnRelu => c.set("bn_relu", "true")?,
        Loss5x => c.set("train.plan", &accumulated_plan(base, LossMode::PlusAccumulated)?)?,
        Loss2510x => c.set("train.plan", &accumulated_plan(base, LossMode::PlusAccumulated2510)?)?,
        Loss800ms | Loss480ms | Loss600ms => {
            let frames = match spec {
                Loss800ms => 20,
                Loss480ms => 12,
                _ => 15,
            };
            c.set("loss.future_deltas", &frames.to_string())?;
            c.set("loss.future_all_stages", "true")?;
        }
        WoT2 => without_scale(&mut c, 2)?,
        WoT5 => without_scale(&mut c, 5)?,
        WoT10 => without_scale(&mut c, 10)?,
        WoA => c.set("accel_correction", "false")?,
        WoVf => {
            c.set("fusion", "newest")?;
            c.set("accel_correction", "false")?;
        }
        W0406 => {
            for d in c.model_config(1)?.scales.deltas {
                c.set(&format!("alpha.{d}"), "0,0,0.4,0.6")?;
            }
        }
        Baseline2V2 => {
            let plan = plan_with(&c, |s| s.learning_rate /= 5.0)?;
            c.set("train.plan", &plan)?;
        }
        Loss6x => c.set("train.accumulate", "6")?,
    }
    c.validate()?;
    Ok(c)
}

/// Keys whose values differ between two configurations.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    let keys: std::collections::BTreeSet<&String> = a.values().keys().chain(b.values().keys()).collect();
    keys.into_iter().filter(|k| a.get(k) != b.get(k)).cloned().collect()
}
