//! Finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use super::adam::ParamGroup;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the max relative error.
    pub tolerance: f64,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
    /// Cap on checked entries per parameter (evenly spaced); `None` checks all.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-3,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients returned by `f` against central differences of
/// the loss it returns.
///
/// `f` must be deterministic; it is evaluated twice at the unperturbed point
/// and any disagreement is reported as [`Error::NonDeterministic`].
pub fn gradient_check<F>(params: &ParamGroup, mut f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&ParamGroup) -> Result<(f64, BTreeMap<String, Vec<f64>>)>,
{
    let (loss_a, grads) = f(params)?;
    let (loss_b, grads_b) = f(params)?;
    if loss_a.to_bits() != loss_b.to_bits() || grads != grads_b {
        let mut diff = (loss_a - loss_b).abs();
        for (k, g) in &grads {
            if let Some(h) = grads_b.get(k) {
                diff = g.iter().zip(h).map(|(x, y)| (x - y).abs()).fold(diff, f64::max);
            }
        }
        return Err(Error::NonDeterministic(diff));
    }

    let mut work = params.clone();
    let mut report = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base: Tensor = params.get(&name).cloned().expect("name from group");
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| vec![0.0; base.len()]);
        if analytic.len() != base.len() {
            return Err(Error::shape("gradient_check", base.dims(), &[analytic.len()]));
        }
        let indices = entry_indices(base.len(), opts.max_entries);
        let mut worst: f64 = 0.0;
        for &i in &indices {
            let mut eval_at = |delta: f64, work: &mut ParamGroup| -> Result<f64> {
                let mut t = base.clone();
                t.values_mut()[i] += delta;
                work.set(&name, t)?;
                Ok(f(work)?.0)
            };
            let plus = eval_at(opts.step, &mut work)?;
            let minus = eval_at(-opts.step, &mut work)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[i], numeric, opts.floor));
        }
        work.set(&name, base)?;
        report.push(ParamCheck {
            name,
            max_rel_error: worst,
            checked: indices.len(),
        });
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}

fn entry_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(cap) if cap < len => {
            let cap = cap.max(1);
            (0..cap).map(|k| k * len / cap).collect()
        }
        _ => (0..len).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::layers::{seeded, uniform_init};

    fn linear_model(params: &ParamGroup, x: &Tensor) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut g = Graph::new();
        let w = g.param(params.get("w").unwrap().clone());
        let b = g.param(params.get("b").unwrap().clone());
        let xv = g.constant(x.clone());
        let y = g.linear(xv, w, Some(b))?;
        let loss = g.sum(y)?;
        let mut grads = g.backward(loss)?;
        Ok((
            g.value(loss).item(),
            BTreeMap::from([("w".into(), grads.take(w)), ("b".into(), grads.take(b))]),
        ))
    }

    fn setup() -> (ParamGroup, Tensor) {
        let mut rng = seeded(3);
        let mut p = ParamGroup::new();
        p.insert("w", uniform_init(vec![3, 2], 3, &mut rng));
        p.insert("b", uniform_init(vec![2], 3, &mut rng));
        (p, uniform_init(vec![4, 3], 1, &mut rng))
    }

    #[test]
    fn linear_model_passes_tightly() {
        let (p, x) = setup();
        let report = gradient_check(&p, |q| linear_model(q, &x), &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (p, x) = setup();
        let report = gradient_check(
            &p,
            |q| {
                let (l, mut g) = linear_model(q, &x)?;
                g.values_mut().for_each(|v| v.iter_mut().for_each(|e| *e *= 1.01));
                Ok((l, g))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() > 5e-3);
        assert!(!report.passed());
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let (p, x) = setup();
        let mut calls = 0u32;
        let err = gradient_check(
            &p,
            |q| {
                calls += 1;
                let (l, g) = linear_model(q, &x)?;
                Ok((l + f64::from(calls) * 1e-9, g))
            },
            &GradCheckOptions::default(),
        );
        assert!(matches!(err, Err(Error::NonDeterministic(_))));
    }

    #[test]
    fn entry_sampling_is_even_and_bounded() {
        assert_eq!(entry_indices(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(entry_indices(3, Some(5)), vec![0, 1, 2]);
    }
}
