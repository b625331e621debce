//! Monte Carlo counterfactual metrics for trained predictors on the synthetic
//! families. Every unit keeps its exogenous draw; only the intervened variable
//! and its descendants are regenerated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::scm::{features_of, generate, intervene, DatasetSpec, Unit};
use crate::trainer::{argmax_rows, r2_score, Head, Model};

const CHUNK_UNITS: usize = 256;

/// How intervention values are chosen for each unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterventionValues {
    /// Uniform over the variable's support.
    #[default]
    Uniform,
    /// The unit's own factual value (a null intervention).
    Factual,
}

fn population(spec: &DatasetSpec, n_units: usize) -> Result<Vec<Unit>> {
    if n_units == 0 {
        return Err(Error::Input("counterfactual metrics need at least one unit".into()));
    }
    Ok(generate(&DatasetSpec { n: n_units, ..spec.clone() })?.units)
}

/// Builds `n_interventions` counterfactual copies of each unit in `units`,
/// returning them in unit-major order.
fn counterfactuals(
    units: &[Unit],
    offset: usize,
    variable: &str,
    n_interventions: usize,
    values: InterventionValues,
    seed: u64,
) -> Result<Vec<Unit>> {
    let mut out = Vec::with_capacity(units.len() * n_interventions);
    for (i, u) in units.iter().enumerate() {
        let support = u.context.family.support(variable)?;
        let mut r = rng::stream(rng::derive_seed(seed, (offset + i) as u64), rng::streams::INTERVENTION);
        for _ in 0..n_interventions {
            let value = match values {
                InterventionValues::Uniform => support.sample(&mut r),
                InterventionValues::Factual => u.value(variable)?,
            };
            out.push(intervene(u, variable, value)?);
        }
    }
    Ok(out)
}

fn gap(head: Head, a: &[f64], b: &[f64]) -> f64 {
    match head {
        Head::Linear => (a[0] - b[0]).abs(),
        Head::Logits { .. } => 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
    }
}

/// Mean prediction change under interventions on `variable`, over the given units.
pub fn sensitivity_on_units(
    model: &dyn Model,
    units: &[Unit],
    variable: &str,
    n_interventions: usize,
    values: InterventionValues,
    seed: u64,
) -> Result<f64> {
    if units.is_empty() || n_interventions == 0 {
        return Err(Error::Input("sensitivity needs units and interventions".into()));
    }
    let head = model.head();
    let mut total = 0.0;
    for (c, chunk) in units.chunks(CHUNK_UNITS).enumerate() {
        let factual = model.predict(&features_of(chunk))?;
        let cf = counterfactuals(chunk, c * CHUNK_UNITS, variable, n_interventions, values, seed)?;
        let shifted = model.predict(&features_of(&cf))?;
        for i in 0..chunk.len() {
            for j in 0..n_interventions {
                total += gap(head, factual.row(i), shifted.row(i * n_interventions + j));
            }
        }
    }
    Ok(total / (units.len() * n_interventions) as f64)
}

/// Counterfactual sensitivity `S_variable` on `n_units` fresh units of `spec`.
pub fn sensitivity(
    model: &dyn Model,
    spec: &DatasetSpec,
    variable: &str,
    n_units: usize,
    n_interventions: usize,
    seed: u64,
) -> Result<f64> {
    spec.family.support(variable)?;
    let units = population(spec, n_units)?;
    sensitivity_on_units(model, &units, variable, n_interventions, InterventionValues::Uniform, seed)
}

/// Predictions and intervened targets for uniform interventions on the target.
fn target_counterfactuals(
    model: &dyn Model,
    spec: &DatasetSpec,
    n_units: usize,
    n_interventions: usize,
    seed: u64,
) -> Result<(Matrix, Vec<f64>)> {
    if n_interventions == 0 {
        return Err(Error::Input("counterfactual metrics need interventions".into()));
    }
    let units = population(spec, n_units)?;
    let target = spec.family.target();
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut cols = 0;
    for (c, chunk) in units.chunks(CHUNK_UNITS).enumerate() {
        let cf = counterfactuals(chunk, c * CHUNK_UNITS, target, n_interventions, InterventionValues::Uniform, seed)?;
        let p = model.predict(&features_of(&cf))?;
        cols = p.cols();
        preds.extend_from_slice(p.as_slice());
        targets.extend(cf.iter().map(Unit::target));
    }
    Ok((Matrix::from_vec(targets.len(), cols, preds)?, targets))
}

/// Fraction of target interventions whose predicted class equals the intervened value.
pub fn ctf_accuracy(
    model: &dyn Model,
    spec: &DatasetSpec,
    n_units: usize,
    n_interventions: usize,
    seed: u64,
) -> Result<f64> {
    if !matches!(model.head(), Head::Logits { .. }) {
        return Err(Error::Input("counterfactual accuracy needs a classifier".into()));
    }
    let (preds, targets) = target_counterfactuals(model, spec, n_units, n_interventions, seed)?;
    let hits = argmax_rows(&preds).iter().zip(&targets).filter(|(p, t)| **p as f64 == **t).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// `1 − MSE / Var` over counterfactual targets under uniform target interventions.
pub fn ctf_r2(model: &dyn Model, spec: &DatasetSpec, n_units: usize, n_interventions: usize, seed: u64) -> Result<f64> {
    if model.head() != Head::Linear {
        return Err(Error::Input("counterfactual R² needs a regressor".into()));
    }
    let (preds, targets) = target_counterfactuals(model, spec, n_units, n_interventions, seed)?;
    r2_score(preds.as_slice(), &targets)
}
