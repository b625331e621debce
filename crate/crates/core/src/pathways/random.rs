use serde::{Deserialize, Serialize};

use super::discrete::{DiscreteScm, DiscreteVariable, Roles, TablePredictor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Shape of a randomly drawn anti-causal model.
///
/// Backdoor variables are roots feeding `y`, mediators sit between `y` and
/// the inputs, and every input reads `y`, all mediators and all backdoor
/// variables. With `pure_input` the first input instead reads only `y`, so
/// predictors restricted to it satisfy the independence criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSamConfig {
    pub target_cardinality: usize,
    pub cardinality: usize,
    pub mediators: usize,
    pub backdoor: usize,
    pub inputs: usize,
    pub pure_input: bool,
}

impl Default for RandomSamConfig {
    fn default() -> Self {
        RandomSamConfig { target_cardinality: 2, cardinality: 2, mediators: 1, backdoor: 1, inputs: 2, pure_input: true }
    }
}

fn probabilities(r: &mut Rng, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    if len == 2 {
        let p = rng::uniform_range(r, 0.1, 0.9);
        return vec![1.0 - p, p];
    }
    let raw: Vec<f64> = (0..len).map(|_| rng::uniform_range(r, 0.1, 0.9)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = p[..len - 1].iter().sum();
    p[len - 1] = 1.0 - head;
    p
}

/// Mechanism whose exogenous index is a random permutation of the support for
/// each parent configuration, so every value keeps positive probability.
fn onto_mechanism(r: &mut Rng, configs: usize, card: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(configs * card);
    for _ in 0..configs {
        let mut perm: Vec<usize> = (0..card).collect();
        rng::shuffle(r, &mut perm);
        out.extend(perm);
    }
    out
}

fn uniform_mechanism(r: &mut Rng, entries: usize, card: usize) -> Vec<usize> {
    (0..entries).map(|_| rng::index(r, card)).collect()
}

pub fn random_sam(config: &RandomSamConfig, seed: u64) -> Result<DiscreteScm> {
    if config.target_cardinality < 2 || config.cardinality < 2 || config.inputs == 0 {
        return Err(Error::Config("random SAM needs binary or larger supports and at least one input".into()));
    }
    let mut r = rng::stream(seed, rng::streams::EXOGENOUS);
    let k = config.target_cardinality;
    let c = config.cardinality;
    let z: Vec<String> = (0..config.backdoor).map(|i| format!("z{i}")).collect();
    let w: Vec<String> = (0..config.mediators).map(|i| format!("w{i}")).collect();
    let x: Vec<String> = (0..config.inputs).map(|i| format!("x{i}")).collect();
    let mut vars = Vec::new();
    let mut card_of = std::collections::HashMap::new();
    let mut push = |vars: &mut Vec<DiscreteVariable>, name: &str, card: usize, parents: Vec<String>, onto: bool, r: &mut Rng| {
        let configs: usize = parents.iter().map(|p| card_of[p.as_str()]).product();
        let exo_len = if onto { card } else { 2 };
        let exogenous = probabilities(r, exo_len);
        let mechanism =
            if onto { onto_mechanism(r, configs, card) } else { uniform_mechanism(r, configs * exo_len, card) };
        card_of.insert(name.to_string(), card);
        vars.push(DiscreteVariable { name: name.into(), cardinality: card, parents, exogenous, mechanism });
    };
    for name in &z {
        push(&mut vars, name, c, vec![], true, &mut r);
    }
    push(&mut vars, "y", k, z.clone(), true, &mut r);
    for (i, name) in w.iter().enumerate() {
        let parents = std::iter::once("y".to_string()).chain(z.iter().cloned()).chain(w[..i].iter().cloned()).collect();
        push(&mut vars, name, c, parents, true, &mut r);
    }
    for (i, name) in x.iter().enumerate() {
        let parents = if i == 0 && config.pure_input {
            vec!["y".to_string()]
        } else {
            std::iter::once("y".to_string()).chain(w.iter().cloned()).chain(z.iter().cloned()).collect()
        };
        push(&mut vars, name, c, parents, false, &mut r);
    }
    DiscreteScm::new(vars, Roles { target: "y".into(), mediators: w, backdoor: z, inputs: x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Random conditional distribution over all inputs.
    Stochastic,
    /// Random class per input assignment over all inputs.
    Deterministic,
    /// Random conditional distribution reading only the first input.
    FirstInput,
    Constant,
}

pub fn random_predictor(scm: &DiscreteScm, kind: PredictorKind, seed: u64) -> Result<TablePredictor> {
    let mut r = rng::stream(seed, rng::streams::INIT);
    let outputs = scm.variables()[scm.target_index()].cardinality;
    let all = scm.roles().inputs.clone();
    match kind {
        PredictorKind::Constant => Ok(TablePredictor::constant(outputs, rng::index(&mut r, outputs))),
        PredictorKind::Deterministic => TablePredictor::from_fn(scm, all, outputs, |_| {
            let mut row = vec![0.0; outputs];
            row[rng::index(&mut r, outputs)] = 1.0;
            row
        }),
        PredictorKind::Stochastic | PredictorKind::FirstInput => {
            let inputs = if kind == PredictorKind::FirstInput { all[..1].to_vec() } else { all };
            TablePredictor::from_fn(scm, inputs, outputs, |_| probabilities(&mut r, outputs))
        }
    }
}
