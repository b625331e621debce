use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Largest number of exogenous states the engine will enumerate.
pub const MAX_STATES: u64 = 10_000_000;
const PROB_TOL: f64 = 1e-12;
pub const SCM_VERSION: u32 = 1;

/// One endogenous variable with its own independent exogenous parent.
///
/// Values are the integers `0..cardinality`. `mechanism` is stored flattened
/// in row-major order over `(parent values..., exogenous index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVariable {
    pub name: String,
    pub cardinality: usize,
    pub parents: Vec<String>,
    pub exogenous: Vec<f64>,
    pub mechanism: Vec<usize>,
}

/// Which variables play which part in the anti-causal graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub target: String,
    #[serde(default)]
    pub mediators: Vec<String>,
    #[serde(default)]
    pub backdoor: Vec<String>,
    pub inputs: Vec<String>,
}

/// Finite structural causal model with Markovian exogenous noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmDocument", into = "ScmDocument")]
pub struct DiscreteScm {
    variables: Vec<DiscreteVariable>,
    roles: Roles,
    index: HashMap<String, usize>,
    order: Vec<usize>,
    parent_idx: Vec<Vec<usize>>,
    strides: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDocument {
    name: String,
    cardinality: usize,
    #[serde(default)]
    parents: Vec<String>,
    exogenous: Vec<f64>,
    mechanism: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScmDocument {
    version: u32,
    variables: Vec<VariableDocument>,
    roles: Roles,
}

impl TryFrom<ScmDocument> for DiscreteScm {
    type Error = Error;

    fn try_from(doc: ScmDocument) -> Result<Self> {
        if doc.version != SCM_VERSION {
            return Err(Error::Format(format!("unsupported SCM document version {}", doc.version)));
        }
        let cards: HashMap<&str, usize> = doc.variables.iter().map(|v| (v.name.as_str(), v.cardinality)).collect();
        let mut variables = Vec::with_capacity(doc.variables.len());
        for v in &doc.variables {
            let mut dims = Vec::with_capacity(v.parents.len() + 1);
            for p in &v.parents {
                let c = cards
                    .get(p.as_str())
                    .ok_or_else(|| Error::Input(format!("{}: unknown parent {p}", v.name)))?;
                dims.push(*c);
            }
            dims.push(v.exogenous.len());
            let mut flat = Vec::new();
            flatten(&v.mechanism, &dims, &v.name, &mut flat)?;
            variables.push(DiscreteVariable {
                name: v.name.clone(),
                cardinality: v.cardinality,
                parents: v.parents.clone(),
                exogenous: v.exogenous.clone(),
                mechanism: flat,
            });
        }
        DiscreteScm::new(variables, doc.roles)
    }
}

impl From<DiscreteScm> for ScmDocument {
    fn from(scm: DiscreteScm) -> Self {
        let variables = scm
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut dims: Vec<usize> = scm.parent_idx[i].iter().map(|&p| scm.variables[p].cardinality).collect();
                dims.push(v.exogenous.len());
                VariableDocument {
                    name: v.name.clone(),
                    cardinality: v.cardinality,
                    parents: v.parents.clone(),
                    exogenous: v.exogenous.clone(),
                    mechanism: nest(&v.mechanism, &dims),
                }
            })
            .collect();
        ScmDocument { version: SCM_VERSION, variables, roles: scm.roles }
    }
}

fn flatten(value: &Value, dims: &[usize], name: &str, out: &mut Vec<usize>) -> Result<()> {
    match dims.split_first() {
        None => {
            let v = value
                .as_u64()
                .ok_or_else(|| Error::Format(format!("{name}: mechanism leaf {value} is not a value index")))?;
            out.push(v as usize);
            Ok(())
        }
        Some((&len, rest)) => {
            let arr = value
                .as_array()
                .ok_or_else(|| Error::Format(format!("{name}: mechanism level is not an array")))?;
            if arr.len() != len {
                return Err(Error::Input(format!(
                    "{name}: mechanism table has {} entries where {len} are required",
                    arr.len()
                )));
            }
            arr.iter().try_for_each(|a| flatten(a, rest, name, out))
        }
    }
}

fn nest(flat: &[usize], dims: &[usize]) -> Value {
    match dims.split_first() {
        None => Value::from(flat[0]),
        Some((&len, rest)) => {
            let block = rest.iter().product::<usize>();
            Value::Array((0..len).map(|i| nest(&flat[i * block..(i + 1) * block], rest)).collect())
        }
    }
}

impl DiscreteScm {
    pub fn new(variables: Vec<DiscreteVariable>, roles: Roles) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            if index.insert(v.name.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate variable {}", v.name)));
            }
        }
        let mut parent_idx = Vec::with_capacity(variables.len());
        let mut strides = Vec::with_capacity(variables.len());
        for v in &variables {
            if v.cardinality == 0 {
                return Err(Error::Input(format!("{}: empty support", v.name)));
            }
            if v.exogenous.is_empty() || v.exogenous.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Input(format!("{}: exogenous probabilities must be non-negative", v.name)));
            }
            let total: f64 = v.exogenous.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::Input(format!("{}: exogenous probabilities sum to {total}", v.name)));
            }
            let parents: Vec<usize> = v
                .parents
                .iter()
                .map(|p| index.get(p).copied().ok_or_else(|| Error::Input(format!("{}: unknown parent {p}", v.name))))
                .collect::<Result<_>>()?;
            let mut dims: Vec<usize> = parents.iter().map(|&p| variables[p].cardinality).collect();
            dims.push(v.exogenous.len());
            let expected: usize = dims.iter().product();
            if v.mechanism.len() != expected {
                return Err(Error::Input(format!(
                    "{}: mechanism has {} entries, domain has {expected}",
                    v.name,
                    v.mechanism.len()
                )));
            }
            if let Some(bad) = v.mechanism.iter().find(|&&m| m >= v.cardinality) {
                return Err(Error::Input(format!("{}: mechanism value {bad} outside support", v.name)));
            }
            let mut s = vec![1; dims.len()];
            for d in (0..dims.len().saturating_sub(1)).rev() {
                s[d] = s[d + 1] * dims[d + 1];
            }
            parent_idx.push(parents);
            strides.push(s);
        }
        let order = topological_order(&variables, &parent_idx)?;
        let scm = DiscreteScm { variables, roles, index, order, parent_idx, strides };
        scm.check_roles()?;
        Ok(scm)
    }

    fn check_roles(&self) -> Result<()> {
        let r = &self.roles;
        let mut seen = BTreeMap::new();
        let all = std::iter::once(&r.target).chain(&r.mediators).chain(&r.backdoor).chain(&r.inputs);
        for name in all {
            if !self.index.contains_key(name) {
                return Err(Error::Input(format!("role refers to unknown variable {name}")));
            }
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(Error::Input(format!("{name} is assigned more than one role")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn variables(&self) -> &[DiscreteVariable] {
        &self.variables
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::Input(format!("unknown variable {name}")))
    }

    pub fn cardinality(&self, name: &str) -> Result<usize> {
        Ok(self.variables[self.index_of(name)?].cardinality)
    }

    pub fn target_index(&self) -> usize {
        self.index[&self.roles.target]
    }

    pub(crate) fn role_indices(&self, names: &[String]) -> Vec<usize> {
        names.iter().map(|n| self.index[n]).collect()
    }

    /// Number of joint exogenous states, or a capacity error above [`MAX_STATES`].
    pub fn state_count(&self) -> Result<usize> {
        let mut count: u64 = 1;
        for v in &self.variables {
            count = count.saturating_mul(v.exogenous.len() as u64);
            if count > MAX_STATES {
                return Err(Error::Capacity(format!("more than {MAX_STATES} exogenous states")));
            }
        }
        Ok(count as usize)
    }

    /// Visits every exogenous state with its probability, in mixed-radix order
    /// with the last variable varying fastest.
    pub fn for_each_state(&self, mut f: impl FnMut(&[usize], f64)) -> Result<()> {
        let total = self.state_count()?;
        let mut u = vec![0usize; self.variables.len()];
        for _ in 0..total {
            let p: f64 = u.iter().zip(&self.variables).map(|(&ui, v)| v.exogenous[ui]).product();
            f(&u, p);
            for d in (0..u.len()).rev() {
                u[d] += 1;
                if u[d] < self.variables[d].exogenous.len() {
                    break;
                }
                u[d] = 0;
            }
        }
        Ok(())
    }

    /// Evaluates every mechanism for exogenous state `u`; entries of
    /// `interventions` that are `Some` replace the corresponding mechanism.
    pub fn solve(&self, u: &[usize], interventions: &[Option<usize>]) -> Vec<usize> {
        let mut values = vec![0; self.variables.len()];
        self.solve_into(u, interventions, &mut values);
        values
    }

    pub(crate) fn solve_into(&self, u: &[usize], interventions: &[Option<usize>], values: &mut [usize]) {
        for &i in &self.order {
            values[i] = match interventions.get(i).copied().flatten() {
                Some(v) => v,
                None => {
                    let s = &self.strides[i];
                    let mut idx = u[i];
                    for (k, &p) in self.parent_idx[i].iter().enumerate() {
                        idx += values[p] * s[k];
                    }
                    self.variables[i].mechanism[idx]
                }
            };
        }
    }
}

fn topological_order(variables: &[DiscreteVariable], parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = variables.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (i, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(i);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Input("parent graph contains a cycle".into()));
    }
    Ok(order)
}

/// Exact distribution over full endogenous assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub variables: Vec<String>,
    pub probabilities: BTreeMap<Vec<usize>, f64>,
}

impl JointDistribution {
    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }

    /// Marginal over the named variables, keyed by their values in that order.
    pub fn marginal(&self, names: &[&str]) -> Result<BTreeMap<Vec<usize>, f64>> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.variables
                    .iter()
                    .position(|v| v == n)
                    .ok_or_else(|| Error::Input(format!("unknown variable {n}")))
            })
            .collect::<Result<_>>()?;
        let mut out = BTreeMap::new();
        for (assignment, p) in &self.probabilities {
            let key: Vec<usize> = idx.iter().map(|&i| assignment[i]).collect();
            *out.entry(key).or_insert(0.0) += p;
        }
        Ok(out)
    }
}

pub fn enumerate_joint(scm: &DiscreteScm) -> Result<JointDistribution> {
    let mut probabilities = BTreeMap::new();
    let none = vec![None; scm.variables.len()];
    scm.for_each_state(|u, p| {
        if p > 0.0 {
            *probabilities.entry(scm.solve(u, &none)).or_insert(0.0) += p;
        }
    })?;
    Ok(JointDistribution { variables: scm.variables.iter().map(|v| v.name.clone()).collect(), probabilities })
}

/// Conditional distribution of the prediction given the predictor's inputs.
///
/// Row `r` of `table` is indexed by the mixed-radix encoding of the input
/// values, first input most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablePredictor {
    pub inputs: Vec<String>,
    pub outputs: usize,
    pub table: Vec<Vec<f64>>,
}

impl TablePredictor {
    pub fn constant(outputs: usize, class: usize) -> Self {
        let mut row = vec![0.0; outputs];
        row[class] = 1.0;
        TablePredictor { inputs: Vec::new(), outputs, table: vec![row] }
    }

    /// Deterministic predictor: `mapping[r]` is the predicted class for input row `r`.
    pub fn deterministic(inputs: Vec<String>, outputs: usize, mapping: &[usize]) -> Self {
        let table = mapping
            .iter()
            .map(|&c| {
                let mut row = vec![0.0; outputs];
                row[c] = 1.0;
                row
            })
            .collect();
        TablePredictor { inputs, outputs, table }
    }

    /// Builds the table by calling `f` on every input assignment.
    pub fn from_fn(
        scm: &DiscreteScm,
        inputs: Vec<String>,
        outputs: usize,
        mut f: impl FnMut(&[usize]) -> Vec<f64>,
    ) -> Result<Self> {
        let cards: Vec<usize> = inputs.iter().map(|n| scm.cardinality(n)).collect::<Result<_>>()?;
        let rows: usize = cards.iter().product();
        let mut values = vec![0; cards.len()];
        let mut table = Vec::with_capacity(rows);
        for _ in 0..rows {
            table.push(f(&values));
            for d in (0..values.len()).rev() {
                values[d] += 1;
                if values[d] < cards[d] {
                    break;
                }
                values[d] = 0;
            }
        }
        let p = TablePredictor { inputs, outputs, table };
        p.bind(scm)?;
        Ok(p)
    }

    pub(crate) fn bind(&self, scm: &DiscreteScm) -> Result<BoundPredictor> {
        let idx: Vec<usize> = self.inputs.iter().map(|n| scm.index_of(n)).collect::<Result<_>>()?;
        let mut strides = vec![1; idx.len()];
        for d in (0..idx.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * scm.variables[idx[d + 1]].cardinality;
        }
        let rows: usize = idx.iter().map(|&i| scm.variables[i].cardinality).product();
        if self.table.len() != rows {
            return Err(Error::Input(format!("predictor table has {} rows, inputs need {rows}", self.table.len())));
        }
        if self.outputs == 0 {
            return Err(Error::Input("predictor without output classes".into()));
        }
        for (r, row) in self.table.iter().enumerate() {
            if row.len() != self.outputs || row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Input(format!("predictor row {r} is not a distribution over {} classes", self.outputs)));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::Input(format!("predictor row {r} sums to {total}")));
            }
        }
        Ok(BoundPredictor { idx, strides })
    }
}

/// Predictor inputs resolved to variable positions.
pub(crate) struct BoundPredictor {
    idx: Vec<usize>,
    strides: Vec<usize>,
}

impl BoundPredictor {
    pub(crate) fn row(&self, values: &[usize]) -> usize {
        self.idx.iter().zip(&self.strides).map(|(&i, &s)| values[i] * s).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(name: &str, card: usize, parents: &[&str], exo: Vec<f64>, mech: Vec<usize>) -> DiscreteVariable {
        DiscreteVariable {
            name: name.into(),
            cardinality: card,
            parents: parents.iter().map(|s| s.to_string()).collect(),
            exogenous: exo,
            mechanism: mech,
        }
    }

    fn roles(target: &str, inputs: &[&str]) -> Roles {
        Roles {
            target: target.into(),
            mediators: vec![],
            backdoor: vec![],
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn fair_coin_copy() {
        let scm = DiscreteScm::new(vec![var("v", 2, &[], vec![0.5, 0.5], vec![0, 1])], roles("v", &[])).unwrap();
        let j = enumerate_joint(&scm).unwrap();
        assert_eq!(j.probabilities[&vec![0]], 0.5);
        assert_eq!(j.probabilities[&vec![1]], 0.5);
    }

    #[test]
    fn independent_coins_form_a_product() {
        let scm = DiscreteScm::new(
            vec![var("a", 2, &[], vec![0.3, 0.7], vec![0, 1]), var("b", 2, &[], vec![0.6, 0.4], vec![0, 1])],
            roles("a", &["b"]),
        )
        .unwrap();
        let j = enumerate_joint(&scm).unwrap();
        for (a, pa) in [(0, 0.3), (1, 0.7)] {
            for (b, pb) in [(0, 0.6), (1, 0.4)] {
                assert!((j.probabilities[&vec![a, b]] - pa * pb).abs() < 1e-15);
            }
        }
        assert!((j.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_preserves_nested_tables() {
        let text = r#"{
            "version": 1,
            "variables": [
                {"name": "x", "cardinality": 2, "parents": ["y"], "exogenous": [0.8, 0.2],
                 "mechanism": [[0, 1], [1, 0]]},
                {"name": "y", "cardinality": 2, "exogenous": [0.25, 0.75], "mechanism": [0, 1]}
            ],
            "roles": {"target": "y", "inputs": ["x"]}
        }"#;
        let scm = DiscreteScm::from_json(text).unwrap();
        assert_eq!(scm.variables()[0].mechanism, vec![0, 1, 1, 0]);
        let again = DiscreteScm::from_json(&scm.to_json().unwrap()).unwrap();
        assert_eq!(again, scm);
        // y listed after its child still solves in causal order
        assert_eq!(scm.solve(&[1, 0], &[None, None]), vec![1, 0]);
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let good = var("a", 2, &[], vec![0.5, 0.5], vec![0, 1]);
        let mut bad_sum = good.clone();
        bad_sum.exogenous = vec![0.5, 0.6];
        assert!(DiscreteScm::new(vec![bad_sum], roles("a", &[])).is_err());
        let mut partial = good.clone();
        partial.mechanism = vec![0];
        assert!(DiscreteScm::new(vec![partial], roles("a", &[])).is_err());
        let mut out_of_range = good.clone();
        out_of_range.mechanism = vec![0, 2];
        assert!(DiscreteScm::new(vec![out_of_range], roles("a", &[])).is_err());
        let cyc = vec![var("a", 2, &["b"], vec![1.0], vec![0, 1]), var("b", 2, &["a"], vec![1.0], vec![0, 1])];
        assert!(DiscreteScm::new(cyc, roles("a", &[])).is_err());
        assert!(DiscreteScm::new(vec![good.clone()], roles("a", &["a"])).is_err());
        assert!(DiscreteScm::new(vec![good], roles("missing", &[])).is_err());
        let wrong_version = r#"{"version": 2, "variables": [], "roles": {"target": "y", "inputs": []}}"#;
        assert!(DiscreteScm::from_json(wrong_version).is_err());
        let extra = r#"{"version": 1, "variables": [], "roles": {"target": "y", "inputs": []}, "x": 1}"#;
        assert!(DiscreteScm::from_json(extra).is_err());
    }

    #[test]
    fn too_many_states_is_a_capacity_error() {
        let vars: Vec<DiscreteVariable> =
            (0..24).map(|i| var(&format!("v{i}"), 2, &[], vec![0.5, 0.5], vec![0, 1])).collect();
        let scm = DiscreteScm::new(vars, roles("v0", &[])).unwrap();
        assert!(matches!(enumerate_joint(&scm), Err(Error::Capacity(_))));
    }

    #[test]
    fn predictor_tables_are_validated() {
        let scm = DiscreteScm::new(
            vec![var("y", 2, &[], vec![0.5, 0.5], vec![0, 1]), var("x", 3, &["y"], vec![1.0], vec![0, 2])],
            roles("y", &["x"]),
        )
        .unwrap();
        let p = TablePredictor::deterministic(vec!["x".into()], 2, &[0, 1, 1]);
        let bound = p.bind(&scm).unwrap();
        assert_eq!(bound.row(&[1, 2]), 2);
        let short = TablePredictor::deterministic(vec!["x".into()], 2, &[0, 1]);
        assert!(short.bind(&scm).is_err());
        let mut unnormalised = p.clone();
        unnormalised.table[0] = vec![0.5, 0.4];
        assert!(unnormalised.bind(&scm).is_err());
    }
}
