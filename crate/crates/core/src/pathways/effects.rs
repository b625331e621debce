use serde::{Deserialize, Serialize};

use super::discrete::{BoundPredictor, DiscreteScm, TablePredictor};
use crate::error::{Error, Result};

/// Numerical tolerance for the exact identities and the independence test.
pub const EXACT_TOL: f64 = 1e-12;
pub const REPORT_VERSION: u32 = 1;

/// Observed values `C = (y, w, z)`; mediator and backdoor values follow the
/// order of the corresponding role lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditioning {
    pub y: usize,
    pub mediators: Vec<usize>,
    pub backdoor: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtfEffects {
    pub stable: f64,
    pub ie: f64,
    pub se: f64,
}

/// Per-unit predictor rows for the factual world, every `do(Y = y')` world and
/// every nested `do(Y = y1, W = W_{y0})` world.
struct States {
    k: usize,
    probs: Vec<f64>,
    y: Vec<usize>,
    cell: Vec<usize>,
    rows: Vec<u32>,
}

impl States {
    fn worlds(k: usize) -> usize {
        1 + k + k * k
    }

    fn collect(scm: &DiscreteScm, bound: &BoundPredictor) -> Result<States> {
        let target = scm.target_index();
        let k = scm.variables()[target].cardinality;
        let mediators = scm.role_indices(&scm.roles().mediators);
        let cell_vars: Vec<usize> = mediators.iter().copied().chain(scm.role_indices(&scm.roles().backdoor)).collect();
        let n = scm.variables().len();
        let mut st = States { k, probs: Vec::new(), y: Vec::new(), cell: Vec::new(), rows: Vec::new() };
        let none = vec![None; n];
        let mut iv = vec![None; n];
        let mut factual = vec![0; n];
        let mut under = vec![vec![0; n]; k];
        let mut nested = vec![0; n];
        scm.for_each_state(|u, p| {
            if p == 0.0 {
                return;
            }
            scm.solve_into(u, &none, &mut factual);
            st.probs.push(p);
            st.y.push(factual[target]);
            let mut cell = 0;
            for &v in &cell_vars {
                cell = cell * scm.variables()[v].cardinality + factual[v];
            }
            st.cell.push(cell);
            st.rows.push(bound.row(&factual) as u32);
            for (yp, world) in under.iter_mut().enumerate() {
                iv[target] = Some(yp);
                scm.solve_into(u, &iv, world);
                st.rows.push(bound.row(world) as u32);
            }
            for y1 in 0..k {
                for y0 in 0..k {
                    iv[target] = Some(y1);
                    for &m in &mediators {
                        iv[m] = Some(under[y0][m]);
                    }
                    scm.solve_into(u, &iv, &mut nested);
                    st.rows.push(bound.row(&nested) as u32);
                }
            }
            iv.iter_mut().for_each(|v| *v = None);
        })?;
        Ok(st)
    }
}

/// Exact pathway quantities for one `(SCM, predictor)` pair, built from a
/// single pass over the exogenous states.
#[derive(Debug, Clone)]
pub struct PathwayAnalysis {
    k: usize,
    outputs: usize,
    cells: usize,
    mediator_cards: Vec<usize>,
    backdoor_cards: Vec<usize>,
    mass: Vec<f64>,
    fact: Vec<f64>,
    under: Vec<f64>,
    nested: Vec<f64>,
}

impl PathwayAnalysis {
    pub fn new(scm: &DiscreteScm, predictor: &TablePredictor) -> Result<Self> {
        let bound = predictor.bind(scm)?;
        let states = States::collect(scm, &bound)?;
        Ok(Self::from_states(scm, &states, &predictor.table))
    }

    fn from_states(scm: &DiscreteScm, st: &States, table: &[Vec<f64>]) -> Self {
        let card = |names: &[String]| -> Vec<usize> {
            names.iter().map(|n| scm.cardinality(n).expect("validated role")).collect()
        };
        let mediator_cards = card(&scm.roles().mediators);
        let backdoor_cards = card(&scm.roles().backdoor);
        let cells = mediator_cards.iter().chain(&backdoor_cards).product::<usize>();
        let (k, o) = (st.k, table[0].len());
        let mut a = PathwayAnalysis {
            k,
            outputs: o,
            cells,
            mediator_cards,
            backdoor_cards,
            mass: vec![0.0; k * cells],
            fact: vec![0.0; k * cells * o],
            under: vec![0.0; k * cells * k * o],
            nested: vec![0.0; k * cells * k * k * o],
        };
        let w = States::worlds(k);
        for (s, &p) in st.probs.iter().enumerate() {
            let yc = st.y[s] * cells + st.cell[s];
            let rows = &st.rows[s * w..(s + 1) * w];
            a.mass[yc] += p;
            add_scaled(&mut a.fact[yc * o..(yc + 1) * o], &table[rows[0] as usize], p);
            for yp in 0..k {
                let at = (yc * k + yp) * o;
                add_scaled(&mut a.under[at..at + o], &table[rows[1 + yp] as usize], p);
            }
            for pair in 0..k * k {
                let at = (yc * k * k + pair) * o;
                add_scaled(&mut a.nested[at..at + o], &table[rows[1 + k + pair] as usize], p);
            }
        }
        a
    }

    pub fn target_cardinality(&self) -> usize {
        self.k
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    fn check(&self, y0: usize, y1: usize, yhat: usize) -> Result<()> {
        if y0 >= self.k || y1 >= self.k {
            return Err(Error::Input(format!("target values ({y0}, {y1}) outside 0..{}", self.k)));
        }
        if yhat >= self.outputs {
            return Err(Error::Input(format!("prediction {yhat} outside 0..{}", self.outputs)));
        }
        Ok(())
    }

    pub fn p_y(&self, y: usize) -> f64 {
        self.mass[y * self.cells..(y + 1) * self.cells].iter().sum()
    }

    fn positive_y(&self, y: usize) -> Result<f64> {
        let p = self.p_y(y);
        if p > 0.0 {
            Ok(p)
        } else {
            Err(Error::UndefinedConditional(format!("P(Y = {y}) = 0")))
        }
    }

    /// `P(ŷ | y)`.
    pub fn p_yhat_given_y(&self, yhat: usize, y: usize) -> Result<f64> {
        let py = self.positive_y(y)?;
        let o = self.outputs;
        Ok((0..self.cells).map(|c| self.fact[(y * self.cells + c) * o + yhat]).sum::<f64>() / py)
    }

    /// `P(ŷ_{y'} | y)`.
    fn p_under_given_y(&self, yhat: usize, yp: usize, y: usize) -> Result<f64> {
        let py = self.positive_y(y)?;
        let (k, o) = (self.k, self.outputs);
        let sum: f64 = (0..self.cells).map(|c| self.under[((y * self.cells + c) * k + yp) * o + yhat]).sum();
        Ok(sum / py)
    }

    pub fn tv(&self, y0: usize, y1: usize, yhat: usize) -> Result<f64> {
        self.check(y0, y1, yhat)?;
        Ok(self.p_yhat_given_y(yhat, y1)? - self.p_yhat_given_y(yhat, y0)?)
    }

    pub fn ctf_se(&self, y0: usize, y1: usize, yhat: usize) -> Result<f64> {
        self.check(y0, y1, yhat)?;
        Ok(self.p_under_given_y(yhat, y1, y0)? - self.p_under_given_y(yhat, y1, y1)?)
    }

    /// Cell index of `C`, in mediator-then-backdoor mixed radix.
    pub fn cell_of(&self, c: &Conditioning) -> Result<usize> {
        if c.mediators.len() != self.mediator_cards.len() || c.backdoor.len() != self.backdoor_cards.len() {
            return Err(Error::Input("conditioning does not list every mediator and backdoor value".into()));
        }
        let mut cell = 0;
        for (&v, &card) in c.mediators.iter().chain(&c.backdoor).zip(self.mediator_cards.iter().chain(&self.backdoor_cards)) {
            if v >= card {
                return Err(Error::Input(format!("conditioning value {v} outside 0..{card}")));
            }
            cell = cell * card + v;
        }
        Ok(cell)
    }

    /// Stable and indirect effects at cell `(y, cell)`; `None` when the cell has no mass.
    fn cell_effects(&self, y0: usize, y1: usize, yhat: usize, y: usize, cell: usize) -> Option<(f64, f64)> {
        let (k, o) = (self.k, self.outputs);
        let yc = y * self.cells + cell;
        let m = self.mass[yc];
        if m <= 0.0 {
            return None;
        }
        let nested = self.nested[(yc * k * k + y1 * k + y0) * o + yhat] / m;
        let at_y0 = self.under[(yc * k + y0) * o + yhat] / m;
        let at_y1 = self.under[(yc * k + y1) * o + yhat] / m;
        Some((nested - at_y0, nested - at_y1))
    }

    pub fn ctf_effects(&self, y0: usize, y1: usize, yhat: usize, c: &Conditioning) -> Result<CtfEffects> {
        self.check(y0, y1, yhat)?;
        if c.y >= self.k {
            return Err(Error::Input(format!("conditioning target {} outside 0..{}", c.y, self.k)));
        }
        let cell = self.cell_of(c)?;
        let (stable, ie) = self
            .cell_effects(y0, y1, yhat, c.y, cell)
            .ok_or_else(|| Error::UndefinedConditional(format!("P(C = {c:?}) = 0")))?;
        Ok(CtfEffects { stable, ie, se: self.ctf_se(y0, y1, yhat)? })
    }

    /// `Σ_{w,z} P(w,z | y)[stable − ie](C = (y, w, z))` together with the
    /// weighted stable and indirect parts.
    fn weighted(&self, y0: usize, y1: usize, yhat: usize, y: usize) -> Result<(f64, f64)> {
        let py = self.positive_y(y)?;
        let (mut stable, mut ie) = (0.0, 0.0);
        for cell in 0..self.cells {
            if let Some((s, i)) = self.cell_effects(y0, y1, yhat, y, cell) {
                let w = self.mass[y * self.cells + cell] / py;
                stable += w * s;
                ie += w * i;
            }
        }
        Ok((stable, ie))
    }

    /// Residual of the decomposition with the cell weights conditioned on `y`.
    pub fn decomposition_residual(&self, y0: usize, y1: usize, yhat: usize, y: usize) -> Result<f64> {
        let tv = self.tv(y0, y1, yhat)?;
        let (stable, ie) = self.weighted(y0, y1, yhat, y)?;
        Ok((tv - (stable - ie - self.ctf_se(y0, y1, yhat)?)).abs())
    }

    pub fn entry(&self, y0: usize, y1: usize, yhat: usize) -> Result<PathwayEntry> {
        let (ctf_stable, ctf_ie) = self.weighted(y0, y1, yhat, y0)?;
        Ok(PathwayEntry {
            y0,
            y1,
            yhat,
            tv: self.tv(y0, y1, yhat)?,
            ctf_stable,
            ctf_ie,
            ctf_se: self.ctf_se(y0, y1, yhat)?,
            decomposition_residual: self.decomposition_residual(y0, y1, yhat, y0)?,
            alternative_residual: self.decomposition_residual(y0, y1, yhat, y1)?,
        })
    }

    pub fn report(&self) -> Result<PathwayReport> {
        let mut entries = Vec::new();
        for y0 in 0..self.k {
            for y1 in (0..self.k).filter(|&y1| y1 != y0) {
                for yhat in 0..self.outputs {
                    entries.push(self.entry(y0, y1, yhat)?);
                }
            }
        }
        let max_residual = entries.iter().map(|e| e.decomposition_residual).fold(0.0, f64::max);
        let max_alternative_residual = entries.iter().map(|e| e.alternative_residual).fold(0.0, f64::max);
        Ok(PathwayReport { version: REPORT_VERSION, entries, max_residual, max_alternative_residual })
    }

    /// Largest `|P(ŷ, c | y) − P(ŷ | y) P(c | y)|` over populated target values.
    pub fn independence_residual(&self) -> f64 {
        let o = self.outputs;
        let mut worst: f64 = 0.0;
        for y in 0..self.k {
            let py = self.p_y(y);
            if py <= 0.0 {
                continue;
            }
            for yhat in 0..o {
                let marginal: f64 = (0..self.cells).map(|c| self.fact[(y * self.cells + c) * o + yhat]).sum::<f64>() / py;
                for c in 0..self.cells {
                    let joint = self.fact[(y * self.cells + c) * o + yhat] / py;
                    let pc = self.mass[y * self.cells + c] / py;
                    worst = worst.max((joint - marginal * pc).abs());
                }
            }
        }
        worst
    }

    pub fn certificate(&self) -> StabilityCertificate {
        let ci_residual = self.independence_residual();
        let (mut max_ie, mut max_se, mut de_spread) = (0.0f64, 0.0f64, 0.0f64);
        for y0 in 0..self.k {
            for y1 in 0..self.k {
                for yhat in 0..self.outputs {
                    if let Ok(se) = self.ctf_se(y0, y1, yhat) {
                        max_se = max_se.max(se.abs());
                    }
                    for y in 0..self.k {
                        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                        for cell in 0..self.cells {
                            if let Some((s, i)) = self.cell_effects(y0, y1, yhat, y, cell) {
                                max_ie = max_ie.max(i.abs());
                                lo = lo.min(s);
                                hi = hi.max(s);
                            }
                        }
                        if hi >= lo {
                            de_spread = de_spread.max(hi - lo);
                        }
                    }
                }
            }
        }
        StabilityCertificate { is_ci: ci_residual <= EXACT_TOL, ci_residual, max_ie, max_se, de_spread }
    }

    /// `Σ_y P(ŷ = y | y)`, the class-balanced likelihood of a label predictor.
    pub fn balanced_likelihood(&self) -> Result<f64> {
        (0..self.k.min(self.outputs)).map(|y| self.p_yhat_given_y(y, y)).sum()
    }

    /// Sum over ordered pairs `y0 ≠ y1` of the `y0`-weighted stable effect on `ŷ = y1`.
    pub fn stable_score(&self) -> Result<f64> {
        let mut total = 0.0;
        for y0 in 0..self.k {
            for y1 in (0..self.k.min(self.outputs)).filter(|&y1| y1 != y0) {
                total += self.weighted(y0, y1, y1, y0)?.0;
            }
        }
        Ok(total)
    }
}

fn add_scaled(acc: &mut [f64], row: &[f64], p: f64) {
    for (a, r) in acc.iter_mut().zip(row) {
        *a += p * r;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayEntry {
    pub y0: usize,
    pub y1: usize,
    pub yhat: usize,
    pub tv: f64,
    /// Stable and indirect effects averaged with weights `P(w, z | y0)`.
    pub ctf_stable: f64,
    pub ctf_ie: f64,
    pub ctf_se: f64,
    /// Decomposition residual with the cell weights conditioned on `y0`.
    pub decomposition_residual: f64,
    /// Same residual with the weights and conditioning set taken at `y1`.
    pub alternative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayReport {
    pub version: u32,
    pub entries: Vec<PathwayEntry>,
    pub max_residual: f64,
    pub max_alternative_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub is_ci: bool,
    pub ci_residual: f64,
    pub max_ie: f64,
    pub max_se: f64,
    /// Largest range of the stable effect over `(w, z)` at fixed `(y0, y1, ŷ, y)`.
    pub de_spread: f64,
}

pub fn tv(scm: &DiscreteScm, predictor: &TablePredictor, y0: usize, y1: usize, yhat: usize) -> Result<f64> {
    PathwayAnalysis::new(scm, predictor)?.tv(y0, y1, yhat)
}

pub fn ctf_effects(
    scm: &DiscreteScm,
    predictor: &TablePredictor,
    y0: usize,
    y1: usize,
    yhat: usize,
    conditioning: &Conditioning,
) -> Result<CtfEffects> {
    PathwayAnalysis::new(scm, predictor)?.ctf_effects(y0, y1, yhat, conditioning)
}

pub fn verify_decomposition(
    scm: &DiscreteScm,
    predictor: &TablePredictor,
    y0: usize,
    y1: usize,
    yhat: usize,
) -> Result<PathwayEntry> {
    PathwayAnalysis::new(scm, predictor)?.entry(y0, y1, yhat)
}

pub fn pathway_report(scm: &DiscreteScm, predictor: &TablePredictor) -> Result<PathwayReport> {
    PathwayAnalysis::new(scm, predictor)?.report()
}

pub fn stability_certificate(scm: &DiscreteScm, predictor: &TablePredictor) -> Result<StabilityCertificate> {
    Ok(PathwayAnalysis::new(scm, predictor)?.certificate())
}

/// Largest support and variable count accepted by the exhaustive predictor search.
pub const MAXIMIZER_MAX_CARDINALITY: usize = 3;
pub const MAXIMIZER_MAX_VARIABLES: usize = 4;
pub const MAXIMIZER_MAX_TABLES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizerCheck {
    pub holds: bool,
    pub tables: usize,
    pub ci_tables: usize,
    pub mle_likelihood: f64,
    /// Best stable score among the likelihood-maximising independent tables.
    pub mle_stable: f64,
    pub max_stable: f64,
    /// Row-to-class mapping of one likelihood-maximising independent table.
    pub mle_table: Vec<usize>,
}

/// Enumerates every deterministic predictor over the input variables, keeps
/// those with `Ŷ ⊥ (W, Z) | Y`, and checks that the balanced-likelihood
/// maximiser among them also maximises the stable score.
pub fn mle_stable_maximizer_check(scm: &DiscreteScm) -> Result<MaximizerCheck> {
    if scm.variables().len() > MAXIMIZER_MAX_VARIABLES {
        return Err(Error::Capacity(format!("exhaustive search supports at most {MAXIMIZER_MAX_VARIABLES} variables")));
    }
    if scm.variables().iter().any(|v| v.cardinality > MAXIMIZER_MAX_CARDINALITY) {
        return Err(Error::Capacity(format!("exhaustive search supports at most {MAXIMIZER_MAX_CARDINALITY} values")));
    }
    let inputs = scm.roles().inputs.clone();
    let k = scm.variables()[scm.target_index()].cardinality;
    let rows: usize = inputs.iter().map(|n| scm.cardinality(n)).collect::<Result<Vec<_>>>()?.iter().product();
    let tables = (k as u64).checked_pow(rows as u32).filter(|&t| t <= MAXIMIZER_MAX_TABLES).ok_or_else(|| {
        Error::Capacity(format!("{k}^{rows} predictor tables exceed {MAXIMIZER_MAX_TABLES}"))
    })? as usize;
    let probe = TablePredictor::deterministic(inputs.clone(), k, &vec![0; rows]);
    let states = States::collect(scm, &probe.bind(scm)?)?;
    let one_hot: Vec<Vec<f64>> = (0..k).map(|c| (0..k).map(|j| f64::from(u8::from(j == c))).collect()).collect();

    let mut mapping = vec![0usize; rows];
    let mut table: Vec<Vec<f64>> = vec![one_hot[0].clone(); rows];
    let mut candidates: Vec<(f64, f64, usize)> = Vec::new();
    for t in 0..tables {
        for (r, &c) in mapping.iter().enumerate() {
            table[r].clone_from(&one_hot[c]);
        }
        let a = PathwayAnalysis::from_states(scm, &states, &table);
        if a.independence_residual() <= EXACT_TOL {
            candidates.push((a.balanced_likelihood()?, a.stable_score()?, t));
        }
        for d in (0..rows).rev() {
            mapping[d] += 1;
            if mapping[d] < k {
                break;
            }
            mapping[d] = 0;
        }
    }
    let mle_likelihood = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let max_stable = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let &(_, mle_stable, chosen) = candidates
        .iter()
        .filter(|c| c.0 >= mle_likelihood - EXACT_TOL)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Contract("no independent predictor table found".into()))?;
    let mut mle_table = vec![0; rows];
    let mut rest = chosen;
    for d in (0..rows).rev() {
        mle_table[d] = rest % k;
        rest /= k;
    }
    let ci_tables = candidates.len();
    Ok(MaximizerCheck {
        holds: mle_stable >= max_stable - EXACT_TOL,
        tables,
        ci_tables,
        mle_likelihood,
        mle_stable,
        max_stable,
        mle_table,
    })
}
