use serde::{Deserialize, Serialize};

use super::{Dataset, Task, Unit};
use crate::error::{Error, Result};
use crate::rng;

/// Collider-selection rules that turn a balanced population into a biased sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Keep with probability 1 when pose equals the lighting tertile, else 0.05.
    YalebLike,
    /// Keep with probability 0.9 when sex and skin tone agree, else 0.1.
    FairfaceLike,
}

impl SelectionRule {
    fn keep_probabilities(&self, units: &[Unit]) -> Result<Vec<f64>> {
        match self {
            SelectionRule::YalebLike => {
                let az = column(units, "azimuth")?;
                let el = column(units, "elevation")?;
                let pose = column(units, "pose")?;
                let (za, ze) = (standardize(&az), standardize(&el));
                let score: Vec<f64> = za.iter().zip(&ze).map(|(a, e)| a + e).collect();
                let tertile = quantile_partition(&score, 3);
                Ok(pose
                    .iter()
                    .zip(&tertile)
                    .map(|(&p, &z)| if p as usize == z { 1.0 } else { 0.05 })
                    .collect())
            }
            SelectionRule::FairfaceLike => {
                let sex = column(units, "sex")?;
                let skin = column(units, "skin")?;
                Ok(sex.iter().zip(&skin).map(|(a, b)| if a == b { 0.9 } else { 0.1 }).collect())
            }
        }
    }
}

fn column(units: &[Unit], name: &str) -> Result<Vec<f64>> {
    units
        .iter()
        .map(|u| {
            u.endogenous
                .get(name)
                .copied()
                .ok_or_else(|| Error::Input(format!("selection rule needs attribute {name}")))
        })
        .collect()
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - mean) / sd } else { x - mean }).collect()
}

/// Rank-based partition into `k` equally sized groups (ties broken by index).
fn quantile_partition(v: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut group = vec![0; v.len()];
    for (rank, &i) in order.iter().enumerate() {
        group[i] = (rank * k / v.len()).min(k - 1);
    }
    group
}

/// Independent Bernoulli retention of each unit with the rule's keep probability.
pub fn selection_bias_filter(units: &[Unit], rule: SelectionRule, seed: u64) -> Result<Vec<Unit>> {
    if units.is_empty() {
        return Ok(Vec::new());
    }
    let probs = rule.keep_probabilities(units)?;
    let mut r = rng::stream(seed, rng::streams::SELECTION);
    Ok(units
        .iter()
        .zip(probs)
        .filter(|(_, p)| rng::bernoulli(&mut r, *p))
        .map(|(u, _)| u.clone())
        .collect())
}

/// Corrupts observed labels: class flips to a uniformly chosen other class, or
/// additive Gaussian noise with standard deviation `rate · sd(targets)`.
pub fn apply_label_noise(units: &mut [Unit], rate: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("label noise {rate} outside [0, 1)")));
    }
    if rate == 0.0 || units.is_empty() {
        return Ok(());
    }
    let mut r = rng::stream(seed, rng::streams::LABEL_NOISE);
    match units[0].context.family.task() {
        Task::Classification { classes } => {
            for u in units.iter_mut() {
                if rng::bernoulli(&mut r, rate) {
                    let current = u.label as usize;
                    let mut other = rng::index(&mut r, classes - 1);
                    if other >= current {
                        other += 1;
                    }
                    u.label = other as f64;
                }
            }
        }
        Task::Regression => {
            let t: Vec<f64> = units.iter().map(Unit::target).collect();
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            for u in units.iter_mut() {
                u.label += rng::normal(&mut r, 0.0, rate * sd);
            }
        }
    }
    Ok(())
}

/// Empirical `P(b-bin | y-bin)` for one bias variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityCell {
    pub bias_variable: String,
    pub y_bin: usize,
    pub b_bin: usize,
    pub count: usize,
    pub conditional: f64,
}

/// Overlap diagnostic over target/bias bins.
///
/// Discrete variables use their values as bins; continuous ones are split at
/// the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub cells: Vec<PositivityCell>,
    pub min_conditional: f64,
}

impl PositivityReport {
    pub fn holds(&self) -> bool {
        self.min_conditional > 0.0
    }
}

fn bins(values: &[f64], discrete: bool) -> (Vec<usize>, usize) {
    if discrete {
        let mut levels: Vec<f64> = values.to_vec();
        levels.sort_by(|a, b| a.total_cmp(b));
        levels.dedup();
        let idx = values.iter().map(|v| levels.iter().position(|l| l == v).unwrap()).collect();
        (idx, levels.len())
    } else {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = sorted[sorted.len() / 2];
        (values.iter().map(|&v| usize::from(v >= median)).collect(), 2)
    }
}

pub fn positivity_report(data: &Dataset) -> Result<PositivityReport> {
    if data.n() == 0 {
        return Err(Error::Input("positivity report on an empty dataset".into()));
    }
    let family = data.spec.family;
    let target = family.target();
    let (ybins, ny) = bins(&data.variable(target)?, family.support(target)?.is_discrete());
    let mut cells = Vec::new();
    for var in family.bias_variables() {
        let (bbins, nb) = bins(&data.variable(var)?, family.support(var)?.is_discrete());
        let mut counts = vec![vec![0usize; nb]; ny];
        for (y, b) in ybins.iter().zip(&bbins) {
            counts[*y][*b] += 1;
        }
        for (y, row) in counts.iter().enumerate() {
            let total: usize = row.iter().sum();
            for (b, &count) in row.iter().enumerate() {
                let conditional = if total > 0 { count as f64 / total as f64 } else { 0.0 };
                cells.push(PositivityCell { bias_variable: var.to_string(), y_bin: y, b_bin: b, count, conditional });
            }
        }
    }
    let min_conditional = cells.iter().map(|c| c.conditional).fold(f64::INFINITY, f64::min);
    Ok(PositivityReport { cells, min_conditional })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{generate, DatasetSpec, Family};

    fn population(family: Family, n: usize, seed: u64) -> Vec<Unit> {
        generate(&DatasetSpec::new(family, n, seed).unbiased().with_label_noise(0.0)).unwrap().units
    }

    #[test]
    fn fairface_retention_frequencies() {
        let units = population(Family::FairfaceLike, 100_000, 1);
        let kept = selection_bias_filter(&units, SelectionRule::FairfaceLike, 2).unwrap();
        let count = |us: &[Unit], aligned: bool| us.iter().filter(|u| (u.endogenous["sex"] == u.endogenous["skin"]) == aligned).count() as f64;
        assert!((count(&kept, true) / count(&units, true) - 0.9).abs() < 0.01);
        assert!((count(&kept, false) / count(&units, false) - 0.1).abs() < 0.01);
        assert!((kept.len() as f64 / units.len() as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn yaleb_retention_frequencies() {
        let units = population(Family::YalebLike, 100_000, 3);
        let probs = SelectionRule::YalebLike.keep_probabilities(&units).unwrap();
        let kept = selection_bias_filter(&units, SelectionRule::YalebLike, 4).unwrap();
        let kept_keys: std::collections::HashSet<u64> = kept.iter().map(|u| u.exogenous["u_az"].to_bits()).collect();
        for (u, p) in units.iter().zip(&probs) {
            if *p == 1.0 {
                assert!(kept_keys.contains(&u.exogenous["u_az"].to_bits()));
            }
        }
        let matched = probs.iter().filter(|&&p| p == 1.0).count() as f64;
        let expect_rate = (matched + 0.05 * (units.len() as f64 - matched)) / units.len() as f64;
        assert!((kept.len() as f64 / units.len() as f64 - expect_rate).abs() < 0.01);
        let mismatched_rate = (kept.len() as f64 - matched) / (units.len() as f64 - matched);
        assert!((mismatched_rate - 0.05).abs() < 0.01);
    }

    #[test]
    fn quantile_partition_is_balanced() {
        let v: Vec<f64> = (0..9).rev().map(f64::from).collect();
        assert_eq!(quantile_partition(&v, 3), vec![2, 2, 2, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn missing_attribute_is_an_input_error() {
        let units = population(Family::Blob, 3, 1);
        assert!(matches!(selection_bias_filter(&units, SelectionRule::FairfaceLike, 1), Err(Error::Input(_))));
    }

    #[test]
    fn label_noise_flip_frequency() {
        let mut units = population(Family::WaterbirdsDiscrete, 100_000, 5);
        let clean: Vec<f64> = units.iter().map(|u| u.label).collect();
        apply_label_noise(&mut units, 0.1, 6).unwrap();
        let flips = units.iter().zip(&clean).filter(|(u, c)| u.label != **c).count() as f64;
        assert!((flips / 100_000.0 - 0.1).abs() < 0.005);
        assert!(units.iter().all(|u| u.label == 0.0 || u.label == 1.0));
    }

    #[test]
    fn label_noise_zero_and_determinism() {
        let base = population(Family::Blob, 50, 7);
        let mut a = base.clone();
        apply_label_noise(&mut a, 0.0, 1).unwrap();
        assert_eq!(a, base);
        let mut b = base.clone();
        let mut c = base.clone();
        apply_label_noise(&mut b, 0.3, 9).unwrap();
        apply_label_noise(&mut c, 0.3, 9).unwrap();
        assert_eq!(b, c);
        assert_ne!(b, base);
        assert!(apply_label_noise(&mut c, 1.0, 9).is_err());
    }

    #[test]
    fn biased_generators_have_positive_overlap() {
        for family in Family::ALL {
            let data = generate(&DatasetSpec::new(family, 10_000, 13).with_resolution(8)).unwrap();
            let report = positivity_report(&data).unwrap();
            assert!(report.holds(), "{family:?}: {}", report.min_conditional);
        }
    }
}
