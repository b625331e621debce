//! Seeded generators for the synthetic structural causal models.
//!
//! A [`Unit`] keeps its exogenous draw, so any counterfactual observation of
//! it can be regenerated by re-running the mechanisms with some variables
//! clamped ([`counterfactual`]). Biased datasets are produced either by the
//! biasing edge inside the mechanisms (blob, dSprites, waterbirds) or by
//! selection on a collider (the YaleB-like and FairFace-like rules).

mod families;
mod io;
mod raster;
mod selection;

pub use io::{load_dataset, read_dataset, save_dataset, write_csv, write_dataset};
pub use raster::Shape;
pub use selection::{
    apply_label_noise, positivity_report, selection_bias_filter, PositivityCell, PositivityReport, SelectionRule,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dependence::PointSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Blob,
    Dsprites,
    /// dSprites variant with a binary scale target and two confounded position biases.
    DspritesMultibias,
    YalebLike,
    FairfaceLike,
    WaterbirdsDiscrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    #[default]
    Biased,
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// Range used when a variable is intervened on uniformly.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Interval(f64, f64),
    Discrete(Vec<f64>),
}

impl Support {
    pub fn sample(&self, rng: &mut rng::Rng) -> f64 {
        match self {
            Support::Interval(lo, hi) => rng::uniform_range(rng, *lo, *hi),
            Support::Discrete(values) => values[rng::index(rng, values.len())],
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Support::Discrete(_))
    }
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Blob,
        Family::Dsprites,
        Family::DspritesMultibias,
        Family::YalebLike,
        Family::FairfaceLike,
        Family::WaterbirdsDiscrete,
    ];

    pub fn tag(self) -> u8 {
        Family::ALL.iter().position(|&f| f == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Result<Family> {
        Family::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown family tag {tag}")))
    }

    /// Endogenous variables in topological order.
    pub fn variables(self) -> &'static [&'static str] {
        match self {
            Family::Blob => &["ci", "bi"],
            Family::Dsprites => &["x", "y", "x_pos", "y_pos", "scale", "orientation", "shape"],
            Family::DspritesMultibias => &["scale_class", "scale", "x_pos", "y_pos", "orientation", "shape"],
            Family::YalebLike => &["pose", "azimuth", "elevation"],
            Family::FairfaceLike => &["sex", "skin"],
            Family::WaterbirdsDiscrete => &["bird", "background"],
        }
    }

    pub fn target(self) -> &'static str {
        match self {
            Family::Blob => "ci",
            Family::Dsprites => "y",
            Family::DspritesMultibias => "scale_class",
            Family::YalebLike => "pose",
            Family::FairfaceLike => "sex",
            Family::WaterbirdsDiscrete => "bird",
        }
    }

    pub fn bias_variables(self) -> &'static [&'static str] {
        match self {
            Family::Blob => &["bi"],
            Family::Dsprites => &["x"],
            Family::DspritesMultibias => &["x_pos", "y_pos"],
            Family::YalebLike => &["azimuth", "elevation"],
            Family::FairfaceLike => &["skin"],
            Family::WaterbirdsDiscrete => &["background"],
        }
    }

    pub fn task(self) -> Task {
        match self {
            Family::Blob | Family::Dsprites => Task::Regression,
            Family::YalebLike => Task::Classification { classes: 3 },
            _ => Task::Classification { classes: 2 },
        }
    }

    pub fn is_image(self) -> bool {
        matches!(self, Family::Blob | Family::Dsprites | Family::DspritesMultibias)
    }

    pub fn default_resolution(self) -> usize {
        match self {
            Family::Blob | Family::DspritesMultibias => 32,
            Family::Dsprites => 64,
            _ => 0,
        }
    }

    pub fn default_feature_noise(self) -> f64 {
        if self.is_image() {
            0.0
        } else {
            0.5
        }
    }

    /// Leading feature channels that encode the target; the rest encode bias.
    pub(crate) fn target_feature_count(self) -> usize {
        match self {
            Family::YalebLike => 3,
            Family::FairfaceLike | Family::WaterbirdsDiscrete => 1,
            _ => usize::MAX,
        }
    }

    pub fn selection_rule(self) -> Option<SelectionRule> {
        match self {
            Family::YalebLike => Some(SelectionRule::YalebLike),
            Family::FairfaceLike => Some(SelectionRule::FairfaceLike),
            _ => None,
        }
    }

    pub fn support(self, variable: &str) -> Result<Support> {
        use Support::{Discrete, Interval};
        let binary = || Discrete(vec![0.0, 1.0]);
        let s = match (self, variable) {
            (Family::Blob, "ci" | "bi") => Interval(0.0, 1.0),
            (Family::Dsprites, "x" | "x_pos") => Interval(0.0, 1.0),
            (Family::Dsprites, "y") => Interval(-0.3, 1.3),
            (Family::Dsprites, "y_pos") => Interval(0.5, 4.0),
            (Family::Dsprites, "scale") => Interval(0.5, 0.7),
            (Family::DspritesMultibias, "scale_class") => binary(),
            (Family::DspritesMultibias, "scale") => Interval(0.45, 0.8),
            (Family::DspritesMultibias, "x_pos" | "y_pos") => Interval(0.15, 0.85),
            (Family::Dsprites | Family::DspritesMultibias, "orientation") => Interval(0.0, 360.0),
            (Family::Dsprites | Family::DspritesMultibias, "shape") => Discrete(vec![0.0, 1.0, 2.0]),
            (Family::YalebLike, "pose") => Discrete(vec![0.0, 1.0, 2.0]),
            (Family::YalebLike, "azimuth" | "elevation") => Interval(-1.0, 1.0),
            (Family::FairfaceLike, "sex" | "skin") => binary(),
            (Family::WaterbirdsDiscrete, "bird" | "background") => binary(),
            _ => return Err(Error::Input(format!("{variable} is not an endogenous variable of {self:?}"))),
        };
        Ok(s)
    }
}

fn default_label_noise() -> f64 {
    0.1
}

/// Parameters of one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    #[serde(default)]
    pub bias_mode: BiasMode,
    /// Image side length; family default when absent.
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Observation noise standard deviation; family default when absent.
    #[serde(default)]
    pub feature_noise: Option<f64>,
}

impl DatasetSpec {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        DatasetSpec {
            family,
            n,
            seed,
            label_noise: default_label_noise(),
            bias_mode: BiasMode::Biased,
            resolution: None,
            feature_noise: None,
        }
    }

    pub fn unbiased(mut self) -> Self {
        self.bias_mode = BiasMode::Unbiased;
        self
    }

    pub fn with_label_noise(mut self, rate: f64) -> Self {
        self.label_noise = rate;
        self
    }

    pub fn with_resolution(mut self, res: usize) -> Self {
        self.resolution = Some(res);
        self
    }

    pub fn with_feature_noise(mut self, sd: f64) -> Self {
        self.feature_noise = Some(sd);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!("label noise {} outside [0, 1)", self.label_noise)));
        }
        if self.family.is_image() && self.context().resolution < 8 {
            return Err(Error::Config("image resolution must be at least 8".into()));
        }
        if let Some(sd) = self.feature_noise {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!("feature noise {sd} must be a finite non-negative number")));
            }
        }
        Ok(())
    }

    pub fn context(&self) -> UnitContext {
        UnitContext {
            family: self.family,
            bias_mode: self.bias_mode,
            resolution: self.resolution.unwrap_or_else(|| self.family.default_resolution()),
            feature_noise: self.feature_noise.unwrap_or_else(|| self.family.default_feature_noise()),
        }
    }
}

/// Everything besides the exogenous draw that the mechanisms and renderer need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitContext {
    pub family: Family,
    pub bias_mode: BiasMode,
    pub resolution: usize,
    pub feature_noise: f64,
}

/// One sampled individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub context: UnitContext,
    pub exogenous: BTreeMap<String, f64>,
    pub endogenous: BTreeMap<String, f64>,
    pub features: Vec<f64>,
    /// Observed target, which may carry label noise.
    pub label: f64,
}

impl Unit {
    /// Builds a unit from an exogenous draw by running the mechanisms.
    pub fn from_exogenous(context: UnitContext, exogenous: BTreeMap<String, f64>) -> Result<Unit> {
        let endogenous = families::solve(&context, &exogenous, &BTreeMap::new())?;
        let features = families::render(&context, &endogenous, &exogenous)?;
        let label = endogenous[context.family.target()];
        Ok(Unit { context, exogenous, endogenous, features, label })
    }

    pub fn value(&self, variable: &str) -> Result<f64> {
        self.endogenous
            .get(variable)
            .copied()
            .ok_or_else(|| Error::Input(format!("unit has no variable {variable}")))
    }

    pub fn target(&self) -> f64 {
        self.endogenous[self.context.family.target()]
    }
}

/// Re-runs the mechanisms of `unit` with the given variables clamped and every
/// exogenous draw reused. The observed label is set to the counterfactual target.
pub fn counterfactual(unit: &Unit, interventions: &BTreeMap<String, f64>) -> Result<Unit> {
    if interventions.is_empty() {
        return Ok(unit.clone());
    }
    let ctx = unit.context;
    let endogenous = families::solve(&ctx, &unit.exogenous, interventions)?;
    let features = families::render(&ctx, &endogenous, &unit.exogenous)?;
    let target = endogenous[ctx.family.target()];
    let label = if target == unit.target() { unit.label } else { target };
    Ok(Unit { context: ctx, exogenous: unit.exogenous.clone(), endogenous, features, label })
}

/// Single-variable convenience wrapper around [`counterfactual`].
pub fn intervene(unit: &Unit, variable: &str, value: f64) -> Result<Unit> {
    let mut iv = BTreeMap::new();
    iv.insert(variable.to_string(), value);
    counterfactual(unit, &iv)
}

/// A generated dataset together with the spec that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub units: Vec<Unit>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn dim(&self) -> usize {
        self.units.first().map_or(0, |u| u.features.len())
    }

    pub fn task(&self) -> Task {
        self.spec.family.task()
    }

    pub fn features(&self) -> Matrix {
        features_of(&self.units)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.label).collect()
    }

    pub fn true_targets(&self) -> Vec<f64> {
        self.units.iter().map(Unit::target).collect()
    }

    pub fn variable(&self, name: &str) -> Result<Vec<f64>> {
        self.units.iter().map(|u| u.value(name)).collect()
    }

    /// Bias columns, one per bias variable, or the named subset.
    pub fn bias(&self, names: Option<&[String]>) -> Result<Matrix> {
        let default: Vec<String> = self.spec.family.bias_variables().iter().map(|s| s.to_string()).collect();
        let names = names.unwrap_or(&default);
        let cols: Vec<Vec<f64>> = names.iter().map(|n| self.variable(n)).collect::<Result<_>>()?;
        Ok(Matrix::from_fn(self.n(), cols.len(), |i, j| cols[j][i]))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { spec: self.spec.clone(), units: idx.iter().map(|&i| self.units[i].clone()).collect() }
    }
}

pub fn features_of(units: &[Unit]) -> Matrix {
    let d = units.first().map_or(0, |u| u.features.len());
    let mut data = Vec::with_capacity(units.len() * d);
    for u in units {
        data.extend_from_slice(&u.features);
    }
    Matrix::from_vec(units.len(), d, data).expect("rectangular features")
}

/// Conditioning point set for the targets: raw values or one-hot rows.
pub fn target_points(labels: &[f64], task: Task) -> Result<PointSet> {
    match task {
        Task::Regression => PointSet::from_values(labels),
        Task::Classification { classes } => {
            PointSet::new(Matrix::from_fn(labels.len(), classes, |i, k| if labels[i] as usize == k { 1.0 } else { 0.0 }))
        }
    }
}

fn draw_units(ctx: UnitContext, rng: &mut rng::Rng, count: usize) -> Result<Vec<Unit>> {
    (0..count).map(|_| Unit::from_exogenous(ctx, families::draw_exogenous(ctx.family, rng))).collect()
}

/// Generates a dataset deterministically from its spec.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    Ok(generate_with_retention(spec)?.0)
}

/// Like [`generate`], also returning the fraction of the candidate pool kept
/// by the selection rule (`None` when no selection is applied).
pub fn generate_with_retention(spec: &DatasetSpec) -> Result<(Dataset, Option<f64>)> {
    spec.validate()?;
    let ctx = spec.context();
    let mut rng = rng::stream(spec.seed, rng::streams::EXOGENOUS);
    let mut retained = None;
    let mut units = match (spec.bias_mode, spec.family.selection_rule()) {
        (BiasMode::Biased, Some(rule)) => {
            let mut pool = draw_units(ctx, &mut rng, (4 * spec.n).max(64))?;
            loop {
                let kept = selection_bias_filter(&pool, rule, spec.seed)?;
                if kept.len() >= spec.n {
                    retained = Some(kept.len() as f64 / pool.len() as f64);
                    break kept.into_iter().take(spec.n).collect();
                }
                let more = draw_units(ctx, &mut rng, pool.len())?;
                pool.extend(more);
            }
        }
        _ => draw_units(ctx, &mut rng, spec.n)?,
    };
    if spec.label_noise > 0.0 {
        apply_label_noise(&mut units, spec.label_noise, spec.seed)?;
    }
    Ok((Dataset { spec: spec.clone(), units }, retained))
}
