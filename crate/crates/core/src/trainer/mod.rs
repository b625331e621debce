//! Mini-batch training of a feed-forward predictor on `L(Y, Ŷ) + λ·penalty(Ŷ, B | Y)`.

mod metrics;
mod model;

pub use metrics::{argmax_rows, balanced_accuracy, r2_score, worst_group_accuracy, GroupAccuracy};
pub use model::{loss, loss_value, read_checkpoint, write_checkpoint, Activation, Head, Model, Predictor};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conditional::{self, median_heuristic, PenaltyEstimator};
use crate::dependence::{pairwise_distance, PointSet};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Tape};
use crate::rng;
use crate::scm::{target_points, Dataset, Task};

/// Penalty weights searched in the grid.
pub const LAMBDA_GRID: [f64; 6] = [10.0, 5.0, 2.0, 1.0, 0.5, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    #[default]
    Sdisco,
    DiscoM,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

fn d_hidden() -> Vec<usize> {
    vec![64, 32]
}
fn d_m_fraction() -> f64 {
    conditional::DEFAULT_M_FRACTION
}
fn d_batch() -> usize {
    128
}
fn d_epochs() -> usize {
    30
}
fn d_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub lambda: f64,
    /// Kernel bandwidth over the targets; median heuristic on the training targets when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub estimator: EstimatorChoice,
    #[serde(default = "d_m_fraction")]
    pub m_fraction: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    /// Bias variables fed to the penalty; all of the family's bias variables when absent.
    #[serde(default)]
    pub bias_variables: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: d_hidden(),
            activation: Activation::Relu,
            lambda: 0.0,
            bandwidth: None,
            estimator: EstimatorChoice::Sdisco,
            m_fraction: d_m_fraction(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            learning_rate: d_lr(),
            optimizer: Optimizer::Adam,
            seed: 0,
            bias_variables: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.m_fraction > 0.0 && self.m_fraction <= 1.0) {
            return Err(Error::Config(format!("m_fraction {} outside (0, 1]", self.m_fraction)));
        }
        if let Some(bw) = self.bandwidth {
            if !(bw > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {bw}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.lambda > 0.0 && self.estimator == EstimatorChoice::None {
            return Err(Error::Config("lambda > 0 needs an estimator".into()));
        }
        Ok(())
    }

    fn penalty_estimator(&self, batch: usize) -> Option<PenaltyEstimator> {
        match self.estimator {
            EstimatorChoice::None => None,
            EstimatorChoice::Sdisco => Some(PenaltyEstimator::Sdisco),
            EstimatorChoice::DiscoM => {
                let m = ((self.m_fraction * batch as f64).ceil() as usize).clamp(1, batch.max(1));
                Some(PenaltyEstimator::DiscoM { m: Some(m) })
            }
        }
    }
}

/// Adam or plain SGD state for every parameter matrix.
#[derive(Debug, Clone)]
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, p: &Predictor) -> Self {
        let zeros = || p.parameters().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        OptimizerState { kind, lr, t: 0, m: zeros(), v: zeros() }
    }

    fn apply(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        self.t += 1;
        let (c1, c2) = (1.0 - BETA1.powi(self.t as i32), 1.0 - BETA2.powi(self.t as i32));
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let ps = p.as_mut_slice();
            match self.kind {
                Optimizer::Sgd => {
                    for (x, d) in ps.iter_mut().zip(g.as_slice()) {
                        *x -= self.lr * d;
                    }
                }
                Optimizer::Adam => {
                    let m = self.m[k].as_mut_slice();
                    let v = self.v[k].as_mut_slice();
                    for i in 0..ps.len() {
                        let d = g.as_slice()[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * d;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * d * d;
                        ps[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// One mini-batch: features, observed labels, bias columns.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub bias: PointSet,
}

impl SampleBatch {
    pub fn from_dataset(data: &Dataset, idx: &[usize], bias_variables: Option<&[String]>) -> Result<Self> {
        let sub = data.subset(idx);
        Ok(SampleBatch { features: sub.features(), labels: sub.labels(), bias: PointSet::new(sub.bias(bias_variables)?)? })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub task_loss: f64,
    /// Penalty estimate on the batch; absent when no estimator is configured
    /// or the batch is too small for one.
    pub penalty: Option<f64>,
}

/// Predictor plus optimiser state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub predictor: Predictor,
    config: TrainConfig,
    task: Task,
    bandwidth: f64,
    state: OptimizerState,
    steps: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, inputs: usize, task: Task, bandwidth: f64) -> Result<Self> {
        config.validate()?;
        if !(bandwidth > 0.0) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let predictor = Predictor::new(inputs, &config.hidden, config.activation, Head::for_task(task), config.seed)?;
        let state = OptimizerState::new(config.optimizer, config.learning_rate, &predictor);
        Ok(Trainer { predictor, config, task, bandwidth, state, steps: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// One optimiser update on `∇θ [L + λ·penalty]`.
    pub fn step(&mut self, batch: &SampleBatch) -> Result<StepMetrics> {
        let n = batch.len();
        let lambda = self.config.lambda;
        if lambda > 0.0 && n < 4 {
            return Err(Error::Config(format!("batch of {n} is too small for the penalty (need at least 4)")));
        }
        let head = self.predictor.head();
        let condition = target_points(&batch.labels, self.task)?;
        let estimator = self.config.penalty_estimator(n);
        let rows = match (estimator, n >= 4) {
            (Some(e), true) => e.reference_rows(n, rng::derive_seed(self.config.seed, self.steps))?,
            _ => None,
        };

        let mut tape = Tape::new();
        let x = tape.constant(batch.features.clone());
        let (out, params) = self.predictor.forward_tape(&mut tape, x)?;
        let task_loss = loss(&mut tape, out, &batch.labels, head)?;
        let points = match head {
            Head::Linear => out,
            Head::Logits { .. } => tape.softmax(out),
        };
        let mut root = task_loss;
        let mut penalty_value = None;
        if estimator.is_some() && n >= 4 {
            if lambda > 0.0 {
                let pen = conditional::penalty(&mut tape, points, &batch.bias, &condition, self.bandwidth, rows.as_deref())?;
                penalty_value = Some(tape.value(pen).get(0, 0));
                let scaled = tape.scale(pen, lambda);
                root = tape.add(task_loss, scaled)?;
            } else {
                let preds = PointSet::new(tape.value(points).clone())?;
                penalty_value = Some(penalty_estimate(&preds, &batch.bias, &condition, self.bandwidth, rows.as_deref())?);
            }
        }
        let metrics = StepMetrics { task_loss: tape.value(task_loss).get(0, 0), penalty: penalty_value };
        if !metrics.task_loss.is_finite() {
            return Err(Error::NumericDomain("training loss diverged".into()));
        }
        let mut grads = tape.backward(root)?;
        let g: Vec<Matrix> = params
            .iter()
            .map(|&p| grads.take(p).unwrap_or_else(|| Matrix::zeros(tape.value(p).rows(), tape.value(p).cols())))
            .collect();
        self.state.apply(self.predictor.parameters_mut(), &g);
        self.steps += 1;
        Ok(metrics)
    }
}

/// Penalty value without gradient bookkeeping.
pub fn penalty_estimate(
    predictions: &PointSet,
    bias: &PointSet,
    condition: &PointSet,
    bandwidth: f64,
    rows: Option<&[usize]>,
) -> Result<f64> {
    let a = pairwise_distance(predictions)?;
    let b = pairwise_distance(&bias.standardized())?;
    let w = conditional::rbf_weights(condition, bandwidth)?;
    match rows {
        None => conditional::sdisco(&a, &b, &w),
        Some(r) => conditional::local_statistics_naive(&a, &b, &w, r)?.mean_ratio(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub r2: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub worst_group_accuracy: Option<f64>,
    /// `(target, group)` cells without samples, left out of the worst-group figure.
    pub empty_groups: Vec<(usize, usize)>,
    /// `sDISCO(Ŷ, B | Y)` on (at most the first 1000 units of) the dataset.
    pub dependence: Option<f64>,
}

impl EvalMetrics {
    /// The figure used for model selection: R² or balanced accuracy.
    pub fn selection_metric(&self) -> f64 {
        self.r2.or(self.balanced_accuracy).unwrap_or(f64::NAN)
    }
}

const DEPENDENCE_SUBSAMPLE: usize = 1000;

/// Task metrics against observed labels, plus the held-out dependence figure
/// when a bandwidth is supplied.
pub fn evaluate(model: &dyn Model, data: &Dataset, bandwidth: Option<f64>) -> Result<EvalMetrics> {
    if data.n() == 0 {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let preds = model.predict(&data.features())?;
    let labels = data.labels();
    let head = model.head();
    let mut m = EvalMetrics {
        loss: f64::NAN,
        r2: None,
        balanced_accuracy: None,
        worst_group_accuracy: None,
        empty_groups: Vec::new(),
        dependence: None,
    };
    match head {
        Head::Linear => {
            m.loss = loss_value(&preds, &labels, head)?;
            m.r2 = Some(r2_score(preds.as_slice(), &labels)?);
        }
        Head::Logits { classes } => {
            let logp = preds.map(|p| p.max(1e-300).ln());
            m.loss = loss_value(&logp, &labels, head)?;
            let predicted = argmax_rows(&preds);
            let targets: Vec<usize> = labels.iter().map(|&t| t as usize).collect();
            m.balanced_accuracy = Some(balanced_accuracy(&predicted, &targets, classes)?);
            let family = data.spec.family;
            if let Some(var) = family.bias_variables().iter().find(|v| family.support(v).is_ok_and(|s| s.is_discrete())) {
                let groups: Vec<usize> = data.variable(var)?.iter().map(|&g| g as usize).collect();
                let n_groups = groups.iter().max().map_or(1, |g| g + 1);
                let res = worst_group_accuracy(&predicted, &targets, &groups, classes, n_groups)?;
                if !res.empty.is_empty() {
                    log_warning(&format!("groups {:?} are empty and excluded from worst-group accuracy", res.empty));
                }
                m.worst_group_accuracy = Some(res.worst);
                m.empty_groups = res.empty;
            }
        }
    }
    if let Some(bw) = bandwidth {
        let k = data.n().min(DEPENDENCE_SUBSAMPLE);
        if k >= 4 {
            let idx: Vec<usize> = (0..k).collect();
            let sub = data.subset(&idx);
            let p = PointSet::new(preds.select_rows(&idx))?;
            let bias = PointSet::new(sub.bias(None)?)?;
            let cond = target_points(&sub.labels(), data.task())?;
            m.dependence = Some(penalty_estimate(&p, &bias, &cond, bw, None)?);
        }
    }
    Ok(m)
}

fn log_warning(msg: &str) {
    eprintln!("warning: {msg}");
}

/// Per-epoch record, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_penalty: Option<f64>,
    pub validation: EvalMetrics,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub config: TrainConfig,
    pub bandwidth: f64,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs: Vec<EpochRecord>,
    /// Weights from the best validation epoch.
    pub predictor: Predictor,
}

pub fn write_jsonl<W: Write>(records: &[EpochRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Median-heuristic bandwidth on (at most the first 1000) training targets.
pub fn default_bandwidth(data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.n().min(DEPENDENCE_SUBSAMPLE)).collect();
    let labels = data.subset(&idx).labels();
    Ok(median_heuristic(&target_points(&labels, data.task())?))
}

/// Trains for the configured epochs and keeps the epoch with the best
/// validation metric.
pub fn fit(config: &TrainConfig, train: &Dataset, validation: &Dataset) -> Result<FitReport> {
    config.validate()?;
    if train.n() == 0 {
        return Err(Error::Input("empty training set".into()));
    }
    let bandwidth = match config.bandwidth {
        Some(bw) => bw,
        None => default_bandwidth(train)?,
    };
    let mut trainer = Trainer::new(config.clone(), train.dim(), train.task(), bandwidth)?;
    let mut shuffle_rng = rng::stream(config.seed, rng::streams::SHUFFLE);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let bias_names = config.bias_variables.as_deref();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Predictor)> = None;
    for epoch in 0..config.epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let (mut loss_sum, mut pen_sum, mut pen_count, mut batches) = (0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if config.lambda > 0.0 && chunk.len() < 4 {
                continue;
            }
            let batch = SampleBatch::from_dataset(train, chunk, bias_names)?;
            let m = trainer.step(&batch)?;
            loss_sum += m.task_loss;
            batches += 1;
            if let Some(p) = m.penalty {
                pen_sum += p;
                pen_count += 1;
            }
        }
        let val = evaluate(&trainer.predictor, validation, Some(bandwidth))?;
        let metric = val.selection_metric();
        if best.as_ref().is_none_or(|b| metric > b.1) {
            best = Some((epoch, metric, trainer.predictor.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            train_penalty: (pen_count > 0).then(|| pen_sum / pen_count as f64),
            validation: val,
        });
    }
    let (best_epoch, best_metric, predictor) = best.expect("at least one epoch");
    Ok(FitReport { config: config.clone(), bandwidth, best_epoch, best_metric, epochs, predictor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{generate, DatasetSpec, Family};

    fn blob(n: usize, seed: u64, unbiased: bool) -> Dataset {
        let mut spec = DatasetSpec::new(Family::Blob, n, seed).with_resolution(8).with_label_noise(0.0);
        if unbiased {
            spec = spec.unbiased();
        }
        generate(&spec).unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.m_fraction, 0.2);
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { m_fraction: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda":1}"#).is_err());
    }

    #[test]
    fn small_batch_with_penalty_rejected() {
        let data = blob(3, 1, false);
        let cfg = TrainConfig { lambda: 1.0, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, data.dim(), data.task(), 0.5).unwrap();
        let batch = SampleBatch::from_dataset(&data, &[0, 1, 2], None).unwrap();
        assert!(matches!(t.step(&batch), Err(Error::Config(_))));
    }

    #[test]
    fn zero_lambda_still_reports_penalty_and_matches_erm() {
        let data = blob(32, 2, false);
        let idx: Vec<usize> = (0..32).collect();
        let batch = SampleBatch::from_dataset(&data, &idx, None).unwrap();
        let mut a = Trainer::new(TrainConfig::default(), data.dim(), data.task(), 0.5).unwrap();
        let mut b = Trainer::new(TrainConfig { estimator: EstimatorChoice::None, ..TrainConfig::default() }, data.dim(), data.task(), 0.5)
            .unwrap();
        let ma = a.step(&batch).unwrap();
        let mb = b.step(&batch).unwrap();
        assert!(ma.penalty.is_some() && mb.penalty.is_none());
        assert_eq!(ma.task_loss, mb.task_loss);
        assert_eq!(a.predictor, b.predictor);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let train = blob(200, 3, false);
        let val = blob(100, 4, true);
        let cfg = TrainConfig { lambda: 1.0, epochs: 2, batch_size: 50, hidden: vec![8], ..TrainConfig::default() };
        let a = fit(&cfg, &train, &val).unwrap();
        let b = fit(&cfg, &train, &val).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.predictor, b.predictor);
    }

    #[test]
    fn large_lambda_reduces_penalty() {
        let data = blob(128, 5, false);
        let idx: Vec<usize> = (0..128).collect();
        let batch = SampleBatch::from_dataset(&data, &idx, None).unwrap();
        let cfg = TrainConfig { lambda: 1e6, hidden: vec![16, 8], learning_rate: 1e-3, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, data.dim(), data.task(), 0.1).unwrap();
        let first = t.step(&batch).unwrap().penalty.unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = t.step(&batch).unwrap().penalty.unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn disco_m_step_runs() {
        let data = blob(40, 6, false);
        let idx: Vec<usize> = (0..40).collect();
        let batch = SampleBatch::from_dataset(&data, &idx, None).unwrap();
        let cfg = TrainConfig { lambda: 2.0, estimator: EstimatorChoice::DiscoM, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, data.dim(), data.task(), 0.2).unwrap();
        let m = t.step(&batch).unwrap();
        assert!(m.penalty.unwrap().is_finite());
    }

    struct Constant(Head, Vec<f64>);

    impl Model for Constant {
        fn head(&self) -> Head {
            self.0
        }
        fn predict(&self, f: &Matrix) -> Result<Matrix> {
            Ok(Matrix::from_fn(f.rows(), self.1.len(), |_, j| self.1[j]))
        }
    }

    #[test]
    fn evaluate_reference_models() {
        let data = blob(50, 7, true);
        let mean = data.labels().iter().sum::<f64>() / 50.0;
        let m = evaluate(&Constant(Head::Linear, vec![mean]), &data, Some(0.5)).unwrap();
        assert!(m.r2.unwrap().abs() < 1e-12);
        assert_eq!(m.dependence, Some(0.0));

        let birds = generate(&DatasetSpec::new(Family::WaterbirdsDiscrete, 200, 8).with_label_noise(0.0)).unwrap();
        let m = evaluate(&Constant(Head::Logits { classes: 2 }, vec![0.7, 0.3]), &birds, None).unwrap();
        assert_eq!(m.balanced_accuracy, Some(0.5));
        assert_eq!(m.worst_group_accuracy, Some(0.0));
    }

    #[test]
    fn jsonl_one_line_per_epoch() {
        let train = blob(40, 9, false);
        let val = blob(20, 10, true);
        let cfg = TrainConfig { epochs: 3, batch_size: 20, hidden: vec![4], ..TrainConfig::default() };
        let report = fit(&cfg, &train, &val).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&report.epochs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let rec: EpochRecord = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(rec.epoch, 2);
    }
}
