use serde::{Deserialize, Serialize};

use super::{default_m, disco_m_rows, rbf_weights};
use crate::dependence::{euclidean_distances, PointSet};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Tape, Var, EPS_CLAMP};

/// Which estimator the training penalty uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PenaltyEstimator {
    /// All `n` reference points through the factorisation.
    #[default]
    Sdisco,
    /// `m` sampled reference points; `None` means `ceil(0.2 n)`.
    DiscoM { m: Option<usize> },
}

impl PenaltyEstimator {
    /// Reference rows for a batch of size `n`; `None` stands for all rows.
    pub fn reference_rows(&self, n: usize, seed: u64) -> Result<Option<Vec<usize>>> {
        match *self {
            PenaltyEstimator::Sdisco => Ok(None),
            PenaltyEstimator::DiscoM { m } => disco_m_rows(n, m.unwrap_or_else(|| default_m(n)), seed).map(Some),
        }
    }
}

/// Mean local correlation recorded on the tape.
///
/// `w` is the full `n × n` weight matrix and enters as a constant. When `rows`
/// is given only those reference points are evaluated, which is DISCO_m; the
/// factorisation holds row by row so the same graph serves both estimators.
pub fn sdisco_on_tape(tape: &mut Tape, a: Var, b: Var, w: &Matrix, rows: Option<&[usize]>) -> Result<Var> {
    let n = tape.value(a).rows();
    if tape.value(a).shape() != (n, n) || tape.value(b).shape() != (n, n) || w.shape() != (n, n) {
        return Err(Error::dim("sdisco_on_tape", tape.value(a).shape(), tape.value(b).shape()));
    }
    let wsub = match rows {
        Some(r) => w.select_rows(r),
        None => w.clone(),
    };
    let wv = tape.constant(wsub);

    let mx = tape.matmul(wv, a)?;
    let my = tape.matmul(wv, b)?;
    let wmx = tape.hadamard(wv, mx)?;
    let wmy = tape.hadamard(wv, my)?;
    let gx = tape.row_sum(wmx);
    let gy = tape.row_sum(wmy);

    let t1 = |tape: &mut Tape, p: Var, q: Var| -> Result<Var> {
        let s = tape.hadamard(p, q)?;
        let ws = tape.matmul(wv, s)?;
        let d = tape.hadamard(wv, ws)?;
        Ok(tape.row_sum(d))
    };
    let t1_xy = t1(tape, a, b)?;
    let t1_xx = t1(tape, a, a)?;
    let t1_yy = t1(tape, b, b)?;

    let local = |tape: &mut Tape, t1: Var, g1: Var, g2: Var, m1: Var, m2: Var| -> Result<Var> {
        let t2 = tape.hadamard(g1, g2)?;
        let mm = tape.hadamard(m1, m2)?;
        let t3m = tape.hadamard(wv, mm)?;
        let t3 = tape.row_sum(t3m);
        let t3x2 = tape.scale(t3, 2.0);
        let s = tape.add(t1, t2)?;
        tape.sub(s, t3x2)
    };
    let v_xy = local(tape, t1_xy, gx, gy, mx, my)?;
    let v_xx = local(tape, t1_xx, gx, gx, mx, mx)?;
    let v_yy = local(tape, t1_yy, gy, gy, my, my)?;

    let scale = tape
        .value(t1_xx)
        .as_slice()
        .iter()
        .chain(tape.value(t1_yy).as_slice())
        .cloned()
        .fold(1.0, f64::max);
    let tol = EPS_CLAMP * scale;
    let v_xx = tape.clamp_nonneg(v_xx, tol)?;
    let v_yy = tape.clamp_nonneg(v_yy, tol)?;
    let sx = tape.sqrt(v_xx)?;
    let sy = tape.sqrt(v_yy)?;
    let denom = tape.hadamard(sx, sy)?;
    let ratios = tape.divide_safe(v_xy, denom)?;
    Ok(tape.mean_all(ratios))
}

/// `sDISCO(Ŷ, B | C)` as a differentiable function of the prediction node.
///
/// Bias columns are standardised before distances are taken, and the weight
/// matrix is built from `condition`. Only `predictions` receives gradient.
pub fn penalty(
    tape: &mut Tape,
    predictions: Var,
    bias: &PointSet,
    condition: &PointSet,
    bandwidth: f64,
    rows: Option<&[usize]>,
) -> Result<Var> {
    let n = tape.value(predictions).rows();
    if n < 4 {
        return Err(Error::EstimatorUndefined(format!("penalty needs at least 4 samples, got {n}")));
    }
    if bias.n() != n || condition.n() != n {
        return Err(Error::dim("penalty", (n, bias.n()), (n, condition.n())));
    }
    let w = rbf_weights(condition, bandwidth)?;
    let a = tape.pairwise_distance(predictions);
    let b = tape.constant(euclidean_distances(bias.standardized().coords()));
    sdisco_on_tape(tape, a, b, w.matrix(), rows)
}

/// Penalty value and its gradient with respect to the prediction coordinates.
pub fn penalty_value_and_gradient(
    predictions: &PointSet,
    bias: &PointSet,
    condition: &PointSet,
    bandwidth: f64,
) -> Result<(f64, Matrix)> {
    let mut tape = Tape::new();
    let p = tape.leaf(predictions.coords().clone());
    let root = penalty(&mut tape, p, bias, condition, bandwidth, None)?;
    let value = tape.value(root).get(0, 0);
    let mut grads = tape.backward(root)?;
    let g = grads.take(p).unwrap_or_else(|| Matrix::zeros(predictions.n(), predictions.dim()));
    Ok((value, g))
}
