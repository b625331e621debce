//! Conditional distance correlation.
//!
//! All estimators share a row-stochastic RBF weight matrix `W` over the
//! conditioning sample. Row `i` of `W` is a local empirical measure around
//! reference point `z_i`; the local squared distance covariance at that point
//! is the `W`-weighted V-statistic of the two distance matrices.
//!
//! Three routes compute the same local statistics:
//! - [`local_statistics_naive`] materialises the locally centred matrices for
//!   each reference row (O(n²) per row, O(n³) total work).
//! - [`sdisco_components`] evaluates every row at once with
//!   `T1 + T2 - 2 T3`, where `T1 = (W∘(W(A∘B)))1`, `T2 = g^X∘g^Y` with
//!   `g = (W∘(WA))1`, and `T3 = (W∘(WA)∘(WB))1`. Only a constant number of
//!   `n × n` buffers is alive at any time.
//! - [`disco_m`] averages the naive local ratios over `m` sampled rows.

pub mod calibration;
mod penalty;

pub use penalty::{penalty, penalty_value_and_gradient, sdisco_on_tape, PenaltyEstimator};

use crate::dependence::{DistanceMatrix, PointSet};
use crate::error::{Error, Result};
use crate::matrix::{safe_div, Matrix, EPS_CLAMP};
use crate::rng;

/// Bandwidth grid searched alongside the penalty weight.
pub const BANDWIDTH_GRID: [f64; 6] = [1.0, 0.9, 0.5, 0.1, 0.01, 0.001];

/// Fraction of the batch used as reference points by DISCO_m.
pub const DEFAULT_M_FRACTION: f64 = 0.20;

/// Row-normalised RBF kernel matrix over a conditioning sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: Matrix,
    bandwidth: f64,
}

impl WeightMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    /// Uniform weights `1/n`, i.e. a constant conditioning variable.
    pub fn uniform(n: usize) -> Self {
        WeightMatrix { entries: Matrix::filled(n, n, 1.0 / n as f64), bandwidth: f64::INFINITY }
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        WeightMatrix {
            entries: Matrix::from_fn(n, n, |i, j| self.entries.get(perm[i], perm[j])),
            bandwidth: self.bandwidth,
        }
    }
}

/// `w_ij = exp(-|z_i - z_j|² / (2 h²)) / Σ_k exp(-|z_i - z_k|² / (2 h²))`.
pub fn rbf_weights(z: &PointSet, bandwidth: f64) -> Result<WeightMatrix> {
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = z.n();
    let coords = z.coords();
    let denom = 2.0 * bandwidth * bandwidth;
    let mut entries = Matrix::zeros(n, n);
    for i in 0..n {
        let zi = coords.row(i);
        let mut total = 0.0;
        for j in 0..n {
            let sq: f64 = zi.iter().zip(coords.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-sq / denom).exp();
            entries.set(i, j, k);
            total += k;
        }
        for j in 0..n {
            entries.set(i, j, entries.get(i, j) / total);
        }
    }
    Ok(WeightMatrix { entries, bandwidth })
}

/// Median of the nonzero pairwise distances; `1.0` when every point coincides.
pub fn median_heuristic(z: &PointSet) -> f64 {
    let d = crate::dependence::euclidean_distances(z.coords());
    let n = z.n();
    let mut vals: Vec<f64> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in 0..i {
            let v = d.get(i, j);
            if v > 0.0 {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let mid = vals.len() / 2;
    if vals.len() % 2 == 1 {
        vals[mid]
    } else {
        0.5 * (vals[mid - 1] + vals[mid])
    }
}

/// Reference-point count for DISCO_m: `ceil(fraction · n)`, at least 1.
pub fn default_m(n: usize) -> usize {
    ((DEFAULT_M_FRACTION * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Per-reference-point local squared distance covariances and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStatistics {
    pub v_xy: Vec<f64>,
    pub v_xx: Vec<f64>,
    pub v_yy: Vec<f64>,
    clamp_tol: f64,
}

impl LocalStatistics {
    fn new(v_xy: Vec<f64>, v_xx: Vec<f64>, v_yy: Vec<f64>, scale: f64) -> Self {
        LocalStatistics { v_xy, v_xx, v_yy, clamp_tol: EPS_CLAMP * scale.max(1.0) }
    }

    pub fn len(&self) -> usize {
        self.v_xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_xy.is_empty()
    }

    fn clamp(&self, v: f64) -> Result<f64> {
        if v < -self.clamp_tol || v.is_nan() {
            return Err(Error::NumericDomain(format!("local variance {v} is negative")));
        }
        Ok(v.max(0.0))
    }

    /// Local correlations `v_xy / sqrt(v_xx · v_yy)` with `0/0 := 0`.
    pub fn ratios(&self) -> Result<Vec<f64>> {
        (0..self.len())
            .map(|i| {
                let vxx = self.clamp(self.v_xx[i])?;
                let vyy = self.clamp(self.v_yy[i])?;
                Ok(safe_div(self.v_xy[i], vxx.sqrt() * vyy.sqrt()))
            })
            .collect()
    }

    /// Mean local correlation, summed in index order.
    pub fn mean_ratio(&self) -> Result<f64> {
        let r = self.ratios()?;
        if r.is_empty() {
            return Ok(0.0);
        }
        Ok(r.iter().sum::<f64>() / r.len() as f64)
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::dim("local weights", (1, w.len()), (n, n)));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("local weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Locally centred distance matrix for one weight row:
/// `a_kl - Σ_k w_k a_kl - Σ_l w_l a_kl + Σ_kl w_k w_l a_kl`.
pub fn local_center_naive(a: &DistanceMatrix, w: &[f64]) -> Result<Matrix> {
    check_weights(w, a.n())?;
    let mut out = Matrix::zeros(a.n(), a.n());
    local_center_into(a.matrix(), w, &mut out);
    Ok(out)
}

fn local_center_into(m: &Matrix, w: &[f64], out: &mut Matrix) {
    let n = m.rows();
    let row_means: Vec<f64> = (0..n).map(|k| m.row(k).iter().zip(w).map(|(v, wl)| v * wl).sum()).collect();
    let mut col_means = vec![0.0; n];
    for k in 0..n {
        for (l, v) in m.row(k).iter().enumerate() {
            col_means[l] += w[k] * v;
        }
    }
    let grand: f64 = row_means.iter().zip(w).map(|(r, wk)| r * wk).sum();
    let dst = out.as_mut_slice();
    for k in 0..n {
        let (src, row) = (m.row(k), &mut dst[k * n..(k + 1) * n]);
        for l in 0..n {
            row[l] = src[l] - col_means[l] - row_means[k] + grand;
        }
    }
}

fn weighted_inner(a: &Matrix, b: &Matrix, w: &[f64]) -> f64 {
    let n = a.rows();
    let mut total = 0.0;
    for k in 0..n {
        let (ra, rb) = (a.row(k), b.row(k));
        let mut row = 0.0;
        for l in 0..n {
            row += w[l] * ra[l] * rb[l];
        }
        total += w[k] * row;
    }
    total
}

/// Local squared distance covariance `Σ_kl w_k w_l A_kl B_kl` of the centred matrices.
pub fn local_dcov_naive(a: &DistanceMatrix, b: &DistanceMatrix, w: &[f64]) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::dim("local_dcov_naive", a.matrix().shape(), b.matrix().shape()));
    }
    let ca = local_center_naive(a, w)?;
    let cb = local_center_naive(b, w)?;
    Ok(weighted_inner(&ca, &cb, w))
}

fn check_square(a: &DistanceMatrix, b: &DistanceMatrix, w: &WeightMatrix, op: &'static str) -> Result<()> {
    let n = a.n();
    if b.n() != n {
        return Err(Error::dim(op, a.matrix().shape(), b.matrix().shape()));
    }
    if w.matrix().shape() != (n, n) {
        return Err(Error::dim(op, a.matrix().shape(), w.matrix().shape()));
    }
    Ok(())
}

/// Naive local statistics at the given reference rows of `W`.
pub fn local_statistics_naive(
    a: &DistanceMatrix,
    b: &DistanceMatrix,
    w: &WeightMatrix,
    rows: &[usize],
) -> Result<LocalStatistics> {
    check_square(a, b, w, "local_statistics_naive")?;
    let mut v_xy = Vec::with_capacity(rows.len());
    let mut v_xx = Vec::with_capacity(rows.len());
    let mut v_yy = Vec::with_capacity(rows.len());
    let mut scale: f64 = 0.0;
    let mut ca = Matrix::zeros(a.n(), a.n());
    let mut cb = Matrix::zeros(a.n(), a.n());
    for &i in rows {
        if i >= a.n() {
            return Err(Error::Input(format!("reference row {i} out of range")));
        }
        let wi = w.row(i);
        check_weights(wi, a.n())?;
        local_center_into(a.matrix(), wi, &mut ca);
        local_center_into(b.matrix(), wi, &mut cb);
        v_xy.push(weighted_inner(&ca, &cb, wi));
        v_xx.push(weighted_inner(&ca, &ca, wi));
        v_yy.push(weighted_inner(&cb, &cb, wi));
        scale = scale
            .max(weighted_inner(a.matrix(), a.matrix(), wi))
            .max(weighted_inner(b.matrix(), b.matrix(), wi));
    }
    Ok(LocalStatistics::new(v_xy, v_xx, v_yy, scale))
}

/// Reference rows DISCO_m uses for a given seed (ascending).
pub fn disco_m_rows(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("m = {m} outside 1..={n}")));
    }
    let mut r = rng::stream(seed, rng::streams::ESTIMATOR);
    Ok(rng::sample_without_replacement(&mut r, n, m))
}

/// Mean local correlation over `m` reference rows sampled without replacement.
pub fn disco_m(a: &DistanceMatrix, b: &DistanceMatrix, w: &WeightMatrix, m: usize, seed: u64) -> Result<f64> {
    check_square(a, b, w, "disco_m")?;
    let rows = disco_m_rows(a.n(), m, seed)?;
    local_statistics_naive(a, b, w, &rows)?.mean_ratio()
}

/// `Σ_j x_ij y_ij` per row.
fn row_dot(x: &Matrix, y: &Matrix) -> Vec<f64> {
    (0..x.rows()).map(|i| x.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum()).collect()
}

/// `Σ_j x_ij (y_ij z_ij)` per row; symmetric in `y` and `z` bit for bit.
fn row_dot3(x: &Matrix, y: &Matrix, z: &Matrix) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            x.row(i)
                .iter()
                .zip(y.row(i))
                .zip(z.row(i))
                .map(|((a, b), c)| a * (b * c))
                .sum()
        })
        .collect()
}

/// `(W ∘ (W S)) 1`, the diagonal of `W S Wᵀ`.
fn quadratic_diagonal(w: &Matrix, s: &Matrix) -> Result<Vec<f64>> {
    let ws = w.matmul(s)?;
    Ok(row_dot(w, &ws))
}

/// All `n` local statistics at once through the `T1 + T2 - 2 T3` factorisation.
pub fn sdisco_components(a: &DistanceMatrix, b: &DistanceMatrix, w: &WeightMatrix) -> Result<LocalStatistics> {
    check_square(a, b, w, "sdisco_components")?;
    let (am, bm, wm) = (a.matrix(), b.matrix(), w.matrix());

    let (gx, gy, t3_xy, t3_xx, t3_yy) = {
        let mx = wm.matmul(am)?;
        let my = wm.matmul(bm)?;
        (
            row_dot(wm, &mx),
            row_dot(wm, &my),
            row_dot3(wm, &mx, &my),
            row_dot3(wm, &mx, &mx),
            row_dot3(wm, &my, &my),
        )
    };
    let t1_xy = quadratic_diagonal(wm, &am.hadamard(bm)?)?;
    let t1_xx = quadratic_diagonal(wm, &am.hadamard(am)?)?;
    let t1_yy = quadratic_diagonal(wm, &bm.hadamard(bm)?)?;

    let combine = |t1: &[f64], g1: &[f64], g2: &[f64], t3: &[f64]| -> Vec<f64> {
        (0..t1.len()).map(|i| t1[i] + g1[i] * g2[i] - 2.0 * t3[i]).collect()
    };
    let scale = t1_xx.iter().chain(&t1_yy).cloned().fold(0.0, f64::max);
    Ok(LocalStatistics::new(
        combine(&t1_xy, &gx, &gy, &t3_xy),
        combine(&t1_xx, &gx, &gx, &t3_xx),
        combine(&t1_yy, &gy, &gy, &t3_yy),
        scale,
    ))
}

/// Single-shot conditional distance correlation: the mean of all `n` exact local ratios.
pub fn sdisco(a: &DistanceMatrix, b: &DistanceMatrix, w: &WeightMatrix) -> Result<f64> {
    sdisco_components(a, b, w)?.mean_ratio()
}

/// Applies one permutation to the rows and columns of all three inputs.
pub fn permute_inputs(
    a: &DistanceMatrix,
    b: &DistanceMatrix,
    w: &WeightMatrix,
    perm: &[usize],
) -> (DistanceMatrix, DistanceMatrix, WeightMatrix) {
    let p = |m: &Matrix| {
        let n = m.rows();
        DistanceMatrix::new(Matrix::from_fn(n, n, |i, j| m.get(perm[i], perm[j]))).expect("permuted distances")
    };
    (p(a.matrix()), p(b.matrix()), w.permuted(perm))
}
