//! Euclidean distance matrices and unconditional distance covariance / correlation
//! V-statistics.

use crate::error::{Error, Result};
use crate::matrix::{safe_div, Matrix, EPS_CLAMP};

/// `n` points in `dim`-dimensional Euclidean space, stored as an `n × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Matrix,
}

impl PointSet {
    pub fn new(coords: Matrix) -> Result<Self> {
        if !coords.is_finite() {
            return Err(Error::Input("point coordinates must be finite".into()));
        }
        Ok(PointSet { coords })
    }

    /// One-dimensional point set.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(Matrix::column(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.coords.rows()
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn into_coords(self) -> Matrix {
        self.coords
    }

    /// Each column shifted to zero mean and scaled to unit variance.
    /// Constant columns are only centred.
    pub fn standardized(&self) -> PointSet {
        let (n, d) = self.coords.shape();
        let mut out = self.coords.clone();
        for j in 0..d {
            let mean = (0..n).map(|i| self.coords.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (self.coords.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            for i in 0..n {
                let centred = self.coords.get(i, j) - mean;
                out.set(i, j, if sd > 0.0 { centred / sd } else { centred });
            }
        }
        PointSet { coords: out }
    }

    /// Points with all columns of `parts` side by side.
    pub fn concat(parts: &[&PointSet]) -> Result<PointSet> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.coords).collect();
        Ok(PointSet { coords: Matrix::hstack(&mats)? })
    }
}

/// Symmetric, zero-diagonal, nonnegative matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    /// Wraps a matrix after checking the distance-matrix invariants.
    pub fn new(m: Matrix) -> Result<Self> {
        let (r, c) = m.shape();
        if r != c {
            return Err(Error::dim("distance matrix", (r, c), (c, r)));
        }
        for i in 0..r {
            if m.get(i, i) != 0.0 {
                return Err(Error::Input("distance matrix diagonal must be zero".into()));
            }
            for j in 0..i {
                let (a, b) = (m.get(i, j), m.get(j, i));
                if !(a >= 0.0) || (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::Input(format!("entry ({i},{j}) breaks symmetry or sign")));
                }
            }
        }
        Ok(DistanceMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

pub(crate) fn euclidean_distances(points: &Matrix) -> Matrix {
    let (n, d) = points.shape();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let pi = points.row(i);
        for j in 0..i {
            let pj = points.row(j);
            let mut acc = 0.0;
            for k in 0..d {
                let diff = pi[k] - pj[k];
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            out.set(i, j, dist);
            out.set(j, i, dist);
        }
    }
    out
}

pub fn pairwise_distance(points: &PointSet) -> Result<DistanceMatrix> {
    if points.n() == 0 {
        return Err(Error::Input("pairwise distances need at least one point".into()));
    }
    Ok(DistanceMatrix(euclidean_distances(points.coords())))
}

/// `a_kl - rowmean_k - colmean_l + grandmean` under the uniform measure.
pub fn double_center(d: &DistanceMatrix) -> Matrix {
    let m = d.matrix();
    let n = m.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).iter().sum::<f64>() / nf).collect();
    let col_means: Vec<f64> = m.col_sum().as_slice().iter().map(|s| s / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Matrix::from_fn(n, n, |k, l| m.get(k, l) - row_means[k] - col_means[l] + grand)
}

fn same_n(a: &DistanceMatrix, b: &DistanceMatrix, op: &'static str) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::dim(op, a.matrix().shape(), b.matrix().shape()));
    }
    Ok(())
}

/// Squared distance covariance V-statistic `(1/n²) Σ Ã∘B̃`.
pub fn dcov2(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<f64> {
    same_n(a, b, "dcov2")?;
    let n = a.n() as f64;
    let ca = double_center(a);
    let cb = double_center(b);
    Ok(ca.hadamard(&cb)?.sum() / (n * n))
}

/// Squared distance correlation with `0/0 := 0`, clamped to `[0, 1]`.
pub fn dcor2(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<f64> {
    same_n(a, b, "dcor2")?;
    let cov = dcov2(a, b)?;
    let va = dcov2(a, a)?;
    let vb = dcov2(b, b)?;
    Ok(correlation_ratio(cov, va, vb))
}

/// `cov / sqrt(va·vb)` with rounding-level negatives clamped and `0/0 := 0`.
pub(crate) fn correlation_ratio(cov: f64, va: f64, vb: f64) -> f64 {
    let va = if (-EPS_CLAMP..0.0).contains(&va) { 0.0 } else { va };
    let vb = if (-EPS_CLAMP..0.0).contains(&vb) { 0.0 } else { vb };
    let denom = (va.max(0.0) * vb.max(0.0)).sqrt();
    safe_div(cov, denom).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointSet::new(Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))).unwrap()
    }

    fn dist(p: &PointSet) -> DistanceMatrix {
        pairwise_distance(p).unwrap()
    }

    // Quadruple-loop V-statistic: (1/n²)Σ a_kl b_kl + (1/n⁴)Σ a_kl Σ b_kl - (2/n³)Σ_k Σ_l Σ_m a_kl b_km
    fn dcov2_oracle(a: &Matrix, b: &Matrix) -> f64 {
        let n = a.rows();
        let nf = n as f64;
        let (mut s1, mut sa, mut sb, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                s1 += a.get(k, l) * b.get(k, l);
                sa += a.get(k, l);
                sb += b.get(k, l);
                for m in 0..n {
                    s3 += a.get(k, l) * b.get(k, m);
                }
            }
        }
        s1 / nf.powi(2) + sa * sb / nf.powi(4) - 2.0 * s3 / nf.powi(3)
    }

    #[test]
    fn two_points_in_one_dimension() {
        let d = dist(&PointSet::from_values(&[0.0, 3.0]).unwrap());
        assert_eq!(d.matrix().as_slice(), &[0.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn distances_match_loop_oracle() {
        let p = random_points(10, 3, 1);
        let d = dist(&p);
        for i in 0..10 {
            assert_eq!(d.matrix().get(i, i), 0.0);
            for j in 0..10 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += (p.coords().get(i, k) - p.coords().get(j, k)).powi(2);
                }
                assert!((d.matrix().get(i, j) - acc.sqrt()).abs() < 1e-12);
            }
        }
        DistanceMatrix::new(d.into_matrix()).unwrap();
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(PointSet::from_values(&[0.0, f64::NAN]).is_err());
        assert!(PointSet::from_values(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn double_center_two_points() {
        let d = DistanceMatrix::new(Matrix::from_rows(&[vec![0.0, 2.5], vec![2.5, 0.0]]).unwrap()).unwrap();
        let c = double_center(&d);
        assert_eq!(c.as_slice(), &[-1.25, 1.25, 1.25, -1.25]);
        let z = DistanceMatrix::new(Matrix::zeros(3, 3)).unwrap();
        assert_eq!(double_center(&z), Matrix::zeros(3, 3));
    }

    #[test]
    fn double_center_marginals_vanish() {
        let c = double_center(&dist(&random_points(12, 2, 3)));
        for i in 0..12 {
            assert!(c.row(i).iter().sum::<f64>().abs() < 1e-9);
        }
        for s in c.col_sum().as_slice() {
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn dcov2_two_points_closed_form() {
        let a = dist(&PointSet::from_values(&[0.0, 1.5]).unwrap());
        let b = dist(&PointSet::from_values(&[2.0, -0.5]).unwrap());
        assert!((dcov2(&a, &b).unwrap() - 1.5 * 2.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn dcov2_matches_loop_oracle() {
        let a = dist(&random_points(9, 2, 4));
        let b = dist(&random_points(9, 3, 5));
        let expect = dcov2_oracle(a.matrix(), b.matrix());
        assert!((dcov2(&a, &b).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn constant_variable_is_zero() {
        let a = dist(&random_points(8, 1, 6));
        let b = dist(&PointSet::from_values(&[1.0; 8]).unwrap());
        assert_eq!(dcov2(&a, &b).unwrap(), 0.0);
        assert_eq!(dcor2(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dcor2_self_and_two_point_cases() {
        let a = dist(&random_points(15, 2, 7));
        assert!((dcor2(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let x = dist(&PointSet::from_values(&[0.0, 1.0]).unwrap());
        let y = dist(&PointSet::from_values(&[5.0, -3.0]).unwrap());
        assert!((dcor2(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_is_error() {
        let a = dist(&random_points(4, 1, 8));
        let b = dist(&random_points(5, 1, 9));
        assert!(matches!(dcov2(&a, &b), Err(Error::Dimension { .. })));
        assert!(dcor2(&a, &b).is_err());
    }

    #[test]
    fn independent_normals_have_small_dcor() {
        let mut small = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..512).map(|_| crate::rng::standard_normal(&mut rng)).collect();
            let y: Vec<f64> = (0..512).map(|_| crate::rng::standard_normal(&mut rng)).collect();
            let a = dist(&PointSet::from_values(&x).unwrap());
            let b = dist(&PointSet::from_values(&y).unwrap());
            if dcor2(&a, &b).unwrap() < 0.05 {
                small += 1;
            }
            if seed == 0 {
                assert!((dcor2(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        assert!(small >= 95, "{small}/100");
    }

    proptest! {
        #[test]
        fn dcor2_symmetric_and_invariant(seed in 0u64..500, c in 0.1f64..10.0, shift in -5.0f64..5.0, angle in 0.0f64..6.28) {
            let x = random_points(12, 2, seed);
            let y = random_points(12, 1, seed + 1000);
            let (a, b) = (dist(&x), dist(&y));
            let r = dcor2(&a, &b).unwrap();
            prop_assert_eq!(r, dcor2(&b, &a).unwrap());

            let (s, co) = angle.sin_cos();
            let moved = Matrix::from_fn(12, 2, |i, j| {
                let (px, py) = (x.coords().get(i, 0), x.coords().get(i, 1));
                let rotated = if j == 0 { co * px - s * py } else { s * px + co * py };
                c * rotated + shift
            });
            let a2 = dist(&PointSet::new(moved).unwrap());
            prop_assert!((dcor2(&a2, &b).unwrap() - r).abs() < 1e-10);
        }
    }
}
