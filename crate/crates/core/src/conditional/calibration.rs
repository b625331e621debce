//! Scalar synthetic families with known conditional (in)dependence, used to
//! check that the estimator separates the two regimes.
//!
//! Both families draw `Z ~ U(0, 1)` and standard normal noise on the
//! `EXOGENOUS` stream, three draws per unit in the order `z, ε₁, ε₂`.
//! - [`CalibrationFamily::Independent`]: `Y = sin(2πZ) + 0.3ε₁`,
//!   `X = cos(2πZ) + 0.3ε₂`, so `X ⊥ Y | Z`.
//! - [`CalibrationFamily::Dependent`]: `Y = Z + 0.3ε₁`, `X = Y + Z`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{median_heuristic, rbf_weights, sdisco};
use crate::dependence::{pairwise_distance, PointSet};
use crate::error::{Error, Result};
use crate::rng;

const NOISE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationFamily {
    Independent,
    Dependent,
}

/// One draw of `(x, y, z)` from a calibration family.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl CalibrationFamily {
    pub fn sample(self, n: usize, seed: u64) -> CalibrationSample {
        let mut r = rng::stream(seed, rng::streams::EXOGENOUS);
        let mut s = CalibrationSample { x: Vec::with_capacity(n), y: Vec::with_capacity(n), z: Vec::with_capacity(n) };
        for _ in 0..n {
            let z = rng::uniform(&mut r);
            let e1 = rng::normal(&mut r, 0.0, 1.0);
            let e2 = rng::normal(&mut r, 0.0, 1.0);
            let (x, y) = match self {
                CalibrationFamily::Independent => ((2.0 * PI * z).cos() + NOISE * e2, (2.0 * PI * z).sin() + NOISE * e1),
                CalibrationFamily::Dependent => {
                    let y = z + NOISE * e1;
                    (y + z, y)
                }
            };
            s.x.push(x);
            s.y.push(y);
            s.z.push(z);
        }
        s
    }
}

impl CalibrationSample {
    /// `sdisco(X, Y | Z)` at `bandwidth`, or at the median heuristic on `Z` when `None`.
    pub fn sdisco(&self, bandwidth: Option<f64>) -> Result<f64> {
        if self.z.len() < 2 {
            return Err(Error::EstimatorUndefined("calibration needs at least two units".into()));
        }
        let z = PointSet::from_values(&self.z)?;
        let h = bandwidth.unwrap_or_else(|| median_heuristic(&z));
        let w = rbf_weights(&z, h)?;
        let a = pairwise_distance(&PointSet::from_values(&self.x)?)?;
        let b = pairwise_distance(&PointSet::from_values(&self.y)?)?;
        sdisco(&a, &b, &w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_reproducible_and_seed_dependent() {
        let a = CalibrationFamily::Independent.sample(20, 4);
        assert_eq!(a, CalibrationFamily::Independent.sample(20, 4));
        assert_ne!(a, CalibrationFamily::Independent.sample(20, 5));
        assert!(a.z.iter().all(|z| (0.0..1.0).contains(z)));
    }

    #[test]
    fn dependent_family_is_exactly_x_equals_y_plus_z() {
        let s = CalibrationFamily::Dependent.sample(50, 1);
        for i in 0..50 {
            assert_eq!(s.x[i], s.y[i] + s.z[i]);
        }
    }

    #[test]
    fn dependent_scores_above_independent() {
        let ind = CalibrationFamily::Independent.sample(128, 2).sdisco(None).unwrap();
        let dep = CalibrationFamily::Dependent.sample(128, 2).sdisco(None).unwrap();
        assert!(dep > ind + 0.3, "{dep} vs {ind}");
    }

    #[test]
    fn too_few_units_is_undefined() {
        let s = CalibrationFamily::Dependent.sample(1, 0);
        assert!(matches!(s.sdisco(None), Err(Error::EstimatorUndefined(_))));
    }
}
