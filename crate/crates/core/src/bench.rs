//! Naive full-reference estimator versus the single-shot factorisation.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditional::{local_statistics_naive, median_heuristic, rbf_weights, sdisco_components, WeightMatrix};
use crate::dependence::{pairwise_distance, DistanceMatrix, PointSet};
use crate::error::{Error, Result};
use crate::matrix::alloc;
use crate::rng;

pub const NAIVE: &str = "naive_full_reference";
pub const SDISCO: &str = "sdisco";

/// One (estimator, n) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub estimator: String,
    pub n: usize,
    pub reps: usize,
    /// Median wall time over the repetitions.
    pub wall_seconds: f64,
    /// Matrix floats live at once beyond the inputs.
    pub peak_aux_floats: usize,
    pub total_aux_floats: u64,
    pub value: f64,
    /// SHA-256 of the estimate printed with nine decimals.
    pub checksum: String,
}

/// Distances of `x = z + ε`, `y = z² + ε` and RBF weights on `z ~ U(0, 1)`.
pub fn bench_inputs(n: usize, seed: u64) -> Result<(DistanceMatrix, DistanceMatrix, WeightMatrix)> {
    let mut r = rng::stream(seed, rng::streams::EXOGENOUS);
    let z: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r)).collect();
    let x: Vec<f64> = z.iter().map(|v| v + 0.3 * rng::standard_normal(&mut r)).collect();
    let y: Vec<f64> = z.iter().map(|v| v * v + 0.3 * rng::standard_normal(&mut r)).collect();
    let zp = PointSet::from_values(&z)?;
    let w = rbf_weights(&zp, median_heuristic(&zp))?;
    Ok((pairwise_distance(&PointSet::from_values(&x)?)?, pairwise_distance(&PointSet::from_values(&y)?)?, w))
}

pub fn checksum(value: f64) -> String {
    let digest = Sha256::digest(format!("{value:.9}").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn measure_estimator(
    name: &str,
    n: usize,
    reps: usize,
    mut run: impl FnMut() -> Result<f64>,
) -> Result<BenchRecord> {
    let mut times = Vec::with_capacity(reps);
    let mut value = f64::NAN;
    let mut stats = None;
    for _ in 0..reps {
        let start = Instant::now();
        let (out, s) = alloc::measure(&mut run);
        times.push(start.elapsed().as_secs_f64());
        value = out?;
        stats = Some(s);
    }
    let stats = stats.expect("at least one repetition");
    Ok(BenchRecord {
        estimator: name.to_string(),
        n,
        reps,
        wall_seconds: median(times),
        peak_aux_floats: stats.peak_floats,
        total_aux_floats: stats.total_floats,
        value,
        checksum: checksum(value),
    })
}

/// Runs both estimators on identical inputs for every size, naive first.
pub fn run_bench(sizes: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    if reps == 0 || sizes.iter().any(|&n| n < 2) {
        return Err(Error::Config("benchmark needs reps ≥ 1 and sizes ≥ 2".into()));
    }
    let mut out = Vec::with_capacity(2 * sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let (a, b, w) = bench_inputs(n, rng::derive_seed(seed, i as u64))?;
        let rows: Vec<usize> = (0..n).collect();
        out.push(measure_estimator(NAIVE, n, reps, || local_statistics_naive(&a, &b, &w, &rows)?.mean_ratio())?);
        out.push(measure_estimator(SDISCO, n, reps, || sdisco_components(&a, &b, &w)?.mean_ratio())?);
    }
    Ok(out)
}

pub fn write_bench_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_bench_csv<R: std::io::Read>(r: R) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(e.to_string()))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| *v <= 0.0) {
        return Err(Error::Input("log-log fit needs at least two positive pairs".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
