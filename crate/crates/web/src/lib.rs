//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Each export takes plain numbers or strings and returns a JSON document.
//! Failures come back as `{"error": "..."}` rather than as exceptions,
//! which keeps the functions callable and testable off the browser.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use sdisco::conditional::calibration::CalibrationFamily;
use sdisco::conditional::median_heuristic;
use sdisco::dependence::PointSet;
use sdisco::pathways::{random_predictor, random_sam, PathwayAnalysis, PredictorKind, RandomSamConfig};
use sdisco::scm::{generate, intervene, DatasetSpec, Family};
use sdisco::{Error, Result};

/// Largest sample the curve accepts; the estimator is cubic in `n`.
pub const MAX_CURVE_N: usize = 1024;
const CURVE_POINTS: usize = 13;

fn respond<T: Serialize>(r: Result<T>) -> String {
    let v = match r {
        Ok(v) => serde_json::to_value(v).unwrap_or_else(|e| json!({ "error": e.to_string() })),
        Err(e) => json!({ "error": e.to_string() }),
    };
    v.to_string()
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(json!(s)).map_err(|_| Error::Config(format!("unknown {what} `{s}`")))
}

#[derive(Serialize)]
struct Curve {
    family: CalibrationFamily,
    n: usize,
    median_bandwidth: f64,
    median_value: f64,
    bandwidths: Vec<f64>,
    values: Vec<f64>,
}

fn curve(family: &str, n: usize, seed: u64) -> Result<Curve> {
    let family: CalibrationFamily = parse("family", family)?;
    if !(4..=MAX_CURVE_N).contains(&n) {
        return Err(Error::Config(format!("n must lie in 4..={MAX_CURVE_N}")));
    }
    let sample = family.sample(n, seed);
    let median = median_heuristic(&PointSet::from_values(&sample.z)?);
    let bandwidths: Vec<f64> = (0..CURVE_POINTS).map(|i| 10f64.powf(-2.0 + 2.5 * i as f64 / (CURVE_POINTS - 1) as f64)).collect();
    let values = bandwidths.iter().map(|&h| sample.sdisco(Some(h))).collect::<Result<_>>()?;
    Ok(Curve { family, n, median_bandwidth: median, median_value: sample.sdisco(Some(median))?, bandwidths, values })
}

/// sDISCO of a calibration family (`independent` or `dependent`) across a
/// log-spaced bandwidth grid, plus the value at the median heuristic.
#[wasm_bindgen]
pub fn dependence_curve(family: &str, n: u32, seed: u32) -> String {
    respond(curve(family, n as usize, seed as u64))
}

#[derive(Serialize)]
struct Counterfactual {
    resolution: usize,
    variable: String,
    factual_value: f64,
    value: f64,
    factual: Vec<f64>,
    counterfactual: Vec<f64>,
    factual_target: f64,
    counterfactual_target: f64,
}

fn image(family: &str, seed: u64, variable: &str, value: f64) -> Result<Counterfactual> {
    let family: Family = parse("family", family)?;
    if !family.is_image() {
        return Err(Error::Config(format!("{family:?} does not render images")));
    }
    let unit = generate(&DatasetSpec::new(family, 1, seed).with_feature_noise(0.0))?.units.remove(0);
    let cf = intervene(&unit, variable, value)?;
    Ok(Counterfactual {
        resolution: unit.context.resolution,
        variable: variable.to_string(),
        factual_value: unit.value(variable)?,
        value,
        factual_target: unit.target(),
        counterfactual_target: cf.target(),
        factual: unit.features,
        counterfactual: cf.features,
    })
}

/// Renders one unit of an image family and the same unit after `do(variable = value)`.
#[wasm_bindgen]
pub fn counterfactual_image(family: &str, seed: u32, variable: &str, value: f64) -> String {
    respond(image(family, seed as u64, variable, value))
}

fn decomposition(mediators: usize, backdoor: usize, predictor: &str, seed: u64) -> Result<serde_json::Value> {
    let kind: PredictorKind = parse("predictor", predictor)?;
    let config = RandomSamConfig { mediators, backdoor, ..RandomSamConfig::default() };
    let scm = random_sam(&config, seed)?;
    let pred = random_predictor(&scm, kind, seed.wrapping_add(1))?;
    let analysis = PathwayAnalysis::new(&scm, &pred)?;
    Ok(json!({
        "scm": scm,
        "report": analysis.report()?,
        "certificate": analysis.certificate(),
    }))
}

/// Exact TV / stable / IE / SE decomposition for a random binary model with
/// the given number of mediators and backdoor variables.
#[wasm_bindgen]
pub fn pathway_decomposition(mediators: u32, backdoor: u32, predictor: &str, seed: u32) -> String {
    respond(decomposition(mediators.min(3) as usize, backdoor.min(3) as usize, predictor, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn get(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn curve_separates_families_at_median_bandwidth() {
        let ind = get(dependence_curve("independent", 128, 3));
        let dep = get(dependence_curve("dependent", 128, 3));
        assert_eq!(ind["values"].as_array().unwrap().len(), CURVE_POINTS);
        assert!(dep["median_value"].as_f64().unwrap() > ind["median_value"].as_f64().unwrap() + 0.3);
        assert!(get(dependence_curve("neither", 128, 3))["error"].is_string());
        assert!(get(dependence_curve("dependent", 2, 3))["error"].is_string());
    }

    #[test]
    fn counterfactual_image_keeps_unit_and_moves_bias_blob() {
        let v = get(counterfactual_image("blob", 5, "bi", 0.9));
        let (f, c) = (v["factual"].as_array().unwrap(), v["counterfactual"].as_array().unwrap());
        let r = v["resolution"].as_u64().unwrap() as usize;
        assert_eq!(f.len(), r * r);
        assert_ne!(f, c);
        assert_eq!(v["factual_target"], v["counterfactual_target"]);
        let on_target = get(counterfactual_image("blob", 5, "ci", 0.1));
        assert_eq!(on_target["counterfactual_target"], 0.1);
        assert!(get(counterfactual_image("waterbirds_discrete", 5, "bird", 0.0))["error"].is_string());
    }

    #[test]
    fn decomposition_is_exact_and_serialisable() {
        let v = get(pathway_decomposition(1, 1, "stochastic", 9));
        assert!(v["report"]["max_residual"].as_f64().unwrap() <= 1e-12);
        let stable = get(pathway_decomposition(1, 1, "first_input", 9));
        assert_eq!(stable["certificate"]["is_ci"], true);
        assert!(get(pathway_decomposition(1, 1, "oracle", 9))["error"].is_string());
    }
}
