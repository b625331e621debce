//! Subcommand implementations behind the `sdisco` binary.
//!
//! Every command reads a versioned JSON document (unknown keys rejected),
//! resolves relative paths against the directory of that document, and is
//! deterministic given the document and seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdisco::bench::{loglog_slope, run_bench, write_bench_csv, BenchRecord, NAIVE, SDISCO};
use sdisco::pathways::{self, DiscreteScm, PathwayReport, StabilityCertificate, TablePredictor};
use sdisco::rng::derive_seed;
use sdisco::scm::{self, generate_with_retention, load_dataset, positivity_report, save_dataset, DatasetSpec, Task};
use sdisco::trainer::{self, read_checkpoint, write_checkpoint, EvalMetrics, TrainConfig};
use sdisco::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "SDISCO_SEED";

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Format(_) | Error::Json(_) => 2,
        Error::Io(_) => 3,
        Error::Capacity(_) => 4,
        Error::NumericDomain(_) | Error::EstimatorUndefined(_) | Error::UndefinedConditional(_) => 5,
        _ => 1,
    }
}

/// Parses the global seed override, if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not a u64"))),
        Err(_) => Ok(None),
    }
}

/// Mixes the override into a configured seed so distinct seeds stay distinct.
fn seeded(seed: u64, global: Option<u64>) -> u64 {
    global.map_or(seed, |g| derive_seed(g, seed))
}

fn check_version(version: u32) -> Result<()> {
    if version == CONFIG_VERSION {
        Ok(())
    } else {
        Err(Error::Config(format!("config version {version} unsupported, expected {CONFIG_VERSION}")))
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, PathBuf)> {
    let text = fs::read_to_string(path)?;
    let cfg = serde_json::from_str(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSpec {
    pub name: String,
    pub spec: DatasetSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub version: u32,
    pub out_dir: PathBuf,
    pub datasets: Vec<NamedSpec>,
    #[serde(default = "yes")]
    pub csv: bool,
}

fn yes() -> bool {
    true
}

/// Summary printed and written for every generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSummary {
    pub name: String,
    pub path: PathBuf,
    pub n: usize,
    pub dim: usize,
    pub retained_fraction: Option<f64>,
    pub positivity_min_conditional: f64,
    pub positivity_holds: bool,
}

pub fn cmd_gen(config: &Path) -> Result<Vec<GenSummary>> {
    let (cfg, base): (GenConfig, _) = read_config(config)?;
    check_version(cfg.version)?;
    let global = seed_override()?;
    let out = resolve(&base, &cfg.out_dir);
    fs::create_dir_all(&out)?;
    let mut summaries = Vec::new();
    for item in &cfg.datasets {
        let spec = DatasetSpec { seed: seeded(item.spec.seed, global), ..item.spec.clone() };
        let (data, retained) = generate_with_retention(&spec)?;
        let path = out.join(format!("{}.sdds", item.name));
        save_dataset(&data, &path)?;
        if cfg.csv {
            scm::write_csv(&data, BufWriter::new(File::create(out.join(format!("{}.csv", item.name)))?))?;
        }
        let report = positivity_report(&data)?;
        println!("{}: {} units, {} features -> {}", item.name, data.n(), data.dim(), path.display());
        if let Some(f) = retained {
            println!("  selection retained {:.4} of the candidate pool", f);
        }
        println!(
            "  positivity: min P(bias bin | target bin) = {:.4} ({})",
            report.min_conditional,
            if report.holds() { "holds" } else { "VIOLATED" }
        );
        summaries.push(GenSummary {
            name: item.name.clone(),
            path,
            n: data.n(),
            dim: data.dim(),
            retained_fraction: retained,
            positivity_min_conditional: report.min_conditional,
            positivity_holds: report.holds(),
        });
    }
    write_json(&out.join("gen_summary.json"), &summaries)?;
    Ok(summaries)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub version: u32,
    pub train_data: PathBuf,
    pub validation_data: PathBuf,
    /// Evaluated with the selected checkpoint of every run when present.
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub bandwidth_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub lambda: f64,
    pub bandwidth: f64,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub validation: EvalMetrics,
    pub test: Option<EvalMetrics>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub runs: Vec<RunSummary>,
    pub best_run: usize,
}

pub fn cmd_train(config: &Path) -> Result<TrainSummary> {
    let (cfg, base): (TrainRunConfig, _) = read_config(config)?;
    check_version(cfg.version)?;
    let global = seed_override()?;
    let train = load_dataset(&resolve(&base, &cfg.train_data))?;
    let validation = load_dataset(&resolve(&base, &cfg.validation_data))?;
    let test = cfg.test_data.as_ref().map(|p| load_dataset(&resolve(&base, p))).transpose()?;
    let out = resolve(&base, &cfg.out_dir);
    fs::create_dir_all(&out)?;
    let lambdas = cfg.lambda_grid.clone().unwrap_or_else(|| vec![cfg.train.lambda]);
    let bandwidths: Vec<Option<f64>> =
        cfg.bandwidth_grid.clone().map_or_else(|| vec![cfg.train.bandwidth], |g| g.into_iter().map(Some).collect());
    if lambdas.is_empty() || bandwidths.is_empty() {
        return Err(Error::Config("grids must not be empty".into()));
    }
    let mut runs = Vec::new();
    for &lambda in &lambdas {
        for &bandwidth in &bandwidths {
            let tc = TrainConfig { lambda, bandwidth, seed: seeded(cfg.train.seed, global), ..cfg.train.clone() };
            let name = format!("run{:02}", runs.len());
            let dir = out.join(&name);
            fs::create_dir_all(&dir)?;
            let report = trainer::fit(&tc, &train, &validation)?;
            trainer::write_jsonl(&report.epochs, BufWriter::new(File::create(dir.join("epochs.jsonl"))?))?;
            let checkpoint = dir.join("checkpoint.sdck");
            let mut w = BufWriter::new(File::create(&checkpoint)?);
            write_checkpoint(&report.predictor, &mut w)?;
            w.flush()?;
            let test_metrics = test.as_ref().map(|t| trainer::evaluate(&report.predictor, t, Some(report.bandwidth))).transpose()?;
            let summary = RunSummary {
                run: name.clone(),
                lambda,
                bandwidth: report.bandwidth,
                best_epoch: report.best_epoch,
                best_metric: report.best_metric,
                validation: report.epochs[report.best_epoch].validation.clone(),
                test: test_metrics,
                checkpoint,
            };
            write_json(&dir.join("summary.json"), &summary)?;
            println!(
                "{name}: lambda={lambda} bandwidth={:.4} best epoch {} metric {:.4} dependence {:?}",
                summary.bandwidth, summary.best_epoch, summary.best_metric, summary.validation.dependence
            );
            runs.push(summary);
        }
    }
    let best_run = (0..runs.len())
        .max_by(|&a, &b| runs[a].best_metric.total_cmp(&runs[b].best_metric).then(b.cmp(&a)))
        .expect("non-empty grid");
    fs::copy(&runs[best_run].checkpoint, out.join("best.sdck"))?;
    let summary = TrainSummary { runs, best_run };
    write_json(&out.join("summary.json"), &summary)?;
    println!("selected {}", summary.runs[best_run].run);
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteAnalysis {
    pub scm: DiscreteScm,
    pub predictor: TablePredictor,
}

fn d_units() -> usize {
    500
}
fn d_interventions() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub version: u32,
    /// Population used for the Monte Carlo metrics of trained checkpoints.
    #[serde(default)]
    pub population: Option<DatasetSpec>,
    /// Variables to intervene on; the family's bias variables when absent.
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    #[serde(default = "d_units")]
    pub n_units: usize,
    #[serde(default = "d_interventions")]
    pub n_interventions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub discrete: Option<DiscreteAnalysis>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub checkpoint: PathBuf,
    pub sensitivity: BTreeMap<String, f64>,
    pub ctf_accuracy: Option<f64>,
    pub ctf_r2: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteResult {
    pub report: PathwayReport,
    pub certificate: StabilityCertificate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnalyzeOutput {
    Models(Vec<ModelAnalysis>),
    Discrete(DiscreteResult),
}

pub fn cmd_analyze(config: &Path, checkpoints: &[PathBuf]) -> Result<AnalyzeOutput> {
    let (cfg, base): (AnalyzeConfig, _) = read_config(config)?;
    check_version(cfg.version)?;
    let global = seed_override()?;
    let output = match (&cfg.population, &cfg.discrete) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(Error::Config("give exactly one of `population` and `discrete`".into()));
        }
        (None, Some(d)) => {
            let analysis = pathways::PathwayAnalysis::new(&d.scm, &d.predictor)?;
            AnalyzeOutput::Discrete(DiscreteResult { report: analysis.report()?, certificate: analysis.certificate() })
        }
        (Some(pop), None) => {
            if checkpoints.is_empty() {
                return Err(Error::Config("population analysis needs at least one --checkpoint".into()));
            }
            let pop = DatasetSpec { seed: seeded(pop.seed, global), ..pop.clone() };
            let seed = seeded(cfg.seed, global);
            let variables: Vec<String> = cfg
                .variables
                .clone()
                .unwrap_or_else(|| pop.family.bias_variables().iter().map(|s| s.to_string()).collect());
            let mut models = Vec::new();
            for ckpt in checkpoints {
                let predictor = read_checkpoint(File::open(ckpt)?)?;
                let mut sensitivity = BTreeMap::new();
                for v in &variables {
                    let s = pathways::sensitivity(&predictor, &pop, v, cfg.n_units, cfg.n_interventions, seed)?;
                    sensitivity.insert(v.clone(), s);
                }
                let (ctf_accuracy, ctf_r2) = match pop.family.task() {
                    Task::Classification { .. } => {
                        (Some(pathways::ctf_accuracy(&predictor, &pop, cfg.n_units, cfg.n_interventions, seed)?), None)
                    }
                    Task::Regression => {
                        (None, Some(pathways::ctf_r2(&predictor, &pop, cfg.n_units, cfg.n_interventions, seed)?))
                    }
                };
                models.push(ModelAnalysis { checkpoint: ckpt.clone(), sensitivity, ctf_accuracy, ctf_r2 });
            }
            AnalyzeOutput::Models(models)
        }
    };
    let text = serde_json::to_string_pretty(&output)?;
    println!("{text}");
    if let Some(p) = &cfg.out {
        fs::write(resolve(&base, p), format!("{text}\n"))?;
    }
    Ok(output)
}

/// Trend figures derived from a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTrend {
    pub sizes: Vec<usize>,
    pub sdisco_peak_exponent: Option<f64>,
    pub naive_to_sdisco_time_ratio: Vec<f64>,
    pub checksums_equal: bool,
}

pub fn bench_trend(records: &[BenchRecord]) -> Result<BenchTrend> {
    let by = |name: &str| records.iter().filter(|r| r.estimator == name).collect::<Vec<_>>();
    let (naive, fast) = (by(NAIVE), by(SDISCO));
    if naive.len() != fast.len() || naive.iter().zip(&fast).any(|(a, b)| a.n != b.n) {
        return Err(Error::Input("benchmark table is not paired by n".into()));
    }
    let sizes: Vec<usize> = fast.iter().map(|r| r.n).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = fast.iter().map(|r| r.peak_aux_floats as f64).collect();
    Ok(BenchTrend {
        sdisco_peak_exponent: loglog_slope(&xs, &ys).ok(),
        naive_to_sdisco_time_ratio: naive.iter().zip(&fast).map(|(a, b)| a.wall_seconds / b.wall_seconds).collect(),
        checksums_equal: naive.iter().zip(&fast).all(|(a, b)| a.checksum == b.checksum),
        sizes,
    })
}

pub fn cmd_bench(sizes: &[usize], reps: usize, seed: u64, out: Option<&Path>) -> Result<(Vec<BenchRecord>, BenchTrend)> {
    let seed = seeded(seed, seed_override()?);
    let records = run_bench(sizes, reps, seed)?;
    match out {
        Some(p) => write_bench_csv(&records, BufWriter::new(File::create(p)?))?,
        None => write_bench_csv(&records, std::io::stdout().lock())?,
    }
    let trend = bench_trend(&records)?;
    eprintln!("{}", serde_json::to_string(&trend)?);
    Ok((records, trend))
}
