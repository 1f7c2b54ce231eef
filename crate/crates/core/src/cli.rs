//! Command-line front end: `run`, `bench` and `select`.
//!
//! Reports are pretty-printed JSON. Failures print a JSON error object on
//! stderr and exit nonzero.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::{run_trials, BenchmarkSpec};
use crate::cde::CdeSpec;
use crate::data::{parse_discrete_sidecar, Dataset};
use crate::error::{HrtError, Result};
use crate::hrt::{fit_samplers, run_hrt, Calibration, HrtConfig, HrtMode, NullSampler};
use crate::models::{ExternalConfig, PredictorSpec};
use crate::rng::RngStream;
use crate::select::{bh, erk_select, erk_statistics, SelectionMethod, SelectionReport, ERK_CAVEAT};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "hrt", version, about = "Holdout randomization tests for feature selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test every feature of a CSV dataset and select at a target FDR.
    Run(RunArgs),
    /// Run the synthetic benchmark.
    Bench(BenchArgs),
    /// Select from a previously produced p-value or statistic file.
    Select(SelectArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Response column name (default `y`).
    #[arg(long)]
    pub response: Option<String>,
    /// Sidecar declaring discrete columns, one `name = v1, v2, ...` per line.
    #[arg(long)]
    pub discrete: Option<PathBuf>,
    /// Comma-separated feature names to test (default: all).
    #[arg(long)]
    pub features: Option<String>,
    /// ols, ridge, lasso, elastic_net, kernel_ridge_poly3, mlp, external.
    #[arg(long)]
    pub model: Option<String>,
    /// basic, cv, fast, fast_cv.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub nsamples: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// adaptive, fixed or off.
    #[arg(long)]
    pub calibrate: Option<String>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Fixed quantile band `L,U` in percent; implies `--calibrate fixed`.
    #[arg(long)]
    pub quantiles: Option<String>,
    /// Conditional estimator: mdn, gaussian, or permutation.
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub target_fdr: Option<f64>,
    /// bh or erk.
    #[arg(long)]
    pub select: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Command line of an external predictor; implies `--model external`.
    #[arg(long)]
    pub external_cmd: Option<String>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Key-value config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Validate config and data, then exit without fitting.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    /// JSON benchmark spec; missing fields take preset values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// desk or full.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional CSV of per-trial `(model, variant, trial, r2, power, fdr)` rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelectArgs {
    /// A `run` report, or a CSV with a `p_value` (bh) or `statistic` (erk) column and optional `name`.
    #[arg(long)]
    pub pvalues: PathBuf,
    /// bh or erk.
    #[arg(long, default_value = "bh")]
    pub select: String,
    #[arg(long, default_value_t = 0.1)]
    pub target_fdr: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Fully resolved `run` configuration, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub response: String,
    pub discrete: Option<PathBuf>,
    pub features: Option<Vec<String>>,
    pub model: PredictorSpec,
    pub hrt: HrtConfig,
    pub select: SelectionMethod,
    pub alpha: f64,
    pub seed: u64,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub name: String,
    pub p_value: f64,
    pub t: f64,
    pub k: usize,
    pub weight_sum: f64,
    pub selected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<(f64, f64)>,
    /// Risk change under one null draw, for the filter method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub r2: f64,
    pub method: SelectionMethod,
    pub alpha: f64,
    pub n_discoveries: usize,
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
    pub features: Vec<FeatureRecord>,
}

/// Parses `key = value` lines; `#` starts a comment and `-` in keys reads as `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HrtError::Data {
            row: i + 1,
            message: "expected `key = value`".into(),
        })?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

const CONFIG_KEYS: &[&str] = &[
    "input",
    "response",
    "discrete",
    "features",
    "model",
    "mode",
    "folds",
    "nsamples",
    "grid_size",
    "test_fraction",
    "calibrate",
    "bootstrap",
    "quantiles",
    "sampler",
    "target_fdr",
    "select",
    "seed",
    "jobs",
    "external_cmd",
    "output",
];

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| HrtError::invalid(format!("config key `{key}`: cannot parse `{v}`")))
}

impl RunArgs {
    /// Fills unset flags from a key-value config text.
    pub fn merge_config(&mut self, text: &str) -> Result<()> {
        let cfg = parse_config(text)?;
        if let Some(k) = cfg.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(HrtError::invalid(format!("unknown config key `{k}`")));
        }
        macro_rules! fill {
            ($field:ident, $key:literal) => {
                if self.$field.is_none() {
                    if let Some(v) = cfg.get($key) {
                        self.$field = Some(parse_value($key, v)?);
                    }
                }
            };
        }
        fill!(input, "input");
        fill!(response, "response");
        fill!(discrete, "discrete");
        fill!(features, "features");
        fill!(model, "model");
        fill!(mode, "mode");
        fill!(folds, "folds");
        fill!(nsamples, "nsamples");
        fill!(grid_size, "grid_size");
        fill!(test_fraction, "test_fraction");
        fill!(calibrate, "calibrate");
        fill!(bootstrap, "bootstrap");
        fill!(quantiles, "quantiles");
        fill!(sampler, "sampler");
        fill!(target_fdr, "target_fdr");
        fill!(select, "select");
        fill!(seed, "seed");
        fill!(jobs, "jobs");
        fill!(external_cmd, "external_cmd");
        fill!(output, "output");
        Ok(())
    }

    /// Resolves flags (and the config file, if any) into a validated [`RunConfig`].
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut args = self.clone();
        if let Some(path) = &self.config {
            args.merge_config(&fs::read_to_string(path)?)?;
        }
        let input = args.input.clone().ok_or_else(|| HrtError::invalid("--input is required"))?;
        let model = match (&args.external_cmd, args.model.as_deref()) {
            (Some(cmd), None | Some("external")) => PredictorSpec::External(ExternalConfig::from_command_line(cmd)?),
            (Some(_), Some(other)) => {
                return Err(HrtError::invalid(format!(
                    "--external-cmd conflicts with --model {other}"
                )))
            }
            (None, name) => PredictorSpec::from_name(name.unwrap_or("lasso"))?,
        };
        let mut hrt = HrtConfig::default();
        if let Some(m) = &args.mode {
            hrt.mode = HrtMode::parse(m)?;
        }
        if let Some(v) = args.folds {
            hrt.folds = v;
        }
        if let Some(v) = args.nsamples {
            hrt.nsamples = v;
        }
        if let Some(v) = args.grid_size {
            hrt.grid_size = v;
        }
        if let Some(v) = args.test_fraction {
            hrt.test_fraction = v;
        }
        if let Some(v) = args.bootstrap {
            hrt.bootstrap = v;
        }
        let band = args.quantiles.as_deref().map(parse_band).transpose()?;
        hrt.calibration = match (args.calibrate.as_deref(), band) {
            (None | Some("fixed"), Some((l, u))) => Calibration::Fixed { l, u },
            (Some("fixed"), None) => return Err(HrtError::invalid("--calibrate fixed needs --quantiles L,U")),
            (Some("off"), None) => Calibration::Off,
            (Some("adaptive") | None, None) => Calibration::Adaptive,
            (Some(other), Some(_)) if other != "fixed" => {
                return Err(HrtError::invalid("--quantiles only applies to --calibrate fixed"))
            }
            (Some(other), _) => return Err(HrtError::invalid(format!("unknown calibration `{other}`"))),
        };
        match args.sampler.as_deref() {
            None | Some("mdn") => {}
            Some("gaussian") => hrt.cde = CdeSpec::gaussian(),
            Some("permutation") => {
                if band.is_some() || matches!(args.calibrate.as_deref(), Some("adaptive" | "fixed")) {
                    return Err(HrtError::invalid("permutation nulls cannot be calibrated"));
                }
                hrt.null_sampler = NullSampler::Permutation;
                hrt.calibration = Calibration::Off;
            }
            Some(other) => return Err(HrtError::invalid(format!("unknown sampler `{other}`"))),
        }
        hrt.validate()?;
        model.validate()?;
        let select = SelectionMethod::parse(args.select.as_deref().unwrap_or("bh"))?;
        let alpha = args.target_fdr.unwrap_or(0.1);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(HrtError::invalid("--target-fdr must lie in (0, 1)"));
        }
        if args.jobs == Some(0) {
            return Err(HrtError::invalid("--jobs must be >= 1"));
        }
        let features = args.features.as_deref().map(|f| {
            f.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
        });
        Ok(RunConfig {
            input,
            response: args.response.clone().unwrap_or_else(|| "y".into()),
            discrete: args.discrete.clone(),
            features,
            model,
            hrt,
            select,
            alpha,
            seed: args.seed.unwrap_or(0),
            jobs: args.jobs,
        })
    }

    fn output_path(&self) -> Result<Option<PathBuf>> {
        if self.output.is_some() {
            return Ok(self.output.clone());
        }
        match &self.config {
            Some(path) => Ok(parse_config(&fs::read_to_string(path)?)?.get("output").map(PathBuf::from)),
            None => Ok(None),
        }
    }
}

fn parse_band(s: &str) -> Result<(f64, f64)> {
    let (l, u) = s
        .split_once(',')
        .ok_or_else(|| HrtError::invalid("--quantiles expects `L,U`"))?;
    let l = parse_value("quantiles", l.trim())?;
    let u = parse_value("quantiles", u.trim())?;
    Ok((l, u))
}

/// Loads the dataset named by the config and resolves feature names to indices.
pub fn load_run_data(cfg: &RunConfig) -> Result<(Dataset, Vec<usize>)> {
    let discrete = match &cfg.discrete {
        Some(path) => parse_discrete_sidecar(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let data = Dataset::from_csv_path(&cfg.input, &cfg.response, &discrete)?;
    let features = match &cfg.features {
        None => (0..data.n_features()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                data.column_index(n)
                    .ok_or_else(|| HrtError::invalid(format!("unknown feature column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if features.is_empty() {
        return Err(HrtError::invalid("no features to test"));
    }
    Ok((data, features))
}

/// Executes a resolved run and assembles its report.
pub fn execute_run(cfg: &RunConfig) -> Result<RunReport> {
    let (data, features) = load_run_data(cfg)?;
    let rng = RngStream::new(cfg.seed);
    let run = run_hrt(&data, &cfg.model, Some(&features), &cfg.hrt, &rng)?;
    let pvalues: Vec<f64> = run.results.iter().map(|r| r.p_value).collect();
    let (selection, statistics): (SelectionReport, Option<Vec<f64>>) = match cfg.select {
        SelectionMethod::Bh => (bh(&pvalues, cfg.alpha)?, None),
        SelectionMethod::ErkFilter => {
            let samplers = fit_samplers(&data, &features, &cfg.hrt, &rng)?;
            let w = erk_statistics(&run.pipeline, &data, &samplers, cfg.hrt.risk, &rng)?;
            (erk_select(&w, cfg.alpha)?, Some(w))
        }
    };
    let records = run
        .results
        .iter()
        .enumerate()
        .map(|(i, r)| FeatureRecord {
            name: data.names()[r.feature].clone(),
            p_value: r.p_value,
            t: r.t,
            k: r.k(),
            weight_sum: r.diagnostics.weight_sum,
            selected: selection.discoveries.contains(&i),
            band: r.diagnostics.band,
            statistic: statistics.as_ref().map(|w| w[i]),
        })
        .collect();
    Ok(RunReport {
        version: VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        r2: run.pipeline.r2(),
        method: selection.method,
        alpha: cfg.alpha,
        n_discoveries: selection.discoveries.len(),
        threshold: selection.threshold,
        caveat: (cfg.select == SelectionMethod::ErkFilter).then(|| ERK_CAVEAT.to_string()),
        features: records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRecord {
    pub name: String,
    pub value: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectOutput {
    pub version: String,
    pub method: SelectionMethod,
    pub alpha: f64,
    pub n_discoveries: usize,
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
    pub features: Vec<SelectRecord>,
}

/// Reads `(name, value)` pairs from a run report or a CSV.
fn read_values(path: &Path, method: SelectionMethod) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)?;
    let column = match method {
        SelectionMethod::Bh => "p_value",
        SelectionMethod::ErkFilter => "statistic",
    };
    if text.trim_start().starts_with('{') {
        let report: RunReport = serde_json::from_str(&text)?;
        return report
            .features
            .into_iter()
            .map(|f| {
                let v = match method {
                    SelectionMethod::Bh => Some(f.p_value),
                    SelectionMethod::ErkFilter => f.statistic,
                };
                v.map(|v| (f.name, v))
                    .ok_or_else(|| HrtError::invalid(format!("report has no `{column}` values")))
            })
            .collect();
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let vcol = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| HrtError::invalid(format!("CSV lacks a `{column}` column")))?;
    let ncol = headers.iter().position(|h| h == "name");
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let row = i + 1;
            let rec = rec.map_err(|e| HrtError::Data {
                row,
                message: e.to_string(),
            })?;
            let field = rec.get(vcol).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| HrtError::Data {
                row,
                message: format!("cannot parse `{field}` as a number"),
            })?;
            let name = ncol
                .and_then(|c| rec.get(c))
                .map_or_else(|| format!("f{i}"), str::to_owned);
            Ok((name, v))
        })
        .collect()
}

pub fn execute_select(args: &SelectArgs) -> Result<SelectOutput> {
    let method = SelectionMethod::parse(&args.select)?;
    let values = read_values(&args.pvalues, method)?;
    let v: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let report = match method {
        SelectionMethod::Bh => bh(&v, args.target_fdr)?,
        SelectionMethod::ErkFilter => erk_select(&v, args.target_fdr)?,
    };
    Ok(SelectOutput {
        version: VERSION.to_string(),
        method,
        alpha: args.target_fdr,
        n_discoveries: report.discoveries.len(),
        threshold: report.threshold,
        caveat: (method == SelectionMethod::ErkFilter).then(|| ERK_CAVEAT.to_string()),
        features: values
            .into_iter()
            .enumerate()
            .map(|(i, (name, value))| SelectRecord {
                name,
                value,
                selected: report.discoveries.contains(&i),
            })
            .collect(),
    })
}

pub fn resolve_bench(args: &BenchArgs) -> Result<BenchmarkSpec> {
    let base = match args.preset.as_str() {
        "desk" => BenchmarkSpec::desk(),
        "full" => BenchmarkSpec::full_scale(),
        other => return Err(HrtError::invalid(format!("unknown preset `{other}`"))),
    };
    let mut spec = match &args.spec {
        Some(path) => {
            let mut value = serde_json::to_value(&base)?;
            let overlay: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
            merge_json(&mut value, overlay);
            serde_json::from_value(value)?
        }
        None => base,
    };
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn install_threads(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        // A global pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            install_threads(cfg.jobs)?;
            let out = args.output_path()?;
            if args.dry_run {
                let (data, features) = load_run_data(&cfg)?;
                let text = to_pretty(&json!({
                    "version": VERSION,
                    "dry_run": true,
                    "config": cfg,
                    "n_samples": data.n_samples(),
                    "n_features": data.n_features(),
                    "n_tested": features.len(),
                }))?;
                return write_output(out.as_deref(), &text);
            }
            if cfg.select == SelectionMethod::ErkFilter {
                eprintln!("warning: {ERK_CAVEAT}");
            }
            let report = execute_run(&cfg)?;
            write_output(out.as_deref(), &to_pretty(&report)?)
        }
        Command::Bench(args) => {
            let spec = resolve_bench(&args)?;
            install_threads(args.jobs)?;
            if args.dry_run {
                let text = to_pretty(&json!({"version": VERSION, "dry_run": true, "spec": spec}))?;
                return write_output(args.output.as_deref(), &text);
            }
            let report = run_trials(&spec)?;
            if let Some(path) = &args.csv {
                fs::write(path, report.to_csv()?)?;
            }
            let text = to_pretty(&json!({"version": VERSION, "report": report}))?;
            write_output(args.output.as_deref(), &text)
        }
        Command::Select(args) => {
            let out = execute_select(&args)?;
            if out.method == SelectionMethod::ErkFilter {
                eprintln!("warning: {ERK_CAVEAT}");
            }
            write_output(args.output.as_deref(), &to_pretty(&out)?)
        }
    }
}

/// JSON error object written to stderr on failure.
pub fn error_json(e: &HrtError) -> String {
    json!({"error": {"kind": e.kind(), "message": e.to_string()}}).to_string()
}

/// Entry point for the `hrt` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}
