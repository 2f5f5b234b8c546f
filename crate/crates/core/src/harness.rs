//! Config-driven experiment runner.
//!
//! A run directory `<out>/<run_id>/` holds `manifest.toml` (the fully
//! resolved config plus `[status]` and `[summary]`) and whichever of
//! `trajectory.csv`, `grid.csv`, `divergence.csv`, `robustness.csv` and
//! `robustness.json` the config requests. Feeding a manifest back to
//! [`ExperimentConfig::from_toml`] reproduces the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::expectation::{
    divergence_curve, divergence_to_csv, expected_fitness_quadrature, DivergencePoint, DEFAULT_NODES_PER_DIM,
    MAX_NODES_PER_DIM, QUADRATURE_TOLERANCE,
};
use crate::landscapes::{grid_sample, Landscape, ParamVector};
use crate::optimizers::{run_optimizer, trajectory_to_csv, OptimizerConfig, TrajectoryRecord};
use crate::robustness::{
    compare_solutions, perturbation_cloud, Alternative, CloudConfig, ComparisonTable, MannWhitneyResult,
    RobustnessReport,
};
use crate::seeding::{derive_seed, name_tag};
use crate::text::fmt_real;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Trajectory,
    Grid,
    Divergence,
    Robustness,
}

fn default_outputs() -> BTreeSet<Output> {
    BTreeSet::from([Output::Trajectory])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    /// Points per axis, endpoints included.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    101
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSettings {
    #[serde(default = "default_nodes")]
    pub nodes_per_dim: usize,
}

fn default_nodes() -> usize {
    DEFAULT_NODES_PER_DIM
}

impl Default for DivergenceSettings {
    fn default() -> Self {
        Self {
            nodes_per_dim: default_nodes(),
        }
    }
}

/// Perturbation study of the final iterate. `sigma` defaults to the ES
/// search sigma and is required for other optimizers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_one")]
    pub per_trials: usize,
    #[serde(default = "default_count")]
    pub base_trials: usize,
}

fn default_count() -> usize {
    1000
}

fn default_one() -> usize {
    1
}

impl RobustnessSettings {
    pub fn cloud(&self) -> CloudConfig {
        CloudConfig {
            count: self.count,
            per_trials: self.per_trials,
            base_trials: self.base_trials,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    pub start: ParamVector,
    #[serde(default = "default_outputs")]
    pub outputs: BTreeSet<Output>,
    /// Output root used by the CLI when `--out` is absent. Not recorded in manifests.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads used by the CLI when `--parallelism` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    pub landscape: Landscape,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub divergence: DivergenceSettings,
    #[serde(default)]
    pub robustness: RobustnessSettings,
}

/// Re-key a validation error under `prefix.`.
fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument { field, message } => Error::InvalidArgument {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

fn validate_run_id(field: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("`{id}` must be non-empty and use only letters, digits, `_`, `-`, `.`"),
        ))
    }
}

/// Seeds are stored as TOML integers, which are signed 64-bit.
fn validate_seed(seed: u64) -> Result<()> {
    if seed > i64::MAX as u64 {
        return Err(Error::invalid("seed", format!("must be at most {}, got {seed}", i64::MAX)));
    }
    Ok(())
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Config(e.to_string()))
}

fn from_table<T: serde::de::DeserializeOwned>(table: Table) -> Result<T> {
    table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

/// A manifest is recognised by its `[config]` and `[status]` tables.
fn strip_manifest(mut table: Table) -> Table {
    if table.contains_key("status") {
        if let Some(Value::Table(config)) = table.remove("config") {
            return config;
        }
    }
    table
}

impl ExperimentConfig {
    /// Parse a config (or a run manifest), apply `key=value` overrides, and validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = strip_manifest(parse_table(text)?);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        validate_run_id("run_id", &self.run_id)?;
        validate_seed(self.seed)?;
        if self.start.dim() != self.landscape.dim() {
            return Err(Error::invalid(
                "start",
                format!(
                    "has dimension {}, landscape `{}` has dimension {}",
                    self.start.dim(),
                    self.landscape.name(),
                    self.landscape.dim()
                ),
            ));
        }
        if self.parallelism == Some(0) {
            return Err(Error::invalid("parallelism", "must be at least 1"));
        }
        self.optimizer.validate().map_err(|e| prefixed("optimizer", e))?;
        if self.outputs.contains(&Output::Divergence) && self.optimizer.es_sigma().is_none() {
            return Err(Error::invalid(
                "outputs",
                format!("divergence requires an es optimizer, got `{}`", self.optimizer.kind()),
            ));
        }
        if self.outputs.contains(&Output::Grid) {
            if self.landscape.dim() != 2 {
                return Err(Error::invalid("outputs", "grid requires a two-dimensional landscape"));
            }
            if self.grid.resolution < 2 {
                return Err(Error::invalid("grid.resolution", "must be at least 2"));
            }
        }
        let n = self.divergence.nodes_per_dim;
        if n < 3 || n.is_multiple_of(2) || n > MAX_NODES_PER_DIM {
            return Err(Error::invalid(
                "divergence.nodes_per_dim",
                format!("must be odd and in [3, {MAX_NODES_PER_DIM}], got {n}"),
            ));
        }
        if self.outputs.contains(&Output::Robustness) {
            match self.robustness_sigma() {
                None => {
                    return Err(Error::invalid(
                        "robustness.sigma",
                        format!("required for a `{}` optimizer", self.optimizer.kind()),
                    ))
                }
                Some(s) if !(s.is_finite() && s > 0.0) => {
                    return Err(Error::invalid("robustness.sigma", format!("must be positive, got {s}")))
                }
                Some(_) => {}
            }
            self.robustness.cloud().validate().map_err(|e| prefixed("robustness", e))?;
        }
        Ok(())
    }

    pub fn robustness_sigma(&self) -> Option<f64> {
        self.robustness.sigma.or(self.optimizer.es_sigma())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parse a scalar as a TOML value; anything unparseable becomes a string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Set `a.b.c` in `table`, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid(path, "empty key in dotted path"));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::invalid(path, format!("`{k}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Apply one `dotted.path=value` override.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("set", format!("expected key=value, got `{assignment}`")))?;
    set_path(table, path.trim(), parse_value(raw.trim()))
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed { cause: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub status: RunStatus,
    /// Complete trajectory, or the records produced before a failure.
    pub records: Vec<TrajectoryRecord>,
    /// Quadrature expected fitness of the final iterate (ES runs only).
    pub final_expected_fitness: Option<f64>,
    pub divergence: Option<Vec<DivergencePoint>>,
    pub robustness: Option<RobustnessReport>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn final_record(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn final_iterate(&self) -> Option<&ParamVector> {
        self.final_record().map(|r| &r.iterate)
    }

    pub fn final_fitness(&self) -> Option<f64> {
        self.final_record().map(|r| r.fitness_at_iterate)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Run one experiment into `<out_root>/<run_id>/`.
///
/// Validation and I/O problems are returned as errors. A failure during the
/// run itself yields `Ok` with [`RunStatus::Failed`] and a partial manifest.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = out_root.join(&cfg.run_id);
    create_dir(&dir)?;
    let mut art = RunArtifacts {
        config: cfg.clone(),
        dir: dir.clone(),
        status: RunStatus::Completed,
        records: Vec::new(),
        final_expected_fitness: None,
        divergence: None,
        robustness: None,
        warnings: Vec::new(),
        files: Vec::new(),
    };
    if !cfg.landscape.contains(cfg.start.as_slice()) {
        art.warnings
            .push(format!("start {:?} lies outside the landscape bounds", cfg.start.as_slice()));
    }

    let mut optimizer = cfg.optimizer.clone();
    optimizer.set_seed(cfg.seed);
    let outcome = match run_optimizer(&cfg.landscape, &cfg.start, &optimizer) {
        Ok(records) => {
            art.records = records;
            produce_outputs(cfg, &mut art)
        }
        Err(e) => {
            art.records = e.partial;
            if cfg.outputs.contains(&Output::Trajectory) && !art.records.is_empty() {
                let path = dir.join("trajectory.csv");
                write_file(&path, &trajectory_to_csv(&art.records))?;
                art.files.push(path);
            }
            Err(e.cause)
        }
    };
    match outcome {
        Ok(()) => {}
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => art.status = RunStatus::Failed { cause: e.to_string() },
    }
    let path = dir.join("manifest.toml");
    write_file(&path, &manifest_toml(&art))?;
    art.files.push(path);
    Ok(art)
}

fn produce_outputs(cfg: &ExperimentConfig, art: &mut RunArtifacts) -> Result<()> {
    let dir = art.dir.clone();
    let emit = |art: &mut RunArtifacts, name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        art.files.push(path);
        Ok(())
    };
    if cfg.outputs.contains(&Output::Trajectory) {
        emit(art, "trajectory.csv", trajectory_to_csv(&art.records))?;
    }
    if cfg.outputs.contains(&Output::Grid) {
        let grid = grid_sample(&cfg.landscape, cfg.grid.resolution)?;
        emit(art, "grid.csv", grid.to_csv())?;
    }
    if let Some(sigma) = cfg.optimizer.es_sigma() {
        let nodes = cfg.divergence.nodes_per_dim;
        if cfg.outputs.contains(&Output::Divergence) {
            let curve = divergence_curve(&art.records, &cfg.landscape, sigma, nodes)?;
            emit(art, "divergence.csv", divergence_to_csv(&curve))?;
            art.final_expected_fitness = curve.last().map(|p| p.expected_fitness);
            art.divergence = Some(curve);
        } else if let Some(last) = art.records.last() {
            let j = expected_fitness_quadrature(&cfg.landscape, &last.iterate, sigma, nodes)?;
            art.final_expected_fitness = Some(j.value);
        }
    }
    if cfg.outputs.contains(&Output::Robustness) {
        let sigma = cfg.robustness_sigma().expect("validated");
        let cloud = cfg.robustness.cloud();
        let solution = art.records.last().expect("a completed run has records").iterate.clone();
        let seed = derive_seed(cfg.seed, &[name_tag("robustness")]);
        let report = perturbation_cloud(&cfg.landscape, &solution, sigma, &cloud, seed)?;
        emit(art, "robustness.csv", report.to_csv())?;
        emit(art, "robustness.json", report.summary_json(&cloud) + "\n")?;
        art.robustness = Some(report);
    }
    Ok(())
}

fn reals(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn manifest_toml(art: &RunArtifacts) -> String {
    let mut status = Table::new();
    match &art.status {
        RunStatus::Completed => {
            status.insert("state".into(), "completed".into());
        }
        RunStatus::Failed { cause } => {
            status.insert("state".into(), "failed".into());
            status.insert("cause".into(), cause.clone().into());
        }
    }
    status.insert("records".into(), Value::Integer(art.records.len() as i64));
    status.insert(
        "warnings".into(),
        Value::Array(art.warnings.iter().map(|w| w.clone().into()).collect()),
    );

    let mut summary = Table::new();
    if let Some(last) = art.final_record() {
        summary.insert("final_iteration".into(), Value::Integer(last.iteration as i64));
        summary.insert("final_iterate".into(), reals(last.iterate.as_slice()));
        summary.insert("final_fitness".into(), Value::Float(last.fitness_at_iterate));
        summary.insert("evaluations_used".into(), Value::Integer(last.evaluations_used as i64));
    }
    if let Some(j) = art.final_expected_fitness {
        summary.insert("final_expected_fitness".into(), Value::Float(j));
    }
    if let Some(r) = &art.robustness {
        summary.insert("base_performance".into(), Value::Float(r.base_performance));
        summary.insert("perturbed_median".into(), Value::Float(r.quartiles.median));
        if let Some(s) = r.robustness_score {
            summary.insert("robustness_score".into(), Value::Float(s));
        }
    }

    let mut root = Table::new();
    root.insert(
        "config".into(),
        Value::try_from(&art.config).expect("config serializes"),
    );
    root.insert("status".into(), Value::Table(status));
    root.insert("summary".into(), Value::Table(summary));
    toml::to_string(&root).expect("manifest serializes")
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the experiment config, e.g. `optimizer.sigma`.
    pub axis: String,
    pub values: Vec<f64>,
    /// Further paths varied in lockstep with `axis`; each list has one entry per value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub linked: BTreeMap<String, Vec<f64>>,
}

/// An experiment config with a `[sweep]` table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base: Table,
    pub sweep: SweepAxis,
}

fn number_value(v: f64) -> Value {
    // Integral values become TOML integers so they can also address count fields.
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::Integer(v as i64)
    } else {
        Value::Float(v)
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut base = parse_table(text)?;
        let sweep = match base.remove("sweep") {
            Some(Value::Table(t)) => from_table::<SweepAxis>(t)?,
            Some(_) => return Err(Error::invalid("sweep", "must be a table")),
            None => return Err(Error::invalid("sweep", "missing `[sweep]` table")),
        };
        for o in overrides {
            apply_override(&mut base, o)?;
        }
        let cfg = SweepConfig { base, sweep };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn base_run_id(&self) -> Result<&str> {
        match self.base.get("run_id") {
            Some(Value::String(s)) => Ok(s),
            _ => Err(Error::invalid("run_id", "missing or not a string")),
        }
    }

    fn base_seed(&self) -> Result<u64> {
        match self.base.get("seed") {
            None => Ok(0),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(_) => Err(Error::invalid("seed", "must be a non-negative integer")),
        }
    }

    /// Check the sweep table and that every swept value yields a valid experiment.
    pub fn validate(&self) -> Result<()> {
        let n = self.sweep.values.len();
        if n == 0 {
            return Err(Error::invalid("sweep.values", "must not be empty"));
        }
        if let Some(v) = self.sweep.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("sweep.values", format!("must be finite, got {v}")));
        }
        let mut seen = BTreeSet::new();
        if !self.sweep.values.iter().all(|v| seen.insert(v.to_bits())) {
            return Err(Error::invalid("sweep.values", "must be distinct"));
        }
        for (path, list) in &self.sweep.linked {
            if list.len() != n {
                return Err(Error::invalid(
                    format!("sweep.linked.{path}"),
                    format!("has {} entries, expected {n}", list.len()),
                ));
            }
        }
        validate_run_id("run_id", self.base_run_id()?)?;
        for i in 0..n {
            self.materialize(i)?;
        }
        Ok(())
    }

    /// The experiment for the `index`-th swept value. Its seed depends only on
    /// the base seed and the value, never on the value's position.
    pub fn materialize(&self, index: usize) -> Result<ExperimentConfig> {
        let value = self.sweep.values[index];
        let mut table = self.base.clone();
        set_path(&mut table, &self.sweep.axis, number_value(value))?;
        for (path, list) in &self.sweep.linked {
            set_path(&mut table, path, number_value(list[index]))?;
        }
        let leaf = self.sweep.axis.rsplit('.').next().unwrap_or(&self.sweep.axis);
        let run_id = format!("{}__{leaf}_{value}", self.base_run_id()?);
        table.insert("run_id".into(), run_id.into());
        let seed = derive_seed(self.base_seed()?, &[value.to_bits()]) >> 1;
        table.insert("seed".into(), Value::Integer(seed as i64));
        let cfg: ExperimentConfig = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct SweepArtifacts {
    pub dir: PathBuf,
    pub values: Vec<f64>,
    pub runs: Vec<RunArtifacts>,
}

/// One run per swept value under `<out_root>/<run_id>/`, plus `sweep_summary.csv`.
/// Runs execute concurrently; a failed run is recorded and the rest continue.
pub fn run_sweep(cfg: &SweepConfig, out_root: &Path) -> Result<SweepArtifacts> {
    cfg.validate()?;
    let dir = out_root.join(cfg.base_run_id()?);
    create_dir(&dir)?;
    let configs = (0..cfg.sweep.values.len())
        .map(|i| cfg.materialize(i))
        .collect::<Result<Vec<_>>>()?;
    let runs = configs
        .par_iter()
        .map(|c| run_experiment(c, &dir))
        .collect::<Result<Vec<_>>>()?;
    write_file(&dir.join("sweep_summary.csv"), &sweep_summary_csv(&cfg.sweep.values, &runs))?;
    Ok(SweepArtifacts {
        dir,
        values: cfg.sweep.values.clone(),
        runs,
    })
}

/// Header `value,run_id,status,x0,..,final_fitness,final_expected_fitness`.
fn sweep_summary_csv(values: &[f64], runs: &[RunArtifacts]) -> String {
    let dim = runs.first().map_or(0, |r| r.config.landscape.dim());
    let mut s = String::from("value,run_id,status");
    for i in 0..dim {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",final_fitness,final_expected_fitness\n");
    for (v, run) in values.iter().zip(runs) {
        let state = if run.status.is_completed() { "completed" } else { "failed" };
        let _ = write!(s, "{},{},{state}", fmt_real(*v), run.config.run_id);
        match run.final_record() {
            Some(r) => {
                for x in r.iterate.as_slice() {
                    let _ = write!(s, ",{}", fmt_real(*x));
                }
                let _ = write!(s, ",{}", fmt_real(r.fitness_at_iterate));
            }
            None => s.push_str(&",".repeat(dim + 1)),
        }
        let j = run.final_expected_fitness.map(fmt_real).unwrap_or_default();
        let _ = writeln!(s, ",{j}");
    }
    s
}

// ---------------------------------------------------------------------------
// Shipped configs and figure suites
// ---------------------------------------------------------------------------

struct Shipped {
    path: &'static str,
    text: &'static str,
}

macro_rules! shipped {
    ($($p:literal),* $(,)?) => {
        &[$(Shipped { path: $p, text: include_str!(concat!("../configs/", $p, ".toml")) }),*]
    };
}

const SHIPPED: &[Shipped] = shipped![
    "donut/es_sigma_0.16",
    "donut/es_sigma_0.04",
    "donut/es_sigma_0.002",
    "donut/fd",
    "narrowing_path/es_sigma_0.12",
    "narrowing_path/es_sigma_0.04",
    "narrowing_path/es_sigma_0.0005",
    "narrowing_path/fd",
    "fleeting_peaks/es_sigma_0.16",
    "fleeting_peaks/es_sigma_0.048",
    "fleeting_peaks/es_sigma_0.002",
    "fleeting_peaks/fd",
    "gradient_gap/es_sigma_0.18",
    "gradient_gap/fd",
    "gradient_gap/fd_momentum",
    "gradient_cliff/es_sigma_0.18",
    "gradient_cliff/fd",
    "gradient_cliff/fd_momentum",
    "robustness_comparison/ga_fleeting_peaks",
    "robustness_comparison/comparisons",
];

pub const FIGURE_SUITES: [&str; 6] = [
    "donut",
    "narrowing_path",
    "fleeting_peaks",
    "gradient_gap",
    "gradient_cliff",
    "robustness_comparison",
];

/// Raw text of a shipped config such as `donut/fd`.
pub fn shipped_config_text(path: &str) -> Result<&'static str> {
    SHIPPED
        .iter()
        .find(|s| s.path == path)
        .map(|s| s.text)
        .ok_or_else(|| Error::Config(format!("no shipped config `{path}`")))
}

pub fn shipped_config(path: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(shipped_config_text(path)?, &[])
}

/// Paths of the shipped experiment configs of a landscape suite.
fn suite_treatments(suite: &str) -> Vec<&'static str> {
    let prefix = format!("{suite}/");
    SHIPPED
        .iter()
        .filter(|s| s.path.starts_with(&prefix))
        .map(|s| s.path)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub criterion: u8,
    pub claim: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} criterion {}: {} ({})", self.criterion, self.claim, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonOutcome {
    pub name: String,
    pub candidate: String,
    pub baseline: String,
    pub table: ComparisonTable,
}

impl ComparisonOutcome {
    pub fn candidate_report(&self) -> &RobustnessReport {
        &self.table.reports[0][0]
    }

    pub fn baseline_report(&self) -> &RobustnessReport {
        &self.table.reports[1][0]
    }

    pub fn test(&self) -> &MannWhitneyResult {
        &self.table.pairwise[0].result
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: String,
    pub dir: PathBuf,
    /// Keyed by run id.
    pub runs: BTreeMap<String, RunArtifacts>,
    pub comparisons: Vec<ComparisonOutcome>,
    pub checklist: Vec<CheckLine>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checklist.iter().all(|c| c.passed)
    }

    pub fn checklist_text(&self) -> String {
        self.checklist.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn run(&self, run_id: &str) -> Option<&RunArtifacts> {
        self.runs.get(run_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub name: String,
    /// Shipped config path of the solution expected to be more robust.
    pub candidate: String,
    pub baseline: String,
    pub sigma: f64,
    pub count: usize,
    pub per_trials: usize,
    pub base_trials: usize,
    /// Largest allowed `|a - b| / max(|a|, |b|)` between base performances.
    pub base_match_tolerance: f64,
    /// Also require the candidate's robustness score to exceed the baseline's.
    pub require_score_order: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonPlan {
    seed: u64,
    comparison: Vec<ComparisonSpec>,
}

/// Run every treatment of a figure suite into `<out_root>/<suite>/` and write
/// `checklist.txt`. `seed` replaces every shipped seed when given.
pub fn run_figure_suite(name: &str, out_root: &Path, seed: Option<u64>) -> Result<SuiteReport> {
    if !FIGURE_SUITES.contains(&name) {
        return Err(Error::Config(format!(
            "unknown suite `{name}`; expected one of {}",
            FIGURE_SUITES.join(", ")
        )));
    }
    let dir = out_root.join(name);
    create_dir(&dir)?;

    let plan = if name == "robustness_comparison" {
        let mut plan: ComparisonPlan = from_table(parse_table(shipped_config_text("robustness_comparison/comparisons")?)?)?;
        if let Some(s) = seed {
            plan.seed = s;
        }
        Some(plan)
    } else {
        None
    };
    let paths: Vec<String> = match &plan {
        Some(p) => {
            let mut v: Vec<String> = Vec::new();
            for c in &p.comparison {
                for path in [&c.candidate, &c.baseline] {
                    if !v.contains(path) {
                        v.push(path.clone());
                    }
                }
            }
            v
        }
        None => suite_treatments(name).into_iter().map(String::from).collect(),
    };
    let mut configs = Vec::with_capacity(paths.len());
    for path in &paths {
        let mut cfg = shipped_config(path)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        configs.push(cfg);
    }
    let runs: Vec<RunArtifacts> = configs
        .par_iter()
        .map(|c| run_experiment(c, &dir))
        .collect::<Result<_>>()?;
    let by_path: BTreeMap<&str, &RunArtifacts> = paths.iter().map(String::as_str).zip(&runs).collect();

    let mut report = SuiteReport {
        name: name.to_string(),
        dir: dir.clone(),
        runs: BTreeMap::new(),
        comparisons: Vec::new(),
        checklist: Vec::new(),
    };
    if let Some(plan) = &plan {
        for spec in &plan.comparison {
            match run_comparison(spec, plan.seed, &by_path, &dir) {
                Ok(outcome) => {
                    report.checklist.extend(comparison_checks(spec, &outcome));
                    report.comparisons.push(outcome);
                }
                Err(e) => report.checklist.push(CheckLine {
                    criterion: 9,
                    claim: format!("{}: comparison completes", spec.name),
                    passed: false,
                    detail: e.to_string(),
                }),
            }
        }
    } else {
        let get = |id: &str| runs.iter().find(|r| r.config.run_id == id);
        report.checklist = match name {
            "donut" => donut_checks(&get),
            "narrowing_path" => narrowing_path_checks(&get),
            "fleeting_peaks" => fleeting_peaks_checks(&get),
            "gradient_gap" => gap_checks(&get),
            _ => cliff_checks(&get),
        };
    }
    for r in runs {
        report.runs.insert(r.config.run_id.clone(), r);
    }
    write_file(&dir.join("checklist.txt"), &report.checklist_text())?;
    Ok(report)
}

fn run_comparison(
    spec: &ComparisonSpec,
    seed: u64,
    runs: &BTreeMap<&str, &RunArtifacts>,
    dir: &Path,
) -> Result<ComparisonOutcome> {
    let fetch = |path: &str| -> Result<&RunArtifacts> {
        let run = runs
            .get(path)
            .ok_or_else(|| Error::Config(format!("comparison `{}` names unknown run `{path}`", spec.name)))?;
        match &run.status {
            RunStatus::Completed => Ok(run),
            RunStatus::Failed { cause } => Err(Error::Config(format!("run `{path}` failed: {cause}"))),
        }
    };
    let cand = fetch(&spec.candidate)?;
    let base = fetch(&spec.baseline)?;
    if cand.config.landscape != base.config.landscape {
        return Err(Error::invalid(
            "comparison.baseline",
            format!("`{}` and `{}` use different landscapes", spec.candidate, spec.baseline),
        ));
    }
    let cloud = CloudConfig {
        count: spec.count,
        per_trials: spec.per_trials,
        base_trials: spec.base_trials,
    };
    let solutions = [
        (cand.config.run_id.clone(), cand.final_iterate().expect("completed").clone()),
        (base.config.run_id.clone(), base.final_iterate().expect("completed").clone()),
    ];
    let table = compare_solutions(
        &cand.config.landscape,
        &solutions,
        &[spec.sigma],
        &cloud,
        derive_seed(seed, &[name_tag(&spec.name)]),
        Alternative::Greater,
    )?;
    let outcome = ComparisonOutcome {
        name: spec.name.clone(),
        candidate: solutions[0].0.clone(),
        baseline: solutions[1].0.clone(),
        table,
    };

    let (a, b) = (outcome.candidate_report(), outcome.baseline_report());
    let mut csv = format!("perturbation_index,{},{}\n", outcome.candidate, outcome.baseline);
    for (i, (x, y)) in a.perturbed_performances.iter().zip(&b.perturbed_performances).enumerate() {
        let _ = writeln!(csv, "{i},{},{}", fmt_real(*x), fmt_real(*y));
    }
    write_file(&dir.join(format!("{}.csv", spec.name)), &csv)?;
    let summary = serde_json::json!({
        "name": spec.name,
        "sigma": spec.sigma,
        "candidate": { "run_id": outcome.candidate, "report": serde_json::from_str::<serde_json::Value>(&a.summary_json(&cloud)).expect("valid json") },
        "baseline": { "run_id": outcome.baseline, "report": serde_json::from_str::<serde_json::Value>(&b.summary_json(&cloud)).expect("valid json") },
        "mann_whitney": outcome.test(),
    });
    write_file(
        &dir.join(format!("{}.json", spec.name)),
        &(serde_json::to_string_pretty(&summary).expect("plain values serialize") + "\n"),
    )?;
    Ok(outcome)
}

// Checklist builders. A missing or failed run fails every line that needs it.

type Lookup<'a> = dyn Fn(&str) -> Option<&'a RunArtifacts> + 'a;

fn completed<'a>(get: &Lookup<'a>, id: &str) -> std::result::Result<&'a RunArtifacts, String> {
    match get(id) {
        None => Err(format!("run `{id}` missing")),
        Some(r) => match &r.status {
            RunStatus::Completed => Ok(r),
            RunStatus::Failed { cause } => Err(format!("run `{id}` failed: {cause}")),
        },
    }
}

fn final_point<'a>(get: &Lookup<'a>, id: &str) -> std::result::Result<&'a [f64], String> {
    Ok(completed(get, id)?.final_iterate().expect("completed").as_slice())
}

fn check(criterion: u8, claim: &str, eval: impl FnOnce() -> std::result::Result<(bool, String), String>) -> CheckLine {
    let (passed, detail) = eval().unwrap_or_else(|e| (false, e));
    CheckLine {
        criterion,
        claim: claim.to_string(),
        passed,
        detail,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    crate::landscapes::distance(a, b)
}

fn landscape<'a>(get: &Lookup<'a>, id: &str) -> std::result::Result<&'a Landscape, String> {
    get(id).map(|r| &r.config.landscape).ok_or_else(|| format!("run `{id}` missing"))
}

fn donut_checks<'a>(get: &Lookup<'a>) -> Vec<CheckLine> {
    let ids = ["donut_es_sigma_0.16", "donut_es_sigma_0.04", "donut_es_sigma_0.002"];
    let donut = |id| -> std::result::Result<_, String> {
        landscape(get, id)?
            .as_donut()
            .cloned()
            .ok_or_else(|| format!("run `{id}` is not on a donut"))
    };
    let d = |id| -> std::result::Result<f64, String> { Ok(dist(final_point(get, id)?, &donut(id)?.center)) };
    vec![
        check(1, "sigma 0.16 final mean within 0.05 of the hole center", || {
            let v = d(ids[0])?;
            Ok((v < 0.05, format!("distance {v:.6}")))
        }),
        check(1, "final distance to the center strictly increases over sigma 0.16, 0.04, 0.002", || {
            let v = [d(ids[0])?, d(ids[1])?, d(ids[2])?];
            Ok((v[0] < v[1] && v[1] < v[2], format!("distances {:.6}, {:.6}, {:.6}", v[0], v[1], v[2])))
        }),
        check(1, "sigma 0.002 final mean within 0.02 of the hole-radius circle", || {
            let off = (d(ids[2])? - donut(ids[2])?.hole_radius).abs();
            Ok((off <= 0.02, format!("off the circle by {off:.6}")))
        }),
        check(1, "sigma 0.002 final mean within 0.05 of the FD final point", || {
            let v = dist(final_point(get, ids[2])?, final_point(get, "donut_fd")?);
            Ok((v <= 0.05, format!("distance {v:.6}")))
        }),
        check(
            2,
            "sigma 0.16 final mean: expected fitness exceeds fitness at the mean by 10x the quadrature tolerance",
            || {
                let run = completed(get, ids[0])?;
                let f = run.final_fitness().expect("completed");
                let j = run.final_expected_fitness.ok_or("no expected fitness recorded")?;
                let bound = 10.0 * QUADRATURE_TOLERANCE * donut(ids[0])?.amplitude;
                Ok((j - f >= bound, format!("J - f = {:.6}, bound {bound}", j - f)))
            },
        ),
        check(2, "sigma 0.16 final mean: fitness at the mean below 0.01 amplitude", || {
            let f = completed(get, ids[0])?.final_fitness().expect("completed");
            let a = donut(ids[0])?.amplitude;
            Ok((f < 0.01 * a, format!("f = {f:.6}")))
        }),
    ]
}

fn narrowing_path_checks<'a>(get: &Lookup<'a>) -> Vec<CheckLine> {
    let x = |id| -> std::result::Result<f64, String> { Ok(final_point(get, id)?[0]) };
    vec![
        check(3, "final mean x ordered: sigma 0.12 < sigma 0.04 < sigma 0.0005 <= FD", || {
            let v = [
                x("narrowing_path_es_sigma_0.12")?,
                x("narrowing_path_es_sigma_0.04")?,
                x("narrowing_path_es_sigma_0.0005")?,
                x("narrowing_path_fd")?,
            ];
            Ok((
                v[0] < v[1] && v[1] < v[2] && v[2] <= v[3],
                format!("x = {:.6}, {:.6}, {:.6}, {:.6}", v[0], v[1], v[2], v[3]),
            ))
        }),
        check(3, "FD final x at least 0.95", || {
            let v = x("narrowing_path_fd")?;
            Ok((v >= 0.95, format!("x = {v:.6}")))
        }),
    ]
}

fn fleeting_peaks_checks<'a>(get: &Lookup<'a>) -> Vec<CheckLine> {
    let fp = |id| -> std::result::Result<_, String> {
        landscape(get, id)?
            .as_fleeting_peaks()
            .cloned()
            .ok_or_else(|| format!("run `{id}` is not on fleeting peaks"))
    };
    let near_first = |id: &'static str| {
        move || -> std::result::Result<(bool, String), String> {
            let p = fp(id)?;
            let first = p.bump_positions.first().ok_or("landscape has no bumps")?;
            let v = dist(final_point(get, id)?, first);
            Ok((v <= 2.0 * p.bump_width, format!("distance {v:.6}, bound {}", 2.0 * p.bump_width)))
        }
    };
    vec![
        check(4, "sigma 0.16 final mean within goal_width of the goal", || {
            let id = "fleeting_peaks_es_sigma_0.16";
            let p = fp(id)?;
            let v = dist(final_point(get, id)?, &p.goal_center);
            Ok((v <= p.goal_width, format!("distance {v:.6}")))
        }),
        check(
            4,
            "sigma 0.002 final mean within 2 bump widths of the first bump",
            near_first("fleeting_peaks_es_sigma_0.002"),
        ),
        check(4, "FD final point within 2 bump widths of the first bump", near_first("fleeting_peaks_fd")),
        check(4, "sigma 0.048 final mean has moved past the first bump", || {
            let id = "fleeting_peaks_es_sigma_0.048";
            let p = fp(id)?;
            let first = p.bump_positions.first().ok_or("landscape has no bumps")?;
            let z = final_point(get, id)?;
            let v = dist(z, first);
            Ok((
                v > 2.0 * p.bump_width && z[0] > first[0],
                format!("x = {:.6}, distance to first bump {v:.6}", z[0]),
            ))
        }),
    ]
}

fn gap_params<'a>(get: &Lookup<'a>, id: &str) -> std::result::Result<crate::landscapes::GapParams, String> {
    landscape(get, id)?
        .as_gap()
        .cloned()
        .ok_or_else(|| format!("run `{id}` is not on a gap landscape"))
}

fn fd_epsilon(run: &RunArtifacts) -> std::result::Result<f64, String> {
    match &run.config.optimizer {
        OptimizerConfig::Fd(c) => Ok(c.epsilon),
        other => Err(format!("run `{}` is `{}`, not fd", run.config.run_id, other.kind())),
    }
}

fn gap_checks<'a>(get: &Lookup<'a>) -> Vec<CheckLine> {
    let es = "gradient_gap_es_sigma_0.18";
    vec![
        check(5, "gap: ES sigma 0.18 final mean x beyond gap_right", || {
            let g = gap_params(get, es)?;
            let x = final_point(get, es)?[0];
            Ok((x > g.gap_right, format!("x = {x:.6}, gap_right {}", g.gap_right)))
        }),
        check(5, "gap: vanilla FD final x at most gap_left + epsilon", || {
            let id = "gradient_gap_fd";
            let g = gap_params(get, id)?;
            let eps = fd_epsilon(completed(get, id)?)?;
            let x = final_point(get, id)?[0];
            Ok((x <= g.gap_left + eps, format!("x = {x:.6}, bound {}", g.gap_left + eps)))
        }),
        check(5, "gap: FD momentum 0.9 final x beyond gap_right", || {
            let id = "gradient_gap_fd_momentum";
            let g = gap_params(get, id)?;
            let x = final_point(get, id)?[0];
            Ok((x > g.gap_right, format!("x = {x:.6}")))
        }),
        check(
            2,
            "gap: ES sigma 0.18 has an iterate with zero fitness at the mean and positive expected fitness",
            || {
                let curve = completed(get, es)?.divergence.as_ref().ok_or("no divergence curve recorded")?;
                let hit = curve.iter().find(|p| p.fitness_at_mean == 0.0 && p.expected_fitness > 0.0);
                Ok(match hit {
                    Some(p) => (true, format!("iteration {}, J = {:.6}", p.iteration, p.expected_fitness)),
                    None => (false, "no such iterate".to_string()),
                })
            },
        ),
    ]
}

fn cliff_checks<'a>(get: &Lookup<'a>) -> Vec<CheckLine> {
    vec![
        check(5, "cliff: ES sigma 0.18 final mean x below gap_left + sigma", || {
            let id = "gradient_cliff_es_sigma_0.18";
            let g = gap_params(get, id)?;
            let run = completed(get, id)?;
            let sigma = run.config.optimizer.es_sigma().ok_or("not an es run")?;
            let x = final_point(get, id)?[0];
            Ok((x < g.gap_left + sigma, format!("x = {x:.6}, bound {}", g.gap_left + sigma)))
        }),
        check(5, "cliff: FD momentum 0.9 final x beyond gap_left with zero fitness", || {
            let id = "gradient_cliff_fd_momentum";
            let g = gap_params(get, id)?;
            let run = completed(get, id)?;
            let x = final_point(get, id)?[0];
            let f = run.final_fitness().expect("completed");
            Ok((x > g.gap_left && f == 0.0, format!("x = {x:.6}, f = {f}")))
        }),
    ]
}

fn comparison_checks(spec: &ComparisonSpec, o: &ComparisonOutcome) -> Vec<CheckLine> {
    let (a, b) = (o.candidate_report(), o.baseline_report());
    let mut lines = vec![check(9, &format!("{}: base performances within {}", spec.name, spec.base_match_tolerance), || {
        let (x, y) = (a.base_performance, b.base_performance);
        let gap = (x - y).abs();
        let scale = x.abs().max(y.abs());
        Ok((gap <= spec.base_match_tolerance * scale, format!("{} = {x:.6}, {} = {y:.6}", o.candidate, o.baseline)))
    })];
    if spec.require_score_order {
        lines.push(check(9, &format!("{}: candidate robustness score exceeds baseline", spec.name), || {
            match (a.robustness_score, b.robustness_score) {
                (Some(x), Some(y)) => Ok((x > y, format!("scores {x:.6} vs {y:.6}"))),
                _ => Ok((
                    false,
                    format!(
                        "score undefined (base performances {} and {})",
                        a.base_performance, b.base_performance
                    ),
                )),
            }
        }));
    }
    lines.push(check(9, &format!("{}: one-sided Mann-Whitney p < 0.01, candidate greater", spec.name), || {
        let t = o.test();
        Ok((t.p_value < 0.01, format!("U = {}, p = {:.3e}", t.u_statistic, t.p_value)))
    }));
    lines
}

// ---------------------------------------------------------------------------
// Standalone robustness studies
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSolution {
    pub name: String,
    pub point: ParamVector,
}

fn default_alternative() -> Alternative {
    Alternative::TwoSided
}

/// Perturbation clouds and pairwise tests for explicit solutions on one landscape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessStudyConfig {
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    pub sigmas: Vec<f64>,
    #[serde(default = "default_alternative")]
    pub alternative: Alternative,
    #[serde(default)]
    pub cloud: CloudConfig,
    pub landscape: Landscape,
    pub solutions: Vec<NamedSolution>,
}

impl RobustnessStudyConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = strip_manifest(parse_table(text)?);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        validate_run_id("run_id", &self.run_id)?;
        validate_seed(self.seed)?;
        if self.parallelism == Some(0) {
            return Err(Error::invalid("parallelism", "must be at least 1"));
        }
        if self.sigmas.is_empty() {
            return Err(Error::invalid("sigmas", "must not be empty"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid("sigmas", format!("must be positive, got {s}")));
        }
        self.cloud.validate().map_err(|e| prefixed("cloud", e))?;
        if self.solutions.len() < 2 {
            return Err(Error::invalid("solutions", "need at least two"));
        }
        let mut names = BTreeSet::new();
        for s in &self.solutions {
            validate_run_id("solutions.name", &s.name)?;
            if !names.insert(&s.name) {
                return Err(Error::invalid("solutions.name", format!("`{}` is repeated", s.name)));
            }
            if s.point.dim() != self.landscape.dim() {
                return Err(Error::invalid(
                    "solutions.point",
                    format!("`{}` has dimension {}, expected {}", s.name, s.point.dim(), self.landscape.dim()),
                ));
            }
        }
        Ok(())
    }
}

/// Writes `<run_id>/manifest.toml`, `comparison.json` and one
/// `robustness_<name>_<k>.csv` per solution and sigma index.
pub fn run_robustness_study(cfg: &RobustnessStudyConfig, out_root: &Path) -> Result<ComparisonTable> {
    cfg.validate()?;
    let dir = out_root.join(&cfg.run_id);
    create_dir(&dir)?;
    let solutions: Vec<(String, ParamVector)> = cfg
        .solutions
        .iter()
        .map(|s| (s.name.clone(), s.point.clone()))
        .collect();
    let table = compare_solutions(&cfg.landscape, &solutions, &cfg.sigmas, &cfg.cloud, cfg.seed, cfg.alternative)?;
    for (name, row) in table.names.iter().zip(&table.reports) {
        for (k, report) in row.iter().enumerate() {
            write_file(&dir.join(format!("robustness_{name}_{k}.csv")), &report.to_csv())?;
        }
    }
    let summary = serde_json::json!({
        "sigmas": table.sigmas,
        "reports": table.names.iter().zip(&table.reports).map(|(name, row)| serde_json::json!({
            "name": name,
            "by_sigma": row.iter().map(|r| serde_json::json!({
                "base_performance": r.base_performance,
                "quartiles": r.quartiles,
                "robustness_score": r.robustness_score,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "pairwise": table.pairwise,
    });
    write_file(
        &dir.join("comparison.json"),
        &(serde_json::to_string_pretty(&summary).expect("plain values serialize") + "\n"),
    )?;
    let mut root = Table::new();
    root.insert("config".into(), Value::try_from(cfg).expect("config serializes"));
    let mut status = Table::new();
    status.insert("state".into(), "completed".into());
    root.insert("status".into(), Value::Table(status));
    write_file(&dir.join("manifest.toml"), &toml::to_string(&root).expect("manifest serializes"))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ES_DONUT: &str = r#"
run_id = "t"
seed = 5
start = [0.15, 0.5]
outputs = ["trajectory", "divergence", "robustness", "grid"]

[landscape]
name = "donut"

[optimizer]
kind = "es"
sigma = 0.04
population = 8
learning_rate = 0.002
iterations = 20

[grid]
resolution = 11

[divergence]
nodes_per_dim = 11

[robustness]
count = 50
base_trials = 3
"#;

    fn set(o: &str) -> Vec<String> {
        vec![o.to_string()]
    }

    fn field_of(e: Error) -> String {
        e.field().map(str::to_string).unwrap_or_else(|| format!("<{e}>"))
    }

    fn read(dir: &Path, name: &str) -> String {
        fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn overrides_address_nested_keys_and_parse_values() {
        let mut t = Table::new();
        apply_override(&mut t, "optimizer.sigma=0.5").unwrap();
        apply_override(&mut t, "a.b.c = 3").unwrap();
        apply_override(&mut t, "name=donut").unwrap();
        apply_override(&mut t, "start=[1.0, 2]").unwrap();
        assert_eq!(t["optimizer"]["sigma"], Value::Float(0.5));
        assert_eq!(t["a"]["b"]["c"], Value::Integer(3));
        assert_eq!(t["name"], Value::String("donut".into()));
        assert_eq!(t["start"].as_array().unwrap().len(), 2);
        assert_eq!(field_of(apply_override(&mut t, "name.x=1").unwrap_err()), "name.x");
        assert_eq!(field_of(apply_override(&mut t, "novalue").unwrap_err()), "set");
        assert!(apply_override(&mut t, "a..b=1").is_err());
    }

    #[test]
    fn validation_names_the_offending_field() {
        let cases = [
            ("start=[0.1, 0.2, 0.3]", "start"),
            ("optimizer.sigma=-1.0", "optimizer.sigma"),
            ("optimizer.population=7", "optimizer.population"),
            ("divergence.nodes_per_dim=10", "divergence.nodes_per_dim"),
            ("grid.resolution=1", "grid.resolution"),
            ("robustness.count=0", "robustness.count"),
            ("run_id=../x", "run_id"),
            ("parallelism=0", "parallelism"),
        ];
        let big = ExperimentConfig {
            seed: u64::MAX,
            ..ExperimentConfig::from_toml(ES_DONUT, &[]).unwrap()
        };
        assert_eq!(field_of(big.validate().unwrap_err()), "seed");
        for (o, field) in cases {
            assert_eq!(field_of(ExperimentConfig::from_toml(ES_DONUT, &set(o)).unwrap_err()), field, "{o}");
        }
        let fd = [
            "optimizer={ kind = \"fd\", epsilon = 1e-7, learning_rate = 0.01, iterations = 5 }".to_string(),
        ];
        assert_eq!(field_of(ExperimentConfig::from_toml(ES_DONUT, &fd).unwrap_err()), "outputs");
        let fd_robust = [fd[0].clone(), "outputs=[\"robustness\"]".to_string()];
        assert_eq!(
            field_of(ExperimentConfig::from_toml(ES_DONUT, &fd_robust).unwrap_err()),
            "robustness.sigma"
        );
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        for o in ["bogus=1", "optimizer.bogus=1", "landscape.bogus=1", "grid.bogus=1"] {
            let e = ExperimentConfig::from_toml(ES_DONUT, &set(o)).unwrap_err();
            assert!(e.to_string().contains("bogus"), "{o}: {e}");
        }
        let e = ExperimentConfig::from_toml(ES_DONUT, &set("landscape.hole_radius=-1")).unwrap_err();
        assert!(e.to_string().contains("hole_radius"), "{e}");
    }

    #[test]
    fn run_writes_requested_artifacts_and_reproduces_from_manifest() {
        let root = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(ES_DONUT, &[]).unwrap();
        let art = run_experiment(&cfg, root.path()).unwrap();
        assert!(art.status.is_completed());
        assert_eq!(art.records.len(), 21);
        for f in ["manifest.toml", "trajectory.csv", "divergence.csv", "robustness.csv", "robustness.json", "grid.csv"] {
            assert!(art.dir.join(f).is_file(), "{f}");
        }
        assert_eq!(read(&art.dir, "robustness.csv").lines().count(), 51);
        assert_eq!(read(&art.dir, "grid.csv").lines().count(), 1 + 11 * 11);

        let manifest = read(&art.dir, "manifest.toml");
        assert!(manifest.contains("hole_radius"), "manifest lists every landscape parameter");
        let again = ExperimentConfig::from_toml(&manifest, &[]).unwrap();
        assert_eq!(again, cfg);
        let other = tempfile::tempdir().unwrap();
        let art2 = run_experiment(&again, other.path()).unwrap();
        for f in ["trajectory.csv", "divergence.csv", "robustness.csv", "grid.csv", "manifest.toml"] {
            assert_eq!(read(&art.dir, f), read(&art2.dir, f), "{f}");
        }
    }

    #[test]
    fn seed_changes_the_trajectory() {
        let root = tempfile::tempdir().unwrap();
        let a = run_experiment(&ExperimentConfig::from_toml(ES_DONUT, &set("run_id=a")).unwrap(), root.path()).unwrap();
        let b = run_experiment(
            &ExperimentConfig::from_toml(ES_DONUT, &["run_id=b".into(), "seed=6".into()]).unwrap(),
            root.path(),
        )
        .unwrap();
        assert_ne!(read(&a.dir, "trajectory.csv"), read(&b.dir, "trajectory.csv"));
    }

    #[test]
    fn runtime_failure_writes_partial_manifest() {
        let text = r#"
run_id = "boom"
start = [0.7, 0.5]
[landscape]
name = "gradient_gap"
ramp_slope = 1e300
[optimizer]
kind = "fd"
epsilon = 0.01
learning_rate = 1.0
iterations = 10
"#;
        let root = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(text, &[]).unwrap();
        let art = run_experiment(&cfg, root.path()).unwrap();
        let RunStatus::Failed { cause } = &art.status else {
            panic!("expected failure")
        };
        assert!(cause.contains("non-finite"), "{cause}");
        assert_eq!(art.records.len(), 1);
        let manifest = read(&art.dir, "manifest.toml");
        assert!(manifest.contains("state = \"failed\""));
        assert_eq!(read(&art.dir, "trajectory.csv").lines().count(), 2);
        assert_eq!(ExperimentConfig::from_toml(&manifest, &[]).unwrap(), cfg);
    }

    #[test]
    fn out_of_bounds_start_is_a_warning() {
        let root = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml(ES_DONUT, &set("start=[1.5, 0.5]")).unwrap();
        let art = run_experiment(&cfg, root.path()).unwrap();
        assert!(art.status.is_completed());
        assert_eq!(art.warnings.len(), 1);
    }

    fn sweep_text(values: &str, linked: &str) -> String {
        format!("{ES_DONUT}\n[sweep]\naxis = \"optimizer.sigma\"\nvalues = {values}\n{linked}")
    }

    #[test]
    fn sweep_sub_seeds_ignore_value_order() {
        let a = SweepConfig::from_toml(&sweep_text("[0.16, 0.04]", ""), &[]).unwrap();
        let b = SweepConfig::from_toml(&sweep_text("[0.04, 0.16]", ""), &[]).unwrap();
        let (ra, rb) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_sweep(&a, ra.path()).unwrap();
        let sb = run_sweep(&b, rb.path()).unwrap();
        assert_eq!(sa.runs.len(), 2);
        for run in &sa.runs {
            let twin = sb.runs.iter().find(|r| r.config.run_id == run.config.run_id).unwrap();
            assert_eq!(run.config.seed, twin.config.seed);
            assert_eq!(read(&run.dir, "trajectory.csv"), read(&twin.dir, "trajectory.csv"));
        }
        let summary = read(&sa.dir, "sweep_summary.csv");
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "value,run_id,status,x0,x1,final_fitness,final_expected_fitness");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("t__sigma_0.16,completed"));
    }

    #[test]
    fn single_value_sweep_matches_its_materialized_run() {
        let sweep = SweepConfig::from_toml(&sweep_text("[0.04]", ""), &[]).unwrap();
        let root = tempfile::tempdir().unwrap();
        let s = run_sweep(&sweep, root.path()).unwrap();
        let direct_root = tempfile::tempdir().unwrap();
        let direct = run_experiment(&sweep.materialize(0).unwrap(), direct_root.path()).unwrap();
        assert_eq!(read(&s.runs[0].dir, "trajectory.csv"), read(&direct.dir, "trajectory.csv"));
    }

    #[test]
    fn sweep_linked_paths_move_in_lockstep() {
        let text = sweep_text("[0.16, 0.04]", "linked = { \"optimizer.learning_rate\" = [0.02, 0.002], \"optimizer.population\" = [4, 6] }");
        let sweep = SweepConfig::from_toml(&text, &[]).unwrap();
        let c = sweep.materialize(1).unwrap();
        let OptimizerConfig::Es(es) = &c.optimizer else { panic!() };
        assert_eq!((es.sigma, es.learning_rate, es.population), (0.04, 0.002, 6));
    }

    #[test]
    fn sweep_validation() {
        let field = |t: &str| field_of(SweepConfig::from_toml(t, &[]).unwrap_err());
        assert_eq!(field(&sweep_text("[]", "")), "sweep.values");
        assert_eq!(field(&sweep_text("[0.1, 0.1]", "")), "sweep.values");
        assert_eq!(
            field(&sweep_text("[0.1, 0.2]", "linked = { \"optimizer.learning_rate\" = [0.1] }")),
            "sweep.linked.optimizer.learning_rate"
        );
        assert_eq!(field(&sweep_text("[0.1, -0.2]", "")), "optimizer.sigma");
        assert_eq!(field(ES_DONUT), "sweep");
    }

    #[test]
    fn every_shipped_experiment_config_validates() {
        for s in SHIPPED.iter().filter(|s| !s.path.ends_with("comparisons")) {
            let cfg = shipped_config(s.path).unwrap_or_else(|e| panic!("{}: {e}", s.path));
            assert!(cfg.landscape.contains(cfg.start.as_slice()), "{}", s.path);
            if let OptimizerConfig::Es(es) = &cfg.optimizer {
                assert!(es.population <= 64 && es.iterations <= 2000);
            }
        }
        let plan: ComparisonPlan =
            from_table(parse_table(shipped_config_text("robustness_comparison/comparisons").unwrap()).unwrap()).unwrap();
        for c in &plan.comparison {
            shipped_config(&c.candidate).unwrap();
            shipped_config(&c.baseline).unwrap();
        }
        for suite in &FIGURE_SUITES[..5] {
            assert!(!suite_treatments(suite).is_empty());
        }
    }

    #[test]
    fn unknown_suite_or_config_is_a_configuration_error() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(run_figure_suite("nope", root.path(), None), Err(Error::Config(_))));
        assert!(matches!(shipped_config("donut/nope"), Err(Error::Config(_))));
    }

    #[test]
    fn checklist_lines_fail_on_missing_runs() {
        let get = |_: &str| -> Option<&RunArtifacts> { None };
        for lines in [donut_checks(&get), narrowing_path_checks(&get), fleeting_peaks_checks(&get), gap_checks(&get), cliff_checks(&get)] {
            assert!(!lines.is_empty());
            assert!(lines.iter().all(|l| !l.passed && l.detail.contains("missing")));
        }
    }

    #[test]
    fn robustness_study_writes_clouds_and_tests() {
        let text = r#"
run_id = "study"
seed = 3
sigmas = [0.05, 0.2]
alternative = "greater"
[cloud]
count = 40
[landscape]
name = "gaussian_peak"
[[solutions]]
name = "peak"
point = [0.5, 0.5]
[[solutions]]
name = "flank"
point = [0.7, 0.5]
"#;
        let cfg = RobustnessStudyConfig::from_toml(text, &[]).unwrap();
        let root = tempfile::tempdir().unwrap();
        let table = run_robustness_study(&cfg, root.path()).unwrap();
        assert_eq!(table.pairwise.len(), 2);
        let dir = root.path().join("study");
        for f in ["robustness_peak_0.csv", "robustness_flank_1.csv", "comparison.json", "manifest.toml"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let again = RobustnessStudyConfig::from_toml(&read(&dir, "manifest.toml"), &[]).unwrap();
        assert_eq!(again, cfg);
        let bad = RobustnessStudyConfig::from_toml(text, &set("solutions=[]")).unwrap_err();
        assert_eq!(field_of(bad), "solutions");
    }
}
