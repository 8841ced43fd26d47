//! Experiment harness: config resolution, per-seed pipelines and output
//! files.
//!
//! Configs are JSON documents referenced by name. A name resolves to
//! `<root>/<kind>/<name>.json` when a config root is given and the file
//! exists, otherwise to the copy bundled into the library. Names ending in
//! `.json` are read as paths.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cubature::{run_filter_timed, FilterBelief};
use crate::error::{Error, Result};
use crate::machine::{GeneratorModel, MachineParams};
use crate::metrics::{compare_reports, evaluate, evaluate_means, Comparison, MetricReport, Variable};
use crate::noise::{NoiseFamily, NoiseProfile};
use crate::robust::HuberConfig;
use crate::scenario::{generate_truth, load_dataset, save_dataset, synthesize_measurements, Dataset, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigKind {
    Params,
    Scenario,
    Noise,
    Experiment,
}

impl ConfigKind {
    pub fn dir(self) -> &'static str {
        match self {
            ConfigKind::Params => "params",
            ConfigKind::Scenario => "scenarios",
            ConfigKind::Noise => "noise",
            ConfigKind::Experiment => "experiments",
        }
    }

    fn label(self) -> &'static str {
        match self {
            ConfigKind::Params => "params",
            ConfigKind::Scenario => "scenario",
            ConfigKind::Noise => "noise profile",
            ConfigKind::Experiment => "experiment",
        }
    }
}

const BUNDLED: &[(ConfigKind, &str, &str)] = &[
    (ConfigKind::Params, "g2-ieee9-like", include_str!("../configs/params/g2-ieee9-like.json")),
    (ConfigKind::Params, "g1-ne68-like", include_str!("../configs/params/g1-ne68-like.json")),
    (ConfigKind::Scenario, "ieee9-like", include_str!("../configs/scenarios/ieee9-like.json")),
    (ConfigKind::Scenario, "ne68-like", include_str!("../configs/scenarios/ne68-like.json")),
    (ConfigKind::Noise, "gaussian", include_str!("../configs/noise/gaussian.json")),
    (ConfigKind::Noise, "gaussian_biased", include_str!("../configs/noise/gaussian_biased.json")),
    (ConfigKind::Noise, "laplace", include_str!("../configs/noise/laplace.json")),
    (ConfigKind::Noise, "cauchy", include_str!("../configs/noise/cauchy.json")),
    (ConfigKind::Noise, "noiseless", include_str!("../configs/noise/noiseless.json")),
    (ConfigKind::Experiment, "default", include_str!("../configs/experiments/default.json")),
    (ConfigKind::Experiment, "ne68", include_str!("../configs/experiments/ne68.json")),
];

/// Name resolution for config documents.
#[derive(Debug, Clone, Default)]
pub struct ConfigStore {
    root: Option<PathBuf>,
}

impl ConfigStore {
    pub fn bundled() -> Self {
        ConfigStore { root: None }
    }

    pub fn with_root(root: impl Into<PathBuf>) -> Self {
        ConfigStore { root: Some(root.into()) }
    }

    pub fn names(kind: ConfigKind) -> Vec<&'static str> {
        BUNDLED.iter().filter(|b| b.0 == kind).map(|b| b.1).collect()
    }

    pub fn document(&self, kind: ConfigKind, name: &str) -> Result<Value> {
        let text = self.text(kind, name)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn text(&self, kind: ConfigKind, name: &str) -> Result<String> {
        if name.ends_with(".json") {
            return std::fs::read_to_string(name).map_err(|e| Error::io(name, e));
        }
        if let Some(root) = &self.root {
            let path = root.join(kind.dir()).join(format!("{name}.json"));
            if path.is_file() {
                return std::fs::read_to_string(&path).map_err(|e| Error::io(path, e));
            }
        }
        BUNDLED
            .iter()
            .find(|b| b.0 == kind && b.1 == name)
            .map(|b| b.2.to_string())
            .ok_or_else(|| Error::UnknownReference { kind: kind.label(), name: name.to_string() })
    }
}

/// A `dotted.key=value` override. The value is parsed as JSON and falls
/// back to a plain string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: Value,
}

impl Override {
    pub fn parse(text: &str) -> Result<Self> {
        let (key, raw) =
            text.split_once('=').ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(Error::Config(format!("override `{text}` has an empty key segment")));
        }
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        Ok(Override { key: key.to_string(), value })
    }
}

/// Sets `key` (dotted) in `doc`, creating intermediate objects.
pub fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize =
                    part.parse().map_err(|_| Error::Config(format!("`{part}` in `{key}` is not an array index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} in `{key}` is out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{key}` descends into a scalar"))),
        };
    }
    Ok(())
}

/// Overrides whose first segment is `scenario`, `params` or `noise` go to
/// that document; everything else targets the experiment config.
fn split_overrides<'a>(overrides: &'a [Override], prefix: &str) -> Vec<(&'a str, &'a Value)> {
    overrides
        .iter()
        .filter_map(|o| match o.key.split_once('.') {
            Some((head, rest)) if head == prefix => Some((rest, &o.value)),
            _ if prefix.is_empty() && !matches!(o.key.split('.').next(), Some("scenario" | "params" | "noise")) => {
                Some((o.key.as_str(), &o.value))
            }
            _ => None,
        })
        .collect()
}

fn load_with<T: for<'de> Deserialize<'de>>(mut doc: Value, overrides: &[(&str, &Value)]) -> Result<T> {
    for (k, v) in overrides {
        apply_override(&mut doc, k, (*v).clone())?;
    }
    Ok(serde_json::from_value(doc)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ckf,
    Rckf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ckf => "ckf",
            FilterKind::Rckf => "rckf",
        }
    }
}

fn default_filters() -> Vec<FilterKind> {
    vec![FilterKind::Ckf, FilterKind::Rckf]
}

fn default_c() -> f64 {
    crate::robust::DEFAULT_HUBER_C
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_families() -> Vec<NoiseFamily> {
    NoiseFamily::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario_ref: String,
    /// Replaces the scenario's own reference when set.
    #[serde(default)]
    pub params_ref: Option<String>,
    #[serde(default)]
    pub noise_profile_ref: Option<String>,
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterKind>,
    #[serde(default = "default_c")]
    pub huber_c: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Noise families covered by `sweep`.
    #[serde(default = "default_families")]
    pub families: Vec<NoiseFamily>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub timing: bool,
    /// Leading samples excluded from the metrics.
    #[serde(default)]
    pub warmup: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::Config("at least one filter is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("at least one noise family is required".into()));
        }
        HuberConfig::new(self.huber_c)?;
        Ok(())
    }

    pub fn runs(&self, kind: FilterKind) -> bool {
        self.filters.contains(&kind)
    }
}

/// A fully resolved experiment with its noise-free truth trajectory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub params: MachineParams,
    pub profile: NoiseProfile,
    store: ConfigStore,
    overrides: Vec<Override>,
    truth: Dataset,
}

impl Experiment {
    /// Loads an experiment config by name (or path) and resolves its
    /// references.
    pub fn load(store: &ConfigStore, name: &str, overrides: &[Override]) -> Result<Self> {
        let doc = store.document(ConfigKind::Experiment, name)?;
        let config: ExperimentConfig = load_with(doc, &split_overrides(overrides, ""))?;
        Self::from_config(store, config, overrides)
    }

    /// Resolves references of an already parsed config; `overrides` with a
    /// `scenario.`, `params.` or `noise.` prefix are applied to those
    /// documents.
    pub fn from_config(store: &ConfigStore, config: ExperimentConfig, overrides: &[Override]) -> Result<Self> {
        config.validate()?;
        let scenario: Scenario = load_with(
            store.document(ConfigKind::Scenario, &config.scenario_ref)?,
            &split_overrides(overrides, "scenario"),
        )?;
        scenario.validate()?;
        let params_ref = config.params_ref.clone().unwrap_or_else(|| scenario.params_ref.clone());
        let params: MachineParams =
            load_with(store.document(ConfigKind::Params, &params_ref)?, &split_overrides(overrides, "params"))?;
        params.validate()?;
        let profile_ref = config.noise_profile_ref.clone().unwrap_or_else(|| scenario.noise_profile_ref.clone());
        let profile = Self::resolve_profile(store, &profile_ref, overrides)?;
        let truth = generate_truth(&scenario, &params)?;
        Ok(Experiment { config, scenario, params, profile, store: store.clone(), overrides: overrides.to_vec(), truth })
    }

    fn resolve_profile(store: &ConfigStore, name: &str, overrides: &[Override]) -> Result<NoiseProfile> {
        let profile: NoiseProfile =
            load_with(store.document(ConfigKind::Noise, name)?, &split_overrides(overrides, "noise"))?;
        profile.validate()?;
        Ok(profile)
    }

    /// Profile for a noise family, looked up by the family's name.
    pub fn family_profile(&self, family: NoiseFamily) -> Result<NoiseProfile> {
        Self::resolve_profile(&self.store, family.name(), &self.overrides)
    }

    pub fn truth(&self) -> &Dataset {
        &self.truth
    }

    pub fn model(&self) -> GeneratorModel {
        let mut m = GeneratorModel::new(self.params);
        m.step = self.scenario.step;
        m
    }

    pub fn huber(&self) -> HuberConfig {
        HuberConfig { c: self.config.huber_c }
    }

    /// Noisy dataset for `profile` with its seed replaced by `seed`.
    pub fn dataset(&self, profile: &NoiseProfile, seed: u64) -> Result<Dataset> {
        let mut profile = profile.clone();
        profile.seed = seed;
        synthesize_measurements(&self.truth, &profile)
    }

    /// Runs the configured filters over a dataset.
    pub fn filter(&self, ds: &Dataset) -> Result<FilterRuns> {
        let model = self.model();
        let frames = ds.frames()?;
        let init = ds.initial_belief(&self.scenario.filter_init);
        let huber = self.huber();
        let mut runs = FilterRuns::default();
        for kind in &self.config.filters {
            let robust = (*kind == FilterKind::Rckf).then_some(&huber);
            let (beliefs, times) = run_filter_timed(&model, &init, &frames, robust)?;
            let total: Duration = times.iter().sum();
            let timing = Timing { filter: *kind, steps: times.len(), mean_step: total / times.len() as u32 };
            match kind {
                FilterKind::Ckf => runs.ckf = Some(beliefs),
                FilterKind::Rckf => runs.rckf = Some(beliefs),
            }
            runs.timing.push(timing);
        }
        Ok(runs)
    }

    /// Dataset, filter runs and metrics for one seed.
    pub fn run_seed(&self, profile: &NoiseProfile, seed: u64) -> Result<SeedRun> {
        let inner = || -> Result<SeedRun> {
            let dataset = self.dataset(profile, seed)?;
            self.run_dataset(dataset, seed)
        };
        inner().map_err(|e| Error::Seed { seed, source: Box::new(e) })
    }

    /// Filters and scores an existing dataset.
    pub fn run_dataset(&self, dataset: Dataset, seed: u64) -> Result<SeedRun> {
        let runs = self.filter(&dataset)?;
        let warm = self.config.warmup;
        let mut reports = Vec::new();
        if let Some(r) = &runs.ckf {
            reports.push(evaluate("ckf", r, &dataset, warm)?);
        }
        if let Some(r) = &runs.rckf {
            reports.push(evaluate("rckf", r, &dataset, warm)?);
        }
        let comparison = match (reports.first(), reports.get(1)) {
            (Some(a), Some(b)) => Some(compare_reports(a.clone(), b.clone())),
            _ => None,
        };
        Ok(SeedRun { seed, dataset, runs, reports, comparison })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub filter: FilterKind,
    pub steps: usize,
    pub mean_step: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct FilterRuns {
    pub ckf: Option<Vec<FilterBelief>>,
    pub rckf: Option<Vec<FilterBelief>>,
    pub timing: Vec<Timing>,
}

impl FilterRuns {
    pub fn get(&self, kind: FilterKind) -> Option<&Vec<FilterBelief>> {
        match kind {
            FilterKind::Ckf => self.ckf.as_ref(),
            FilterKind::Rckf => self.rckf.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dataset: Dataset,
    pub runs: FilterRuns,
    pub reports: Vec<MetricReport>,
    pub comparison: Option<Comparison>,
}

impl SeedRun {
    pub fn metrics_csv(&self) -> String {
        match &self.comparison {
            Some(c) => c.to_csv(),
            None => {
                let mut out = String::from("filter,variable,metric,value\n");
                for r in &self.reports {
                    r.csv_rows(&mut out);
                }
                out
            }
        }
    }

    /// Writes dataset, traces, metrics and (optionally) timing into `dir`.
    pub fn write(&self, dir: &Path, timing: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_dataset(&self.dataset, dir.join("dataset.csv"))?;
        for kind in [FilterKind::Ckf, FilterKind::Rckf] {
            if let Some(run) = self.runs.get(kind) {
                write_file(&dir.join(format!("trace_{}.csv", kind.name())), &trace_csv(&self.dataset.times, run))?;
            }
        }
        write_file(&dir.join("metrics.csv"), &self.metrics_csv())?;
        if timing {
            write_file(&dir.join("timing.csv"), &timing_csv(&self.runs.timing))?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const TRACE_HEADER: &str = "t,delta,omega,edp,eqp,std_delta,std_omega,std_edp,std_eqp,\
w_delta,w_omega,w_pe,innov_delta,innov_omega,innov_pe";

/// Trace CSV: means, standard deviations, Huber weights and innovations.
pub fn trace_csv(times: &[f64], run: &[FilterBelief]) -> String {
    let mut out = String::with_capacity(run.len() * 300);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (t, b) in times.iter().zip(run) {
        let mut row: Vec<f64> = vec![*t];
        row.extend(b.mean.iter());
        row.extend(b.std_devs());
        match &b.diagnostics {
            Some(d) => {
                row.extend(d.weights.iter());
                row.extend(d.innovation.iter());
            }
            None => row.extend([f64::NAN; 6]),
        }
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Times and state means from a trace CSV.
pub fn parse_trace(text: &str) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Schema("t".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| cols.iter().position(|c| *c == name).ok_or_else(|| Error::Schema(name.to_string()));
    let idx = [find("t")?, find("delta")?, find("omega")?, find("edp")?, find("eqp")?];
    let mut times = Vec::new();
    let mut means = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                column: fields.len().min(cols.len()) + 1,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut v = [0.0; 5];
        for (slot, &c) in v.iter_mut().zip(&idx) {
            *slot = fields[c].trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                column: c + 1,
                message: format!("`{}` is not a number", fields[c]),
            })?;
        }
        times.push(v[0]);
        means.push([v[1], v[2], v[3], v[4]]);
    }
    Ok((times, means))
}

pub fn timing_csv(timing: &[Timing]) -> String {
    let mut out = String::from("filter,steps,mean_step_ms\n");
    for t in timing {
        let _ = writeln!(out, "{},{},{:.6}", t.filter.name(), t.steps, t.mean_step.as_secs_f64() * 1e3);
    }
    out
}

/// Side-by-side comparison of two traces over the same dataset.
pub fn compare_traces(ds: &Dataset, plain: &[[f64; 4]], robust: &[[f64; 4]], warmup: usize) -> Result<Comparison> {
    Ok(compare_reports(evaluate_means("ckf", plain, ds, warmup)?, evaluate_means("rckf", robust, ds, warmup)?))
}

fn check_alignment(ds: &Dataset, times: &[f64], what: &str) -> Result<()> {
    if times.len() != ds.len() {
        return Err(Error::LengthMismatch(format!("{what} has {} rows, dataset has {}", times.len(), ds.len())));
    }
    for (k, (a, b)) in times.iter().zip(&ds.times).enumerate() {
        if (a - b).abs() > 1e-9 {
            return Err(Error::LengthMismatch(format!("{what} time {a} differs from dataset time {b} at row {k}")));
        }
    }
    Ok(())
}

/// Plot data for one variable: truth, measurement and both estimates.
pub fn plot_csv(ds: &Dataset, var: Variable, plain: &[[f64; 4]], robust: &[[f64; 4]]) -> String {
    let i = match var {
        Variable::Delta => 0,
        Variable::Omega => 1,
    };
    let mut out = String::from("t,truth,measured,ckf,rckf\n");
    for k in 0..ds.len() {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            ds.times[k],
            ds.truth[k].to_array()[i],
            ds.measurements[k].to_array()[i],
            plain[k][i],
            robust[k][i]
        );
    }
    out
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub variable: Variable,
    pub metric: &'static str,
    pub ckf: f64,
    pub rckf: f64,
    pub improvement: f64,
}

pub fn comparison_rows(label: &str, c: &Comparison) -> Vec<CompareRow> {
    let mut rows = Vec::new();
    for (metric, get, imp) in [
        ("epsilon1", (|m: &crate::metrics::VariableMetrics| m.epsilon1) as fn(&_) -> f64, &c.improvement_e1),
        ("epsilon2", |m: &crate::metrics::VariableMetrics| m.epsilon2, &c.improvement_e2),
    ] {
        for (vi, var) in Variable::ALL.into_iter().enumerate() {
            rows.push(CompareRow {
                label: label.to_string(),
                variable: var,
                metric,
                ckf: get(&c.plain.get(var)),
                rckf: get(&c.robust.get(var)),
                improvement: imp[vi],
            });
        }
    }
    rows
}

pub fn compare_rows_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("label,metric,variable,ckf,rckf,improvement_percent\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.6}",
            r.label,
            r.metric,
            r.variable.name(),
            r.ckf,
            r.rckf,
            r.improvement
        );
    }
    out
}

pub fn compare_rows_table(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<9} {:<6} {:>12} {:>12} {:>9}",
        "label", "metric", "var", "CKF", "RCKF", "improv.%"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18} {:<9} {:<6} {:>12.6} {:>12.6} {:>9.2}",
            r.label,
            r.metric,
            r.variable.name(),
            r.ckf,
            r.rckf,
            r.improvement
        );
    }
    out
}

/// Compares the CKF and RCKF traces in each run directory and writes plot
/// data next to them. The label of a directory is the noise profile name
/// from the dataset provenance, or the directory name.
pub fn cmd_compare(dirs: &[PathBuf], warmup: usize) -> Result<Vec<CompareRow>> {
    if dirs.is_empty() {
        return Err(Error::Config("compare needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    for dir in dirs {
        let ds = load_dataset(dir.join("dataset.csv"))?;
        let read = |name: &str| -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
            let path = dir.join(name);
            parse_trace(&std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
        };
        let (ta, plain) = read("trace_ckf.csv")?;
        let (tb, robust) = read("trace_rckf.csv")?;
        check_alignment(&ds, &ta, "trace_ckf.csv")?;
        check_alignment(&ds, &tb, "trace_rckf.csv")?;
        let cmp = compare_traces(&ds, &plain, &robust, warmup)?;
        for var in Variable::ALL {
            write_file(&dir.join(format!("plot_{}.csv", var.name())), &plot_csv(&ds, var, &plain, &robust))?;
        }
        let label = ds
            .meta
            .as_ref()
            .and_then(|m| m.profile.as_ref())
            .map(|p| format!("{}/{}", p.name, p.seed))
            .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        rows.extend(comparison_rows(&label, &cmp));
    }
    Ok(rows)
}

/// Writes one dataset per seed under `<out>/<name>/<seed>/dataset.csv`.
pub fn cmd_generate(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>> {
    let base = out.join(&exp.config.name);
    exp.config
        .seeds
        .par_iter()
        .map(|&seed| {
            let ds = exp.dataset(&exp.profile, seed).map_err(|e| Error::Seed { seed, source: Box::new(e) })?;
            let dir = base.join(seed.to_string());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join("dataset.csv");
            save_dataset(&ds, &path)?;
            Ok(path)
        })
        .collect()
}

/// Outcome of `run` or `sweep`: per-seed results plus any per-seed errors.
#[derive(Debug, Default)]
pub struct RunSummary {
    /// `(family label, seed, reports)` in deterministic order.
    pub rows: Vec<(String, u64, Vec<MetricReport>)>,
    pub timing: Vec<(String, u64, Vec<Timing>)>,
    pub failures: Vec<(String, Error)>,
}

impl RunSummary {
    pub fn csv(&self) -> String {
        let mut out = String::from("label,seed,filter,variable,metric,value\n");
        for (label, seed, reports) in &self.rows {
            for r in reports {
                for var in Variable::ALL {
                    let m = r.get(var);
                    let _ =
                        writeln!(out, "{label},{seed},{},{},epsilon1,{:.16e}", r.filter, var.name(), m.epsilon1);
                    let _ =
                        writeln!(out, "{label},{seed},{},{},epsilon2,{:.16e}", r.filter, var.name(), m.epsilon2);
                }
            }
        }
        out
    }

    /// Mean and median of each index per label, filter and variable.
    pub fn aggregate_table(&self) -> String {
        let mut keys: Vec<(String, String)> = Vec::new();
        for (label, _, reports) in &self.rows {
            for r in reports {
                let k = (label.clone(), r.filter.clone());
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<5} {:<6} {:>12} {:>12} {:>12} {:>12}",
            "label", "filt", "var", "eps1 mean", "eps1 median", "eps2 mean", "eps2 median"
        );
        for (label, filter) in keys {
            for var in Variable::ALL {
                let vals: Vec<(f64, f64)> = self
                    .rows
                    .iter()
                    .filter(|r| r.0 == label)
                    .flat_map(|r| r.2.iter())
                    .filter(|r| r.filter == filter)
                    .map(|r| (r.get(var).epsilon1, r.get(var).epsilon2))
                    .collect();
                let e1: Vec<f64> = vals.iter().map(|v| v.0).collect();
                let e2: Vec<f64> = vals.iter().map(|v| v.1).collect();
                let _ = writeln!(
                    out,
                    "{:<16} {:<5} {:<6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    label,
                    filter,
                    var.name(),
                    mean(&e1),
                    median(&e1),
                    mean(&e2),
                    median(&e2)
                );
            }
        }
        out
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn run_jobs(exp: &Experiment, jobs: Vec<(String, NoiseProfile, u64, PathBuf)>, timing: bool) -> RunSummary {
    let results: Vec<_> = jobs
        .into_par_iter()
        .map(|(label, profile, seed, dir)| {
            let res = exp.run_seed(&profile, seed).and_then(|run| {
                run.write(&dir, timing)?;
                Ok(run)
            });
            (label, seed, res)
        })
        .collect();
    let mut summary = RunSummary::default();
    for (label, seed, res) in results {
        match res {
            Ok(run) => {
                summary.timing.push((label.clone(), seed, run.runs.timing.clone()));
                summary.rows.push((label, seed, run.reports));
            }
            Err(e) => summary.failures.push((label, e)),
        }
    }
    summary
}

/// Runs every configured seed with the experiment's noise profile.
/// Failing seeds are collected; the others still produce output.
pub fn cmd_run(exp: &Experiment, out: &Path, timing: bool) -> Result<RunSummary> {
    let base = out.join(&exp.config.name);
    let label = exp.profile.name.clone();
    let jobs = exp
        .config
        .seeds
        .iter()
        .map(|&seed| (label.clone(), exp.profile.clone(), seed, base.join(seed.to_string())))
        .collect();
    let summary = run_jobs(exp, jobs, timing);
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    write_file(&base.join("summary.csv"), &summary.csv())?;
    Ok(summary)
}

/// Every configured noise family × seed, written under
/// `<out>/<name>/<family>/<seed>/`.
pub fn cmd_sweep(exp: &Experiment, out: &Path, timing: bool) -> Result<RunSummary> {
    let base = out.join(&exp.config.name);
    let mut jobs = Vec::new();
    for fam in &exp.config.families {
        let profile = exp.family_profile(*fam)?;
        for &seed in &exp.config.seeds {
            jobs.push((fam.name().to_string(), profile.clone(), seed, base.join(fam.name()).join(seed.to_string())));
        }
    }
    let summary = run_jobs(exp, jobs, timing);
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    write_file(&base.join("summary.csv"), &summary.csv())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(overrides: &[&str]) -> Experiment {
        let mut all = vec!["scenario.duration=3.0".to_string(), "scenario.bad_data.omega=[]".to_string()];
        all.extend(overrides.iter().map(|s| s.to_string()));
        let ov: Vec<Override> = all.iter().map(|s| Override::parse(s).unwrap()).collect();
        Experiment::load(&ConfigStore::bundled(), "default", &ov).unwrap_or_else(|e| panic!("{e}"))
    }

    #[test]
    fn bundled_configs_parse() {
        let store = ConfigStore::bundled();
        for name in ConfigStore::names(ConfigKind::Params) {
            let p: MachineParams = serde_json::from_value(store.document(ConfigKind::Params, name).unwrap()).unwrap();
            p.validate().unwrap();
        }
        for name in ConfigStore::names(ConfigKind::Noise) {
            NoiseProfile::from_json(&store.text(ConfigKind::Noise, name).unwrap()).unwrap();
        }
        for name in ConfigStore::names(ConfigKind::Experiment) {
            Experiment::load(&store, name, &[]).unwrap();
        }
    }

    #[test]
    fn family_profiles_match_constructor() {
        let exp = short(&[]);
        for fam in NoiseFamily::ALL {
            assert_eq!(exp.family_profile(fam).unwrap(), NoiseProfile::family(fam, 1));
        }
    }

    #[test]
    fn unknown_reference_is_named() {
        let store = ConfigStore::bundled();
        let ov = [Override::parse("params_ref=no-such-machine").unwrap()];
        match Experiment::load(&store, "default", &ov) {
            Err(Error::UnknownReference { kind: "params", name }) => assert_eq!(name, "no-such-machine"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn override_parsing() {
        let o = Override::parse("scenario.operating_point.u_t=1.01").unwrap();
        assert_eq!(o.key, "scenario.operating_point.u_t");
        assert_eq!(o.value, serde_json::json!(1.01));
        assert_eq!(Override::parse("name=abc").unwrap().value, serde_json::json!("abc"));
        assert!(Override::parse("novalue").is_err());
        assert!(Override::parse("a..b=1").is_err());

        let mut doc = serde_json::json!({"a": {"b": [1, 2]}});
        apply_override(&mut doc, "a.b.1", serde_json::json!(5)).unwrap();
        apply_override(&mut doc, "a.c.d", serde_json::json!(true)).unwrap();
        assert_eq!(doc, serde_json::json!({"a": {"b": [1, 5], "c": {"d": true}}}));
        assert!(apply_override(&mut doc, "a.b.7", serde_json::json!(0)).is_err());
    }

    #[test]
    fn unknown_config_field_rejected() {
        let store = ConfigStore::bundled();
        let ov = [Override::parse("filtres=[\"ckf\"]").unwrap()];
        assert!(matches!(Experiment::load(&store, "default", &ov), Err(Error::Json(_))));
    }

    #[test]
    fn trace_round_trip() {
        let exp = short(&["seeds=[3]"]);
        let run = exp.run_seed(&exp.profile, 3).unwrap();
        let ckf = run.runs.ckf.as_ref().unwrap();
        let text = trace_csv(&run.dataset.times, ckf);
        let (times, means) = parse_trace(&text).unwrap();
        assert_eq!(times, run.dataset.times);
        for (m, b) in means.iter().zip(ckf) {
            assert_eq!(m.as_slice(), b.mean.as_slice());
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let exp = short(&[]);
        let run = exp.run_seed(&exp.profile, 1).unwrap();
        let means: Vec<[f64; 4]> =
            run.runs.rckf.as_ref().unwrap().iter().map(|b| [b.mean[0], b.mean[1], b.mean[2], b.mean[3]]).collect();
        let c = compare_traces(&run.dataset, &means, &means, 0).unwrap();
        assert_eq!(c.improvement_e1, [0.0, 0.0]);
        assert_eq!(c.improvement_e2, [0.0, 0.0]);
    }

    #[test]
    fn single_filter_config() {
        let exp = short(&["filters=[\"rckf\"]"]);
        let run = exp.run_seed(&exp.profile, 1).unwrap();
        assert!(run.runs.ckf.is_none());
        assert_eq!(run.reports.len(), 1);
        assert!(run.comparison.is_none());
        assert!(run.metrics_csv().lines().count() == 5);
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
        assert!(median(&[]).is_nan());
    }
}
