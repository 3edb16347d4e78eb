//! Experiment configuration and the subcommands of the `hcmm` binary.
//!
//! A run is described by one JSON [`ExperimentConfig`]. Command-line flags
//! override the matching config fields, and config fields override the
//! built-in defaults. Every subcommand returns its output as text; CSV output
//! starts with a `# schema=1` comment line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codes::{CodeFamily, PointKind};
use crate::cuboid::{Axis, Dims, GridSpec};
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_bicc, build_hhcc, build_mlcc, build_nonh, build_rmlcc, BaseCode, HierarchyMode,
    HierarchySpec, Layout, RecoveryProfile,
};
use crate::matrix::{read_binary, read_csv, Matrix};
use crate::profile_opt::{
    expected_finishing_nonh, optimize_fast_network, optimize_fast_worker, ProfileSolution, Regime,
    RegimeParams,
};
use crate::runtime::{run_job, sweep, DecodeMode, RunConfig, RunReport, SweepRow, Verify};
use crate::stoch_sim::{fit_shifted_exponential, monte_carlo, Scheme, SimRow, TimingModel};

/// Version tag written as the first line of every CSV.
pub const CSV_SCHEMA: &str = "# schema=1";

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("field `{field}`: {msg}"))
}

fn default_dims() -> Dims {
    Dims::cube(1000)
}

fn default_trials() -> usize {
    10_000
}

fn default_timing() -> TimingModel {
    TimingModel::new(1e-6, 1e-7, 1e-8, 1e-9)
}

fn default_repeats() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub family: CodeFamily,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepAxes {
    #[serde(default)]
    pub levels: Vec<usize>,
    /// BICC subtask counts; `levels` is used when empty.
    #[serde(default)]
    pub p: Vec<usize>,
    /// Worker counts; the top-level `workers` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub straggler_prob: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimScheme {
    Nonh,
    Bicc,
    Mlcc,
    Rmlcc,
}

fn default_schemes() -> Vec<SimScheme> {
    vec![
        SimScheme::Nonh,
        SimScheme::Bicc,
        SimScheme::Mlcc,
        SimScheme::Rmlcc,
    ]
}

/// One row of the profile table: a timing model and the regime to optimize for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCase {
    pub label: String,
    pub timing: TimingModel,
    /// Chosen from the larger closed-form term when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
}

/// A scheme to execute on real matrices. Unset fields fall back to the top-level config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobConfig {
    #[serde(default)]
    pub label: String,
    pub mode: HierarchyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<CodeFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_level: Option<Vec<usize>>,
    #[serde(default)]
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunOptions {
    #[serde(default)]
    pub straggler_prob: f64,
    #[serde(default)]
    pub decode_mode: DecodeMode,
    #[serde(default)]
    pub cancel_on_complete: bool,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub verify: Verify,
    /// Where `run` writes the completion log CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_log: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            straggler_prob: 0.0,
            decode_mode: DecodeMode::Serial,
            cancel_on_complete: false,
            repeats: 1,
            verify: Verify::Reference,
            completion_log: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TradeoffConfig {
    /// Subtasks per worker shared by every HHCC point.
    pub p: usize,
    /// Numbers of HHCC levels; each must divide `p`.
    pub levels_h: Vec<usize>,
    /// Optional uncoded reference point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncoded: Option<UncodedPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncodedPoint {
    pub grid: GridSpec,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    #[serde(default = "default_dims")]
    pub dims: Dims,
    pub workers: usize,
    pub base: BaseSpec,
    #[serde(default)]
    pub points: PointKind,
    #[serde(default = "default_timing")]
    pub timing: TimingModel,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SimScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    /// Levels for `optimize-profile`; the first of `sweep.levels` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default)]
    pub profile_cases: Vec<ProfileCase>,
    #[serde(default)]
    pub jobs: Vec<JobConfig>,
    #[serde(default)]
    pub run: RunOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tradeoff: Option<TradeoffConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn base_code(&self) -> BaseCode {
        BaseCode::new(self.base.family, self.base.grid, self.dims).with_points(self.points)
    }

    /// Checks every field that does not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate().map_err(|e| field_err("dims", e))?;
        if self.workers == 0 {
            return Err(field_err("workers", "must be at least 1"));
        }
        self.base
            .grid
            .validate_for(&self.dims)
            .map_err(|e| field_err("base.grid", e))?;
        let r = self
            .base_code()
            .threshold(self.workers)
            .map_err(|e| field_err("base", e))?;
        if r > self.workers {
            return Err(field_err(
                "workers",
                format!(
                    "{} workers cannot meet recovery threshold {r}",
                    self.workers
                ),
            ));
        }
        self.timing.validate().map_err(|e| field_err("timing", e))?;
        if self.trials == 0 {
            return Err(field_err("trials", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(field_err("threads", "must be at least 1"));
        }
        if self.sweep.levels.contains(&0) {
            return Err(field_err("sweep.levels", "entries must be at least 1"));
        }
        if self.sweep.p.contains(&0) {
            return Err(field_err("sweep.p", "entries must be at least 1"));
        }
        for &n in self.sweep.n.iter().flatten() {
            let r = self
                .base_code()
                .threshold(n)
                .map_err(|e| field_err("sweep.n", e))?;
            if n < r {
                return Err(field_err(
                    "sweep.n",
                    format!("{n} workers cannot meet threshold {r}"),
                ));
            }
        }
        let probs = self
            .sweep
            .straggler_prob
            .iter()
            .chain(std::iter::once(&self.run.straggler_prob));
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(field_err(
                    "stragglerProb",
                    format!("{p} is not a probability"),
                ));
            }
        }
        if self.run.repeats == 0 {
            return Err(field_err("run.repeats", "must be at least 1"));
        }
        for c in &self.profile_cases {
            c.timing
                .validate()
                .map_err(|e| field_err(&format!("profileCases[{}].timing", c.label), e))?;
        }
        Ok(())
    }

    fn params(&self, timing: &TimingModel, n: usize, levels: usize) -> Result<RegimeParams> {
        let r = self.base_code().threshold(n)?;
        let p = RegimeParams {
            n,
            r,
            l: levels,
            mu_comp: timing.mu_comp,
            alpha_comp: timing.alpha_comp,
            mu_comm: timing.mu_comm,
            alpha_comm: timing.alpha_comm,
        };
        p.validate().map_err(|e| field_err("timing", e))?;
        Ok(p)
    }

    /// The regime whose closed-form non-hierarchical term is larger.
    fn auto_regime(&self, params: &RegimeParams) -> Regime {
        let fnw = expected_finishing_nonh(params, &self.dims, &self.base.grid, Regime::FastNetwork);
        let fw = expected_finishing_nonh(params, &self.dims, &self.base.grid, Regime::FastWorker);
        if fnw >= fw {
            Regime::FastNetwork
        } else {
            Regime::FastWorker
        }
    }

    fn solve_profile(
        &self,
        timing: &TimingModel,
        n: usize,
        levels: usize,
        regime: Option<Regime>,
    ) -> Result<(Regime, ProfileSolution)> {
        let params = self.params(timing, n, levels)?;
        let regime = regime.unwrap_or_else(|| self.auto_regime(&params));
        let sol = match regime {
            Regime::FastNetwork => optimize_fast_network(&params)?,
            Regime::FastWorker => optimize_fast_worker(&params)?,
        };
        Ok((regime, sol))
    }

    fn job_spec(&self, job: &JobConfig, seed: u64) -> Result<HierarchySpec> {
        let base = BaseCode::new(
            job.family.unwrap_or(self.base.family),
            job.grid.unwrap_or(self.base.grid),
            self.dims,
        )
        .with_points(self.points);
        let n = job.workers.unwrap_or(self.workers);
        let r = base.threshold(n)?;
        match job.mode {
            HierarchyMode::NonH => build_nonh(&base, n),
            HierarchyMode::Bicc => build_bicc(&base, job.p.unwrap_or(1), n),
            HierarchyMode::Mlcc => {
                let profile = job
                    .profile
                    .clone()
                    .ok_or_else(|| field_err("jobs.profile", "MLCC needs a profile"))?;
                build_mlcc(
                    &base,
                    profile.len(),
                    &RecoveryProfile::new(profile),
                    job.layout,
                    n,
                )
            }
            HierarchyMode::Rmlcc => {
                let levels = job
                    .levels
                    .ok_or_else(|| field_err("jobs.levels", "RMLCC needs a level count"))?;
                let mlcc = build_mlcc(
                    &base,
                    levels,
                    &RecoveryProfile::uniform(r, levels),
                    job.layout,
                    n,
                )?;
                build_rmlcc(&mlcc, seed)
            }
            HierarchyMode::Hhcc => {
                let per_level = job.per_level.clone().ok_or_else(|| {
                    field_err("jobs.perLevel", "HHCC needs per-level subtask counts")
                })?;
                let profile = job
                    .profile
                    .clone()
                    .unwrap_or_else(|| per_level.iter().map(|p| p * r).collect());
                build_hhcc(
                    &base,
                    &per_level,
                    &RecoveryProfile::new(profile),
                    job.layout,
                    n,
                )
            }
        }
    }

    fn run_config(&self, job: &JobConfig, idx: usize, straggler_prob: f64) -> Result<RunConfig> {
        let spec = self.job_spec(job, self.seed).map_err(|e| match e {
            Error::InvalidInput(m) => Error::InvalidInput(format!("jobs[{idx}]: {m}")),
            other => other,
        })?;
        let mut cfg = RunConfig::new(spec, straggler_prob, self.seed);
        cfg.decode_mode = self.run.decode_mode;
        cfg.cancel_on_complete = self.run.cancel_on_complete;
        cfg.verify = self.run.verify;
        cfg.label = if job.label.is_empty() {
            format!("{:?}", job.mode).to_lowercase()
        } else {
            job.label.clone()
        };
        Ok(cfg)
    }
}

/// Process exit code for an error: 2 for invalid configuration, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

fn write_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    let body = String::from_utf8(wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    Ok(format!("{CSV_SCHEMA}\n{body}"))
}

const SIM_HEADER: [&str; 13] = [
    "scheme", "L", "P", "N", "R", "profile", "mean", "stddev", "p50", "p95", "p99", "trials",
    "seed",
];

#[derive(Serialize)]
struct ProfileRow {
    case: String,
    regime: Regime,
    level: usize,
    threshold: usize,
}

/// Monte Carlo over the sweep, one row per `(scheme, L)`; or, when
/// `profileCases` is set, the optimized per-level thresholds of every case.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    if !cfg.profile_cases.is_empty() {
        let levels = cfg
            .levels
            .or(cfg.sweep.levels.first().copied())
            .unwrap_or(1);
        let mut rows = Vec::new();
        for case in &cfg.profile_cases {
            let (regime, sol) =
                cfg.solve_profile(&case.timing, cfg.workers, levels, case.regime)?;
            for (l, &r) in sol.profile.thresholds.iter().enumerate() {
                rows.push(ProfileRow {
                    case: case.label.clone(),
                    regime,
                    level: l + 1,
                    threshold: r,
                });
            }
        }
        return write_csv(&["case", "regime", "level", "threshold"], &rows);
    }
    let ns = cfg.sweep.n.clone().unwrap_or_else(|| vec![cfg.workers]);
    let ps = if cfg.sweep.p.is_empty() {
        &cfg.sweep.levels
    } else {
        &cfg.sweep.p
    };
    let g = cfg.base.grid;
    let mut rows = Vec::new();
    for &n in &ns {
        let r = cfg.base_code().threshold(n)?;
        let mut run = |scheme: Scheme| -> Result<()> {
            let s = monte_carlo(&scheme, &cfg.dims, &g, n, &cfg.timing, cfg.trials, cfg.seed)?;
            rows.push(SimRow::new(&scheme, n, r, &s));
            Ok(())
        };
        if cfg.schemes.contains(&SimScheme::Nonh) {
            run(Scheme::Nonh { r })?;
        }
        if cfg.schemes.contains(&SimScheme::Bicc) {
            for &p in ps {
                run(Scheme::Bicc {
                    p,
                    r: p * r,
                    axis: Axis::Z,
                })?;
            }
        }
        for &l in &cfg.sweep.levels {
            if cfg.schemes.contains(&SimScheme::Mlcc) {
                let (_, sol) = cfg.solve_profile(&cfg.timing, n, l, cfg.regime)?;
                run(Scheme::Mlcc {
                    profile: sol.profile,
                    axis: None,
                })?;
            }
            if cfg.schemes.contains(&SimScheme::Rmlcc) {
                run(Scheme::Rmlcc {
                    r,
                    levels: l,
                    axis: None,
                })?;
            }
        }
    }
    write_csv(&SIM_HEADER, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProfileOutput {
    pub regime: Regime,
    pub n: usize,
    pub r: usize,
    pub l: usize,
    pub profile: Vec<usize>,
    pub objective: f64,
    pub relaxed_objective: f64,
}

/// Optimized recovery profile as JSON.
pub fn cmd_optimize_profile(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let levels = cfg
        .levels
        .or(cfg.sweep.levels.first().copied())
        .unwrap_or(1);
    let (regime, sol) = cfg.solve_profile(&cfg.timing, cfg.workers, levels, cfg.regime)?;
    let out = ProfileOutput {
        regime,
        n: cfg.workers,
        r: cfg.base_code().threshold(cfg.workers)?,
        l: levels,
        profile: sol.profile.thresholds,
        objective: sol.objective,
        relaxed_objective: sol.relaxed_objective,
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

/// Where `run` gets its operands.
#[derive(Clone, Debug, Default)]
pub struct Operands {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let f = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(f),
        _ => read_binary(std::io::BufReader::new(f)),
    }
}

/// Executes the first job once and returns its report as JSON.
pub fn cmd_run(cfg: &ExperimentConfig, operands: &Operands) -> Result<String> {
    cfg.validate()?;
    let job = cfg
        .jobs
        .first()
        .ok_or_else(|| field_err("jobs", "run needs at least one job"))?;
    let rc = cfg.run_config(job, 0, cfg.run.straggler_prob)?;
    let (a, b) = match (&operands.a, &operands.b) {
        (Some(pa), Some(pb)) => (read_matrix(pa)?, read_matrix(pb)?),
        (None, None) => crate::runtime::random_operands(&rc.scheme, cfg.seed),
        _ => {
            return Err(Error::InvalidInput(
                "give both --a and --b, or neither".into(),
            ))
        }
    };
    let report: RunReport = run_job(&rc, &a, &b)?;
    if let Some(path) = &cfg.run.completion_log {
        report.write_completion_csv(std::fs::File::create(path)?)?;
    }
    report.to_json()
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepCsvRow {
    label: String,
    straggler_prob: f64,
    repeats: usize,
    encode: f64,
    distribute: f64,
    compute: f64,
    compute_stddev: f64,
    aggregate: f64,
    decode: f64,
    max_rel_error: Option<f64>,
}

fn sweep_rows(cfg: &ExperimentConfig, jobs: &[(JobConfig, usize)]) -> Result<Vec<(SweepRow, f64)>> {
    let probs = if cfg.sweep.straggler_prob.is_empty() {
        vec![cfg.run.straggler_prob]
    } else {
        cfg.sweep.straggler_prob.clone()
    };
    let mut out = Vec::new();
    for &p in &probs {
        let configs = jobs
            .iter()
            .map(|(j, i)| cfg.run_config(j, *i, p))
            .collect::<Result<Vec<_>>>()?;
        for (row, _) in sweep(&configs, cfg.run.repeats)? {
            out.push((row, p));
        }
    }
    Ok(out)
}

/// Mean phase times of every job over `run.repeats`, per straggler probability.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let jobs: Vec<(JobConfig, usize)> = cfg.jobs.iter().cloned().zip(0..).collect();
    let rows: Vec<SweepCsvRow> = sweep_rows(cfg, &jobs)?
        .into_iter()
        .map(|(r, p)| SweepCsvRow {
            label: r.label,
            straggler_prob: p,
            repeats: r.repeats,
            encode: r.encode,
            distribute: r.distribute,
            compute: r.compute,
            compute_stddev: r.compute_stddev,
            aggregate: r.aggregate,
            decode: r.decode,
            max_rel_error: r.max_rel_error,
        })
        .collect();
    write_csv(
        &[
            "label",
            "stragglerProb",
            "repeats",
            "encode",
            "distribute",
            "compute",
            "computeStddev",
            "aggregate",
            "decode",
            "maxRelError",
        ],
        &rows,
    )
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TradeoffRow {
    label: String,
    levels_h: usize,
    p: usize,
    compute: f64,
    decode: f64,
}

/// Decode time against compute time for HHCC at a fixed `P` and varying level count.
pub fn cmd_tradeoff(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let t = cfg
        .tradeoff
        .as_ref()
        .ok_or_else(|| field_err("tradeoff", "missing"))?;
    let mut jobs = Vec::new();
    let mut meta = Vec::new();
    if let Some(u) = t.uncoded {
        jobs.push((
            JobConfig {
                label: "uncoded".into(),
                mode: HierarchyMode::NonH,
                family: Some(CodeFamily::Uncoded),
                grid: Some(u.grid),
                workers: Some(u.workers),
                p: None,
                levels: None,
                profile: None,
                per_level: None,
                layout: Layout::Auto,
            },
            jobs.len(),
        ));
        meta.push((0, 1));
    }
    for &lh in &t.levels_h {
        if lh == 0 || t.p % lh != 0 {
            return Err(field_err(
                "tradeoff.levelsH",
                format!("{lh} does not divide P = {}", t.p),
            ));
        }
        jobs.push((
            JobConfig {
                label: format!("hhcc-L{lh}"),
                mode: HierarchyMode::Hhcc,
                family: None,
                grid: None,
                workers: None,
                p: None,
                levels: None,
                profile: None,
                per_level: Some(vec![t.p / lh; lh]),
                layout: Layout::Auto,
            },
            jobs.len(),
        ));
        meta.push((lh, t.p));
    }
    let rows = sweep_rows(cfg, &jobs)?;
    let per_prob = jobs.len();
    let out: Vec<TradeoffRow> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (r, _))| {
            let (levels_h, p) = meta[i % per_prob];
            TradeoffRow {
                label: r.label,
                levels_h,
                p,
                compute: r.compute,
                decode: r.decode,
            }
        })
        .collect();
    write_csv(&["label", "levelsH", "P", "compute", "decode"], &out)
}

/// Reads one sample per line (first column), skipping `#` comments and a non-numeric header.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(',').next().unwrap_or("").trim();
        match first.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(Error::InvalidInput(format!(
                    "{}:{}: not a number: {first:?}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Shifted-exponential fit of a samples file as JSON.
pub fn cmd_fit(samples: &Path) -> Result<String> {
    let xs = read_samples(samples)?;
    let fit = fit_shifted_exponential(&xs)?;
    Ok(serde_json::to_string_pretty(&fit)?)
}

#[derive(Debug, Parser)]
#[command(
    name = "hcmm",
    version,
    about = "Hierarchical coded matrix multiplication experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["chebyshev", "integer"])]
    pub points: Option<String>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo finishing times over the configured sweep.
    Simulate,
    /// Optimized recovery profile.
    OptimizeProfile,
    /// One end-to-end run of the first job.
    Run {
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
    },
    /// Repeated runs of every job.
    Sweep,
    /// Decode/compute tradeoff of HHCC level counts.
    Tradeoff,
    /// Shifted-exponential fit of a samples file.
    Fit {
        /// One sample per line; the config's `samples` when absent.
        samples: Option<PathBuf>,
    },
}

impl GlobalArgs {
    /// Applies flag overrides to a loaded config.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.points {
            cfg.points = p.parse()?;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(())
    }
}

fn execute(cli: &Cli) -> Result<(String, Option<PathBuf>)> {
    if let Command::Fit { samples } = &cli.command {
        let from_cfg = match &cli.global.config {
            Some(p) => ExperimentConfig::load(p)?.samples,
            None => None,
        };
        let path = samples
            .clone()
            .or(from_cfg)
            .ok_or_else(|| Error::InvalidInput("fit needs a samples file".into()))?;
        return Ok((cmd_fit(&path)?, cli.global.out.clone()));
    }
    let path = cli
        .global
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cli.global.apply(&mut cfg)?;
    if let Some(t) = cfg.threads {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let text = match &cli.command {
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::OptimizeProfile => cmd_optimize_profile(&cfg)?,
        Command::Run { a, b } => cmd_run(
            &cfg,
            &Operands {
                a: a.clone(),
                b: b.clone(),
            },
        )?,
        Command::Sweep => cmd_sweep(&cfg)?,
        Command::Tradeoff => cmd_tradeoff(&cfg)?,
        Command::Fit { .. } => unreachable!("handled above"),
    };
    Ok((text, cfg.out))
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok((text, out)) => {
            let res = match out {
                Some(p) => std::fs::write(&p, text.as_bytes()).map_err(Error::from),
                None => {
                    use std::io::Write;
                    let mut stdout = std::io::stdout().lock();
                    match writeln!(stdout, "{}", text.trim_end()) {
                        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                        r => r.map_err(Error::from),
                    }
                }
            };
            match res {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    3
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
