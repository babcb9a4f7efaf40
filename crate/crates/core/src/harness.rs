//! Experiment configuration, the seeded run matrix, CSV persistence and summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, AgentConfig};
use crate::baselines::{rviq_run, ucrl2_run, GridSpec, RviqConfig, Ucrl2Config};
use crate::env::{make_env, EnvSpec};
use crate::record::{RunFailure, RunTrace};

/// Column order of every run CSV.
pub const CSV_HEADER: [&str; 10] = [
    "run_id",
    "env",
    "algo",
    "seed",
    "t",
    "raw_reward",
    "cum_raw_reward",
    "episode_index",
    "active_cell_count",
    "max_level",
];

pub const MERGED_CSV: &str = "merged.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Zorl,
    Ucrl2,
    Rviq,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Zorl => "zorl",
            Algo::Ucrl2 => "ucrl2",
            Algo::Rviq => "rviq",
        })
    }
}

/// Per-environment overrides of the built-in parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOverride {
    pub noise_std: Option<f64>,
    pub noise_mean: Option<f64>,
    pub initial_state: Option<Vec<f64>>,
}

/// The experiment file: envs × algos × seeds, all with the same horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    pub envs: Vec<String>,
    pub algos: Vec<Algo>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default)]
    pub zorl: AgentConfig,
    #[serde(default)]
    pub ucrl2: Ucrl2Config,
    #[serde(default)]
    pub rviq: RviqConfig,
    #[serde(default)]
    pub env: BTreeMap<String, EnvOverride>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        for list in [
            self.envs.is_empty(),
            self.algos.is_empty(),
            self.seeds.is_empty(),
        ] {
            if list {
                return Err(HarnessError::Config(
                    "envs, algos and seeds must be non-empty".into(),
                ));
            }
        }
        let seeds: BTreeSet<_> = self.seeds.iter().collect();
        if seeds.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        for name in self.env.keys() {
            if !self.envs.contains(name) {
                return Err(HarnessError::Config(format!(
                    "override for unused env `{name}`"
                )));
            }
        }
        for name in &self.envs {
            self.env_spec(name)?;
        }
        for spec in self.runs() {
            self.zorl_config(&spec)
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn env_spec(&self, name: &str) -> Result<EnvSpec, HarnessError> {
        let mut env = make_env(name).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(o) = self.env.get(name) {
            if let Some(std) = o.noise_std {
                if !(std >= 0.0) {
                    return Err(HarnessError::Config(format!(
                        "env.{name}.noise_std must be ≥ 0"
                    )));
                }
                env.noise_std = std;
            }
            if let Some(mean) = o.noise_mean {
                env.noise_mean = mean;
            }
            if let Some(s0) = &o.initial_state {
                if s0.len() != env.state_dims() {
                    return Err(HarnessError::Config(format!(
                        "env.{name}.initial_state needs {} coordinates",
                        env.state_dims()
                    )));
                }
                env.initial_state = s0.clone();
            }
        }
        Ok(env)
    }

    /// Every `(env, algo, seed)` triple, env-major.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for env in &self.envs {
            for &algo in &self.algos {
                for &seed in &self.seeds {
                    out.push(RunSpec {
                        env: env.clone(),
                        algo,
                        seed,
                    });
                }
            }
        }
        out
    }

    fn zorl_config(&self, spec: &RunSpec) -> AgentConfig {
        AgentConfig {
            horizon: self.horizon,
            seed: spec.seed,
            ..self.zorl.clone()
        }
    }

    /// Executes one run of the matrix.
    pub fn execute(&self, spec: &RunSpec) -> Result<RunTrace, RunFailure> {
        let env = self.env_spec(&spec.env).map_err(|e| RunFailure {
            trace: RunTrace::default(),
            error: e.to_string(),
        })?;
        match spec.algo {
            Algo::Zorl => agent::run(&env, &self.zorl_config(spec)),
            Algo::Ucrl2 => {
                let cfg = Ucrl2Config {
                    horizon: self.horizon,
                    seed: spec.seed,
                    ..self.ucrl2.clone()
                };
                ucrl2_run(&env, GridSpec::new(cfg.level, &env), &cfg)
            }
            Algo::Rviq => {
                let cfg = RviqConfig {
                    horizon: self.horizon,
                    seed: spec.seed,
                    ..self.rviq.clone()
                };
                rviq_run(&env, GridSpec::new(cfg.level, &env), &cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub env: String,
    pub algo: Algo,
    pub seed: u64,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.env, self.algo, self.seed)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn rows<'a>(spec: &'a RunSpec, trace: &'a RunTrace) -> impl Iterator<Item = [String; 10]> + 'a {
    let mut cum = 0.0;
    let run_id = spec.run_id();
    trace.steps.iter().map(move |s| {
        cum += s.raw_reward;
        [
            run_id.clone(),
            spec.env.clone(),
            spec.algo.to_string(),
            spec.seed.to_string(),
            s.t.to_string(),
            fmt_num(s.raw_reward),
            fmt_num(cum),
            s.episode.to_string(),
            s.active_cells.to_string(),
            s.max_level.to_string(),
        ]
    })
}

/// Writes one run to `path` in the shared CSV schema.
pub fn write_run_csv(path: &Path, spec: &RunSpec, trace: &RunTrace) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for row in rows(spec, trace) {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    pub trace: RunTrace,
    pub error: Option<String>,
}

impl RunResult {
    pub fn final_cumulative(&self) -> f64 {
        self.trace.cumulative_raw_reward()
    }
}

/// Final cumulative raw reward statistics of one `(env, algo)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub env: String,
    pub algo: String,
    pub runs: usize,
    pub failed: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups `(env, algo, final cumulative reward, failed)` tuples into summary
/// rows, sorted by env then algo.
pub fn summarize_finals(finals: &[(String, String, f64, bool)]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for (env, algo, value, failed) in finals {
        let g = groups.entry((env.clone(), algo.clone())).or_default();
        if *failed {
            g.1 += 1;
        } else {
            g.0.push(*value);
        }
    }
    groups
        .into_iter()
        .map(|((env, algo), (values, failed))| {
            let (mean, std) = mean_std(&values);
            SummaryRow {
                env,
                algo,
                runs: values.len() + failed,
                failed,
                mean,
                std,
            }
        })
        .collect()
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<18} {:<6} {:>4} {:>6} {:>16} {:>12}\n",
        "env", "algo", "runs", "failed", "mean_final", "std_final"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:<6} {:>4} {:>6} {:>16.4} {:>12.4}\n",
            r.env, r.algo, r.runs, r.failed, r.mean, r.std
        ));
    }
    out
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["env", "algo", "runs", "failed", "mean_final", "std_final"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.env.clone(),
            r.algo.clone(),
            r.runs.to_string(),
            r.failed.to_string(),
            fmt_num(r.mean),
            fmt_num(r.std),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub results: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub out_dir: PathBuf,
}

impl MatrixReport {
    pub fn failed(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }
}

pub fn run_csv_path(out_dir: &Path, spec: &RunSpec) -> PathBuf {
    out_dir.join(format!("{}.csv", spec.run_id()))
}

/// Runs the whole matrix on a worker pool, writing one CSV per run, the merged
/// CSV and the summary table into `out_dir`.
pub fn run_matrix(cfg: &RunConfig, out_dir: &Path) -> Result<MatrixReport, HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let specs = cfg.runs();
    let results: Vec<Result<RunResult, HarnessError>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let (trace, error) = match cfg.execute(spec) {
                    Ok(trace) => (trace, None),
                    Err(f) => {
                        log::error!("{}: {}", spec.run_id(), f.error);
                        (f.trace, Some(f.error))
                    }
                };
                write_run_csv(&run_csv_path(out_dir, spec), spec, &trace)?;
                Ok(RunResult {
                    spec: spec.clone(),
                    trace,
                    error,
                })
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let merged = out_dir.join(MERGED_CSV);
    let mut w = csv::Writer::from_path(&merged).map_err(csv_err(&merged))?;
    w.write_record(CSV_HEADER).map_err(csv_err(&merged))?;
    for r in &results {
        for row in rows(&r.spec, &r.trace) {
            w.write_record(&row).map_err(csv_err(&merged))?;
        }
    }
    w.flush().map_err(io_err(&merged))?;

    let finals: Vec<_> = results
        .iter()
        .map(|r| {
            (
                r.spec.env.clone(),
                r.spec.algo.to_string(),
                r.final_cumulative(),
                r.error.is_some(),
            )
        })
        .collect();
    let summary = summarize_finals(&finals);
    write_summary(&out_dir.join(SUMMARY_CSV), &summary)?;
    Ok(MatrixReport {
        results,
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Rebuilds the summary from the CSVs in `dir`: `merged.csv` when present,
/// otherwise every per-run CSV.
pub fn summarize_dir(dir: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let merged = dir.join(MERGED_CSV);
    let files: Vec<PathBuf> = if merged.is_file() {
        vec![merged]
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "csv")
                    && p.file_name().is_some_and(|n| n != SUMMARY_CSV)
            })
            .collect();
        files.sort();
        files
    };
    if files.is_empty() {
        return Err(HarnessError::Config(format!(
            "no run CSVs in {}",
            dir.display()
        )));
    }
    // run_id → (env, algo, last cumulative reward), in first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut last: BTreeMap<String, (String, String, f64)> = BTreeMap::new();
    for path in &files {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = rdr.headers().map_err(csv_err(path))?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(HarnessError::Config(format!(
                "{} does not have the run CSV header",
                path.display()
            )));
        }
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err(path))?;
            let cum: f64 = rec[6].parse().map_err(|_| {
                HarnessError::Config(format!(
                    "{}: bad cum_raw_reward `{}`",
                    path.display(),
                    &rec[6]
                ))
            })?;
            let id = rec[0].to_string();
            if !last.contains_key(&id) {
                order.push(id.clone());
            }
            last.insert(id, (rec[1].to_string(), rec[2].to_string(), cum));
        }
    }
    let finals: Vec<_> = order
        .iter()
        .map(|id| {
            let (env, algo, cum) = &last[id];
            (env.clone(), algo.clone(), *cum, false)
        })
        .collect();
    Ok(summarize_finals(&finals))
}
