//! Experiment configs, repetition scheduling, result files and aggregation.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/config.toml        resolved config
//! <out>/runs/<tag>.csv     per-run trace
//! <out>/runs/<tag>.json    per-run metadata sidecar
//! <out>/aggregate.csv      one row per condition
//! <out>/aggregate.json     the same plus metadata
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dqn::{train_dqn, DqnConfig, DqnRun, Encoding, EpisodeRecord};
use crate::error::{Error, Result};
use crate::layers::{InitRange, NetworkSpec};
use crate::maze::generate_maze;
use crate::regression::{run_repetition, RegressionTrace, RegressionTraining, TargetKind};

/// Divisor used for every reported standard deviation.
pub const STD_DIVISOR: &str = "N";
/// Width of the timestep bins used for RL learning curves.
pub const CURVE_BIN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Maze,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Maze => "maze",
        })
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSection {
    pub kind: TargetKind,
    pub complexity: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for RegressionSection {
    fn default() -> Self {
        let t = RegressionTraining::default();
        Self {
            kind: TargetKind::Gaussian,
            complexity: vec![5],
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            train_size: 7500,
            test_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSection {
    pub levels: Vec<u8>,
    pub encoding: Encoding,
    pub total_timesteps: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_start: usize,
    pub sync_period: usize,
    #[serde(default = "yes")]
    pub timeout_is_terminal: bool,
    #[serde(default = "yes")]
    pub random_warmup: bool,
}

impl Default for MazeSection {
    fn default() -> Self {
        let d = DqnConfig::default();
        Self {
            levels: vec![1],
            encoding: Encoding::Coordinates,
            total_timesteps: 150_000,
            learning_rate: d.learning_rate,
            gamma: d.gamma,
            batch_size: d.batch_size,
            buffer_capacity: d.buffer_capacity,
            learning_start: d.learning_start,
            sync_period: d.sync_period,
            timeout_is_terminal: d.timeout_is_terminal,
            random_warmup: d.random_warmup,
        }
    }
}

impl MazeSection {
    fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            learning_start: self.learning_start,
            sync_period: self.sync_period,
            total_timesteps: self.total_timesteps,
            timeout_is_terminal: self.timeout_is_terminal,
            random_warmup: self.random_warmup,
        }
    }
}

/// One compared network. A bare `urbf` descriptor takes its width from
/// the `nnpi` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    pub layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nnpi: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_range: Option<[f64; 2]>,
    #[serde(default = "yes")]
    pub learn_spreads: bool,
}

impl ArchitectureSection {
    fn sweeps_nnpi(&self) -> bool {
        self.layers.iter().any(|l| l.trim() == "urbf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Excluded from the fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism. Excluded from
    /// the fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maze: Option<MazeSection>,
    pub architectures: BTreeMap<String, ArchitectureSection>,
}

/// One cell of the sweep grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub architecture: String,
    /// Target complexity `M` (regression) or maze level.
    pub complexity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnpi: Option<usize>,
}

impl Condition {
    /// File-name friendly identifier.
    pub fn tag(&self) -> String {
        let arch: String = self
            .architecture
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        match self.nnpi {
            Some(n) => format!("{arch}_c{}_nnpi{n}", self.complexity),
            None => format!("{arch}_c{}", self.complexity),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reduced budgets: 5 repetitions, 300 regression epochs, 50,000 RL
    /// timesteps.
    pub fn apply_desk_scale(&mut self) {
        self.repetitions = 5;
        if let Some(r) = &mut self.regression {
            r.epochs = 300;
        }
        if let Some(m) = &mut self.maze {
            m.total_timesteps = 50_000;
        }
    }

    /// SHA-256 of the result-relevant part of the config.
    pub fn fingerprint(&self) -> Result<String> {
        let canonical = Self {
            output_dir: None,
            workers: None,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn input_output(&self) -> (usize, usize) {
        match self.task {
            Task::Regression => (2, 1),
            Task::Maze => (
                self.maze.as_ref().map_or(Encoding::Coordinates, |m| m.encoding).width(),
                crate::dqn::NUM_ACTIONS,
            ),
        }
    }

    fn default_range(&self) -> [f64; 2] {
        match self.task {
            Task::Regression => [-5.0, 5.0],
            Task::Maze => [0.0, 8.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if self.architectures.is_empty() {
            return bad("at least one [architectures.<name>] section is required".into());
        }
        match self.task {
            Task::Regression => {
                let Some(r) = &self.regression else {
                    return bad("task = \"regression\" needs a [regression] section".into());
                };
                if self.maze.is_some() {
                    return bad("[maze] section given for a regression task".into());
                }
                if r.complexity.is_empty() || r.epochs == 0 || r.batch_size == 0 || r.train_size == 0 || r.test_size == 0 {
                    return bad("regression complexity, epochs, batch_size and split sizes must be non-empty/positive".into());
                }
                if !(r.learning_rate >= 0.0) {
                    return bad("regression learning_rate must be non-negative".into());
                }
            }
            Task::Maze => {
                let Some(m) = &self.maze else {
                    return bad("task = \"maze\" needs a [maze] section".into());
                };
                if self.regression.is_some() {
                    return bad("[regression] section given for a maze task".into());
                }
                if m.levels.is_empty() {
                    return bad("maze levels must be non-empty".into());
                }
                for &l in &m.levels {
                    crate::maze::pits_for_level(l)?;
                }
                m.dqn_config().validate()?;
            }
        }
        for (name, arch) in &self.architectures {
            if arch.sweeps_nnpi() && arch.nnpi.is_empty() {
                return bad(format!("architecture `{name}` has a bare `urbf` layer but no nnpi values"));
            }
            if !arch.sweeps_nnpi() && !arch.nnpi.is_empty() {
                return bad(format!("architecture `{name}` lists nnpi values but has no bare `urbf` layer"));
            }
        }
        for c in self.conditions() {
            self.network_spec(&c)?;
        }
        Ok(())
    }

    /// Sweep grid in a fixed order: architecture, complexity, nnpi.
    pub fn conditions(&self) -> Vec<Condition> {
        let complexities: Vec<usize> = match (&self.regression, &self.maze) {
            (Some(r), _) if self.task == Task::Regression => r.complexity.clone(),
            (_, Some(m)) => m.levels.iter().map(|&l| l as usize).collect(),
            _ => Vec::new(),
        };
        let mut out = Vec::new();
        for (name, arch) in &self.architectures {
            for &c in &complexities {
                if arch.nnpi.is_empty() {
                    out.push(Condition {
                        architecture: name.clone(),
                        complexity: c,
                        nnpi: None,
                    });
                }
                for &n in &arch.nnpi {
                    out.push(Condition {
                        architecture: name.clone(),
                        complexity: c,
                        nnpi: Some(n),
                    });
                }
            }
        }
        out
    }

    pub fn network_spec(&self, c: &Condition) -> Result<NetworkSpec> {
        let arch = self
            .architectures
            .get(&c.architecture)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{}`", c.architecture)))?;
        let [lo, hi] = arch.init_range.unwrap_or_else(|| self.default_range());
        let (inputs, outputs) = self.input_output();
        NetworkSpec::from_descriptors(inputs, &arch.layers, outputs, InitRange::new(lo, hi)?, arch.learn_spreads, c.nnpi)
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("architecture `{}`: {m}", c.architecture)),
                Error::Contract(m) => Error::Config(format!("architecture `{}`: {m}", c.architecture)),
                other => other,
            })
    }

    /// Seed of repetition `rep`.
    pub fn seed_for(&self, rep: usize) -> u64 {
        self.base_seed + rep as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trace {
    Regression(RegressionTrace),
    Maze { episodes: Vec<EpisodeRecord> },
}

impl Trace {
    fn empty(task: Task) -> Self {
        match task {
            Task::Regression => Trace::Regression(RegressionTrace::default()),
            Task::Maze => Trace::Maze { episodes: Vec::new() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fingerprint: String,
    pub task: Task,
    pub condition: Condition,
    pub repetition: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    /// Final test MSE (regression) or average reward per timestep (maze).
    pub final_metric: Option<f64>,
    /// Maze only: mean return over the last tenth of episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_return_mean: Option<f64>,
    pub param_count: usize,
    pub duration_secs: f64,
    #[serde(skip)]
    pub trace: Option<Trace>,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn metric_name(&self) -> &'static str {
        metric_name(self.task)
    }

    fn file_stem(&self) -> String {
        format!("{}_rep{:03}", self.condition.tag(), self.repetition)
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "test_mse",
        Task::Maze => "avg_reward_per_timestep",
    }
}

struct Outcome {
    metric: f64,
    final_return: Option<f64>,
    trace: Trace,
}

fn run_one(cfg: &ExperimentConfig, spec: &NetworkSpec, c: &Condition, seed: u64) -> Result<Outcome> {
    match cfg.task {
        Task::Regression => {
            let r = cfg.regression.as_ref().ok_or_else(|| Error::Config("missing [regression]".into()))?;
            let training = RegressionTraining {
                epochs: r.epochs,
                batch_size: r.batch_size,
                learning_rate: r.learning_rate,
            };
            let (_, trace) = run_repetition(spec, r.kind, c.complexity, (r.train_size, r.test_size), &training, seed)?;
            Ok(Outcome {
                metric: trace.final_test_mse().unwrap_or(f64::NAN),
                final_return: None,
                trace: Trace::Regression(trace),
            })
        }
        Task::Maze => {
            let m = cfg.maze.as_ref().ok_or_else(|| Error::Config("missing [maze]".into()))?;
            let level = u8::try_from(c.complexity).map_err(|_| Error::Config("maze level out of range".into()))?;
            let maze = generate_maze(level, seed)?;
            let (_, run): (_, DqnRun) = train_dqn(&maze, m.encoding, spec.clone(), &m.dqn_config(), seed)?;
            Ok(Outcome {
                metric: run.average_reward_per_timestep(),
                final_return: run.final_return_mean(),
                trace: Trace::Maze { episodes: run.episodes },
            })
        }
    }
}

/// Runs every (condition, repetition) pair on a bounded worker pool and
/// persists each result as it completes. A failing repetition is recorded
/// and does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunResult>> {
    run_experiment_with(cfg, out_dir, |_| {})
}

/// As [`run_experiment`], calling `on_done` after each persisted result.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    on_done: impl Fn(&RunResult) + Sync,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint()?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;

    let mut jobs = Vec::new();
    for c in cfg.conditions() {
        let spec = cfg.network_spec(&c)?;
        for rep in 0..cfg.repetitions {
            jobs.push((c.clone(), spec.clone(), rep));
        }
    }
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;

    let results: Vec<Result<RunResult>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(c, spec, rep)| {
                let seed = cfg.seed_for(rep);
                let started = Instant::now();
                let outcome = run_one(cfg, &spec, &c, seed);
                let duration_secs = started.elapsed().as_secs_f64();
                let mut result = RunResult {
                    fingerprint: fingerprint.clone(),
                    task: cfg.task,
                    condition: c,
                    repetition: rep,
                    seed,
                    status: RunStatus::Ok,
                    final_metric: None,
                    final_return_mean: None,
                    param_count: spec.param_count(),
                    duration_secs,
                    trace: Some(Trace::empty(cfg.task)),
                };
                match outcome {
                    Ok(o) => {
                        result.final_metric = Some(o.metric);
                        result.final_return_mean = o.final_return;
                        result.trace = Some(o.trace);
                    }
                    Err(e) => result.status = RunStatus::Failed { message: e.to_string() },
                }
                persist(&runs_dir, &result)?;
                on_done(&result);
                Ok(result)
            })
            .collect()
    });
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| (&a.condition, a.repetition).cmp(&(&b.condition, b.repetition)));
    Ok(results)
}

/// Writes `<stem>.csv` (trace) and `<stem>.json` (everything else).
pub fn persist(runs_dir: &Path, r: &RunResult) -> Result<()> {
    let stem = r.file_stem();
    let mut w = csv::Writer::from_path(runs_dir.join(format!("{stem}.csv")))?;
    match r.trace.as_ref().unwrap_or(&Trace::empty(r.task)) {
        Trace::Regression(t) => {
            w.write_record(["epoch", "train_mse", "test_mse"])?;
            for (i, (a, b)) in t.train_mse.iter().zip(&t.test_mse).enumerate() {
                w.write_record([(i + 1).to_string(), a.to_string(), b.to_string()])?;
            }
        }
        Trace::Maze { episodes } => {
            w.write_record(["episode_index", "end_timestep", "return", "epsilon"])?;
            for e in episodes {
                w.write_record([e.index.to_string(), e.end_timestep.to_string(), e.ret.to_string(), e.epsilon.to_string()])?;
            }
        }
    }
    w.flush()?;
    std::fs::write(runs_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(r)?)?;
    Ok(())
}

fn load_trace(task: Task, path: &Path) -> Result<Trace> {
    let mut rd = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Contract(format!("{}: bad number `{s}`", path.display())))
    };
    let mut trace = Trace::empty(task);
    for rec in rd.records() {
        let rec = rec?;
        match &mut trace {
            Trace::Regression(t) => {
                t.train_mse.push(parse(&rec[1])?);
                t.test_mse.push(parse(&rec[2])?);
            }
            Trace::Maze { episodes } => episodes.push(EpisodeRecord {
                index: parse(&rec[0])? as usize,
                end_timestep: parse(&rec[1])? as usize,
                ret: parse(&rec[2])?,
                epsilon: parse(&rec[3])?,
            }),
        }
    }
    Ok(trace)
}

/// Loads every persisted result under `<dir>/runs`, traces included,
/// ordered by condition and repetition.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let runs = dir.join("runs");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&runs)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let mut r: RunResult = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            r.trace = Some(load_trace(r.task, &path.with_extension("csv"))?);
            out.push(r);
        }
    }
    out.sort_by(|a, b| (&a.condition, a.repetition).cmp(&(&b.condition, b.repetition)));
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: Task,
    pub condition: Condition,
    pub param_count: usize,
    /// Successful runs.
    pub count: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Per-condition summaries of the final metric, in condition order.
pub fn aggregate(results: &[RunResult]) -> Result<Vec<Aggregate>> {
    if results.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<(Task, Condition), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.task, r.condition.clone())).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((task, condition), runs)| {
            let ok: Vec<&RunResult> = runs.iter().copied().filter(|r| r.is_ok()).collect();
            let finals: Vec<f64> = ok.iter().filter_map(|r| r.final_metric).collect();
            let stats = mean_std(&finals);
            Aggregate {
                task,
                param_count: runs[0].param_count,
                count: finals.len(),
                failed: runs.len() - ok.len(),
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
                curve: curve(&ok),
                condition,
            }
        })
        .collect())
}

fn curve(runs: &[&RunResult]) -> Vec<CurvePoint> {
    // x -> per-run values
    let mut points: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in runs {
        match &r.trace {
            Some(Trace::Regression(t)) => {
                for (i, v) in t.test_mse.iter().enumerate() {
                    points.entry(i + 1).or_default().push(*v);
                }
            }
            Some(Trace::Maze { episodes }) => {
                let mut bins: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
                for e in episodes {
                    let end = e.end_timestep.div_ceil(CURVE_BIN) * CURVE_BIN;
                    let b = bins.entry(end).or_default();
                    b.0 += e.ret;
                    b.1 += 1;
                }
                for (x, (sum, n)) in bins {
                    points.entry(x).or_default().push(sum / n as f64);
                }
            }
            None => {}
        }
    }
    points
        .into_iter()
        .filter_map(|(x, v)| {
            mean_std(&v).map(|(mean, std)| CurvePoint {
                x: x as f64,
                mean,
                std,
                count: v.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateFile {
    pub std_divisor: String,
    pub fingerprints: Vec<String>,
    pub aggregates: Vec<Aggregate>,
}

/// Writes `aggregate.csv` and `aggregate.json` into `dir`.
pub fn write_aggregates(dir: &Path, results: &[RunResult], aggs: &[Aggregate]) -> Result<()> {
    let mut fingerprints: Vec<String> = results.iter().map(|r| r.fingerprint.clone()).collect();
    fingerprints.sort();
    fingerprints.dedup();
    let file = AggregateFile {
        std_divisor: STD_DIVISOR.into(),
        fingerprints,
        aggregates: aggs.to_vec(),
    };
    std::fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(&file)?)?;
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    w.write_record(["task", "architecture", "complexity", "nnpi", "param_count", "metric", "mean", "std", "count", "failed"])?;
    for a in aggs {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        w.write_record([
            a.task.to_string(),
            a.condition.architecture.clone(),
            a.condition.complexity.to_string(),
            a.condition.nnpi.map_or(String::new(), |n| n.to_string()),
            a.param_count.to_string(),
            metric_name(a.task).to_string(),
            opt(a.mean),
            opt(a.std),
            a.count.to_string(),
            a.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotAxis {
    Complexity,
    Nnpi,
    ParamCount,
    Timestep,
}

impl std::str::FromStr for PlotAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complexity" => Ok(PlotAxis::Complexity),
            "nnpi" => Ok(PlotAxis::Nnpi),
            "param_count" | "params" => Ok(PlotAxis::ParamCount),
            "timestep" | "epoch" => Ok(PlotAxis::Timestep),
            other => Err(Error::Config(format!("unknown plot axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    /// Architecture plus any condition fields not on the axis.
    pub series: String,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// One row per (series, axis value), sorted by series then axis value.
/// Aggregates without a value on the axis (e.g. an MLP on the nnpi axis)
/// are skipped.
pub fn emit_plot_data(aggs: &[Aggregate], axis: PlotAxis) -> Result<Vec<PlotRow>> {
    let first = aggs.first().ok_or_else(|| Error::Config("no aggregates to plot".into()))?;
    if aggs.iter().any(|a| a.task != first.task) {
        return Err(Error::Config("cannot mix regression and maze results in one plot".into()));
    }
    let mut rows = Vec::new();
    for a in aggs {
        let c = &a.condition;
        let mut series = c.architecture.clone();
        if axis != PlotAxis::Complexity {
            series.push_str(&format!("[c={}]", c.complexity));
        }
        if axis != PlotAxis::Nnpi {
            if let Some(n) = c.nnpi {
                series.push_str(&format!("[nnpi={n}]"));
            }
        }
        let point = |x: f64| {
            a.mean.zip(a.std).map(|(mean, std)| PlotRow {
                series: series.clone(),
                x,
                mean,
                std,
                count: a.count,
            })
        };
        match axis {
            PlotAxis::Complexity => rows.extend(point(c.complexity as f64)),
            PlotAxis::Nnpi => rows.extend(c.nnpi.and_then(|n| point(n as f64))),
            PlotAxis::ParamCount => rows.extend(point(a.param_count as f64)),
            PlotAxis::Timestep => rows.extend(a.curve.iter().map(|p| PlotRow {
                series: series.clone(),
                x: p.x,
                mean: p.mean,
                std: p.std,
                count: p.count,
            })),
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no aggregate has a value on the {axis:?} axis")));
    }
    rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    Ok(rows)
}

pub fn write_plot_data(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
