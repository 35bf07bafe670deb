//! `urbf` command-line entry point.
//!
//! Exit codes: 0 success, 1 config error, 2 run failure, 3 verification
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use urbf_core::runner::{
    aggregate, emit_plot_data, load_results, run_experiment_with, write_aggregates, write_plot_data, Aggregate,
    ExperimentConfig, PlotAxis, RunResult, Task,
};
use urbf_core::verification::{run_gradcheck, run_verify, VerifySettings};
use urbf_core::Error;

#[derive(Parser)]
#[command(name = "urbf", version, about = "U-RBF layer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; repetition i uses seed + i
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repetitions
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the reduced desk-scale budgets
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Function-regression sweep
    Regress(Common),
    /// Maze DQN sweep
    Maze(Common),
    /// Autodiff gradient checks against finite differences
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random cases per operation kind
        #[arg(long, default_value_t = 16)]
        cases: usize,
    },
    /// Injectivity and interpolation checks of U-RBF layers
    Verify(Common),
    /// Summaries and plot data from stored results
    Aggregate {
        #[command(flatten)]
        common: Common,
        /// Directory holding a previous run (defaults to --out)
        results: Option<PathBuf>,
        /// Plot axes to emit
        #[arg(long, value_delimiter = ',', default_value = "complexity,nnpi,param_count,timestep")]
        axis: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Run(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Regress(c) => sweep(Task::Regression, &c),
        Command::Maze(c) => sweep(Task::Maze, &c),
        Command::Gradcheck { common, cases } => gradcheck(&common, cases),
        Command::Verify(c) => verify(&c),
        Command::Aggregate { common, results, axis } => summarize(&common, results, &axis),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}

fn sweep(task: Task, common: &Common) -> CliResult {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if cfg.task != task {
        return Err(Failure::Config(format!(
            "{} holds a {} config; use `urbf {}`",
            path.display(),
            cfg.task,
            if cfg.task == Task::Maze { "maze" } else { "regress" }
        )));
    }
    if common.desk_scale {
        cfg.apply_desk_scale();
    }
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = common.reps {
        cfg.repetitions = r;
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("results").join(&cfg.name));

    let total = cfg.conditions().len() * cfg.repetitions;
    println!("{}: {} runs -> {}", cfg.name, total, out.display());
    let results = run_experiment_with(&cfg, &out, |r| {
        let status = match (&r.final_metric, r.is_ok()) {
            (Some(m), true) => format!("{} = {m:.6}", r.metric_name()),
            _ => "FAILED".into(),
        };
        println!("  {} rep {} (seed {}): {status} [{:.1}s]", r.condition.tag(), r.repetition, r.seed, r.duration_secs);
    })?;
    let aggs = aggregate(&results)?;
    write_aggregates(&out, &results, &aggs)?;
    print_table(&aggs);
    report_failures(&results)
}

fn report_failures(results: &[RunResult]) -> CliResult {
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| format!("{} rep {}", r.condition.tag(), r.repetition))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} run(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

fn print_table(aggs: &[Aggregate]) {
    println!("{:<28} {:>8} {:>14} {:>14} {:>6}", "condition", "params", "mean", "std (N)", "runs");
    for a in aggs {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!(
            "{:<28} {:>8} {:>14} {:>14} {:>6}",
            a.condition.tag(),
            a.param_count,
            f(a.mean),
            f(a.std),
            a.count
        );
    }
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
    std::fs::write(dir.join(name), text).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))
}

fn gradcheck(common: &Common, cases: usize) -> CliResult {
    if cases == 0 {
        return Err(Failure::Config("--cases must be positive".into()));
    }
    let report = run_gradcheck(common.seed.unwrap_or(0), cases)?;
    println!(
        "gradcheck: {} cases over {} kinds, worst relative error {:.3e} (tolerance {:.0e})",
        report.cases.len(),
        report.kinds().len(),
        report.worst(),
        report.tolerance
    );
    if let Some(dir) = &common.out {
        write_json(dir, "gradcheck.json", &report)?;
    }
    let failures: Vec<String> = report
        .failures()
        .map(|c| format!("{} {:?} (fd {:.2e}, closed form {:?})", c.kind, c.shapes, c.fd_error, c.analytic_error))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failures.join("; ")))
    }
}

fn verify(common: &Common) -> CliResult {
    let mut settings = VerifySettings::default();
    if let Some(r) = common.reps {
        if r == 0 {
            return Err(Failure::Config("--reps must be positive".into()));
        }
        settings.seeds = r;
        settings.required_fits = settings.required_fits.min(r);
    }
    let report = run_verify(&settings, common.seed.unwrap_or(0))?;
    for r in &report.injectivity {
        println!("injectivity K={:<3} {} pairs: {}", r.kernels, r.pairs, if r.passed { "ok" } else { "FAILED" });
    }
    for r in &report.interpolation {
        println!("interpolation seed {}: mse {:.3e} {}", r.seed, r.final_mse, if r.passed { "ok" } else { "FAILED" });
    }
    if let Some(dir) = &common.out {
        write_json(dir, "verify.json", &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "injectivity {}, interpolation {}/{} fits (need {})",
            if report.injectivity_passed() { "ok" } else { "failed" },
            report.fits(),
            report.interpolation.len(),
            report.required_fits
        )))
    }
}

fn summarize(common: &Common, results: Option<PathBuf>, axes: &[String]) -> CliResult {
    let src = results
        .or_else(|| common.out.clone())
        .ok_or_else(|| Failure::Config("give a results directory or --out".into()))?;
    let dest = common.out.clone().unwrap_or_else(|| src.clone());
    let axes: Vec<PlotAxis> = axes.iter().map(|a| a.parse()).collect::<Result<_, Error>>()?;
    let runs = load_results(&src).map_err(|e| Failure::Config(format!("{}: {e}", src.display())))?;
    let aggs = aggregate(&runs)?;
    std::fs::create_dir_all(&dest).map_err(|e| Failure::Run(e.to_string()))?;
    write_aggregates(&dest, &runs, &aggs)?;
    print_table(&aggs);
    for axis in axes {
        // Axes without data (e.g. nnpi for an MLP-only run) are skipped.
        match emit_plot_data(&aggs, axis) {
            Ok(rows) => {
                let name = format!("plot_{}.csv", format!("{axis:?}").to_lowercase());
                write_plot_data(&dest.join(&name), &rows)?;
                println!("wrote {}", dest.join(name).display());
            }
            Err(Error::Config(m)) if m.starts_with("no aggregate") => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
