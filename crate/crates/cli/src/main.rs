//! `eslab`: run landscape experiments, sweeps, figure suites and robustness studies.
//!
//! Exit status: 0 on success, 1 on validation or usage errors, 2 on runtime
//! failures and on suites whose checklist has a failing line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eslab::harness::{
    run_experiment, run_figure_suite, run_robustness_study, run_sweep, ExperimentConfig, RobustnessStudyConfig,
    RunStatus, SweepConfig, FIGURE_SUITES,
};
use eslab::landscapes::{grid_sample, Landscape, SUITE_NAMES};
use eslab::Error;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "ESLAB_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Parser, Debug)]
#[command(name = "eslab", version, about = "Evolution strategies versus gradient methods on 2D fitness landscapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Override a config value, e.g. `--set optimizer.sigma=0.04`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root. Defaults to the config's `out_dir`, then $ESLAB_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel evaluation.
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment config (or rerun a manifest).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a config with a `[sweep]` table, one run per value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a shipped figure suite and write its checklist.
    Suite {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(FIGURE_SUITES))]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a landscape on a regular grid into `grid_<name>.csv`.
    Grid {
        /// Landscape name with default parameters. Ignored when `--config` is given.
        #[arg(required_unless_present = "config")]
        landscape: Option<String>,
        /// Experiment config whose `[landscape]` table is sampled.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Perturbation clouds and Mann-Whitney tests for explicit solutions.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the named landscapes and their default parameters.
    ListLandscapes,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Evaluation { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(seed) = self.seed {
            o.push(format!("seed={seed}"));
        }
        o
    }

    fn out_root(&self, from_config: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| from_config.map(Path::to_path_buf))
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn init_threads(&self, from_config: Option<usize>) -> Outcome {
        let Some(n) = self.parallelism.or(from_config) else {
            return Ok(());
        };
        if n == 0 {
            return Err(Failure::Validation("invalid argument `parallelism`: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("cannot start thread pool: {e}")))
    }
}

fn cmd_run(config: &Path, common: &Common) -> Outcome {
    let cfg = ExperimentConfig::from_file(config, &common.overrides())?;
    common.init_threads(cfg.parallelism)?;
    let art = run_experiment(&cfg, &common.out_root(cfg.out_dir.as_deref()))?;
    for w in &art.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", art.dir.display());
    if let Some(r) = art.final_record() {
        println!("final iterate {:?}, fitness {}", r.iterate.as_slice(), r.fitness_at_iterate);
    }
    if let Some(j) = art.final_expected_fitness {
        println!("final expected fitness {j}");
    }
    match art.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Failed { cause } => Err(Failure::Runtime(format!("run failed: {cause}"))),
    }
}

fn cmd_sweep(config: &Path, common: &Common) -> Outcome {
    let cfg = SweepConfig::from_file(config, &common.overrides())?;
    let base = cfg.materialize(0)?;
    common.init_threads(base.parallelism)?;
    let sweep = run_sweep(&cfg, &common.out_root(base.out_dir.as_deref()))?;
    println!("{}", sweep.dir.display());
    let mut failed = 0;
    for (v, run) in sweep.values.iter().zip(&sweep.runs) {
        match &run.status {
            RunStatus::Completed => println!("{v}: completed"),
            RunStatus::Failed { cause } => {
                failed += 1;
                println!("{v}: failed: {cause}");
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} runs failed", sweep.runs.len())));
    }
    Ok(())
}

fn cmd_suite(name: &str, common: &Common) -> Outcome {
    if !common.overrides.is_empty() {
        return Err(Failure::Validation(
            "invalid argument `set`: suites run their shipped configs unchanged".into(),
        ));
    }
    common.init_threads(None)?;
    let report = run_figure_suite(name, &common.out_root(None), common.seed)?;
    print!("{}", report.checklist_text());
    println!("{}", report.dir.join("checklist.txt").display());
    if report.all_passed() {
        Ok(())
    } else {
        let failed = report.checklist.iter().filter(|c| !c.passed).count();
        Err(Failure::Runtime(format!("{failed} checklist line(s) failed")))
    }
}

fn cmd_grid(landscape: Option<&str>, config: Option<&Path>, resolution: usize, common: &Common) -> Outcome {
    let (landscape, out_dir) = match config {
        Some(path) => {
            let cfg = ExperimentConfig::from_file(path, &common.overrides())?;
            common.init_threads(cfg.parallelism)?;
            (cfg.landscape, cfg.out_dir)
        }
        None => {
            let name = landscape.expect("clap requires a landscape without --config");
            let l = Landscape::by_name(name).ok_or_else(|| {
                Failure::Validation(format!("invalid argument `landscape`: unknown landscape `{name}`"))
            })?;
            common.init_threads(None)?;
            (l, None)
        }
    };
    let grid = grid_sample(&landscape, resolution).map_err(|e| match e {
        Error::InvalidArgument { .. } => Failure::Validation(e.to_string()),
        other => Failure::from(other),
    })?;
    let root = common.out_root(out_dir.as_deref());
    std::fs::create_dir_all(&root).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", root.display())))?;
    let path = root.join(format!("grid_{}.csv", landscape.name()));
    std::fs::write(&path, grid.to_csv()).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_robustness(config: &Path, common: &Common) -> Outcome {
    let cfg = RobustnessStudyConfig::from_file(config, &common.overrides())?;
    common.init_threads(cfg.parallelism)?;
    let table = run_robustness_study(&cfg, &common.out_root(cfg.out_dir.as_deref()))?;
    for (name, row) in table.names.iter().zip(&table.reports) {
        for (sigma, r) in table.sigmas.iter().zip(row) {
            let score = r.robustness_score.map_or("undefined".to_string(), |s| s.to_string());
            println!("{name} sigma {sigma}: base {}, median {}, score {score}", r.base_performance, r.quartiles.median);
        }
    }
    for t in &table.pairwise {
        println!("{} vs {} sigma {}: U {}, p {}", t.a, t.b, t.sigma, t.result.u_statistic, t.result.p_value);
    }
    Ok(())
}

fn cmd_list() -> Outcome {
    for name in SUITE_NAMES {
        let l = Landscape::by_name(name).expect("suite name");
        println!("{name}");
        for (key, value) in l.params() {
            println!("  {key} = {value}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Run { config, common } => cmd_run(config, common),
        Command::Sweep { config, common } => cmd_sweep(config, common),
        Command::Suite { name, common } => cmd_suite(name, common),
        Command::Grid {
            landscape,
            config,
            resolution,
            common,
        } => cmd_grid(landscape.as_deref(), config.as_deref(), *resolution, common),
        Command::Robustness { config, common } => cmd_robustness(config, common),
        Command::ListLandscapes => cmd_list(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
