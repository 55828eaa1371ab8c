//! Command-line entry point: benchmark sweeps, ablations, the Poisson
//! experiment, gradient checks, and result summaries.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rmn::gradcheck::run_suite;
use rmn::harness::{
    ablation_suite, report, run_benchmark, run_pinn_experiment, standard_suite, write_outputs, write_pinn_outputs, Ablation,
    BenchmarkResult, ExperimentConfig, PinnExperimentConfig,
};
use rmn::RmnError;

#[derive(Parser)]
#[command(name = "rmn", version, about = "Radial power-basis networks for singular fields")]
struct Cli {
    /// Comma-separated seeds overriding the configured list, e.g. `0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Regression benchmarks.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Run an ablation: k_sweep, range_sweep, log_primitive_toggle, separability.
    Ablate { which: String },
    /// Poisson point-charge experiment.
    Pinn {
        #[command(subcommand)]
        cmd: PinnCmd,
    },
    /// Finite-difference checks.
    Check {
        #[command(subcommand)]
        cmd: CheckCmd,
    },
    /// Aggregate result CSVs in a directory into summary.txt / summary.json.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run one experiment config (JSON).
    Run { config: PathBuf },
    /// Run every standard benchmark plus the separable baselines.
    All,
}

#[derive(Subcommand)]
enum PinnCmd {
    /// Run the experiment; without a config the standard settings are used.
    Run { config: Option<PathBuf> },
}

#[derive(Subcommand)]
enum CheckCmd {
    /// Parameter-gradient and spatial-derivative checks on every model variant.
    Grads {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

enum Failure {
    Input(String),
    Run(String),
}

impl From<RmnError> for Failure {
    fn from(e: RmnError) -> Self {
        match e {
            RmnError::Config { .. } | RmnError::UnknownBenchmark { .. } => Failure::Input(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

fn summarize(r: &BenchmarkResult) {
    let a = &r.aggregate;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
    println!(
        "{:<18} {:<24} seeds {:>2}  failed {:>2}  rmse {} ± {}",
        a.benchmark,
        a.method,
        a.n,
        a.n_failed,
        fmt(a.mean_rmse),
        fmt(a.std_rmse)
    );
}

fn run_configs(cfgs: Vec<ExperimentConfig>, out: &Path) -> Result<(), Failure> {
    for c in &cfgs {
        c.validate()?;
    }
    for c in cfgs {
        let r = run_benchmark(&c)?;
        write_outputs(&r, out)?;
        summarize(&r);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Run(e.to_string()))?;
    }
    let out = cli.out_dir.as_path();
    let seeds = cli.seed_list.clone();
    match cli.cmd {
        Cmd::Bench { cmd: BenchCmd::Run { config } } => {
            let mut c = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seeds {
                c.seeds = s;
            }
            run_configs(vec![c], out)
        }
        Cmd::Bench { cmd: BenchCmd::All } => run_configs(standard_suite(&seeds.unwrap_or_else(|| (0..5).collect())), out),
        Cmd::Ablate { which } => {
            let which: Ablation = which.parse()?;
            for r in ablation_suite(which, &seeds.unwrap_or_else(|| (0..5).collect()))? {
                write_outputs(&r, out)?;
                summarize(&r);
            }
            Ok(())
        }
        Cmd::Pinn { cmd: PinnCmd::Run { config } } => {
            let mut c = match config {
                Some(p) => PinnExperimentConfig::from_json_str(&std::fs::read_to_string(p).map_err(RmnError::from)?)?,
                None => PinnExperimentConfig::from_json_str("{}")?,
            };
            if let Some(s) = seeds {
                c.seeds = s;
            }
            let cache = c.cache_dir.clone().map(PathBuf::from).unwrap_or_else(|| out.join("grid_cache"));
            std::fs::create_dir_all(&cache).map_err(RmnError::from)?;
            let results = run_pinn_experiment(&c, Some(&cache))?;
            write_pinn_outputs(&results, out)?;
            for (row, res) in &results {
                println!(
                    "{:<22} seed {:>2}  rel_l2 {:.3}  flux {:.2e}  exponents {}",
                    row.method,
                    row.seed,
                    res.rel_l2,
                    res.mean_flux_error(),
                    row.dominant_exponents
                );
            }
            Ok(())
        }
        Cmd::Check { cmd: CheckCmd::Grads { instances } } => {
            let rows = run_suite(instances)?;
            let mut ok = true;
            for r in &rows {
                ok &= r.passed;
                println!(
                    "{:<18} {}D {:<17} max rel err {:.2e}  tol {:.0e}  {}{}",
                    r.model,
                    r.dim,
                    r.check,
                    r.max_rel_err,
                    r.tol,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.detail.as_ref().map(|d| format!("  ({d})")).unwrap_or_default()
                );
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Run("gradient checks failed".into()))
            }
        }
        Cmd::Report { dir } => {
            let r = report(&dir)?;
            print!("{}", r.text);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
