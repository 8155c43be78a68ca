use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rotor_eig_inv::config::{ExperimentConfig, Method};
use rotor_eig_inv::forward::{forward_map, DataSetSpec};
use rotor_eig_inv::harness::{
    recover, run_noise_sweep, run_table_experiment, run_validation_suite, sweep_csv, table_csv, write_csv, Csv,
    Provenance, RecoveryTask,
};
use rotor_eig_inv::inverse::UnknownSet;
use rotor_eig_inv::tensor::Param;
use rotor_eig_inv::Error;

/// Thread count for the parallel parts; defaults to all cores.
const THREADS_VAR: &str = "ROTOR_EIG_INV_THREADS";

#[derive(Parser)]
#[command(version, about = "Elastic constants of a laminated rotor core from its natural frequencies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` of the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the validation suite; exits with 1 if any check fails.
    Validate(Common),
    /// Print the eigenvalues of a data set as CSV.
    Forward {
        #[arg(long)]
        config: PathBuf,
        /// Overrides of the true constants, e.g. `Ez=2.2e8,nu=0.31`.
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long, default_value = "3bp1t")]
        dataset: DataSetSpec,
    },
    /// Recover a set of unknown constants from synthetic data.
    Recover(RecoverArgs),
    /// Recovery tables over the configured unknown sets and data sets.
    Table(Common),
    /// Noise sweep over the configured noise levels and seeds.
    Sweep(Common),
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated list, e.g. `Ez,Gxz`.
    #[arg(long)]
    unknowns: String,
    #[arg(long, default_value = "3bp1t")]
    dataset: DataSetSpec,
    #[arg(long, default_value = "eki")]
    method: Method,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    tol_c: Option<f64>,
    #[arg(long)]
    tol_v: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Write the iteration trace to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.parse().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot set thread count: {e}");
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path) -> rotor_eig_inv::Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn out_dir(cfg: &ExperimentConfig, common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

/// Returns whether every check or run succeeded.
fn run(cmd: Cmd) -> rotor_eig_inv::Result<bool> {
    match cmd {
        Cmd::Validate(common) => {
            let cfg = load(&common.config)?;
            let report = run_validation_suite(&cfg)?;
            print!("{}", report.render());
            let dir = out_dir(&cfg, &common);
            std::fs::create_dir_all(&dir)?;
            let text = toml::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(dir.join("validation.toml"), text)?;
            Ok(report.passed())
        }
        Cmd::Forward {
            config,
            params,
            dataset,
        } => {
            let cfg = load(&config)?;
            let mut p = cfg.p_true;
            for item in params.split(',').filter(|s| !s.trim().is_empty()) {
                let (name, value) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected name=value, got '{item}'")))?;
                let value: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value in '{item}'")))?;
                p = p.with(Param::parse(name)?, value);
            }
            let ctx = cfg.forward_context()?;
            let values = forward_map(&p, dataset, &ctx)?;
            println!("index,eigenvalue,frequency_hz");
            for (i, l) in values.iter().enumerate() {
                println!("{},{:.10e},{:.6}", i + 1, l, l.sqrt() / (2.0 * std::f64::consts::PI));
            }
            Ok(true)
        }
        Cmd::Recover(args) => {
            let mut cfg = load(&args.config)?;
            if let Some(j) = args.ensemble_size {
                cfg.eki.ensemble_size = j;
            }
            if let Some(t) = args.tol_c {
                cfg.eki.tol_c = t;
            }
            if let Some(t) = args.tol_v {
                cfg.eki.tol_v = t;
            }
            if let Some(n) = args.max_iter {
                cfg.eki.max_iter = n;
                cfg.lsq.max_iter = n;
            }
            let unknowns = UnknownSet::parse_list(&args.unknowns)?;
            if unknowns.is_empty() {
                return Err(Error::Config("the unknown set is empty".into()));
            }
            cfg.validate()?;
            let ctx = cfg.forward_context()?;
            let task = RecoveryTask {
                unknowns: unknowns.clone(),
                dataset: args.dataset,
                method: args.method,
                delta: args.delta,
                seed: args.seed,
            };
            let run = recover(&cfg, &ctx, &task)?;
            println!("parameter,true,estimate,relative_error");
            match &run.outcome {
                Ok(r) => {
                    for (i, q) in unknowns.iter().enumerate() {
                        println!("{},{:.6e},{:.6e},{:.4e}", q.label(), cfg.p_true.get(*q), r.estimate[i], r.errors[i]);
                    }
                    println!("# status {}, {} iterations, {} evaluations", r.status, r.iterations, r.evaluations);
                    if let Some(path) = &args.out {
                        let prov = Provenance::new(&cfg, &ctx, "trace")?;
                        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                        let name = path
                            .file_stem()
                            .and_then(|s| s.to_str())
                            .ok_or_else(|| Error::Config(format!("bad trace path {}", path.display())))?;
                        write_csv(dir, name, &Csv::from(r.trace.clone()), &prov)?;
                    }
                    Ok(true)
                }
                Err(kind) => {
                    println!("# failed: {kind}");
                    Ok(false)
                }
            }
        }
        Cmd::Table(common) => {
            let cfg = load(&common.config)?;
            let ctx = cfg.forward_context()?;
            let dir = out_dir(&cfg, &common);
            let mut all_ok = true;
            for &method in &cfg.table.methods {
                let runs = run_table_experiment(&cfg, &ctx, method)?;
                all_ok &= runs.iter().all(|r| r.outcome.is_ok());
                let prov = Provenance::new(&cfg, &ctx, &format!("table {method}"))?;
                let path = write_csv(&dir, &format!("table_{method}"), &table_csv(&runs), &prov)?;
                println!("{}", path.display());
            }
            Ok(all_ok)
        }
        Cmd::Sweep(common) => {
            let cfg = load(&common.config)?;
            let ctx = cfg.forward_context()?;
            let levels = run_noise_sweep(&cfg, &ctx)?;
            let prov = Provenance::new(&cfg, &ctx, "sweep")?;
            let dir = out_dir(&cfg, &common);
            let path = write_csv(&dir, "sweep", &sweep_csv(&levels, &cfg.sweep.unknowns), &prov)?;
            println!("{}", path.display());
            Ok(levels.iter().all(|l| l.runs.iter().all(|r| r.outcome.is_ok())))
        }
    }
}
