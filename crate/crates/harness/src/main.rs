use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmaps_core::verify::run_suite;
use lmaps_harness::store::{format_summary, read_metrics, run_dir, write_outcome, write_snapshot};
use lmaps_harness::sweep::{run_sweep, sweep_path};
use lmaps_harness::{execute, HarnessError, LoadedConfig};

#[derive(Parser)]
#[command(name = "lmaps", version, about = "Diffusion inverse-problem solver lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every solver batch of a config and store the results.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set solvers.lmaps.k2=10`.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-run a config for each value of one numeric parameter.
    Sweep {
        config: PathBuf,
        param: String,
        values: Vec<String>,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Verify,
    /// Print a stored metrics file (or the run directory holding it).
    Show { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Run {
            config,
            mut overrides,
            output_dir,
            workers,
        } => {
            if let Some(dir) = output_dir {
                overrides.push(format!("output_dir={}", toml_string(&dir)));
            }
            if let Some(w) = workers {
                overrides.push(format!("workers={w}"));
            }
            let loaded = LoadedConfig::load(&config, &overrides)?;
            let dir = run_dir(&loaded.config, &loaded.config.output_dir);
            write_snapshot(&loaded.config, &dir)?;
            let outcome = execute(&loaded)?;
            write_outcome(&outcome, &dir)?;
            print!("{}", format_summary(&read_metrics(&dir)?));
            println!("results: {}", dir.display());
            match outcome.failure {
                Some(e) => Err(e),
                None => Ok(0),
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            overrides,
            output_dir,
        } => {
            let sweep = run_sweep(&config, &overrides, &param, &values)?;
            let base = match output_dir {
                Some(d) => d,
                None => LoadedConfig::load(&config, &overrides)?.config.output_dir,
            };
            std::fs::create_dir_all(&base)?;
            let path = sweep_path(&base, &sweep);
            std::fs::write(&path, sweep.to_csv())?;
            for p in &sweep.points {
                for e in p.summary.iter().filter(|e| e.metric == "psnr_db") {
                    println!("{param}={:<10} {:<18} psnr_db {:.4} ± {:.4} (n={})", p.value, e.solver, e.mean, e.std, e.n);
                }
            }
            println!("sweep: {}", path.display());
            match sweep.failure {
                Some(e) => Err(e),
                None => Ok(0),
            }
        }
        Command::Verify => {
            let outcomes = run_suite();
            for o in &outcomes {
                println!(
                    "{} {:<28} worst={:.3e} tol={:.0e} {:.2}s  {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.worst,
                    o.tolerance,
                    o.seconds,
                    o.detail
                );
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} checks, {failed} failed", outcomes.len());
            Ok(if failed == 0 { 0 } else { 1 })
        }
        Command::Show { path } => {
            print!("{}", format_summary(&read_metrics(&path)?));
            Ok(0)
        }
    }
}

fn toml_string(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}
