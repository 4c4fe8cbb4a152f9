use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use wncs_core::baseline::{brute_force_oracle, solve_relaxed_greedy};
use wncs_core::control::Allocation;
use wncs_core::env::Env;
use wncs_core::harness::{emit_plotdata, run_experiment, timing_study, ExperimentConfig};
use wncs_core::Result;

#[derive(Parser)]
#[command(name = "wncs", version, about = "Resource allocation experiments for ultra-reliable wireless control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train and test every configured algorithm across all seeds.
    Run {
        config: PathBuf,
        /// Validate and print the resolved configuration, then exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Per-step decision latency for each configured node count.
    Timing {
        config: PathBuf,
        /// Output CSV (default: <results>/timing.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate seed traces under a results directory into plot CSVs.
    Plotdata {
        dir: PathBuf,
        /// Moving-average window, episodes.
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
    /// Exhaustive grid optimum for the first channel realization.
    Oracle {
        config: PathBuf,
        /// Blocklength grid step, symbols.
        #[arg(long, default_value_t = 1)]
        step: u32,
    },
    /// Baseline allocation for the first channel realization.
    Solve { config: PathBuf },
}

#[derive(Serialize)]
struct Report<'a> {
    total_power_w: f64,
    total_utilization: f64,
    util_bound: f64,
    elapsed_ms: f64,
    allocation: &'a Allocation,
}

fn first_env(cfg: &ExperimentConfig) -> Result<Env> {
    Env::new(cfg.network.clone(), cfg.env.clone(), &cfg.channel, 0)
}

fn print_report(cfg: &ExperimentConfig, alloc: &Allocation, t0: Instant) {
    let r = Report {
        total_power_w: alloc.total_power(),
        total_utilization: alloc.utilization(&cfg.network).total,
        util_bound: cfg.network.util_bound,
        elapsed_ms: t0.elapsed().as_secs_f64() * 1e3,
        allocation: alloc,
    };
    let json = serde_json::to_string_pretty(&r).expect("report serializes");
    // a closed pipe (`| head`) is not an error for a report
    let _ = writeln!(std::io::stdout().lock(), "{json}");
}

fn exec(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { config, dry_run } => {
            let cfg = ExperimentConfig::load(&config)?;
            if dry_run {
                print!("{}", cfg.to_toml_string()?);
                return Ok(());
            }
            let summary = run_experiment(&cfg)?;
            println!("results: {}", summary.root.display());
            println!("{:<14} {:>5} {:>14} {:>12} {:>12} {:>10} {:>6}", "algorithm", "seeds", "power_W", "std", "reward", "std", "viol");
            for r in &summary.rows {
                println!(
                    "{:<14} {:>5} {:>14.6e} {:>12.3e} {:>12.5} {:>10.5} {:>6}",
                    r.algorithm, r.seeds, r.test_power_mean_w, r.test_power_std_w, r.test_reward_mean, r.test_reward_std, r.test_violations
                );
            }
        }
        Cmd::Timing { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = match out {
                Some(p) => p,
                None => {
                    let root = cfg.results_root();
                    std::fs::create_dir_all(&root).map_err(|e| wncs_core::Error::io(&root, e))?;
                    root.join("timing.csv")
                }
            };
            let rows = timing_study(&cfg, &cfg.scenario.timing_nodes, &cfg.scenario.algorithms, Some(&path))?;
            println!("{:<14} {:>6} {:>12} {:>12}", "algorithm", "nodes", "median_ms", "p90_ms");
            for r in &rows {
                println!("{:<14} {:>6} {:>12.4} {:>12.4}", r.algorithm, r.n_nodes, r.median_ms, r.p90_ms);
            }
            println!("written: {}", path.display());
        }
        Cmd::Plotdata { dir, window } => {
            for p in emit_plotdata(Path::new(&dir), window)? {
                println!("{}", p.display());
            }
        }
        Cmd::Oracle { config, step } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = first_env(&cfg)?;
            let t0 = Instant::now();
            let alloc = brute_force_oracle(&env.links(), &cfg.network, step)?;
            print_report(&cfg, &alloc, t0);
        }
        Cmd::Solve { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = first_env(&cfg)?;
            let t0 = Instant::now();
            let sol = solve_relaxed_greedy(&env.links(), &cfg.network)?;
            print_report(&cfg, &sol.allocation, t0);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
