//! Experiment runner for the contention simulator: execute scenarios (files
//! or embedded presets) across seeds and policies, validate scenario files,
//! and emit the closed-form model tables.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use csma_sim::analytics;
use csma_sim::report;
use csma_sim::scenario::{self, Scenario};

#[derive(Parser)]
#[command(
    name = "csma-sim",
    about = "Deterministic CSMA/CA contention simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or preset and write metric tables.
    Run(RunArgs),
    /// Check a scenario file or preset against every invariant.
    Validate {
        /// Scenario path or preset name.
        scenario: String,
    },
    /// Print a closed-form model table as CSV.
    Analytics(AnalyticsArgs),
    /// List the embedded presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario path or preset name.
    scenario: String,
    /// Output directory; per-run files land in <out>/<name>/[policy/]<seed>/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use seeds 1..=K instead of the scenario's seed list.
    #[arg(long)]
    seeds: Option<u64>,
    /// Override a scenario field, e.g. policies.himd.mar_tar=0.25 or
    /// phy.rts_cts=true. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AnalyticsArgs {
    /// Table to print: beb-collision | cost-grid | chernoff.
    table: String,
    /// Station counts for beb-collision (inclusive range).
    #[arg(long, default_value_t = 2)]
    n_from: usize,
    #[arg(long, default_value_t = 20)]
    n_to: usize,
    /// Ladder base and doubling count for beb-collision.
    #[arg(long, default_value_t = 15.0)]
    cw_min: f64,
    #[arg(long, default_value_t = 6)]
    retries: u32,
    /// Collision durations in slots for cost-grid (repeatable).
    #[arg(long = "eta", default_values_t = vec![20.0, 81.0, 200.0, 500.0])]
    etas: Vec<f64>,
    /// Transmitter count for cost-grid.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Access-rate grid step for cost-grid.
    #[arg(long, default_value_t = 0.005)]
    step: f64,
    /// Observation window for chernoff.
    #[arg(long, default_value_t = 300)]
    n_obs: u64,
    /// Busy probability for chernoff.
    #[arg(long, default_value_t = 0.15)]
    p: f64,
    /// Deviation for chernoff.
    #[arg(long, default_value_t = 0.02)]
    delta: f64,
}

fn load_scenario(args: &RunArgs) -> Result<Scenario> {
    let text = {
        let p = std::path::Path::new(&args.scenario);
        if p.exists() {
            std::fs::read_to_string(p).with_context(|| format!("reading {}", args.scenario))?
        } else {
            scenario::preset(&args.scenario)
                .ok_or_else(|| {
                    anyhow!(
                        "{}: no such file and not a preset (presets: {})",
                        args.scenario,
                        scenario::PRESET_NAMES.join(", ")
                    )
                })?
                .to_string()
        }
    };
    let mut sc = Scenario::from_toml_with_overrides(&text, &args.overrides)
        .map_err(|e| anyhow!("{}: {e}", args.scenario))?;
    if let Some(k) = args.seeds {
        if k == 0 {
            return Err(anyhow!("--seeds must be positive"));
        }
        sc.seeds = (1..=k).collect();
    }
    Ok(sc)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let sc = load_scenario(&args)?;
    let rows = report::run_scenario_to_dir(&sc, &args.out).map_err(|e| anyhow!(e))?;
    println!(
        "wrote {} runs under {}",
        rows.len(),
        args.out.join(&sc.name).display()
    );
    print!("{}", report::summary_csv(&rows));
    Ok(())
}

fn cmd_validate(path: &str) -> Result<()> {
    let sc = Scenario::load(path).map_err(|e| anyhow!(e))?;
    match sc.validate() {
        Ok(()) => {
            println!("ok: {} ({} transmitters)", sc.name, sc.transmitter_count());
            Ok(())
        }
        Err(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            Err(anyhow!("{} problem(s) in {path}", errors.len()))
        }
    }
}

fn cmd_analytics(args: AnalyticsArgs) -> Result<()> {
    match args.table.as_str() {
        "beb-collision" => {
            print!(
                "{}",
                analytics::collision_probability_table(
                    args.n_from,
                    args.n_to,
                    args.cw_min,
                    args.retries
                )
            );
        }
        "cost-grid" => {
            print!("{}", analytics::cost_grid(&args.etas, args.n, args.step));
        }
        "chernoff" => {
            println!("n_obs,p,delta,bound,standard_error");
            println!(
                "{},{},{},{:.6},{:.6}",
                args.n_obs,
                args.p,
                args.delta,
                analytics::chernoff_bound(args.n_obs, args.p, args.delta),
                analytics::standard_error(args.n_obs, args.p)
            );
        }
        other => {
            return Err(anyhow!(
                "unknown table `{other}` (want beb-collision | cost-grid | chernoff)"
            ))
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Analytics(args) => cmd_analytics(args),
        Command::Presets => {
            for p in scenario::PRESET_NAMES {
                println!("{p}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
