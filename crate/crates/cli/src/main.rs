use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use armshield::config::RunConfig;
use armshield::detector::{chi2_inv_cdf, DetectorConfig};
use armshield::scenario::metrics::{compute_metrics, MetricsReport, TABLE_ROWS};
use armshield::scenario::monte_carlo::monte_carlo;
use armshield::scenario::trace::write_trace;
use armshield::scenario::world::{Setup, Simulation};
use armshield::scenario::ScenarioId;

#[derive(Parser)]
#[command(
    name = "armshield",
    version,
    about = "Stealthy sensor attacks and active defenses on a 7-DOF arm"
)]
struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--override plant.q_c=1e-7`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario id: A1, A2, A3, B1, B2, B3 or B4.
    scenario: ScenarioId,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every n-th trace row.
    #[arg(long)]
    decimate: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes `<id>_trace.csv` and `<id>_metrics.json`.
    Run(RunArgs),
    /// Monte Carlo batch; writes `<id>_metrics.json` (aggregate) and `<id>_mc.json` (per run).
    Mc {
        #[command(flatten)]
        run: RunArgs,
        /// Number of runs; defaults to the scenario's configured count.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Print the threshold / false-alarm / ARL correspondence.
    Calibrate {
        /// Degrees of freedom of the chi-square statistic.
        #[arg(long, default_value_t = 14)]
        dof: u32,
        /// Per-step false-alarm probabilities to convert. Repeatable.
        #[arg(long)]
        alpha: Vec<f64>,
        /// Thresholds to convert. Repeatable.
        #[arg(long)]
        tau: Vec<f64>,
        /// Average run lengths in samples to convert. Repeatable.
        #[arg(long)]
        arl: Vec<f64>,
    },
    /// Tabulate `<id>_metrics.json` files found in a directory.
    Report { dir: PathBuf },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn prepare(cfg: &mut RunConfig, args: &RunArgs) -> Result<(Arc<Setup>, u64, PathBuf)> {
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    let sc = cfg.scenario_config(args.scenario);
    let setup = Setup::build(cfg, &sc)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((setup, sc.seed, out))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn cmd_run(mut cfg: RunConfig, args: &RunArgs) -> Result<()> {
    let (setup, seed, out) = prepare(&mut cfg, args)?;
    let id = args.scenario;
    let mut sim = Simulation::new(Arc::clone(&setup), seed);
    let records = sim.run().with_context(|| format!("scenario {id}"))?;
    let mut metrics = compute_metrics(id.as_str(), seed, &records, setup.model.ts, setup.damping.rho_y);
    metrics.richardson_gap = sim.richardson_gap;

    let decimate = args.decimate.unwrap_or(cfg.output.decimate);
    let trace_path = out.join(format!("{id}_trace.csv"));
    let file = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    write_trace(BufWriter::new(file), &records, decimate)?;
    write_json(&out.join(format!("{id}_metrics.json")), &metrics)?;
    println!(
        "{id} seed {seed}: {} steps, RMS {:.4e} m, alarms {}, written to {}",
        metrics.steps,
        metrics.rms_nominal,
        metrics.alarm_count,
        out.display()
    );
    Ok(())
}

fn cmd_mc(mut cfg: RunConfig, args: &RunArgs, runs: Option<usize>) -> Result<()> {
    let (setup, seed, out) = prepare(&mut cfg, args)?;
    let id = args.scenario;
    let runs = runs.unwrap_or_else(|| cfg.scenario_config(id).mc_runs);
    let report = monte_carlo(&setup, id.as_str(), seed, runs)?;
    for (s, e) in &report.failures {
        eprintln!("{id} seed {s} failed: {e}");
    }
    write_json(&out.join(format!("{id}_metrics.json")), &report.mean)?;
    write_json(&out.join(format!("{id}_mc.json")), &report)?;
    println!(
        "{id}: {}/{} runs, mean RMS {:.4e} ± {:.1e} m, written to {}",
        report.succeeded,
        report.requested,
        report.mean.rms_nominal,
        report.rms_nominal_stderr,
        out.display()
    );
    Ok(())
}

fn cmd_calibrate(dof: u32, alpha: &[f64], tau: &[f64], arl: &[f64]) -> Result<()> {
    let mut rows = Vec::new();
    for &a in alpha {
        rows.push(DetectorConfig::from_alpha(a, dof)?);
    }
    for &t in tau {
        rows.push(DetectorConfig::from_tau(t, dof)?);
    }
    for &l in arl {
        rows.push(DetectorConfig::from_arl(l, dof)?);
    }
    if rows.is_empty() {
        for a in [0.05, 0.01, 1e-3, 1e-4, 1e-6, 1e-9] {
            rows.push(DetectorConfig::from_alpha(a, dof)?);
        }
    }
    println!("chi-square dof {dof}; 0.99 quantile {:.4}", chi2_inv_cdf(0.99, dof)?);
    println!("{:>14} {:>14} {:>16}", "tau", "alpha_F", "ARL [samples]");
    for r in rows {
        println!("{:>14.4} {:>14.6e} {:>16.6e}", r.tau, r.alpha_f, r.arl_samples());
    }
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut found = BTreeMap::new();
    let mut missing = Vec::new();
    for id in ScenarioId::ALL {
        let path = dir.join(format!("{id}_metrics.json"));
        if !path.exists() {
            missing.push(path.display().to_string());
            continue;
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: MetricsReport =
            serde_json::from_str(&text).with_context(|| format!("malformed metrics file {}", path.display()))?;
        found.insert(id, m);
    }
    if found.is_empty() {
        bail!("no metrics files found; expected any of:\n  {}", missing.join("\n  "));
    }
    if !missing.is_empty() {
        eprintln!("missing: {}", missing.join(", "));
    }
    print!("| {:<6} | {:<26} |", "metric", "");
    for id in found.keys() {
        print!(" {:>11} |", id.as_str());
    }
    println!();
    print!("|--------|----------------------------|");
    for _ in found.keys() {
        print!("-------------|");
    }
    println!();
    for (row, label) in TABLE_ROWS {
        print!("| {row:<6} | {label:<26} |");
        for m in found.values() {
            match m.table_value(row) {
                Some(v) => print!(" {v:>11.4e} |"),
                None => print!(" {:>11} |", "∅"),
            }
        }
        println!();
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        if matches!(e.kind(), ErrorKind::ValueValidation | ErrorKind::InvalidValue) {
            eprint!("{e}");
            eprintln!("\n{}", Cli::command().render_usage());
            std::process::exit(2);
        }
        e.exit()
    });
    match &cli.command {
        Command::Run(args) => cmd_run(load_config(&cli)?, args),
        Command::Mc { run, runs } => cmd_mc(load_config(&cli)?, run, *runs),
        Command::Calibrate { dof, alpha, tau, arl } => cmd_calibrate(*dof, alpha, tau, arl),
        Command::Report { dir } => cmd_report(dir),
    }
}
