use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cslam_bench::{
    candidates_to_converge, parse_seeds, run_curve_experiment, run_exchange_experiment, write_csv_atomic,
    write_run_outputs, write_scenario_files, BenchError, CurveRow, ExchangeRow, ExperimentConfig, ScenarioRef,
    DEFAULT_BUDGETS,
};
use cslam_core::sim::{run, ExchangeMode, PrioritizationMode};
use serde::Serialize;

/// Multi-robot place recognition and pose-graph experiments.
#[derive(Debug, Parser)]
#[command(name = "cslam-bench", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "CSLAM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a scenario's ground truth as TUM files plus a scenario.toml that reloads it.
    Generate {
        #[arg(long, default_value = "staged")]
        scenario: ScenarioRef,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate a scenario; writes ledger.csv, trace.csv and robot_<id>.g2o per seed.
    Run(Common),
    /// Metric curves against the percentage of candidates computed.
    Curve(Common),
    /// Monolog and vertex-cover bytes for a sweep of budgets.
    Exchange {
        #[command(flatten)]
        common: Common,
        /// Comma-separated budgets.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BUDGETS)]
        budgets: Vec<usize>,
    },
    /// Summarize a curve.csv or exchange.csv.
    Metrics {
        /// Table written by `curve` or `exchange`.
        #[arg(long)]
        input: PathBuf,
        /// ATE convergence band, as a fraction of the ATE range.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// staged, worst_case, clustered, disjoint or a scenario TOML file.
    #[arg(long)]
    scenario: Option<ScenarioRef>,
    /// Prioritization mode; repeat for several.
    #[arg(long = "mode")]
    modes: Vec<PrioritizationMode>,
    /// Descriptor exchange policy: monolog or vertex_cover.
    #[arg(long)]
    exchange: Option<ExchangeMode>,
    /// Candidates selected per round.
    #[arg(long)]
    budget: Option<usize>,
    /// `3`, `1,4,9` or `0..20`.
    #[arg(long, value_parser = parse_seed_list)]
    seeds: Option<Seeds>,
    /// Robots only meet after their last keyframe.
    #[arg(long)]
    worst_case: bool,
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seed_list(s: &str) -> Result<Seeds, String> {
    parse_seeds(s).map(Seeds)
}

impl Common {
    fn config(self, out: &Path, scenario: ScenarioRef, seeds: Vec<u64>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            self.scenario.unwrap_or(scenario),
            self.seeds.map_or(seeds, |s| s.0),
            out.into(),
        );
        if !self.modes.is_empty() {
            cfg.modes = self.modes;
        }
        cfg.exchange = self.exchange;
        cfg.budget = self.budget;
        cfg.worst_case = self.worst_case;
        cfg
    }
}

/// Writes each seed's rows on its own, then all of them together.
fn write_per_seed<T: Serialize + Clone>(
    out: &Path,
    name: &str,
    rows: &[T],
    seed_of: impl Fn(&T) -> u64,
) -> Result<PathBuf, BenchError> {
    let mut by_seed: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(seed_of(r)).or_default().push(r.clone());
    }
    for (seed, rows) in &by_seed {
        write_csv_atomic(&out.join("seeds").join(format!("{name}_{seed}.csv")), rows)?;
    }
    let merged = out.join(format!("{name}.csv"));
    write_csv_atomic(&merged, rows)?;
    Ok(merged)
}

#[derive(Serialize)]
struct ConvergenceRow {
    mode: PrioritizationMode,
    seed: u64,
    needed: usize,
    candidates: usize,
}

fn curve_summary(rows: &[CurveRow], fraction: f64) -> Vec<ConvergenceRow> {
    let mut curves: BTreeMap<(u64, String), Vec<CurveRow>> = BTreeMap::new();
    for r in rows {
        curves
            .entry((r.seed, r.mode.as_str().to_string()))
            .or_default()
            .push(r.clone());
    }
    curves
        .into_values()
        .map(|c| ConvergenceRow {
            mode: c[0].mode,
            seed: c[0].seed,
            needed: candidates_to_converge(&c, fraction),
            candidates: c[0].candidates,
        })
        .collect()
}

fn print_comparison(summary: &[ConvergenceRow]) {
    let needed = |m: PrioritizationMode| -> BTreeMap<u64, usize> {
        summary
            .iter()
            .filter(|r| r.mode == m)
            .map(|r| (r.seed, r.needed))
            .collect()
    };
    let (g, s) = (needed(PrioritizationMode::Greedy), needed(PrioritizationMode::Spectral));
    let both: Vec<u64> = g.keys().filter(|k| s.contains_key(k)).copied().collect();
    if both.is_empty() {
        return;
    }
    let le = both.iter().filter(|k| s[k] <= g[k]).count();
    let lt = both.iter().filter(|k| s[k] < g[k]).count();
    println!(
        "spectral needs no more candidates than greedy on {le}/{n} seeds, fewer on {lt}/{n}",
        n = both.len()
    );
}

fn exchange_summary(rows: &[ExchangeRow]) {
    let mut by: BTreeMap<(&str, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = by.entry((r.mode.as_str(), r.budget)).or_default();
        e.0 += r.savings();
        e.1 += 1;
    }
    println!("mode,budget,mean_savings");
    for ((mode, b), (sum, n)) in by {
        println!("{mode},{b},{:.4}", sum / n as f64);
    }
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    let out = cli.out;
    match cli.command {
        Command::Generate { scenario, seed } => {
            let cfg = ExperimentConfig::new(scenario, vec![seed], out.clone());
            for p in write_scenario_files(&out, &cfg.scenario(seed, None)?)? {
                println!("{}", p.display());
            }
        }
        Command::Run(common) => {
            let mode = common.modes.last().copied();
            let cfg = common.config(&out, ScenarioRef::Staged, vec![0]);
            cfg.validate()?;
            let mut unsettled = Vec::new();
            for &seed in &cfg.seeds {
                let sc = cfg.scenario(seed, mode)?;
                let res = run(&sc)?;
                let dir = out.join(format!("seed_{seed}"));
                write_run_outputs(&dir, &res)?;
                let frames: Vec<String> = res.robots.iter().map(|r| r.reference_frame.to_string()).collect();
                println!(
                    "seed {seed}: {} rendezvous, {} messages, {} bytes, frames [{}] -> {}",
                    res.trace.records.len(),
                    res.ledger.len(),
                    res.ledger.total_bytes(),
                    frames.join(","),
                    dir.display()
                );
                let bad = res.trace.records.iter().filter(|r| !r.converged).count();
                if bad > 0 {
                    unsettled.push(format!("seed {seed}: {bad} rendezvous"));
                }
            }
            if !unsettled.is_empty() {
                return Err(BenchError::NonConvergence(unsettled.join("; ")));
            }
        }
        Command::Curve(common) => {
            let cfg = common.config(&out, ScenarioRef::WorstCase, (0..20).collect());
            let rows = run_curve_experiment(&cfg)?;
            let path = write_per_seed(&out, "curve", &rows, |r| r.seed)?;
            let summary = curve_summary(&rows, 0.1);
            write_csv_atomic(&out.join("convergence.csv"), &summary)?;
            print_comparison(&summary);
            println!("{}", path.display());
            let bad = rows.iter().filter(|r| !r.converged).count();
            if bad > 0 {
                return Err(BenchError::NonConvergence(format!("{bad} curve points")));
            }
        }
        Command::Exchange { common, budgets } => {
            let mut cfg = common.config(&out, ScenarioRef::Clustered, (0..20).collect());
            cfg.budgets = budgets;
            let rows = run_exchange_experiment(&cfg)?;
            let path = write_per_seed(&out, "exchange", &rows, |r| r.seed)?;
            exchange_summary(&rows);
            println!("{}", path.display());
        }
        Command::Metrics { input, fraction } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(BenchError::Usage(format!(
                    "fraction must lie in [0, 1], got {fraction}"
                )));
            }
            let mut reader = csv::Reader::from_path(&input)?;
            let headers = reader.headers()?.clone();
            if headers.iter().any(|h| h == "monolog_bytes") {
                let rows: Vec<ExchangeRow> = reader.deserialize().collect::<Result<_, _>>()?;
                exchange_summary(&rows);
            } else if headers.iter().any(|h| h == "percent_computed") {
                let rows: Vec<CurveRow> = reader.deserialize().collect::<Result<_, _>>()?;
                let summary = curve_summary(&rows, fraction);
                let mut w = csv::Writer::from_writer(std::io::stdout());
                for r in &summary {
                    w.serialize(r)?;
                }
                w.flush().map_err(|source| BenchError::Io {
                    path: input.clone(),
                    source,
                })?;
                print_comparison(&summary);
            } else {
                return Err(BenchError::Data(format!(
                    "{}: neither a curve nor an exchange table",
                    input.display()
                )));
            }
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
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
