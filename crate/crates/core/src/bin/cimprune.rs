use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use cimprune::sweep::{rows_to_csv, run_sweep, SweepAxis, SweepSpec};
use cimprune::verify::run_verification;
use cimprune::workload_io::ScoreDistribution;
use cimprune::{generate_workload, load_workload, save_workload, simulate, SimConfig, WorkloadSpec};

#[derive(Parser)]
#[command(
    name = "cimprune",
    version,
    about = "Hybrid CIM/digital attention accelerator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct Overrides {
    /// Simulator config (flat TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's SSCS flag.
    #[arg(long, value_enum)]
    sscs: Option<Switch>,
    /// Overrides the config's pruning threshold (4-bit score units).
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<i64>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.sscs {
            cfg.sscs = matches!(s, Switch::On);
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a workload directory and print the report.
    Run {
        #[arg(long)]
        workload: PathBuf,
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Sweep one parameter and print one row per point.
    Sweep {
        /// threshold, sigma_rbl or q-sparsity
        #[arg(long)]
        axis: String,
        #[arg(long, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, allow_hyphen_values = true)]
        stop: f64,
        /// Number of evenly spaced points, 0 for none.
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        /// Fixed workload; otherwise one is generated per trial.
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        #[arg(long, default_value_t = 64)]
        queries: usize,
        #[arg(long, default_value_t = 0.5)]
        sparsity: f64,
        /// uniform or clustered:<n>
        #[arg(long, default_value = "clustered:4")]
        dist: String,
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Generate a synthetic workload directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        #[arg(long, default_value_t = 64)]
        queries: usize,
        #[arg(long, default_value_t = 0.5)]
        sparsity: f64,
        #[arg(long, default_value = "clustered:4")]
        dist: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Check the analog and digital paths against brute-force oracles.
    Verify {
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb one oracle so the suite must fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Flattens nested objects into dotted keys; arrays are not expected.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn workload_spec(
    tokens: usize,
    queries: usize,
    sparsity: f64,
    dist: &str,
    seed: u64,
    name: String,
) -> Result<WorkloadSpec> {
    Ok(WorkloadSpec {
        name,
        tokens,
        queries,
        q_sparsity: sparsity,
        distribution: dist.parse::<ScoreDistribution>()?,
        seed,
    })
}

/// Returns `Ok(false)` when verification ran but failed.
fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { workload, opts, format } => {
            let cfg = opts.config()?;
            let tiles = load_workload(&workload)?;
            let report = simulate::<f64>(&tiles, &cfg)?.report;
            let mut obj: Map<String, Value> = match serde_json::to_value(&report)? {
                Value::Object(m) => m,
                _ => unreachable!("report serializes to an object"),
            };
            let text = match format {
                Format::Json => {
                    obj.insert("timestamp".into(), Value::from(timestamp()));
                    serde_json::to_string_pretty(&Value::Object(obj))? + "\n"
                }
                Format::Csv => {
                    let mut cols = Vec::new();
                    flatten("", &Value::Object(obj), &mut cols);
                    let (keys, vals): (Vec<_>, Vec<_>) = cols.into_iter().unzip();
                    format!("{}\n{}\n", keys.join(","), vals.join(","))
                }
            };
            emit(opts.out.as_deref(), &text)?;
            Ok(true)
        }
        Command::Sweep {
            axis,
            start,
            stop,
            points,
            trials,
            workload,
            tokens,
            queries,
            sparsity,
            dist,
            opts,
            format,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let base = opts.config()?;
            let fixed = workload.as_deref().map(load_workload).transpose()?;
            let spec = SweepSpec {
                axis,
                start,
                stop,
                points,
                trials,
                seed: base.seed,
                workload: workload_spec(tokens, queries, sparsity, &dist, base.seed, "sweep".into())?,
                base,
                fixed,
            };
            let rows = run_sweep(&spec)?;
            let text = match format {
                Format::Csv => rows_to_csv(&rows),
                Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
            };
            emit(opts.out.as_deref(), &text)?;
            Ok(true)
        }
        Command::Generate {
            out,
            tokens,
            queries,
            sparsity,
            dist,
            seed,
            name,
        } => {
            let w = generate_workload(&workload_spec(tokens, queries, sparsity, &dist, seed, name)?)?;
            save_workload(&out, &w)?;
            eprintln!(
                "wrote {} ({} queries, {} keys, q sparsity {:.3})",
                out.display(),
                w.queries.len(),
                w.tokens(),
                w.q_sparsity()
            );
            Ok(true)
        }
        Command::Verify {
            trials,
            seed,
            inject_fault,
        } => {
            if trials == 0 {
                eprintln!("warning: --trials 0, nothing checked");
            }
            let report = run_verification(trials, seed, inject_fault);
            for s in &report.suites {
                println!(
                    "{:<28} {:>8} checked {:>6} failed  {}",
                    s.name,
                    s.checked,
                    s.failures,
                    if s.passed() { "PASS" } else { "FAIL" }
                );
            }
            println!(
                "{}",
                if report.passed() {
                    "all suites passed"
                } else {
                    "verification FAILED"
                }
            );
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
