use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nmg_core::report::{self, ControllerReports, Format};
use nmg_core::scenario::{self, ControllerKind, RunOptions, ScenarioSpec, DEFAULT_DELTA_T_RANGE};
use nmg_core::supervisor::{default_bins, PolicyState, RewardWeights};
use nmg_core::NmgError;

#[derive(Parser)]
#[command(name = "nmg", version, about = "Gated-protection microgrid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Output {
    /// Directory for traces and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trace format: csv, json or svg.
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file.
    Run {
        spec: PathBuf,
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate every scenario in a directory.
    Suite {
        dir: PathBuf,
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Train a learned supervisory policy on a suite.
    Train {
        dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, env = "NMG_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long)]
        policy_out: PathBuf,
    },
    /// Run a suite under a trained policy.
    Eval {
        dir: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Compare controllers over one suite.
    Compare {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "sg-nmg,droop-only")]
        controllers: Vec<ControllerKind>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a PPI or PPF scenario suite.
    Gen {
        #[arg(value_parser = ["ppi", "ppf"])]
        kind: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, env = "NMG_SEED", default_value_t = 0)]
        seed: u64,
        /// Pulse delay range for PPF suites, as lo,hi (s).
        #[arg(long, value_delimiter = ',')]
        delta_t: Option<Vec<f64>>,
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
        Format::Svg => "svg",
    }
}

fn load_suite(dir: &Path, controller: Option<ControllerKind>) -> Result<Vec<ScenarioSpec>> {
    let specs = scenario::load_suite(dir)?;
    if specs.is_empty() {
        bail!(NmgError::InvalidParams(format!(
            "no scenarios in {}",
            dir.display()
        )));
    }
    Ok(specs
        .into_iter()
        .map(|s| match controller {
            Some(c) => s.with_controller(c),
            None => s,
        })
        .collect())
}

/// Write traces and a KPI summary; returns the summary.
fn emit_runs(
    specs: &[ScenarioSpec],
    opts: &RunOptions,
    parallel: usize,
    output: &Output,
) -> Result<Vec<(String, report::KpiReport)>> {
    let outs = scenario::run_batch(specs, opts, parallel)?;
    fs::create_dir_all(&output.out)
        .with_context(|| format!("creating {}", output.out.display()))?;
    let mut summary = Vec::with_capacity(specs.len());
    for (spec, out) in specs.iter().zip(&outs) {
        let path = output
            .out
            .join(format!("{}.{}", spec.name, extension(output.format)));
        report::emit_trace(&out.trace, output.format, &path)?;
        summary.push((spec.name.clone(), scenario::kpis(spec, &out.trace)?));
    }
    report::emit_json(&summary, &output.out.join("kpis.json"))?;
    Ok(summary)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            spec,
            controller,
            output,
        } => {
            let mut s = ScenarioSpec::load(&spec)?;
            if let Some(c) = controller {
                s = s.with_controller(c);
            }
            let summary = emit_runs(&[s], &RunOptions::default(), 1, &output)?;
            println!("{}", serde_json::to_string_pretty(&summary[0].1)?);
        }
        Command::Suite {
            dir,
            controller,
            parallel,
            output,
        } => {
            let specs = load_suite(&dir, controller)?;
            let summary = emit_runs(&specs, &RunOptions::default(), parallel, &output)?;
            println!("{} scenarios -> {}", summary.len(), output.out.display());
        }
        Command::Train {
            dir,
            episodes,
            seed,
            epsilon,
            alpha,
            policy_out,
        } => {
            let specs = load_suite(&dir, None)?;
            let mut policy = PolicyState::learned(default_bins(), epsilon, alpha, seed);
            let rewards = scenario::train_policy(
                &specs,
                &mut policy,
                episodes,
                seed,
                &RewardWeights::default(),
            )?;
            if let Some(parent) = policy_out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&policy_out, policy.to_json()?)
                .with_context(|| format!("writing {}", policy_out.display()))?;
            let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
            println!(
                "{episodes} episodes, mean reward {mean:.4} -> {}",
                policy_out.display()
            );
        }
        Command::Eval {
            dir,
            policy,
            parallel,
            output,
        } => {
            let text = fs::read_to_string(&policy).map_err(|e| NmgError::io(&policy, e))?;
            let mut policy = PolicyState::from_json(&text)?;
            policy.epsilon = 0.0;
            let specs = load_suite(&dir, Some(ControllerKind::SgNmg))?;
            let opts = RunOptions {
                policy: Some(policy),
                ..RunOptions::default()
            };
            let summary = emit_runs(&specs, &opts, parallel, &output)?;
            println!("{} scenarios -> {}", summary.len(), output.out.display());
        }
        Command::Compare {
            dir,
            controllers,
            parallel,
            out,
        } => {
            let specs = load_suite(&dir, None)?;
            let reports = controllers
                .iter()
                .map(|c| scenario::evaluate_suite(&specs, *c, &RunOptions::default(), parallel))
                .collect::<nmg_core::Result<Vec<ControllerReports>>>()?;
            let table = report::compare(&reports)?;
            fs::create_dir_all(&out)?;
            report::emit_json(&table, &out.join("comparison.json"))?;
            println!("{}", serde_json::to_string_pretty(&table.means)?);
        }
        Command::Gen {
            kind,
            n,
            seed,
            delta_t,
            out,
        } => {
            let specs = if kind == "ppi" {
                scenario::generate_ppi_suite(seed, n)
            } else {
                let range = match delta_t.as_deref() {
                    None => DEFAULT_DELTA_T_RANGE,
                    Some(&[lo, hi]) => (lo, hi),
                    Some(_) => bail!(NmgError::Parse("--delta-t takes lo,hi".into())),
                };
                scenario::generate_ppf_suite(seed, n, range)?
            };
            scenario::save_suite(&specs, &out)?;
            println!("{} {kind} scenarios -> {}", specs.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<NmgError>().map_or("error", |n| n.kind());
            let record = serde_json::json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
