//! `avgtd` command line.
//!
//! Exit codes: 0 on success, 1 on invalid input (including usage errors and
//! chains that fail validation), 2 when something fails while running.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use avgtd_core::geometry::spectral_report;
use avgtd_core::mdp::analyze;
use avgtd_core::{projected_bellman_residual, EvalProblem, FeatureMap, PolicyMarkovChain};
use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::envs::generate_environment;
use crate::error::{config, HarnessError, Result};
use crate::experiment::{build_problem, run_experiment, Problem};
use crate::mdpfile::MdpFile;

#[derive(Debug, Parser)]
#[command(name = "avgtd", version, about = "Average-reward TD policy evaluation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config or MDP interchange file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print theta*, W* and g.
    Solve,
    /// Print condition numbers, contraction factor and projection radii.
    Condition,
    /// Run an experiment config.
    Run,
    /// Run every algorithm against every schedule in `schedules`.
    Sweep,
    /// Check a chain or config.
    Validate,
}

/// What `--config` pointed at.
enum Input {
    Experiment(Box<ExperimentConfig>),
    Mdp(MdpFile),
}

fn read_input(path: &Path) -> Result<Input> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let parse = |source| HarnessError::Parse {
        path: path.to_path_buf(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse)?;
    if value.get("environment").is_some() {
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(parse)?;
        Ok(Input::Experiment(Box::new(cfg)))
    } else {
        Ok(Input::Mdp(serde_json::from_value(value).map_err(parse)?))
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e);
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e);
                    1
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e);
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let Some(path) = cli.config.as_deref() else {
        return config("--config <path> is required");
    };
    let input = read_input(path)?;
    match cli.command {
        Command::Validate => validate(input, out),
        Command::Solve => {
            let problem = problem_for(input, cli)?;
            print_solution(&problem.eval, out)?;
            Ok(0)
        }
        Command::Condition => {
            let problem = problem_for(input, cli)?;
            let r = &problem.report;
            let lines = [
                ("eta1", Some(r.eta1)),
                ("eta2", r.eta2),
                ("eta3", Some(r.eta3)),
                ("eta_prime", Some(r.eta_prime)),
                ("omega", Some(r.omega)),
                ("R_w", Some(r.r_w)),
                ("R_theta", Some(r.r_theta)),
            ];
            for (k, v) in lines {
                match v {
                    Some(v) => w(out, format!("{} {:.12e}", k, v))?,
                    None => w(out, format!("{} undefined", k))?,
                }
            }
            Ok(0)
        }
        Command::Run | Command::Sweep => {
            let Input::Experiment(cfg) = input else {
                return config("run and sweep need an experiment config");
            };
            let mut cfg = apply_overrides(*cfg, cli);
            if matches!(cli.command, Command::Sweep) {
                cfg = cfg.expand_sweep()?;
            }
            let out_dir = cfg.output_dir.clone();
            let summary = run_experiment(&cfg, &out_dir)?;
            if !cli.quiet {
                for r in &summary.runs {
                    let status = match &r.failure {
                        Some(f) => format!("FAILED ({})", f),
                        None => format!("final err_param {:.6e}", r.final_err_param.unwrap_or(f64::NAN)),
                    };
                    w(out, format!("{} seed {}: {}", r.algorithm, r.seed, status))?;
                }
                w(out, format!("wrote {}", out_dir.display()))?;
            }
            Ok(if summary.failed() > 0 { 2 } else { 0 })
        }
    }
}

fn apply_overrides(mut cfg: ExperimentConfig, cli: &Cli) -> ExperimentConfig {
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = &cli.seeds {
        cfg.seeds = s.clone();
    }
    cfg
}

fn problem_for(input: Input, cli: &Cli) -> Result<Problem> {
    match input {
        Input::Experiment(cfg) => {
            let cfg = apply_overrides(*cfg, cli);
            cfg.validate()?;
            build_problem(&cfg)
        }
        Input::Mdp(file) => {
            let chain = checked_chain(&file.to_chain()?)?;
            let analysis = analyze(&chain)?;
            let features = FeatureMap::tabular(chain.n());
            let report = spectral_report(&chain, &analysis, &features)?;
            let eval = EvalProblem::assemble(chain, analysis, features)?;
            let description = file.name.clone().unwrap_or_else(|| "chain from file".into());
            Ok(Problem {
                eval,
                report,
                description,
            })
        }
    }
}

fn checked_chain(chain: &PolicyMarkovChain) -> Result<PolicyMarkovChain> {
    let report = chain.validate();
    if report.passes() {
        Ok(chain.clone())
    } else {
        Err(avgtd_core::Error::Structural(format!("chain check {}", report)).into())
    }
}

fn validate(input: Input, out: &mut dyn Write) -> Result<i32> {
    let chain = match input {
        Input::Mdp(file) => file.to_chain()?,
        Input::Experiment(cfg) => {
            cfg.validate()?;
            w(out, "config: ok")?;
            generate_environment(&cfg.environment, cfg.epsilon)?
        }
    };
    let report = chain.validate();
    w(out, format!("chain: {}", report))?;
    Ok(if report.passes() { 0 } else { 1 })
}

fn print_solution(eval: &EvalProblem, out: &mut dyn Write) -> Result<()> {
    w(out, format!("n {}", eval.chain.n()))?;
    w(out, format!("d {}", eval.features.d()))?;
    w(out, format!("g {:.12e}", eval.analysis.g))?;
    w(out, format!("theta_star {}", fmt_vec(&eval.theta_star)))?;
    w(out, format!("W_star {}", fmt_vec(&eval.analysis.w_star)))?;
    w(out, format!("residual {:.3e}", projected_bellman_residual(eval)))
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.12e}", x)).collect();
    format!("[{}]", parts.join(", "))
}

fn w(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| HarnessError::io("<stdout>", e))
}
