//! Seeded multi-run experiments and their on-disk records.
//!
//! Layout of an output directory:
//!
//! ```text
//! runs/<algorithm>_seed<seed>.csv
//! aggregate.csv
//! metadata.json
//! ```
//!
//! Every job with the same seed sees the same random stream, whatever the
//! algorithm. Jobs run in parallel; files are written afterwards in job order
//! so repeated runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use avgtd_core::geometry::spectral_report;
use avgtd_core::mdp::analyze;
use avgtd_core::td::project_to_ball;
use avgtd_core::{
    CoupledBaseline, DoubleChainState, EvalProblem, RewardEstimator, SamplingMode, SingleChainState, SpectralReport,
    TrajectorySampler,
};
use log::{debug, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, AlgorithmSpec, ExperimentConfig, InitSpec, Sampling};
use crate::envs::{describe, generate_environment};
use crate::error::{config, HarnessError, Result};
use crate::features::generate_features;

pub const CSV_HEADER: &str = "t,seed,algorithm,err_param,err_value,err_mod_const,reward_err";
pub const AGGREGATE_HEADER: &str = "t,algorithm,runs,err_param_mean,err_param_std,err_value_mean,err_value_std,\
err_mod_const_mean,err_mod_const_std,reward_err_mean,reward_err_std";

/// A fully solved evaluation problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub eval: EvalProblem,
    pub report: SpectralReport,
    pub description: String,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let chain = generate_environment(&cfg.environment, cfg.epsilon)?;
    let validation = chain.validate();
    if !validation.passes() {
        return Err(avgtd_core::Error::Structural(format!("chain check {}", validation)).into());
    }
    if cfg.start_state >= chain.n() {
        return config(format!(
            "start_state {} out of range for {} states",
            cfg.start_state,
            chain.n()
        ));
    }
    let analysis = analyze(&chain)?;
    let features = generate_features(&analysis, &cfg.features)?;
    let report = spectral_report(&chain, &analysis, &features)?;
    if report.eta1 < 0.5 * report.eta3 - 1e-12 {
        warn!("eta1 = {} below eta3 / 2 = {}", report.eta1, 0.5 * report.eta3);
    }
    let eval = EvalProblem::assemble(chain, analysis, features)?;
    Ok(Problem {
        eval,
        report,
        description: describe(&cfg.environment),
    })
}

/// `0` followed by about `points` geometrically spaced steps ending at `steps`.
pub fn log_grid(steps: u64, points: usize) -> Vec<u64> {
    let mut ts = vec![0];
    if points <= 1 {
        ts.push(steps);
    } else {
        let top = steps as f64;
        for k in 0..points {
            let t = top.powf(k as f64 / (points - 1) as f64).round() as u64;
            ts.push(t.clamp(1, steps));
        }
    }
    ts.dedup();
    if *ts.last().unwrap() != steps {
        ts.push(steps);
    }
    ts
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: u64,
    pub seed: u64,
    pub algorithm: String,
    pub err_param: f64,
    pub err_value: f64,
    pub err_mod_const: f64,
    pub reward_err: Option<f64>,
}

/// `(||theta - theta*||, ||Phi theta - W*||, ||(I - ee^T/n)(Phi theta - W*)||)`
pub fn errors(problem: &EvalProblem, theta: &DVector<f64>) -> (f64, f64, f64) {
    let err_param = (theta - &problem.theta_star).norm();
    let diff = problem.features.values(theta) - &problem.analysis.w_star;
    let mean = diff.mean();
    let centered = diff.add_scalar(-mean);
    (err_param, diff.norm(), centered.norm())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub label: String,
    pub seed: u64,
    pub rows: Vec<RunRecord>,
    pub theta: DVector<f64>,
    pub failure: Option<String>,
}

enum Learner {
    Double(DoubleChainState),
    Single(SingleChainState),
    Baseline(CoupledBaseline),
}

impl Learner {
    fn theta(&self) -> &DVector<f64> {
        match self {
            Learner::Double(l) => &l.theta,
            Learner::Single(l) => &l.theta,
            Learner::Baseline(l) => &l.theta,
        }
    }
}

/// Runs one `(algorithm, seed)` job. A failing step ends the run early and
/// is reported in `failure`; the rows logged so far are kept.
pub fn run_one(problem: &Problem, cfg: &ExperimentConfig, algo: &AlgorithmSpec, seed: u64) -> Result<RunOutput> {
    let eval = &problem.eval;
    let d = eval.features.d();
    let rewards = eval.chain.rewards();
    let g = eval.analysis.g;
    let mut theta0 = match cfg.theta0 {
        InitSpec::Zero => DVector::zeros(d),
        InitSpec::ThetaStar => eval.theta_star.clone(),
    };

    let mut learner = match algo.name {
        Algorithm::DoubleChain => Learner::Double(DoubleChainState::new(theta0)),
        Algorithm::SingleChain => {
            project_to_ball(&mut theta0, problem.report.r_theta);
            Learner::Single(SingleChainState::new(
                theta0,
                DVector::zeros(d),
                problem.report.r_theta,
                problem.report.r_w,
            )?)
        }
        Algorithm::CoupledBaseline => Learner::Baseline(CoupledBaseline::new(theta0, 0.0)),
    };
    let mode = match (cfg.sampling, algo.name) {
        (Sampling::MeanField, Algorithm::DoubleChain) => None,
        (Sampling::MeanField, other) => {
            return config(format!(
                "mean_field sampling only drives double_chain, not {}",
                other.as_str()
            ))
        }
        (Sampling::Iid, _) => Some(SamplingMode::Iid),
        (Sampling::Markov, Algorithm::DoubleChain) => Some(SamplingMode::MarkovDouble),
        (Sampling::Markov, _) => Some(SamplingMode::MarkovSingle),
    };
    let mut sampler = match mode {
        Some(m) => Some(TrajectorySampler::new(
            m,
            &eval.chain,
            &eval.analysis.mu,
            seed,
            0,
            cfg.start_state,
        )?),
        None => None,
    };

    let label = algo.label();
    let grid = log_grid(cfg.steps, cfg.log_points);
    let mut rows = Vec::with_capacity(grid.len());
    let mut reward = RewardEstimator::new();
    let mut failure = None;
    let mut next_log = 0;
    for t in 0..=cfg.steps {
        if grid.get(next_log) == Some(&t) {
            next_log += 1;
            let (err_param, err_value, err_mod_const) = errors(eval, learner.theta());
            let reward_err = match &learner {
                Learner::Baseline(b) if t > 0 => Some((b.g_est - g).abs()),
                _ => reward.estimate().map(|r| (r - g).abs()),
            };
            rows.push(RunRecord {
                t,
                seed,
                algorithm: label.clone(),
                err_param,
                err_value,
                err_mod_const,
                reward_err,
            });
        }
        if t == cfg.steps {
            break;
        }
        let (alpha, beta) = algo.schedule.step_size(t);
        let stepped = match sampler.as_mut() {
            None => {
                let Learner::Double(l) = &mut learner else {
                    unreachable!()
                };
                let field = eval.expected_update_field(&l.theta);
                l.mean_field_step(&field, alpha)
            }
            Some(smp) => {
                let sample = smp.next_transition();
                reward.update(rewards[sample.s]);
                match &mut learner {
                    Learner::Double(l) => l.step(sample, rewards, &eval.features, alpha),
                    Learner::Single(l) => l.step(sample, rewards, &eval.features, alpha, beta),
                    Learner::Baseline(l) => l.step(sample, rewards, &eval.features, alpha),
                }
            }
        };
        if let Err(e) = stepped {
            warn!("{} seed {} aborted: {}", label, seed, e);
            failure = Some(e.to_string());
            break;
        }
    }
    debug!("{} seed {} finished with {} rows", label, seed, rows.len());
    Ok(RunOutput {
        label,
        seed,
        rows,
        theta: learner.theta().clone(),
        failure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub file: String,
    pub final_err_param: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub runs: Vec<RunSummary>,
    pub report: SpectralReport,
}

impl ExperimentSummary {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.failure.is_some()).count()
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: u32,
    environment: &'a str,
    n: usize,
    d: usize,
    g: f64,
    mu: Vec<f64>,
    w_star: Vec<f64>,
    theta_star: Vec<f64>,
    fixed_point_residual: f64,
    mixing: Mixing,
    spectral: SpectralReport,
    eta1_at_least_half_eta3: bool,
    runs: &'a [RunSummary],
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Mixing {
    c: f64,
    beta: f64,
}

pub fn run_file_name(label: &str, seed: u64) -> String {
    format!("{}_seed{}.csv", label, seed)
}

/// Runs every `(algorithm, seed)` pair and writes the results to `out_dir`.
/// Only problem construction and I/O errors are returned; failing runs are
/// recorded in the metadata.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let jobs: Vec<(&AlgorithmSpec, u64)> = cfg
        .algorithms
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let outputs: Vec<Result<RunOutput>> = jobs
        .par_iter()
        .map(|&(algo, seed)| run_one(&problem, cfg, algo, seed))
        .collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| HarnessError::io(&runs_dir, e))?;
    let mut runs = Vec::with_capacity(outputs.len());
    for out in &outputs {
        let name = run_file_name(&out.label, out.seed);
        write_records(&runs_dir.join(&name), &out.rows)?;
        runs.push(RunSummary {
            algorithm: out.label.clone(),
            seed: out.seed,
            file: format!("runs/{}", name),
            final_err_param: out.rows.last().map(|r| r.err_param),
            failure: out.failure.clone(),
        });
    }
    write_aggregate(&out_dir.join("aggregate.csv"), &outputs)?;

    let eval = &problem.eval;
    let meta = Metadata {
        version: 1,
        environment: &problem.description,
        n: eval.chain.n(),
        d: eval.features.d(),
        g: eval.analysis.g,
        mu: eval.analysis.mu.iter().copied().collect(),
        w_star: eval.analysis.w_star.iter().copied().collect(),
        theta_star: eval.theta_star.iter().copied().collect(),
        fixed_point_residual: avgtd_core::projected_bellman_residual(eval),
        mixing: Mixing {
            c: eval.analysis.mix.c,
            beta: eval.analysis.mix.beta,
        },
        spectral: problem.report,
        eta1_at_least_half_eta3: problem.report.eta1 >= 0.5 * problem.report.eta3 - 1e-12,
        runs: &runs,
        config: cfg,
    };
    let meta_path = out_dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta)? + "\n";
    fs::write(&meta_path, text).map_err(|e| HarnessError::io(&meta_path, e))?;

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        runs,
        report: problem.report,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn write_records(path: &Path, rows: &[RunRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?)
}

/// One aggregate row: per-logpoint mean and sample standard deviation across
/// the seeds that reached `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub t: u64,
    pub algorithm: String,
    pub runs: usize,
    pub err_param_mean: f64,
    pub err_param_std: f64,
    pub err_value_mean: f64,
    pub err_value_std: f64,
    pub err_mod_const_mean: f64,
    pub err_mod_const_std: f64,
    pub reward_err_mean: Option<f64>,
    pub reward_err_std: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(outputs: &[RunOutput]) -> Vec<AggregateRecord> {
    let mut labels: Vec<&str> = Vec::new();
    for o in outputs {
        if !labels.contains(&o.label.as_str()) {
            labels.push(&o.label);
        }
    }
    let mut out = Vec::new();
    for label in labels {
        let mut by_t: BTreeMap<u64, Vec<&RunRecord>> = BTreeMap::new();
        for o in outputs.iter().filter(|o| o.label == label) {
            for r in &o.rows {
                by_t.entry(r.t).or_default().push(r);
            }
        }
        for (t, rows) in by_t {
            let col = |f: fn(&RunRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (pm, ps) = mean_std(&col(|r| r.err_param));
            let (vm, vs) = mean_std(&col(|r| r.err_value));
            let (cm, cs) = mean_std(&col(|r| r.err_mod_const));
            let rewards: Vec<f64> = rows.iter().filter_map(|r| r.reward_err).collect();
            let (rm, rs) = if rewards.len() == rows.len() {
                let (m, s) = mean_std(&rewards);
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            out.push(AggregateRecord {
                t,
                algorithm: label.to_string(),
                runs: rows.len(),
                err_param_mean: pm,
                err_param_std: ps,
                err_value_mean: vm,
                err_value_std: vs,
                err_mod_const_mean: cm,
                err_mod_const_std: cs,
                reward_err_mean: rm,
                reward_err_std: rs,
            });
        }
    }
    out
}

fn write_aggregate(path: &Path, outputs: &[RunOutput]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_HEADER.split(','))?;
    for r in aggregate(outputs) {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
