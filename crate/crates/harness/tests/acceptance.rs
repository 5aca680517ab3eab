//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use avgtd_core::geometry::{self, dirichlet_seminorm};
use avgtd_core::mdp::analyze;
use avgtd_core::td::double_chain_direction;
use avgtd_core::{
    projected_bellman_residual, EvalProblem, FeatureMap, PolicyMarkovChain, RewardEstimator, SamplingMode,
    SingleChainState, StepSchedule, TrajectorySampler,
};
use avgtd_harness::experiment::{build_problem, run_one};
use avgtd_harness::{Algorithm, AlgorithmSpec, EnvironmentSpec, ExperimentConfig, FeatureSpec, InitSpec, Sampling};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

type Rng64 = Xoshiro256StarStar;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_chain(rng: &mut Rng64, n: usize) -> PolicyMarkovChain {
    let mut p = DMatrix::from_fn(n, n, |_, _| -(1.0 - rng.random::<f64>()).ln());
    for i in 0..n {
        let s: f64 = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / s);
        let resid = 1.0 - p.row(i).sum();
        p[(i, i)] += resid;
    }
    let r = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    PolicyMarkovChain::new(p, r).unwrap()
}

fn random_features(rng: &mut Rng64, n: usize, d: usize) -> FeatureMap {
    loop {
        let mut phi = DMatrix::from_fn(n, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let m = phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        phi /= m;
        if let Ok(f) = FeatureMap::new(phi) {
            return f;
        }
    }
}

fn gaussian(rng: &mut Rng64) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_vec(rng: &mut Rng64, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| gaussian(rng))
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn random_walk_config(algorithm: Algorithm, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        version: 1,
        environment: EnvironmentSpec::RandomWalk { n: 5 },
        epsilon: None,
        features: FeatureSpec::Tabular,
        algorithms: vec![AlgorithmSpec {
            name: algorithm,
            schedule: StepSchedule::decaying(150.0, 1000.0, 1.0, 1.0).unwrap(),
            label: None,
        }],
        schedules: vec![],
        steps: 150_000,
        seeds,
        sampling: Sampling::Markov,
        output_dir: "out".into(),
        log_points: 200,
        start_state: 0,
        theta0: InitSpec::Zero,
    }
}

fn fixed_point_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng64::seed_from_u64(101);
    let mut worst_resid: f64 = 0.0;
    let mut worst_tab: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(3..=30);
        let d = rng.random_range(1..=n);
        let chain = random_chain(&mut rng, n);
        let analysis = analyze(&chain).unwrap();
        let features = random_features(&mut rng, n, d);
        let problem = EvalProblem::assemble(chain.clone(), analysis.clone(), features).unwrap();
        worst_resid = worst_resid.max(projected_bellman_residual(&problem));
        let tab = EvalProblem::assemble(chain, analysis, FeatureMap::tabular(n)).unwrap();
        worst_tab = worst_tab.max((&tab.theta_star - &tab.analysis.w_star).amax());
        worst_resid = worst_resid.max(projected_bellman_residual(&tab));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_resid <= 1e-9 && worst_tab <= 1e-8 && secs < 5.0,
        format!(
            "max residual {:.2e} (<= 1e-9), max |theta* - W*| {:.2e} (<= 1e-8), {:.2} s (< 5 s)",
            worst_resid, worst_tab, secs
        ),
    )
}

fn gradient_splitting() -> Outcome {
    let mut rng = Rng64::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let d = rng.random_range(1..=n);
        let chain = random_chain(&mut rng, n);
        let mu = analyze(&chain).unwrap().mu;
        let features = random_features(&mut rng, n, d);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let theta = gaussian_vec(&mut rng, d) * scale;
        let phi = features.matrix();
        let v = phi * &theta;
        let form = (phi.transpose() * geometry::dirichlet_operator(&chain, &mu) * phi * &theta).dot(&theta);
        let dir = dirichlet_seminorm(&v, &chain, &mu).unwrap().powi(2);
        worst = worst.max((form - dir).abs() / (1.0 + theta.norm_squared()));
    }
    outcome(
        worst <= 1e-10,
        format!(
            "max |quadratic form - Dirichlet^2| / (1 + |theta|^2) = {:.2e} (<= 1e-10)",
            worst
        ),
    )
}

fn condition_inequalities() -> Outcome {
    let mut rng = Rng64::seed_from_u64(303);
    let mut min_gap13 = f64::INFINITY;
    let mut min_gap12 = f64::INFINITY;
    let mut max_omega: f64 = 0.0;
    let mut general_violations = 0;
    for _ in 0..100 {
        let n = rng.random_range(3..=25);
        let d = rng.random_range(2..=n);
        let chain = random_chain(&mut rng, n);
        let a = analyze(&chain).unwrap();
        let mu = &a.mu;
        let features = random_features(&mut rng, n, d);
        let e1 = geometry::eta1(&features, &chain, mu).unwrap();
        let e3 = geometry::eta3(&features, &chain, mu).unwrap();
        min_gap13 = min_gap13.min(e1 - 0.5 * e3);
        max_omega = max_omega.max(geometry::contraction_factor(&chain, mu).unwrap());

        let factor = a.mu_min / (n as f64 * a.mu_max * mu.norm_squared());
        let tab = FeatureMap::tabular(n);
        let t1 = geometry::eta1(&tab, &chain, mu).unwrap();
        let t2 = geometry::eta2(&tab, &chain, mu).unwrap();
        min_gap12 = min_gap12.min(t1 - factor * t2);

        let g2 = geometry::eta2(&features, &chain, mu).unwrap();
        if e1 < factor * g2 - 1e-12 {
            general_violations += 1;
        }
    }
    println!(
        "  note: the eta2 comparison is a statement about tabular features; \
         with generic features it failed on {} of 100 instances",
        general_violations
    );
    outcome(
        min_gap13 >= -1e-12 && min_gap12 >= -1e-12 && max_omega < 1.0,
        format!(
            "min(eta1 - eta3/2) = {:.2e}, min(eta1 - c*eta2) [tabular] = {:.2e}, max omega = {:.4}",
            min_gap13, min_gap12, max_omega
        ),
    )
}

fn brute_force_oracle() -> Outcome {
    const SAMPLES: usize = 100_000;
    let mut rng = Rng64::seed_from_u64(404);
    let mut worst: f64 = f64::INFINITY;
    let mut closeness: f64 = 0.0;
    for _ in 0..5 {
        let n = rng.random_range(3..=6);
        let d = rng.random_range(2..=n.min(3));
        let chain = random_chain(&mut rng, n);
        let mu = analyze(&chain).unwrap().mu;
        let features = random_features(&mut rng, n, d);
        let phi = features.matrix();
        let e1 = geometry::eta1(&features, &chain, &mu).unwrap();
        let e2 = geometry::eta2(&features, &chain, &mu).unwrap();
        let gap = geometry::centered_dirichlet_gap(&chain, &mu).unwrap();
        let ep = geometry::eta_prime(&features, &mu).unwrap();
        // Quadratic forms evaluated without the symmetrized matrices.
        let l = DMatrix::from_diagonal(&mu) * (DMatrix::identity(n, n) - chain.transition());
        let ones = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let (mut b1, mut b2, mut b3, mut bp) = (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for _ in 0..SAMPLES {
            let x = gaussian_vec(&mut rng, d).normalize();
            let v = phi * &x;
            let dir = dirichlet_seminorm(&v, &chain, &mu).unwrap().powi(2);
            b1 = b1.min(dir + mu.dot(&v).powi(2));
            bp = bp.min(v.component_mul(&v).dot(&mu));

            let mut y = gaussian_vec(&mut rng, d);
            y -= &ones * ones.dot(&y);
            let y = y.normalize();
            b2 = b2.min(dirichlet_seminorm(&(phi * &y), &chain, &mu).unwrap().powi(2));

            let mut f = gaussian_vec(&mut rng, n);
            f.add_scalar_mut(-mu.dot(&f));
            let f = &f / f.component_mul(&f).dot(&mu).sqrt();
            b3 = b3.min((&l * &f).dot(&f));
        }
        for (brute, eig) in [(b1, e1), (b2, e2), (b3, gap), (bp, ep)] {
            worst = worst.min(brute - eig);
            closeness = closeness.max((brute - eig) / eig.max(1e-12));
        }
    }
    outcome(
        worst >= -1e-8,
        format!(
            "min(brute - eigensolver) = {:.2e} (>= -1e-8) over 5 instances x 1e5 vectors; worst relative excess {:.2e}",
            worst, closeness
        ),
    )
}

/// Mean over seeds of `err_param^2` at each logged step.
fn mean_sq_errors(cfg: &ExperimentConfig) -> Vec<(u64, f64)> {
    let problem = build_problem(cfg).unwrap();
    let runs: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&s| run_one(&problem, cfg, &cfg.algorithms[0], s).unwrap())
        .collect();
    assert!(runs.iter().all(|r| r.failure.is_none()));
    let k = cfg.seeds.len() as f64;
    (0..runs[0].rows.len())
        .map(|i| {
            (
                runs[0].rows[i].t,
                runs.iter().map(|r| r.rows[i].err_param.powi(2)).sum::<f64>() / k,
            )
        })
        .collect()
}

fn double_chain_rate() -> Outcome {
    let start = Instant::now();
    let cfg = random_walk_config(Algorithm::DoubleChain, (0..10).collect());
    let curve = mean_sq_errors(&cfg);
    let window: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(t, _)| (10_000..=150_000).contains(t))
        .map(|&(t, e)| (t as f64, e))
        .collect();
    let slope = log_log_slope(&window);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (-1.4..=-0.6).contains(&slope) && secs < 60.0,
        format!(
            "slope {:.3} over {} log points in [1e4, 1.5e5] (in [-1.4, -0.6]), {:.1} s (< 60 s)",
            slope,
            window.len(),
            secs
        ),
    )
}

/// Single-chain learner driven directly so every step can be checked.
fn single_chain_runs() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = random_walk_config(Algorithm::SingleChain, (0..10).collect());
    let problem = build_problem(&cfg).unwrap();
    let eval = &problem.eval;
    let radii = geometry::projection_radii(
        &eval.chain,
        &eval.analysis.mu,
        &eval.features,
        eval.analysis.mix.c,
        eval.analysis.mix.beta,
        problem.report.omega,
    )
    .unwrap();
    let schedule = cfg.algorithms[0].schedule;
    let d = eval.features.d();
    let rewards = eval.chain.rewards();
    let mut at_1000 = 0.0;
    let mut at_end = 0.0;
    let mut violations = 0u64;
    let mut checked = 0u64;
    for &seed in &cfg.seeds {
        let mut sampler =
            TrajectorySampler::new(SamplingMode::MarkovSingle, &eval.chain, &eval.analysis.mu, seed, 0, 0).unwrap();
        let mut state = SingleChainState::zeros(d, radii.r_theta, radii.r_w).unwrap();
        for t in 0..cfg.steps {
            let (alpha, beta) = schedule.step_size(t);
            state
                .step(sampler.next_transition(), rewards, &eval.features, alpha, beta)
                .unwrap();
            checked += 1;
            if state.theta.norm() > radii.r_theta || state.w.norm() > radii.r_w {
                violations += 1;
            }
            if state.t == 1000 {
                at_1000 += (&state.theta - &eval.theta_star).norm_squared();
            }
        }
        at_end += (&state.theta - &eval.theta_star).norm_squared();
    }
    let k = cfg.seeds.len() as f64;
    let (at_1000, at_end) = (at_1000 / k, at_end / k);
    let secs = start.elapsed().as_secs_f64();
    (
        outcome(
            at_end <= 0.01 * at_1000 && secs < 120.0,
            format!(
                "mean err^2 {:.3e} at T vs {:.3e} at t = 1000 (ratio {:.4} <= 0.01), R_theta = {:.2}, {:.1} s (< 120 s)",
                at_end,
                at_1000,
                at_end / at_1000,
                radii.r_theta,
                secs
            ),
        ),
        outcome(violations == 0, format!("{} of {} steps outside the balls (R_w = {})", violations, checked, radii.r_w)),
    )
}

fn reward_estimator_rate() -> Outcome {
    let mut rng = Rng64::seed_from_u64(808);
    let chain = random_chain(&mut rng, 5);
    let a = analyze(&chain).unwrap();
    let steps = 100_000u64;
    let grid: Vec<u64> = (0..=40)
        .map(|k| (1000.0 * 100f64.powf(k as f64 / 40.0)).round() as u64)
        .collect();
    let mut mse = vec![0.0; grid.len()];
    for seed in 0..100u64 {
        let mut sampler = TrajectorySampler::new(SamplingMode::MarkovSingle, &chain, &a.mu, seed, 0, 0).unwrap();
        let mut est = RewardEstimator::new();
        let mut next = 0;
        for t in 1..=steps {
            est.update(chain.rewards()[sampler.next_transition().s]);
            if next < grid.len() && grid[next] == t {
                mse[next] += (est.estimate().unwrap() - a.g).powi(2) / 100.0;
                next += 1;
            }
        }
    }
    let pts: Vec<(f64, f64)> = grid.iter().zip(&mse).map(|(&t, &m)| (t as f64, m)).collect();
    let slope = log_log_slope(&pts);
    outcome(
        (-1.4..=-0.6).contains(&slope),
        format!("slope {:.3} over t in [1e3, 1e5], 100 seeds (in [-1.4, -0.6])", slope),
    )
}

fn unbiasedness() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let mut rng = Rng64::seed_from_u64(909);
    let n = 6;
    let d = 3;
    let chain = random_chain(&mut rng, n);
    let analysis = analyze(&chain).unwrap();
    let features = random_features(&mut rng, n, d);
    let problem = EvalProblem::assemble(chain, analysis, features).unwrap();
    let mut worst_z: f64 = 0.0;
    for k in 0..5u64 {
        let theta = gaussian_vec(&mut rng, d);
        let field = problem.expected_update_field(&theta);
        let mut sampler =
            TrajectorySampler::new(SamplingMode::Iid, &problem.chain, &problem.analysis.mu, 909, k, 0).unwrap();
        let mut sum = DVector::zeros(d);
        let mut sum_sq = DVector::zeros(d);
        for _ in 0..DRAWS {
            let s = sampler.next_transition();
            let dir = double_chain_direction(
                &theta,
                s.s,
                s.s_next,
                s.s_hat.unwrap(),
                problem.chain.rewards(),
                &problem.features,
            )
            .unwrap();
            sum += &dir;
            sum_sq += dir.component_mul(&dir);
        }
        let m = DRAWS as f64;
        let mean = &sum / m;
        for i in 0..d {
            let var = (sum_sq[i] / m - mean[i] * mean[i]) * m / (m - 1.0);
            let se = (var / m).sqrt();
            worst_z = worst_z.max((mean[i] - field[i]).abs() / se);
        }
    }
    outcome(
        worst_z <= 3.0,
        format!(
            "max |mean - field| / SE = {:.2} over 5 thetas x {} coordinates (<= 3)",
            worst_z, d
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = random_walk_config(Algorithm::DoubleChain, vec![3, 4]);
    cfg.steps = 20_000;
    cfg.algorithms.push(AlgorithmSpec {
        name: Algorithm::SingleChain,
        schedule: StepSchedule::decaying(150.0, 1000.0, 1.0, 1.0).unwrap(),
        label: None,
    });
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for out in &outs {
        let status = Command::new(env!("CARGO_BIN_EXE_avgtd"))
            .args(["run", "--quiet", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("run exited with {}", status));
        }
    }
    let files = [
        "runs/double_chain_seed3.csv",
        "runs/double_chain_seed4.csv",
        "runs/single_chain_seed3.csv",
        "runs/single_chain_seed4.csv",
        "aggregate.csv",
    ];
    let read = |root: &Path, f: &str| fs::read(root.join(f)).unwrap();
    let same = files.iter().all(|f| read(&outs[0], f) == read(&outs[1], f));
    outcome(same, format!("{} CSV files compared byte for byte", files.len()))
}

fn ergodicity_patch() -> Outcome {
    let rows = vec![
        vec![0.0, 0.0, 1.0, 0.0, 0.0],
        vec![0.5, 0.5, 0.0, 0.0, 0.0],
        vec![0.2, 0.2, 0.2, 0.2, 0.2],
        vec![0.0, 0.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.0, 0.0, 1.0, 0.0],
    ];
    let chain = PolicyMarkovChain::from_rows(&rows, &[0.0; 5]).unwrap();
    let patched = chain.make_ergodic(0.1).unwrap();
    let row0: Vec<f64> = patched.transition().row(0).iter().copied().collect();
    let exact = row0 == [0.025, 0.025, 0.9, 0.025, 0.025];

    let mut rng = Rng64::seed_from_u64(1111);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=30);
        let sparsity = rng.random::<f64>();
        let seed = rng.random::<u64>();
        let eps = rng.random_range(1e-4..0.5);
        let c = avgtd_harness::envs::random_mdp(n, sparsity, seed)
            .unwrap()
            .make_ergodic(eps)
            .unwrap();
        for i in 0..n {
            worst = worst.max((c.transition().row(i).sum() - 1.0).abs());
        }
    }
    for i in 0..5 {
        worst = worst.max((patched.transition().row(i).sum() - 1.0).abs());
    }
    outcome(
        exact && worst <= 1e-12,
        format!(
            "worked row {:?} (exact: {}), max row-sum deviation {:.1e} (<= 1e-12)",
            row0, exact, worst
        ),
    )
}

fn main() {
    // Cargo passes libtest flags such as --nocapture or a name filter;
    // this target runs everything regardless.
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |k: u32, name: &'static str, o: Outcome| {
        println!(
            "{} criterion {:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            k,
            name,
            o.detail
        );
        results.push((k, name, o));
    };
    record(1, "fixed-point exactness", fixed_point_exactness());
    record(2, "gradient-splitting identity", gradient_splitting());
    record(3, "condition-number inequalities", condition_inequalities());
    record(4, "eigensolver vs brute force", brute_force_oracle());
    record(5, "double-chain rate", double_chain_rate());
    let (six, seven) = single_chain_runs();
    record(6, "single-chain convergence", six);
    record(7, "projection-ball invariant", seven);
    record(8, "reward-estimator rate", reward_estimator_rate());
    record(9, "unbiased update direction", unbiasedness());
    record(10, "determinism", determinism());
    record(11, "ergodicity patch", ergodicity_patch());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.1} s",
        results.len() - failed.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {:?}", failed);
        std::process::exit(1);
    }
}
