//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use edgeshare::convex_core::solve_inner;
use edgeshare::delay_model::{baseline_t1, device_compute_delay, post_share_counts, upload_delay, SharingPlan};
use edgeshare::optimizer::{solve_fixed, solve_p1, solve_p2, verify_remarks, zero_share_threshold, SearchOptions};
use edgeshare::scenario::{build_paper_scenario, homogeneous_scenario, paper_scenario, random_scenario, PaperScenarioOptions};
use edgeshare::training_sim::{
    federated_trajectory, loss_and_gradient, make_synthetic_task, partition_by_histograms, random_model, run_training, ModelConfig, ModelState,
    SharingPolicy,
};
use edgeshare::SolverOptions;

use common::{centralized_trajectory, relative_distance, two_device_scenario, TwoDeviceModel};

const DOMINANCE_ROUNDS: [u32; 4] = [1, 5, 10, 20];
const DOMINANCE_MIN_GAP: f64 = 0.01;
const DOMINANCE_BUDGET: Duration = Duration::from_secs(60);
const INNER_ORACLE_TOL: f64 = 0.01;
const INNER_ORACLE_BUDGET: Duration = Duration::from_secs(120);
const INNER_ORACLE_TAU1: [f64; 3] = [0.0, 0.5, 5.0];
const P1_ORACLE_TOL: f64 = 0.01;
const RANDOM_SCENARIOS: u64 = 20;
const EQUALIZATION_TOL: f64 = 1e-3;
const P2_DEADLINE_TOL: f64 = 1e-4;
const P2_BUDGET_TOL: f64 = 1e-6;
const GRADIENT_PROBES: u64 = 100;
const GRADIENT_TOL: f64 = 1e-5;
const GRADIENT_STEP: f64 = 1e-5;
const TRAJECTORY_ITERS: u32 = 50;
const TRAJECTORY_TOL: f64 = 1e-10;
const ACCURACY_SEEDS: u64 = 10;
const ACCURACY_MIN_GAIN: f64 = 0.02;
const ACCURACY_FEATURES: usize = 10;
const ACCURACY_SEPARATION: f64 = 1.0;
const ACCURACY_LEARNING_RATE: f64 = 2.0;
const NULL_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dominance_ordering() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut last_gap = (0.0, 0.0);
    for m in DOMINANCE_ROUNDS {
        let s = build_paper_scenario().with_global_iters(m);
        let p1 = solve_p1(&s, &SearchOptions::default()).map_err(|e| e.to_string())?.objective();
        let p2 = solve_p2(&s).map_err(|e| e.to_string())?.objective();
        let t1 = solve_fixed(&s).map_err(|e| e.to_string())?.objective();
        let gap_p2 = p2 - p1;
        let gap_t1 = t1 - p1;
        ok &= p1 < p2 && p2 < t1;
        ok &= gap_p2 > DOMINANCE_MIN_GAP * p2 && (t1 - p2) > DOMINANCE_MIN_GAP * t1;
        ok &= gap_p2 >= last_gap.0 && gap_t1 >= last_gap.1;
        last_gap = (gap_p2, gap_t1);
        lines.push(format!("M={m}: P1={p1:.0}s P2={p2:.0}s T1={t1:.0}s"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < DOMINANCE_BUDGET;
    ensure(ok, format!("{} in {:.1}s", lines.join(", "), elapsed.as_secs_f64()))
}

fn inner_oracle() -> Outcome {
    let start = Instant::now();
    let s = two_device_scenario(10);
    let model = TwoDeviceModel::new(&s);
    let mut ok = true;
    let mut lines = Vec::new();
    for tau1 in INNER_ORACLE_TAU1 {
        let solved = solve_inner(tau1, &s, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let grid = model.grid_inner(tau1);
        let rel = (grid - solved.tau2).abs() / grid;
        ok &= solved.report.converged && rel <= INNER_ORACLE_TOL && solved.tau2 <= grid * (1.0 + 1e-9);
        lines.push(format!("tau1={tau1}: solver {:.3}s grid {grid:.3}s ({rel:.1e})", solved.tau2));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < INNER_ORACLE_BUDGET;
    ensure(ok, format!("{} in {:.1}s", lines.join(", "), elapsed.as_secs_f64()))
}

fn p1_oracle() -> Outcome {
    let s = two_device_scenario(10);
    let model = TwoDeviceModel::new(&s);
    let solved = solve_p1(&s, &SearchOptions::default()).map_err(|e| e.to_string())?;
    let (grid, grid_tau1) = model.grid_total();
    let rel = (grid - solved.objective()).abs() / grid;
    ensure(
        rel <= P1_ORACLE_TOL,
        format!(
            "solver {:.1}s at tau1={:.3}s, grid {grid:.1}s at tau1={grid_tau1:.3}s ({rel:.1e})",
            solved.objective(),
            solved.plan.tau1
        ),
    )
}

fn optimal_structure_holds() -> Outcome {
    let mut scenarios = vec![("paper".to_string(), build_paper_scenario())];
    for seed in 0..RANDOM_SCENARIOS {
        let k = 3 + (seed % 6) as usize;
        scenarios.push((format!("random#{seed}(K={k})"), random_scenario(seed, k).map_err(|e| e.to_string())?));
    }
    let mut failures = Vec::new();
    let mut worst_overlap = 0.0f64;
    let mut worst_spread = 0.0f64;
    for (name, s) in &scenarios {
        let r = solve_p1(s, &SearchOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let v = verify_remarks(&r.plan, s, EQUALIZATION_TOL);
        worst_overlap = worst_overlap.max(v.unidirectional.measured / v.unidirectional.threshold);
        worst_spread = worst_spread.max(v.equalized.measured / v.equalized.threshold.max(f64::MIN_POSITIVE));
        if !v.passed() || !r.report.converged {
            failures.push(name.clone());
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "{} scenarios, worst overlap {worst_overlap:.2e} of threshold, worst spread {worst_spread:.2e} of threshold{}",
            scenarios.len(),
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join(" ")) }
        ),
    )
}

fn p2_structure() -> Outcome {
    let mut worst_deadline = 0.0f64;
    let mut worst_budget = 0.0f64;
    for seed in 0..RANDOM_SCENARIOS {
        let s = random_scenario(100 + seed, 2 + (seed % 7) as usize).map_err(|e| e.to_string())?;
        let r = solve_p2(&s).map_err(|e| e.to_string())?;
        let counts = post_share_counts(&r.plan.d, &s.initial_counts());
        let tau = r.plan.tau2;
        for (i, dev) in s.devices.iter().enumerate() {
            let t = device_compute_delay(counts[i], dev, &s.params) + upload_delay(r.plan.b_upload[i], dev, &s.params);
            worst_deadline = worst_deadline.max((t - tau).abs() / tau);
        }
        let used: f64 = r.plan.b_upload.iter().sum();
        worst_budget = worst_budget.max((used - s.params.bandwidth).abs() / s.params.bandwidth);
    }
    ensure(
        worst_deadline <= P2_DEADLINE_TOL && worst_budget <= P2_BUDGET_TOL,
        format!("worst deadline mismatch {worst_deadline:.2e}, worst budget mismatch {worst_budget:.2e}"),
    )
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for probe in 0..GRADIENT_PROBES {
        let classes = 2 + (probe % 4) as usize;
        let features = 1 + (probe % 5) as usize;
        let task = make_synthetic_task(classes, features, 20 + probe as usize, 1.5, probe);
        let model = random_model(features, classes, 1.0, 1000 + probe);
        let (_, grad) = loss_and_gradient(&model, &task.pool).map_err(|e| e.to_string())?;
        let mut fd = vec![0.0; grad.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.w[j] += GRADIENT_STEP;
            minus.w[j] -= GRADIENT_STEP;
            let lp = loss_and_gradient(&plus, &task.pool).map_err(|e| e.to_string())?.0;
            let lm = loss_and_gradient(&minus, &task.pool).map_err(|e| e.to_string())?.0;
            *slot = (lp - lm) / (2.0 * GRADIENT_STEP);
        }
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let err = grad.iter().zip(&fd).fold(0.0f64, |a, (g, f)| a.max((g - f).abs())) / scale;
        worst = worst.max(err);
    }
    ensure(worst <= GRADIENT_TOL, format!("{GRADIENT_PROBES} probes, worst relative error {worst:.2e}"))
}

fn distributed_equals_centralized() -> Outcome {
    let classes = 4;
    let features = 6;
    let task = make_synthetic_task(classes, features, 800, 2.0, 21);
    let parts = partition_by_histograms(&task.pool, &vec![vec![50; classes]; 4], 5).map_err(|e| e.to_string())?;
    let pooled: Vec<_> = parts.iter().flatten().collect();
    let xs: Vec<Vec<f64>> = pooled.iter().map(|s| s.features.clone()).collect();
    let ys: Vec<usize> = pooled.iter().map(|s| s.label).collect();
    let w0 = ModelState::zeros(features, classes);
    let eta = 0.5;
    let fed = federated_trajectory(&w0, &parts, eta, 1, TRAJECTORY_ITERS).map_err(|e| e.to_string())?;
    let cen = centralized_trajectory(&w0.w, &xs, &ys, classes, eta, TRAJECTORY_ITERS as usize);
    let worst = fed
        .iter()
        .zip(&cen)
        .skip(1)
        .map(|(a, b)| relative_distance(&a.w, b))
        .fold(0.0f64, f64::max);
    ensure(worst <= TRAJECTORY_TOL, format!("K=4, {TRAJECTORY_ITERS} iterations, worst relative gap {worst:.2e}"))
}

fn sharing_improves_accuracy() -> Outcome {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 0..ACCURACY_SEEDS {
        let s = paper_scenario(&PaperScenarioOptions {
            partition_seed: seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let plan = solve_p1(&s, &SearchOptions::default()).map_err(|e| e.to_string())?.plan;
        let histograms: Vec<Vec<u64>> = s.devices.iter().map(|d| d.label_histogram.clone()).collect();
        let per_class = (0..10).map(|c| histograms.iter().map(|h| h[c]).sum::<u64>()).max().unwrap_or(0) as usize;
        let task = make_synthetic_task(10, ACCURACY_FEATURES, per_class * 10, ACCURACY_SEPARATION, 1000 + seed);
        let parts = partition_by_histograms(&task.pool, &histograms, seed).map_err(|e| e.to_string())?;
        let config = ModelConfig {
            learning_rate: Some(ACCURACY_LEARNING_RATE),
            policy: SharingPolicy::Proportional,
            seed,
        };
        let run = |p: &SharingPlan| run_training(&s, &parts, p, &config, &task.test).map(|t| t.final_accuracy());
        with.push(run(&plan).map_err(|e| e.to_string())?);
        without.push(run(&SharingPlan::equal_split(&s)).map_err(|e| e.to_string())?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    ensure(
        a >= b + ACCURACY_MIN_GAIN,
        format!("mean final accuracy {:.2}% with sharing vs {:.2}% without over {ACCURACY_SEEDS} seeds", 100.0 * a, 100.0 * b),
    )
}

fn homogeneity_null() -> Outcome {
    let s = homogeneous_scenario(4, 10).map_err(|e| e.to_string())?;
    let p1 = solve_p1(&s, &SearchOptions::default()).map_err(|e| e.to_string())?;
    let p2 = solve_p2(&s).map_err(|e| e.to_string())?.objective();
    let t1 = baseline_t1(&s).map_err(|e| e.to_string())?;
    let eps = zero_share_threshold(&s);
    let max_d = p1.plan.d.iter().flatten().fold(0.0f64, |a, &v| a.max(v));
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    ensure(
        rel(p1.objective(), t1) <= NULL_TOL && rel(p2, t1) <= NULL_TOL && max_d <= eps,
        format!(
            "P1 {:.2e}, P2 {:.2e} from T1; largest transfer {max_d:.2e} (threshold {eps:.2e})",
            rel(p1.objective(), t1),
            rel(p2, t1)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("dominance ordering P1 < P2 < T1", dominance_ordering),
        ("inner solve vs K=2 grid oracle", inner_oracle),
        ("joint search vs K=2 grid oracle", p1_oracle),
        ("unidirectional sharing and equalized rounds", optimal_structure_holds),
        ("adaptive allocation equalizes devices", p2_structure),
        ("analytic vs finite-difference gradient", gradient_check),
        ("distributed equals centralized", distributed_equals_centralized),
        ("sharing improves non-IID accuracy", sharing_improves_accuracy),
        ("no sharing on identical devices", homogeneity_null),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS [{secs:.1}s] {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL [{secs:.1}s] {name}: {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
