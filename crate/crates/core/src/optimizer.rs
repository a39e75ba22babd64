//! The three allocation schemes and the optimality checks on their output.
//!
//! - `solve_p1`: joint D2D sharing and radio allocation. A coarse uniform
//!   grid over the sharing deadline `tau1 ∈ [0, T1]`, each point solved by
//!   [`solve_inner`], then golden-section refinement around the best point.
//! - `solve_p2`: adaptive upload bandwidth without sharing, by bisection on
//!   the straggler delay.
//! - `solve_fixed`: no sharing and an equal upload split.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex_core::{bisect_bracket, min_bandwidth_for_rate, solve_inner, straggler_delay, SolverOptions, SolverReport};
use crate::delay_model::{
    baseline_t1, broadcast_delay, device_compute_delay, post_share_counts, total_delay, upload_delay, DelayBreakdown,
    DelayError, SharingPlan,
};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "proposed_P1")]
    ProposedP1,
    #[serde(rename = "adaptive_P2")]
    AdaptiveP2,
    #[serde(rename = "fixed_T1")]
    FixedT1,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ProposedP1, Scheme::AdaptiveP2, Scheme::FixedT1];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ProposedP1 => "proposed_P1",
            Scheme::AdaptiveP2 => "adaptive_P2",
            Scheme::FixedT1 => "fixed_T1",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "proposed" | "proposed_p1" => Ok(Scheme::ProposedP1),
            "p2" | "adaptive" | "adaptive_p2" => Ok(Scheme::AdaptiveP2),
            "fixed" | "t1" | "fixed_t1" => Ok(Scheme::FixedT1),
            other => Err(format!("unknown scheme '{other}' (expected p1, p2 or fixed)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error("every one of the {samples} tau1 samples failed in the inner solver")]
    AllSamplesInvalid { samples: usize },
    #[error("device {device} cannot meet any round deadline: {reason}")]
    Infeasible { device: usize, reason: String },
    #[error("bisection failed: {0}")]
    Bisection(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Uniform grid points over `[0, T1]`, end points included.
    pub grid_points: usize,
    /// Refinement stops once the bracket is narrower than `rel_tol * T1`.
    pub rel_tol: f64,
    pub solver: SolverOptions,
    /// Evaluate grid points on the rayon pool.
    pub parallel: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 64,
            rel_tol: 1e-4,
            solver: SolverOptions::default(),
            parallel: true,
        }
    }
}

/// One evaluation of the outer objective `tau1 + M (t_bcast + tau2*(tau1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub tau1: f64,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub scheme: Scheme,
    pub plan: SharingPlan,
    pub delay: DelayBreakdown,
    pub report: SolverReport,
    pub tau1_profile: Vec<ProfileSample>,
}

impl OptimizationResult {
    pub fn objective(&self) -> f64 {
        self.delay.total
    }

    fn finish(scheme: Scheme, mut plan: SharingPlan, scenario: &Scenario, report: SolverReport, tau1_profile: Vec<ProfileSample>) -> Result<Self, OptimizeError> {
        let delay = total_delay(&plan, scenario)?;
        plan.tau2 = straggler_delay(&plan, scenario);
        plan.objective = delay.total;
        Ok(Self {
            scheme,
            plan,
            delay,
            report,
            tau1_profile,
        })
    }
}

pub fn solve(scheme: Scheme, scenario: &Scenario, opts: &SearchOptions) -> Result<OptimizationResult, OptimizeError> {
    match scheme {
        Scheme::ProposedP1 => solve_p1(scenario, opts),
        Scheme::AdaptiveP2 => solve_p2(scenario),
        Scheme::FixedT1 => solve_fixed(scenario),
    }
}

/// No sharing and `B / K` upload bandwidth per device.
pub fn solve_fixed(scenario: &Scenario) -> Result<OptimizationResult, OptimizeError> {
    let plan = SharingPlan::equal_split(scenario);
    let report = SolverReport {
        converged: true,
        iterations: 0,
        final_duality_measure: 0.0,
        max_constraint_violation: plan.max_budget_violation(scenario),
        invalid_samples: 0,
    };
    OptimizationResult::finish(Scheme::FixedT1, plan, scenario, report, Vec::new())
}

/// Minimizes the straggler delay over the upload split alone.
///
/// For a candidate round delay `tau`, device `i` needs the smallest
/// bandwidth whose rate uploads the model in `tau - comp_i`; `tau` is
/// feasible when those bandwidths fit in `B`. The feasible `tau` is bracketed
/// by the largest compute delay and the equal-split straggler delay.
pub fn solve_p2(scenario: &Scenario) -> Result<OptimizationResult, OptimizeError> {
    let p = &scenario.params;
    broadcast_delay(scenario)?;
    let compute: Vec<f64> = scenario
        .devices
        .iter()
        .map(|d| device_compute_delay(d.initial_samples as f64, d, p))
        .collect();
    let needs = |tau: f64| -> Vec<Option<f64>> {
        scenario
            .devices
            .iter()
            .zip(&compute)
            .map(|(d, &c)| {
                if tau <= c {
                    None
                } else {
                    min_bandwidth_for_rate(p.model_bits / (tau - c), d.tx_power, d.gain_to_server, p.noise_psd)
                }
            })
            .collect()
    };
    let total_need = |tau: f64| -> f64 { needs(tau).into_iter().map(|b| b.unwrap_or(f64::INFINITY)).sum() };

    let lo = compute.iter().copied().fold(0.0, f64::max);
    let mut hi = straggler_delay(&SharingPlan::equal_split(scenario), scenario);
    if let Some(device) = needs(hi).iter().position(Option::is_none) {
        return Err(OptimizeError::Infeasible {
            device,
            reason: "required upload rate reaches the capacity ceiling".into(),
        });
    }
    // the equal split is feasible at hi up to rounding
    let mut bumps = 0;
    while total_need(hi) > p.bandwidth {
        hi *= 1.0 + 1e-12;
        bumps += 1;
        if bumps > 64 {
            return Err(OptimizeError::Bisection("equal split does not bracket the optimum".into()));
        }
    }
    let mut evaluations = 0usize;
    let (infeasible, feasible) = bisect_bracket(
        |tau| {
            evaluations += 1;
            total_need(tau)
        },
        p.bandwidth,
        lo,
        hi,
        hi * 1e-14,
    )
    .map_err(|e| OptimizeError::Bisection(e.to_string()))?;
    let tau_star = feasible;
    let need: Vec<f64> = needs(tau_star).into_iter().map(|b| b.unwrap_or(f64::INFINITY)).collect();
    let used: f64 = need.iter().sum();
    let plan = SharingPlan::without_sharing(need.iter().map(|b| b * p.bandwidth / used).collect());
    let report = SolverReport {
        converged: true,
        iterations: evaluations,
        final_duality_measure: (feasible - infeasible) / feasible,
        max_constraint_violation: plan.max_budget_violation(scenario),
        invalid_samples: 0,
    };
    OptimizationResult::finish(Scheme::AdaptiveP2, plan, scenario, report, Vec::new())
}

struct Evaluated {
    sample: ProfileSample,
    plan: Option<(SharingPlan, SolverReport)>,
}

fn evaluate_tau1(tau1: f64, scenario: &Scenario, t_bcast: f64, opts: &SolverOptions) -> Evaluated {
    let rounds = scenario.params.global_iters as f64;
    match solve_inner(tau1, scenario, opts) {
        Ok(sol) if sol.report.converged => Evaluated {
            sample: ProfileSample {
                tau1,
                objective: tau1 + rounds * (t_bcast + sol.tau2),
                converged: true,
            },
            plan: Some((sol.plan, sol.report)),
        },
        _ => Evaluated {
            sample: ProfileSample {
                tau1,
                objective: f64::INFINITY,
                converged: false,
            },
            plan: None,
        },
    }
}

/// Joint sharing and allocation: 1D search over the sharing deadline.
pub fn solve_p1(scenario: &Scenario, opts: &SearchOptions) -> Result<OptimizationResult, OptimizeError> {
    let t1 = baseline_t1(scenario)?;
    let t_bcast = broadcast_delay(scenario)?;
    let g = opts.grid_points.max(2);
    let grid: Vec<f64> = (0..g).map(|k| t1 * k as f64 / (g - 1) as f64).collect();
    let eval = |tau1: f64| evaluate_tau1(tau1, scenario, t_bcast, &opts.solver);
    let mut evaluated: Vec<Evaluated> = if opts.parallel {
        grid.par_iter().map(|&tau1| eval(tau1)).collect()
    } else {
        grid.iter().map(|&tau1| eval(tau1)).collect()
    };

    let best_k = evaluated
        .iter()
        .enumerate()
        .filter(|(_, e)| e.sample.converged)
        .min_by(|a, b| a.1.sample.objective.total_cmp(&b.1.sample.objective))
        .map(|(k, _)| k)
        .ok_or(OptimizeError::AllSamplesInvalid { samples: g })?;

    // golden-section refinement between the neighbours of the best grid point
    let mut a = grid[best_k.saturating_sub(1)];
    let mut b = grid[(best_k + 1).min(g - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let width_tol = opts.rel_tol * t1;
    if b - a > width_tol {
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let e1 = eval(x1);
        let e2 = eval(x2);
        let (mut f1, mut f2) = (e1.sample.objective, e2.sample.objective);
        evaluated.push(e1);
        evaluated.push(e2);
        while b - a > width_tol {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                let e = eval(x1);
                f1 = e.sample.objective;
                evaluated.push(e);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                let e = eval(x2);
                f2 = e.sample.objective;
                evaluated.push(e);
            }
        }
    }

    let invalid = evaluated.iter().filter(|e| !e.sample.converged).count();
    let mut best: Option<(f64, f64, SharingPlan, SolverReport)> = None;
    for e in &evaluated {
        if let Some((plan, report)) = &e.plan {
            let total = total_delay(plan, scenario)?.total;
            let better = match &best {
                None => true,
                Some((bt, btau, _, _)) => total < *bt || (total == *bt && e.sample.tau1 < *btau),
            };
            if better {
                best = Some((total, e.sample.tau1, plan.clone(), report.clone()));
            }
        }
    }
    let (_, _, plan, mut report) = best.expect("at least one converged sample");
    report.invalid_samples = invalid;
    let mut profile: Vec<ProfileSample> = evaluated.iter().map(|e| e.sample).collect();
    profile.sort_by(|x, y| x.tau1.total_cmp(&y.tau1));
    OptimizationResult::finish(Scheme::ProposedP1, plan, scenario, report, profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemarkCheck {
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemarkVerification {
    /// No pair of devices exchanges data in both directions.
    pub unidirectional: RemarkCheck,
    /// Every device with upload bandwidth finishes its round at the same time.
    pub equalized: RemarkCheck,
}

impl RemarkVerification {
    pub fn passed(&self) -> bool {
        self.unidirectional.passed && self.equalized.passed
    }
}

/// Transfers below this many samples count as zero: `1e-6 * max_i |D_i|`.
pub fn zero_share_threshold(scenario: &Scenario) -> f64 {
    1e-6 * scenario.devices.iter().map(|d| d.initial_samples as f64).fold(0.0, f64::max)
}

/// Checks that a plan shares in at most one direction per pair (within
/// [`zero_share_threshold`]) and that the per-device compute plus upload
/// delays agree to within `tol * tau2`.
pub fn verify_remarks(plan: &SharingPlan, scenario: &Scenario, tol: f64) -> RemarkVerification {
    let k = scenario.num_devices();
    let eps_d = zero_share_threshold(scenario);
    let mut overlap = 0.0f64;
    for i in 0..k {
        for j in (i + 1)..k {
            overlap = overlap.max(plan.d[i][j].min(plan.d[j][i]));
        }
    }
    let p = &scenario.params;
    let counts = post_share_counts(&plan.d, &scenario.initial_counts());
    let times: Vec<f64> = (0..k)
        .filter(|&i| plan.b_upload[i] > 0.0)
        .map(|i| device_compute_delay(counts[i], &scenario.devices[i], p) + upload_delay(plan.b_upload[i], &scenario.devices[i], p))
        .collect();
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if times.is_empty() { 0.0 } else { hi - lo };
    let threshold = tol * hi.max(0.0);
    RemarkVerification {
        unidirectional: RemarkCheck {
            passed: overlap <= eps_d,
            measured: overlap,
            threshold: eps_d,
        },
        equalized: RemarkCheck {
            passed: spread <= threshold,
            measured: spread,
            threshold,
        },
    }
}
