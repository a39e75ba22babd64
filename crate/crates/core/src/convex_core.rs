//! Scalar bisection, Shannon-rate inversion and a log-barrier interior-point
//! solver for the convex subproblem obtained by fixing the sharing-phase
//! deadline `tau1`.
//!
//! For fixed `tau1` the subproblem is
//!
//! ```text
//! minimize    tau2
//! subject to  a d_ij <= tau1 * r(b_ij, p_ij; h_ij)                 every pair i != j
//!             comp_i(d) + Q / r(bu_i, P_i; g_i) <= tau2            every device i
//!             sum_i bu_i <= B,  sum_ij b_ij <= B
//!             sum_j d_ij <= |D_i|,  sum_j p_ij <= P_i
//!             all variables >= 0
//! ```
//!
//! where `r(b, p; h) = b log2(1 + h p / (n0 b))` is jointly concave, so every
//! constraint is convex. Variables are rescaled to order one before the
//! Newton iterations: bandwidths by `B`, powers by the sender's `P_i`, sample
//! counts by `max_i |D_i|` and `tau2` by the per-round delay of the equal-split
//! baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay_model::{
    broadcast_delay, capacity_ceiling, device_compute_delay, post_share_counts, shannon_rate, upload_delay,
    DelayError, SharingPlan,
};
use crate::scenario::Scenario;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error, PartialEq)]
pub enum BisectError {
    #[error("target {target} is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },
    #[error("invalid interval [{lo}, {hi}] or tolerance {tol}")]
    InvalidInterval { lo: f64, hi: f64, tol: f64 },
}

/// Shrinks `[lo, hi]` around the point where the monotone `f` crosses
/// `target` until the interval is no wider than `tol`.
///
/// Returns `(x_lo, x_hi)` where `f(x_lo) - target` keeps the sign of
/// `f(lo) - target`. Works for increasing and decreasing `f`; infinite
/// function values are allowed at the ends.
pub fn bisect_bracket<F>(mut f: F, target: f64, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64), BisectError>
where
    F: FnMut(f64) -> f64,
{
    if !(lo <= hi) || !(tol > 0.0) {
        return Err(BisectError::InvalidInterval { lo, hi, tol });
    }
    let f_lo = f(lo) - target;
    let f_hi = f(hi) - target;
    if f_lo == 0.0 {
        return Ok((lo, lo));
    }
    if f_hi == 0.0 {
        return Ok((hi, hi));
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(BisectError::NotBracketed {
            lo,
            hi,
            f_lo: f_lo + target,
            f_hi: f_hi + target,
            target,
        });
    }
    let lo_sign = f_lo.signum();
    let (mut a, mut b) = (lo, hi);
    let max_iter = ((hi - lo) / tol).log2().ceil().max(0.0) as usize;
    for _ in 0..max_iter {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid) - target;
        if fm == 0.0 {
            return Ok((mid, mid));
        }
        if fm.signum() == lo_sign {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a, b))
}

/// Midpoint of the final bisection bracket; within `tol` of the crossing.
pub fn bisect<F>(f: F, target: f64, lo: f64, hi: f64, tol: f64) -> Result<f64, BisectError>
where
    F: FnMut(f64) -> f64,
{
    bisect_bracket(f, target, lo, hi, tol).map(|(a, b)| 0.5 * (a + b))
}

/// Smallest bandwidth whose Shannon rate reaches `required_rate`, or `None`
/// when the rate lies at or above the infinite-bandwidth ceiling.
pub fn min_bandwidth_for_rate(required_rate: f64, power: f64, gain: f64, n0: f64) -> Option<f64> {
    if required_rate <= 0.0 {
        return Some(0.0);
    }
    if !(power > 0.0) || required_rate >= capacity_ceiling(power, gain, n0) {
        return None;
    }
    let rate = |b: f64| shannon_rate(b, power, gain, n0);
    let mut hi = 1.0;
    while rate(hi) < required_rate {
        hi *= 2.0;
        if !hi.is_finite() {
            return None;
        }
    }
    let (_, upper) = bisect_bracket(rate, required_rate, 0.0, hi, hi * 1e-15).ok()?;
    Some(upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop once (number of constraints) / t falls below this, in the
    /// normalized units of `tau2`.
    pub duality_tol: f64,
    /// Largest acceptable relative constraint violation of a returned plan.
    pub feas_tol: f64,
    /// Factor applied to the barrier parameter after each centering stage.
    pub barrier_growth: f64,
    /// Armijo fraction of the backtracking line search.
    pub ls_alpha: f64,
    /// Step shrink factor of the backtracking line search.
    pub ls_beta: f64,
    /// Centering stops when half the squared Newton decrement drops below this.
    pub newton_tol: f64,
    pub max_newton_per_stage: usize,
    pub max_newton_total: usize,
    /// Lower bound on every bandwidth variable, as a fraction of `B`.
    pub bandwidth_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            duality_tol: 1e-8,
            feas_tol: 1e-6,
            barrier_growth: 10.0,
            ls_alpha: 0.25,
            ls_beta: 0.5,
            newton_tol: 1e-10,
            max_newton_per_stage: 200,
            max_newton_total: 3000,
            bandwidth_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_duality_measure: f64,
    pub max_constraint_violation: f64,
    /// Search samples whose inner solve failed and were skipped.
    #[serde(default)]
    pub invalid_samples: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("no strictly feasible starting point: {0}")]
    Infeasible(String),
    #[error("solver did not converge after {iterations} Newton steps (duality measure {duality_measure:.3e}): {reason}")]
    NonConvergence {
        iterations: usize,
        duality_measure: f64,
        reason: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Delay(#[from] DelayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub tau1: f64,
    /// Slowest per-round compute plus upload delay of the returned plan.
    pub tau2: f64,
    pub plan: SharingPlan,
    pub report: SolverReport,
}

/// Equal-split per-round straggler delay, used to normalize times.
fn round_scale(scenario: &Scenario) -> f64 {
    let p = &scenario.params;
    let share = p.bandwidth / scenario.num_devices() as f64;
    scenario
        .devices
        .iter()
        .map(|d| device_compute_delay(d.initial_samples as f64, d, p) + upload_delay(share, d, p))
        .fold(0.0, f64::max)
}

/// Slowest per-round compute plus upload delay of `plan`.
pub fn straggler_delay(plan: &SharingPlan, scenario: &Scenario) -> f64 {
    let p = &scenario.params;
    let counts = post_share_counts(&plan.d, &scenario.initial_counts());
    scenario
        .devices
        .iter()
        .zip(&counts)
        .zip(&plan.b_upload)
        .map(|((d, &n), &b)| device_compute_delay(n, d, p) + upload_delay(b, d, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn active_pairs(tau1: f64, scenario: &Scenario) -> Vec<(usize, usize)> {
    let k = scenario.num_devices();
    if tau1 <= 0.0 {
        return Vec::new();
    }
    let mut pairs = Vec::new();
    for i in 0..k {
        if scenario.devices[i].initial_samples == 0 {
            continue;
        }
        for j in 0..k {
            if i != j {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Interior starting point: small transfers, half of every resource budget
/// spread evenly, and `tau2` at twice the resulting straggler delay.
///
/// Transfers are set to the smaller of half the link's `tau1` capacity and a
/// quarter of the sender's holdings split over its links, so every
/// inequality, non-negativity included, holds strictly. With `tau1 = 0`
/// there is no interior in the transfer variables; they are fixed to zero.
pub fn strictly_feasible_start(tau1: f64, scenario: &Scenario) -> SharingPlan {
    let p = &scenario.params;
    let k = scenario.num_devices();
    let pairs = active_pairs(tau1, scenario);
    let mut plan = SharingPlan::without_sharing(vec![p.bandwidth / (2.0 * k as f64); k]);
    let link_bw = p.bandwidth / (2.0 * (k * (k - 1)) as f64);
    for &(i, j) in &pairs {
        let power = scenario.devices[i].tx_power / (2.0 * (k - 1) as f64);
        plan.b_d2d[i][j] = link_bw;
        plan.p_d2d[i][j] = power;
        let cap = tau1 * shannon_rate(link_bw, power, scenario.d2d.gain(i, j), p.noise_psd) / p.sample_bits;
        let share = scenario.devices[i].initial_samples as f64 / (4.0 * (k - 1) as f64);
        plan.d[i][j] = (0.5 * cap).min(share);
    }
    plan.tau1 = tau1;
    plan.tau2 = 2.0 * straggler_delay(&plan, scenario);
    plan
}

/// Constraint data of the normalized subproblem.
struct InnerProblem {
    k: usize,
    pairs: Vec<(usize, usize)>,
    /// Sender indices that own at least one pair.
    senders: Vec<usize>,
    /// For each device: (pair index, +1 incoming / -1 outgoing).
    incident: Vec<Vec<(usize, f64)>>,
    /// Pairs sent by each device.
    outgoing: Vec<Vec<usize>>,
    dmax: f64,
    t_round: f64,
    /// Normalized compute delay per normalized sample, per device.
    alpha: Vec<f64>,
    /// Normalized compute delay of the initial holdings.
    base: Vec<f64>,
    beta: f64,
    c_up: Vec<f64>,
    c_pair: Vec<f64>,
    kappa: f64,
    dcap: Vec<f64>,
    floor: f64,
}

/// `u log2(1 + c v / u)` and its first and second derivatives.
struct Persp {
    val: f64,
    du: f64,
    dv: f64,
    duu: f64,
    duv: f64,
    dvv: f64,
}

fn perspective(u: f64, v: f64, c: f64) -> Persp {
    let w = u + c * v;
    let l = (c * v / u).ln_1p();
    let cw2 = c * c / (w * w) / LN2;
    Persp {
        val: u * l / LN2,
        du: (l - c * v / w) / LN2,
        dv: c * u / w / LN2,
        duu: -cw2 * v * v / u,
        duv: cw2 * v,
        dvv: -cw2 * u,
    }
}

/// Accumulates `-sum log(-f_k)` and optionally its gradient and Hessian.
struct Barrier<'a> {
    value: f64,
    derivs: Option<(&'a mut [f64], &'a mut DMatrix<f64>)>,
}

impl Barrier<'_> {
    /// Returns false when `f` is not strictly negative.
    fn push(&mut self, f: f64, grad: &[(usize, f64)], hess: &[(usize, usize, f64)]) -> bool {
        if !(f < 0.0) {
            return false;
        }
        let slack = -f;
        self.value -= slack.ln();
        if let Some((g, h)) = self.derivs.as_mut() {
            let inv = 1.0 / slack;
            let inv2 = inv * inv;
            for &(i, gi) in grad {
                g[i] += gi * inv;
                for &(j, gj) in grad {
                    h[(i, j)] += gi * gj * inv2;
                }
            }
            for &(i, j, hij) in hess {
                h[(i, j)] += hij * inv;
            }
        }
        true
    }

    /// `lo - x_i < 0`.
    fn lower_bound(&mut self, x: &[f64], i: usize, lo: f64) -> bool {
        self.push(lo - x[i], &[(i, -1.0)], &[])
    }
}

impl InnerProblem {
    fn new(tau1: f64, scenario: &Scenario, opts: &SolverOptions) -> Self {
        let p = &scenario.params;
        let k = scenario.num_devices();
        let pairs = active_pairs(tau1, scenario);
        let dmax = scenario
            .devices
            .iter()
            .map(|d| d.initial_samples as f64)
            .fold(0.0, f64::max)
            .max(1.0);
        let t_round = round_scale(scenario);
        let alpha: Vec<f64> = scenario
            .devices
            .iter()
            .map(|d| device_compute_delay(dmax, d, p) / t_round)
            .collect();
        let base = scenario
            .devices
            .iter()
            .zip(&alpha)
            .map(|(d, a)| a * d.initial_samples as f64 / dmax)
            .collect();
        let c_up = scenario
            .devices
            .iter()
            .map(|d| d.gain_to_server * d.tx_power / (p.noise_psd * p.bandwidth))
            .collect();
        let c_pair = pairs
            .iter()
            .map(|&(i, j)| scenario.d2d.gain(i, j) * scenario.devices[i].tx_power / (p.noise_psd * p.bandwidth))
            .collect();
        let mut incident = vec![Vec::new(); k];
        let mut outgoing = vec![Vec::new(); k];
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            incident[i].push((idx, -1.0));
            incident[j].push((idx, 1.0));
            outgoing[i].push(idx);
        }
        let senders = (0..k).filter(|&i| !outgoing[i].is_empty()).collect();
        Self {
            k,
            pairs,
            senders,
            incident,
            outgoing,
            dmax,
            t_round,
            alpha,
            base,
            beta: p.model_bits / (p.bandwidth * t_round),
            c_up,
            c_pair,
            kappa: tau1 * p.bandwidth / (p.sample_bits * dmax),
            dcap: scenario.devices.iter().map(|d| d.initial_samples as f64 / dmax).collect(),
            floor: opts.bandwidth_floor,
        }
    }

    fn np(&self) -> usize {
        self.pairs.len()
    }

    fn dim(&self) -> usize {
        3 * self.np() + self.k + 1
    }

    fn d(&self, p: usize) -> usize {
        p
    }

    fn b(&self, p: usize) -> usize {
        self.np() + p
    }

    fn pw(&self, p: usize) -> usize {
        2 * self.np() + p
    }

    fn u(&self, i: usize) -> usize {
        3 * self.np() + i
    }

    fn s(&self) -> usize {
        3 * self.np() + self.k
    }

    fn num_constraints(&self) -> usize {
        let np = self.np();
        let pair_terms = if np > 0 { 4 * np + 2 * self.senders.len() + 1 } else { 0 };
        pair_terms + 2 * self.k + 2
    }

    fn to_normalized(&self, plan: &SharingPlan, scenario: &Scenario) -> Vec<f64> {
        let b = scenario.params.bandwidth;
        let mut x = vec![0.0; self.dim()];
        for (idx, &(i, j)) in self.pairs.iter().enumerate() {
            x[self.d(idx)] = plan.d[i][j] / self.dmax;
            x[self.b(idx)] = plan.b_d2d[i][j] / b;
            x[self.pw(idx)] = plan.p_d2d[i][j] / scenario.devices[i].tx_power;
        }
        for i in 0..self.k {
            x[self.u(i)] = plan.b_upload[i] / b;
        }
        x[self.s()] = plan.tau2 / self.t_round;
        x
    }

    fn to_plan(&self, x: &[f64], scenario: &Scenario, tau1: f64) -> SharingPlan {
        let b = scenario.params.bandwidth;
        let mut plan = SharingPlan::without_sharing((0..self.k).map(|i| x[self.u(i)] * b).collect());
        for (idx, &(i, j)) in self.pairs.iter().enumerate() {
            plan.d[i][j] = x[self.d(idx)] * self.dmax;
            plan.b_d2d[i][j] = x[self.b(idx)] * b;
            plan.p_d2d[i][j] = x[self.pw(idx)] * scenario.devices[i].tx_power;
        }
        plan.tau1 = tau1;
        plan.tau2 = x[self.s()] * self.t_round;
        plan
    }

    /// Barrier value `t * s - sum log(-f_k)`, or `None` outside the domain.
    /// Fills `grad` and `hess` when given.
    fn eval(&self, x: &[f64], t: f64, derivs: Option<(&mut [f64], &mut DMatrix<f64>)>) -> Option<f64> {
        let mut bar = Barrier { value: 0.0, derivs };
        let s_idx = self.s();

        // bounds first so the rate functions below only see positive arguments
        for idx in 0..self.np() {
            if !bar.lower_bound(x, self.d(idx), 0.0)
                || !bar.lower_bound(x, self.b(idx), self.floor)
                || !bar.lower_bound(x, self.pw(idx), 0.0)
            {
                return None;
            }
        }
        for i in 0..self.k {
            if !bar.lower_bound(x, self.u(i), self.floor) {
                return None;
            }
        }
        if !bar.lower_bound(x, s_idx, 0.0) {
            return None;
        }

        // sharing deadline per link
        for (idx, &c) in self.c_pair.iter().enumerate() {
            let (di, bi, pi) = (self.d(idx), self.b(idx), self.pw(idx));
            let r = perspective(x[bi], x[pi], c);
            let k = self.kappa;
            let f = x[di] - k * r.val;
            let grad = [(di, 1.0), (bi, -k * r.du), (pi, -k * r.dv)];
            let hess = [
                (bi, bi, -k * r.duu),
                (bi, pi, -k * r.duv),
                (pi, bi, -k * r.duv),
                (pi, pi, -k * r.dvv),
            ];
            if !bar.push(f, &grad, &hess) {
                return None;
            }
        }

        // per-device round delay below tau2
        let mut grad = Vec::new();
        for i in 0..self.k {
            let ui = self.u(i);
            let r = perspective(x[ui], 1.0, self.c_up[i]);
            let upload = self.beta / r.val;
            let d_upload = -self.beta * r.du / (r.val * r.val);
            let dd_upload = self.beta * (2.0 * r.du * r.du / (r.val * r.val * r.val) - r.duu / (r.val * r.val));
            let mut f = self.base[i] + upload - x[s_idx];
            grad.clear();
            for &(idx, sign) in &self.incident[i] {
                f += sign * self.alpha[i] * x[self.d(idx)];
                grad.push((self.d(idx), sign * self.alpha[i]));
            }
            grad.push((ui, d_upload));
            grad.push((s_idx, -1.0));
            if !bar.push(f, &grad, &[(ui, ui, dd_upload)]) {
                return None;
            }
        }

        // upload bandwidth budget
        grad.clear();
        grad.extend((0..self.k).map(|i| (self.u(i), 1.0)));
        let used: f64 = (0..self.k).map(|i| x[self.u(i)]).sum();
        if !bar.push(used - 1.0, &grad, &[]) {
            return None;
        }

        if self.np() > 0 {
            grad.clear();
            grad.extend((0..self.np()).map(|idx| (self.b(idx), 1.0)));
            let used: f64 = (0..self.np()).map(|idx| x[self.b(idx)]).sum();
            if !bar.push(used - 1.0, &grad, &[]) {
                return None;
            }
            for &i in &self.senders {
                grad.clear();
                grad.extend(self.outgoing[i].iter().map(|&idx| (self.d(idx), 1.0)));
                let sent: f64 = self.outgoing[i].iter().map(|&idx| x[self.d(idx)]).sum();
                if !bar.push(sent - self.dcap[i], &grad, &[]) {
                    return None;
                }
                grad.clear();
                grad.extend(self.outgoing[i].iter().map(|&idx| (self.pw(idx), 1.0)));
                let power: f64 = self.outgoing[i].iter().map(|&idx| x[self.pw(idx)]).sum();
                if !bar.push(power - 1.0, &grad, &[]) {
                    return None;
                }
            }
        }

        let mut value = bar.value + t * x[s_idx];
        if let Some((g, _)) = bar.derivs.as_mut() {
            g[s_idx] += t;
        }
        if !value.is_finite() {
            value = f64::INFINITY;
        }
        Some(value)
    }
}

/// Solves `H dx = -g` after symmetric diagonal scaling, adding a small ridge
/// if the scaled matrix is not numerically positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &[f64]) -> Option<DVector<f64>> {
    let n = grad.len();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = hess[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] * scale[i] * scale[j]);
    let rhs = DVector::from_fn(n, |i, _| -grad[i] * scale[i]);
    let mut ridge = 0.0;
    for _ in 0..12 {
        if let Some(chol) = scaled.clone().cholesky() {
            let y = chol.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(DVector::from_fn(n, |i, _| y[i] * scale[i]));
            }
        }
        let next = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
        for i in 0..n {
            scaled[(i, i)] += next - ridge;
        }
        ridge = next;
    }
    None
}

/// Minimizes `tau2` for a fixed sharing deadline `tau1`.
///
/// The returned plan has opposing flows netted out, which leaves every
/// device's post-share count unchanged and never lengthens a transfer.
pub fn solve_inner(tau1: f64, scenario: &Scenario, opts: &SolverOptions) -> Result<InnerSolution, SolverError> {
    if !(tau1 >= 0.0) || !tau1.is_finite() {
        return Err(SolverError::InvalidInput(format!("tau1 must be finite and >= 0 (got {tau1})")));
    }
    broadcast_delay(scenario)?;
    let problem = InnerProblem::new(tau1, scenario, opts);
    let start = strictly_feasible_start(tau1, scenario);
    let mut x = problem.to_normalized(&start, scenario);
    let n = problem.dim();
    let m = problem.num_constraints() as f64;

    let mut t = m;
    if problem.eval(&x, t, None).is_none() {
        return Err(SolverError::Infeasible(format!(
            "starting point violates a constraint at tau1 = {tau1}"
        )));
    }

    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    let mut iterations = 0usize;
    let mut last_decrement;
    loop {
        let mut stage_steps = 0usize;
        loop {
            grad.iter_mut().for_each(|g| *g = 0.0);
            hess.fill(0.0);
            let value = problem
                .eval(&x, t, Some((&mut grad, &mut hess)))
                .ok_or_else(|| non_convergence(iterations, m / t, "iterate left the barrier domain"))?;
            let dx = newton_direction(&hess, &grad)
                .ok_or_else(|| non_convergence(iterations, m / t, "Newton system is singular"))?;
            let slope: f64 = grad.iter().zip(dx.iter()).map(|(g, d)| g * d).sum();
            last_decrement = -0.5 * slope;
            if !(last_decrement > opts.newton_tol) {
                break;
            }
            let mut step = 1.0;
            let mut trial = vec![0.0; n];
            let accepted = loop {
                for i in 0..n {
                    trial[i] = x[i] + step * dx[i];
                }
                if let Some(v) = problem.eval(&trial, t, None) {
                    if v <= value + opts.ls_alpha * step * slope {
                        break true;
                    }
                }
                step *= opts.ls_beta;
                if step < 1e-20 {
                    break false;
                }
            };
            iterations += 1;
            stage_steps += 1;
            if !accepted {
                // no further progress representable at this barrier weight
                break;
            }
            std::mem::swap(&mut x, &mut trial);
            if stage_steps >= opts.max_newton_per_stage || iterations >= opts.max_newton_total {
                break;
            }
        }
        if m / t <= opts.duality_tol || iterations >= opts.max_newton_total {
            break;
        }
        t *= opts.barrier_growth;
    }

    let duality = m / t;
    let mut plan = problem.to_plan(&x, scenario, tau1);
    plan.net_opposing_flows();
    let tau2 = straggler_delay(&plan, scenario);
    plan.tau2 = tau2;
    let violation = inner_violation(&plan, scenario, tau1);
    let converged = duality <= opts.duality_tol && last_decrement <= 1e-6 && violation <= opts.feas_tol;
    Ok(InnerSolution {
        tau1,
        tau2,
        plan,
        report: SolverReport {
            converged,
            iterations,
            final_duality_measure: duality,
            max_constraint_violation: violation,
            invalid_samples: 0,
        },
    })
}

fn non_convergence(iterations: usize, duality_measure: f64, reason: &str) -> SolverError {
    SolverError::NonConvergence {
        iterations,
        duality_measure,
        reason: reason.to_string(),
    }
}

/// Largest relative violation of the subproblem's constraints by `plan`,
/// with `plan.tau2` as the round-delay bound.
pub fn inner_violation(plan: &SharingPlan, scenario: &Scenario, tau1: f64) -> f64 {
    let p = &scenario.params;
    let k = scenario.num_devices();
    let mut worst = plan.max_budget_violation(scenario);
    for i in 0..k {
        for j in 0..k {
            if i == j || plan.d[i][j] <= 0.0 {
                continue;
            }
            let need = p.sample_bits * plan.d[i][j];
            let have = tau1 * shannon_rate(plan.b_d2d[i][j], plan.p_d2d[i][j], scenario.d2d.gain(i, j), p.noise_psd);
            worst = worst.max((need - have) / need.max(have));
        }
    }
    let round = straggler_delay(plan, scenario);
    if plan.tau2 > 0.0 {
        worst = worst.max((round - plan.tau2) / plan.tau2);
    }
    worst.max(0.0)
}
