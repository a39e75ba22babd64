//! Achievable rates and per-phase delays of one training run.
//!
//! One global round is broadcast, local update, FDMA upload and aggregation
//! (the last is free). An optional data-sharing phase runs once before the
//! first round. Infinite delays are ordinary `f64::INFINITY` values and
//! propagate through `max`; nothing here panics or errors on a starved link.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{DeviceProfile, Scenario, SystemParams};

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("broadcast link to device {device} has zero rate")]
    InfeasibleLink { device: usize },
}

/// `bandwidth * log2(1 + gain * power / (n0 * bandwidth))`, extended by
/// continuity to 0 when either bandwidth or power is 0.
pub fn shannon_rate(bandwidth: f64, power: f64, gain: f64, n0: f64) -> f64 {
    if bandwidth <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    bandwidth * (gain * power / (n0 * bandwidth)).ln_1p() / std::f64::consts::LN_2
}

/// Rate limit of `shannon_rate` as bandwidth grows without bound.
pub fn capacity_ceiling(power: f64, gain: f64, n0: f64) -> f64 {
    gain * power / (n0 * std::f64::consts::LN_2)
}

/// Time to multicast the model over the full band: limited by the weakest device.
pub fn broadcast_delay(scenario: &Scenario) -> Result<f64, DelayError> {
    let p = &scenario.params;
    let mut worst = (f64::INFINITY, 0usize);
    for (i, dev) in scenario.devices.iter().enumerate() {
        let r = shannon_rate(p.bandwidth, p.server_power, dev.gain_to_server, p.noise_psd);
        if r < worst.0 {
            worst = (r, i);
        }
    }
    if !(worst.0 > 0.0) {
        return Err(DelayError::InfeasibleLink { device: worst.1 });
    }
    Ok(p.model_bits / worst.0)
}

pub fn local_update_delay(samples: f64, local_iters: u32, flops_per_sample: f64, flops_per_cycle: f64, cpu_freq: f64) -> f64 {
    local_iters as f64 * flops_per_sample * samples / (flops_per_cycle * cpu_freq)
}

pub fn device_compute_delay(samples: f64, device: &DeviceProfile, params: &SystemParams) -> f64 {
    local_update_delay(samples, params.local_iters, params.flops_per_sample, device.flops_per_cycle, device.cpu_freq)
}

/// Model upload over `bandwidth` Hz; infinite when `bandwidth` is 0.
pub fn upload_delay(bandwidth: f64, device: &DeviceProfile, params: &SystemParams) -> f64 {
    let r = shannon_rate(bandwidth, device.tx_power, device.gain_to_server, params.noise_psd);
    if r > 0.0 {
        params.model_bits / r
    } else {
        f64::INFINITY
    }
}

/// Decision variables of the joint sharing and allocation problem, plus the
/// epigraph values and objective the solver attained.
///
/// `d[i][j]` is the (continuous) number of samples device `i` sends to `j`,
/// `b_d2d[i][j]` / `p_d2d[i][j]` the bandwidth and power of that link, and
/// `b_upload[i]` device `i`'s upload bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingPlan {
    pub d: Vec<Vec<f64>>,
    pub b_d2d: Vec<Vec<f64>>,
    pub p_d2d: Vec<Vec<f64>>,
    pub b_upload: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub objective: f64,
}

impl SharingPlan {
    /// No sharing, the given upload split, and all D2D resources zero.
    pub fn without_sharing(b_upload: Vec<f64>) -> Self {
        let k = b_upload.len();
        Self {
            d: vec![vec![0.0; k]; k],
            b_d2d: vec![vec![0.0; k]; k],
            p_d2d: vec![vec![0.0; k]; k],
            b_upload,
            tau1: 0.0,
            tau2: 0.0,
            objective: 0.0,
        }
    }

    pub fn equal_split(scenario: &Scenario) -> Self {
        let k = scenario.num_devices();
        Self::without_sharing(vec![scenario.params.bandwidth / k as f64; k])
    }

    pub fn num_devices(&self) -> usize {
        self.b_upload.len()
    }

    pub fn total_shared(&self) -> f64 {
        self.d.iter().flatten().sum()
    }

    /// Replaces each opposing pair of flows by its net flow. Post-share
    /// counts are unchanged and no link carries more than before.
    pub fn net_opposing_flows(&mut self) {
        let k = self.num_devices();
        for i in 0..k {
            for j in (i + 1)..k {
                let common = self.d[i][j].min(self.d[j][i]);
                self.d[i][j] -= common;
                self.d[j][i] -= common;
            }
        }
    }

    /// Largest relative violation of the resource and sample budgets and of
    /// non-negativity. Zero for a feasible plan.
    pub fn max_budget_violation(&self, scenario: &Scenario) -> f64 {
        let p = &scenario.params;
        let k = self.num_devices();
        let rel = |lhs: f64, rhs: f64| ((lhs - rhs) / rhs.abs().max(f64::MIN_POSITIVE)).max(0.0);
        let mut worst = rel(self.b_upload.iter().sum(), p.bandwidth);
        worst = worst.max(rel(self.b_d2d.iter().flatten().sum(), p.bandwidth));
        for i in 0..k {
            let sent: f64 = (0..k).filter(|&j| j != i).map(|j| self.d[i][j]).sum();
            let dev = &scenario.devices[i];
            if dev.initial_samples > 0 {
                worst = worst.max(rel(sent, dev.initial_samples as f64));
            } else {
                worst = worst.max(sent.max(0.0));
            }
            let power: f64 = (0..k).filter(|&j| j != i).map(|j| self.p_d2d[i][j]).sum();
            worst = worst.max(rel(power, dev.tx_power));
        }
        let negative = self
            .d
            .iter()
            .chain(&self.b_d2d)
            .chain(&self.p_d2d)
            .flatten()
            .chain(&self.b_upload)
            .fold(0.0f64, |acc, &v| acc.max(-v));
        worst.max(negative)
    }
}

/// Per-phase delays of a plan. `total = sharing + rounds * per_round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub broadcast: f64,
    pub compute: Vec<f64>,
    pub upload: Vec<f64>,
    pub sharing: f64,
    pub aggregation: f64,
    pub rounds: u32,
    /// `broadcast + max_i(compute_i + upload_i)`.
    pub per_round: f64,
    pub total: f64,
}

/// Duration of the sharing phase: the slowest active D2D transfer.
pub fn sharing_delay(plan: &SharingPlan, scenario: &Scenario) -> f64 {
    let p = &scenario.params;
    let k = scenario.num_devices();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i == j || plan.d[i][j] <= 0.0 {
                continue;
            }
            let r = shannon_rate(plan.b_d2d[i][j], plan.p_d2d[i][j], scenario.d2d.gain(i, j), p.noise_psd);
            let t = if r > 0.0 {
                p.sample_bits * plan.d[i][j] / r
            } else {
                f64::INFINITY
            };
            worst = worst.max(t);
        }
    }
    worst
}

/// Sample counts after sharing: own samples plus received minus sent.
pub fn post_share_counts(d: &[Vec<f64>], initial: &[f64]) -> Vec<f64> {
    let k = initial.len();
    (0..k)
        .map(|i| {
            let received: f64 = (0..k).filter(|&j| j != i).map(|j| d[j][i]).sum();
            let sent: f64 = (0..k).filter(|&j| j != i).map(|j| d[i][j]).sum();
            initial[i] + received - sent
        })
        .collect()
}

pub fn total_delay(plan: &SharingPlan, scenario: &Scenario) -> Result<DelayBreakdown, DelayError> {
    let p = &scenario.params;
    let broadcast = broadcast_delay(scenario)?;
    let counts = post_share_counts(&plan.d, &scenario.initial_counts());
    let compute: Vec<f64> = scenario
        .devices
        .iter()
        .zip(&counts)
        .map(|(dev, &n)| device_compute_delay(n, dev, p))
        .collect();
    let upload: Vec<f64> = scenario
        .devices
        .iter()
        .zip(&plan.b_upload)
        .map(|(dev, &b)| upload_delay(b, dev, p))
        .collect();
    let slowest = compute
        .iter()
        .zip(&upload)
        .map(|(c, u)| c + u)
        .fold(f64::NEG_INFINITY, f64::max);
    let per_round = broadcast + slowest;
    let sharing = sharing_delay(plan, scenario);
    let rounds = p.global_iters;
    let total = if rounds == 0 {
        sharing
    } else {
        sharing + rounds as f64 * per_round
    };
    Ok(DelayBreakdown {
        broadcast,
        compute,
        upload,
        sharing,
        aggregation: 0.0,
        rounds,
        per_round,
        total,
    })
}

/// Training delay with no sharing and an equal upload split.
pub fn baseline_t1(scenario: &Scenario) -> Result<f64, DelayError> {
    Ok(total_delay(&SharingPlan::equal_split(scenario), scenario)?.total)
}

/// Integral version of a continuous transfer grid.
///
/// Every entry is floored, then single samples are added back to the pairs
/// with the largest fractional parts until the total volume matches the
/// rounded continuous volume, never letting a sender exceed its holdings.
pub fn round_transfers(d: &[Vec<f64>], initial: &[u64]) -> Vec<Vec<u64>> {
    let k = initial.len();
    let mut out = vec![vec![0u64; k]; k];
    let mut sent = vec![0u64; k];
    let mut fractions = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let v = d[i][j].max(0.0);
            let whole = (v.floor() as u64).min(initial[i] - sent[i]);
            out[i][j] = whole;
            sent[i] += whole;
            let frac = v - whole as f64;
            if frac > 0.0 {
                fractions.push((frac, i, j));
            }
        }
    }
    let target = d
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| v.max(0.0)))
        .sum::<f64>()
        .round() as u64;
    let mut volume: u64 = sent.iter().sum();
    fractions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, i, j) in fractions {
        if volume >= target {
            break;
        }
        if sent[i] < initial[i] {
            out[i][j] += 1;
            sent[i] += 1;
            volume += 1;
        }
    }
    out
}

pub fn transfers_as_f64(d: &[Vec<u64>]) -> Vec<Vec<f64>> {
    d.iter().map(|row| row.iter().map(|&v| v as f64).collect()).collect()
}
