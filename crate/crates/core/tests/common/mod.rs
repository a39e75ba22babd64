//! Reference computations shared by the integration tests. Everything here is
//! written from the model equations directly and avoids the library's delay
//! and solver code, so it can serve as an oracle.

#![allow(dead_code)]

use edgeshare::scenario::{build_paper_scenario, D2DChannelMatrix};
use edgeshare::Scenario;

pub const AXIS: usize = 201;

fn rate(b: f64, p: f64, h: f64, n0: f64) -> f64 {
    if b <= 0.0 || p <= 0.0 {
        return 0.0;
    }
    b * (1.0 + h * p / (n0 * b)).log2()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Devices 0 (slow) and 4 (fast) of the default six-device setup, with
/// their D2D gain taken from that geometry.
pub fn two_device_scenario(global_iters: u32) -> Scenario {
    let full = build_paper_scenario().with_global_iters(global_iters);
    let keep = [0usize, 4];
    let mut devices: Vec<_> = keep.iter().map(|&i| full.devices[i].clone()).collect();
    for (id, d) in devices.iter_mut().enumerate() {
        d.id = id;
    }
    let gains = keep
        .iter()
        .map(|&i| keep.iter().map(|&j| full.d2d.gain(i, j)).collect())
        .collect();
    let s = Scenario {
        params: full.params.clone(),
        devices,
        d2d: D2DChannelMatrix::new(gains).unwrap(),
        geometry: full.geometry.as_ref().map(|g| keep.iter().map(|&i| g[i]).collect()),
    };
    s.validate().unwrap();
    s
}

/// Per-round terms of a K=2 scenario written out by hand.
pub struct TwoDeviceModel {
    pub samples: [f64; 2],
    pub compute_per_sample: [f64; 2],
    pub upload_rate: [Box<dyn Fn(f64) -> f64>; 2],
    pub d2d_rate: [Box<dyn Fn(f64) -> f64>; 2],
    pub bandwidth: f64,
    pub model_bits: f64,
    pub sample_bits: f64,
    pub broadcast: f64,
    pub rounds: f64,
}

impl TwoDeviceModel {
    pub fn new(s: &Scenario) -> Self {
        assert_eq!(s.devices.len(), 2);
        let p = s.params.clone();
        let dev = |i: usize| s.devices[i].clone();
        let up = |i: usize| -> Box<dyn Fn(f64) -> f64> {
            let d = dev(i);
            let n0 = p.noise_psd;
            Box::new(move |b| rate(b, d.tx_power, d.gain_to_server, n0))
        };
        let side = |i: usize, j: usize| -> Box<dyn Fn(f64) -> f64> {
            let d = dev(i);
            let h = s.d2d.gain(i, j);
            let n0 = p.noise_psd;
            Box::new(move |b| rate(b, d.tx_power, h, n0))
        };
        let worst_gain = s.devices.iter().map(|d| d.gain_to_server).fold(f64::INFINITY, f64::min);
        let broadcast = p.model_bits / rate(p.bandwidth, p.server_power, worst_gain, p.noise_psd);
        Self {
            samples: [dev(0).initial_samples as f64, dev(1).initial_samples as f64],
            compute_per_sample: [0, 1].map(|i| {
                let d = dev(i);
                p.local_iters as f64 * p.flops_per_sample / (d.flops_per_cycle * d.cpu_freq)
            }),
            upload_rate: [up(0), up(1)],
            d2d_rate: [side(0, 1), side(1, 0)],
            bandwidth: p.bandwidth,
            model_bits: p.model_bits,
            sample_bits: p.sample_bits,
            broadcast,
            rounds: p.global_iters as f64,
        }
    }

    /// Upload delay of each device for each point of the upload-split axis.
    fn upload_table(&self) -> Vec<[f64; 2]> {
        linspace(0.0, 1.0, AXIS)
            .into_iter()
            .map(|u| {
                let t = |i: usize, share: f64| {
                    let r = (self.upload_rate[i])(share * self.bandwidth);
                    if r > 0.0 {
                        self.model_bits / r
                    } else {
                        f64::INFINITY
                    }
                };
                [t(0, u), t(1, 1.0 - u)]
            })
            .collect()
    }

    /// Best straggler delay over the upload-split axis for given transfers.
    fn best_round(&self, uploads: &[[f64; 2]], d12: f64, d21: f64) -> f64 {
        let c0 = (self.samples[0] - d12 + d21) * self.compute_per_sample[0];
        let c1 = (self.samples[1] - d21 + d12) * self.compute_per_sample[1];
        uploads
            .iter()
            .map(|t| (c0 + t[0]).max(c1 + t[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest transfer volumes each direction can carry in `tau1` for each
    /// point of the D2D bandwidth-split axis.
    fn d2d_caps(&self, tau1: f64) -> Vec<[f64; 2]> {
        linspace(0.0, 1.0, AXIS)
            .into_iter()
            .map(|s| {
                [
                    tau1 * (self.d2d_rate[0])(s * self.bandwidth) / self.sample_bits,
                    tau1 * (self.d2d_rate[1])((1.0 - s) * self.bandwidth) / self.sample_bits,
                ]
            })
            .collect()
    }

    /// Minimum per-round straggler delay at a fixed sharing deadline, over the
    /// 201-point grids of both transfer volumes and both bandwidth splits with
    /// full transmit power.
    pub fn grid_inner(&self, tau1: f64) -> f64 {
        let uploads = self.upload_table();
        let caps = self.d2d_caps(tau1);
        let mut best = f64::INFINITY;
        for &d12 in &linspace(0.0, self.samples[0], AXIS) {
            for &d21 in &linspace(0.0, self.samples[1], AXIS) {
                let feasible = caps.iter().any(|c| d12 <= c[0] && d21 <= c[1]);
                if feasible {
                    best = best.min(self.best_round(&uploads, d12, d21));
                }
            }
        }
        best
    }

    /// Minimum total delay over the same grids, with the sharing deadline set
    /// to the shortest one each transfer pair allows.
    pub fn grid_total(&self) -> (f64, f64) {
        let uploads = self.upload_table();
        let splits = linspace(0.0, 1.0, AXIS);
        let mut best = (f64::INFINITY, 0.0);
        for &d12 in &linspace(0.0, self.samples[0], AXIS) {
            for &d21 in &linspace(0.0, self.samples[1], AXIS) {
                let need = |volume: f64, r: f64| {
                    if volume == 0.0 {
                        0.0
                    } else if r > 0.0 {
                        self.sample_bits * volume / r
                    } else {
                        f64::INFINITY
                    }
                };
                let tau1 = splits
                    .iter()
                    .map(|&s| {
                        need(d12, (self.d2d_rate[0])(s * self.bandwidth))
                            .max(need(d21, (self.d2d_rate[1])((1.0 - s) * self.bandwidth)))
                    })
                    .fold(f64::INFINITY, f64::min);
                let total = tau1 + self.rounds * (self.broadcast + self.best_round(&uploads, d12, d21));
                if total < best.0 {
                    best = (total, tau1);
                }
            }
        }
        best
    }
}

/// Mean softmax cross-entropy gradient, written without the library.
pub fn reference_gradient(w: &[f64], features: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Vec<f64> {
    let f = features[0].len();
    let mut g = vec![0.0; w.len()];
    for (x, &y) in features.iter().zip(labels) {
        let z: Vec<f64> = (0..num_classes)
            .map(|c| w[f * num_classes + c] + (0..f).map(|k| w[c * f + k] * x[k]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = e.iter().sum();
        for c in 0..num_classes {
            let p = e[c] / total - if c == y { 1.0 } else { 0.0 };
            for k in 0..f {
                g[c * f + k] += p * x[k];
            }
            g[f * num_classes + c] += p;
        }
    }
    let n = features.len() as f64;
    g.iter().map(|v| v / n).collect()
}

/// Plain full-batch gradient descent on the pooled data.
pub fn centralized_trajectory(w0: &[f64], features: &[Vec<f64>], labels: &[usize], num_classes: usize, eta: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut out = vec![w0.to_vec()];
    for _ in 0..steps {
        let w = out.last().unwrap();
        let g = reference_gradient(w, features, labels, num_classes);
        out.push(w.iter().zip(&g).map(|(a, b)| a - eta * b).collect());
    }
    out
}

pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
