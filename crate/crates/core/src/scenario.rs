//! System configuration: radio and training constants, device profiles,
//! D2D channel gains, non-IID label partitions and the JSON config format.
//!
//! All quantities held in memory are linear SI values (W, W/Hz, Hz, linear
//! power gains). Decibel inputs are only accepted at the file boundary.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Config schema version written to and expected in every scenario file.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Global radio and training constants shared by every device.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// System bandwidth `B` in Hz.
    pub bandwidth: f64,
    /// Noise power spectral density `n0` in W/Hz.
    pub noise_psd: f64,
    /// Edge-server transmit power in W.
    pub server_power: f64,
    /// Bits needed to send one model parameter vector.
    pub model_bits: f64,
    /// FLOPs per sample per local iteration.
    pub flops_per_sample: f64,
    /// Local iterations per global round (`N`).
    pub local_iters: u32,
    /// Global rounds (`M`).
    pub global_iters: u32,
    /// Bits per raw data sample.
    pub sample_bits: f64,
    pub learning_rate: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("bandwidth_B", self.bandwidth),
            ("noise_psd_n0", self.noise_psd),
            ("server_power_Ps", self.server_power),
            ("model_bits_Q", self.model_bits),
            ("flops_per_sample_L", self.flops_per_sample),
            ("sample_bits_a", self.sample_bits),
            ("learning_rate_eta", self.learning_rate),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0 (got {value})")));
            }
        }
        if self.local_iters < 1 {
            return Err(invalid("local_iters_N", "must be >= 1"));
        }
        if self.global_iters < 1 {
            return Err(invalid("global_iters_M", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-device compute and radio attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub id: usize,
    /// FLOPs per CPU cycle.
    pub flops_per_cycle: f64,
    /// CPU frequency in Hz.
    pub cpu_freq: f64,
    /// Transmit power in W.
    pub tx_power: f64,
    /// Linear channel power gain to the edge server.
    pub gain_to_server: f64,
    pub initial_samples: u64,
    /// Sample counts per class; sums to `initial_samples`.
    pub label_histogram: Vec<u64>,
}

impl DeviceProfile {
    /// FLOPs per second.
    pub fn compute_rate(&self) -> f64 {
        self.flops_per_cycle * self.cpu_freq
    }

    fn validate(&self, index: usize) -> Result<(), ScenarioError> {
        let field = |name: &str| format!("devices[{index}].{name}");
        if self.id != index {
            return Err(invalid(field("id"), format!("must equal position {index}")));
        }
        if !(self.flops_per_cycle.is_finite() && self.flops_per_cycle >= 1.0) {
            return Err(invalid(field("flops_per_cycle_C"), "must be >= 1"));
        }
        if !(self.cpu_freq.is_finite() && self.cpu_freq > 0.0) {
            return Err(invalid(field("cpu_freq_f"), "must be > 0"));
        }
        if !(self.tx_power.is_finite() && self.tx_power > 0.0) {
            return Err(invalid(field("tx_power_P"), "must be > 0"));
        }
        if !(self.gain_to_server > 0.0 && self.gain_to_server <= 1.0) {
            return Err(invalid(field("gain_to_server_g"), "must lie in (0, 1]"));
        }
        let total: u64 = self.label_histogram.iter().sum();
        if total != self.initial_samples {
            return Err(invalid(
                field("label_histogram"),
                format!("sums to {total}, expected initial_samples = {}", self.initial_samples),
            ));
        }
        Ok(())
    }
}

/// Pairwise D2D power gains `h_ij`; the diagonal is unused and stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct D2DChannelMatrix {
    gains: Vec<Vec<f64>>,
}

impl D2DChannelMatrix {
    pub fn new(gains: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let k = gains.len();
        for (i, row) in gains.iter().enumerate() {
            if row.len() != k {
                return Err(invalid("d2d.gains", format!("row {i} has {} entries, expected {k}", row.len())));
            }
            for (j, &h) in row.iter().enumerate() {
                if i != j && !(h > 0.0 && h <= 1.0) {
                    return Err(invalid(format!("d2d.gains[{i}][{j}]"), format!("must lie in (0, 1] (got {h})")));
                }
            }
        }
        let mut gains = gains;
        for (i, row) in gains.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        Ok(Self { gains })
    }

    /// Builds a symmetric matrix from device positions using `path_loss_gain`.
    /// Distances below `d0` are clamped to `d0`.
    pub fn from_positions(positions: &[[f64; 2]], path_loss: &PathLoss) -> Result<Self, ScenarioError> {
        let k = positions.len();
        let mut gains = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in (i + 1)..k {
                let dist = distance(positions[i], positions[j]).max(path_loss.d0);
                let h = path_loss.gain(dist)?;
                gains[i][j] = h;
                gains[j][i] = h;
            }
        }
        Self::new(gains)
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn gain(&self, from: usize, to: usize) -> f64 {
        self.gains[from][to]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.gains
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.len();
        (0..k).all(|i| (0..k).all(|j| self.gains[i][j] == self.gains[j][i]))
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A full system configuration. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    pub devices: Vec<DeviceProfile>,
    pub d2d: D2DChannelMatrix,
    /// Optional device coordinates in meters, server at the origin.
    pub geometry: Option<Vec<[f64; 2]>>,
}

impl Scenario {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let k = self.devices.len();
        if k < 2 {
            return Err(invalid("devices", format!("K ≥ 2 required (got {k})")));
        }
        self.params.validate()?;
        for (i, dev) in self.devices.iter().enumerate() {
            dev.validate(i)?;
        }
        if self.d2d.len() != k {
            return Err(invalid("d2d.gains", format!("dimension {} does not match K = {k}", self.d2d.len())));
        }
        if let Some(geo) = &self.geometry {
            if geo.len() != k {
                return Err(invalid("geometry", format!("has {} positions, expected {k}", geo.len())));
            }
            if geo.iter().flatten().any(|c| !c.is_finite()) {
                return Err(invalid("geometry", "coordinates must be finite"));
            }
        }
        Ok(())
    }

    pub fn initial_counts(&self) -> Vec<f64> {
        self.devices.iter().map(|d| d.initial_samples as f64).collect()
    }

    pub fn with_global_iters(&self, m: u32) -> Self {
        let mut s = self.clone();
        s.params.global_iters = m;
        s
    }
}

/// `beta0 * (d / d0)^(-alpha)` path-loss model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    pub beta0: f64,
    pub d0: f64,
    pub alpha: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self {
            beta0: db_to_linear(-30.0),
            d0: 1.0,
            alpha: 3.0,
        }
    }
}

impl PathLoss {
    pub fn gain(&self, distance: f64) -> Result<f64, ScenarioError> {
        path_loss_gain(distance, self.beta0, self.d0, self.alpha)
    }
}

pub fn path_loss_gain(distance: f64, beta0: f64, d0: f64, alpha: f64) -> Result<f64, ScenarioError> {
    if !(distance > 0.0) {
        return Err(ScenarioError::Domain(format!("distance must be > 0 (got {distance})")));
    }
    if !(d0 > 0.0) || !(beta0 > 0.0) || !(alpha >= 0.0) {
        return Err(ScenarioError::Domain(format!(
            "path-loss parameters out of range (beta0 = {beta0}, d0 = {d0}, alpha = {alpha})"
        )));
    }
    Ok(beta0 * (distance / d0).powf(-alpha))
}

/// Label histograms for `num_devices` devices, each holding
/// `labels_per_device` classes with equal counts.
///
/// Classes are dealt from one seeded permutation in round-robin order, so
/// every class is used by at most `ceil(K * labels_per_device / num_classes)`
/// devices.
pub fn make_noniid_partition(
    num_classes: usize,
    samples_per_device: u64,
    labels_per_device: usize,
    num_devices: usize,
    seed: u64,
) -> Result<Vec<Vec<u64>>, ScenarioError> {
    if labels_per_device == 0 || labels_per_device > num_classes {
        return Err(ScenarioError::Config(format!(
            "labels_per_device must lie in 1..={num_classes} (got {labels_per_device})"
        )));
    }
    if !samples_per_device.is_multiple_of(labels_per_device as u64) {
        return Err(ScenarioError::Config(format!(
            "samples_per_device ({samples_per_device}) is not divisible by labels_per_device ({labels_per_device})"
        )));
    }
    let per_class = samples_per_device / labels_per_device as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.shuffle(&mut rng);
    let histograms = (0..num_devices)
        .map(|k| {
            let mut hist = vec![0u64; num_classes];
            for l in 0..labels_per_device {
                hist[order[(k * labels_per_device + l) % num_classes]] = per_class;
            }
            hist
        })
        .collect();
    Ok(histograms)
}

/// Uniform placement of devices inside a disc whose center sits
/// `center_distance` meters from the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscGeometry {
    pub center_distance: f64,
    pub radius: f64,
    pub seed: u64,
}

impl DiscGeometry {
    pub fn positions(&self, k: usize) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..k)
            .map(|_| {
                let r = self.radius * rng.random::<f64>().sqrt();
                let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                [self.center_distance + r * theta.cos(), r * theta.sin()]
            })
            .collect()
    }
}

/// Knobs for the published six-device setup that the publication leaves open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperScenarioOptions {
    pub geometry_seed: u64,
    pub disc_radius: f64,
    pub partition_seed: u64,
    pub global_iters: u32,
}

impl Default for PaperScenarioOptions {
    fn default() -> Self {
        Self {
            geometry_seed: 1,
            disc_radius: 100.0,
            partition_seed: 1,
            global_iters: 10,
        }
    }
}

pub const PAPER_SERVER_DISTANCE: f64 = 350.0;
pub const PAPER_NUM_CLASSES: usize = 10;
pub const PAPER_SAMPLES_PER_DEVICE: u64 = 5000;

pub fn paper_params(global_iters: u32) -> SystemParams {
    SystemParams {
        bandwidth: 1e6,
        noise_psd: dbm_to_watts(-130.0),
        server_power: dbm_to_watts(43.0),
        model_bits: 3.2e9,
        flops_per_sample: 6e9,
        local_iters: 5,
        global_iters,
        sample_bits: 784.0 * 8.0 + 4.0,
        learning_rate: 0.01,
    }
}

/// The six-device evaluation setup with default geometry.
pub fn build_paper_scenario() -> Scenario {
    paper_scenario(&PaperScenarioOptions::default()).expect("default paper scenario is valid")
}

pub fn paper_scenario(opts: &PaperScenarioOptions) -> Result<Scenario, ScenarioError> {
    const FLOPS_PER_CYCLE: [f64; 6] = [8.0, 8.0, 12.0, 12.0, 16.0, 16.0];
    const CPU_GHZ: [f64; 6] = [1.5, 1.5, 1.95, 1.95, 2.5, 2.5];
    let path_loss = PathLoss::default();
    let g = path_loss.gain(PAPER_SERVER_DISTANCE)?;
    let histograms = make_noniid_partition(PAPER_NUM_CLASSES, PAPER_SAMPLES_PER_DEVICE, 2, 6, opts.partition_seed)?;
    let devices = histograms
        .into_iter()
        .enumerate()
        .map(|(i, label_histogram)| DeviceProfile {
            id: i,
            flops_per_cycle: FLOPS_PER_CYCLE[i],
            cpu_freq: CPU_GHZ[i] * 1e9,
            tx_power: dbm_to_watts(33.0),
            gain_to_server: g,
            initial_samples: PAPER_SAMPLES_PER_DEVICE,
            label_histogram,
        })
        .collect::<Vec<_>>();
    let geometry = DiscGeometry {
        center_distance: PAPER_SERVER_DISTANCE,
        radius: opts.disc_radius,
        seed: opts.geometry_seed,
    }
    .positions(devices.len());
    let d2d = D2DChannelMatrix::from_positions(&geometry, &path_loss)?;
    let scenario = Scenario {
        params: paper_params(opts.global_iters),
        devices,
        d2d,
        geometry: Some(geometry),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// A heterogeneous scenario with `k` devices drawn from `seed`.
///
/// Devices are placed in a 150 m disc centred 350 m from the server; server
/// and D2D gains both follow the default path-loss model. Compute
/// capabilities, transmit powers and dataset sizes vary per device.
pub fn random_scenario(seed: u64, k: usize) -> Result<Scenario, ScenarioError> {
    if k < 2 {
        return Err(invalid("devices", format!("K ≥ 2 required (got {k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path_loss = PathLoss::default();
    let geometry = DiscGeometry {
        center_distance: PAPER_SERVER_DISTANCE,
        radius: 150.0,
        seed: rng.random(),
    }
    .positions(k);
    let mut devices = Vec::with_capacity(k);
    for (i, pos) in geometry.iter().enumerate() {
        let flops_per_cycle = [4.0, 8.0, 12.0, 16.0][rng.random_range(0..4)];
        let cpu_freq = rng.random_range(1.0e9..3.0e9);
        let tx_power = dbm_to_watts(rng.random_range(23.0..33.0));
        let gain_to_server = path_loss.gain(distance(*pos, [0.0, 0.0]))?;
        let per_class: u64 = rng.random_range(1000..=4000);
        let mut classes: Vec<usize> = (0..PAPER_NUM_CLASSES).collect();
        classes.shuffle(&mut rng);
        let mut label_histogram = vec![0u64; PAPER_NUM_CLASSES];
        label_histogram[classes[0]] = per_class;
        label_histogram[classes[1]] = per_class;
        devices.push(DeviceProfile {
            id: i,
            flops_per_cycle,
            cpu_freq,
            tx_power,
            gain_to_server,
            initial_samples: 2 * per_class,
            label_histogram,
        });
    }
    let d2d = D2DChannelMatrix::from_positions(&geometry, &path_loss)?;
    let scenario = Scenario {
        params: paper_params(10),
        devices,
        d2d,
        geometry: Some(geometry),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// `k` identical devices with a uniform D2D gain; sharing cannot help here.
pub fn homogeneous_scenario(k: usize, global_iters: u32) -> Result<Scenario, ScenarioError> {
    let path_loss = PathLoss::default();
    let g = path_loss.gain(PAPER_SERVER_DISTANCE)?;
    let h = path_loss.gain(100.0)?;
    let histograms = make_noniid_partition(PAPER_NUM_CLASSES, PAPER_SAMPLES_PER_DEVICE, 2, k, 0)?;
    let devices = histograms
        .into_iter()
        .enumerate()
        .map(|(i, label_histogram)| DeviceProfile {
            id: i,
            flops_per_cycle: 12.0,
            cpu_freq: 2.0e9,
            tx_power: dbm_to_watts(33.0),
            gain_to_server: g,
            initial_samples: PAPER_SAMPLES_PER_DEVICE,
            label_histogram,
        })
        .collect();
    let gains = (0..k).map(|i| (0..k).map(|j| if i == j { 0.0 } else { h }).collect()).collect();
    let scenario = Scenario {
        params: paper_params(global_iters),
        devices,
        d2d: D2DChannelMatrix::new(gains)?,
        geometry: None,
    };
    scenario.validate()?;
    Ok(scenario)
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PowerSpec {
    Dbm(f64),
    Watts(f64),
}

impl PowerSpec {
    fn watts(self) -> f64 {
        match self {
            PowerSpec::Dbm(v) => dbm_to_watts(v),
            PowerSpec::Watts(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NoiseSpec {
    DbmPerHz(f64),
    WattsPerHz(f64),
}

impl NoiseSpec {
    fn watts_per_hz(self) -> f64 {
        match self {
            NoiseSpec::DbmPerHz(v) => dbm_to_watts(v),
            NoiseSpec::WattsPerHz(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum GainSpec {
    Linear(f64),
    Db { db: f64 },
}

impl GainSpec {
    fn linear(self) -> f64 {
        match self {
            GainSpec::Linear(v) => v,
            GainSpec::Db { db } => db_to_linear(db),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    #[serde(rename = "bandwidth_B")]
    bandwidth: f64,
    #[serde(rename = "noise_psd_n0")]
    noise_psd: NoiseSpec,
    #[serde(rename = "server_power_Ps")]
    server_power: PowerSpec,
    #[serde(rename = "model_bits_Q")]
    model_bits: f64,
    #[serde(rename = "flops_per_sample_L")]
    flops_per_sample: f64,
    #[serde(rename = "local_iters_N")]
    local_iters: u32,
    #[serde(rename = "global_iters_M")]
    global_iters: u32,
    #[serde(rename = "sample_bits_a")]
    sample_bits: f64,
    #[serde(rename = "learning_rate_eta")]
    learning_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviceFile {
    id: usize,
    #[serde(rename = "flops_per_cycle_C")]
    flops_per_cycle: f64,
    #[serde(rename = "cpu_freq_f")]
    cpu_freq: f64,
    #[serde(rename = "tx_power_P")]
    tx_power: PowerSpec,
    #[serde(rename = "gain_to_server_g")]
    gain_to_server: GainSpec,
    initial_samples: u64,
    label_histogram: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct D2DFile {
    gains: Vec<Vec<GainSpec>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    spec_version: u32,
    params: ParamsFile,
    devices: Vec<DeviceFile>,
    d2d: D2DFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geometry: Option<Vec<[f64; 2]>>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let p = &s.params;
        ScenarioFile {
            spec_version: SCHEMA_VERSION,
            params: ParamsFile {
                bandwidth: p.bandwidth,
                noise_psd: NoiseSpec::WattsPerHz(p.noise_psd),
                server_power: PowerSpec::Watts(p.server_power),
                model_bits: p.model_bits,
                flops_per_sample: p.flops_per_sample,
                local_iters: p.local_iters,
                global_iters: p.global_iters,
                sample_bits: p.sample_bits,
                learning_rate: p.learning_rate,
            },
            devices: s
                .devices
                .iter()
                .map(|d| DeviceFile {
                    id: d.id,
                    flops_per_cycle: d.flops_per_cycle,
                    cpu_freq: d.cpu_freq,
                    tx_power: PowerSpec::Watts(d.tx_power),
                    gain_to_server: GainSpec::Linear(d.gain_to_server),
                    initial_samples: d.initial_samples,
                    label_histogram: d.label_histogram.clone(),
                })
                .collect(),
            d2d: D2DFile {
                gains: s
                    .d2d
                    .rows()
                    .iter()
                    .map(|row| row.iter().map(|&h| GainSpec::Linear(h)).collect())
                    .collect(),
            },
            geometry: s.geometry.clone(),
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = ScenarioError;

    fn try_from(f: ScenarioFile) -> Result<Self, Self::Error> {
        if f.spec_version != SCHEMA_VERSION {
            return Err(invalid(
                "spec_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", f.spec_version),
            ));
        }
        let p = f.params;
        let params = SystemParams {
            bandwidth: p.bandwidth,
            noise_psd: p.noise_psd.watts_per_hz(),
            server_power: p.server_power.watts(),
            model_bits: p.model_bits,
            flops_per_sample: p.flops_per_sample,
            local_iters: p.local_iters,
            global_iters: p.global_iters,
            sample_bits: p.sample_bits,
            learning_rate: p.learning_rate,
        };
        let devices = f
            .devices
            .into_iter()
            .map(|d| DeviceProfile {
                id: d.id,
                flops_per_cycle: d.flops_per_cycle,
                cpu_freq: d.cpu_freq,
                tx_power: d.tx_power.watts(),
                gain_to_server: d.gain_to_server.linear(),
                initial_samples: d.initial_samples,
                label_histogram: d.label_histogram,
            })
            .collect::<Vec<_>>();
        if devices.len() < 2 {
            return Err(invalid("devices", format!("K ≥ 2 required (got {})", devices.len())));
        }
        params.validate()?;
        let gains = f
            .d2d
            .gains
            .into_iter()
            .map(|row| row.into_iter().map(GainSpec::linear).collect())
            .collect();
        let scenario = Scenario {
            params,
            devices,
            d2d: D2DChannelMatrix::new(gains)?,
            geometry: f.geometry,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(s)).expect("scenario serializes")
}

pub fn scenario_from_json(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    Scenario::try_from(file)
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    let mut text = scenario_to_json(s);
    text.push('\n');
    fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    scenario_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn path_loss_reference_distance_and_zero_exponent() {
        for alpha in [0.0, 2.0, 3.0, 4.5] {
            assert_eq!(path_loss_gain(1.0, 1e-3, 1.0, alpha).unwrap(), 1e-3);
            assert_eq!(path_loss_gain(7.5, 2e-3, 7.5, alpha).unwrap(), 2e-3);
        }
        assert_eq!(path_loss_gain(1234.0, 1e-3, 1.0, 0.0).unwrap(), 1e-3);
    }

    #[test]
    fn path_loss_at_350_m() {
        // 1e-3 / 350^3 evaluated independently
        let g = path_loss_gain(350.0, 1e-3, 1.0, 3.0).unwrap();
        assert_relative_eq!(g, 2.3323615160349856e-11, max_relative = 1e-12);
    }

    #[test]
    fn path_loss_rejects_non_positive_distance() {
        assert!(matches!(path_loss_gain(0.0, 1e-3, 1.0, 3.0), Err(ScenarioError::Domain(_))));
        assert!(matches!(path_loss_gain(-1.0, 1e-3, 1.0, 3.0), Err(ScenarioError::Domain(_))));
    }

    #[test]
    fn paper_scenario_constants() {
        let s = build_paper_scenario();
        assert_eq!(s.num_devices(), 6);
        assert_eq!(s.params.sample_bits, 6276.0);
        assert_eq!(s.params.local_iters, 5);
        assert_relative_eq!(s.params.noise_psd, 1e-16, max_relative = 1e-12);
        assert_relative_eq!(s.params.server_power, 19.952623149688797, max_relative = 1e-12);
        for d in &s.devices {
            assert_eq!(d.initial_samples, 5000);
            assert_relative_eq!(d.gain_to_server, 2.3323615160349856e-11, max_relative = 1e-12);
            assert_relative_eq!(d.tx_power, 1.9952623149688797, max_relative = 1e-12);
        }
        assert!(s.d2d.is_symmetric());
        s.validate().unwrap();
    }

    #[test]
    fn noniid_two_labels_per_device() {
        let hists = make_noniid_partition(10, 5000, 2, 6, 42).unwrap();
        for h in &hists {
            let nonzero: Vec<_> = h.iter().filter(|&&c| c > 0).collect();
            assert_eq!(nonzero, vec![&2500, &2500]);
        }
        assert_eq!(hists, make_noniid_partition(10, 5000, 2, 6, 42).unwrap());
    }

    #[test]
    fn noniid_iid_limit() {
        let hists = make_noniid_partition(10, 5000, 10, 3, 9).unwrap();
        for h in hists {
            assert_eq!(h, vec![500; 10]);
        }
    }

    #[test]
    fn noniid_rejects_bad_divisibility() {
        assert!(matches!(make_noniid_partition(10, 5001, 2, 3, 0), Err(ScenarioError::Config(_))));
        assert!(matches!(make_noniid_partition(10, 5000, 11, 3, 0), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn round_trip_paper_scenario() {
        let s = build_paper_scenario();
        let back = scenario_from_json(&scenario_to_json(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn decibel_inputs_are_converted() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&build_paper_scenario())).unwrap();
        v["params"]["server_power_Ps"] = serde_json::json!({"dbm": 43.0});
        v["params"]["noise_psd_n0"] = serde_json::json!({"dbm_per_hz": -130.0});
        v["devices"][0]["gain_to_server_g"] = serde_json::json!({"db": -30.0});
        let s = scenario_from_json(&v.to_string()).unwrap();
        assert_relative_eq!(s.params.server_power, dbm_to_watts(43.0));
        assert_relative_eq!(s.params.noise_psd, 1e-16, max_relative = 1e-12);
        assert_relative_eq!(s.devices[0].gain_to_server, 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn single_device_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&build_paper_scenario())).unwrap();
        v["devices"] = serde_json::json!([v["devices"][0].clone()]);
        v["d2d"]["gains"] = serde_json::json!([[0.0]]);
        let err = scenario_from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("K ≥ 2 required"), "{err}");
    }

    #[test]
    fn negative_bandwidth_names_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&build_paper_scenario())).unwrap();
        v["params"]["bandwidth_B"] = serde_json::json!(-1.0);
        let err = scenario_from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("bandwidth_B"), "{err}");
    }

    #[test]
    fn histogram_mismatch_is_rejected() {
        let mut s = build_paper_scenario();
        s.devices[2].label_histogram[0] += 1;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("devices[2].label_histogram"), "{err}");
    }

    #[test]
    fn random_scenarios_are_deterministic_and_valid() {
        let a = random_scenario(7, 5).unwrap();
        assert_eq!(a, random_scenario(7, 5).unwrap());
        assert_ne!(a, random_scenario(8, 5).unwrap());
        assert!(random_scenario(7, 1).is_err());
    }

    proptest! {
        #[test]
        fn path_loss_strictly_decreasing(d in 0.5f64..1e4, step in 1e-3f64..1e3, alpha in 0.1f64..6.0) {
            let near = path_loss_gain(d, 1e-3, 1.0, alpha).unwrap();
            let far = path_loss_gain(d + step, 1e-3, 1.0, alpha).unwrap();
            prop_assert!(far < near);
        }

        #[test]
        fn partition_conserves_samples(k in 1usize..12, labels in 1usize..=10, per in 1u64..400, seed: u64) {
            let spd = per * labels as u64;
            let hists = make_noniid_partition(10, spd, labels, k, seed).unwrap();
            let total: u64 = hists.iter().flatten().sum();
            prop_assert_eq!(total, k as u64 * spd);
        }

        #[test]
        fn serialization_round_trips_bit_exactly(
            seed in 0u64..1000,
            bw in 1e3f64..1e9,
            q in 1.0f64..1e12,
            eta in 1e-6f64..10.0,
        ) {
            let mut s = random_scenario(seed, 3).unwrap();
            s.params.bandwidth = bw;
            s.params.model_bits = q;
            s.params.learning_rate = eta;
            let back = scenario_from_json(&scenario_to_json(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
