//! Distributed full-batch gradient descent on synthetic data.
//!
//! The learner is multinomial logistic regression (softmax cross-entropy of
//! a linear model). Each global iteration broadcasts `w`, runs `N` local
//! descent steps on every device and aggregates the results weighted by the
//! devices' sample counts. Wall-clock time is not measured but modeled with
//! [`crate::delay_model`], so the trace reports when each iteration would
//! finish on the configured wireless system.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay_model::{round_transfers, total_delay, transfers_as_f64, DelayError, SharingPlan};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dataset is empty")]
    EmptyPartition,
    #[error("aggregation weights sum to zero")]
    ZeroWeight,
    #[error("{0}")]
    Inconsistent(String),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

pub type Dataset = Vec<Sample>;

/// Weights are stored class-major (`w[c * F + f]`), followed by one bias per
/// class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub num_features: usize,
    pub num_classes: usize,
    pub w: Vec<f64>,
}

impl ModelState {
    pub fn zeros(num_features: usize, num_classes: usize) -> Self {
        Self {
            num_features,
            num_classes,
            w: vec![0.0; num_features * num_classes + num_classes],
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let f = self.num_features;
        let bias = &self.w[f * self.num_classes..];
        for (c, z) in out.iter_mut().enumerate() {
            let row = &self.w[c * f..(c + 1) * f];
            *z = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.num_classes];
        self.logits(x, &mut z);
        z.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c)
            .unwrap_or(0)
    }
}

/// Fraction of correctly classified samples; zero on an empty set.
pub fn accuracy(model: &ModelState, data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data.iter().filter(|s| model.predict(&s.features) == s.label).count();
    hits as f64 / data.len() as f64
}

/// Mean cross-entropy over `data` and its gradient with respect to `w`.
pub fn loss_and_gradient(model: &ModelState, data: &[Sample]) -> Result<(f64, Vec<f64>), SimError> {
    if data.is_empty() {
        return Err(SimError::EmptyPartition);
    }
    let (f, k) = (model.num_features, model.num_classes);
    let mut grad = vec![0.0; model.w.len()];
    let mut z = vec![0.0; k];
    let mut loss = 0.0;
    for s in data {
        model.logits(&s.features, &mut z);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in z.iter_mut() {
            *v = (*v - zmax).exp();
            denom += *v;
        }
        loss += denom.ln() - (z[s.label].ln());
        for c in 0..k {
            let coef = z[c] / denom - if c == s.label { 1.0 } else { 0.0 };
            for (g, x) in grad[c * f..(c + 1) * f].iter_mut().zip(&s.features) {
                *g += coef * x;
            }
            grad[f * k + c] += coef;
        }
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// `local_iters` gradient-descent steps with step size `eta`.
pub fn local_update(model: &ModelState, data: &[Sample], eta: f64, local_iters: u32) -> Result<ModelState, SimError> {
    let mut next = model.clone();
    for _ in 0..local_iters {
        let (_, grad) = loss_and_gradient(&next, data)?;
        for (w, g) in next.w.iter_mut().zip(&grad) {
            *w -= eta * g;
        }
    }
    Ok(next)
}

/// Weighted average of parameter vectors, summed in input order.
///
/// Computed as offsets from the first weighted vector, so identical inputs
/// (and a single input) come back bit for bit.
pub fn global_aggregate(models: &[(&[f64], f64)]) -> Result<Vec<f64>, SimError> {
    let total: f64 = models.iter().map(|(_, n)| n).sum();
    if total <= 0.0 || models.is_empty() {
        return Err(SimError::ZeroWeight);
    }
    let dim = models[0].0.len();
    if models.iter().any(|(w, _)| w.len() != dim) {
        return Err(SimError::Inconsistent("parameter vectors differ in length".into()));
    }
    let anchor = models.iter().find(|(_, n)| *n > 0.0).ok_or(SimError::ZeroWeight)?.0;
    let mut offset = vec![0.0; dim];
    for (w, n) in models {
        if *n == 0.0 {
            continue;
        }
        for ((o, v), a) in offset.iter_mut().zip(w.iter()).zip(anchor) {
            *o += n * (v - a);
        }
    }
    Ok(anchor.iter().zip(&offset).map(|(a, o)| a + o / total).collect())
}

/// Which of a sender's samples leave the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingPolicy {
    /// Uniformly at random from the sender's holdings.
    #[default]
    Proportional,
    /// Always from the class the sender currently holds most of.
    ClassRebalancing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedDatasets {
    pub datasets: Vec<Dataset>,
    /// Set when the requested policy could not be applied to some sender and
    /// proportional selection was used instead.
    pub fell_back: bool,
}

/// Moves `transfers[i][j]` samples from device `i` to device `j`.
///
/// Senders only give away samples they held before the exchange.
pub fn apply_sharing_plan(datasets: &[Dataset], transfers: &[Vec<u64>], policy: SharingPolicy, seed: u64) -> Result<SharedDatasets, SimError> {
    let k = datasets.len();
    if transfers.len() != k || transfers.iter().any(|row| row.len() != k) {
        return Err(SimError::Inconsistent(format!("transfer grid must be {k}x{k}")));
    }
    let mut fell_back = false;
    let mut kept: Vec<Dataset> = Vec::with_capacity(k);
    let mut inbox: Vec<Dataset> = vec![Vec::new(); k];
    for (i, data) in datasets.iter().enumerate() {
        let outgoing: u64 = transfers[i].iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &n)| n).sum();
        if outgoing as usize > data.len() {
            return Err(SimError::Inconsistent(format!(
                "device {i} sends {outgoing} samples but holds {}",
                data.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let distinct = {
            let mut labels: Vec<usize> = data.iter().map(|s| s.label).collect();
            labels.sort_unstable();
            labels.dedup();
            labels.len()
        };
        if policy == SharingPolicy::ClassRebalancing && outgoing > 0 && distinct < 2 {
            fell_back = true;
        } else if policy == SharingPolicy::ClassRebalancing {
            order = rebalancing_order(data, &order);
        }
        let mut cursor = 0;
        for j in 0..k {
            if j == i {
                continue;
            }
            let n = transfers[i][j] as usize;
            inbox[j].extend(order[cursor..cursor + n].iter().map(|&idx| data[idx].clone()));
            cursor += n;
        }
        let mut keep: Vec<usize> = order[cursor..].to_vec();
        keep.sort_unstable();
        kept.push(keep.into_iter().map(|idx| data[idx].clone()).collect());
    }
    for (mine, received) in kept.iter_mut().zip(inbox) {
        mine.extend(received);
    }
    Ok(SharedDatasets { datasets: kept, fell_back })
}

/// Reorders shuffled indices so each next pick comes from the currently
/// largest class (lowest label on ties).
fn rebalancing_order(data: &[Sample], shuffled: &[usize]) -> Vec<usize> {
    let num_labels = data.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for &idx in shuffled.iter().rev() {
        buckets[data[idx].label].push(idx);
    }
    let mut out = Vec::with_capacity(shuffled.len());
    while out.len() < shuffled.len() {
        let c = (0..num_labels)
            .max_by(|&a, &b| buckets[a].len().cmp(&buckets[b].len()).then(b.cmp(&a)))
            .expect("non-empty");
        out.push(buckets[c].pop().expect("largest bucket is non-empty"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Overrides the scenario's learning rate when set.
    pub learning_rate: Option<f64>,
    pub policy: SharingPolicy,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            learning_rate: None,
            policy: SharingPolicy::Proportional,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u32,
    pub elapsed_seconds: f64,
    pub global_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub points: Vec<TracePoint>,
    pub final_model: ModelState,
    pub policy_fell_back: bool,
}

impl TrainingTrace {
    pub fn final_accuracy(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.test_accuracy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "elapsed_seconds", "global_loss", "test_accuracy"])?;
        for p in &self.points {
            w.write_record([
                p.iteration.to_string(),
                p.elapsed_seconds.to_string(),
                p.global_loss.to_string(),
                p.test_accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `F(w)`: per-device mean losses weighted by sample counts.
pub fn global_loss(model: &ModelState, datasets: &[Dataset]) -> Result<f64, SimError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for data in datasets.iter().filter(|d| !d.is_empty()) {
        let (l, _) = loss_and_gradient(model, data)?;
        num += data.len() as f64 * l;
        den += data.len() as f64;
    }
    if den == 0.0 {
        return Err(SimError::ZeroWeight);
    }
    Ok(num / den)
}

/// One global iteration: local updates from `model` on every non-empty
/// device, then the count-weighted aggregate.
pub fn global_round(model: &ModelState, datasets: &[Dataset], eta: f64, local_iters: u32) -> Result<ModelState, SimError> {
    let locals: Vec<(ModelState, f64)> = datasets
        .par_iter()
        .filter(|d| !d.is_empty())
        .map(|d| local_update(model, d, eta, local_iters).map(|m| (m, d.len() as f64)))
        .collect::<Result<_, _>>()?;
    let refs: Vec<(&[f64], f64)> = locals.iter().map(|(m, n)| (m.w.as_slice(), *n)).collect();
    Ok(ModelState {
        w: global_aggregate(&refs)?,
        ..model.clone()
    })
}

/// Parameter vectors after each of `rounds` global iterations, starting with
/// `init` itself.
pub fn federated_trajectory(init: &ModelState, datasets: &[Dataset], eta: f64, local_iters: u32, rounds: u32) -> Result<Vec<ModelState>, SimError> {
    let mut out = vec![init.clone()];
    for _ in 0..rounds {
        let next = global_round(out.last().expect("non-empty"), datasets, eta, local_iters)?;
        out.push(next);
    }
    Ok(out)
}

/// Applies `plan` once, then trains for `M` global iterations.
///
/// Transfers are rounded to whole samples before they are applied, and the
/// modeled delays use the rounded transfers.
pub fn run_training(scenario: &Scenario, datasets: &[Dataset], plan: &SharingPlan, config: &ModelConfig, test_set: &[Sample]) -> Result<TrainingTrace, SimError> {
    let k = scenario.num_devices();
    if datasets.len() != k {
        return Err(SimError::Inconsistent(format!("{} datasets for {k} devices", datasets.len())));
    }
    for (i, (data, dev)) in datasets.iter().zip(&scenario.devices).enumerate() {
        if data.len() as u64 != dev.initial_samples {
            return Err(SimError::Inconsistent(format!(
                "device {i} holds {} samples, scenario says {}",
                data.len(),
                dev.initial_samples
            )));
        }
    }
    let initial: Vec<u64> = datasets.iter().map(|d| d.len() as u64).collect();
    let transfers = round_transfers(&plan.d, &initial);
    let shared = apply_sharing_plan(datasets, &transfers, config.policy, config.seed)?;
    let rounded = SharingPlan {
        d: transfers_as_f64(&transfers),
        ..plan.clone()
    };
    let delay = total_delay(&rounded, scenario)?;

    let eta = config.learning_rate.unwrap_or(scenario.params.learning_rate);
    let num_features = datasets.iter().flatten().next().map_or(0, |s| s.features.len());
    let num_classes = datasets.iter().flatten().chain(test_set).map(|s| s.label + 1).max().unwrap_or(1);
    let mut model = ModelState::zeros(num_features, num_classes);
    let data = &shared.datasets;
    let mut elapsed = delay.sharing;
    let mut points = vec![TracePoint {
        iteration: 0,
        elapsed_seconds: elapsed,
        global_loss: global_loss(&model, data)?,
        test_accuracy: accuracy(&model, test_set),
    }];
    for m in 1..=scenario.params.global_iters {
        model = global_round(&model, data, eta, scenario.params.local_iters)?;
        elapsed += delay.per_round;
        points.push(TracePoint {
            iteration: m,
            elapsed_seconds: elapsed,
            global_loss: global_loss(&model, data)?,
            test_accuracy: accuracy(&model, test_set),
        });
    }
    Ok(TrainingTrace {
        points,
        final_model: model,
        policy_fell_back: shared.fell_back,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub pool: Dataset,
    pub test: Dataset,
    pub num_classes: usize,
}

/// Gaussian class clusters with unit variance per feature.
///
/// Class means sit on distinct axes (random unit directions when there are
/// fewer features than classes) scaled so neighbouring means are
/// `separation` apart. The pool holds `samples_total` samples split evenly
/// over the classes; the test set is a further fifth of that, drawn
/// independently.
pub fn make_synthetic_task(num_classes: usize, num_features: usize, samples_total: usize, separation: f64, seed: u64) -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            if num_features >= num_classes {
                (0..num_features).map(|f| if f == c { scale } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..num_features).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| scale * x / norm).collect()
            }
        })
        .collect();
    let draw = |count: usize, rng: &mut ChaCha8Rng| -> Dataset {
        let mut out = Vec::with_capacity(count);
        for n in 0..count {
            let label = n % num_classes;
            let features = means[label].iter().map(|m| m + normal.sample(rng)).collect();
            out.push(Sample { features, label });
        }
        out
    };
    let pool = draw(samples_total, &mut rng);
    let test = draw((samples_total / 5).max(num_classes), &mut rng);
    SyntheticTask { pool, test, num_classes }
}

/// Splits `pool` into device datasets whose label counts follow
/// `histograms`, drawing each class's samples in a seeded random order.
pub fn partition_by_histograms(pool: &[Sample], histograms: &[Vec<u64>], seed: u64) -> Result<Vec<Dataset>, SimError> {
    let num_labels = pool.iter().map(|s| s.label + 1).max().unwrap_or(0).max(histograms.iter().map(Vec::len).max().unwrap_or(0));
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (idx, s) in pool.iter().enumerate() {
        by_label[s.label].push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for bucket in &mut by_label {
        bucket.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(histograms.len());
    for hist in histograms {
        let mut data = Vec::new();
        for (label, &count) in hist.iter().enumerate() {
            let bucket = &mut by_label[label];
            if (bucket.len() as u64) < count {
                return Err(SimError::Inconsistent(format!(
                    "pool has too few samples of class {label} for the requested partition"
                )));
            }
            data.extend(bucket.drain(bucket.len() - count as usize..).map(|idx| pool[idx].clone()));
        }
        data.shuffle(&mut rng);
        out.push(data);
    }
    Ok(out)
}

/// Samples drawn uniformly at random for probing, e.g. gradient checks.
pub fn random_model(num_features: usize, num_classes: usize, scale: f64, seed: u64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ModelState::zeros(num_features, num_classes);
    m.w.iter_mut().for_each(|w| *w = rng.random_range(-scale..scale));
    m
}
