//! Truncated-BPTT training with Adam and early stopping.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FEATURE_DIM;
use super::lstm::{l2_loss, Dims, Lstm, LstmState, Masks};
use super::CorrectorError;
use crate::imu::NUM_LEAVES;

/// One sequence of network inputs and relative yaw labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSequence {
    pub features: Vec<[f32; FEATURE_DIM]>,
    pub labels: Vec<[f32; NUM_LEAVES]>,
}

impl TrainSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Windows per optimizer step.
    pub batch: usize,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Frames per training window.
    pub window: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            dropout: 0.4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            window: 128,
            epochs: 100,
            seed: 0,
            patience: 10,
            clip_norm: 5.0,
            hidden: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CorrectorError> {
        let positive = self.batch > 0 && self.window > 0 && self.epochs > 0 && self.hidden > 0;
        let rates = self.lr > 0.0 && self.eps > 0.0 && self.clip_norm >= 0.0;
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(positive && rates && betas && (0.0..1.0).contains(&self.dropout)) {
            return Err(CorrectorError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean absolute label error over all leaves and frames, rad.
    pub val_mae: f64,
    pub lr: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Lstm<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn update(&mut self, params: &mut [f32], grad: &[f32], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let step = (cfg.lr * (1.0 - cfg.beta2.powi(self.t)).sqrt() / (1.0 - cfg.beta1.powi(self.t))) as f32;
        let eps = cfg.eps as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Window starts for one epoch: each sequence is tiled from a random offset.
fn epoch_windows(data: &[TrainSequence], window: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, seq) in data.iter().enumerate() {
        if seq.len() < window {
            continue;
        }
        let spare = seq.len() - window;
        let mut start = rng.random_range(0..=spare.min(window - 1));
        while start <= spare {
            out.push((s, start));
            start += window;
        }
    }
    out.shuffle(rng);
    out
}

fn assemble(
    data: &[TrainSequence],
    windows: &[(usize, usize)],
    window: usize,
) -> (Array2<f32>, Array2<f32>) {
    let batch = windows.len();
    let mut x = Array2::zeros((window * batch, FEATURE_DIM));
    let mut y = Array2::zeros((window * batch, NUM_LEAVES));
    for (b, (s, start)) in windows.iter().enumerate() {
        let seq = &data[*s];
        for t in 0..window {
            let r = t * batch + b;
            x.row_mut(r).as_slice_mut().expect("row").copy_from_slice(&seq.features[start + t]);
            y.row_mut(r).as_slice_mut().expect("row").copy_from_slice(&seq.labels[start + t]);
        }
    }
    (x, y)
}

/// Streaming evaluation of whole sequences from a zero state, dropout off.
/// Returns (mean per-frame L2 error, mean absolute error per label entry).
pub fn evaluate(net: &Lstm<f32>, data: &[TrainSequence]) -> Result<(f64, f64), CorrectorError> {
    const CHUNK: usize = 256;
    let mut l2_sum = 0.0f64;
    let mut abs_sum = 0.0f64;
    let mut frames = 0usize;
    for seq in data {
        let mut state = LstmState::zeros(net.dims(), 1);
        let mut start = 0;
        while start < seq.len() {
            let steps = CHUNK.min(seq.len() - start);
            let x = Array2::from_shape_vec(
                (steps, FEATURE_DIM),
                seq.features[start..start + steps].iter().flatten().copied().collect(),
            )
            .expect("shape");
            let (y, _, next) = net.forward(x.view(), steps, 1, &state, None)?;
            state = next;
            for t in 0..steps {
                let label = &seq.labels[start + t];
                let mut sq = 0.0f64;
                for k in 0..NUM_LEAVES {
                    let e = (y[[t, k]] - label[k]) as f64;
                    sq += e * e;
                    abs_sum += e.abs();
                }
                l2_sum += sq.sqrt();
            }
            start += steps;
        }
        frames += seq.len();
    }
    let n = frames.max(1) as f64;
    Ok((l2_sum / n, abs_sum / (n * NUM_LEAVES as f64)))
}

/// Trains a fresh network. With no validation sequences the training loss
/// selects the best epoch. A non-finite loss aborts with the best weights
/// so far attached to the error.
pub fn train(
    train_data: &[TrainSequence],
    val_data: &[TrainSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, CorrectorError> {
    cfg.validate()?;
    for seq in train_data.iter().chain(val_data) {
        if seq.features.len() != seq.labels.len() {
            return Err(CorrectorError::Shape("feature and label counts differ".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if epoch_windows(train_data, cfg.window, &mut rng.clone()).is_empty() {
        return Err(CorrectorError::EmptyDataset);
    }
    let dims = Dims { hidden: cfg.hidden, ..Dims::default() };
    let mut net = Lstm::<f32>::init(dims, rng.random())?;
    let mut adam = Adam::new(dims.param_count());
    let started = Instant::now();
    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut log = Vec::new();
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let windows = epoch_windows(train_data, cfg.window, &mut rng);
        let mut loss_sum = 0.0f64;
        let mut loss_frames = 0usize;
        for chunk in windows.chunks(cfg.batch) {
            let (x, y) = assemble(train_data, chunk, cfg.window);
            let rows = x.nrows();
            let masks = Masks::sample(&dims, rows, cfg.dropout, &mut rng);
            let zero = LstmState::zeros(&dims, chunk.len());
            let result = net.forward(x.view(), cfg.window, chunk.len(), &zero, Some(&masks));
            let (out, cache, _) = match result {
                Ok(v) => v,
                Err(_) => return Err(CorrectorError::Diverged { epoch, checkpoint: Box::new(best.1) }),
            };
            let (loss, dy) = l2_loss(&out, &y, &vec![1.0; rows]);
            if !loss.is_finite() {
                return Err(CorrectorError::Diverged { epoch, checkpoint: Box::new(best.1) });
            }
            let mut grad = net.backward(&cache, &dy, Some(&masks));
            if cfg.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    let scale = (cfg.clip_norm / norm) as f32;
                    grad.iter_mut().for_each(|g| *g *= scale);
                }
            }
            adam.update(net.params_mut(), &grad, cfg);
            loss_sum += loss as f64 * rows as f64;
            loss_frames += rows;
        }
        let train_loss = loss_sum / loss_frames.max(1) as f64;
        if !train_loss.is_finite() || !net.is_finite() {
            return Err(CorrectorError::Diverged { epoch, checkpoint: Box::new(best.1) });
        }
        let (val_loss, val_mae) = if val_data.is_empty() {
            (train_loss, f64::NAN)
        } else {
            match evaluate(&net, val_data) {
                Ok(v) => v,
                Err(_) => return Err(CorrectorError::Diverged { epoch, checkpoint: Box::new(best.1) }),
            }
        };
        let entry = EpochLog { epoch, train_loss, val_loss, val_mae, lr: cfg.lr, wall_time: started.elapsed().as_secs_f64() };
        on_epoch(&entry);
        log.push(entry);
        if val_loss < best.0 {
            best = (val_loss, net.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { weights: best.1, log, best_epoch: best.2 })
}

/// Training log lines without the wall-clock field, for comparisons.
pub fn log_without_time(log: &[EpochLog]) -> Vec<EpochLog> {
    log.iter().map(|e| EpochLog { wall_time: 0.0, ..e.clone() }).collect()
}
