//! Second stage: a recurrent network predicts each leaf's yaw error relative
//! to the root, and a blend weight decides how much of it to remove.

pub mod features;
pub mod lstm;
pub mod train;

use thiserror::Error;

use crate::detector::FlagSet;
use crate::imu::{GlobalReading, NUM_IMUS, NUM_LEAVES};
use crate::rotmath::{rot_about_axis, Vec3};

pub use features::{build_input, FEATURE_DIM};
pub use lstm::{Dims, Lstm, LstmState};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome, TrainSequence};

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("numerical blow-up in layer {layer}")]
    NumericalBlowUp { layer: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset has no complete training window")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, checkpoint: Box<Lstm<f32>> },
    #[error("bad weight file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Steps of the blend weight between 0 and 1.
pub const WEIGHT_STEPS: u8 = 20;

/// Blend weight `w ∈ [0, 1]`, held as a count of 0.05 steps so repeated
/// updates land exactly on 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct BlendWeight(u8);

impl BlendWeight {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(WEIGHT_STEPS);

    pub fn value(self) -> f64 {
        self.0 as f64 / WEIGHT_STEPS as f64
    }

    /// Nearest step to `w`, clamped to [0, 1].
    pub fn from_value(w: f64) -> Self {
        let steps = (w.clamp(0.0, 1.0) * WEIGHT_STEPS as f64).round();
        Self(steps as u8)
    }
}

/// Lowers `w` by 0.05 when every magnetometer is usable, raises it by 0.05
/// otherwise, clamped to [0, 1].
pub fn update_weight(w: BlendWeight, flags: &FlagSet) -> BlendWeight {
    if flags.all() {
        BlendWeight(w.0.saturating_sub(1))
    } else {
        BlendWeight((w.0 + 1).min(WEIGHT_STEPS))
    }
}

/// Rotates each leaf reading about the gravity axis `g` by `−w·Δ_i`. The
/// root (index 5) passes through.
pub fn apply_correction(
    readings: &[GlobalReading; NUM_IMUS],
    delta: &[f64; NUM_LEAVES],
    w: f64,
    g: &Vec3,
) -> [GlobalReading; NUM_IMUS] {
    let mut out = *readings;
    if w == 0.0 {
        return out;
    }
    for (r, d) in out.iter_mut().zip(delta) {
        let turn = rot_about_axis(g, -w * d).expect("non-zero gravity axis");
        *r = GlobalReading { rot: turn * r.rot, accel: turn * r.accel, gyro: turn * r.gyro };
    }
    out
}

/// Per-stream corrector state.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub w: BlendWeight,
    pub lstm: LstmState<f32>,
}

impl CorrectionState {
    pub fn new(dims: &Dims) -> Self {
        Self { w: BlendWeight::ZERO, lstm: LstmState::zeros(dims, 1) }
    }
}

/// Result of one corrector step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectorStep {
    pub delta: [f64; NUM_LEAVES],
    pub w: BlendWeight,
    pub readings: [GlobalReading; NUM_IMUS],
}

/// Runs the network on stage-1 readings, updates the weight from the flags
/// and applies the correction.
pub fn correct(
    net: &Lstm<f32>,
    state: &mut CorrectionState,
    readings: &[GlobalReading; NUM_IMUS],
    flags: &FlagSet,
    g: &Vec3,
) -> Result<CorrectorStep, CorrectorError> {
    let x = build_input(readings, g).map(|v| v as f32);
    let mut lstm = state.lstm.clone();
    let y = net.step(&mut lstm, &x)?;
    if y.len() != NUM_LEAVES {
        return Err(CorrectorError::Shape(format!("network has {} outputs, expected {NUM_LEAVES}", y.len())));
    }
    let delta: [f64; NUM_LEAVES] = std::array::from_fn(|i| y[i] as f64);
    let w = update_weight(state.w, flags);
    state.lstm = lstm;
    state.w = w;
    Ok(CorrectorStep { delta, w, readings: apply_correction(readings, &delta, w.value(), g) })
}
