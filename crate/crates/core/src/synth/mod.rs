//! Synthetic IMU data: trajectories, sensor readings, erroneous filter
//! orientations and relative yaw-error labels.

pub mod dataset;
pub mod motion;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectorConfig, FlagSet, Skeleton};
use crate::eskf::{EskfConfig, EskfError};
use crate::imu::{ImuRawFrame, RawImu, NUM_IMUS, NUM_LEAVES};
use crate::magfield::{MagError, MagneticEnvironment};
use crate::pipeline::stage1::{positions_from_orientations, Stage1Filter, Stage1Output};
use crate::pipeline::init_frame_count;
use crate::rotmath::{log_map, wrap_angle, yaw_between, Rotation, Vec3};

pub use dataset::{make_dataset, make_sequence, procedural_trajectories, Dataset, DatasetConfig, SynthMode, SyntheticSequence};
pub use motion::{generate_motion, generate_spin, MotionParams};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trajectory needs at least 3 frames, got {0}")]
    TooShort(usize),
    #[error("frame {frame} out of range for finite differences (length {len})")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("no trajectories given")]
    Empty,
    #[error(transparent)]
    Field(#[from] MagError),
    #[error(transparent)]
    Filter(#[from] EskfError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Orientation (sensor to global) and position (m) of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rot: Rotation,
    pub pos: Vec3,
}

/// Uniformly sampled poses of all six sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory6DoF {
    pub rate_hz: f64,
    pub frames: Vec<[Pose; NUM_IMUS]>,
}

const TRAJECTORY_HEADER: &str = "# magguard trajectory v1";

impl Trajectory6DoF {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(SynthError::Invalid(format!("bad sample rate {}", self.rate_hz)));
        }
        if self.frames.len() < 3 {
            return Err(SynthError::TooShort(self.frames.len()));
        }
        Ok(())
    }

    /// Text export: a header, `rate_hz <r>`, then one line per frame holding
    /// six blocks of a row-major rotation (9) and a position (3).
    pub fn to_text(&self) -> String {
        let mut out = format!("{TRAJECTORY_HEADER}\nrate_hz {}\n", self.rate_hz);
        for frame in &self.frames {
            let fields: Vec<String> = frame
                .iter()
                .flat_map(|p| p.rot.to_row_major().into_iter().chain(p.pos.iter().copied()))
                .map(|v| v.to_string())
                .collect();
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses [`Trajectory6DoF::to_text`] output. Rotations are snapped to
    /// the nearest orthonormal matrix; `#` lines are comments.
    pub fn from_text(text: &str) -> Result<Self, SynthError> {
        let mut rate_hz = None;
        let mut frames = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let parse_err = |msg: String| SynthError::Parse { line: n + 1, msg };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("rate_hz") {
                rate_hz = Some(rest.trim().parse::<f64>().map_err(|e| parse_err(e.to_string()))?);
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?;
            if values.len() != NUM_IMUS * 12 {
                return Err(parse_err(format!("expected {} values, got {}", NUM_IMUS * 12, values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite value".into()));
            }
            frames.push(std::array::from_fn(|i| {
                let b = &values[i * 12..(i + 1) * 12];
                let rot: [f64; 9] = b[..9].try_into().expect("nine entries");
                Pose { rot: Rotation::from_row_major(&rot), pos: Vec3::new(b[9], b[10], b[11]) }
            }));
        }
        let rate_hz = rate_hz.ok_or(SynthError::Parse { line: 0, msg: "missing rate_hz".into() })?;
        let traj = Self { rate_hz, frames };
        traj.validate()?;
        Ok(traj)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

/// Sensor-local magnetometer reading `Rᵀ m_G(p)`.
pub fn synth_mag(rot: &Rotation, pos: &Vec3, env: &MagneticEnvironment) -> Result<Vec3, MagError> {
    Ok(rot.apply_inverse(&env.field_at(pos)?))
}

/// Specific force from the central second difference of position,
/// `Rᵀ((p₊ − 2p + p₋)/dt² − g_ref)`. Needs `1 ≤ t ≤ len − 2`.
pub fn synth_accel(traj: &Trajectory6DoF, t: usize, imu: usize, g_ref: &Vec3) -> Result<Vec3, SynthError> {
    let len = traj.len();
    if t == 0 || t + 1 >= len {
        return Err(SynthError::FrameOutOfRange { frame: t, len });
    }
    let dt = traj.dt();
    let p = |k: usize| traj.frames[k][imu].pos;
    let acc = (p(t + 1) - 2.0 * p(t) + p(t - 1)) / (dt * dt);
    Ok(traj.frames[t][imu].rot.apply_inverse(&(acc - g_ref)))
}

/// Body angular rate from the forward difference `log(R_tᵀ R_{t+1})/dt`.
/// Needs `t ≤ len − 2`.
pub fn synth_gyro(traj: &Trajectory6DoF, t: usize, imu: usize) -> Result<Vec3, SynthError> {
    let len = traj.len();
    if t + 1 >= len {
        return Err(SynthError::FrameOutOfRange { frame: t, len });
    }
    let r0 = traj.frames[t][imu].rot;
    let r1 = traj.frames[t + 1][imu].rot;
    Ok(log_map(&(r0.transpose() * r1)) / traj.dt())
}

/// Noise added to synthesized readings. Standard deviations are per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub gyro_std: f64,
    pub accel_std: f64,
    pub mag_std: f64,
    /// Constant per-sequence gyro bias drawn uniformly in ±this per axis.
    pub gyro_bias_max: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self { gyro_std: 0.01, accel_std: 0.1, mag_std: 0.01, gyro_bias_max: 0.02 }
    }
}

impl SensorNoise {
    pub fn none() -> Self {
        Self { gyro_std: 0.0, accel_std: 0.0, mag_std: 0.0, gyro_bias_max: 0.0 }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> Vec3 {
    if std <= 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, std).expect("positive std");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

fn quantize(v: Vec3) -> Vec3 {
    v.map(|x| x as f32 as f64)
}

/// Noise-free accelerometer and gyro readings for every frame; the edge
/// frames reuse their neighbor's finite difference.
pub fn clean_inertial(traj: &Trajectory6DoF, g_ref: &Vec3) -> Result<Vec<[(Vec3, Vec3); NUM_IMUS]>, SynthError> {
    traj.validate()?;
    let len = traj.len();
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let ta = t.clamp(1, len - 2);
        let tg = t.min(len - 2);
        let mut frame = [(Vec3::zeros(), Vec3::zeros()); NUM_IMUS];
        for (i, slot) in frame.iter_mut().enumerate() {
            let a = synth_accel(traj, ta, i, g_ref)?;
            // re-express the neighbor's specific force in this frame's sensor axes
            let a = traj.frames[t][i].rot.apply_inverse(&traj.frames[ta][i].rot.apply(&a));
            *slot = (a, synth_gyro(traj, tg, i)?);
        }
        out.push(frame);
    }
    Ok(out)
}

/// Raw readings for a trajectory in an environment, with noise and a
/// per-sequence gyro bias. Values are rounded to `f32` precision so they
/// survive the text raw-frame format unchanged.
pub fn synthesize_raw(
    traj: &Trajectory6DoF,
    env: &MagneticEnvironment,
    noise: &SensorNoise,
    g_ref: &Vec3,
    seed: u64,
) -> Result<Vec<ImuRawFrame>, SynthError> {
    let inertial = clean_inertial(traj, g_ref)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bias: [Vec3; NUM_IMUS] = std::array::from_fn(|_| {
        if noise.gyro_bias_max > 0.0 {
            Vec3::from_fn(|_, _| rng.random_range(-noise.gyro_bias_max..=noise.gyro_bias_max))
        } else {
            Vec3::zeros()
        }
    });
    let dt = traj.dt();
    let mut frames = Vec::with_capacity(traj.len());
    for (t, poses) in traj.frames.iter().enumerate() {
        let mut imus = [RawImu::default(); NUM_IMUS];
        for i in 0..NUM_IMUS {
            let (a, w) = inertial[t][i];
            let m = synth_mag(&poses[i].rot, &poses[i].pos, env)?;
            imus[i] = RawImu {
                accel: quantize(a + gaussian(&mut rng, noise.accel_std)),
                gyro: quantize(w + bias[i] + gaussian(&mut rng, noise.gyro_std)),
                mag: quantize(m + gaussian(&mut rng, noise.mag_std)),
            };
        }
        frames.push(ImuRawFrame { timestamp: (t as f64 * dt) as f32 as f64, imus });
    }
    Ok(frames)
}

/// How the stage-1 filter obtains its magnetometer flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlagSource {
    #[default]
    Detector,
    /// Every magnetometer is always used.
    ForceTrue,
    /// No magnetometer is ever used.
    ForceFalse,
}

/// Stage-1 fusion of a raw sequence: the filter initializes on the leading
/// static window, then steps through every frame. Sensor positions for the
/// detector come from forward kinematics of the previous estimates.
pub fn run_erroneous(
    raw: &[ImuRawFrame],
    skeleton: &Skeleton,
    detector_cfg: &DetectorConfig,
    eskf_cfg: &EskfConfig,
    source: FlagSource,
) -> Result<Vec<Stage1Output>, EskfError> {
    let n_init = init_frame_count(eskf_cfg.dt).min(raw.len());
    let mut filter = Stage1Filter::initialize(&raw[..n_init], eskf_cfg, detector_cfg)?;
    let mut out = Vec::with_capacity(raw.len());
    for frame in raw {
        let step = match source {
            FlagSource::Detector => {
                let positions = positions_from_orientations(&filter.orientations(), skeleton);
                filter.step(frame, &positions)?
            }
            FlagSource::ForceTrue => filter.step_with_flags(frame, FlagSet::all_true())?,
            FlagSource::ForceFalse => filter.step_with_flags(frame, FlagSet([false; NUM_IMUS]))?,
        };
        out.push(step);
    }
    Ok(out)
}

/// Relative yaw errors `Δ_i = θ_i − θ_root` of the five leaves, wrapped to
/// (−π, π], where `θ = yaw_between(R_err, R_gt, g)`.
pub fn label_relative_yaw(
    r_err: &[[Rotation; NUM_IMUS]],
    r_gt: &[[Rotation; NUM_IMUS]],
    g: &Vec3,
) -> Vec<[f64; NUM_LEAVES]> {
    r_err
        .iter()
        .zip(r_gt)
        .map(|(e, t)| {
            let theta: [f64; NUM_IMUS] = std::array::from_fn(|i| yaw_between(&e[i], &t[i], g));
            std::array::from_fn(|i| wrap_angle(theta[i] - theta[NUM_LEAVES]))
        })
        .collect()
}

/// Ground-truth disturbance mask: `|‖m_G(p)‖ − 1| ≥ eps_m` per sensor.
pub fn disturbance_mask(
    traj: &Trajectory6DoF,
    env: &MagneticEnvironment,
    eps_m: f64,
) -> Result<Vec<[bool; NUM_IMUS]>, MagError> {
    traj.frames
        .iter()
        .map(|poses| {
            let mut mask = [false; NUM_IMUS];
            for i in 0..NUM_IMUS {
                mask[i] = (env.field_at(&poses[i].pos)?.norm() - 1.0).abs() >= eps_m;
            }
            Ok(mask)
        })
        .collect()
}
