//! Per-IMU error-state Kalman filter.
//!
//! Nominal state: sensor-to-global orientation plus accelerometer and
//! gyroscope biases. Error state (9): `[dtheta, d_accel_bias, d_gyro_bias]`,
//! with the orientation error applied on the right, `R_true = R * Exp(dtheta)`.
//!
//! Conventions:
//! - global z is up and `g_ref = (0, 0, -9.8)`; a resting accelerometer reads
//!   the specific force `-R^T g_ref`, so the gravity observation compares
//!   `R (a_S - a_bias)` with the "up" vector `-g_ref`;
//! - `n_ref` is the horizontal, unit-norm direction of the geomagnetic field;
//! - magnetometer readings are divided by the init-time field magnitude.
//!
//! Attitude and heading are decoupled: the gravity update is stripped of any
//! rotation about the vertical, and the magnetometer update is restricted to
//! rotation about the vertical.

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imu::RawImu;
use crate::rotmath::{exp_map, project_horizontal, skew, Rotation, Vec3};

pub type Cov9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;

/// Renormalize the nominal orientation after this many predictions.
const RENORM_INTERVAL: u32 = 256;
/// Projected magnetometer norm below which heading is considered unobservable.
const MIN_HORIZONTAL_MAG: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EskfError {
    #[error("initialization requires static sensor (mean |w| = {mean_rate:.4} rad/s)")]
    NotStatic { mean_rate: f64 },
    #[error("initialization needs at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("disturbed field at init (normalized magnitude {magnitude:.3})")]
    DisturbedField { magnitude: f64 },
    #[error("degenerate init vectors (accelerometer and magnetometer parallel)")]
    DegenerateInit,
    #[error("corrupt frame")]
    CorruptFrame,
    #[error("invalid filter config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EskfConfig {
    /// Sample period, s.
    pub dt: f64,
    /// Global gravity, m/s^2.
    pub g_ref: [f64; 3],
    /// Horizontal unit direction of the geomagnetic field.
    pub n_ref: [f64; 3],
    /// Gravity observation gate on | |a| - |g| |, m/s^2.
    pub eps_a: f64,
    /// Allowed deviation of the init-window field magnitude from the reference.
    pub eps_m: f64,
    /// Gyro white noise density, rad/s/sqrt(Hz).
    pub gyro_noise: f64,
    /// Accelerometer white noise density, m/s^2/sqrt(Hz).
    pub accel_noise: f64,
    /// Magnetometer per-sample standard deviation, normalized units.
    pub mag_noise: f64,
    /// Bias random walk density (both sensors), units/s/sqrt(Hz).
    pub bias_random_walk: f64,
    /// Prior standard deviations of the error state after init.
    pub init_attitude_std: f64,
    pub init_accel_bias_std: f64,
    pub init_gyro_bias_std: f64,
    /// Init refuses windows whose mean |w| exceeds this, rad/s.
    pub static_rate_threshold: f64,
    pub min_init_frames: usize,
    /// Expected geomagnetic magnitude in input units; `None` adopts whatever
    /// magnitude is seen during init.
    pub mag_reference: Option<f64>,
}

impl Default for EskfConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            g_ref: [0.0, 0.0, -9.8],
            n_ref: [1.0, 0.0, 0.0],
            eps_a: 0.5,
            eps_m: 0.15,
            gyro_noise: 0.01,
            accel_noise: 0.1,
            mag_noise: 0.05,
            bias_random_walk: 1e-4,
            init_attitude_std: 0.1,
            init_accel_bias_std: 0.05,
            init_gyro_bias_std: 0.02,
            static_rate_threshold: 0.05,
            min_init_frames: 30,
            mag_reference: Some(1.0),
        }
    }
}

impl EskfConfig {
    pub fn validate(&self) -> Result<(), EskfError> {
        let positive = [
            self.dt,
            self.eps_a,
            self.eps_m,
            self.gyro_noise,
            self.accel_noise,
            self.mag_noise,
            self.bias_random_walk,
            self.init_attitude_std,
            self.init_accel_bias_std,
            self.init_gyro_bias_std,
        ];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(EskfError::InvalidConfig("dt, thresholds and noise parameters must be > 0"));
        }
        if self.gravity().norm() < 1e-6 {
            return Err(EskfError::InvalidConfig("g_ref must be non-zero"));
        }
        if project_horizontal(&Vec3::from(self.n_ref), &self.up()).norm() < 1e-6 {
            return Err(EskfError::InvalidConfig("n_ref needs a horizontal component"));
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.g_ref)
    }

    /// Unit vector opposite to gravity.
    pub fn up(&self) -> Vec3 {
        -self.gravity().normalize()
    }

    /// Unit gravity direction (the axis yaw is measured about).
    pub fn gravity_dir(&self) -> Vec3 {
        self.gravity().normalize()
    }

    /// `n_ref` projected onto the horizontal plane and normalized.
    pub fn heading_ref(&self) -> Vec3 {
        project_horizontal(&Vec3::from(self.n_ref), &self.up()).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EskfState {
    /// Sensor-to-global orientation.
    pub rot: Rotation,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub cov: Cov9,
    /// Geomagnetic magnitude (input units) used to normalize magnetometer readings.
    pub mag_scale: f64,
    predictions: u32,
}

impl EskfState {
    pub fn new(rot: Rotation, cov: Cov9, mag_scale: f64) -> Self {
        Self {
            rot,
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            cov,
            mag_scale,
            predictions: 0,
        }
    }

    pub fn prior_cov(cfg: &EskfConfig) -> Cov9 {
        let mut p = Cov9::zeros();
        for i in 0..3 {
            p[(i, i)] = cfg.init_attitude_std.powi(2);
            p[(i + 3, i + 3)] = cfg.init_accel_bias_std.powi(2);
            p[(i + 6, i + 6)] = cfg.init_gyro_bias_std.powi(2);
        }
        p
    }

    /// Normalized magnitude of a raw magnetometer vector.
    pub fn normalized_mag(&self, mag: &Vec3) -> f64 {
        mag.norm() / self.mag_scale
    }
}

/// What happened to one of the two vector-observation updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correction {
    Applied,
    GateRejected,
    NoHeading,
    NotRequested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepReport {
    pub gravity: Correction,
    pub mag: Correction,
}

/// Aligns the filter from a window of static samples of one IMU.
///
/// The orientation is the two-vector (TRIAD) alignment of the mean specific
/// force with "up" and of the mean horizontal magnetic direction with
/// `n_ref`. Biases start at zero.
pub fn init(frames: &[RawImu], cfg: &EskfConfig) -> Result<EskfState, EskfError> {
    cfg.validate()?;
    if frames.len() < cfg.min_init_frames {
        return Err(EskfError::TooFewFrames {
            needed: cfg.min_init_frames,
            got: frames.len(),
        });
    }
    if frames.iter().any(|f| !f.is_finite()) {
        return Err(EskfError::CorruptFrame);
    }
    let n = frames.len() as f64;
    let mean_rate = frames.iter().map(|f| f.gyro.norm()).sum::<f64>() / n;
    if !(mean_rate < cfg.static_rate_threshold) {
        return Err(EskfError::NotStatic { mean_rate });
    }
    let mean_acc = frames.iter().map(|f| f.accel).sum::<Vec3>() / n;
    let mean_mag = frames.iter().map(|f| f.mag).sum::<Vec3>() / n;
    let mean_mag_norm = frames.iter().map(|f| f.mag.norm()).sum::<f64>() / n;

    let mag_scale = match cfg.mag_reference {
        Some(reference) => {
            let magnitude = mean_mag_norm / reference;
            if (magnitude - 1.0).abs() > cfg.eps_m {
                return Err(EskfError::DisturbedField { magnitude });
            }
            reference
        }
        None => {
            let worst = frames
                .iter()
                .map(|f| (f.mag.norm() / mean_mag_norm - 1.0).abs())
                .fold(0.0, f64::max);
            if worst > cfg.eps_m {
                return Err(EskfError::DisturbedField { magnitude: 1.0 + worst });
            }
            mean_mag_norm
        }
    };

    let s1 = mean_acc.try_normalize(1e-9).ok_or(EskfError::DegenerateInit)?;
    let s2 = project_horizontal(&mean_mag, &s1)
        .try_normalize(1e-9)
        .ok_or(EskfError::DegenerateInit)?;
    let s3 = s1.cross(&s2);
    let g1 = cfg.up();
    let g2 = cfg.heading_ref();
    let g3 = g1.cross(&g2);
    let sensor = Matrix3::from_columns(&[s1, s2, s3]);
    let global = Matrix3::from_columns(&[g1, g2, g3]);
    let rot = Rotation::from_matrix_nearest(global * sensor.transpose());

    Ok(EskfState::new(rot, EskfState::prior_cov(cfg), mag_scale))
}

/// Gyro integration: `R <- R Exp((w - b_w) dt)`, covariance propagated with
/// the error-state transition and process noise.
pub fn predict(state: &EskfState, gyro: &Vec3, cfg: &EskfConfig) -> EskfState {
    let dt = cfg.dt;
    let delta = exp_map(&((gyro - state.gyro_bias) * dt));
    let mut next = *state;
    next.rot = state.rot * delta;
    next.predictions = state.predictions.wrapping_add(1);
    if next.predictions.is_multiple_of(RENORM_INTERVAL) {
        next.rot = next.rot.renormalized();
    }

    let mut f = Cov9::identity();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&delta.matrix().transpose());
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-Matrix3::identity() * dt));

    let mut q = Cov9::zeros();
    let q_theta = cfg.gyro_noise.powi(2) * dt;
    let q_bias = cfg.bias_random_walk.powi(2) * dt;
    for i in 0..3 {
        q[(i, i)] = q_theta;
        q[(i + 3, i + 3)] = q_bias;
        q[(i + 6, i + 6)] = q_bias;
    }
    next.cov = symmetrize(&(f * state.cov * f.transpose() + q));
    next
}

/// True when the accelerometer magnitude is within `eps_a` of gravity.
pub fn gravity_gate(accel: &Vec3, cfg: &EskfConfig) -> bool {
    (accel.norm() - cfg.gravity().norm()).abs() < cfg.eps_a
}

/// Gravity vector observation. Re-checks the gate; a rejected sample leaves
/// the state untouched.
pub fn correct_gravity(state: &EskfState, accel: &Vec3, cfg: &EskfConfig) -> (EskfState, Correction) {
    if !gravity_gate(accel, cfg) {
        return (*state, Correction::GateRejected);
    }
    let r = state.rot.matrix();
    let v = accel - state.accel_bias;
    let predicted = r * v;
    let innovation = -cfg.gravity() - predicted;

    let mut h = SMatrix::<f64, 3, 9>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r * skew(&v)));
    h.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r));
    let meas_var = cfg.accel_noise.powi(2) / cfg.dt;
    let noise = Matrix3::identity() * meas_var;

    let s = h * state.cov * h.transpose() + noise;
    let Some(s_inv) = s.try_inverse() else {
        return (*state, Correction::GateRejected);
    };
    let mut k = state.cov * h.transpose() * s_inv;

    // strip rotation about the vertical from the attitude gain
    let b = state.rot.apply_inverse(&cfg.up());
    let keep_tilt = Matrix3::identity() - b * b.transpose();
    let k_theta = keep_tilt * k.fixed_view::<3, 3>(0, 0);
    k.fixed_view_mut::<3, 3>(0, 0).copy_from(&k_theta);

    let dx = k * innovation;
    let next = inject(state, &dx, &k, &h, &noise);
    (next, Correction::Applied)
}

/// Heading observation from the magnetometer. Both the rotated reading and
/// the reference are projected onto the horizontal plane, so only yaw moves.
pub fn correct_mag(state: &EskfState, mag: &Vec3, cfg: &EskfConfig) -> (EskfState, Correction) {
    let up = cfg.up();
    let m = state.rot.apply(&(mag / state.mag_scale));
    let horizontal = project_horizontal(&m, &up);
    let h_norm = horizontal.norm();
    if !(h_norm >= MIN_HORIZONTAL_MAG) {
        return (*state, Correction::NoHeading);
    }
    let predicted = horizontal / h_norm;
    let reference = cfg.heading_ref();
    let innovation = up.dot(&predicted.cross(&reference)).atan2(predicted.dot(&reference));

    let b = state.rot.apply_inverse(&up);
    let mut h = SMatrix::<f64, 1, 9>::zeros();
    h.fixed_view_mut::<1, 3>(0, 0).copy_from(&b.transpose());
    let meas_var = cfg.mag_noise.powi(2) / (h_norm * h_norm);
    let noise = SMatrix::<f64, 1, 1>::new(meas_var);

    let s = (h * state.cov * h.transpose())[(0, 0)] + meas_var;
    let mut k: SMatrix<f64, 9, 1> = state.cov * h.transpose() / s;

    // keep only rotation about the vertical in the attitude gain
    let keep_yaw = b * b.transpose();
    let k_theta = keep_yaw * k.fixed_view::<3, 1>(0, 0);
    k.fixed_view_mut::<3, 1>(0, 0).copy_from(&k_theta);

    let dx = k * innovation;
    let next = inject(state, &dx, &k, &h, &noise);
    (next, Correction::Applied)
}

/// One full filter step: predict, gated gravity update, flagged heading update.
pub fn step(
    state: &EskfState,
    raw: &RawImu,
    use_mag: bool,
    cfg: &EskfConfig,
) -> Result<(EskfState, StepReport), EskfError> {
    if !raw.is_finite() {
        return Err(EskfError::CorruptFrame);
    }
    let predicted = predict(state, &raw.gyro, cfg);
    let (after_gravity, gravity) = correct_gravity(&predicted, &raw.accel, cfg);
    let (after_mag, mag) = if use_mag {
        correct_mag(&after_gravity, &raw.mag, cfg)
    } else {
        (after_gravity, Correction::NotRequested)
    };
    Ok((after_mag, StepReport { gravity, mag }))
}

/// Injects an error-state estimate into the nominal state and updates the
/// covariance in Joseph form (valid for the modified, non-optimal gains).
/// The reset Jacobian is taken as identity.
fn inject<const M: usize>(
    state: &EskfState,
    dx: &Vec9,
    k: &SMatrix<f64, 9, M>,
    h: &SMatrix<f64, M, 9>,
    noise: &SMatrix<f64, M, M>,
) -> EskfState {
    let mut next = *state;
    let dtheta = Vec3::new(dx[0], dx[1], dx[2]);
    next.rot = state.rot * exp_map(&dtheta);
    next.accel_bias += Vec3::new(dx[3], dx[4], dx[5]);
    next.gyro_bias += Vec3::new(dx[6], dx[7], dx[8]);
    let ikh = Cov9::identity() - k * h;
    next.cov = symmetrize(&(ikh * state.cov * ikh.transpose() + k * noise * k.transpose()));
    next
}

fn symmetrize(p: &Cov9) -> Cov9 {
    (p + p.transpose()) * 0.5
}
