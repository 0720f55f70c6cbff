//! Magnetic-disturbance-aware orientation estimation for six body-worn IMUs.
//!
//! Stage one fuses each sensor with an error-state Kalman filter and lets a
//! pose-aware nearest-neighbour detector decide per frame which
//! magnetometers may correct heading. Stage two is a recurrent network that
//! predicts the leaves' residual yaw error relative to the root; a blend
//! weight applies the correction only while some magnetometer is rejected.

pub mod corrector;
pub mod detector;
pub mod eskf;
pub mod imu;
pub mod magfield;
pub mod pipeline;
pub mod rotmath;
pub mod synth;
