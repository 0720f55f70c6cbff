//! First stage: pose-aware detection plus six independent ESKFs.

use crate::detector::{compute_flags, positions_from_pose, DetectorConfig, FlagSet, ImuPositions, Skeleton};
use crate::eskf::{self, EskfConfig, EskfError, EskfState, StepReport};
use crate::imu::{GlobalReading, ImuRawFrame, RawImu, NUM_IMUS, NUM_LEAVES};
use crate::rotmath::{Rotation, Vec3};

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub flags: FlagSet,
    /// Normalized magnetometer magnitudes fed to the detector.
    pub magnitudes: [f64; NUM_IMUS],
    pub readings: [GlobalReading; NUM_IMUS],
    pub reports: [StepReport; NUM_IMUS],
}

/// Multi-IMU filter: detector flags from the supplied sensor positions, then
/// one ESKF step per sensor.
#[derive(Debug, Clone)]
pub struct Stage1Filter {
    eskf_cfg: EskfConfig,
    detector_cfg: DetectorConfig,
    states: [EskfState; NUM_IMUS],
    /// Gyro sample of the previous frame. A sample spans the interval to the
    /// next frame, so frame t is reached by integrating the sample of t−1.
    prev_gyro: [Vec3; NUM_IMUS],
}

impl Stage1Filter {
    /// Initializes every sensor's filter from the same static window.
    pub fn initialize(
        init_frames: &[ImuRawFrame],
        eskf_cfg: &EskfConfig,
        detector_cfg: &DetectorConfig,
    ) -> Result<Self, EskfError> {
        let mut states = Vec::with_capacity(NUM_IMUS);
        for i in 0..NUM_IMUS {
            let window: Vec<RawImu> = init_frames.iter().map(|f| f.imus[i]).collect();
            states.push(eskf::init(&window, eskf_cfg)?);
        }
        Ok(Self {
            eskf_cfg: eskf_cfg.clone(),
            detector_cfg: *detector_cfg,
            states: states.try_into().expect("six states"),
            prev_gyro: [Vec3::zeros(); NUM_IMUS],
        })
    }

    pub fn states(&self) -> &[EskfState; NUM_IMUS] {
        &self.states
    }

    pub fn eskf_config(&self) -> &EskfConfig {
        &self.eskf_cfg
    }

    pub fn detector_config(&self) -> &DetectorConfig {
        &self.detector_cfg
    }

    /// Current orientation estimates.
    pub fn orientations(&self) -> [Rotation; NUM_IMUS] {
        self.states.map(|s| s.rot)
    }

    /// Advances all six filters by one frame. A non-finite frame is rejected
    /// before any state changes.
    pub fn step(&mut self, raw: &ImuRawFrame, positions: &ImuPositions) -> Result<Stage1Output, EskfError> {
        if !raw.is_finite() {
            return Err(EskfError::CorruptFrame);
        }
        let magnitudes = self.magnitudes(raw);
        let flags = compute_flags(&magnitudes, positions, &self.detector_cfg);
        self.step_with_flags(raw, flags)
    }

    /// Normalized magnetometer magnitudes of a frame.
    pub fn magnitudes(&self, raw: &ImuRawFrame) -> [f64; NUM_IMUS] {
        std::array::from_fn(|i| self.states[i].normalized_mag(&raw.imus[i].mag))
    }

    /// As [`Stage1Filter::step`] with externally chosen flags.
    pub fn step_with_flags(&mut self, raw: &ImuRawFrame, flags: FlagSet) -> Result<Stage1Output, EskfError> {
        if !raw.is_finite() {
            return Err(EskfError::CorruptFrame);
        }
        let magnitudes = self.magnitudes(raw);
        let mut reports = [StepReport {
            gravity: eskf::Correction::NotRequested,
            mag: eskf::Correction::NotRequested,
        }; NUM_IMUS];
        let mut next = self.states;
        for i in 0..NUM_IMUS {
            let delayed = RawImu { gyro: self.prev_gyro[i], ..raw.imus[i] };
            let (state, report) = eskf::step(&self.states[i], &delayed, flags.0[i], &self.eskf_cfg)?;
            next[i] = state;
            reports[i] = report;
        }
        self.states = next;
        self.prev_gyro = raw.imus.map(|m| m.gyro);
        let gravity = self.eskf_cfg.gravity();
        let readings = std::array::from_fn(|i| {
            let s = &self.states[i];
            let m = &raw.imus[i];
            GlobalReading {
                rot: s.rot,
                accel: s.rot.apply(&(m.accel - s.accel_bias)) + gravity,
                gyro: s.rot.apply(&(m.gyro - s.gyro_bias)),
            }
        });
        Ok(Stage1Output { flags, magnitudes, readings, reports })
    }
}

/// Sensor positions implied by a set of six orientations.
pub fn positions_from_orientations(orientations: &[Rotation; NUM_IMUS], skeleton: &Skeleton) -> ImuPositions {
    let leaves: [Rotation; NUM_LEAVES] = std::array::from_fn(|i| orientations[i]);
    positions_from_pose(&leaves, &orientations[NUM_LEAVES], skeleton)
}
