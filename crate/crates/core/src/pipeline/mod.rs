//! End-to-end streaming pipeline: detector and filters, then the corrector.

pub mod io;
pub mod metrics;
pub mod stage1;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrector::{self, BlendWeight, CorrectionState, CorrectorError, Lstm};
use crate::detector::{DetectorConfig, DetectorError, FlagSet, Skeleton};
use crate::eskf::{EskfConfig, EskfError};
use crate::imu::{GlobalReading, ImuRawFrame, NUM_IMUS, NUM_LEAVES};
use crate::rotmath::{Rotation, Vec3};

use stage1::{positions_from_orientations, Stage1Filter};

/// Length of the initialization window, s.
pub const INIT_WINDOW_S: f64 = 3.0;
/// Shortest stream the CLI accepts, s.
pub const MIN_STREAM_S: f64 = 5.0;

/// Frames in the initialization window at sample interval `dt`.
pub fn init_frame_count(dt: f64) -> usize {
    (INIT_WINDOW_S / dt).round() as usize
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Filter(#[from] EskfError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("length mismatch: {pred} predicted frames vs {truth} ground-truth frames")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("stream too short: {got} frames, need at least {needed}")]
    TooShort { got: usize, needed: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub eskf: EskfConfig,
    /// Corrector weight file; absent means stage 1 only.
    pub weights: Option<PathBuf>,
    /// Skeleton TOML; absent means the built-in skeleton.
    pub skeleton: Option<PathBuf>,
    pub rate_hz: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            eskf: EskfConfig::default(),
            weights: None,
            skeleton: None,
            rate_hz: 100.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.detector.validate()?;
        self.eskf.validate()?;
        if !(self.rate_hz > 0.0) || (self.rate_hz * self.eskf.dt - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!(
                "rate_hz {} disagrees with eskf.dt {}",
                self.rate_hz, self.eskf.dt
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.weights, &mut cfg.skeleton].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_skeleton(&self) -> Result<Skeleton, PipelineError> {
        Ok(match &self.skeleton {
            Some(p) => Skeleton::load(p)?,
            None => Skeleton::default(),
        })
    }

    pub fn load_weights(&self) -> Result<Option<Arc<Lstm<f32>>>, PipelineError> {
        Ok(match &self.weights {
            Some(p) => Some(Arc::new(Lstm::load(p)?)),
            None => None,
        })
    }
}

/// Global-frame reading of one sensor in an output frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuOutput {
    /// Row-major sensor-to-global rotation.
    pub rot: [f64; 9],
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

impl ImuOutput {
    fn from_reading(r: &GlobalReading) -> Self {
        Self { rot: r.rot.to_row_major(), accel: r.accel.into(), gyro: r.gyro.into() }
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_row_major(&self.rot)
    }
}

/// Everything the pipeline emits for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub frame: usize,
    pub timestamp: f64,
    /// Corrected leaves and the untouched root, in sensor order.
    pub imus: [ImuOutput; NUM_IMUS],
    /// Root magnetometer reading in the global frame (normalized units).
    pub root_mag: [f64; 3],
    pub flags: [bool; NUM_IMUS],
    pub w: f64,
    pub delta: [f64; NUM_LEAVES],
    /// Input was corrupt; the previous orientations were held.
    pub degraded: bool,
}

impl FrameOutput {
    pub fn rotations(&self) -> [Rotation; NUM_IMUS] {
        self.imus.map(|i| i.rotation())
    }
}

/// One stream's pipeline instance.
#[derive(Debug, Clone)]
pub struct Pipeline {
    skeleton: Skeleton,
    stage1: Stage1Filter,
    net: Option<Arc<Lstm<f32>>>,
    corrector: Option<CorrectionState>,
    weight_override: Option<BlendWeight>,
    last: [GlobalReading; NUM_IMUS],
    last_flags: FlagSet,
    last_root_mag: Vec3,
    last_timestamp: f64,
    frame: usize,
    g: Vec3,
    dt: f64,
}

impl Pipeline {
    /// Initializes the filters from a static window. Without `net` the
    /// pipeline runs stage 1 only.
    pub fn initialize(
        init_frames: &[ImuRawFrame],
        cfg: &PipelineConfig,
        skeleton: Skeleton,
        net: Option<Arc<Lstm<f32>>>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let stage1 = Stage1Filter::initialize(init_frames, &cfg.eskf, &cfg.detector)?;
        let last = stage1.states().map(|s| GlobalReading { rot: s.rot, accel: Vec3::zeros(), gyro: Vec3::zeros() });
        let corrector = net.as_ref().map(|n| CorrectionState::new(n.dims()));
        Ok(Self {
            skeleton,
            stage1,
            net,
            corrector,
            weight_override: None,
            last,
            last_flags: FlagSet::all_true(),
            last_root_mag: Vec3::zeros(),
            last_timestamp: -cfg.eskf.dt,
            frame: 0,
            g: cfg.eskf.gravity_dir(),
            dt: cfg.eskf.dt,
        })
    }

    /// Pins the blend weight (ablations); `None` restores the update rule.
    pub fn set_weight_override(&mut self, w: Option<BlendWeight>) {
        self.weight_override = w;
    }

    pub fn stage1(&self) -> &Stage1Filter {
        &self.stage1
    }

    /// Processes one frame. A corrupt frame leaves every state untouched and
    /// repeats the previous orientations with `degraded` set.
    pub fn process_frame(&mut self, raw: &ImuRawFrame) -> Result<FrameOutput, PipelineError> {
        let frame = self.frame;
        self.frame += 1;
        if !raw.is_finite() {
            self.last_timestamp += self.dt;
            return Ok(FrameOutput {
                frame,
                timestamp: self.last_timestamp,
                imus: self.last.map(|r| ImuOutput::from_reading(&r)),
                root_mag: self.last_root_mag.into(),
                flags: self.last_flags.0,
                w: self.corrector.as_ref().map_or(0.0, |c| c.w.value()),
                delta: [0.0; NUM_LEAVES],
                degraded: true,
            });
        }
        let orientations = self.last.map(|r| r.rot);
        let positions = positions_from_orientations(&orientations, &self.skeleton);
        let out1 = self.stage1.step(raw, &positions)?;

        let (readings, w, delta) = match (&self.net, &mut self.corrector) {
            (Some(net), Some(state)) => {
                let step = corrector::correct(net, state, &out1.readings, &out1.flags, &self.g)?;
                match self.weight_override {
                    Some(w) => {
                        state.w = w;
                        let r = corrector::apply_correction(&out1.readings, &step.delta, w.value(), &self.g);
                        (r, w.value(), step.delta)
                    }
                    None => (step.readings, step.w.value(), step.delta),
                }
            }
            _ => (out1.readings, 0.0, [0.0; NUM_LEAVES]),
        };

        let root = &self.stage1.states()[NUM_LEAVES];
        let root_mag = root.rot.apply(&(raw.imus[NUM_LEAVES].mag / root.mag_scale));
        self.last = readings;
        self.last_flags = out1.flags;
        self.last_root_mag = root_mag;
        self.last_timestamp = raw.timestamp;
        Ok(FrameOutput {
            frame,
            timestamp: raw.timestamp,
            imus: readings.map(|r| ImuOutput::from_reading(&r)),
            root_mag: root_mag.into(),
            flags: out1.flags.0,
            w,
            delta,
            degraded: false,
        })
    }

    pub fn process_all(&mut self, frames: &[ImuRawFrame]) -> Result<Vec<FrameOutput>, PipelineError> {
        frames.iter().map(|f| self.process_frame(f)).collect()
    }
}

/// Batch entry point: initializes on the leading window of `frames` and
/// processes every frame from the first.
pub fn run_batch(
    frames: &[ImuRawFrame],
    cfg: &PipelineConfig,
    skeleton: &Skeleton,
    net: Option<Arc<Lstm<f32>>>,
) -> Result<Vec<FrameOutput>, PipelineError> {
    let n_init = init_frame_count(cfg.eskf.dt).min(frames.len());
    let mut p = Pipeline::initialize(&frames[..n_init], cfg, skeleton.clone(), net)?;
    p.process_all(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::Dims;
    use crate::magfield::MagneticEnvironment;
    use crate::synth::{generate_motion, synthesize_raw, MotionParams, SensorNoise};

    fn stream(seed: u64, secs: f64) -> Vec<ImuRawFrame> {
        let traj = generate_motion(seed, &MotionParams { duration_s: secs, ..MotionParams::default() }, &Skeleton::default());
        let g = EskfConfig::default().gravity();
        synthesize_raw(&traj, &MagneticEnvironment::clean(), &SensorNoise::default(), &g, seed).unwrap()
    }

    fn small_net() -> Arc<Lstm<f32>> {
        Arc::new(Lstm::init(Dims { hidden: 16, ..Dims::default() }, 3).unwrap())
    }

    #[test]
    fn streaming_equals_batch() {
        let frames = stream(1, 8.0);
        let cfg = PipelineConfig::default();
        let sk = Skeleton::default();
        let batch = run_batch(&frames, &cfg, &sk, Some(small_net())).unwrap();
        let mut p = Pipeline::initialize(&frames[..300], &cfg, sk, Some(small_net())).unwrap();
        let streamed: Vec<FrameOutput> = frames.iter().map(|f| p.process_frame(f).unwrap()).collect();
        assert_eq!(batch, streamed);
    }

    #[test]
    fn identical_streams_give_identical_outputs() {
        let frames = stream(2, 6.0);
        let cfg = PipelineConfig::default();
        let sk = Skeleton::default();
        let a = run_batch(&frames, &cfg, &sk, Some(small_net())).unwrap();
        let b = run_batch(&frames, &cfg, &sk, Some(small_net())).unwrap();
        let text = |o: &[FrameOutput]| {
            let mut v = Vec::new();
            io::write_outputs(&mut v, o).unwrap();
            v
        };
        assert_eq!(text(&a), text(&b));
    }

    #[test]
    fn stage1_only_equals_zero_weight() {
        let frames = stream(3, 6.0);
        let cfg = PipelineConfig::default();
        let sk = Skeleton::default();
        let plain = run_batch(&frames, &cfg, &sk, None).unwrap();
        let mut p = Pipeline::initialize(&frames[..300], &cfg, sk, Some(small_net())).unwrap();
        p.set_weight_override(Some(BlendWeight::ZERO));
        let pinned = p.process_all(&frames).unwrap();
        for (a, b) in plain.iter().zip(&pinned) {
            assert_eq!(a.imus, b.imus);
            assert_eq!(a.flags, b.flags);
        }
    }

    #[test]
    fn clean_static_input_is_steady() {
        let pose_traj = generate_motion(
            4,
            &MotionParams { duration_s: 12.0, intensity: 0.0, ..MotionParams::default() },
            &Skeleton::default(),
        );
        let g = EskfConfig::default().gravity();
        let frames = synthesize_raw(&pose_traj, &MagneticEnvironment::clean(), &SensorNoise::none(), &g, 4).unwrap();
        let out = run_batch(&frames, &PipelineConfig::default(), &Skeleton::default(), Some(small_net())).unwrap();
        for pair in out[600..].windows(2) {
            let (a, b) = (pair[0].rotations(), pair[1].rotations());
            for i in 0..NUM_IMUS {
                assert!(a[i].angle_to(&b[i]).to_degrees() < 0.01);
            }
        }
    }

    #[test]
    fn clean_static_input_stays_accurate_with_zero_weight() {
        let pose_traj = generate_motion(
            4,
            &MotionParams { duration_s: 12.0, intensity: 0.0, ..MotionParams::default() },
            &Skeleton::default(),
        );
        let g = EskfConfig::default().gravity();
        let frames = synthesize_raw(&pose_traj, &MagneticEnvironment::clean(), &SensorNoise::default(), &g, 4).unwrap();
        let out = run_batch(&frames, &PipelineConfig::default(), &Skeleton::default(), Some(small_net())).unwrap();
        for (o, truth) in out.iter().zip(&pose_traj.frames).skip(200) {
            let r = o.rotations();
            for i in 0..NUM_IMUS {
                assert!(r[i].angle_to(&truth[i].rot).to_degrees() < 1.0);
            }
            assert_eq!(o.w, 0.0);
        }
    }

    #[test]
    fn root_passes_through_and_w_zero_matches_stage1() {
        let frames = stream(5, 6.0);
        let cfg = PipelineConfig::default();
        let sk = Skeleton::default();
        let plain = run_batch(&frames, &cfg, &sk, None).unwrap();
        let full = run_batch(&frames, &cfg, &sk, Some(small_net())).unwrap();
        for (a, b) in plain.iter().zip(&full) {
            assert_eq!(a.imus[NUM_LEAVES], b.imus[NUM_LEAVES]);
            if b.w == 0.0 {
                assert_eq!(a.imus, b.imus);
            }
        }
    }

    #[test]
    fn corrupt_frame_holds_orientation() {
        let mut frames = stream(6, 6.0);
        frames[400].imus[2].gyro.x = f64::NAN;
        let out = run_batch(&frames, &PipelineConfig::default(), &Skeleton::default(), Some(small_net())).unwrap();
        assert!(out[400].degraded);
        assert_eq!(out[400].imus, out[399].imus);
        assert!(!out[401].degraded);
        assert_eq!(out.len(), frames.len());
    }

    #[test]
    fn config_toml_round_trip_and_rate_check() {
        let cfg = PipelineConfig::from_toml_str("rate_hz = 100.0\n[detector]\nk = 1\n").unwrap();
        assert_eq!(cfg.detector.k, 1);
        assert!(PipelineConfig::from_toml_str("rate_hz = 50.0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[detector]\nk = 9\n").is_err());
    }
}
