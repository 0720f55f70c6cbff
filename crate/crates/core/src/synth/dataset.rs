//! Training datasets: synthetic sequences with features and labels, and
//! their on-disk layout.
//!
//! A dataset directory holds, per sequence `NNNN`:
//! - `seq_NNNN.jsonl`: one JSON object per frame with keys `frame`, `raw`
//!   (6 × [a, ω, m]), `r_gt` (6 × row-major rotation), `labels` (5 relative
//!   yaw errors, rad), `features` (63 network inputs) and `disturbed`
//!   (6 ground-truth disturbance flags);
//! - `seq_NNNN.raw`: the raw frames in the streaming text format;
//! - `env_NNNN.txt`: the magnetic environment;
//!
//! and a `meta.json` with seeds, configuration, its SHA-256 and the split.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrector::features::{build_input, FEATURE_DIM};
use crate::corrector::train::TrainSequence;
use crate::detector::{DetectorConfig, FlagSet, Skeleton};
use crate::eskf::EskfConfig;
use crate::imu::{GlobalReading, ImuRawFrame, NUM_IMUS, NUM_LEAVES};
use crate::magfield::{random_env_excluding, EnvParams, Exclusion, MagneticEnvironment};
use crate::pipeline::{init_frame_count, io::write_raw_frames};
use crate::rotmath::{rot_about_axis, Rotation};

use super::motion::{generate_motion, MotionParams};
use super::{
    disturbance_mask, label_relative_yaw, run_erroneous, synthesize_raw, FlagSource, SensorNoise, SynthError,
    Trajectory6DoF,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Yaw errors come from fusing readings in a furnished room.
    Magnetic,
    /// Clean-room fusion plus an injected random yaw walk per sensor.
    Naive,
}

impl std::str::FromStr for SynthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "magnetic" => Ok(Self::Magnetic),
            "naive" => Ok(Self::Naive),
            other => Err(format!("unknown mode {other:?} (magnetic|naive)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub mode: SynthMode,
    pub env: EnvParams,
    pub noise: SensorNoise,
    pub eskf: EskfConfig,
    pub detector: DetectorConfig,
    /// Fraction of sequences (the last ones) held out for validation.
    pub val_fraction: f64,
    /// Stationary std of each sensor's injected yaw walk in naive mode, rad.
    pub naive_walk_std: f64,
    /// Correlation time of the naive yaw walk, s.
    pub naive_walk_tau: f64,
    /// Magnets keep at least this far from every sensor during the warm-up, m.
    pub warmup_clearance: f64,
    /// Magnets keep at least this far from the root path, m.
    pub path_clearance: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::Magnetic,
            env: EnvParams::default(),
            noise: SensorNoise::default(),
            eskf: EskfConfig::default(),
            detector: DetectorConfig::default(),
            val_fraction: 0.2,
            naive_walk_std: 0.1,
            naive_walk_tau: 5.0,
            warmup_clearance: 2.0,
            path_clearance: 0.3,
        }
    }
}

impl DatasetConfig {
    /// SHA-256 of the JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One synthesized sequence with everything needed for training and evaluation.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub seed: u64,
    pub env: MagneticEnvironment,
    pub raw: Vec<ImuRawFrame>,
    pub r_gt: Vec<[Rotation; NUM_IMUS]>,
    /// Erroneous orientations the labels were computed from.
    pub r_err: Vec<[Rotation; NUM_IMUS]>,
    pub flags: Vec<FlagSet>,
    pub labels: Vec<[f64; NUM_LEAVES]>,
    pub features: Vec<[f32; FEATURE_DIM]>,
    pub disturbed: Vec<[bool; NUM_IMUS]>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn to_train_sequence(&self) -> TrainSequence {
        TrainSequence {
            features: self.features.clone(),
            labels: self.labels.iter().map(|l| l.map(|x| x as f32)).collect(),
        }
    }
}

/// Magnet-free zones: around every sensor during the warm-up and along the
/// root path.
fn exclusions(traj: &Trajectory6DoF, cfg: &DatasetConfig) -> Vec<Exclusion> {
    let n_init = init_frame_count(traj.dt()).min(traj.len());
    let mut out = Vec::new();
    for poses in traj.frames[..n_init].iter().step_by(25) {
        out.extend(poses.iter().map(|p| Exclusion { center: p.pos, radius: cfg.warmup_clearance }));
    }
    for poses in traj.frames.iter().step_by(10) {
        out.push(Exclusion { center: poses[NUM_LEAVES].pos, radius: cfg.path_clearance });
    }
    out
}

/// Ornstein-Uhlenbeck yaw walk starting at zero, one per sensor.
fn yaw_walk(len: usize, dt: f64, std: f64, tau: f64, seed: u64) -> Vec<[f64; NUM_IMUS]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = (-dt / tau).exp();
    let drive = std * (1.0 - decay * decay).sqrt();
    let mut phi = [0.0; NUM_IMUS];
    (0..len)
        .map(|_| {
            let out = phi;
            for p in &mut phi {
                let n: f64 = StandardNormal.sample(&mut rng);
                *p = decay * *p + drive * n;
            }
            out
        })
        .collect()
}

/// Builds one sequence from a trajectory. The environment, sensor noise and
/// naive walk are all derived from `seed`.
pub fn make_sequence(
    traj: &Trajectory6DoF,
    cfg: &DatasetConfig,
    skeleton: &Skeleton,
    seed: u64,
) -> Result<SyntheticSequence, SynthError> {
    traj.validate()?;
    let env = match cfg.mode {
        SynthMode::Magnetic => random_env_excluding(
            seed,
            &cfg.env.room,
            cfg.env.n_magnets,
            cfg.env.moment_range,
            &exclusions(traj, cfg),
        )?,
        SynthMode::Naive => MagneticEnvironment { seed: Some(seed), ..MagneticEnvironment::clean() },
    };
    let g_ref = cfg.eskf.gravity();
    let raw = synthesize_raw(traj, &env, &cfg.noise, &g_ref, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1)?;
    let stage1 = run_erroneous(&raw, skeleton, &cfg.detector, &cfg.eskf, FlagSource::Detector)?;
    let mut readings: Vec<[GlobalReading; NUM_IMUS]> = stage1.iter().map(|o| o.readings).collect();

    let g = cfg.eskf.gravity_dir();
    if cfg.mode == SynthMode::Naive {
        let walk = yaw_walk(raw.len(), traj.dt(), cfg.naive_walk_std, cfg.naive_walk_tau, seed ^ 0x5eed);
        for (frame, phi) in readings.iter_mut().zip(&walk) {
            for (r, angle) in frame.iter_mut().zip(phi) {
                let turn = rot_about_axis(&g, *angle).expect("unit gravity axis");
                *r = GlobalReading { rot: turn * r.rot, accel: turn * r.accel, gyro: turn * r.gyro };
            }
        }
    }

    let r_gt: Vec<[Rotation; NUM_IMUS]> = traj.frames.iter().map(|f| f.map(|p| p.rot)).collect();
    let r_err: Vec<[Rotation; NUM_IMUS]> = readings.iter().map(|f| f.map(|r| r.rot)).collect();
    let labels = label_relative_yaw(&r_err, &r_gt, &g);
    let features = readings.iter().map(|r| build_input(r, &g).map(|x| x as f32)).collect();
    let disturbed = disturbance_mask(traj, &env, cfg.detector.eps_m)?;
    Ok(SyntheticSequence {
        seed,
        env,
        raw,
        r_gt,
        r_err,
        flags: stage1.iter().map(|o| o.flags).collect(),
        labels,
        features,
        disturbed,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub sequences: Vec<SyntheticSequence>,
    /// Per sequence: held out for validation.
    pub is_val: Vec<bool>,
}

impl Dataset {
    pub fn train_sequences(&self) -> Vec<TrainSequence> {
        self.split(false)
    }

    pub fn val_sequences(&self) -> Vec<TrainSequence> {
        self.split(true)
    }

    fn split(&self, val: bool) -> Vec<TrainSequence> {
        self.sequences
            .iter()
            .zip(&self.is_val)
            .filter(|(_, v)| **v == val)
            .map(|(s, _)| s.to_train_sequence())
            .collect()
    }
}

/// Number of validation sequences out of `n`; at least one sequence stays
/// in training.
pub fn val_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).min(n - 1)
}

/// Seed of the procedural motion behind sequence `index`; kept apart from
/// the environment and noise seeds, which use `seed + index` directly.
pub fn motion_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17) ^ 0x6D6F_7469_6F6E
}

/// `count` procedural trajectories of `params.duration_s` each, built in
/// parallel.
pub fn procedural_trajectories(seed: u64, count: usize, params: &MotionParams, skeleton: &Skeleton) -> Vec<Trajectory6DoF> {
    (0..count).into_par_iter().map(|i| generate_motion(motion_seed(seed, i), params, skeleton)).collect()
}

/// Synthesizes one sequence per trajectory, in parallel, with sequence `i`
/// seeded by `seed + i`. The last sequences form the validation split.
pub fn make_dataset(
    trajectories: &[Trajectory6DoF],
    cfg: &DatasetConfig,
    skeleton: &Skeleton,
    seed: u64,
) -> Result<Dataset, SynthError> {
    if trajectories.is_empty() {
        return Err(SynthError::Empty);
    }
    let sequences = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| make_sequence(t, cfg, skeleton, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let n = sequences.len();
    let n_val = val_count(n, cfg.val_fraction);
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        sequences,
        is_val: (0..n).map(|i| i >= n - n_val).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub frame: usize,
    /// Per sensor: accelerometer, gyro, magnetometer.
    pub raw: [[f32; 9]; NUM_IMUS],
    pub r_gt: [[f64; 9]; NUM_IMUS],
    pub labels: [f64; NUM_LEAVES],
    pub features: Vec<f32>,
    pub disturbed: [bool; NUM_IMUS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub index: usize,
    pub seed: u64,
    pub split: String,
    pub frames: usize,
    pub data: String,
    pub raw: String,
    pub env: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub config_hash: String,
    /// Free-form description of where the trajectories came from.
    pub source: serde_json::Value,
    pub sequences: Vec<SequenceMeta>,
}

pub const DATASET_FORMAT: &str = "magguard dataset v1";

fn record(seq: &SyntheticSequence, t: usize) -> DatasetRecord {
    let f = &seq.raw[t];
    DatasetRecord {
        frame: t,
        raw: f.imus.map(|m| {
            let mut out = [0.0f32; 9];
            for (k, v) in m.accel.iter().chain(m.gyro.iter()).chain(m.mag.iter()).enumerate() {
                out[k] = *v as f32;
            }
            out
        }),
        r_gt: seq.r_gt[t].map(|r| r.to_row_major()),
        labels: seq.labels[t],
        features: seq.features[t].to_vec(),
        disturbed: seq.disturbed[t],
    }
}

/// Writes the dataset into `dir` (created if needed).
pub fn write_dataset(dataset: &Dataset, dir: &Path, source: serde_json::Value) -> Result<DatasetMeta, SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(dataset.sequences.len());
    for (i, seq) in dataset.sequences.iter().enumerate() {
        let meta = SequenceMeta {
            index: i,
            seed: seq.seed,
            split: if dataset.is_val[i] { "val" } else { "train" }.into(),
            frames: seq.len(),
            data: format!("seq_{i:04}.jsonl"),
            raw: format!("seq_{i:04}.raw"),
            env: format!("env_{i:04}.txt"),
        };
        let mut out = BufWriter::new(File::create(dir.join(&meta.data))?);
        for t in 0..seq.len() {
            serde_json::to_writer(&mut out, &record(seq, t)).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let mut raw = BufWriter::new(File::create(dir.join(&meta.raw))?);
        write_raw_frames(&mut raw, &seq.raw)?;
        raw.flush()?;
        seq.env.save(&dir.join(&meta.env))?;
        metas.push(meta);
    }
    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        seed: dataset.seed,
        config: dataset.config.clone(),
        config_hash: dataset.config.hash(),
        source,
        sequences: metas,
    };
    let mut f = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut f, &meta).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(meta)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, SynthError> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Parse { line: e.line(), msg: e.to_string() })
}

/// Reads the per-frame records of one sequence file.
pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, SynthError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| SynthError::Parse { line: n + 1, msg: e.to_string() })?;
        if rec.features.len() != FEATURE_DIM {
            return Err(SynthError::Parse {
                line: n + 1,
                msg: format!("expected {FEATURE_DIM} features, got {}", rec.features.len()),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Training and validation sequences of a dataset directory.
pub fn load_training_data(dir: &Path) -> Result<(Vec<TrainSequence>, Vec<TrainSequence>), SynthError> {
    let meta = read_meta(dir)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in &meta.sequences {
        let records = read_records(&dir.join(&s.data))?;
        let seq = TrainSequence {
            features: records
                .iter()
                .map(|r| r.features.as_slice().try_into().expect("checked length"))
                .collect(),
            labels: records.iter().map(|r| r.labels.map(|x| x as f32)).collect(),
        };
        if s.split == "val" { &mut val } else { &mut train }.push(seq);
    }
    Ok((train, val))
}

/// Mean and standard deviation of all labels.
pub fn label_stats(sequences: &[SyntheticSequence]) -> (f64, f64) {
    let values: Vec<f64> = sequences.iter().flat_map(|s| s.labels.iter().flatten().copied()).collect();
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
