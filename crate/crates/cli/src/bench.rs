//! Throughput of stage 1, the corrector and the whole pipeline.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use magguard::corrector::{correct, CorrectionState, Dims, Lstm};
use magguard::detector::Skeleton;
use magguard::eskf::EskfConfig;
use magguard::imu::ImuRawFrame;
use magguard::magfield::MagneticEnvironment;
use magguard::pipeline::io::read_raw_frames;
use magguard::pipeline::stage1::{positions_from_orientations, Stage1Filter};
use magguard::pipeline::{init_frame_count, run_batch, PipelineConfig, MIN_STREAM_S};
use magguard::synth::{generate_motion, synthesize_raw, MotionParams, SensorNoise};
use serde::Serialize;

use crate::BenchArgs;

#[derive(Debug, Serialize)]
struct BenchReport {
    frames: usize,
    stage1_fps: f64,
    corrector_fps: f64,
    pipeline_fps: f64,
}

fn frames(a: &BenchArgs, cfg: &PipelineConfig) -> Result<Vec<ImuRawFrame>, String> {
    if let Some(p) = &a.input {
        return read_raw_frames(p).map_err(|e| format!("{}: {e}", p.display()));
    }
    if a.seconds < MIN_STREAM_S {
        return Err(format!("--seconds must be at least {MIN_STREAM_S}"));
    }
    let params = MotionParams { duration_s: a.seconds, ..MotionParams::default() };
    let traj = generate_motion(0, &params, &Skeleton::default());
    synthesize_raw(&traj, &MagneticEnvironment::clean(), &SensorNoise::default(), &cfg.eskf.gravity(), 0)
        .map_err(|e| e.to_string())
}

fn network(path: Option<&Path>) -> Result<Lstm<f32>, String> {
    match path {
        Some(p) => Lstm::load(p).map_err(|e| format!("{}: {e}", p.display())),
        None => Lstm::init(Dims::default(), 0).map_err(|e| e.to_string()),
    }
}

/// Frames per second of `f` over `n` frames, best of three runs.
fn fps(n: usize, mut f: impl FnMut() -> Result<(), String>) -> Result<f64, String> {
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(n as f64 / best.max(1e-12))
}

pub fn bench(a: &BenchArgs) -> Result<(), String> {
    let cfg = PipelineConfig::default();
    let frames = frames(a, &cfg)?;
    if (frames.len() as f64) * cfg.eskf.dt < MIN_STREAM_S {
        return Err(format!("input shorter than {MIN_STREAM_S} s"));
    }
    let skeleton = Skeleton::default();
    let net = Arc::new(network(a.weights.as_deref())?);
    let n_init = init_frame_count(cfg.eskf.dt);
    let err = |e: magguard::eskf::EskfError| e.to_string();

    // stage 1 alone, including the detector and its forward kinematics
    let fresh = Stage1Filter::initialize(&frames[..n_init], &cfg.eskf, &cfg.detector).map_err(err)?;
    let mut stage1_out = Vec::with_capacity(frames.len());
    let stage1_fps = fps(frames.len(), || {
        let mut s1 = fresh.clone();
        stage1_out.clear();
        for f in &frames {
            let positions = positions_from_orientations(&s1.orientations(), &skeleton);
            stage1_out.push(s1.step(f, &positions).map_err(err)?);
        }
        Ok(())
    })?;

    // corrector alone on the stage-1 readings
    let g = EskfConfig::default().gravity_dir();
    let corrector_fps = fps(frames.len(), || {
        let mut state = CorrectionState::new(net.dims());
        for o in &stage1_out {
            correct(&net, &mut state, &o.readings, &o.flags, &g).map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;

    let pipeline_fps = fps(frames.len(), || {
        run_batch(&frames, &cfg, &skeleton, Some(net.clone())).map(|_| ()).map_err(|e| e.to_string())
    })?;

    let report = BenchReport { frames: frames.len(), stage1_fps, corrector_fps, pipeline_fps };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("frames {}", report.frames);
        println!("stage1_fps {:.1}", report.stage1_fps);
        println!("corrector_fps {:.1}", report.corrector_fps);
        println!("pipeline_fps {:.1}", report.pipeline_fps);
    }
    Ok(())
}
