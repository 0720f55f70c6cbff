//! `synth`, `train`, `run` and `eval`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use magguard::corrector::{train as train_network, CorrectorError, TrainConfig};
use magguard::eskf::EskfConfig;
use magguard::imu::ImuRawFrame;
use magguard::pipeline::io::{read_ground_truth, read_outputs, write_output, GroundTruth, RawFrameReader};
use magguard::pipeline::metrics::{evaluate, PredFrame};
use magguard::pipeline::{init_frame_count, Pipeline, PipelineConfig, MIN_STREAM_S};
use magguard::synth::dataset::{load_training_data, write_dataset};
use magguard::synth::{make_dataset, procedural_trajectories, DatasetConfig, MotionParams, SynthMode, Trajectory6DoF};
use magguard::detector::Skeleton;
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use crate::{EvalArgs, RunArgs, SynthArgs, TrainArgs};

type Result<T> = std::result::Result<T, String>;

fn ctx<T, E: std::fmt::Display>(r: std::result::Result<T, E>, what: impl std::fmt::Display) -> Result<T> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = ctx(std::fs::read_to_string(path), path.display())?;
    ctx(toml::from_str(&text), path.display())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ctx(std::fs::create_dir_all(dir), dir.display())?;
    }
    Ok(BufWriter::new(ctx(File::create(path), path.display())?))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg: DatasetConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(n) = a.magnets {
        cfg.env.n_magnets = n;
    }
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<SynthMode>()?;
    }
    if let Some(f) = a.val_fraction {
        if !(0.0..1.0).contains(&f) {
            return Err(format!("--val-fraction must be in [0, 1), got {f}"));
        }
        cfg.val_fraction = f;
    }
    let skeleton = match &a.skeleton {
        Some(p) => ctx(Skeleton::load(p), p.display())?,
        None => Skeleton::default(),
    };

    let (trajectories, source) = if a.trajectories.is_empty() {
        let total = a.minutes * 60.0;
        if !(total > 0.0 && a.seq_seconds > 0.0) {
            return Err("--minutes and --seq-seconds must be positive".into());
        }
        let count = (total / a.seq_seconds - 1e-9).ceil().max(1.0) as usize;
        let duration = total / count as f64;
        if duration < MIN_STREAM_S {
            return Err(format!("sequences of {duration:.2} s are shorter than the {MIN_STREAM_S} s minimum"));
        }
        let params = MotionParams { duration_s: duration, rate_hz: 1.0 / cfg.eskf.dt, ..MotionParams::default() };
        let source = serde_json::json!({ "kind": "procedural", "sequences": count, "motion": params });
        (procedural_trajectories(a.seed, count, &params, &skeleton), source)
    } else {
        let trajs = a
            .trajectories
            .iter()
            .map(|p| ctx(Trajectory6DoF::load(p), p.display()))
            .collect::<Result<Vec<_>>>()?;
        let paths: Vec<String> = a.trajectories.iter().map(|p| p.display().to_string()).collect();
        (trajs, serde_json::json!({ "kind": "files", "paths": paths }))
    };

    let dataset = ctx(make_dataset(&trajectories, &cfg, &skeleton, a.seed), "synthesis")?;
    let meta = ctx(write_dataset(&dataset, &a.out, source), a.out.display())?;
    let frames: usize = meta.sequences.iter().map(|s| s.frames).sum();
    let n_val = dataset.is_val.iter().filter(|v| **v).count();
    eprintln!(
        "wrote {} sequences ({} train, {n_val} val, {frames} frames) to {}",
        meta.sequences.len(),
        meta.sequences.len() - n_val,
        a.out.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(epochs, batch, lr, dropout, window, hidden, seed, patience, clip_norm);
    ctx(cfg.validate(), "training config")?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let (train_set, mut val_set) = ctx(load_training_data(&a.data), a.data.display())?;
    if let Some(dir) = &a.val_data {
        let (x, y) = ctx(load_training_data(dir), dir.display())?;
        val_set = x.into_iter().chain(y).collect();
    }
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out_weights.clone().into_os_string();
        p.push(".log.jsonl");
        p.into()
    });
    let mut log = create(&log_path)?;
    let mut log_err = None;
    let outcome = train_network(&train_set, &val_set, &cfg, |e| {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  val_mae {:.5}  {:.1}s",
            e.epoch, e.train_loss, e.val_loss, e.val_mae, e.wall_time
        );
        let line = serde_json::to_string(e).expect("log entry serializes");
        if let Err(err) = writeln!(log, "{line}").and_then(|()| log.flush()) {
            log_err.get_or_insert(err);
        }
    });
    if let Some(err) = log_err {
        return Err(format!("{}: {err}", log_path.display()));
    }
    match outcome {
        Ok(out) => {
            ctx(out.weights.save(&a.out_weights), a.out_weights.display())?;
            eprintln!("best epoch {}; weights written to {}", out.best_epoch, a.out_weights.display());
            Ok(())
        }
        Err(CorrectorError::Diverged { epoch, checkpoint }) => {
            ctx(checkpoint.save(&a.out_weights), a.out_weights.display())?;
            Err(format!(
                "training diverged in epoch {epoch}; last finite checkpoint written to {}",
                a.out_weights.display()
            ))
        }
        Err(e) => Err(format!("training: {e}")),
    }
}

fn run_stream(
    frames: &mut dyn Iterator<Item = std::result::Result<ImuRawFrame, magguard::pipeline::PipelineError>>,
    cfg: &PipelineConfig,
    out: &mut dyn Write,
    flush_each: bool,
) -> Result<usize> {
    let dt = cfg.eskf.dt;
    let needed = (MIN_STREAM_S / dt).round() as usize;
    let mut head = Vec::with_capacity(needed);
    while head.len() < needed {
        match frames.next() {
            Some(f) => head.push(ctx(f, "input")?),
            None => {
                return Err(format!(
                    "input has {} frames ({:.2} s); at least {MIN_STREAM_S} s are required",
                    head.len(),
                    head.len() as f64 * dt
                ))
            }
        }
    }
    let skeleton = ctx(cfg.load_skeleton(), "skeleton")?;
    let net = ctx(cfg.load_weights(), "weights")?;
    let mut pipeline = ctx(Pipeline::initialize(&head[..init_frame_count(dt)], cfg, skeleton, net), "initialization")?;
    let mut count = 0;
    let mut emit = |pipeline: &mut Pipeline, f: &ImuRawFrame| -> Result<()> {
        let o = ctx(pipeline.process_frame(f), format!("frame {count}"))?;
        ctx(write_output(out, &o), "output")?;
        if flush_each {
            ctx(out.flush(), "output")?;
        }
        count += 1;
        Ok(())
    };
    for f in &head {
        emit(&mut pipeline, f)?;
    }
    for f in frames {
        let f = ctx(f, "input")?;
        emit(&mut pipeline, &f)?;
    }
    Ok(count)
}

pub fn run(a: &RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ctx(PipelineConfig::load(p), p.display())?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = &a.weights {
        cfg.weights = Some(w.clone());
    }
    let reader: Box<dyn BufRead> = if a.input == "-" {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(BufReader::new(ctx(File::open(&a.input), &a.input)?))
    };
    let streaming = a.input == "-";
    let mut frames = RawFrameReader::new(reader);
    let count = if a.out == "-" {
        let mut out = BufWriter::new(std::io::stdout().lock());
        let n = run_stream(&mut frames, &cfg, &mut out, streaming)?;
        ctx(out.flush(), "stdout")?;
        n
    } else {
        let mut out = create(Path::new(&a.out))?;
        let n = run_stream(&mut frames, &cfg, &mut out, false)?;
        ctx(out.flush(), &a.out)?;
        n
    };
    eprintln!("processed {count} frames");
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.pred.len() != a.gt.len() {
        return Err(format!("{} --pred files but {} --gt files", a.pred.len(), a.gt.len()));
    }
    if !(a.skip_seconds >= 0.0) {
        return Err("--skip-seconds must be non-negative".into());
    }
    let pairs: Vec<(Vec<PredFrame>, GroundTruth)> = a
        .pred
        .par_iter()
        .zip(&a.gt)
        .map(|(p, g)| {
            let outputs = ctx(read_outputs(p), p.display())?;
            let truth = ctx(read_ground_truth(g), g.display())?;
            if outputs.len() != truth.rotations.len() {
                return Err(format!(
                    "{}: {} frames but {} has {}",
                    p.display(),
                    outputs.len(),
                    g.display(),
                    truth.rotations.len()
                ));
            }
            let t0 = outputs.first().map_or(0.0, |o| o.timestamp);
            let frames = outputs
                .iter()
                .map(|o| {
                    let mut f = PredFrame::from(o);
                    // leading frames are dropped the same way as degraded ones
                    f.degraded |= o.timestamp - t0 < a.skip_seconds - 1e-9;
                    f
                })
                .collect();
            Ok((frames, truth))
        })
        .collect::<Result<_>>()?;

    let mut pred = Vec::new();
    let mut truth = GroundTruth::default();
    for (p, t) in pairs {
        pred.extend(p);
        truth.rotations.extend(t.rotations);
        truth.disturbed.extend(t.disturbed);
    }
    let g = EskfConfig::default().gravity_dir();
    let report = ctx(evaluate(&pred, &truth.rotations, Some(&truth.disturbed), &g, 0), "evaluation")?;
    let text = if a.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.to_text()
    };
    match &a.report {
        Some(p) => {
            let mut f = create(p)?;
            ctx(f.write_all(text.as_bytes()).and_then(|()| f.flush()), p.display())
        }
        None => ctx(std::io::stdout().write_all(text.as_bytes()), "stdout"),
    }
}
