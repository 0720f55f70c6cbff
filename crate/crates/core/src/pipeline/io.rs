//! File formats.
//!
//! Raw frames: one line per frame, whitespace separated: timestamp (s), then
//! for larm, rarm, lleg, rleg, head, root in turn the accelerometer (3),
//! gyro (3) and magnetometer (3) readings. Values are written with `f32`
//! precision and parsed back as `f32`. Blank lines and lines starting with `#` are ignored; `NaN`
//! entries parse and mark a corrupt frame.
//!
//! Pipeline output and ground truth are line-delimited JSON, one object per
//! frame (see [`super::FrameOutput`] and the dataset record).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::imu::{ImuRawFrame, RawImu, NUM_IMUS};
use crate::rotmath::{Rotation, Vec3};
use crate::synth::dataset::read_records;

use super::{FrameOutput, PipelineError};

pub const RAW_FIELDS: usize = 1 + NUM_IMUS * 9;

/// Writes one raw frame line.
pub fn write_raw_frame(w: &mut impl Write, frame: &ImuRawFrame) -> std::io::Result<()> {
    write!(w, "{}", frame.timestamp as f32)?;
    for m in &frame.imus {
        for v in m.accel.iter().chain(m.gyro.iter()).chain(m.mag.iter()) {
            write!(w, " {}", *v as f32)?;
        }
    }
    writeln!(w)
}

pub fn write_raw_frames(w: &mut impl Write, frames: &[ImuRawFrame]) -> std::io::Result<()> {
    frames.iter().try_for_each(|f| write_raw_frame(w, f))
}

/// Parses one data line (1-based `line` number for diagnostics).
pub fn parse_raw_line(text: &str, line: usize) -> Result<ImuRawFrame, PipelineError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f32>().map(f64::from))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::Parse { line, msg: e.to_string() })?;
    if values.len() != RAW_FIELDS {
        return Err(PipelineError::Parse { line, msg: format!("expected {RAW_FIELDS} values, got {}", values.len()) });
    }
    let v3 = |k: usize| Vec3::new(values[k], values[k + 1], values[k + 2]);
    Ok(ImuRawFrame {
        timestamp: values[0],
        imus: std::array::from_fn(|i| {
            let b = 1 + 9 * i;
            RawImu { accel: v3(b), gyro: v3(b + 3), mag: v3(b + 6) }
        }),
    })
}

/// Streaming reader over raw-frame text.
pub struct RawFrameReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> RawFrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, line: 0, buf: String::new() }
    }
}

impl<R: BufRead> Iterator for RawFrameReader<R> {
    type Item = Result<ImuRawFrame, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = self.buf.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            return Some(parse_raw_line(text, self.line));
        }
    }
}

pub fn read_raw_frames(path: &Path) -> Result<Vec<ImuRawFrame>, PipelineError> {
    RawFrameReader::new(BufReader::new(File::open(path)?)).collect()
}

pub fn write_outputs(w: &mut (impl Write + ?Sized), outputs: &[FrameOutput]) -> Result<(), PipelineError> {
    for o in outputs {
        write_output(w, o)?;
    }
    Ok(())
}

pub fn write_output(w: &mut (impl Write + ?Sized), output: &FrameOutput) -> Result<(), PipelineError> {
    serde_json::to_writer(&mut *w, output).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn save_outputs(path: &Path, outputs: &[FrameOutput]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_outputs(&mut w, outputs)?;
    w.flush()?;
    Ok(())
}

pub fn read_outputs(path: &Path) -> Result<Vec<FrameOutput>, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Parse { line: n + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

/// Ground-truth orientations and disturbance mask per frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub rotations: Vec<[Rotation; NUM_IMUS]>,
    pub disturbed: Vec<[bool; NUM_IMUS]>,
}

/// Reads ground truth from a dataset sequence file (`seq_NNNN.jsonl`).
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, PipelineError> {
    let records = read_records(path).map_err(|e| PipelineError::Parse { line: 0, msg: e.to_string() })?;
    Ok(GroundTruth {
        rotations: records.iter().map(|r| r.r_gt.map(|m| Rotation::from_row_major(&m))).collect(),
        disturbed: records.iter().map(|r| r.disturbed).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(k: f64) -> ImuRawFrame {
        ImuRawFrame {
            timestamp: k * 0.01,
            imus: std::array::from_fn(|i| RawImu {
                accel: Vec3::new(0.1 * k, -9.8, i as f64),
                gyro: Vec3::new(0.001, 0.002 * k, -0.5),
                mag: Vec3::new(0.64, 0.0, -0.766),
            }),
        }
    }

    #[test]
    fn raw_round_trip_at_f32_precision() {
        let frames: Vec<ImuRawFrame> = (0..5).map(|k| frame(k as f64)).collect();
        let mut text = Vec::new();
        write_raw_frames(&mut text, &frames).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap().split_whitespace().count(), RAW_FIELDS);
        let back: Vec<ImuRawFrame> = RawFrameReader::new(text.as_bytes()).collect::<Result<_, _>>().unwrap();
        for (a, b) in frames.iter().zip(&back) {
            for i in 0..NUM_IMUS {
                assert_eq!(b.imus[i].accel, a.imus[i].accel.map(|x| x as f32 as f64));
            }
        }
    }

    #[test]
    fn comments_blank_lines_and_nan() {
        let mut line = Vec::new();
        write_raw_frame(&mut line, &frame(1.0)).unwrap();
        let good = String::from_utf8(line).unwrap();
        let bad = good.replacen(" -9.8", " NaN", 1);
        let text = format!("# header\n\n{good}{bad}");
        let frames: Vec<_> = RawFrameReader::new(text.as_bytes()).collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames[0].is_finite());
        assert!(!frames[1].is_finite());
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let text = "# c\n1 2 3\n";
        match RawFrameReader::new(text.as_bytes()).next().unwrap() {
            Err(PipelineError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
