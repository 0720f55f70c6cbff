//! Orientation accuracy against ground truth.

use serde::{Deserialize, Serialize};

use crate::imu::{ImuId, NUM_IMUS, NUM_LEAVES};
use crate::rotmath::{wrap_angle, yaw_between, Rotation, Vec3};

use super::PipelineError;

/// Summary of a set of angles, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngleStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub count: usize,
}

/// Percentile with linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl AngleStats {
    /// Statistics of angles given in radians.
    pub fn from_radians(values: &[f64]) -> Self {
        let mut deg: Vec<f64> = values.iter().map(|v| v.to_degrees()).collect();
        deg.sort_by(f64::total_cmp);
        let count = deg.len();
        let mean = if count == 0 { 0.0 } else { deg.iter().sum::<f64>() / count as f64 };
        Self { mean, median: percentile(&deg, 0.5), p95: percentile(&deg, 0.95), count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuReport {
    pub imu: ImuId,
    pub geodesic: AngleStats,
    pub yaw: AngleStats,
}

/// Detector flags scored as a classifier of disturbed frames: a `false`
/// flag predicts "disturbed".
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlagReport {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub precision: f64,
    pub recall: f64,
}

impl FlagReport {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut r = Self::default();
        for (flag, disturbed) in pairs {
            match (!flag, disturbed) {
                (true, true) => r.true_positive += 1,
                (true, false) => r.false_positive += 1,
                (false, true) => r.false_negative += 1,
                (false, false) => r.true_negative += 1,
            }
        }
        let ratio = |a: usize, b: usize| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
        r.precision = ratio(r.true_positive, r.false_positive);
        r.recall = ratio(r.true_positive, r.false_negative);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub frames: usize,
    /// Frames left out: the leading skip and degraded frames.
    pub excluded: usize,
    pub geodesic: AngleStats,
    pub yaw: AngleStats,
    /// |θ_leaf − θ_root| over the five leaves.
    pub leaf_relative_yaw: AngleStats,
    pub per_imu: Vec<ImuReport>,
    pub flags: Option<FlagReport>,
}

/// Predicted orientations of one frame plus what the evaluator needs to know
/// about it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredFrame {
    pub rotations: [Rotation; NUM_IMUS],
    pub flags: [bool; NUM_IMUS],
    pub degraded: bool,
}

impl From<&super::FrameOutput> for PredFrame {
    fn from(o: &super::FrameOutput) -> Self {
        Self { rotations: o.rotations(), flags: o.flags, degraded: o.degraded }
    }
}

/// Compares predictions with ground truth frame by frame, skipping the
/// first `skip` frames and degraded frames. `g` is the gravity direction.
pub fn evaluate(
    pred: &[PredFrame],
    truth: &[[Rotation; NUM_IMUS]],
    mask: Option<&[[bool; NUM_IMUS]]>,
    g: &Vec3,
    skip: usize,
) -> Result<Report, PipelineError> {
    if pred.len() != truth.len() {
        return Err(PipelineError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if let Some(m) = mask {
        if m.len() != truth.len() {
            return Err(PipelineError::LengthMismatch { pred: pred.len(), truth: m.len() });
        }
    }
    let mut geo: Vec<Vec<f64>> = vec![Vec::new(); NUM_IMUS];
    let mut yaw: Vec<Vec<f64>> = vec![Vec::new(); NUM_IMUS];
    let mut rel = Vec::new();
    let mut pairs = Vec::new();
    let mut excluded = 0;
    for (t, (p, gt)) in pred.iter().zip(truth).enumerate() {
        if t < skip || p.degraded {
            excluded += 1;
            continue;
        }
        let theta: [f64; NUM_IMUS] = std::array::from_fn(|i| yaw_between(&p.rotations[i], &gt[i], g));
        for i in 0..NUM_IMUS {
            geo[i].push(p.rotations[i].angle_to(&gt[i]));
            yaw[i].push(theta[i].abs());
        }
        for th in &theta[..NUM_LEAVES] {
            rel.push(wrap_angle(th - theta[NUM_LEAVES]).abs());
        }
        if let Some(m) = mask {
            pairs.extend(p.flags.iter().copied().zip(m[t].iter().copied()));
        }
    }
    let all = |v: &[Vec<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
    Ok(Report {
        frames: pred.len(),
        excluded,
        geodesic: AngleStats::from_radians(&all(&geo)),
        yaw: AngleStats::from_radians(&all(&yaw)),
        leaf_relative_yaw: AngleStats::from_radians(&rel),
        per_imu: ImuId::ALL
            .iter()
            .map(|id| ImuReport {
                imu: *id,
                geodesic: AngleStats::from_radians(&geo[id.index()]),
                yaw: AngleStats::from_radians(&yaw[id.index()]),
            })
            .collect(),
        flags: mask.map(|_| FlagReport::from_pairs(pairs)),
    })
}

impl Report {
    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let line = |name: &str, s: &AngleStats| {
            format!("{name:<18} mean {:8.3}  median {:8.3}  p95 {:8.3}\n", s.mean, s.median, s.p95)
        };
        let mut out = format!("frames {} (excluded {})\nangles in degrees\n", self.frames, self.excluded);
        out += &line("geodesic", &self.geodesic);
        out += &line("yaw", &self.yaw);
        out += &line("leaf yaw vs root", &self.leaf_relative_yaw);
        for r in &self.per_imu {
            out += &line(&format!("{} geodesic", r.imu.name()), &r.geodesic);
            out += &line(&format!("{} yaw", r.imu.name()), &r.yaw);
        }
        if let Some(f) = &self.flags {
            out += &format!(
                "flags precision {:.4} recall {:.4} (tp {} fp {} fn {} tn {})\n",
                f.precision, f.recall, f.true_positive, f.false_positive, f.false_negative, f.true_negative
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{exp_map, rot_about_axis};

    const G: Vec3 = Vec3::new(0.0, 0.0, -1.0);

    fn truth(n: usize) -> Vec<[Rotation; NUM_IMUS]> {
        (0..n)
            .map(|t| std::array::from_fn(|i| exp_map(&Vec3::new(0.1 * i as f64, 0.02 * t as f64, 0.3))))
            .collect()
    }

    fn as_pred(r: &[[Rotation; NUM_IMUS]]) -> Vec<PredFrame> {
        r.iter().map(|rot| PredFrame { rotations: *rot, flags: [true; NUM_IMUS], degraded: false }).collect()
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let gt = truth(20);
        let r = evaluate(&as_pred(&gt), &gt, None, &G, 0).unwrap();
        assert!(r.geodesic.mean < 1e-6 && r.yaw.p95 < 1e-6 && r.leaf_relative_yaw.mean < 1e-6);
    }

    #[test]
    fn constant_yaw_offset_on_one_leaf() {
        let gt = truth(30);
        let turn = rot_about_axis(&G, 5f64.to_radians()).unwrap();
        let pred: Vec<[Rotation; NUM_IMUS]> = gt
            .iter()
            .map(|f| {
                let mut f = *f;
                f[1] = turn * f[1];
                f
            })
            .collect();
        let r = evaluate(&as_pred(&pred), &gt, None, &G, 0).unwrap();
        for imu in &r.per_imu {
            let expected = if imu.imu == ImuId::RArm { 5.0 } else { 0.0 };
            assert!((imu.yaw.mean - expected).abs() < 1e-9, "{:?}", imu);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let gt = truth(5);
        assert!(matches!(
            evaluate(&as_pred(&gt[..4]), &gt, None, &G, 0),
            Err(PipelineError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn oracle_flags_have_full_recall() {
        let gt = truth(10);
        let mask: Vec<[bool; NUM_IMUS]> = (0..10).map(|t| std::array::from_fn(|i| (t + i) % 3 == 0)).collect();
        let pred: Vec<PredFrame> = gt
            .iter()
            .zip(&mask)
            .map(|(r, m)| PredFrame { rotations: *r, flags: m.map(|d| !d), degraded: false })
            .collect();
        let f = evaluate(&pred, &gt, Some(&mask), &G, 0).unwrap().flags.unwrap();
        assert_eq!(f.recall, 1.0);
        assert_eq!(f.precision, 1.0);
    }

    #[test]
    fn percentiles_interpolate() {
        let s = AngleStats::from_radians(&[0.0, 1.0, 2.0, 3.0].map(f64::to_radians));
        assert!((s.median - 1.5).abs() < 1e-12);
        assert!((s.p95 - 2.85).abs() < 1e-12);
        assert!((s.mean - 1.5).abs() < 1e-12);
    }
}
