//! Pose-aware magnetic disturbance detection.
//!
//! An IMU may use its magnetometer only if every sensor among its `k`
//! nearest neighbours (itself included) sees a normalized field magnitude
//! within `eps_m` of 1. With `k = 1` this is the classical per-sensor
//! magnitude gate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imu::{ImuId, NUM_IMUS, NUM_LEAVES};
use crate::rotmath::{Rotation, Vec3};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("skeleton: {0}")]
    Skeleton(String),
    #[error("reading skeleton file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub k: usize,
    pub eps_m: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { k: 3, eps_m: 0.15 }
    }
}

impl DetectorConfig {
    pub fn baseline() -> Self {
        Self { k: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(1..=NUM_IMUS).contains(&self.k) {
            return Err(DetectorError::InvalidConfig(format!("k must be in 1..=6, got {}", self.k)));
        }
        if !(self.eps_m > 0.0) {
            return Err(DetectorError::InvalidConfig("eps_m must be > 0".into()));
        }
        Ok(())
    }
}

/// Sensor positions in a common frame, indexed by [`ImuId`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuPositions([Vec3; NUM_IMUS]);

impl ImuPositions {
    /// Exactly coincident sensors are nudged apart by 1e-6 m along x.
    pub fn new(mut positions: [Vec3; NUM_IMUS]) -> Self {
        for i in 1..NUM_IMUS {
            while (0..i).any(|j| positions[j] == positions[i]) {
                positions[i].x += 1e-6;
            }
        }
        Self(positions)
    }

    pub fn get(&self, id: ImuId) -> Vec3 {
        self.0[id.index()]
    }

    pub fn as_array(&self) -> &[Vec3; NUM_IMUS] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlagSet(pub [bool; NUM_IMUS]);

impl FlagSet {
    pub fn all_true() -> Self {
        Self([true; NUM_IMUS])
    }

    pub fn all(&self) -> bool {
        self.0.iter().all(|f| *f)
    }

    pub fn count_false(&self) -> usize {
        self.0.iter().filter(|f| !**f).count()
    }

    pub fn get(&self, id: ImuId) -> bool {
        self.0[id.index()]
    }
}

/// Indices of the `k` sensors closest to sensor `i` (itself included, at
/// distance zero). Ties go to the lower index.
pub fn knn(positions: &ImuPositions, i: usize, k: usize) -> Vec<usize> {
    let origin = positions.0[i];
    let mut order: Vec<(f64, usize)> = positions
        .0
        .iter()
        .enumerate()
        .map(|(j, p)| ((p - origin).norm_squared(), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k.min(NUM_IMUS)).map(|(_, j)| j).collect()
}

/// Per-sensor permission to use the magnetometer this frame.
pub fn compute_flags(
    magnitudes: &[f64; NUM_IMUS],
    positions: &ImuPositions,
    cfg: &DetectorConfig,
) -> FlagSet {
    // NaN fails the comparison and therefore counts as disturbed
    let clean: [bool; NUM_IMUS] = std::array::from_fn(|j| (magnitudes[j] - 1.0).abs() < cfg.eps_m);
    let mut flags = [false; NUM_IMUS];
    for (i, flag) in flags.iter_mut().enumerate() {
        *flag = knn(positions, i, cfg.k).into_iter().all(|j| clean[j]);
    }
    FlagSet(flags)
}

/// Rigid stick-figure skeleton used to place sensors from orientations.
///
/// Every joint hangs off a parent by an offset expressed in the frame of the
/// segment it belongs to. A joint named after a leaf sensor (`larm`, `rarm`,
/// `lleg`, `rleg`, `head`) belongs to that sensor's segment and marks where
/// the sensor sits; any other joint belongs to its parent's segment. `root`
/// is implicit and sits at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    /// Joints in topological order.
    joints: Vec<Joint>,
    /// Index into `joints` for each leaf sensor.
    leaf_joint: [usize; NUM_LEAVES],
}

#[derive(Debug, Clone, PartialEq)]
struct Joint {
    name: String,
    parent: Option<usize>,
    offset: Vec3,
    segment: ImuId,
}

#[derive(Debug, Deserialize)]
struct SkeletonFile {
    joints: BTreeMap<String, JointEntry>,
}

#[derive(Debug, Deserialize)]
struct JointEntry {
    parent: String,
    offset: [f64; 3],
}

/// Default skeleton in TOML form; the on-disk schema for custom skeletons.
pub const DEFAULT_SKELETON_TOML: &str = r#"# joint name -> parent joint and offset (m) in the owning segment's frame
[joints.neck]
parent = "root"
offset = [0.0, 0.0, 0.45]

[joints.head]
parent = "neck"
offset = [0.0, 0.0, 0.10]

[joints.lshoulder]
parent = "root"
offset = [-0.20, 0.0, 0.45]

[joints.larm]
parent = "lshoulder"
offset = [-0.25, 0.0, 0.0]

[joints.rshoulder]
parent = "root"
offset = [0.20, 0.0, 0.45]

[joints.rarm]
parent = "rshoulder"
offset = [0.25, 0.0, 0.0]

[joints.lhip]
parent = "root"
offset = [-0.10, 0.0, -0.10]

[joints.lleg]
parent = "lhip"
offset = [0.0, 0.0, -0.55]

[joints.rhip]
parent = "root"
offset = [0.10, 0.0, -0.10]

[joints.rleg]
parent = "rhip"
offset = [0.0, 0.0, -0.55]
"#;

impl Default for Skeleton {
    fn default() -> Self {
        Skeleton::from_toml_str(DEFAULT_SKELETON_TOML).expect("built-in skeleton is valid")
    }
}

impl Skeleton {
    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DetectorError> {
        let file: SkeletonFile =
            toml::from_str(text).map_err(|e| DetectorError::Skeleton(e.to_string()))?;
        if file.joints.contains_key("root") {
            return Err(DetectorError::Skeleton("root is implicit and cannot be redefined".into()));
        }
        let mut joints = vec![Joint {
            name: "root".into(),
            parent: None,
            offset: Vec3::zeros(),
            segment: ImuId::Root,
        }];
        // topological insertion; BTreeMap order keeps the result deterministic
        let mut pending: Vec<(&String, &JointEntry)> = file.joints.iter().collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|(name, entry)| {
                let Some(parent) = joints.iter().position(|j| j.name == entry.parent) else {
                    return true;
                };
                let segment = match ImuId::from_name(name) {
                    Some(id) => id,
                    None => joints[parent].segment,
                };
                joints.push(Joint {
                    name: (*name).clone(),
                    parent: Some(parent),
                    offset: Vec3::from(entry.offset),
                    segment,
                });
                false
            });
            if pending.len() == before {
                let names: Vec<_> = pending.iter().map(|(n, _)| n.as_str()).collect();
                return Err(DetectorError::Skeleton(format!(
                    "unresolvable parents (missing joint or cycle) for: {}",
                    names.join(", ")
                )));
            }
        }
        let mut leaf_joint = [0; NUM_LEAVES];
        for id in ImuId::LEAVES {
            leaf_joint[id.index()] = joints
                .iter()
                .position(|j| j.name == id.name())
                .ok_or_else(|| DetectorError::Skeleton(format!("missing sensor joint {}", id.name())))?;
        }
        Ok(Self { joints, leaf_joint })
    }
}

/// Forward kinematics: root-relative sensor positions from the five leaf
/// orientations and the root orientation.
pub fn positions_from_pose(
    leaves: &[Rotation; NUM_LEAVES],
    root: &Rotation,
    skeleton: &Skeleton,
) -> ImuPositions {
    let segment_rot = |id: ImuId| match id {
        ImuId::Root => *root,
        leaf => leaves[leaf.index()],
    };
    let mut world = vec![Vec3::zeros(); skeleton.joints.len()];
    for (i, joint) in skeleton.joints.iter().enumerate() {
        if let Some(parent) = joint.parent {
            world[i] = world[parent] + segment_rot(joint.segment).apply(&joint.offset);
        }
    }
    let mut out = [Vec3::zeros(); NUM_IMUS];
    for id in ImuId::LEAVES {
        out[id.index()] = world[skeleton.leaf_joint[id.index()]];
    }
    ImuPositions::new(out)
}

/// Sensor positions of the rest pose (all orientations identity).
pub fn rest_positions(skeleton: &Skeleton) -> ImuPositions {
    positions_from_pose(&[Rotation::identity(); NUM_LEAVES], &Rotation::identity(), skeleton)
}
