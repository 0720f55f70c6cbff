//! Sensor identifiers and raw measurement containers.

use serde::{Deserialize, Serialize};

use crate::rotmath::Vec3;

pub const NUM_IMUS: usize = 6;
pub const NUM_LEAVES: usize = 5;

/// Body locations of the six sensors, in the fixed on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImuId {
    LArm = 0,
    RArm = 1,
    LLeg = 2,
    RLeg = 3,
    Head = 4,
    Root = 5,
}

impl ImuId {
    pub const ALL: [ImuId; NUM_IMUS] = [
        ImuId::LArm,
        ImuId::RArm,
        ImuId::LLeg,
        ImuId::RLeg,
        ImuId::Head,
        ImuId::Root,
    ];
    pub const LEAVES: [ImuId; NUM_LEAVES] =
        [ImuId::LArm, ImuId::RArm, ImuId::LLeg, ImuId::RLeg, ImuId::Head];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ImuId::LArm => "larm",
            ImuId::RArm => "rarm",
            ImuId::LLeg => "lleg",
            ImuId::RLeg => "rleg",
            ImuId::Head => "head",
            ImuId::Root => "root",
        }
    }

    pub fn from_name(name: &str) -> Option<ImuId> {
        ImuId::ALL.into_iter().find(|id| id.name() == name)
    }
}

/// Sensor-local measurements of one IMU at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawImu {
    /// Specific force, m/s^2.
    pub accel: Vec3,
    /// Angular rate, rad/s.
    pub gyro: Vec3,
    /// Magnetic field, normalized units (undisturbed magnitude 1).
    pub mag: Vec3,
}

impl RawImu {
    pub fn is_finite(&self) -> bool {
        self.accel.iter().chain(self.gyro.iter()).chain(self.mag.iter()).all(|x| x.is_finite())
    }
}

/// One timestep of raw measurements for all six sensors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuRawFrame {
    pub timestamp: f64,
    pub imus: [RawImu; NUM_IMUS],
}

impl ImuRawFrame {
    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite() && self.imus.iter().all(RawImu::is_finite)
    }

    pub fn imu(&self, id: ImuId) -> &RawImu {
        &self.imus[id.index()]
    }
}

/// Global-frame reading of one IMU after fusion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GlobalReading {
    /// Sensor-to-global orientation.
    pub rot: crate::rotmath::Rotation,
    /// Gravity-compensated acceleration in the global frame, m/s^2.
    pub accel: Vec3,
    /// Angular velocity in the global frame, rad/s.
    pub gyro: Vec3,
}
