//! Magnetic environment: point dipoles superimposed on a uniform Earth field.
//!
//! Fields are reported in normalized units, where the undisturbed Earth field
//! has magnitude exactly 1. `tesla_per_unit` converts dipole fields (computed
//! in tesla) into those units.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotmath::Vec3;

/// mu_0 / (4 pi), T m / A.
pub const MU0_OVER_4PI: f64 = 1e-7;
/// Evaluation closer than this to a dipole is refused, m.
pub const SINGULAR_RADIUS: f64 = 1e-3;
/// Typical mid-latitude geomagnetic magnitude, T.
pub const EARTH_FIELD_TESLA: f64 = 50e-6;
/// Default inclination of the Earth field below the horizontal, degrees.
pub const DEFAULT_DIP_DEG: f64 = 50.0;

#[derive(Debug, Error)]
pub enum MagError {
    #[error("evaluation inside singular radius ({distance:.2e} m from dipole {index})")]
    Singular { index: usize, distance: f64 },
    #[error("degenerate room box")]
    DegenerateBox,
    #[error("invalid moment range [{0}, {1}]")]
    InvalidMomentRange(f64, f64),
    #[error("could not place magnet {0} outside the exclusion zones")]
    PlacementFailed(usize),
    #[error("environment file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    /// m
    pub position: Vec3,
    /// A m^2
    pub moment: Vec3,
}

/// Point-dipole field in tesla: (mu0/4pi) (3 (m.r^) r^ - m) / |r|^3.
pub fn dipole_field(d: &Dipole, x: &Vec3) -> Result<Vec3, MagError> {
    let r = x - d.position;
    let dist = r.norm();
    if !(dist >= SINGULAR_RADIUS) {
        return Err(MagError::Singular { index: 0, distance: dist });
    }
    let r_hat = r / dist;
    Ok((r_hat * (3.0 * d.moment.dot(&r_hat)) - d.moment) * (MU0_OVER_4PI / (dist * dist * dist)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagneticEnvironment {
    /// Uniform Earth field, normalized units (unit norm).
    pub earth: Vec3,
    pub dipoles: Vec<Dipole>,
    /// Tesla represented by one normalized unit.
    pub tesla_per_unit: f64,
    pub seed: Option<u64>,
}

/// Earth field with the given dip below the horizontal; the horizontal part
/// points along global +x.
pub fn earth_field(dip_deg: f64) -> Vec3 {
    let dip = dip_deg.to_radians();
    Vec3::new(dip.cos(), 0.0, -dip.sin())
}

impl Default for MagneticEnvironment {
    fn default() -> Self {
        Self::clean()
    }
}

impl MagneticEnvironment {
    pub fn clean() -> Self {
        Self {
            earth: earth_field(DEFAULT_DIP_DEG),
            dipoles: Vec::new(),
            tesla_per_unit: EARTH_FIELD_TESLA,
            seed: None,
        }
    }

    pub fn with_dipoles(dipoles: Vec<Dipole>) -> Self {
        Self { dipoles, ..Self::clean() }
    }

    /// Global field at `x`, normalized units.
    pub fn field_at(&self, x: &Vec3) -> Result<Vec3, MagError> {
        let mut b = self.earth;
        for (index, d) in self.dipoles.iter().enumerate() {
            let contribution = dipole_field(d, x).map_err(|e| match e {
                MagError::Singular { distance, .. } => MagError::Singular { index, distance },
                other => other,
            })?;
            b += contribution / self.tesla_per_unit;
        }
        Ok(b)
    }

    /// Smallest distance from `x` to any dipole (infinite when there are none).
    pub fn nearest_dipole_distance(&self, x: &Vec3) -> f64 {
        self.dipoles
            .iter()
            .map(|d| (d.position - x).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# magguard magnetic environment v1\n");
        match self.seed {
            Some(seed) => writeln!(s, "seed {seed}").unwrap(),
            None => writeln!(s, "seed none").unwrap(),
        }
        writeln!(s, "earth {} {} {}", self.earth.x, self.earth.y, self.earth.z).unwrap();
        writeln!(s, "tesla_per_unit {}", self.tesla_per_unit).unwrap();
        for d in &self.dipoles {
            writeln!(
                s,
                "dipole {} {} {} {} {} {}",
                d.position.x, d.position.y, d.position.z, d.moment.x, d.moment.y, d.moment.z
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MagError> {
        let mut env = MagneticEnvironment::clean();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: &str| MagError::Parse { line: line_no, msg: msg.to_string() };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let nums = || -> Result<Vec<f64>, MagError> {
                rest.iter()
                    .map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number {t:?}"))))
                    .collect()
            };
            match key {
                "seed" => {
                    env.seed = match rest.as_slice() {
                        ["none"] => None,
                        [v] => Some(v.parse().map_err(|_| err("bad seed"))?),
                        _ => return Err(err("seed takes one value")),
                    }
                }
                "earth" => {
                    let v = nums()?;
                    if v.len() != 3 {
                        return Err(err("earth takes 3 values"));
                    }
                    env.earth = Vec3::new(v[0], v[1], v[2]);
                }
                "tesla_per_unit" => {
                    let v = nums()?;
                    if v.len() != 1 || !(v[0] > 0.0) {
                        return Err(err("tesla_per_unit takes one positive value"));
                    }
                    env.tesla_per_unit = v[0];
                }
                "dipole" => {
                    let v = nums()?;
                    if v.len() != 6 {
                        return Err(err("dipole takes 6 values"));
                    }
                    env.dipoles.push(Dipole {
                        position: Vec3::new(v[0], v[1], v[2]),
                        moment: Vec3::new(v[3], v[4], v[5]),
                    });
                }
                other => return Err(err(&format!("unknown record {other:?}"))),
            }
        }
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<(), MagError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, MagError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Axis-aligned box, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for RoomBox {
    fn default() -> Self {
        Self { min: [0.0, 0.0, 0.0], max: [6.0, 6.0, 3.0] }
    }
}

impl RoomBox {
    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.max[i] > self.min[i])
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(std::array::from_fn::<f64, 3, _>(|i| 0.5 * (self.min[i] + self.max[i])))
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        Vec3::from(std::array::from_fn::<f64, 3, _>(|i| rng.random_range(self.min[i]..self.max[i])))
    }
}

/// Parameters of a randomly furnished room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub room: RoomBox,
    pub n_magnets: usize,
    /// Log-uniform range of dipole moment magnitudes, A m^2.
    pub moment_range: [f64; 2],
}

impl Default for EnvParams {
    fn default() -> Self {
        Self { room: RoomBox::default(), n_magnets: 4, moment_range: [20.0, 200.0] }
    }
}

/// Sphere that magnets must stay out of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exclusion {
    pub center: Vec3,
    pub radius: f64,
}

/// Random room: positions uniform in the box, moment directions uniform on
/// the sphere, magnitudes log-uniform. Deterministic in `seed`.
pub fn random_env(
    seed: u64,
    room: &RoomBox,
    n_magnets: usize,
    moment_range: [f64; 2],
) -> Result<MagneticEnvironment, MagError> {
    random_env_excluding(seed, room, n_magnets, moment_range, &[])
}

/// As [`random_env`], but magnet positions falling inside any exclusion
/// sphere are redrawn.
pub fn random_env_excluding(
    seed: u64,
    room: &RoomBox,
    n_magnets: usize,
    moment_range: [f64; 2],
    exclusions: &[Exclusion],
) -> Result<MagneticEnvironment, MagError> {
    if !room.is_valid() {
        return Err(MagError::DegenerateBox);
    }
    let [lo, hi] = moment_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(MagError::InvalidMomentRange(lo, hi));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dipoles = Vec::with_capacity(n_magnets);
    for index in 0..n_magnets {
        let position = (0..10_000)
            .map(|_| room.sample(&mut rng))
            .find(|p| exclusions.iter().all(|e| (p - e.center).norm() >= e.radius))
            .ok_or(MagError::PlacementFailed(index))?;
        let direction = loop {
            let v = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            if let Some(unit) = v.try_normalize(1e-9) {
                break unit;
            }
        };
        let magnitude = if hi > lo { (rng.random_range(lo.ln()..hi.ln())).exp() } else { lo };
        dipoles.push(Dipole { position, moment: direction * magnitude });
    }
    Ok(MagneticEnvironment { seed: Some(seed), ..MagneticEnvironment::with_dipoles(dipoles) })
}
