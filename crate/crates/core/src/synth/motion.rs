//! Procedural full-body motion for the six-sensor rig.
//!
//! A body wanders around the room on a smooth path while its limbs follow
//! joint-angle processes built from sums of sinusoids: gait-coupled leg and
//! arm swings, arm waves, torso turns and head motion. Limb twist stays small,
//! which is the motion prior the corrector can exploit. The first
//! `warmup_s` seconds are a motionless stance; motion then fades in.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{positions_from_pose, Skeleton};
use crate::imu::{ImuId, NUM_IMUS, NUM_LEAVES};
use crate::magfield::RoomBox;
use crate::rotmath::{Rotation, Vec3};
use crate::synth::{Pose, Trajectory6DoF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Initial motionless period, s.
    pub warmup_s: f64,
    /// Time over which motion fades in after the warm-up, s.
    pub ramp_s: f64,
    pub room: RoomBox,
    /// Distance kept between the wandering root and the walls, m.
    pub wall_margin: f64,
    /// Root height above the floor, m.
    pub root_height: f64,
    /// Scales every motion amplitude (0 gives a static sequence).
    pub intensity: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            duration_s: 120.0,
            rate_hz: 100.0,
            warmup_s: 3.0,
            ramp_s: 2.0,
            room: RoomBox::default(),
            wall_margin: 0.8,
            root_height: 1.0,
            intensity: 1.0,
        }
    }
}

/// Sum of sinusoids; a cheap smooth random process with analytic derivative.
#[derive(Debug, Clone, Default)]
struct Smooth {
    terms: Vec<(f64, f64, f64)>,
}

impl Smooth {
    /// `n` terms with frequencies in `[f_lo, f_hi]` Hz and total amplitude `amp`.
    fn random(rng: &mut ChaCha8Rng, n: usize, amp: f64, f_lo: f64, f_hi: f64) -> Self {
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let terms = weights
            .into_iter()
            .map(|w| {
                let f = rng.random_range(f_lo..f_hi);
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp * w / total, 2.0 * PI * f, phase)
            })
            .collect();
        Self { terms }
    }

    fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum()
    }

    fn rate(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, w, p)| a * w * (w * t + p).cos()).sum()
    }
}

fn rx(a: f64) -> Rotation {
    crate::rotmath::exp_map(&Vec3::new(a, 0.0, 0.0))
}

fn ry(a: f64) -> Rotation {
    crate::rotmath::exp_map(&Vec3::new(0.0, a, 0.0))
}

fn rz(a: f64) -> Rotation {
    crate::rotmath::exp_map(&Vec3::new(0.0, 0.0, a))
}

/// `|x|` rounded off below `eps`, so second derivatives stay bounded.
fn soft_abs(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt() - eps
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

struct Body {
    path_x: Smooth,
    path_y: Smooth,
    heading0: f64,
    turn: Smooth,
    torso_pitch: Smooth,
    torso_roll: Smooth,
    step_hz: f64,
    gait_phase: f64,
    walk_speed_ref: f64,
    leg_swing: f64,
    leg_extra: [Smooth; 2],
    leg_abd: [Smooth; 2],
    leg_twist: [Smooth; 2],
    arm_lower: f64,
    arm_wave: [Smooth; 2],
    arm_flex: [Smooth; 2],
    arm_twist: [Smooth; 2],
    head_yaw: Smooth,
    head_pitch: Smooth,
}

impl Body {
    fn random(rng: &mut ChaCha8Rng, params: &MotionParams) -> Self {
        let s = params.intensity;
        let half = |i: usize| 0.5 * (params.room.max[i] - params.room.min[i]) - params.wall_margin;
        let wander = rng.random_range(0.4..1.0);
        let waves = rng.random_range(0.0..1.0);
        let turns = rng.random_range(0.3..1.0);
        let pair = |rng: &mut ChaCha8Rng, n, amp, lo, hi| [Smooth::random(rng, n, amp, lo, hi), Smooth::random(rng, n, amp, lo, hi)];
        Self {
            path_x: Smooth::random(rng, 3, s * wander * half(0).max(0.0), 0.01, 0.05),
            path_y: Smooth::random(rng, 3, s * wander * half(1).max(0.0), 0.01, 0.05),
            heading0: rng.random_range(-PI..PI),
            turn: Smooth::random(rng, 4, s * turns * 2.0, 0.01, 0.08),
            torso_pitch: Smooth::random(rng, 2, s * 0.12, 0.05, 0.4),
            torso_roll: Smooth::random(rng, 2, s * 0.06, 0.05, 0.4),
            step_hz: rng.random_range(0.8..1.1),
            gait_phase: rng.random_range(0.0..2.0 * PI),
            walk_speed_ref: 0.4,
            leg_swing: s * rng.random_range(0.25..0.45),
            leg_extra: pair(rng, 3, s * 0.25, 0.1, 0.6),
            leg_abd: pair(rng, 2, s * 0.08, 0.05, 0.4),
            leg_twist: pair(rng, 2, s * 0.04, 0.05, 0.4),
            arm_lower: rng.random_range(1.15..1.45),
            arm_wave: pair(rng, 3, s * waves * 0.9, 0.05, 0.4),
            arm_flex: pair(rng, 3, s * 0.5, 0.1, 0.6),
            arm_twist: pair(rng, 2, s * 0.06, 0.05, 0.4),
            head_yaw: Smooth::random(rng, 3, s * 0.5, 0.05, 0.4),
            head_pitch: Smooth::random(rng, 2, s * 0.2, 0.05, 0.4),
        }
    }

    /// Orientation of every segment and root position at motion time `tau`
    /// with fade-in factor `env`.
    fn pose(&self, tau: f64, env: f64, center: &Vec3, height: f64) -> ([Rotation; NUM_IMUS], Vec3) {
        let vx = self.path_x.rate(tau);
        let vy = self.path_y.rate(tau);
        let speed = env * soft_abs((vx * vx + vy * vy).sqrt(), 0.05);
        let walk = (speed / self.walk_speed_ref).tanh();
        let gait = 2.0 * PI * self.step_hz * tau + self.gait_phase;

        let offset = |s: &Smooth| env * (s.value(tau) - s.value(0.0));
        let root_pos = Vec3::new(
            center.x + self.path_x.value(0.0) + offset(&self.path_x),
            center.y + self.path_y.value(0.0) + offset(&self.path_y),
            height + env * 0.015 * walk * (2.0 * gait).sin(),
        );
        let heading = self.heading0 + offset(&self.turn);
        let root = rz(heading) * rx(0.05 + env * self.torso_pitch.value(tau)) * ry(env * self.torso_roll.value(tau));

        let swing = env * walk * self.leg_swing * gait.sin();
        let leg = |side: usize, sign: f64| {
            let flex = sign * swing + env * (0.5 * (self.leg_extra[side].value(tau) + soft_abs(self.leg_extra[side].value(tau), 0.1)));
            rx(flex) * ry(env * self.leg_abd[side].value(tau)) * rz(env * self.leg_twist[side].value(tau))
        };
        let arm = |side: usize, sign: f64| {
            // sign: -1 for the left arm (rest along -x), +1 for the right arm
            let lower = self.arm_lower - env * soft_abs(self.arm_wave[side].value(tau), 0.1);
            let flex = -sign * 0.6 * swing + env * self.arm_flex[side].value(tau);
            rx(flex) * ry(sign * lower) * rx(sign * env * self.arm_twist[side].value(tau))
        };
        let head = rz(env * self.head_yaw.value(tau)) * rx(env * self.head_pitch.value(tau));

        let mut rel = [Rotation::identity(); NUM_IMUS];
        rel[ImuId::LArm.index()] = arm(0, -1.0);
        rel[ImuId::RArm.index()] = arm(1, 1.0);
        rel[ImuId::LLeg.index()] = leg(0, 1.0);
        rel[ImuId::RLeg.index()] = leg(1, -1.0);
        rel[ImuId::Head.index()] = head;
        let global = rel.map(|r| root * r);
        let mut out = global;
        out[ImuId::Root.index()] = root;
        (out, root_pos)
    }
}

/// Generates a deterministic procedural trajectory for all six sensors.
pub fn generate_motion(seed: u64, params: &MotionParams, skeleton: &Skeleton) -> Trajectory6DoF {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = Body::random(&mut rng, params);
    let center = params.room.center();
    let dt = 1.0 / params.rate_hz;
    let n = (params.duration_s * params.rate_hz).round().max(3.0) as usize;
    let frames = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let tau = (t - params.warmup_s).max(0.0);
            let env = if params.ramp_s > 0.0 { smoothstep(tau / params.ramp_s) } else { 1.0 };
            let (rots, root_pos) = body.pose(tau, env, &center, params.root_height);
            let leaves: [Rotation; NUM_LEAVES] = std::array::from_fn(|i| rots[i]);
            let rel = positions_from_pose(&leaves, &rots[NUM_LEAVES], skeleton);
            std::array::from_fn(|i| Pose { rot: rots[i], pos: root_pos + rel.as_array()[i] })
        })
        .collect();
    Trajectory6DoF { rate_hz: params.rate_hz, frames }
}

/// Sensors spinning in place: every sensor keeps its position and follows
/// its own smooth random rotation after the warm-up. No linear
/// acceleration, so gravity is observed exactly.
pub fn generate_spin(seed: u64, params: &MotionParams) -> Trajectory6DoF {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = params.intensity;
    let start: [Rotation; NUM_IMUS] = std::array::from_fn(|_| {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        crate::rotmath::exp_map(&(v * 0.5))
    });
    let spin: Vec<[Smooth; 3]> = (0..NUM_IMUS)
        .map(|_| std::array::from_fn(|_| Smooth::random(&mut rng, 3, s * 1.5, 0.05, 0.5)))
        .collect();
    let center = params.room.center();
    let dt = 1.0 / params.rate_hz;
    let n = (params.duration_s * params.rate_hz).round().max(3.0) as usize;
    let frames = (0..n)
        .map(|k| {
            let tau = (k as f64 * dt - params.warmup_s).max(0.0);
            let env = if params.ramp_s > 0.0 { smoothstep(tau / params.ramp_s) } else { 1.0 };
            std::array::from_fn(|i| {
                let v = Vec3::from_fn(|a, _| env * (spin[i][a].value(tau) - spin[i][a].value(0.0)));
                let pos = Vec3::new(center.x + 0.3 * i as f64, center.y, params.root_height);
                Pose { rot: crate::rotmath::exp_map(&v) * start[i], pos }
            })
        })
        .collect();
    Trajectory6DoF { rate_hz: params.rate_hz, frames }
}
