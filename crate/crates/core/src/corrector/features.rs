//! Root-relative network input.

use crate::imu::{GlobalReading, NUM_LEAVES};
use crate::rotmath::Vec3;

/// Per-leaf block: 9 rotation entries then 3 acceleration components.
pub const LEAF_BLOCK: usize = 12;
pub const FEATURE_DIM: usize = NUM_LEAVES * LEAF_BLOCK + 3;

pub type Features = [f64; FEATURE_DIM];

/// Expresses the five leaf orientations and accelerations, and the gravity
/// direction `g` (unit), in the root sensor frame. Index 5 of `readings` is
/// the root.
pub fn build_input(readings: &[GlobalReading; 6], g: &Vec3) -> Features {
    let root_t = readings[NUM_LEAVES].rot.transpose();
    let mut out = [0.0; FEATURE_DIM];
    for (i, r) in readings[..NUM_LEAVES].iter().enumerate() {
        let block = &mut out[i * LEAF_BLOCK..(i + 1) * LEAF_BLOCK];
        block[..9].copy_from_slice(&(root_t * r.rot).to_row_major());
        let a = root_t.apply(&r.accel);
        block[9..].copy_from_slice(a.as_slice());
    }
    let g_r = root_t.apply(g);
    out[NUM_LEAVES * LEAF_BLOCK..].copy_from_slice(g_r.as_slice());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{exp_map, rot_about_axis, Rotation};
    use proptest::prelude::*;

    fn reading(rot: Rotation, accel: Vec3) -> GlobalReading {
        GlobalReading { rot, accel, gyro: Vec3::new(0.1, -0.2, 0.3) }
    }

    #[test]
    fn identical_imus_give_identity_blocks() {
        let r = exp_map(&Vec3::new(0.3, -0.7, 1.1));
        let readings = [reading(r, Vec3::zeros()); 6];
        let f = build_input(&readings, &Vec3::new(0.0, 0.0, -1.0));
        let eye = Rotation::identity().to_row_major();
        for i in 0..NUM_LEAVES {
            for j in 0..9 {
                assert!((f[i * LEAF_BLOCK + j] - eye[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gravity_in_identity_root() {
        let readings = [reading(Rotation::identity(), Vec3::zeros()); 6];
        let f = build_input(&readings, &Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(&f[60..], &[0.0, 0.0, -1.0]);
    }

    #[test]
    fn blocks_hold_relative_rotation_and_acceleration() {
        let root = exp_map(&Vec3::new(0.1, 0.2, 0.3));
        let leaf = exp_map(&Vec3::new(-0.5, 0.4, 2.0));
        let a = Vec3::new(1.0, -2.0, 0.5);
        let mut readings = [reading(root, Vec3::zeros()); 6];
        readings[2] = reading(leaf, a);
        let f = build_input(&readings, &Vec3::new(0.0, 0.0, -1.0));
        // oracle: explicit matrix products
        let rel = root.matrix().transpose() * leaf.matrix();
        let a_rel = root.matrix().transpose() * a;
        for r in 0..3 {
            for c in 0..3 {
                assert!((f[2 * LEAF_BLOCK + r * 3 + c] - rel[(r, c)]).abs() < 1e-12);
            }
            assert!((f[2 * LEAF_BLOCK + 9 + r] - a_rel[r]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn heading_invariant(
            seeds in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 6),
            theta in -3.1f64..3.1,
        ) {
            let g = Vec3::new(0.0, 0.0, -1.0);
            let readings: [GlobalReading; 6] = std::array::from_fn(|i| {
                let (x, y, z) = seeds[i];
                reading(exp_map(&(Vec3::new(x, y, z) * 0.5)), Vec3::new(x, y, z))
            });
            let turn = rot_about_axis(&g, theta).unwrap();
            let turned = readings.map(|r| GlobalReading { rot: turn * r.rot, accel: turn * r.accel, gyro: turn * r.gyro });
            let a = build_input(&readings, &g);
            let b = build_input(&turned, &g);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            // rotation blocks orthonormal, gravity block unit
            for i in 0..NUM_LEAVES {
                let mut m = [0.0; 9];
                m.copy_from_slice(&a[i * LEAF_BLOCK..i * LEAF_BLOCK + 9]);
                let r = nalgebra::Matrix3::from_row_slice(&m);
                prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-6);
            }
            prop_assert!((Vec3::new(a[60], a[61], a[62]).norm() - 1.0).abs() < 1e-6);
        }
    }
}
