//! 6-DoF rigid transform, application to points, and its parameter Jacobian.
//!
//! Parameters live in physical units (mm and radians) at every scale, so
//! propagating an estimate between pyramid levels is the identity map.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3x6 matrix of point-coordinate derivatives with respect to the six
/// parameters (tx, ty, tz, rx, ry, rz).
pub type TransformJacobian = SMatrix<f64, 3, 6>;

/// Rigid transform parameters: translation in mm, rotations in radians.
/// Rotation composition order is fixed to R = Rz(rz) * Ry(ry) * Rx(rx).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidParams {
    /// (tx, ty, tz) in mm.
    pub t: [f64; 3],
    /// (rx, ry, rz) in radians.
    pub r: [f64; 3],
}

impl RigidParams {
    pub fn new(t: [f64; 3], r: [f64; 3]) -> Self {
        RigidParams { t, r }
    }

    pub fn from_vec6(v: &[f64; 6]) -> Self {
        RigidParams {
            t: [v[0], v[1], v[2]],
            r: [v[3], v[4], v[5]],
        }
    }

    pub fn to_vec6(&self) -> [f64; 6] {
        [
            self.t[0], self.t[1], self.t[2], self.r[0], self.r[1], self.r[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(self.r.iter()).all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("non-finite parameters {self:?}")))
        }
    }

    /// Rotation matrix Rz * Ry * Rx.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sx, cx) = self.r[0].sin_cos();
        let (sy, cy) = self.r[1].sin_cos();
        let (sz, cz) = self.r[2].sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        rz * ry * rx
    }

    fn rotation_derivatives(&self) -> [Matrix3<f64>; 3] {
        let (sx, cx) = self.r[0].sin_cos();
        let (sy, cy) = self.r[1].sin_cos();
        let (sz, cz) = self.r[2].sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
        let dry = Matrix3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
        let drz = Matrix3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
        [rz * ry * drx, rz * dry * rx, drz * ry * rx]
    }
}

/// T(x) = R * x + t, rotation about the coordinate origin.
pub fn apply(params: &RigidParams, point: [f64; 3]) -> [f64; 3] {
    let p = params.rotation() * Vector3::from(point) + Vector3::from(params.t);
    [p.x, p.y, p.z]
}

/// Closed-form d T(x) / d theta. Columns 1-3 are the identity (translation);
/// rotation columns are dR/dr_k * x.
pub fn jacobian(params: &RigidParams, point: [f64; 3]) -> TransformJacobian {
    let mut j = TransformJacobian::zeros();
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    j[(2, 2)] = 1.0;
    let x = Vector3::from(point);
    for (k, dr) in params.rotation_derivatives().iter().enumerate() {
        let col = dr * x;
        j.set_column(3 + k, &col.fixed_resize::<3, 1>(0.0));
    }
    j
}

/// Cross-scale hand-off. Parameters are physical at every scale, so this is
/// the identity; it exists to mark the hand-off point and check finiteness.
pub fn propagate_to_finer(params: &RigidParams) -> RigidParams {
    debug_assert!(params.is_finite());
    *params
}

/// A rigid transform acting about a fixed center:
/// map(x) = R * (x - center) + center + t.
///
/// Registration rotates about the reference volume's physical center so that
/// rotation and translation stay numerically decoupled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMap {
    pub params: RigidParams,
    pub center: [f64; 3],
}

impl RigidMap {
    pub fn new(params: RigidParams, center: [f64; 3]) -> Self {
        RigidMap { params, center }
    }

    pub fn about_origin(params: RigidParams) -> Self {
        RigidMap {
            params,
            center: [0.0; 3],
        }
    }

    #[inline]
    pub fn map_point(&self, point: [f64; 3]) -> [f64; 3] {
        let centered = [
            point[0] - self.center[0],
            point[1] - self.center[1],
            point[2] - self.center[2],
        ];
        let y = apply(&self.params, centered);
        [
            y[0] + self.center[0],
            y[1] + self.center[1],
            y[2] + self.center[2],
        ]
    }

    /// Parameter Jacobian of map_point at `point` (translation block I,
    /// rotation block dR/dr_k * (x - center)).
    #[inline]
    pub fn jacobian(&self, point: [f64; 3]) -> TransformJacobian {
        jacobian(
            &self.params,
            [
                point[0] - self.center[0],
                point[1] - self.center[1],
                point[2] - self.center[2],
            ],
        )
    }

    /// Inverse map: x = R^T * (y - center - t) + center.
    pub fn inverse_map_point(&self, point: [f64; 3]) -> [f64; 3] {
        let rt = self.params.rotation().transpose();
        let v = Vector3::new(
            point[0] - self.center[0] - self.params.t[0],
            point[1] - self.center[1] - self.params.t[1],
            point[2] - self.center[2] - self.params.t[2],
        );
        let x = rt * v;
        [
            x.x + self.center[0],
            x.y + self.center[1],
            x.z + self.center[2],
        ]
    }

    pub fn with_params(&self, params: RigidParams) -> Self {
        RigidMap {
            params,
            center: self.center,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_unit(seed: u64, i: u64) -> f64 {
        rng::unit_f64(seed, i)
    }

    #[test]
    fn identity_leaves_points_fixed() {
        let p = RigidParams::default();
        assert_eq!(apply(&p, [1.5, -2.0, 3.0]), [1.5, -2.0, 3.0]);
    }

    #[test]
    fn pure_translation() {
        let p = RigidParams::new([1.0, 2.0, 3.0], [0.0; 3]);
        assert_eq!(apply(&p, [0.0, 0.0, 0.0]), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = RigidParams::new([0.0; 3], [0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let q = apply(&p, [1.0, 0.0, 0.0]);
        assert!((q[0]).abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12 && q[2].abs() < 1e-12);
    }

    #[test]
    fn jacobian_translation_block_is_identity() {
        let p = RigidParams::new([4.0, -1.0, 2.0], [0.2, -0.1, 0.3]);
        let j = jacobian(&p, [3.0, 5.0, -7.0]);
        for row in 0..3 {
            for col in 0..3 {
                let expect = if row == col { 1.0 } else { 0.0 };
                assert_eq!(j[(row, col)], expect);
            }
        }
    }

    #[test]
    fn jacobian_rz_column_at_zero() {
        let j = jacobian(&RigidParams::default(), [1.0, 0.0, 0.0]);
        // d/drz of R*x at theta=0, x=e1 is (0, 1, 0).
        assert!((j[(0, 5)]).abs() < 1e-12);
        assert!((j[(1, 5)] - 1.0).abs() < 1e-12);
        assert!((j[(2, 5)]).abs() < 1e-12);
    }

    fn finite_difference_jacobian(p: &RigidParams, x: [f64; 3], h: f64) -> TransformJacobian {
        let mut j = TransformJacobian::zeros();
        let v = p.to_vec6();
        for c in 0..6 {
            let mut hi = v;
            let mut lo = v;
            hi[c] += h;
            lo[c] -= h;
            let fh = apply(&RigidParams::from_vec6(&hi), x);
            let fl = apply(&RigidParams::from_vec6(&lo), x);
            for r in 0..3 {
                j[(r, c)] = (fh[r] - fl[r]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for case in 0..40u64 {
            let s = 1000 + case;
            let p = RigidParams::new(
                [
                    rand_unit(s, 0) * 20.0 - 10.0,
                    rand_unit(s, 1) * 20.0 - 10.0,
                    rand_unit(s, 2) * 20.0 - 10.0,
                ],
                [
                    (rand_unit(s, 3) - 0.5) * 0.6,
                    (rand_unit(s, 4) - 0.5) * 0.6,
                    (rand_unit(s, 5) - 0.5) * 0.6,
                ],
            );
            let x = [
                rand_unit(s, 6) * 100.0 - 50.0,
                rand_unit(s, 7) * 100.0 - 50.0,
                rand_unit(s, 8) * 100.0 - 50.0,
            ];
            let a = jacobian(&p, x);
            let fd = finite_difference_jacobian(&p, x, 1e-6);
            let max_err = (a - fd).abs().max();
            assert!(max_err < 1e-5, "case {case}: max err {max_err}");
        }
    }

    #[test]
    fn propagate_is_identity_round_trip() {
        let p = RigidParams::new([2.0, 0.0, 0.0], [0.1, 0.0, -0.2]);
        let q = propagate_to_finer(&propagate_to_finer(&p));
        assert_eq!(p, q);
    }

    #[test]
    fn centered_map_fixes_its_center() {
        let m = RigidMap::new(
            RigidParams::new([0.0; 3], [0.3, -0.2, 0.5]),
            [10.0, -4.0, 2.0],
        );
        let y = m.map_point([10.0, -4.0, 2.0]);
        for a in 0..3 {
            assert!((y[a] - m.center[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_map_round_trips() {
        let m = RigidMap::new(
            RigidParams::new([3.0, -1.0, 0.5], [0.2, 0.15, -0.4]),
            [1.0, 2.0, 3.0],
        );
        let x = [7.0, -2.5, 4.0];
        let back = m.inverse_map_point(m.map_point(x));
        for a in 0..3 {
            assert!((back[a] - x[a]).abs() < 1e-10);
        }
    }

    proptest::proptest! {
        #[test]
        fn rigidity_preserves_pairwise_distances(
            tx in -20.0..20.0f64, ty in -20.0..20.0f64, tz in -20.0..20.0f64,
            rx in -3.0..3.0f64, ry in -3.0..3.0f64, rz in -3.0..3.0f64,
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, az in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, bz in -50.0..50.0f64,
        ) {
            let p = RigidParams::new([tx, ty, tz], [rx, ry, rz]);
            let a = [ax, ay, az];
            let b = [bx, by, bz];
            let d0 = dist(a, b);
            let d1 = dist(apply(&p, a), apply(&p, b));
            proptest::prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}
