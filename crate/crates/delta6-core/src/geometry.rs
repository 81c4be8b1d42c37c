//! Frames, rotations, Euler conventions, and delta-stage kinematics.
//!
//! The delta stage carries three proximal links at branch angles
//! `phi = (0, 120, 240)` degrees around the base z-axis; each proximal link
//! connects through a parallelogram linkage of length `l_b` to the moving
//! platform. Point `P` is the platform center; the sensing frame `{E}` sits
//! a further `c` above it along z.

use core::f64::consts::PI;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::fmath::{acos, asin, atan2, cos, hypot, sin, sqrt};
use crate::linalg::{Mat3, Vec3};

/// Coordinate frames of the device and its surroundings.
///
/// `Global` is the world, `Flange` the robot-arm mounting flange `{M}`,
/// `Base` the delta-stage base `{B}`, `SensorNeutral` the undeflected wrench
/// frame `{E0}`, `Sensor` the deflected wrench frame `{E}`, `Tool` the frame
/// of an externally mounted reference sensor `{T}`, and `Tcp` the tool
/// center point used by the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Global,
    Flange,
    Base,
    SensorNeutral,
    Sensor,
    Tool,
    Tcp,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Frame::Global => "G",
            Frame::Flange => "M",
            Frame::Base => "B",
            Frame::SensorNeutral => "E0",
            Frame::Sensor => "E",
            Frame::Tool => "T",
            Frame::Tcp => "TCP",
        };
        f.write_str(s)
    }
}

/// Errors from kinematic operations.
#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    /// No real solution: the requested pose or joint set cannot be assembled.
    #[error("configuration unreachable")]
    Unreachable,
    /// The two kinematic roots coincide; the configuration is singular.
    #[error("kinematic singularity")]
    Singular,
    /// A joint deflection exceeds the spring range.
    #[error("joint {joint} deflection {value} rad exceeds range {limit} rad")]
    OutOfRange { joint: usize, value: f64, limit: f64 },
    /// Euler extraction too close to gimbal lock.
    #[error("gimbal lock in Euler extraction")]
    GimbalLock,
    /// Transform frames do not chain.
    #[error("frame mismatch: expected {expected}, got {actual}")]
    FrameMismatch { expected: Frame, actual: Frame },
    /// Design parameters violate an invariant.
    #[error("invalid design parameter: {0}")]
    InvalidParams(&'static str),
}

/// Residual tolerance for kinematic constraints, in meters.
pub const KINEMATIC_TOL: f64 = 1e-9;
/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-12;
/// Gimbal-lock guard on `|sin|` of the middle Euler angle.
pub const GIMBAL_TOL: f64 = 1e-9;

/// The six-tuple defining one Delta6 variant, plus discretization constants.
///
/// All lengths in meters, angles in radians, stiffness in N·m/rad.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    /// Base radius: distance from the base center to each proximal joint axis.
    pub a: f64,
    /// Platform radius: distance from point `P` to each parallelogram end.
    pub b: f64,
    /// z-offset of the `{E}` origin above point `P`.
    pub c: f64,
    /// Proximal link length.
    pub l_a: f64,
    /// Parallelogram linkage length.
    pub l_b: f64,
    /// Natural proximal-link angle (zero spring torque).
    pub theta_offset: f64,
    /// Spring-unit stiffness.
    pub k: f64,
    /// Branch angles of the three proximal joints around the base z-axis.
    pub phi: [f64; 3],
    /// Smallest resolvable encoder angle.
    pub encoder_quantum: f64,
    /// Symmetric deflection limit per joint.
    pub joint_range: f64,
}

impl DesignParams {
    /// The prototype design: `a` 72 mm, `b` 21.24 mm, `c` 30 mm, `l_a` 40 mm,
    /// `l_b` 120 mm, 30 degree offset, 0.639 N·m/rad springs, 14-bit encoders.
    pub fn baseline() -> Self {
        DesignParams {
            a: 0.072,
            b: 0.02124,
            c: 0.030,
            l_a: 0.040,
            l_b: 0.120,
            theta_offset: PI / 6.0,
            k: 0.639,
            phi: [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0],
            encoder_quantum: 2.0 * PI / 16384.0,
            joint_range: PI / 6.0,
        }
    }

    /// Same geometry with every length scaled by `s`.
    pub fn scaled_geometry(mut self, s: f64) -> Self {
        self.a *= s;
        self.b *= s;
        self.c *= s;
        self.l_a *= s;
        self.l_b *= s;
        self
    }

    /// Same geometry with spring stiffness scaled by `s`.
    pub fn scaled_stiffness(mut self, s: f64) -> Self {
        self.k *= s;
        self
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let pos = [
            (self.a, "a must be positive"),
            (self.b, "b must be positive"),
            (self.c, "c must be positive"),
            (self.l_a, "l_a must be positive"),
            (self.l_b, "l_b must be positive"),
            (self.k, "k must be positive"),
            (self.encoder_quantum, "encoder_quantum must be positive"),
            (self.joint_range, "joint_range must be positive"),
        ];
        for (v, msg) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(KinematicsError::InvalidParams(msg));
            }
        }
        if self.l_b <= self.l_a {
            return Err(KinematicsError::InvalidParams("l_b must exceed l_a"));
        }
        Ok(())
    }
}

/// Six encoder deflections, indices 1-6 mapped to `theta_e[0..6]`.
///
/// Joints 1-3 are the delta-stage proximal joints (absolute angle
/// `theta_e + theta_offset`); joints 4-6 are the 3-DOF unit's rotations
/// about x, y, z of `{E0}` (absolute angle equals the deflection).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState(pub [f64; 6]);

impl JointState {
    pub const ZERO: JointState = JointState([0.0; 6]);

    pub fn new(theta_e: [f64; 6]) -> Self {
        JointState(theta_e)
    }

    /// Rejects deflections outside the spring range.
    pub fn validate(&self, params: &DesignParams) -> Result<(), KinematicsError> {
        for (i, &v) in self.0.iter().enumerate() {
            if !(v.is_finite() && crate::fmath::abs(v) <= params.joint_range + 1e-12) {
                return Err(KinematicsError::OutOfRange {
                    joint: i + 1,
                    value: v,
                    limit: params.joint_range,
                });
            }
        }
        Ok(())
    }

    /// Absolute proximal angles of the delta stage.
    pub fn theta_123(&self, params: &DesignParams) -> [f64; 3] {
        [
            self.0[0] + params.theta_offset,
            self.0[1] + params.theta_offset,
            self.0[2] + params.theta_offset,
        ]
    }
}

/// Rotation about the z-axis.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = (sin(angle), cos(angle));
    Mat3::from_rows([c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0])
}

/// Rotation about the x-axis.
pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = (sin(angle), cos(angle));
    Mat3::from_rows([1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c])
}

/// Rotation about the y-axis.
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = (sin(angle), cos(angle));
    Mat3::from_rows([c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c])
}

/// Intrinsic ZXY Euler angles to a rotation: `R = Rz(z) · Rx(x) · Ry(y)`.
///
/// This is the convention of the 3-DOF spring unit, with the angle triple
/// ordered `(theta_e6, theta_e4, theta_e5)`.
pub fn euler_zxy_to_rot(z: f64, x: f64, y: f64) -> Mat3 {
    rot_z(z) * rot_x(x) * rot_y(y)
}

/// Recovers `(z, x, y)` from an intrinsic ZXY rotation.
pub fn rot_to_euler_zxy(r: &Mat3) -> Result<(f64, f64, f64), KinematicsError> {
    let sx = r.0[2][1];
    if crate::fmath::abs(sx) > 1.0 - GIMBAL_TOL {
        return Err(KinematicsError::GimbalLock);
    }
    let x = asin(sx);
    let z = atan2(-r.0[0][1], r.0[1][1]);
    let y = atan2(-r.0[2][0], r.0[2][2]);
    Ok((z, x, y))
}

/// Intrinsic XYZ Euler angles to a rotation: `R = Rx(x) · Ry(y) · Rz(z)`.
///
/// This is the convention used for stacked 6-vector poses.
pub fn euler_xyz_to_rot(x: f64, y: f64, z: f64) -> Mat3 {
    rot_x(x) * rot_y(y) * rot_z(z)
}

/// Recovers `(x, y, z)` from an intrinsic XYZ rotation.
pub fn rot_to_euler_xyz(r: &Mat3) -> Result<(f64, f64, f64), KinematicsError> {
    let sy = r.0[0][2];
    if crate::fmath::abs(sy) > 1.0 - GIMBAL_TOL {
        return Err(KinematicsError::GimbalLock);
    }
    let y = asin(sy);
    let z = atan2(-r.0[0][1], r.0[0][0]);
    let x = atan2(-r.0[1][2], r.0[2][2]);
    Ok((x, y, z))
}

/// A rigid transform with frame bookkeeping: maps points expressed in
/// `from` to points expressed in `to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub from: Frame,
    pub to: Frame,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3, from: Frame, to: Frame) -> Self {
        RigidTransform { rotation, translation, from, to }
    }

    pub fn identity(from: Frame, to: Frame) -> Self {
        Self::new(Mat3::IDENTITY, Vec3::ZERO, from, to)
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    /// Composes `self: A->B` with `next: B->C` into `A->C`.
    pub fn then(&self, next: &RigidTransform) -> Result<RigidTransform, KinematicsError> {
        if next.from != self.to {
            return Err(KinematicsError::FrameMismatch { expected: self.to, actual: next.from });
        }
        Ok(RigidTransform {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
            from: self.from,
            to: next.to,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.is_rotation(ROTATION_TOL) && self.translation.is_finite()
    }
}

/// Platform position plus 3-DOF unit orientation, the full kinematic state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    /// Point `P` in `{B}`.
    pub p: Vec3,
    /// `(theta_e6, theta_e4, theta_e5)`: the intrinsic ZXY angles from
    /// `{E0}` to `{E}`.
    pub euler_zxy: (f64, f64, f64),
}

impl KinematicState {
    pub fn from_joints(theta_e: &JointState, params: &DesignParams) -> Result<Self, KinematicsError> {
        let p = fk_delta(theta_e.theta_123(params), params)?;
        Ok(KinematicState { p, euler_zxy: (theta_e.0[5], theta_e.0[3], theta_e.0[4]) })
    }
}

/// Center of the sphere on which point `P` must lie for branch `i`:
/// `P - center` is the parallelogram midline, of length `l_b`.
fn branch_sphere_center(i: usize, theta_i: f64, params: &DesignParams) -> Vec3 {
    let r = params.l_a * cos(theta_i) - (params.b - params.a);
    Vec3::new(
        r * cos(params.phi[i]),
        r * sin(params.phi[i]),
        params.l_a * sin(theta_i),
    )
}

/// Forward kinematics of the delta stage: absolute proximal angles to the
/// platform point `P` in `{B}`.
///
/// Closed-form three-sphere intersection. Of the two intersection points the
/// tool-side root is returned: with the sphere-plane normal oriented toward
/// +z, the physical platform lies on the positive side throughout the
/// workspace (fixed against an independent numeric solve of the neutral
/// pose, see the tests).
pub fn fk_delta(theta_123: [f64; 3], params: &DesignParams) -> Result<Vec3, KinematicsError> {
    let c1 = branch_sphere_center(0, theta_123[0], params);
    let c2 = branch_sphere_center(1, theta_123[1], params);
    let c3 = branch_sphere_center(2, theta_123[2], params);

    // Trilateration basis in the plane of the three centers.
    let d_vec = c2 - c1;
    let d = d_vec.norm();
    if d < KINEMATIC_TOL {
        return Err(KinematicsError::Singular);
    }
    let ex = d_vec / d;
    let t = c3 - c1;
    let i = ex.dot(t);
    let ey_raw = t - ex * i;
    let j = ey_raw.norm();
    if j < KINEMATIC_TOL {
        return Err(KinematicsError::Singular);
    }
    let ey = ey_raw / j;
    let mut ez = ex.cross(ey);
    if ez.z < 0.0 {
        ez = -ez;
    }

    // Equal radii: the radical plane midpoints simplify.
    let x = d / 2.0;
    let y = (i * i + j * j - 2.0 * i * x) / (2.0 * j);
    let z_sq = params.l_b * params.l_b - x * x - y * y;
    if z_sq < 0.0 {
        return Err(KinematicsError::Unreachable);
    }
    let z = sqrt(z_sq);
    if z < KINEMATIC_TOL {
        return Err(KinematicsError::Singular);
    }
    Ok(c1 + ex * x + ey * y + ez * z)
}

/// Inverse kinematics of the delta stage: platform point to absolute
/// proximal angles, one closed-form root per branch.
///
/// The elbow root is fixed to match `fk_delta` (the `atan2 - acos` branch,
/// pinned by the neutral-pose round trip).
pub fn ik_delta(p: Vec3, params: &DesignParams) -> Result<[f64; 3], KinematicsError> {
    let mut theta = [0.0; 3];
    for i in 0..3 {
        // Rotate P into the branch frame {B_i}.
        let q = rot_z(-params.phi[i]) * p;
        let u = q.x + (params.b - params.a);
        let e = (u * u + q.y * q.y + q.z * q.z + params.l_a * params.l_a
            - params.l_b * params.l_b)
            / (2.0 * params.l_a);
        let r = hypot(u, q.z);
        if r < KINEMATIC_TOL {
            return Err(KinematicsError::Singular);
        }
        let ratio = e / r;
        if ratio > 1.0 + 1e-12 || ratio < -1.0 - 1e-12 {
            return Err(KinematicsError::Unreachable);
        }
        theta[i] = atan2(q.z, u) - acos(ratio.clamp(-1.0, 1.0));
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from an independent numeric root-finder on the three sphere
    // equations at the neutral pose of the baseline design.
    const P_NEUTRAL_Z: f64 = 0.104_301_046_495_948_97;

    fn baseline() -> DesignParams {
        DesignParams::baseline()
    }

    #[test]
    fn rot_z_identity_and_half_turn() {
        assert_eq!(rot_z(0.0), Mat3::IDENTITY);
        let r = rot_z(PI);
        for (i, expected) in [-1.0, -1.0, 1.0].into_iter().enumerate() {
            assert!((r.0[i][i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rot_z_120_on_x_axis() {
        // Hand trigonometry: Rz(120 deg) * x_hat = (-1/2, sqrt(3)/2, 0).
        let v = rot_z(2.0 * PI / 3.0) * Vec3::new(1.0, 0.0, 0.0);
        assert!((v.x + 0.5).abs() < 1e-15);
        assert!((v.y - 3.0_f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(v.z.abs() < 1e-15);
    }

    #[test]
    fn euler_zxy_reductions() {
        assert_eq!(euler_zxy_to_rot(0.0, 0.0, 0.0), Mat3::IDENTITY);
        let single = euler_zxy_to_rot(PI / 6.0, 0.0, 0.0);
        let direct = rot_z(PI / 6.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((single.0[i][j] - direct.0[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn euler_zxy_gimbal_guard() {
        let r = euler_zxy_to_rot(0.3, PI / 2.0, -0.2);
        assert_eq!(rot_to_euler_zxy(&r), Err(KinematicsError::GimbalLock));
    }

    #[test]
    fn fk_neutral_matches_independent_root_finder() {
        let p = baseline();
        let th = p.theta_offset;
        let pos = fk_delta([th, th, th], &p).unwrap();
        assert!(pos.x.abs() < 1e-12);
        assert!(pos.y.abs() < 1e-12);
        assert!((pos.z - P_NEUTRAL_Z).abs() < 1e-12, "z = {}", pos.z);
    }

    #[test]
    fn fk_residuals_satisfy_linkage_length() {
        let p = baseline();
        let th = [0.42, 0.61, 0.55];
        let pos = fk_delta(th, &p).unwrap();
        for i in 0..3 {
            let c = branch_sphere_center(i, th[i], &p);
            assert!(((pos - c).norm() - p.l_b).abs() < KINEMATIC_TOL);
        }
    }

    #[test]
    fn fk_cyclic_branch_permutation_rotates_output() {
        let p = baseline();
        let th = [0.45, 0.58, 0.50];
        let pos = fk_delta(th, &p).unwrap();
        let pos_shifted = fk_delta([th[2], th[0], th[1]], &p).unwrap();
        let rotated = rot_z(2.0 * PI / 3.0) * pos;
        assert!((pos_shifted - rotated).norm() < 1e-9);
    }

    #[test]
    fn fk_unreachable_short_linkage() {
        // The baseline geometry assembles over the whole joint torus; shrink
        // the parallelogram linkage until the three spheres cannot meet.
        let mut p = baseline();
        p.l_b = 0.06;
        assert!(p.validate().is_ok());
        let th = p.theta_offset;
        assert_eq!(
            fk_delta([th, th, th], &p),
            Err(KinematicsError::Unreachable)
        );
    }

    #[test]
    fn ik_neutral_recovers_offset() {
        let p = baseline();
        let th = ik_delta(Vec3::new(0.0, 0.0, P_NEUTRAL_Z), &p).unwrap();
        for v in th {
            assert!((v - p.theta_offset).abs() < 1e-12);
        }
    }

    #[test]
    fn ik_on_axis_gives_equal_angles() {
        let p = baseline();
        let th = ik_delta(Vec3::new(0.0, 0.0, 0.09), &p).unwrap();
        assert!((th[0] - th[1]).abs() < 1e-12);
        assert!((th[1] - th[2]).abs() < 1e-12);
    }

    #[test]
    fn ik_unreachable_outside_workspace() {
        let p = baseline();
        assert!(ik_delta(Vec3::new(0.5, 0.0, 0.1), &p).is_err());
    }

    #[test]
    fn joint_state_range_check() {
        let p = baseline();
        let ok = JointState::new([0.1, -0.2, 0.0, 0.3, -0.3, 0.52]);
        assert!(ok.validate(&p).is_ok());
        let bad = JointState::new([0.6, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            bad.validate(&p),
            Err(KinematicsError::OutOfRange { joint: 1, .. })
        ));
    }

    #[test]
    fn rigid_transform_compose_and_inverse() {
        let t1 = RigidTransform::new(
            rot_z(0.3),
            Vec3::new(0.1, -0.2, 0.05),
            Frame::Base,
            Frame::Flange,
        );
        let t2 = RigidTransform::new(
            rot_x(-0.4),
            Vec3::new(0.0, 0.3, 0.1),
            Frame::Flange,
            Frame::Global,
        );
        let chain = t1.then(&t2).unwrap();
        let p = Vec3::new(0.02, 0.03, -0.04);
        let direct = t2.apply(t1.apply(p));
        assert!((chain.apply(p) - direct).norm() < 1e-15);

        let back = chain.inverse().apply(chain.apply(p));
        assert!((back - p).norm() < 1e-12);
        assert!(chain.is_valid());

        // Mismatched chain is rejected.
        assert!(t2.then(&t1).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = baseline();
        assert!(p.validate().is_ok());
        p.l_b = p.l_a / 2.0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn euler_zxy_round_trip(
            z in -0.5235..0.5235_f64,
            x in -0.5235..0.5235_f64,
            y in -0.5235..0.5235_f64,
        ) {
            let r = euler_zxy_to_rot(z, x, y);
            prop_assert!(r.is_rotation(ROTATION_TOL));
            let (z2, x2, y2) = rot_to_euler_zxy(&r).unwrap();
            prop_assert!((z - z2).abs() < 1e-10);
            prop_assert!((x - x2).abs() < 1e-10);
            prop_assert!((y - y2).abs() < 1e-10);
        }

        #[test]
        fn euler_xyz_round_trip(
            x in -0.7_f64..0.7,
            y in -0.7_f64..0.7,
            z in -0.7_f64..0.7,
        ) {
            let r = euler_xyz_to_rot(x, y, z);
            prop_assert!(r.is_rotation(ROTATION_TOL));
            let (x2, y2, z2) = rot_to_euler_xyz(&r).unwrap();
            prop_assert!((x - x2).abs() < 1e-10);
            prop_assert!((y - y2).abs() < 1e-10);
            prop_assert!((z - z2).abs() < 1e-10);
        }

        #[test]
        fn fk_ik_round_trip(
            e1 in -0.4712..0.4712_f64,
            e2 in -0.4712..0.4712_f64,
            e3 in -0.4712..0.4712_f64,
        ) {
            // 0.9 * joint_range box, as used by the trajectory generator.
            let p = baseline();
            let th = [
                e1 + p.theta_offset,
                e2 + p.theta_offset,
                e3 + p.theta_offset,
            ];
            let pos = fk_delta(th, &p).unwrap();
            let rec = ik_delta(pos, &p).unwrap();
            for i in 0..3 {
                prop_assert!((rec[i] - th[i]).abs() < 1e-9);
            }
            let pos2 = fk_delta(rec, &p).unwrap();
            prop_assert!((pos2 - pos).norm() < 1e-9);
        }
    }
}
