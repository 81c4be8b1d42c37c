//! Quasi-static analytical wrench estimation from encoder deflections,
//! spring calibration, and wrench frame transforms.
//!
//! The estimation chain per branch: forward kinematics locates the platform,
//! the parallelogram midline direction follows, the spring torque
//! `tau = k * theta_e` fixes the force magnitude along that line, and the
//! three branch forces plus the 3-DOF unit torques stack into the wrench,
//! finally resolved in the deflected sensor frame `{E}`.

use serde::{Deserialize, Serialize};

use crate::fmath::{abs, cos, sin};
use crate::geometry::{
    euler_zxy_to_rot, fk_delta, rot_z, DesignParams, Frame, JointState, KinematicsError,
};
use crate::linalg::{Mat3, Vec3};

/// Absolute tolerance on the force-projection denominator: below this the
/// linkage is parallel to the lever and the branch force is indeterminate.
pub const SINGULAR_BRANCH_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    /// Eq-7-style denominator collapsed for one branch.
    #[error("branch {branch} is force-singular (denominator {denominator:e})")]
    SingularBranch { branch: usize, denominator: f64 },
    /// Wrench arithmetic between different frames.
    #[error("wrench frame mismatch: {left} vs {right}")]
    FrameMismatch { left: Frame, right: Frame },
    /// Calibration input carries no usable excitation.
    #[error("degenerate calibration input: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A force/torque pair tagged with the frame it is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub moment: Vec3,
    pub frame: Frame,
}

impl Wrench {
    pub fn zero(frame: Frame) -> Self {
        Wrench { force: Vec3::ZERO, moment: Vec3::ZERO, frame }
    }

    pub fn new(force: Vec3, moment: Vec3, frame: Frame) -> Self {
        Wrench { force, moment, frame }
    }

    pub fn from_array(w: [f64; 6], frame: Frame) -> Self {
        Wrench {
            force: Vec3::new(w[0], w[1], w[2]),
            moment: Vec3::new(w[3], w[4], w[5]),
            frame,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x, self.force.y, self.force.z,
            self.moment.x, self.moment.y, self.moment.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.force.is_finite() && self.moment.is_finite()
    }

    /// Frame-checked sum; mixing frames is an error, never silent.
    pub fn try_add(&self, other: &Wrench) -> Result<Wrench, EstimatorError> {
        self.check_frame(other)?;
        Ok(Wrench::new(self.force + other.force, self.moment + other.moment, self.frame))
    }

    /// Frame-checked difference.
    pub fn try_sub(&self, other: &Wrench) -> Result<Wrench, EstimatorError> {
        self.check_frame(other)?;
        Ok(Wrench::new(self.force - other.force, self.moment - other.moment, self.frame))
    }

    pub fn scaled(&self, s: f64) -> Wrench {
        Wrench::new(self.force * s, self.moment * s, self.frame)
    }

    fn check_frame(&self, other: &Wrench) -> Result<(), EstimatorError> {
        if self.frame != other.frame {
            return Err(EstimatorError::FrameMismatch { left: self.frame, right: other.frame });
        }
        Ok(())
    }
}

/// Per-branch intermediate quantities of the force computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchState {
    /// Parallelogram midline in `{B}`.
    pub v: Vec3,
    /// Unit midline in `{B}`.
    pub v_hat: Vec3,
    /// Unit midline in the branch frame `{B_i}`.
    pub v_hat_local: Vec3,
    /// Branch force in `{B}`.
    pub force: Vec3,
    /// Signed force magnitude along `v_hat`.
    pub force_mag: f64,
    /// Proximal joint torque.
    pub joint_torque: f64,
    /// Proximal lever vector in `{B_i}`.
    pub lever: Vec3,
}

/// Parallelogram midline of branch `i` (0-based) in `{B}`, given the
/// absolute proximal angle and the platform point.
pub fn branch_vector(i: usize, theta_i: f64, p: Vec3, params: &DesignParams) -> Vec3 {
    let (cph, sph) = (cos(params.phi[i]), sin(params.phi[i]));
    Vec3::new(
        p.x - params.l_a * cos(theta_i) * cph + (params.b - params.a) * cph,
        p.y - params.l_a * cos(theta_i) * sph + (params.b - params.a) * sph,
        p.z - params.l_a * sin(theta_i),
    )
}

/// Analytical wrench estimator for a given design.
///
/// Stiffness is exposed per joint; by default all six joints share the
/// design's `k`, matching the device's identical spring units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrenchEstimator {
    pub params: DesignParams,
    pub k_joint: [f64; 6],
}

impl WrenchEstimator {
    pub fn new(params: DesignParams) -> Result<Self, EstimatorError> {
        params.validate()?;
        Ok(WrenchEstimator { params, k_joint: [params.k; 6] })
    }

    pub fn with_joint_stiffness(params: DesignParams, k_joint: [f64; 6]) -> Result<Self, EstimatorError> {
        params.validate()?;
        if k_joint.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(EstimatorError::Degenerate("per-joint stiffness must be positive"));
        }
        Ok(WrenchEstimator { params, k_joint })
    }

    /// Force state of branch `i` (0-based) for a deflection `theta_e_i`,
    /// platform point `p`, and absolute angle `theta_i`.
    pub fn branch_state(
        &self,
        i: usize,
        theta_e_i: f64,
        theta_i: f64,
        p: Vec3,
    ) -> Result<BranchState, EstimatorError> {
        let params = &self.params;
        let v = branch_vector(i, theta_i, p, params);
        let v_hat = v / params.l_b;
        let v_hat_local = rot_z(-params.phi[i]) * v_hat;

        let tau = self.k_joint[i] * theta_e_i;
        let denominator =
            params.l_a * (v_hat_local.x * sin(theta_i) - v_hat_local.z * cos(theta_i));
        if abs(denominator) < SINGULAR_BRANCH_TOL {
            return Err(EstimatorError::SingularBranch { branch: i + 1, denominator });
        }
        let force_mag = tau / denominator;
        Ok(BranchState {
            v,
            v_hat,
            v_hat_local,
            force: v_hat * force_mag,
            force_mag,
            joint_torque: tau,
            lever: Vec3::new(params.l_a * cos(theta_i), 0.0, params.l_a * sin(theta_i)),
        })
    }

    /// Wrench in the neutral frame `{E0}` plus the platform point, before
    /// the deflection rotation is applied.
    pub fn estimate_in_neutral(
        &self,
        theta_e: &JointState,
    ) -> Result<(Wrench, Vec3), EstimatorError> {
        theta_e.validate(&self.params)?;
        let th = theta_e.theta_123(&self.params);
        let p = fk_delta(th, &self.params)?;

        let mut force_sum = Vec3::ZERO;
        for i in 0..3 {
            force_sum += self.branch_state(i, theta_e.0[i], th[i], p)?.force;
        }
        // Reaction: the estimator reports the external load on the platform.
        let force = -force_sum;
        let moment = Vec3::new(
            self.k_joint[3] * theta_e.0[3],
            self.k_joint[4] * theta_e.0[4],
            self.k_joint[5] * theta_e.0[5],
        );
        Ok((Wrench::new(force, moment, Frame::SensorNeutral), p))
    }

    /// The full estimate: external wrench expressed in the deflected sensor
    /// frame `{E}`.
    pub fn estimate(&self, theta_e: &JointState) -> Result<Wrench, EstimatorError> {
        let (neutral, _) = self.estimate_in_neutral(theta_e)?;
        // Orientation of {E} relative to {E0}: intrinsic ZXY by (e6, e4, e5).
        let r = euler_zxy_to_rot(theta_e.0[5], theta_e.0[3], theta_e.0[4]);
        let rt = r.transpose();
        Ok(Wrench::new(rt * neutral.force, rt * neutral.moment, Frame::Sensor))
    }
}

/// Convenience free function over a default estimator.
pub fn estimate_wrench(theta_e: &JointState, params: &DesignParams) -> Result<Wrench, EstimatorError> {
    WrenchEstimator::new(*params)?.estimate(theta_e)
}

/// One straight-line fit of torque against deflection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringFit {
    /// Fitted stiffness (slope), N·m/rad.
    pub k: f64,
    /// Fitted torque at zero deflection (0 for the through-origin fit).
    pub intercept: f64,
    pub mse: f64,
    pub mae: f64,
    pub sample_count: usize,
}

impl SpringFit {
    /// A fit is physically valid only for positive stiffness.
    pub fn is_valid(&self) -> bool {
        self.k > 0.0 && self.k.is_finite()
    }
}

/// Both calibration variants. The affine intercept diagnoses a miscalibrated
/// neutral angle; `through_origin.k` is the spring constant proper.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringCalibration {
    pub through_origin: SpringFit,
    pub affine: SpringFit,
}

/// Least-squares spring calibration from `(theta_e, tau)` samples.
pub fn calibrate_spring(samples: &[(f64, f64)]) -> Result<SpringCalibration, EstimatorError> {
    if samples.len() < 2 {
        return Err(EstimatorError::Degenerate("need at least 2 samples"));
    }
    if samples.iter().any(|(t, tau)| !t.is_finite() || !tau.is_finite()) {
        return Err(EstimatorError::NonFinite("calibration samples"));
    }
    let n = samples.len() as f64;
    let sum_t: f64 = samples.iter().map(|(t, _)| t).sum();
    let sum_tau: f64 = samples.iter().map(|(_, tau)| tau).sum();
    let sum_tt: f64 = samples.iter().map(|(t, _)| t * t).sum();
    let sum_t_tau: f64 = samples.iter().map(|(t, tau)| t * tau).sum();

    let var_t = sum_tt - sum_t * sum_t / n;
    if sum_tt < 1e-300 || var_t < 1e-15 * sum_tt.max(1.0) {
        return Err(EstimatorError::Degenerate("zero deflection variance"));
    }

    let k_origin = sum_t_tau / sum_tt;
    let k_affine = (sum_t_tau - sum_t * sum_tau / n) / var_t;
    let b_affine = (sum_tau - k_affine * sum_t) / n;

    let residual_stats = |k: f64, b: f64| {
        let mut se = 0.0;
        let mut ae = 0.0;
        for (t, tau) in samples {
            let r = tau - (k * t + b);
            se += r * r;
            ae += abs(r);
        }
        (se / n, ae / n)
    };
    let (mse_o, mae_o) = residual_stats(k_origin, 0.0);
    let (mse_a, mae_a) = residual_stats(k_affine, b_affine);

    Ok(SpringCalibration {
        through_origin: SpringFit {
            k: k_origin,
            intercept: 0.0,
            mse: mse_o,
            mae: mae_o,
            sample_count: samples.len(),
        },
        affine: SpringFit {
            k: k_affine,
            intercept: b_affine,
            mse: mse_a,
            mae: mae_a,
            sample_count: samples.len(),
        },
    })
}

/// Re-expresses a wrench measured in frame A in frame B.
///
/// `rotation` maps A components to B components; `offset` is the position of
/// B's origin expressed in A. The moment is shifted to the new reference
/// point before rotating.
pub fn wrench_transform(
    w: &Wrench,
    rotation: &Mat3,
    offset: Vec3,
    from: Frame,
    to: Frame,
) -> Result<Wrench, EstimatorError> {
    if w.frame != from {
        return Err(EstimatorError::FrameMismatch { left: w.frame, right: from });
    }
    let force = *rotation * w.force;
    let moment = *rotation * (w.moment - offset.cross(w.force));
    Ok(Wrench::new(force, moment, to))
}

/// Exact inverse of [`wrench_transform`] with the same `(rotation, offset)`.
pub fn wrench_transform_inverse(
    w: &Wrench,
    rotation: &Mat3,
    offset: Vec3,
    from: Frame,
    to: Frame,
) -> Result<Wrench, EstimatorError> {
    if w.frame != from {
        return Err(EstimatorError::FrameMismatch { left: w.frame, right: from });
    }
    let rt = rotation.transpose();
    let force = rt * w.force;
    let moment = rt * w.moment + offset.cross(force);
    Ok(Wrench::new(force, moment, to))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ik_delta;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn estimator() -> WrenchEstimator {
        WrenchEstimator::new(DesignParams::baseline()).unwrap()
    }

    // Frozen from the independent reference implementation of the
    // estimation chain (scipy FK + per-equation assembly).
    const V1_NEUTRAL: [f64; 3] = [-0.085_401_016_151_377_55, 0.0, 0.084_301_046_495_948_97];
    const FZ_EQUAL_005: f64 = 1.741_031_309_061_142;
    const W_MIXED: [f64; 6] = [
        -0.165_357_339_800_696_2,
        0.725_679_085_388_453_49,
        0.327_898_556_545_936_53,
        0.006_390_601_153_943_215_9,
        -0.012_777_916_565_045_247,
        0.009_587_376_604_053_994_2,
    ];

    #[test]
    fn branch_vector_neutral_golden() {
        let est = estimator();
        let p = &est.params;
        let th = p.theta_offset;
        let pos = fk_delta([th, th, th], p).unwrap();
        let v1 = branch_vector(0, th, pos, p);
        assert!((v1.x - V1_NEUTRAL[0]).abs() < 1e-12);
        assert!(v1.y.abs() < 1e-12, "branch 1 lies in the xz-plane");
        assert!((v1.z - V1_NEUTRAL[2]).abs() < 1e-12);
        assert!((v1.norm() - p.l_b).abs() < 1e-12);
    }

    #[test]
    fn branch_vector_length_over_consistent_poses() {
        let est = estimator();
        let p = &est.params;
        let theta_e = JointState::new([0.21, -0.33, 0.08, 0.0, 0.0, 0.0]);
        let th = theta_e.theta_123(p);
        let pos = fk_delta(th, p).unwrap();
        for i in 0..3 {
            let v = branch_vector(i, th[i], pos, p);
            assert!((v.norm() - p.l_b).abs() < 1e-9);
            let state = est.branch_state(i, theta_e.0[i], th[i], pos).unwrap();
            assert!((state.v_hat.norm() - 1.0).abs() < 1e-12);
            assert!((state.v_hat_local.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spring_unit_torque_span() {
        // k = 0.6392 over the +-30 degree joint range spans +-0.3346 N·m.
        let tau = 0.6392 * (PI / 6.0);
        assert!((tau - 0.3346).abs() < 5e-4);
    }

    #[test]
    fn zero_deflection_zero_wrench() {
        let w = estimator().estimate(&JointState::ZERO).unwrap();
        assert_eq!(w.to_array(), [0.0; 6]);
        assert_eq!(w.frame, Frame::Sensor);
    }

    #[test]
    fn pure_joint6_twist_gives_z_moment_only() {
        let est = estimator();
        let q = 0.2;
        let w = est.estimate(&JointState::new([0.0, 0.0, 0.0, 0.0, 0.0, q])).unwrap();
        assert!(w.force.norm() < 1e-15);
        assert!(w.moment.x.abs() < 1e-15);
        assert!(w.moment.y.abs() < 1e-15);
        assert!((w.moment.z - est.params.k * q).abs() < 1e-15);
    }

    #[test]
    fn equal_deflection_gives_pure_fz_golden() {
        let w = estimator()
            .estimate(&JointState::new([0.05, 0.05, 0.05, 0.0, 0.0, 0.0]))
            .unwrap();
        assert!(w.force.x.abs() < 1e-12);
        assert!(w.force.y.abs() < 1e-12);
        assert!((w.force.z - FZ_EQUAL_005).abs() < 1e-12, "Fz = {}", w.force.z);
        assert!(w.moment.norm() < 1e-15);
    }

    #[test]
    fn mixed_deflection_golden() {
        let w = estimator()
            .estimate(&JointState::new([0.02, -0.03, 0.04, 0.01, -0.02, 0.015]))
            .unwrap();
        let arr = w.to_array();
        for (got, want) in arr.iter().zip(W_MIXED.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn branch_force_matches_virtual_work_oracle() {
        // Independent oracle: the external force balancing the springs is
        // the gradient of the stored energy with respect to the platform
        // position, evaluated by central differences through the IK.
        let est = estimator();
        let p = est.params;
        let theta_e = JointState::new([0.03, -0.02, 0.05, 0.0, 0.0, 0.0]);
        let th = theta_e.theta_123(&p);
        let pos = fk_delta(th, &p).unwrap();
        let (w, _) = est.estimate_in_neutral(&theta_e).unwrap();

        let energy = |pt: Vec3| -> f64 {
            let ths = ik_delta(pt, &p).unwrap();
            0.5 * p.k
                * ths
                    .iter()
                    .map(|t| (t - p.theta_offset) * (t - p.theta_offset))
                    .sum::<f64>()
        };
        let h = 1e-6;
        let mut grad = Vec3::ZERO;
        for ax in 0..3 {
            let mut hi = pos;
            let mut lo = pos;
            hi[ax] += h;
            lo[ax] -= h;
            grad[ax] = (energy(hi) - energy(lo)) / (2.0 * h);
        }
        // Same sign and within 1% relative on every component.
        for ax in 0..3 {
            let rel = (w.force[ax] - grad[ax]).abs() / grad.norm();
            assert!(rel < 1e-2, "axis {ax}: {} vs {}", w.force[ax], grad[ax]);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let est = estimator();
        let res = est.estimate(&JointState::new([0.0, 0.0, 0.6, 0.0, 0.0, 0.0]));
        assert!(matches!(
            res,
            Err(EstimatorError::Kinematics(KinematicsError::OutOfRange { joint: 3, .. }))
        ));
    }

    #[test]
    fn calibrate_exact_linear() {
        let samples: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = -0.5 + i as f64 / 199.0;
                (t, 0.6392 * t)
            })
            .collect();
        let cal = calibrate_spring(&samples).unwrap();
        assert!((cal.through_origin.k - 0.6392).abs() < 1e-12);
        assert!((cal.affine.k - 0.6392).abs() < 1e-12);
        assert!(cal.affine.intercept.abs() < 1e-12);
        assert!(cal.through_origin.mse < 1e-24);
        assert!(cal.through_origin.is_valid());
    }

    #[test]
    fn calibrate_zero_torque_invalid() {
        let samples: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.01 - 0.25, 0.0)).collect();
        let cal = calibrate_spring(&samples).unwrap();
        assert_eq!(cal.through_origin.k, 0.0);
        assert!(!cal.through_origin.is_valid());
    }

    #[test]
    fn calibrate_degenerate_inputs() {
        assert!(calibrate_spring(&[(0.1, 0.06)]).is_err());
        let constant: Vec<(f64, f64)> = (0..10).map(|_| (0.2, 0.13)).collect();
        assert!(matches!(
            calibrate_spring(&constant),
            Err(EstimatorError::Degenerate(_))
        ));
    }

    #[test]
    fn wrench_transform_identity_and_lever() {
        let w = Wrench::new(Vec3::new(3.0, 0.0, 0.0), Vec3::ZERO, Frame::Tool);
        let out = wrench_transform(&w, &Mat3::IDENTITY, Vec3::ZERO, Frame::Tool, Frame::Sensor)
            .unwrap();
        assert_eq!(out.force, w.force);
        assert_eq!(out.moment, w.moment);

        // Pure x force observed from a point offset by d along z picks up a
        // moment of magnitude d * Fx about y.
        let d = 0.2;
        let shifted =
            wrench_transform(&w, &Mat3::IDENTITY, Vec3::new(0.0, 0.0, d), Frame::Tool, Frame::Sensor)
                .unwrap();
        assert!((shifted.moment.y.abs() - d * 3.0).abs() < 1e-15);
        assert!(shifted.moment.x.abs() < 1e-15);
        assert!(shifted.moment.z.abs() < 1e-15);
    }

    #[test]
    fn wrench_frame_mixing_rejected() {
        let w1 = Wrench::zero(Frame::Sensor);
        let w2 = Wrench::zero(Frame::Tool);
        assert!(w1.try_add(&w2).is_err());
        assert!(wrench_transform(&w1, &Mat3::IDENTITY, Vec3::ZERO, Frame::Tool, Frame::Sensor).is_err());
    }

    #[test]
    fn homogeneity_in_k() {
        // Eqs. 7-11 are linear in the spring constant: scaling k scales the
        // whole wrench exactly.
        let params = DesignParams::baseline();
        let theta_e = JointState::new([0.1, -0.05, 0.2, 0.05, -0.1, 0.3]);
        let w1 = estimate_wrench(&theta_e, &params).unwrap().to_array();
        let w2 = estimate_wrench(&theta_e, &params.scaled_stiffness(1.5))
            .unwrap()
            .to_array();
        for i in 0..6 {
            assert!((w2[i] - 1.5 * w1[i]).abs() < 1e-12 * w1[i].abs().max(1.0));
        }
    }

    #[test]
    fn cyclic_branch_symmetry() {
        let est = estimator();
        let w_a = est
            .estimate(&JointState::new([0.02, 0.05, -0.01, 0.0, 0.0, 0.0]))
            .unwrap();
        let w_b = est
            .estimate(&JointState::new([-0.01, 0.02, 0.05, 0.0, 0.0, 0.0]))
            .unwrap();
        let rotated = rot_z(2.0 * PI / 3.0) * w_a.force;
        assert!((w_b.force - rotated).norm() < 1e-9);
        assert!((w_b.moment.z - w_a.moment.z).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wrench_transform_round_trip(
            fx in -20.0..20.0_f64, fy in -20.0..20.0_f64, fz in -20.0..20.0_f64,
            mx in -1.0..1.0_f64, my in -1.0..1.0_f64, mz in -1.0..1.0_f64,
            rz in -1.0..1.0_f64, rx in -1.0..1.0_f64,
            px in -0.2..0.2_f64, py in -0.2..0.2_f64, pz in -0.2..0.2_f64,
        ) {
            let w = Wrench::new(Vec3::new(fx, fy, fz), Vec3::new(mx, my, mz), Frame::Tool);
            let r = crate::geometry::rot_z(rz) * crate::geometry::rot_x(rx);
            let p = Vec3::new(px, py, pz);
            let fwd = wrench_transform(&w, &r, p, Frame::Tool, Frame::Sensor).unwrap();
            let back = wrench_transform_inverse(&fwd, &r, p, Frame::Sensor, Frame::Tool).unwrap();
            prop_assert!((back.force - w.force).norm() < 1e-12);
            prop_assert!((back.moment - w.moment).norm() < 1e-12);
        }

        #[test]
        fn wrench_linear_in_k_everywhere(
            e1 in -0.5..0.5_f64, e2 in -0.5..0.5_f64, e3 in -0.5..0.5_f64,
            e4 in -0.5..0.5_f64, e5 in -0.5..0.5_f64, e6 in -0.5..0.5_f64,
            s in 0.1..5.0_f64,
        ) {
            let params = DesignParams::baseline();
            let theta = JointState::new([e1, e2, e3, e4, e5, e6]);
            let w1 = estimate_wrench(&theta, &params).unwrap().to_array();
            let w2 = estimate_wrench(&theta, &params.scaled_stiffness(s)).unwrap().to_array();
            for i in 0..6 {
                prop_assert!((w2[i] - s * w1[i]).abs() < 1e-9 * w1[i].abs().max(1e-3));
            }
        }
    }
}
