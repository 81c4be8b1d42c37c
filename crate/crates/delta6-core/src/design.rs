//! Parametric design exploration: workspace, wrench envelope, and
//! resolution for any set of design parameters.
//!
//! Joint space is sampled on a dense grid over the translational joints
//! (1-3) crossed with a coarse grid over the rotational joints (4-6); the
//! wrench map factorizes across that product, so the base-frame branch
//! forces are evaluated once per translational sample and the deflection
//! rotation once per rotational sample.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorError, WrenchEstimator};
use crate::fmath::sqrt;
use crate::geometry::{euler_zxy_to_rot, fk_delta, DesignParams, JointState, KinematicsError};
use crate::linalg::{Mat3, Vec3};

/// Samples per axis for the two joint groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDensity {
    /// Per-axis samples over joints 1-3.
    pub translational: usize,
    /// Per-axis samples over joints 4-6.
    pub rotational: usize,
}

impl Default for GridDensity {
    fn default() -> Self {
        GridDensity { translational: 41, rotational: 7 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    fn update(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn empty() -> Self {
        AxisRange { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Computed specification of one design variant.
///
/// Resolutions are worst-case output increments when a single encoder
/// advances by one quantum (the per-axis figure is primary); the
/// `simultaneous` variants perturb all six joints at once.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecReport {
    /// Axis-aligned bounding box extents of the reachable platform points, m.
    pub workspace_extent: [f64; 3],
    /// Per-axis force range, N.
    pub f_range: [AxisRange; 3],
    /// Per-axis torque range, N·m.
    pub m_range: [AxisRange; 3],
    /// Worst-case per-axis force increment for one encoder quantum, N.
    pub f_res: f64,
    /// Worst-case per-axis torque increment for one encoder quantum, N·m.
    pub m_res: f64,
    /// Increment norm variants of the resolutions.
    pub f_res_norm: f64,
    pub m_res_norm: f64,
    /// Variants with all six joints advanced by one quantum simultaneously.
    pub f_res_simultaneous: f64,
    pub m_res_simultaneous: f64,
    /// Largest force norm over the sampled box, N.
    pub f_max_norm: f64,
    /// Largest torque norm over the sampled box, N·m.
    pub m_max_norm: f64,
    pub grid: GridDensity,
    /// Joint samples skipped because the linkage does not assemble there.
    pub skipped_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum DesignError {
    #[error("grid too coarse: need >= {min} samples per axis, got {got}")]
    GridTooCoarse { min: usize, got: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("no reachable samples for this design")]
    NothingReachable,
    #[error("no variants supplied")]
    NoVariants,
}

impl From<KinematicsError> for DesignError {
    fn from(e: KinematicsError) -> Self {
        DesignError::Estimator(EstimatorError::Kinematics(e))
    }
}

fn linspace(lo: f64, hi: f64, n: usize, out: &mut Vec<f64>) {
    out.clear();
    if n == 1 {
        out.push(0.5 * (lo + hi));
        return;
    }
    let step = (hi - lo) / (n - 1) as f64;
    for i in 0..n {
        out.push(lo + step * i as f64);
    }
}

/// Base-frame reaction force at the platform for one translational sample,
/// or `None` when the configuration does not assemble or is singular.
fn e0_force(est: &WrenchEstimator, theta_e: [f64; 3]) -> Option<(Vec3, Vec3)> {
    let params = &est.params;
    let th = [
        theta_e[0] + params.theta_offset,
        theta_e[1] + params.theta_offset,
        theta_e[2] + params.theta_offset,
    ];
    let p = fk_delta(th, params).ok()?;
    let mut sum = Vec3::ZERO;
    for i in 0..3 {
        sum += est.branch_state(i, theta_e[i], th[i], p).ok()?.force;
    }
    Some((-sum, p))
}

struct RotSample {
    rt: Mat3,
    m0: Vec3,
    /// Per-joint perturbed rotation transposes and torques (joints 4-6).
    rt_pert: [Mat3; 3],
    m0_pert: [Vec3; 3],
    /// All-six simultaneous perturbation.
    rt_sim: Mat3,
    m0_sim: Vec3,
}

/// Computes the specification of one design over the
/// `[-joint_range, joint_range]^6` box.
pub fn compute_spec(params: &DesignParams, grid: GridDensity) -> Result<SpecReport, DesignError> {
    if grid.translational < 11 {
        return Err(DesignError::GridTooCoarse { min: 11, got: grid.translational });
    }
    if grid.rotational < 3 {
        return Err(DesignError::GridTooCoarse { min: 3, got: grid.rotational });
    }
    let est = WrenchEstimator::new(*params)?;
    let q = params.encoder_quantum;
    let jr = params.joint_range;

    let mut axis = Vec::new();
    linspace(-jr, jr, grid.translational, &mut axis);

    // Translational pass: base force, per-joint perturbed forces, and the
    // simultaneous perturbation, for every (e1, e2, e3).
    let nt = grid.translational;
    let total_t = nt * nt * nt;
    let mut f0 = Vec::with_capacity(total_t);
    let mut f0_pert: [Vec<Vec3>; 3] =
        [Vec::with_capacity(total_t), Vec::with_capacity(total_t), Vec::with_capacity(total_t)];
    let mut f0_sim = Vec::with_capacity(total_t);
    let mut valid = Vec::with_capacity(total_t);
    let mut skipped = 0usize;

    let mut ws_min = [f64::INFINITY; 3];
    let mut ws_max = [f64::NEG_INFINITY; 3];

    for &e1 in &axis {
        for &e2 in &axis {
            for &e3 in &axis {
                let base = e0_force(&est, [e1, e2, e3]);
                let mut entry_ok = base.is_some();
                let (f, p) = base.unwrap_or((Vec3::ZERO, Vec3::ZERO));
                let mut pert = [Vec3::ZERO; 3];
                let mut sim = Vec3::ZERO;
                if entry_ok {
                    for (j, slot) in pert.iter_mut().enumerate() {
                        let mut te = [e1, e2, e3];
                        te[j] += q;
                        match e0_force(&est, te) {
                            Some((fp, _)) => *slot = fp,
                            None => entry_ok = false,
                        }
                    }
                    match e0_force(&est, [e1 + q, e2 + q, e3 + q]) {
                        Some((fs, _)) => sim = fs,
                        None => entry_ok = false,
                    }
                }
                if entry_ok {
                    for ax in 0..3 {
                        ws_min[ax] = ws_min[ax].min(p[ax]);
                        ws_max[ax] = ws_max[ax].max(p[ax]);
                    }
                } else {
                    skipped += 1;
                }
                valid.push(entry_ok);
                f0.push(f);
                for j in 0..3 {
                    f0_pert[j].push(pert[j]);
                }
                f0_sim.push(sim);
            }
        }
    }
    if skipped == total_t {
        return Err(DesignError::NothingReachable);
    }

    // Rotational pass: deflection rotations and 3-DOF torques.
    let mut raxis = Vec::new();
    linspace(-jr, jr, grid.rotational, &mut raxis);
    let mut rots = Vec::with_capacity(grid.rotational.pow(3));
    for &e4 in &raxis {
        for &e5 in &raxis {
            for &e6 in &raxis {
                let rt = euler_zxy_to_rot(e6, e4, e5).transpose();
                let m0 = Vec3::new(est.k_joint[3] * e4, est.k_joint[4] * e5, est.k_joint[5] * e6);
                let mut rt_pert = [Mat3::IDENTITY; 3];
                let mut m0_pert = [Vec3::ZERO; 3];
                for j in 0..3 {
                    let mut te = [e4, e5, e6];
                    te[j] += q;
                    rt_pert[j] = euler_zxy_to_rot(te[2], te[0], te[1]).transpose();
                    m0_pert[j] = Vec3::new(
                        est.k_joint[3] * te[0],
                        est.k_joint[4] * te[1],
                        est.k_joint[5] * te[2],
                    );
                }
                let rt_sim = euler_zxy_to_rot(e6 + q, e4 + q, e5 + q).transpose();
                let m0_sim = Vec3::new(
                    est.k_joint[3] * (e4 + q),
                    est.k_joint[4] * (e5 + q),
                    est.k_joint[5] * (e6 + q),
                );
                rots.push(RotSample { rt, m0, rt_pert, m0_pert, rt_sim, m0_sim });
            }
        }
    }

    // Combine the two factors.
    let mut f_range = [AxisRange::empty(); 3];
    let mut m_range = [AxisRange::empty(); 3];
    let mut f_max_norm_sq: f64 = 0.0;
    let mut m_max_norm_sq: f64 = 0.0;
    let mut f_res: f64 = 0.0;
    let mut m_res: f64 = 0.0;
    let mut f_res_norm_sq: f64 = 0.0;
    let mut m_res_norm_sq: f64 = 0.0;
    let mut f_res_sim: f64 = 0.0;
    let mut m_res_sim: f64 = 0.0;

    for rs in &rots {
        let m = rs.rt * rs.m0;
        for ax in 0..3 {
            m_range[ax].update(m[ax]);
        }
        m_max_norm_sq = m_max_norm_sq.max(m.norm_squared());
        for j in 0..3 {
            let dm = rs.rt_pert[j] * rs.m0_pert[j] - m;
            m_res = m_res.max(dm.max_abs());
            m_res_norm_sq = m_res_norm_sq.max(dm.norm_squared());
        }
        let dm_sim = rs.rt_sim * rs.m0_sim - m;
        m_res_sim = m_res_sim.max(dm_sim.max_abs());

        for (idx, &ok) in valid.iter().enumerate() {
            if !ok {
                continue;
            }
            let f = rs.rt * f0[idx];
            for ax in 0..3 {
                f_range[ax].update(f[ax]);
            }
            f_max_norm_sq = f_max_norm_sq.max(f.norm_squared());

            // Joints 1-3: rotation unchanged, force part perturbed.
            for j in 0..3 {
                let df = rs.rt * (f0_pert[j][idx] - f0[idx]);
                f_res = f_res.max(df.max_abs());
                f_res_norm_sq = f_res_norm_sq.max(df.norm_squared());
            }
            // Joints 4-6: force part unchanged, rotation perturbed.
            for rtp in &rs.rt_pert {
                let df = *rtp * f0[idx] - f;
                f_res = f_res.max(df.max_abs());
                f_res_norm_sq = f_res_norm_sq.max(df.norm_squared());
            }
            let df_sim = rs.rt_sim * f0_sim[idx] - f;
            f_res_sim = f_res_sim.max(df_sim.max_abs());
        }
    }

    Ok(SpecReport {
        workspace_extent: [
            ws_max[0] - ws_min[0],
            ws_max[1] - ws_min[1],
            ws_max[2] - ws_min[2],
        ],
        f_range,
        m_range,
        f_res,
        m_res,
        f_res_norm: sqrt(f_res_norm_sq),
        m_res_norm: sqrt(m_res_norm_sq),
        f_res_simultaneous: f_res_sim,
        m_res_simultaneous: m_res_sim,
        f_max_norm: sqrt(f_max_norm_sq),
        m_max_norm: sqrt(m_max_norm_sq),
        grid,
        skipped_samples: skipped,
    })
}

/// Key figures of a variant relative to the first (baseline) variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioToBaseline {
    pub f_max_norm: f64,
    pub m_max_norm: f64,
    pub f_res: f64,
    pub m_res: f64,
    pub workspace: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub params: DesignParams,
    pub report: SpecReport,
    /// `None` for the baseline row.
    pub ratio: Option<RatioToBaseline>,
}

/// Computes one [`SpecReport`] per variant plus ratios against the first.
pub fn compare_variants(
    variants: &[DesignParams],
    grid: GridDensity,
) -> Result<Vec<VariantReport>, DesignError> {
    if variants.is_empty() {
        return Err(DesignError::NoVariants);
    }
    let mut out: Vec<VariantReport> = Vec::with_capacity(variants.len());
    let baseline = compute_spec(&variants[0], grid)?;
    out.push(VariantReport { params: variants[0], report: baseline, ratio: None });
    for params in &variants[1..] {
        let report = compute_spec(params, grid)?;
        let base = &out[0].report;
        let ratio = RatioToBaseline {
            f_max_norm: report.f_max_norm / base.f_max_norm,
            m_max_norm: report.m_max_norm / base.m_max_norm,
            f_res: report.f_res / base.f_res,
            m_res: report.m_res / base.m_res,
            workspace: [
                report.workspace_extent[0] / base.workspace_extent[0],
                report.workspace_extent[1] / base.workspace_extent[1],
                report.workspace_extent[2] / base.workspace_extent[2],
            ],
        };
        out.push(VariantReport { params: *params, report, ratio: Some(ratio) });
    }
    Ok(out)
}

/// The Table-style variant family of a baseline design: half geometry,
/// 1.5x stiffness, and both combined.
pub fn standard_variants(baseline: DesignParams) -> [DesignParams; 4] {
    [
        baseline,
        baseline.scaled_geometry(0.5),
        baseline.scaled_stiffness(1.5),
        baseline.scaled_geometry(0.5).scaled_stiffness(1.5),
    ]
}

/// Spot wrench evaluation at one joint sample.
pub fn wrench_at(
    params: &DesignParams,
    theta_e: &JointState,
) -> Result<crate::estimator::Wrench, EstimatorError> {
    WrenchEstimator::new(*params)?.estimate(theta_e)
}
