//! Synthetic Delta6 plant: ground-truth wrench/encoder time series with
//! configurable non-idealities and output dynamics.
//!
//! Causality is inverted for tractability: trajectories are authored in
//! joint space and the ground-truth wrench is defined by the analytical map
//! on the clean angles, so every sample carries a perfectly known label.
//! Non-idealities (hysteresis, backlash, drift, noise, quantization)
//! corrupt only the observation path.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::estimator::{EstimatorError, Wrench, WrenchEstimator};
use crate::fmath::{abs, atan2, cos, hypot, log10, round, sin};
use crate::geometry::{DesignParams, Frame, JointState};

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("invalid plant config: {0}")]
    InvalidConfig(&'static str),
    #[error("excitation at {freq_hz} Hz aliases against sample rate {rate_hz} Hz")]
    Aliased { freq_hz: f64, rate_hz: f64 },
    #[error("dataset too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
}

/// Rate-independent play (backlash) operator: the output tracks the input
/// within a band of half-width `h` and stays put otherwise.
#[derive(Clone, Copy, Debug)]
pub struct PlayOperator {
    halfwidth: f64,
    state: Option<f64>,
}

impl PlayOperator {
    pub fn new(halfwidth: f64) -> Self {
        PlayOperator { halfwidth, state: None }
    }

    pub fn step(&mut self, u: f64) -> f64 {
        let prev = self.state.unwrap_or(0.0);
        let y = prev.clamp(u - self.halfwidth, u + self.halfwidth);
        self.state = Some(y);
        y
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

/// Applies a fresh play operator over a whole series.
pub fn play_series(input: &[f64], halfwidth: f64) -> Vec<f64> {
    let mut op = PlayOperator::new(halfwidth);
    input.iter().map(|&u| op.step(u)).collect()
}

/// Hysteresis loop area of a periodic `(u, y)` record, as the contour
/// integral of `u dy` (trapezoid rule). Nonnegative for a play operator.
pub fn loop_area(u: &[f64], y: &[f64]) -> f64 {
    let n = u.len().min(y.len());
    let mut area = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        area += 0.5 * (u[i] + u[j]) * (y[j] - y[i]);
    }
    area
}

/// Second-order low-pass on one channel, discretized by the bilinear
/// transform with the cutoff prewarped, so gain and phase at the cutoff
/// match the continuous filter exactly.
#[derive(Clone, Copy, Debug)]
pub struct SecondOrderLowPass {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl SecondOrderLowPass {
    pub fn new(cutoff_hz: f64, zeta: f64, rate_hz: f64) -> Result<Self, PlantError> {
        if !(cutoff_hz > 0.0 && cutoff_hz < rate_hz / 2.0) {
            return Err(PlantError::InvalidConfig("cutoff must lie below Nyquist"));
        }
        if !(zeta > 0.0 && zeta <= 2.0) {
            return Err(PlantError::InvalidConfig("zeta must lie in (0, 2]"));
        }
        let w0 = 2.0 * core::f64::consts::PI * cutoff_hz / rate_hz;
        let q = 1.0 / (2.0 * zeta);
        let alpha = sin(w0) / (2.0 * q);
        let c = cos(w0);
        let a0 = 1.0 + alpha;
        Ok(SecondOrderLowPass {
            b0: (1.0 - c) / 2.0 / a0,
            b1: (1.0 - c) / a0,
            b2: (1.0 - c) / 2.0 / a0,
            a1: -2.0 * c / a0,
            a2: (1.0 - alpha) / a0,
            s1: 0.0,
            s2: 0.0,
        })
    }

    /// Direct form II transposed step.
    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }
}

/// Closed-form gain (dB) and phase (deg) of the continuous second-order
/// low-pass at frequency `f`; the analytic reference for sweep tests.
pub fn second_order_response(f_hz: f64, cutoff_hz: f64, zeta: f64) -> (f64, f64) {
    let r = f_hz / cutoff_hz;
    // H(jr) = 1 / (1 - r^2 + 2 j zeta r)
    let re = 1.0 - r * r;
    let im = 2.0 * zeta * r;
    let mag = 1.0 / hypot(re, im);
    let phase = -atan2(im, re);
    (20.0 * log10(mag), phase.to_degrees())
}

/// Output dynamics applied to the wrench channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDynamics {
    pub cutoff_hz: f64,
    pub zeta: f64,
}

impl Default for OutputDynamics {
    fn default() -> Self {
        OutputDynamics { cutoff_hz: 30.0, zeta: 0.707 }
    }
}

/// Random perturbation bounds emulating an uncalibrated build: lengths,
/// per-joint stiffness, and per-joint neutral offsets deviate from nominal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroCalPerturbation {
    /// Uniform relative bound on each length (a, b, c, l_a, l_b).
    pub length_frac: f64,
    /// Uniform relative bound on each joint stiffness.
    pub stiffness_frac: f64,
    /// Uniform absolute bound on each neutral-angle error, rad.
    pub offset_rad: f64,
}

impl Default for ZeroCalPerturbation {
    fn default() -> Self {
        ZeroCalPerturbation { length_frac: 0.02, stiffness_frac: 0.10, offset_rad: 0.01 }
    }
}

/// Full description of the simulated plant.
///
/// `params`/`k_joint`/`offset_error` are the *true* plant values, which may
/// deviate from the nominal design a consumer's estimator assumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub params: DesignParams,
    /// True per-joint spring stiffness.
    pub k_joint: [f64; 6],
    /// True neutral angle minus nominal neutral angle, per joint.
    pub offset_error: [f64; 6],
    /// Play-operator half-width per joint, rad.
    pub hysteresis_halfwidth: [f64; 6],
    /// Total lost-motion width per joint, rad.
    pub backlash_deadband: [f64; 6],
    /// Standard deviation of additive Gaussian encoder noise, rad.
    pub noise_sigma: f64,
    /// Round observations to the encoder quantum.
    pub quantize: bool,
    pub sample_rate: f64,
    pub dynamics: Option<OutputDynamics>,
    /// Slow per-joint sensor-zero drift, rad per hour.
    pub offset_drift_per_hour: [f64; 6],
    pub seed: u64,
}

impl PlantConfig {
    /// A perfectly ideal plant: observations equal the clean angles.
    pub fn ideal(params: DesignParams) -> Self {
        PlantConfig {
            params,
            k_joint: [params.k; 6],
            offset_error: [0.0; 6],
            hysteresis_halfwidth: [0.0; 6],
            backlash_deadband: [0.0; 6],
            noise_sigma: 0.0,
            quantize: false,
            sample_rate: 50.0,
            dynamics: None,
            offset_drift_per_hour: [0.0; 6],
            seed: 0,
        }
    }

    /// The default non-ideal plant: 0.005 rad hysteresis, 1e-4 rad noise,
    /// quantized 14-bit encoders, no backlash on the spring joints.
    pub fn default_nonideal(params: DesignParams, seed: u64) -> Self {
        PlantConfig {
            hysteresis_halfwidth: [0.005; 6],
            noise_sigma: 1e-4,
            quantize: true,
            seed,
            ..PlantConfig::ideal(params)
        }
    }

    /// An uncalibrated twin: true lengths, stiffnesses, and neutral offsets
    /// drawn within `pert` of the nominal design.
    pub fn perturbed(
        nominal: DesignParams,
        pert: ZeroCalPerturbation,
        seed: u64,
    ) -> Result<Self, PlantError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "zero-cal"));
        let mut draw = |bound: f64| -> f64 {
            if bound > 0.0 {
                rng.random_range(-bound..bound)
            } else {
                0.0
            }
        };
        let mut params = nominal;
        params.a *= 1.0 + draw(pert.length_frac);
        params.b *= 1.0 + draw(pert.length_frac);
        params.c *= 1.0 + draw(pert.length_frac);
        params.l_a *= 1.0 + draw(pert.length_frac);
        params.l_b *= 1.0 + draw(pert.length_frac);
        params
            .validate()
            .map_err(|_| PlantError::InvalidConfig("perturbation broke the geometry"))?;
        let mut k_joint = [0.0; 6];
        for k in &mut k_joint {
            *k = nominal.k * (1.0 + draw(pert.stiffness_frac));
        }
        let mut offset_error = [0.0; 6];
        for o in &mut offset_error {
            *o = draw(pert.offset_rad);
        }
        let mut cfg = PlantConfig::default_nonideal(params, seed);
        cfg.k_joint = k_joint;
        cfg.offset_error = offset_error;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.sample_rate > 0.0) {
            return Err(PlantError::InvalidConfig("sample_rate must be positive"));
        }
        let nonneg = self
            .hysteresis_halfwidth
            .iter()
            .chain(self.backlash_deadband.iter())
            .all(|v| *v >= 0.0 && v.is_finite());
        if !nonneg || !(self.noise_sigma >= 0.0) {
            return Err(PlantError::InvalidConfig("non-ideality magnitudes must be >= 0"));
        }
        if let Some(dynamics) = &self.dynamics {
            if !(dynamics.zeta > 0.0 && dynamics.zeta <= 2.0) {
                return Err(PlantError::InvalidConfig("zeta must lie in (0, 2]"));
            }
            if !(dynamics.cutoff_hz > 0.0 && dynamics.cutoff_hz < self.sample_rate / 2.0) {
                return Err(PlantError::InvalidConfig("cutoff must lie below Nyquist"));
            }
        }
        self.params
            .validate()
            .map_err(|_| PlantError::InvalidConfig("design params invalid"))?;
        Ok(())
    }
}

/// One logged sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    /// Timestamp, s.
    pub t: f64,
    /// Observed encoder deflections, rad.
    pub theta_e: [f64; 6],
    /// Ground-truth wrench in `{E}` (force N, torque N·m).
    pub wrench: [f64; 6],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Filled by the I/O layer with a content hash of the resolved config.
    pub config_digest: Option<String>,
}

/// Timestamped `(theta_e, wrench)` rows at a fixed rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub rate: f64,
    pub frame: Frame,
    pub rows: Vec<DataRow>,
    pub provenance: Provenance,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks the fixed-step timestamp invariant.
    pub fn validate(&self) -> Result<(), PlantError> {
        let dt = 1.0 / self.rate;
        for pair in self.rows.windows(2) {
            let stride = pair[1].t - pair[0].t;
            if !(stride > 0.0) || abs(stride - dt) > 1e-9 {
                return Err(PlantError::InvalidConfig("non-uniform timestamps"));
            }
        }
        Ok(())
    }
}

/// A clean joint-space excitation: per-joint sum of 8 random-phase
/// sinusoids below 2 Hz, with amplitudes normalized so the worst-case
/// excursion stays within 0.9 of the joint range. Deterministic in `seed`.
pub fn generate_trajectory(
    seed: u64,
    duration: f64,
    rate: f64,
    params: &DesignParams,
) -> Vec<[f64; 6]> {
    const COMPONENTS: usize = 8;
    const F_MAX: f64 = 1.9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut freqs = [[0.0; COMPONENTS]; 6];
    let mut phases = [[0.0; COMPONENTS]; 6];
    let mut amps = [[0.0; COMPONENTS]; 6];
    for j in 0..6 {
        let mut total = 0.0;
        for m in 0..COMPONENTS {
            freqs[j][m] = rng.random_range(0.05..F_MAX);
            phases[j][m] = rng.random_range(0.0..core::f64::consts::TAU);
            amps[j][m] = rng.random_range(0.5..1.0);
            total += amps[j][m];
        }
        // Worst-case amplitude sum pinned to 0.9 * joint_range.
        let scale = 0.9 * params.joint_range / total;
        for m in 0..COMPONENTS {
            amps[j][m] *= scale;
        }
    }
    let n = round(duration * rate) as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let mut sample = [0.0; 6];
        for j in 0..6 {
            let mut v = 0.0;
            for m in 0..COMPONENTS {
                v += amps[j][m] * sin(core::f64::consts::TAU * freqs[j][m] * t + phases[j][m]);
            }
            sample[j] = v;
        }
        out.push(sample);
    }
    out
}

/// Everything `simulate_dataset` produces beyond the dataset proper.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOutput {
    pub dataset: TimeSeriesDataset,
    /// The uncorrupted deflections driving the truth labels.
    pub clean_theta_e: Vec<[f64; 6]>,
    /// Observations clamped at the joint range (flagged, never silent).
    pub clamped_samples: usize,
}

struct ObservationChain {
    hysteresis: [PlayOperator; 6],
    backlash: [PlayOperator; 6],
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl ObservationChain {
    fn new(config: &PlantConfig) -> Result<Self, PlantError> {
        let noise = if config.noise_sigma > 0.0 {
            Some(
                Normal::new(0.0, config.noise_sigma)
                    .map_err(|_| PlantError::InvalidConfig("bad noise sigma"))?,
            )
        } else {
            None
        };
        Ok(ObservationChain {
            hysteresis: core::array::from_fn(|j| PlayOperator::new(config.hysteresis_halfwidth[j])),
            backlash: core::array::from_fn(|j| {
                PlayOperator::new(config.backlash_deadband[j] / 2.0)
            }),
            noise,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "observation")),
        })
    }

    /// Corrupts one clean sample; returns the observation and whether any
    /// channel hit the range clamp.
    fn observe(&mut self, clean: &[f64; 6], t: f64, config: &PlantConfig) -> ([f64; 6], bool) {
        let mut obs = [0.0; 6];
        let mut clamped = false;
        let q = config.params.encoder_quantum;
        let jr = config.params.joint_range;
        for j in 0..6 {
            let mut v = self.hysteresis[j].step(clean[j]);
            v = self.backlash[j].step(v);
            v += config.offset_error[j];
            v += config.offset_drift_per_hour[j] * (t / 3600.0);
            if let Some(n) = &self.noise {
                v += n.sample(&mut self.rng);
            }
            if config.quantize {
                v = round(v / q) * q;
            }
            if abs(v) > jr {
                v = v.clamp(-jr, jr);
                clamped = true;
            }
            obs[j] = v;
        }
        (obs, clamped)
    }
}

/// Simulates `duration` seconds of plant operation.
///
/// Truth labels are the analytical wrench of the clean angles under the
/// *true* plant parameters, passed through the output dynamics when
/// enabled; observations run through hysteresis, backlash, offset errors,
/// drift, noise, quantization, and the range clamp, in that order.
pub fn simulate_dataset(
    config: &PlantConfig,
    duration: f64,
) -> Result<SimulationOutput, PlantError> {
    config.validate()?;
    let est = WrenchEstimator::with_joint_stiffness(config.params, config.k_joint)?;
    let clean = generate_trajectory(
        derive_seed(config.seed, "trajectory"),
        duration,
        config.sample_rate,
        &config.params,
    );
    let mut chain = ObservationChain::new(config)?;
    let mut filters: Option<[SecondOrderLowPass; 6]> = match &config.dynamics {
        Some(d) => {
            let f = SecondOrderLowPass::new(d.cutoff_hz, d.zeta, config.sample_rate)?;
            Some([f; 6])
        }
        None => None,
    };

    let mut rows = Vec::with_capacity(clean.len());
    let mut clamped_samples = 0usize;
    for (i, sample) in clean.iter().enumerate() {
        let t = i as f64 / config.sample_rate;
        let truth = est.estimate(&JointState(*sample))?;
        let mut w = truth.to_array();
        if let Some(filters) = filters.as_mut() {
            for (c, filt) in w.iter_mut().zip(filters.iter_mut()) {
                *c = filt.step(*c);
            }
        }
        let (obs, clamped) = chain.observe(sample, t, config);
        if clamped {
            clamped_samples += 1;
        }
        rows.push(DataRow { t, theta_e: obs, wrench: w });
    }

    Ok(SimulationOutput {
        dataset: TimeSeriesDataset {
            rate: config.sample_rate,
            frame: Frame::Sensor,
            rows,
            provenance: Provenance { seed: config.seed, config_digest: None },
        },
        clean_theta_e: clean,
        clamped_samples,
    })
}

/// One point of a frequency response estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodePoint {
    pub freq_hz: f64,
    pub gain_db: f64,
    pub phase_deg: f64,
}

/// Measures an estimator's frequency response relative to an authored
/// sinusoidal F_z reference.
///
/// Per frequency: the reference passes through the plant output dynamics,
/// the filtered force is realized in joint space (equal deflection on the
/// three translational joints, solved per sample by Newton iteration), the
/// observation chain corrupts the encoders, and the estimator output is
/// least-squares fit at the excitation frequency against the unfiltered
/// reference.
pub fn bode_sweep<F>(
    config: &PlantConfig,
    freqs_hz: &[f64],
    mut estimator: F,
) -> Result<Vec<BodePoint>, PlantError>
where
    F: FnMut(&JointState) -> Result<Wrench, EstimatorError>,
{
    config.validate()?;
    let est_truth = WrenchEstimator::with_joint_stiffness(config.params, config.k_joint)?;
    let rate = config.sample_rate;
    let amplitude_n = 2.0;

    // Scalar map q -> F_z(q, q, q), strictly monotone over the joint range.
    let fz_of = |q: f64| -> Result<f64, PlantError> {
        let w = est_truth.estimate(&JointState([q, q, q, 0.0, 0.0, 0.0]))?;
        Ok(w.force.z)
    };

    let mut out = Vec::with_capacity(freqs_hz.len());
    for &f in freqs_hz {
        if f >= rate / 2.0 {
            return Err(PlantError::Aliased { freq_hz: f, rate_hz: rate });
        }
        if !(f > 0.0) {
            return Err(PlantError::InvalidConfig("frequencies must be positive"));
        }
        let settle = 1.0;
        let measure = (20.0 / f).max(1.0);
        let n = round((settle + measure) * rate) as usize;
        let n_skip = round(settle * rate) as usize;

        let mut filter = match &config.dynamics {
            Some(d) => Some(SecondOrderLowPass::new(d.cutoff_hz, d.zeta, rate)?),
            None => None,
        };
        let mut chain = ObservationChain::new(config)?;

        let mut q = 0.0;
        let mut normal = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for i in 0..n {
            let t = i as f64 / rate;
            let reference = amplitude_n * sin(core::f64::consts::TAU * f * t);
            let target = match filter.as_mut() {
                Some(filt) => filt.step(reference),
                None => reference,
            };
            for _ in 0..4 {
                let fq = fz_of(q)?;
                let h = 1e-6;
                let d = (fz_of(q + h)? - fz_of(q - h)?) / (2.0 * h);
                q -= (fq - target) / d;
            }
            q = q.clamp(-config.params.joint_range, config.params.joint_range);

            let (obs, _) = chain.observe(&[q, q, q, 0.0, 0.0, 0.0], t, config);
            let w = estimator(&JointState(obs))?;
            if i < n_skip {
                continue;
            }
            // Normal equations for w_z ~ a sin + b cos + c.
            let s = sin(core::f64::consts::TAU * f * t);
            let c = cos(core::f64::consts::TAU * f * t);
            let basis = [s, c, 1.0];
            for r in 0..3 {
                for cc in 0..3 {
                    normal[r][cc] += basis[r] * basis[cc];
                }
                rhs[r] += basis[r] * w.force.z;
            }
        }
        let coef =
            solve3(&normal, &rhs).ok_or(PlantError::InvalidConfig("degenerate sinusoid fit"))?;
        let amp = hypot(coef[0], coef[1]);
        let phase = atan2(coef[1], coef[0]);
        out.push(BodePoint {
            freq_hz: f,
            gain_db: 20.0 * log10(amp / amplitude_n),
            phase_deg: phase.to_degrees(),
        });
    }
    Ok(out)
}

/// Interpolated -3 dB crossing of a measured sweep, if any.
pub fn minus_3db_crossing(points: &[BodePoint]) -> Option<f64> {
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (a.gain_db + 3.0) >= 0.0 && (b.gain_db + 3.0) < 0.0 {
            let t = (-3.0 - a.gain_db) / (b.gain_db - a.gain_db);
            return Some(a.freq_hz + t * (b.freq_hz - a.freq_hz));
        }
    }
    None
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(a);
    if abs(det) < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for i in 0..3 {
        let mut m = *a;
        for r in 0..3 {
            m[r][i] = b[r];
        }
        x[i] = det3(&m) / det;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::estimate_wrench;
    use crate::fmath::sqrt;

    fn baseline() -> DesignParams {
        DesignParams::baseline()
    }

    #[test]
    fn play_zero_halfwidth_is_identity() {
        let u = [0.0, 0.5, 1.0, 0.5, 0.0, -0.5, -1.0, -0.5, 0.0, 0.5, 1.0];
        assert_eq!(play_series(&u, 0.0), u.to_vec());
    }

    #[test]
    fn play_triangle_wave_matches_hand_trace() {
        // Hand-traced parallelogram loop, h = 0.2 on a unit triangle wave.
        let u = [0.0, 0.5, 1.0, 0.5, 0.0, -0.5, -1.0, -0.5, 0.0, 0.5, 1.0];
        let want = [0.0, 0.3, 0.8, 0.7, 0.2, -0.3, -0.8, -0.7, -0.2, 0.3, 0.8];
        let got = play_series(&u, 0.2);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn play_rate_independence() {
        // Repeating every sample (a monotone time reparametrization) must
        // repeat the outputs.
        let u = [0.0, 0.4, 0.9, 0.3, -0.6, -0.1, 0.7];
        let slow: Vec<f64> = u.iter().flat_map(|&v| [v, v]).collect();
        let fast = play_series(&u, 0.15);
        let slow_out = play_series(&slow, 0.15);
        for (i, v) in fast.iter().enumerate() {
            assert_eq!(slow_out[2 * i], *v);
            assert_eq!(slow_out[2 * i + 1], *v);
        }
    }

    #[test]
    fn play_band_bound_and_loop_area() {
        let n = 400;
        let h = 0.07;
        let u: Vec<f64> = (0..n)
            .map(|i| 0.5 * sin(core::f64::consts::TAU * i as f64 / 100.0))
            .collect();
        let y = play_series(&u, h);
        for (ui, yi) in u.iter().zip(y.iter()) {
            assert!((ui - yi).abs() <= h + 1e-12);
        }
        // One steady-state cycle (skip the first transient cycle).
        let area = loop_area(&u[100..200], &y[100..200]);
        assert!(area >= -1e-12, "loop area = {area}");
        assert!(area > 1e-4, "loop should enclose finite area");
    }

    #[test]
    fn trajectory_determinism_and_bound() {
        let p = baseline();
        let a = generate_trajectory(42, 20.0, 50.0, &p);
        let b = generate_trajectory(42, 20.0, 50.0, &p);
        assert_eq!(a, b);
        let c = generate_trajectory(43, 20.0, 50.0, &p);
        assert_ne!(a, c);
        let bound = 0.9 * p.joint_range + 1e-12;
        for row in &a {
            for v in row {
                assert!(v.abs() <= bound);
            }
        }
        assert_eq!(a.len(), 1000);
    }

    #[test]
    fn trajectory_spectrum_below_2hz() {
        let p = baseline();
        let rate = 50.0;
        let series = generate_trajectory(7, 60.0, rate, &p);
        let n = series.len();
        // Direct DFT oracle on joint 0; power above 2 Hz under 1%.
        let xs: Vec<f64> = series.iter().map(|r| r[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let mut total = 0.0;
        let mut high = 0.0;
        for k in 1..n / 2 {
            let fk = k as f64 * rate / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in xs.iter().enumerate() {
                let ang = core::f64::consts::TAU * k as f64 * i as f64 / n as f64;
                re += (x - mean) * cos(ang);
                im -= (x - mean) * sin(ang);
            }
            let p_k = re * re + im * im;
            total += p_k;
            if fk > 2.0 {
                high += p_k;
            }
        }
        assert!(high / total < 0.01, "high-band fraction {}", high / total);
    }

    #[test]
    fn ideal_plant_closes_the_loop_exactly() {
        let cfg = PlantConfig::ideal(baseline());
        let out = simulate_dataset(&cfg, 5.0).unwrap();
        assert_eq!(out.clamped_samples, 0);
        for (row, clean) in out.dataset.rows.iter().zip(out.clean_theta_e.iter()) {
            assert_eq!(row.theta_e, *clean);
            let w = estimate_wrench(&JointState(row.theta_e), &cfg.params).unwrap();
            assert_eq!(w.to_array(), row.wrench);
        }
        out.dataset.validate().unwrap();
    }

    #[test]
    fn quantized_plant_snaps_to_grid() {
        let mut cfg = PlantConfig::ideal(baseline());
        cfg.quantize = true;
        let out = simulate_dataset(&cfg, 2.0).unwrap();
        let q = cfg.params.encoder_quantum;
        for row in &out.dataset.rows {
            for v in row.theta_e {
                let ratio = v / q;
                assert!((ratio - round(ratio)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_row_count_matches_rate() {
        let cfg = PlantConfig::ideal(baseline());
        let out = simulate_dataset(&cfg, 10.0).unwrap();
        assert_eq!(out.dataset.len(), 500);
    }

    #[test]
    fn simulation_is_bit_deterministic() {
        let cfg = PlantConfig::default_nonideal(baseline(), 99);
        let a = simulate_dataset(&cfg, 4.0).unwrap();
        let b = simulate_dataset(&cfg, 4.0).unwrap();
        assert_eq!(a.dataset.rows, b.dataset.rows);
    }

    #[test]
    fn noise_monotonically_degrades_estimation() {
        let mut rms = Vec::new();
        for sigma in [0.0, 1e-4, 1e-3] {
            let mut cfg = PlantConfig::ideal(baseline());
            cfg.noise_sigma = sigma;
            cfg.quantize = true;
            cfg.seed = 5;
            let out = simulate_dataset(&cfg, 20.0).unwrap();
            let mut acc = 0.0;
            for row in &out.dataset.rows {
                let w = estimate_wrench(&JointState(row.theta_e), &cfg.params).unwrap();
                let arr = w.to_array();
                for (a, b) in arr.iter().zip(row.wrench.iter()) {
                    acc += (a - b) * (a - b);
                }
            }
            rms.push(sqrt(acc / out.dataset.len() as f64));
        }
        assert!(rms[0] <= rms[1] && rms[1] <= rms[2], "{rms:?}");
    }

    #[test]
    fn hysteretic_sweep_calibration_stays_within_loop_bias() {
        // Sweep joint 6 through its range with hysteresis on; the fitted
        // slope must stay within halfwidth/range of the configured k.
        let p = baseline();
        let h = 0.005;
        let range = 0.9 * p.joint_range;
        let mut play = PlayOperator::new(h);
        let mut samples = Vec::new();
        let n = 2000;
        for i in 0..n {
            let phase = i as f64 / n as f64;
            let clean = range * sin(core::f64::consts::TAU * 3.0 * phase);
            let tau = p.k * clean;
            let observed = play.step(clean);
            samples.push((observed, tau));
        }
        let cal = crate::estimator::calibrate_spring(&samples).unwrap();
        let rel_bound = h / range;
        assert!(
            (cal.through_origin.k - p.k).abs() / p.k < rel_bound,
            "k = {}",
            cal.through_origin.k
        );
    }

    #[test]
    fn zero_cal_perturbation_is_bounded_and_seeded() {
        let nominal = baseline();
        let pert = ZeroCalPerturbation::default();
        let a = PlantConfig::perturbed(nominal, pert, 3).unwrap();
        let b = PlantConfig::perturbed(nominal, pert, 3).unwrap();
        assert_eq!(a, b);
        let c = PlantConfig::perturbed(nominal, pert, 4).unwrap();
        assert_ne!(a, c);
        assert!((a.params.l_a / nominal.l_a - 1.0).abs() <= 0.02);
        for j in 0..6 {
            assert!((a.k_joint[j] / nominal.k - 1.0).abs() <= 0.10);
            assert!(a.offset_error[j].abs() <= 0.01);
        }
    }

    #[test]
    fn analytic_response_at_cutoff() {
        let (gain_db, phase) = second_order_response(30.0, 30.0, 0.707);
        assert!((gain_db + 3.0).abs() < 0.02, "analytic cutoff gain {gain_db}");
        assert!((phase + 90.0).abs() < 0.01);
    }

    #[test]
    fn bode_flat_without_dynamics() {
        let mut cfg = PlantConfig::ideal(baseline());
        cfg.sample_rate = 150.0;
        let est = WrenchEstimator::new(cfg.params).unwrap();
        let pts = bode_sweep(&cfg, &[5.0, 15.0, 30.0], |js| est.estimate(js)).unwrap();
        for p in pts {
            assert!(p.gain_db.abs() < 0.1, "gain {} at {}", p.gain_db, p.freq_hz);
            assert!(p.phase_deg.abs() < 1.0);
        }
    }

    #[test]
    fn bode_recovers_cutoff_and_low_frequency_gain() {
        let mut cfg = PlantConfig::ideal(baseline());
        cfg.sample_rate = 150.0;
        cfg.dynamics = Some(OutputDynamics::default());
        let est = WrenchEstimator::new(cfg.params).unwrap();
        let freqs: Vec<f64> = (0..12).map(|i| 10.0 + 2.0 * i as f64).collect();
        let pts = bode_sweep(&cfg, &freqs, |js| est.estimate(js)).unwrap();
        let crossing = minus_3db_crossing(&pts).expect("sweep must cross -3 dB");
        assert!((crossing - 30.0).abs() <= 2.0, "crossing at {crossing}");
        let at_30 = pts.iter().find(|p| (p.freq_hz - 30.0).abs() < 1e-9).unwrap();
        assert!((at_30.phase_deg + 90.0).abs() <= 5.0, "phase {}", at_30.phase_deg);

        // Low-frequency gain against the closed-form transfer function.
        let p3 = bode_sweep(&cfg, &[3.0], |js| est.estimate(js)).unwrap()[0];
        let (want_db, _) = second_order_response(3.0, 30.0, 0.707);
        assert!((p3.gain_db - want_db).abs() < 0.3);
    }

    #[test]
    fn bode_rejects_aliased_frequency() {
        let cfg = PlantConfig::ideal(baseline());
        let est = WrenchEstimator::new(cfg.params).unwrap();
        let r = bode_sweep(&cfg, &[30.0], |js| est.estimate(js));
        assert!(matches!(r, Err(PlantError::Aliased { .. })));
    }
}
