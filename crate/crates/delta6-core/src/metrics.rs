//! Evaluation metrics and experiment harnesses: percentile error tables,
//! cross-axis sensitivity, repeatability, drift rates, and (with `std`)
//! latency benchmarks.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath::{abs, sqrt};

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input series")]
    Empty,
    #[error("full-scale values must be positive")]
    BadFullScale,
    #[error("degenerate excitation: variance is zero")]
    DegenerateExcitation,
    #[error("need at least {need} segments, got {got}")]
    TooFewSegments { need: usize, got: usize },
}

/// Percentile levels of the per-axis absolute error, in percent of full
/// scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisPercentiles {
    pub p95: f64,
    pub p99: f64,
    pub p100: f64,
}

/// Per-axis error table normalized by full scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Full-scale denominator per axis (N for 0-2, N·m for 3-5).
    pub full_scale: [f64; 6],
    pub axes: [AxisPercentiles; 6],
    pub sample_count: usize,
}

/// Nearest-rank percentile of an unsorted sample (p in (0, 100]).
pub fn nearest_rank_percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Per-axis absolute errors as percent of full scale with nearest-rank
/// percentiles {95, 99, 100}.
pub fn percentile_errors(
    pred: &[[f64; 6]],
    truth: &[[f64; 6]],
    full_scale: &[f64; 6],
) -> Result<ErrorReport, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    if full_scale.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(MetricsError::BadFullScale);
    }
    let mut axes = [AxisPercentiles::default(); 6];
    let mut scratch = Vec::with_capacity(pred.len());
    for ax in 0..6 {
        scratch.clear();
        for (p, t) in pred.iter().zip(truth.iter()) {
            scratch.push(abs(p[ax] - t[ax]) / full_scale[ax] * 100.0);
        }
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        axes[ax] = AxisPercentiles {
            p95: nearest_rank_percentile(&scratch, 95.0),
            p99: nearest_rank_percentile(&scratch, 99.0),
            p100: nearest_rank_percentile(&scratch, 100.0),
        };
    }
    Ok(ErrorReport { full_scale: *full_scale, axes, sample_count: pred.len() })
}

/// One single-axis excitation block: which axis is driven and the sample
/// spans of its cycles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSegment {
    pub axis: usize,
    /// Half-open sample ranges, one per excitation cycle.
    pub cycles: Vec<(usize, usize)>,
}

/// FS-normalized residual sensitivity: `gains[i][j]` is the least-squares
/// slope of the axis-`i` residual against the axis-`j` excitation, both
/// normalized to full scale. The diagonal holds residual on-axis gain
/// error; `cycle_std` holds the per-cycle repeatability spread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub gains: [[f64; 6]; 6],
    pub cycle_std: [[f64; 6]; 6],
}

/// Builds the 6x6 residual sensitivity matrix from single-axis excitation
/// records.
pub fn cross_axis_matrix(
    pred: &[[f64; 6]],
    truth: &[[f64; 6]],
    schedule: &[ExcitationSegment],
    full_scale: &[f64; 6],
) -> Result<SensitivityMatrix, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if full_scale.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(MetricsError::BadFullScale);
    }
    let mut gains = [[0.0; 6]; 6];
    let mut cycle_std = [[0.0; 6]; 6];
    for seg in schedule {
        let j = seg.axis;
        if seg.cycles.is_empty() {
            return Err(MetricsError::TooFewSegments { need: 1, got: 0 });
        }
        for i in 0..6 {
            let mut slopes = Vec::with_capacity(seg.cycles.len());
            for &(start, end) in &seg.cycles {
                if end > pred.len() || start >= end {
                    return Err(MetricsError::LengthMismatch { left: end, right: pred.len() });
                }
                // Residual (pred - truth) on axis i vs on-axis truth, both
                // FS-normalized; slope through the centered least squares.
                let n = (end - start) as f64;
                let mut sx = 0.0;
                let mut sy = 0.0;
                let mut sxx = 0.0;
                let mut sxy = 0.0;
                for s in start..end {
                    let x = truth[s][j] / full_scale[j];
                    let y = (pred[s][i] - truth[s][i]) / full_scale[i];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    sxy += x * y;
                }
                let var = sxx - sx * sx / n;
                if var < 1e-15 {
                    return Err(MetricsError::DegenerateExcitation);
                }
                slopes.push((sxy - sx * sy / n) / var);
            }
            let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
            let var = slopes.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                / slopes.len() as f64;
            gains[i][j] = mean;
            cycle_std[i][j] = sqrt(var);
        }
    }
    Ok(SensitivityMatrix { gains, cycle_std })
}

/// Mean absolute off-diagonal gain, the headline cross-axis figure.
pub fn mean_off_diagonal(m: &SensitivityMatrix) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                acc += abs(m.gains[i][j]);
                n += 1;
            }
        }
    }
    acc / n as f64
}

/// Least-squares drift fit over segment means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    /// Slope of the segment-mean error against the segment coordinate
    /// (percent FS per hour for the time variant).
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope estimate.
    pub slope_std_err: f64,
    pub segment_means: Vec<f64>,
}

/// Splits an error series (already in percent FS) into fixed-duration
/// segments and fits a line through the segment means against their
/// midpoint times in hours.
pub fn drift_rate(
    errors_pct_fs: &[f64],
    rate_hz: f64,
    segment_s: f64,
) -> Result<DriftFit, MetricsError> {
    let seg_len = (segment_s * rate_hz) as usize;
    if seg_len == 0 || errors_pct_fs.len() / seg_len < 2 {
        return Err(MetricsError::TooFewSegments {
            need: 2,
            got: if seg_len == 0 { 0 } else { errors_pct_fs.len() / seg_len },
        });
    }
    let n_seg = errors_pct_fs.len() / seg_len;
    let mut xs = Vec::with_capacity(n_seg);
    let mut means = Vec::with_capacity(n_seg);
    for s in 0..n_seg {
        let chunk = &errors_pct_fs[s * seg_len..(s + 1) * seg_len];
        means.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
        let mid_sample = s as f64 * seg_len as f64 + seg_len as f64 / 2.0;
        xs.push(mid_sample / rate_hz / 3600.0);
    }
    drift_fit_against(&means, &xs)
}

/// Drift of segment means against an arbitrary per-segment coordinate
/// (e.g. temperature), for the per-degree variant.
pub fn drift_rate_against(
    segment_means: &[f64],
    xs: &[f64],
) -> Result<DriftFit, MetricsError> {
    if segment_means.len() != xs.len() {
        return Err(MetricsError::LengthMismatch { left: segment_means.len(), right: xs.len() });
    }
    drift_fit_against(segment_means, xs)
}

fn drift_fit_against(means: &[f64], xs: &[f64]) -> Result<DriftFit, MetricsError> {
    let n = means.len();
    if n < 2 {
        return Err(MetricsError::TooFewSegments { need: 2, got: n });
    }
    let nf = n as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = means.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(means.iter()).map(|(x, y)| x * y).sum();
    let var = sxx - sx * sx / nf;
    if var < 1e-30 {
        return Err(MetricsError::DegenerateExcitation);
    }
    let slope = (sxy - sx * sy / nf) / var;
    let intercept = (sy - slope * sx) / nf;
    let mut sse = 0.0;
    for (x, y) in xs.iter().zip(means.iter()) {
        let r = y - (slope * x + intercept);
        sse += r * r;
    }
    let slope_std_err = if n > 2 { sqrt(sse / (nf - 2.0) / var) } else { 0.0 };
    Ok(DriftFit { slope, intercept, slope_std_err, segment_means: means.to_vec() })
}

/// Wall-clock latency statistics of a repeatedly invoked estimator.
#[cfg(feature = "std")]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub iterations: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p99_s: f64,
    /// Sustained call rate implied by the mean latency.
    pub rate_hz: f64,
}

/// Times `f` over `iterations` calls after `warmup` discarded calls,
/// using the monotonic clock. Callers rotate inputs inside `f` to defeat
/// caching.
#[cfg(feature = "std")]
pub fn latency_bench<F: FnMut()>(mut f: F, iterations: usize, warmup: usize) -> LatencyReport {
    for _ in 0..warmup {
        f();
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = std::time::Instant::now();
        f();
        samples.push(t0.elapsed().as_secs_f64());
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    LatencyReport {
        iterations,
        mean_s: mean,
        p50_s: nearest_rank_percentile(&samples, 50.0),
        p99_s: nearest_rank_percentile(&samples, 99.0),
        rate_hz: 1.0 / mean,
    }
}
