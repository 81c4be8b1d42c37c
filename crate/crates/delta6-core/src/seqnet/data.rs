//! Standardization and sliding-window construction for sequence training.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath::sqrt;
use crate::seqnet::tensor::Tensor;
use crate::seqnet::SeqNetError;

/// Per-channel affine scaling for the 6 inputs and 6 outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean_in: [f64; 6],
    pub std_in: [f64; 6],
    pub mean_out: [f64; 6],
    pub std_out: [f64; 6],
}

impl Standardizer {
    /// Fits channel statistics on `(theta_e, wrench)` rows; callers must
    /// pass the training split only.
    pub fn fit(rows: &[([f64; 6], [f64; 6])]) -> Result<Self, SeqNetError> {
        if rows.len() < 2 {
            return Err(SeqNetError::TooShort { need: 2, got: rows.len() });
        }
        let n = rows.len() as f64;
        let mut mean_in = [0.0; 6];
        let mut mean_out = [0.0; 6];
        for (x, y) in rows {
            for c in 0..6 {
                mean_in[c] += x[c];
                mean_out[c] += y[c];
            }
        }
        for c in 0..6 {
            mean_in[c] /= n;
            mean_out[c] /= n;
        }
        let mut var_in = [0.0; 6];
        let mut var_out = [0.0; 6];
        for (x, y) in rows {
            for c in 0..6 {
                var_in[c] += (x[c] - mean_in[c]) * (x[c] - mean_in[c]);
                var_out[c] += (y[c] - mean_out[c]) * (y[c] - mean_out[c]);
            }
        }
        let mut std_in = [0.0; 6];
        let mut std_out = [0.0; 6];
        for c in 0..6 {
            std_in[c] = sqrt(var_in[c] / n);
            std_out[c] = sqrt(var_out[c] / n);
            if std_in[c] < 1e-12 || std_out[c] < 1e-12 {
                return Err(SeqNetError::DegenerateChannel { channel: c });
            }
        }
        Ok(Standardizer { mean_in, std_in, mean_out, std_out })
    }

    pub fn scale_input(&self, x: &[f64; 6]) -> [f64; 6] {
        core::array::from_fn(|c| (x[c] - self.mean_in[c]) / self.std_in[c])
    }

    pub fn scale_output(&self, y: &[f64; 6]) -> [f64; 6] {
        core::array::from_fn(|c| (y[c] - self.mean_out[c]) / self.std_out[c])
    }

    pub fn unscale_output(&self, y: &[f64; 6]) -> [f64; 6] {
        core::array::from_fn(|c| y[c] * self.std_out[c] + self.mean_out[c])
    }
}

/// Valid window end indices for a contiguous segment of `len` samples.
///
/// A window is the `t_w` samples `(t - t_w, t]`; the target is the wrench
/// one step ahead at `t + 1`. Valid ends run from `t_w` to `len - 2`,
/// giving `len - t_w - 1` usable pairs. Windows never span segment
/// boundaries because each segment calls this separately.
pub fn window_ends(len: usize, t_w: usize) -> Result<Vec<usize>, SeqNetError> {
    if len < t_w + 2 {
        return Err(SeqNetError::TooShort { need: t_w + 2, got: len });
    }
    Ok((t_w..len - 1).collect())
}

/// Gathers a standardized `[batch, t_w, 6]` input tensor and `[batch, 6]`
/// target tensor for the given window ends.
pub fn gather_batch(
    rows: &[([f64; 6], [f64; 6])],
    ends: &[usize],
    t_w: usize,
    std: &Standardizer,
) -> (Tensor, Tensor) {
    let b = ends.len();
    let mut x = Tensor::zeros(&[b, t_w, 6]);
    let mut y = Tensor::zeros(&[b, 6]);
    for (bi, &t) in ends.iter().enumerate() {
        for (w, idx) in (t + 1 - t_w..=t).enumerate() {
            let scaled = std.scale_input(&rows[idx].0);
            x.data[(bi * t_w + w) * 6..(bi * t_w + w) * 6 + 6].copy_from_slice(&scaled);
        }
        let scaled = std.scale_output(&rows[t + 1].1);
        y.data[bi * 6..bi * 6 + 6].copy_from_slice(&scaled);
    }
    (x, y)
}
