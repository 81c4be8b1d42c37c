//! Training: Adam, mini-batch loop with deterministic gradient sharding,
//! early stopping, rolling-origin cross-validation, and prediction.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::estimator::Wrench;
use crate::fmath::sqrt;
use crate::geometry::Frame;
use crate::linalg::Vec3;
use crate::seqnet::data::{gather_batch, window_ends, Standardizer};
use crate::seqnet::model::{forward_inference, ForwardPass, ModelSpec, WeightSet};
use crate::seqnet::tensor::Tensor;
use crate::seqnet::SeqNetError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimizer state over one weight set.
pub struct Adam {
    pub lr: f64,
    pub params: AdamParams,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weights: &WeightSet, lr: f64, params: AdamParams) -> Self {
        Adam {
            lr,
            params,
            step: 0,
            m: weights.tensors.iter().map(|t| vec![0.0; t.tensor.numel()]).collect(),
            v: weights.tensors.iter().map(|t| vec![0.0; t.tensor.numel()]).collect(),
        }
    }

    pub fn apply(&mut self, weights: &mut WeightSet, grads: &[Option<Tensor>]) {
        self.step += 1;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let bc1 = 1.0 - crate::fmath::powf(b1, self.step as f64);
        let bc2 = 1.0 - crate::fmath::powf(b2, self.step as f64);
        for (idx, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let w = &mut weights.tensors[idx].tensor.data;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g.data[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g.data[i] * g.data[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= self.lr * mhat / (sqrt(vhat) + self.params.eps);
            }
        }
    }
}

/// Training protocol configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
    /// Fraction of the series held out (chronologically last) for early
    /// stopping when no explicit validation split is given.
    pub holdout_fraction: f64,
    /// Subsampling stride over window starts; 1 uses every window.
    pub window_stride: usize,
    /// Fixed number of gradient shards per batch. The reduction order is
    /// the shard order, so results do not depend on worker count.
    pub shards: usize,
    /// Cap on validation windows (evenly spaced); 0 means no cap.
    pub max_val_windows: usize,
    pub adam: AdamParams,
    pub seed: u64,
}

impl TrainConfig {
    /// Per-candidate budget used inside cross-validation.
    pub fn cv_default(seed: u64) -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            holdout_fraction: 0.1,
            window_stride: 1,
            shards: 4,
            max_val_windows: 2048,
            adam: AdamParams::default(),
            seed,
        }
    }

    /// Final-retrain budget: longer with more patience.
    pub fn retrain_default(seed: u64) -> Self {
        TrainConfig { max_epochs: 150, patience: 10, ..TrainConfig::cv_default(seed) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// A trained model plus everything needed to reproduce and deploy it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: WeightSet,
    pub standardizer: Standardizer,
    pub log: Vec<EpochStat>,
    pub best_val_mse: f64,
    /// Epoch index of the kept checkpoint.
    pub best_epoch: usize,
}

fn shard_ranges(total: usize, shards: usize) -> Vec<core::ops::Range<usize>> {
    let shards = shards.max(1).min(total.max(1));
    let base = total / shards;
    let extra = total % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let len = base + usize::from(s < extra);
        if len == 0 {
            continue;
        }
        out.push(start..start + len);
        start += len;
    }
    out
}

struct ShardResult {
    loss: f64,
    elems: usize,
    grads: Vec<Option<Tensor>>,
}

fn run_shard(
    weights: &WeightSet,
    values: &[Tensor],
    rows: &[([f64; 6], [f64; 6])],
    ends: &[usize],
    std: &Standardizer,
    dropout_seed: u64,
) -> Result<ShardResult, SeqNetError> {
    let (x, y) = gather_batch(rows, ends, weights.spec.window, std);
    let elems = y.numel();
    let mut pass = ForwardPass::new(weights, values, true, dropout_seed);
    let pred = pass.forward(x)?;
    let target = pass.graph.input(y);
    let loss = pass.graph.mse_loss(pred, target);
    let loss_value = pass.graph.loss_value(loss);
    if !loss_value.is_finite() {
        return Err(SeqNetError::NonFinite("loss"));
    }
    let grads = pass.graph.backward(loss)?;
    Ok(ShardResult { loss: loss_value, elems, grads })
}

/// One optimizer step over a batch, sharded deterministically.
fn train_step(
    weights: &mut WeightSet,
    optimizer: &mut Adam,
    rows: &[([f64; 6], [f64; 6])],
    batch_ends: &[usize],
    std: &Standardizer,
    shards: usize,
    step_seed: u64,
) -> Result<f64, SeqNetError> {
    let values = weights.values();
    let ranges = shard_ranges(batch_ends.len(), shards);
    let results = run_shards(weights, &values, rows, batch_ends, std, &ranges, step_seed)?;

    let total_elems: usize = results.iter().map(|r| r.elems).sum();
    let mut loss = 0.0;
    let mut grads: Vec<Option<Tensor>> = vec![None; weights.tensors.len()];
    for r in &results {
        let w = r.elems as f64 / total_elems as f64;
        loss += w * r.loss;
        for (slot, g) in grads.iter_mut().zip(r.grads.iter()) {
            if let Some(g) = g {
                match slot {
                    None => {
                        let mut scaled = g.clone();
                        for v in &mut scaled.data {
                            *v *= w;
                        }
                        *slot = Some(scaled);
                    }
                    Some(acc) => {
                        for (av, gv) in acc.data.iter_mut().zip(g.data.iter()) {
                            *av += w * gv;
                        }
                    }
                }
            }
        }
    }
    optimizer.apply(weights, &grads);
    Ok(loss)
}

#[cfg(feature = "std")]
fn run_shards(
    weights: &WeightSet,
    values: &[Tensor],
    rows: &[([f64; 6], [f64; 6])],
    batch_ends: &[usize],
    std_: &Standardizer,
    ranges: &[core::ops::Range<usize>],
    step_seed: u64,
) -> Result<Vec<ShardResult>, SeqNetError> {
    if ranges.len() <= 1 {
        let mut out = Vec::new();
        for (s, r) in ranges.iter().enumerate() {
            out.push(run_shard(
                weights,
                values,
                rows,
                &batch_ends[r.clone()],
                std_,
                derive_seed(step_seed, "shard").wrapping_add(s as u64),
            )?);
        }
        return Ok(out);
    }
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(ranges.len());
        for (s, r) in ranges.iter().enumerate() {
            let ends = &batch_ends[r.clone()];
            let seed = derive_seed(step_seed, "shard").wrapping_add(s as u64);
            handles.push(scope.spawn(move || run_shard(weights, values, rows, ends, std_, seed)));
        }
        // Reduce in shard order regardless of completion order.
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            out.push(h.join().expect("shard thread panicked")?);
        }
        Ok(out)
    })
}

#[cfg(not(feature = "std"))]
fn run_shards(
    weights: &WeightSet,
    values: &[Tensor],
    rows: &[([f64; 6], [f64; 6])],
    batch_ends: &[usize],
    std_: &Standardizer,
    ranges: &[core::ops::Range<usize>],
    step_seed: u64,
) -> Result<Vec<ShardResult>, SeqNetError> {
    let mut out = Vec::with_capacity(ranges.len());
    for (s, r) in ranges.iter().enumerate() {
        out.push(run_shard(
            weights,
            values,
            rows,
            &batch_ends[r.clone()],
            std_,
            derive_seed(step_seed, "shard").wrapping_add(s as u64),
        )?);
    }
    Ok(out)
}

/// Scaled-unit validation MSE over (possibly capped) windows.
fn validation_mse(
    weights: &WeightSet,
    rows: &[([f64; 6], [f64; 6])],
    std: &Standardizer,
    max_windows: usize,
) -> Result<f64, SeqNetError> {
    let t_w = weights.spec.window;
    let mut ends = window_ends(rows.len(), t_w)?;
    if max_windows > 0 && ends.len() > max_windows {
        let stride = ends.len() as f64 / max_windows as f64;
        ends = (0..max_windows)
            .map(|i| ends[(i as f64 * stride) as usize])
            .collect();
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for chunk in ends.chunks(256) {
        let (x, y) = gather_batch(rows, chunk, t_w, std);
        let pred = forward_inference(weights, x)?;
        for (p, t) in pred.data.iter().zip(y.data.iter()) {
            se += (p - t) * (p - t);
        }
        n += y.numel();
    }
    Ok(se / n as f64)
}

/// Trains on `train_rows` with early stopping against `val_rows`, keeping
/// the best checkpoint. The standardizer is fit on `train_rows` only.
pub fn train_with_validation(
    spec: ModelSpec,
    train_rows: &[([f64; 6], [f64; 6])],
    val_rows: &[([f64; 6], [f64; 6])],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SeqNetError> {
    spec.validate()?;
    let std = Standardizer::fit(train_rows)?;
    let mut weights = WeightSet::init(spec, derive_seed(cfg.seed, "init"))?;
    let mut optimizer = Adam::new(&weights, cfg.lr, cfg.adam);

    let stride = cfg.window_stride.max(1);
    let all_ends = window_ends(train_rows.len(), spec.window)?;
    let ends: Vec<usize> = all_ends.iter().copied().step_by(stride).collect();

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_weights = weights.clone();
    let mut stale = 0usize;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    for epoch in 0..cfg.max_epochs {
        let mut order = ends.clone();
        order.shuffle(&mut shuffle_rng);
        let mut train_mse = 0.0;
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step_seed = derive_seed(cfg.seed, "step")
                .wrapping_add((epoch as u64) << 32)
                .wrapping_add(bi as u64);
            let loss = train_step(
                &mut weights,
                &mut optimizer,
                train_rows,
                batch,
                &std,
                cfg.shards,
                step_seed,
            )
            .map_err(|e| match e {
                SeqNetError::NonFinite(_) => SeqNetError::Diverged { epoch },
                other => other,
            })?;
            train_mse += loss;
            batches += 1;
        }
        train_mse /= batches.max(1) as f64;

        let val_mse = validation_mse(&weights, val_rows, &std, cfg.max_val_windows)?;
        if !val_mse.is_finite() {
            return Err(SeqNetError::Diverged { epoch });
        }
        log.push(EpochStat { epoch, train_mse, val_mse });

        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_weights = weights.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        weights: best_weights,
        standardizer: std,
        log,
        best_val_mse: best_val,
        best_epoch,
    })
}

/// Trains on a single chronological series, holding out the last
/// `holdout_fraction` for early stopping.
pub fn train_model(
    spec: ModelSpec,
    rows: &[([f64; 6], [f64; 6])],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SeqNetError> {
    let holdout = ((rows.len() as f64 * cfg.holdout_fraction) as usize)
        .max(spec.window + 2)
        .min(rows.len() / 2);
    let split = rows.len() - holdout;
    train_with_validation(spec, &rows[..split], &rows[split..], cfg)
}

/// Mean validation loss of one candidate across rolling-origin folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub candidate: usize,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

/// Rolling-origin time-series cross-validation.
///
/// The series is cut into `folds + 1` contiguous chunks; fold `i` trains on
/// chunks `0..=i` and validates on chunk `i + 1`, so every validation index
/// is strictly later than all its training indices. Candidates are ranked
/// by mean validation MSE.
pub fn cross_validate(
    candidates: &[(ModelSpec, TrainConfig)],
    rows: &[([f64; 6], [f64; 6])],
    folds: usize,
) -> Result<(usize, Vec<CandidateOutcome>), SeqNetError> {
    if candidates.is_empty() {
        return Err(SeqNetError::NoCandidates);
    }
    let folds = folds.max(1);
    let chunk = rows.len() / (folds + 1);
    if chunk < candidates.iter().map(|(s, _)| s.window).max().unwrap() + 2 {
        return Err(SeqNetError::TooShort { need: (folds + 1) * 32, got: rows.len() });
    }
    let mut outcomes = Vec::with_capacity(candidates.len());
    for (ci, (spec, cfg)) in candidates.iter().enumerate() {
        let mut fold_mse = Vec::with_capacity(folds);
        for f in 0..folds {
            let train_end = chunk * (f + 1);
            let val_end = (chunk * (f + 2)).min(rows.len());
            let outcome =
                train_with_validation(*spec, &rows[..train_end], &rows[train_end..val_end], cfg)?;
            fold_mse.push(outcome.best_val_mse);
        }
        let mean_mse = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
        outcomes.push(CandidateOutcome { candidate: ci, fold_mse, mean_mse });
    }
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_mse.partial_cmp(&b.1.mean_mse).expect("finite"))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok((best, outcomes))
}

/// Predicts the wrench one sample ahead of the supplied encoder history
/// (at least `window` samples; the last `window` are used).
pub fn predict_wrench(
    weights: &WeightSet,
    std: &Standardizer,
    history: &[[f64; 6]],
) -> Result<Wrench, SeqNetError> {
    let t_w = weights.spec.window;
    if history.len() < t_w {
        return Err(SeqNetError::TooShort { need: t_w, got: history.len() });
    }
    let tail = &history[history.len() - t_w..];
    let mut x = Tensor::zeros(&[1, t_w, 6]);
    for (w, sample) in tail.iter().enumerate() {
        x.data[w * 6..w * 6 + 6].copy_from_slice(&std.scale_input(sample));
    }
    let y = forward_inference(weights, x)?;
    let out = std.unscale_output(&[y.data[0], y.data[1], y.data[2], y.data[3], y.data[4], y.data[5]]);
    Ok(Wrench::new(
        Vec3::new(out[0], out[1], out[2]),
        Vec3::new(out[3], out[4], out[5]),
        Frame::Sensor,
    ))
}

/// Batched one-step-ahead predictions over a full series: entry `i` holds
/// the model's wrench prediction for sample `i` (from the window ending at
/// `i - 1`), or `None` for the first `window + 1` samples.
pub fn predict_series(
    weights: &WeightSet,
    std: &Standardizer,
    theta: &[[f64; 6]],
) -> Result<Vec<Option<[f64; 6]>>, SeqNetError> {
    let t_w = weights.spec.window;
    if theta.len() < t_w + 2 {
        return Err(SeqNetError::TooShort { need: t_w + 2, got: theta.len() });
    }
    let mut out = vec![None; theta.len()];
    // Reuse the training gather path with dummy targets.
    let rows: Vec<([f64; 6], [f64; 6])> = theta.iter().map(|x| (*x, [0.0; 6])).collect();
    let ends: Vec<usize> = (t_w..theta.len() - 1).collect();
    for chunk in ends.chunks(512) {
        let (x, _) = gather_batch(&rows, chunk, t_w, std);
        let pred = forward_inference(weights, x)?;
        for (bi, &t) in chunk.iter().enumerate() {
            let row = &pred.data[bi * 6..(bi + 1) * 6];
            let un = std.unscale_output(&[row[0], row[1], row[2], row[3], row[4], row[5]]);
            out[t + 1] = Some(un);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::model::ArchKind;

    /// Linear synthetic task: wrench = A * theta over a slow multisine
    /// excitation, so the one-step-ahead target is learnable from the
    /// window and the optimum is an exactly realizable linear map.
    fn linear_rows(n: usize) -> Vec<([f64; 6], [f64; 6])> {
        let freqs = [
            [0.11, 0.23, 0.41],
            [0.13, 0.29, 0.47],
            [0.17, 0.31, 0.43],
            [0.19, 0.37, 0.49],
            [0.12, 0.28, 0.44],
            [0.15, 0.33, 0.46],
        ];
        (0..n)
            .map(|i| {
                let t = i as f64 / 50.0;
                let x: [f64; 6] = core::array::from_fn(|j| {
                    freqs[j]
                        .iter()
                        .enumerate()
                        .map(|(m, f)| {
                            0.15 * crate::fmath::sin(
                                core::f64::consts::TAU * f * t + (j * 3 + m) as f64,
                            )
                        })
                        .sum()
                });
                let y: [f64; 6] = core::array::from_fn(|c| {
                    2.0 * x[c] - 0.5 * x[(c + 1) % 6] + 0.25 * x[(c + 3) % 6]
                });
                (x, y)
            })
            .collect()
    }

    fn tiny_gru() -> ModelSpec {
        ModelSpec { kind: ArchKind::Gru, width: 24, heads: 0, layers: 1, p_drop: 0.0, window: 8, n_in: 6, n_out: 6 }
    }

    #[test]
    fn gru_learns_linear_map_quickly() {
        let rows = linear_rows(20_000);
        let spec = ModelSpec {
            kind: ArchKind::Gru,
            width: 24,
            heads: 0,
            layers: 1,
            p_drop: 0.0,
            window: 8,
            n_in: 6,
            n_out: 6,
        };
        let cfg = TrainConfig { lr: 3e-3, max_epochs: 10, patience: 10, ..TrainConfig::cv_default(3) };
        let out = train_model(spec, &rows, &cfg).unwrap();
        assert!(out.best_val_mse < 1e-4, "val mse {}", out.best_val_mse);
    }

    #[test]
    fn training_loss_decreases_on_average() {
        let rows = linear_rows(800);
        let cfg = TrainConfig { max_epochs: 8, patience: 8, ..TrainConfig::cv_default(5) };
        let out = train_model(tiny_gru(), &rows, &cfg).unwrap();
        let first: f64 = out.log[..3.min(out.log.len())].iter().map(|e| e.train_mse).sum::<f64>();
        let last: f64 = out.log[out.log.len().saturating_sub(3)..]
            .iter()
            .map(|e| e.train_mse)
            .sum::<f64>();
        assert!(last < first, "loss did not trend down: {:?}", out.log);
    }

    #[test]
    fn training_is_deterministic() {
        let rows = linear_rows(400);
        let cfg = TrainConfig { max_epochs: 2, ..TrainConfig::cv_default(7) };
        let a = train_model(tiny_gru(), &rows, &cfg).unwrap();
        let b = train_model(tiny_gru(), &rows, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn sharding_does_not_change_results() {
        let rows = linear_rows(400);
        let mut cfg = TrainConfig { max_epochs: 2, ..TrainConfig::cv_default(7) };
        cfg.shards = 4;
        let a = train_model(tiny_gru(), &rows, &cfg).unwrap();
        let b = train_model(tiny_gru(), &rows, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn rolling_origin_folds_are_causal() {
        // The fold construction trains on a strict prefix; verify that the
        // selection machinery runs and respects ordering on a small grid.
        let rows = linear_rows(600);
        let candidates = [
            (tiny_gru(), TrainConfig { max_epochs: 2, ..TrainConfig::cv_default(1) }),
            (
                ModelSpec { width: 8, ..tiny_gru() },
                TrainConfig { max_epochs: 2, ..TrainConfig::cv_default(1) },
            ),
        ];
        let (best, outcomes) = cross_validate(&candidates, &rows, 3).unwrap();
        assert!(best < 2);
        assert_eq!(outcomes.len(), 2);
        for o in &outcomes {
            assert_eq!(o.fold_mse.len(), 3);
        }
    }

    #[test]
    fn predict_wrench_requires_history() {
        let spec = tiny_gru();
        let ws = WeightSet::init(spec, 1).unwrap();
        let rows = linear_rows(64);
        let std = Standardizer::fit(&rows).unwrap();
        let short = [[0.0; 6]; 2];
        assert!(matches!(
            predict_wrench(&ws, &std, &short),
            Err(SeqNetError::TooShort { .. })
        ));
        let hist = [[0.01; 6]; 8];
        let w1 = predict_wrench(&ws, &std, &hist).unwrap();
        let w2 = predict_wrench(&ws, &std, &hist).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(w1.frame, Frame::Sensor);
    }

    #[test]
    fn predict_series_aligns_one_step_ahead() {
        let spec = tiny_gru();
        let ws = WeightSet::init(spec, 2).unwrap();
        let rows = linear_rows(64);
        let std = Standardizer::fit(&rows).unwrap();
        let theta: Vec<[f64; 6]> = rows.iter().map(|(x, _)| *x).collect();
        let preds = predict_series(&ws, &std, &theta).unwrap();
        for (i, p) in preds.iter().enumerate() {
            if i <= spec.window {
                assert!(p.is_none());
            } else {
                assert!(p.is_some(), "missing prediction at {i}");
            }
        }
        // Series predictions agree with the single-shot path.
        let i = 20;
        let single = predict_wrench(&ws, &std, &theta[i - spec.window..i]).unwrap();
        let batch = preds[i].unwrap();
        for (a, b) in single.to_array().iter().zip(batch.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
