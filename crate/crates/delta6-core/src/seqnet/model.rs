//! Sequence-model architectures for encoder-history to wrench regression:
//! stacked GRU, stacked LSTM, and a pre-norm Transformer encoder, all built
//! on the autodiff tape.
//!
//! Weight layouts are input-major (`[fan_in, fan_out]`) so the forward pass
//! is a plain row-major matmul. Gate order is `[r | z | n]` for GRU and
//! `[i | f | g | o]` for LSTM.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fmath::sqrt;
use crate::seqnet::tape::{Graph, NodeId};
use crate::seqnet::tensor::Tensor;
use crate::seqnet::SeqNetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Gru,
    Lstm,
    Transformer,
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ArchKind,
    /// Model width: `d_model` for the transformer, hidden size for RNNs.
    pub width: usize,
    /// Attention heads (transformer only).
    pub heads: usize,
    pub layers: usize,
    pub p_drop: f64,
    /// Input window length `T_w`.
    pub window: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl ModelSpec {
    /// Transformer: width 64, 4 heads, 2 layers, dropout 0.2, window 25.
    pub fn transformer_base() -> Self {
        ModelSpec {
            kind: ArchKind::Transformer,
            width: 64,
            heads: 4,
            layers: 2,
            p_drop: 0.2,
            window: 25,
            n_in: 6,
            n_out: 6,
        }
    }

    /// LSTM: hidden 128, 2 layers, dropout 0.3, window 25.
    pub fn lstm_base() -> Self {
        ModelSpec {
            kind: ArchKind::Lstm,
            width: 128,
            heads: 0,
            layers: 2,
            p_drop: 0.3,
            window: 25,
            n_in: 6,
            n_out: 6,
        }
    }

    /// GRU: hidden 128, 2 layers, dropout 0.2, window 25.
    pub fn gru_base() -> Self {
        ModelSpec {
            kind: ArchKind::Gru,
            width: 128,
            heads: 0,
            layers: 2,
            p_drop: 0.2,
            window: 25,
            n_in: 6,
            n_out: 6,
        }
    }

    pub fn validate(&self) -> Result<(), SeqNetError> {
        if self.width == 0 || self.layers == 0 || self.window == 0 || self.n_in == 0 || self.n_out == 0
        {
            return Err(SeqNetError::BadSpec("zero-sized dimension"));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(SeqNetError::BadSpec("dropout must lie in [0, 1)"));
        }
        if self.kind == ArchKind::Transformer {
            if self.heads == 0 || self.width % self.heads != 0 {
                return Err(SeqNetError::BadSpec("width must divide into heads"));
            }
        }
        Ok(())
    }

    /// Closed-form trainable-parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.width;
        match self.kind {
            ArchKind::Gru => {
                let mut total = 0;
                for l in 0..self.layers {
                    let fin = if l == 0 { self.n_in } else { d };
                    total += 3 * d * (fin + d) + 6 * d;
                }
                total + d * self.n_out + self.n_out
            }
            ArchKind::Lstm => {
                let mut total = 0;
                for l in 0..self.layers {
                    let fin = if l == 0 { self.n_in } else { d };
                    total += 4 * d * (fin + d) + 8 * d;
                }
                total + d * self.n_out + self.n_out
            }
            ArchKind::Transformer => {
                let ff = 4 * d;
                let per_layer = 2 * (2 * d)            // two layer norms
                    + 4 * (d * d + d)                  // q, k, v, out projections
                    + (d * ff + ff) + (ff * d + d);    // feed-forward pair
                (self.n_in * d + d)                    // input projection
                    + self.window * d                  // learned positional encoding
                    + self.layers * per_layer
                    + d * self.n_out + self.n_out      // head
            }
        }
    }

    /// Dominant multiply-accumulate count of one forward pass at batch 1.
    ///
    /// Counting rule: every dense matmul including the attention score and
    /// context products; biases, activations, and normalizations excluded.
    pub fn mac_count(&self) -> usize {
        let d = self.width;
        let t = self.window;
        match self.kind {
            ArchKind::Gru => {
                let mut per_step = 0;
                for l in 0..self.layers {
                    let fin = if l == 0 { self.n_in } else { d };
                    per_step += 3 * d * (fin + d);
                }
                t * per_step + d * self.n_out
            }
            ArchKind::Lstm => {
                let mut per_step = 0;
                for l in 0..self.layers {
                    let fin = if l == 0 { self.n_in } else { d };
                    per_step += 4 * d * (fin + d);
                }
                t * per_step + d * self.n_out
            }
            ArchKind::Transformer => {
                let per_layer = 3 * t * d * d      // q, k, v
                    + t * t * d                    // scores
                    + t * t * d                    // context
                    + t * d * d                    // out projection
                    + 2 * t * d * 4 * d;           // feed-forward
                t * self.n_in * d + self.layers * per_layer + d * self.n_out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// The trainable state of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub spec: ModelSpec,
    pub seed: u64,
    pub tensors: Vec<NamedTensor>,
}

impl WeightSet {
    /// Seeded initialization: uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// per tensor; LSTM forget-gate biases start at +1.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, SeqNetError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors: Vec<NamedTensor> = Vec::new();
        let d = spec.width;

        fn uniform_init(
            tensors: &mut Vec<NamedTensor>,
            name: String,
            shape: &[usize],
            fan_in: usize,
            rng: &mut ChaCha8Rng,
        ) {
            let bound = 1.0 / sqrt(fan_in.max(1) as f64);
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.push(NamedTensor { name, tensor: Tensor::from_vec(shape, data) });
        }

        match spec.kind {
            ArchKind::Gru | ArchKind::Lstm => {
                let gates = if spec.kind == ArchKind::Gru { 3 } else { 4 };
                for l in 0..spec.layers {
                    let fin = if l == 0 { spec.n_in } else { d };
                    uniform_init(&mut tensors, format!("rnn{l}.w_ih"), &[fin, gates * d], fin, &mut rng);
                    uniform_init(&mut tensors, format!("rnn{l}.w_hh"), &[d, gates * d], d, &mut rng);
                    uniform_init(&mut tensors, format!("rnn{l}.b_ih"), &[gates * d], d, &mut rng);
                    uniform_init(&mut tensors, format!("rnn{l}.b_hh"), &[gates * d], d, &mut rng);
                }
                uniform_init(&mut tensors, String::from("head.w"), &[d, spec.n_out], d, &mut rng);
                uniform_init(&mut tensors, String::from("head.b"), &[spec.n_out], d, &mut rng);
            }
            ArchKind::Transformer => {
                uniform_init(&mut tensors, String::from("in_proj.w"), &[spec.n_in, d], spec.n_in, &mut rng);
                uniform_init(&mut tensors, String::from("in_proj.b"), &[d], spec.n_in, &mut rng);
                uniform_init(&mut tensors, String::from("pos"), &[spec.window, d], d, &mut rng);
                for l in 0..spec.layers {
                    for suffix in ["ln1.gamma", "ln1.beta"] {
                        tensors.push(NamedTensor {
                            name: format!("block{l}.{suffix}"),
                            tensor: norm_init(d, suffix.ends_with("gamma")),
                        });
                    }
                    for name in ["wq", "wk", "wv", "wo"] {
                        uniform_init(&mut tensors, format!("block{l}.attn.{name}"), &[d, d], d, &mut rng);
                        uniform_init(&mut tensors, format!("block{l}.attn.{name}_b"), &[d], d, &mut rng);
                    }
                    for suffix in ["ln2.gamma", "ln2.beta"] {
                        tensors.push(NamedTensor {
                            name: format!("block{l}.{suffix}"),
                            tensor: norm_init(d, suffix.ends_with("gamma")),
                        });
                    }
                    uniform_init(&mut tensors, format!("block{l}.ffn.w1"), &[d, 4 * d], d, &mut rng);
                    uniform_init(&mut tensors, format!("block{l}.ffn.b1"), &[4 * d], d, &mut rng);
                    uniform_init(&mut tensors, format!("block{l}.ffn.w2"), &[4 * d, d], 4 * d, &mut rng);
                    uniform_init(&mut tensors, format!("block{l}.ffn.b2"), &[d], 4 * d, &mut rng);
                }
                uniform_init(&mut tensors, String::from("head.w"), &[d, spec.n_out], d, &mut rng);
                uniform_init(&mut tensors, String::from("head.b"), &[spec.n_out], d, &mut rng);
            }
        }

        let mut ws = WeightSet { spec, seed, tensors };
        if spec.kind == ArchKind::Lstm {
            // Forget gate bias +1 for stable early training.
            for l in 0..spec.layers {
                let idx = ws.index_of(&format!("rnn{l}.b_ih")).unwrap();
                let d = spec.width;
                for v in &mut ws.tensors[idx].tensor.data[d..2 * d] {
                    *v += 1.0;
                }
            }
        }
        debug_assert_eq!(ws.param_count(), spec.param_count());
        Ok(ws)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.numel()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| t.tensor.clone()).collect()
    }
}

fn norm_init(d: usize, ones: bool) -> Tensor {
    let v = if ones { 1.0 } else { 0.0 };
    Tensor::from_vec(&[d], alloc::vec![v; d])
}

/// Forward-pass context: parameter node handles plus run mode.
pub struct ForwardPass<'w> {
    pub graph: Graph<'w>,
    weights: &'w WeightSet,
    param_nodes: Vec<Option<NodeId>>,
    training: bool,
    dropout_rng: ChaCha8Rng,
}

impl<'w> ForwardPass<'w> {
    /// `param_values` must be `weights.values()`-compatible storage that
    /// outlives the pass (the graph borrows it).
    pub fn new(
        weights: &'w WeightSet,
        param_values: &'w [Tensor],
        training: bool,
        dropout_seed: u64,
    ) -> Self {
        ForwardPass {
            graph: Graph::new(param_values),
            weights,
            param_nodes: alloc::vec![None; weights.tensors.len()],
            training,
            dropout_rng: crate::seqnet::tape::dropout_rng(dropout_seed),
        }
    }

    fn p(&mut self, name: &str) -> NodeId {
        let idx = self
            .weights
            .index_of(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"));
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        let id = self.graph.param(idx);
        self.param_nodes[idx] = Some(id);
        id
    }

    fn dropout(&mut self, x: NodeId) -> NodeId {
        if self.training && self.weights.spec.p_drop > 0.0 {
            self.graph.dropout(x, self.weights.spec.p_drop, &mut self.dropout_rng)
        } else {
            x
        }
    }

    /// Builds the forward graph for a `[batch, window, n_in]` input and
    /// returns the `[batch, n_out]` prediction node.
    pub fn forward(&mut self, x: Tensor) -> Result<NodeId, SeqNetError> {
        let spec = self.weights.spec;
        if x.shape != [x.shape[0], spec.window, spec.n_in] {
            return Err(SeqNetError::ShapeMismatch("input must be [batch, window, n_in]"));
        }
        let batch = x.shape[0];
        // Reinterpret as 2-D rows of features.
        let x2 = Tensor::from_vec(&[batch * spec.window, spec.n_in], x.data);
        let x_id = self.graph.input(x2);
        match spec.kind {
            ArchKind::Gru => self.forward_gru(x_id, batch),
            ArchKind::Lstm => self.forward_lstm(x_id, batch),
            ArchKind::Transformer => self.forward_transformer(x_id),
        }
    }

    fn head(&mut self, h: NodeId) -> NodeId {
        let w = self.p("head.w");
        let b = self.p("head.b");
        let y = self.graph.matmul(h, w);
        self.graph.add_bias(y, b)
    }

    fn forward_gru(&mut self, x_id: NodeId, batch: usize) -> Result<NodeId, SeqNetError> {
        let spec = self.weights.spec;
        let d = spec.width;
        let t_w = spec.window;
        let mut layer_in: Vec<NodeId> = (0..t_w).map(|t| self.graph.time_slice(x_id, t, t_w)).collect();
        let mut last_h = None;
        for l in 0..spec.layers {
            let w_ih = self.p(&format!("rnn{l}.w_ih"));
            let w_hh = self.p(&format!("rnn{l}.w_hh"));
            let b_ih = self.p(&format!("rnn{l}.b_ih"));
            let b_hh = self.p(&format!("rnn{l}.b_hh"));
            let mut h = self.graph.input(Tensor::zeros(&[batch, d]));
            let mut outputs = Vec::with_capacity(t_w);
            for &xt in &layer_in {
                let gi = self.graph.matmul(xt, w_ih);
                let gi = self.graph.add_bias(gi, b_ih);
                let gh = self.graph.matmul(h, w_hh);
                let gh = self.graph.add_bias(gh, b_hh);
                let gi_r = self.graph.slice_cols(gi, 0, d);
                let gh_r = self.graph.slice_cols(gh, 0, d);
                let r_pre = self.graph.add(gi_r, gh_r);
                let r = self.graph.sigmoid(r_pre);
                let gi_z = self.graph.slice_cols(gi, d, d);
                let gh_z = self.graph.slice_cols(gh, d, d);
                let z_pre = self.graph.add(gi_z, gh_z);
                let z = self.graph.sigmoid(z_pre);
                let gi_n = self.graph.slice_cols(gi, 2 * d, d);
                let gh_n = self.graph.slice_cols(gh, 2 * d, d);
                let gated = self.graph.mul(r, gh_n);
                let n_pre = self.graph.add(gi_n, gated);
                let n = self.graph.tanh(n_pre);
                let zh = self.graph.mul(z, h);
                let one_minus_z = self.graph.affine(z, -1.0, 1.0);
                let zn = self.graph.mul(one_minus_z, n);
                h = self.graph.add(zh, zn);
                outputs.push(h);
            }
            // Inter-layer dropout on the output sequence.
            if l + 1 < spec.layers {
                layer_in = outputs.iter().map(|&o| self.dropout(o)).collect();
            }
            last_h = Some(*outputs.last().expect("window > 0"));
        }
        Ok(self.head(last_h.expect("layers > 0")))
    }

    fn forward_lstm(&mut self, x_id: NodeId, batch: usize) -> Result<NodeId, SeqNetError> {
        let spec = self.weights.spec;
        let d = spec.width;
        let t_w = spec.window;
        let mut layer_in: Vec<NodeId> = (0..t_w).map(|t| self.graph.time_slice(x_id, t, t_w)).collect();
        let mut last_h = None;
        for l in 0..spec.layers {
            let w_ih = self.p(&format!("rnn{l}.w_ih"));
            let w_hh = self.p(&format!("rnn{l}.w_hh"));
            let b_ih = self.p(&format!("rnn{l}.b_ih"));
            let b_hh = self.p(&format!("rnn{l}.b_hh"));
            let mut h = self.graph.input(Tensor::zeros(&[batch, d]));
            let mut c = self.graph.input(Tensor::zeros(&[batch, d]));
            let mut outputs = Vec::with_capacity(t_w);
            for &xt in &layer_in {
                let gi = self.graph.matmul(xt, w_ih);
                let gi = self.graph.add_bias(gi, b_ih);
                let gh = self.graph.matmul(h, w_hh);
                let gh = self.graph.add_bias(gh, b_hh);
                let gates = self.graph.add(gi, gh);
                let i_pre = self.graph.slice_cols(gates, 0, d);
                let f_pre = self.graph.slice_cols(gates, d, d);
                let g_pre = self.graph.slice_cols(gates, 2 * d, d);
                let o_pre = self.graph.slice_cols(gates, 3 * d, d);
                let i_g = self.graph.sigmoid(i_pre);
                let f_g = self.graph.sigmoid(f_pre);
                let g_g = self.graph.tanh(g_pre);
                let o_g = self.graph.sigmoid(o_pre);
                let fc = self.graph.mul(f_g, c);
                let ig = self.graph.mul(i_g, g_g);
                c = self.graph.add(fc, ig);
                let c_act = self.graph.tanh(c);
                h = self.graph.mul(o_g, c_act);
                outputs.push(h);
            }
            if l + 1 < spec.layers {
                layer_in = outputs.iter().map(|&o| self.dropout(o)).collect();
            }
            last_h = Some(*outputs.last().expect("window > 0"));
        }
        Ok(self.head(last_h.expect("layers > 0")))
    }

    fn forward_transformer(&mut self, x_id: NodeId) -> Result<NodeId, SeqNetError> {
        let spec = self.weights.spec;
        let d = spec.width;
        let t_w = spec.window;
        let heads = spec.heads;
        let dh = d / heads;
        let rows = self.graph.value(x_id).rows_cols().0;
        let batch = rows / t_w;

        let w_in = self.p("in_proj.w");
        let b_in = self.p("in_proj.b");
        let pos = self.p("pos");
        let h0 = self.graph.matmul(x_id, w_in);
        let h0 = self.graph.add_bias(h0, b_in);
        let mut h = self.graph.add_time_param(h0, pos, t_w);

        for l in 0..spec.layers {
            // Pre-norm self-attention block.
            let g1 = self.p(&format!("block{l}.ln1.gamma"));
            let be1 = self.p(&format!("block{l}.ln1.beta"));
            let normed = self.graph.layer_norm(h, g1, be1);
            let (wq, bq) = (self.p(&format!("block{l}.attn.wq")), self.p(&format!("block{l}.attn.wq_b")));
            let (wk, bk) = (self.p(&format!("block{l}.attn.wk")), self.p(&format!("block{l}.attn.wk_b")));
            let (wv, bv) = (self.p(&format!("block{l}.attn.wv")), self.p(&format!("block{l}.attn.wv_b")));
            let (wo, bo) = (self.p(&format!("block{l}.attn.wo")), self.p(&format!("block{l}.attn.wo_b")));
            let q = self.graph.matmul(normed, wq);
            let q = self.graph.add_bias(q, bq);
            let k = self.graph.matmul(normed, wk);
            let k = self.graph.add_bias(k, bk);
            let v = self.graph.matmul(normed, wv);
            let v = self.graph.add_bias(v, bv);
            let qh = self.graph.head_split(q, heads, t_w);
            let kh = self.graph.head_split(k, heads, t_w);
            let vh = self.graph.head_split(v, heads, t_w);
            let g = batch * heads;
            let scores = self.graph.bmm(qh, kh, g, t_w, dh, t_w, true);
            let scores = self.graph.affine(scores, 1.0 / sqrt(dh as f64), 0.0);
            let attn = self.graph.softmax_rows(scores);
            let attn = self.dropout(attn);
            let ctx = self.graph.bmm(attn, vh, g, t_w, t_w, dh, false);
            let merged = self.graph.head_merge(ctx, heads, t_w);
            let proj = self.graph.matmul(merged, wo);
            let proj = self.graph.add_bias(proj, bo);
            let proj = self.dropout(proj);
            h = self.graph.add(h, proj);

            // Pre-norm feed-forward block.
            let g2 = self.p(&format!("block{l}.ln2.gamma"));
            let be2 = self.p(&format!("block{l}.ln2.beta"));
            let normed2 = self.graph.layer_norm(h, g2, be2);
            let w1 = self.p(&format!("block{l}.ffn.w1"));
            let b1 = self.p(&format!("block{l}.ffn.b1"));
            let w2 = self.p(&format!("block{l}.ffn.w2"));
            let b2 = self.p(&format!("block{l}.ffn.b2"));
            let f1 = self.graph.matmul(normed2, w1);
            let f1 = self.graph.add_bias(f1, b1);
            let f1 = self.graph.relu(f1);
            let f2 = self.graph.matmul(f1, w2);
            let f2 = self.graph.add_bias(f2, b2);
            let f2 = self.dropout(f2);
            h = self.graph.add(h, f2);
        }

        // Prediction from the last time step.
        let last = self.graph.time_slice(h, t_w - 1, t_w);
        Ok(self.head(last))
    }
}

/// Inference: `[batch, window, n_in]` to `[batch, n_out]`, dropout off.
pub fn forward_inference(weights: &WeightSet, x: Tensor) -> Result<Tensor, SeqNetError> {
    let values = weights.values();
    let mut pass = ForwardPass::new(weights, &values, false, 0);
    let out = pass.forward(x)?;
    let y = pass.graph.value(out).clone();
    if !y.is_finite() {
        return Err(SeqNetError::NonFinite("inference output"));
    }
    Ok(y)
}
