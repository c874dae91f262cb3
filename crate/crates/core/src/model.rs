//! The CTNCF scorer.
//!
//! For a (user, item) pair the network looks up four embeddings: MF and CNN
//! tables on each side. It forms the flattened outer product of the two MF
//! vectors, then runs a ReLU-activated valid Conv1D with global max pooling
//! over each CNN embedding. The three branch outputs are projected to a
//! common width and stacked as a 3-token sequence. That sequence passes
//! through `num_transformer_layers` post-norm encoder blocks, is mean-pooled
//! and mapped to a logit by a linear head. The score is the sigmoid of that
//! logit.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{kaiming_tensor, uniform_tensor, ParamId, ParamStore, RegGroup};
use crate::recommender::{Scorer, Trainable};
use crate::tensor::Tensor;

/// Embedding init bound: `uniform(-0.05, 0.05)`.
pub const EMBED_INIT: f64 = 0.05;

/// How the two MF embeddings interact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MfMode {
    /// Flattened outer product `p qᵀ`, length `d²`.
    #[default]
    Outer,
    /// Element-wise product `p ⊙ q`, length `d`.
    Hadamard,
}

impl std::str::FromStr for MfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outer" => Ok(MfMode::Outer),
            "hadamard" => Ok(MfMode::Hadamard),
            other => Err(Error::Config(format!("unknown mf mode {other:?} (expected outer|hadamard)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mf_dim: usize,
    pub cnn_embed_dim: usize,
    pub num_filters: usize,
    pub kernel_size: usize,
    /// 0 disables the transformer entirely.
    pub num_transformer_layers: usize,
    pub num_heads: usize,
    /// Token width shared by the projections and the transformer.
    pub model_width: usize,
    pub ffn_dim: usize,
    pub mf_mode: MfMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            mf_dim: 4,
            cnn_embed_dim: 16,
            num_filters: 64,
            kernel_size: 3,
            num_transformer_layers: 2,
            num_heads: 1,
            model_width: 32,
            ffn_dim: 4 * 32,
            mf_mode: MfMode::Outer,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mf_dim", self.mf_dim),
            ("cnn_embed_dim", self.cnn_embed_dim),
            ("num_filters", self.num_filters),
            ("kernel_size", self.kernel_size),
            ("num_heads", self.num_heads),
            ("model_width", self.model_width),
            ("ffn_dim", self.ffn_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.cnn_embed_dim < self.kernel_size {
            return Err(Error::Config(format!(
                "cnn_embed_dim {} is shorter than kernel_size {}",
                self.cnn_embed_dim, self.kernel_size
            )));
        }
        if !self.model_width.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_width {} not divisible by num_heads {}",
                self.model_width, self.num_heads
            )));
        }
        if self.model_width < 2 {
            return Err(Error::Config("model_width must be at least 2 for layer norm".into()));
        }
        Ok(())
    }

    pub fn mf_out_dim(&self) -> usize {
        match self.mf_mode {
            MfMode::Outer => self.mf_dim * self.mf_dim,
            MfMode::Hadamard => self.mf_dim,
        }
    }
}

/// Weights of one encoder block as tape values.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln1_gain: Var,
    pub ln1_shift: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
    pub ln2_gain: Var,
    pub ln2_shift: Var,
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln1_gain: ParamId,
    ln1_shift: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln2_gain: ParamId,
    ln2_shift: ParamId,
}

impl LayerIds {
    fn on_tape(&self, tape: &mut Tape) -> LayerWeights {
        LayerWeights {
            wq: tape.param(self.wq),
            wk: tape.param(self.wk),
            wv: tape.param(self.wv),
            wo: tape.param(self.wo),
            ln1_gain: tape.param(self.ln1_gain),
            ln1_shift: tape.param(self.ln1_shift),
            ff_w1: tape.param(self.ff_w1),
            ff_b1: tape.param(self.ff_b1),
            ff_w2: tape.param(self.ff_w2),
            ff_b2: tape.param(self.ff_b2),
            ln2_gain: tape.param(self.ln2_gain),
            ln2_shift: tape.param(self.ln2_shift),
        }
    }
}

#[derive(Debug, Clone)]
struct Ids {
    p: ParamId,
    q: ParamId,
    p_cnn: ParamId,
    q_cnn: ParamId,
    user_filters: ParamId,
    user_bias: ParamId,
    item_filters: ParamId,
    item_bias: ParamId,
    proj_mf_w: ParamId,
    proj_mf_b: ParamId,
    proj_user_w: ParamId,
    proj_user_b: ParamId,
    proj_item_w: ParamId,
    proj_item_b: ParamId,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Row `id` of an embedding table; the gradient flows to that row only.
pub fn embed_lookup(tape: &mut Tape, table: ParamId, id: usize) -> Result<Var> {
    tape.gather(table, id)
}

/// MF interaction vector: flattened `p qᵀ` (row-major) or `p ⊙ q`.
pub fn mf_branch(tape: &mut Tape, p: Var, q: Var, mode: MfMode) -> Result<Var> {
    match mode {
        MfMode::Outer => {
            let d = tape.value(p).len();
            let o = tape.outer(p, q)?;
            tape.reshape(o, &[d * d])
        }
        MfMode::Hadamard => tape.mul(p, q),
    }
}

/// `max_t ReLU(conv1d_valid(embedding))`, one value per filter.
pub fn cnn_branch(tape: &mut Tape, embedding: Var, filters: Var, bias: Var) -> Result<Var> {
    let c = tape.conv1d_valid(embedding, filters, bias)?;
    let r = tape.relu(c);
    tape.global_max_pool(r)
}

/// `x · W + b` for a vector `x`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let n = tape.value(x).len();
    let row = tape.reshape(x, &[1, n])?;
    let y = tape.matmul(row, w)?;
    let out = tape.value(w).dims2().map(|d| d.1).unwrap_or(1);
    let y = tape.reshape(y, &[out])?;
    tape.add(y, b)
}

/// Projects the three branch outputs to a shared width and stacks them as a
/// `3×w` token sequence.
pub fn fuse_concat(tape: &mut Tape, branches: [Var; 3], projections: [(Var, Var); 3]) -> Result<Var> {
    let mut tokens = [branches[0]; 3];
    for (k, (&x, &(w, b))) in branches.iter().zip(&projections).enumerate() {
        tokens[k] = linear(tape, x, w, b)?;
    }
    tape.stack_rows(&tokens)
}

/// Output of [`transformer_block`]; `attention` holds one `T×T` weight matrix
/// per head.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub out: Var,
    pub attention: Vec<Var>,
}

/// `softmax(Q Kᵀ / √d_k) V` per head, heads concatenated then projected by
/// `W_O`. Returns the projected output and the attention matrices.
pub fn multi_head_attention(tape: &mut Tape, seq: Var, w: &LayerWeights, num_heads: usize) -> Result<BlockOutput> {
    let q = tape.matmul(seq, w.wq)?;
    let k = tape.matmul(seq, w.wk)?;
    let v = tape.matmul(seq, w.wv)?;
    let width = tape.value(q).dims2().map(|d| d.1).unwrap_or(0);
    if num_heads == 0 || !width.is_multiple_of(num_heads) {
        return Err(Error::invalid("attention", format!("width {width} not divisible by {num_heads} heads")));
    }
    let dk = width / num_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    let mut attention = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (qh, kh, vh) = if num_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dk, (h + 1) * dk)?,
                tape.slice_cols(k, h * dk, (h + 1) * dk)?,
                tape.slice_cols(v, h * dk, (h + 1) * dk)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale);
        let a = tape.softmax_rows(logits);
        attention.push(a);
        heads.push(tape.matmul(a, vh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let out = tape.matmul(cat, w.wo)?;
    Ok(BlockOutput { out, attention })
}

/// Post-norm encoder block: attention + residual + layer norm, then a ReLU
/// feed-forward + residual + layer norm.
pub fn transformer_block(tape: &mut Tape, seq: Var, w: &LayerWeights, num_heads: usize) -> Result<BlockOutput> {
    let attn = multi_head_attention(tape, seq, w, num_heads)?;
    let res = tape.add(seq, attn.out)?;
    let x1 = tape.layer_norm(res, w.ln1_gain, w.ln1_shift)?;
    let h = tape.matmul(x1, w.ff_w1)?;
    let h = tape.add_row_bias(h, w.ff_b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, w.ff_w2)?;
    let h = tape.add_row_bias(h, w.ff_b2)?;
    let res = tape.add(x1, h)?;
    let out = tape.layer_norm(res, w.ln2_gain, w.ln2_shift)?;
    Ok(BlockOutput {
        out,
        attention: attn.attention,
    })
}

/// Everything a traced forward pass exposes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logit: Var,
    pub tokens: Var,
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub score: f64,
}

#[derive(Debug)]
pub struct Ctncf {
    hyper: HyperParams,
    num_users: usize,
    num_items: usize,
    params: ParamStore,
    ids: Ids,
    attention_calls: AtomicU64,
}

impl Clone for Ctncf {
    fn clone(&self) -> Self {
        Ctncf {
            hyper: self.hyper.clone(),
            num_users: self.num_users,
            num_items: self.num_items,
            params: self.params.clone(),
            ids: self.ids.clone(),
            attention_calls: AtomicU64::new(self.attention_calls()),
        }
    }
}

impl Ctncf {
    /// Builds a freshly initialized model. All randomness comes from `seed`.
    pub fn new(hyper: HyperParams, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::Config("empty user or item vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = &hyper;
        let (w, f, k) = (h.model_width, h.num_filters, h.kernel_size);
        let mut s = ParamStore::new();

        let p = s.add_embedding("P", uniform_tensor(&mut rng, &[num_users, h.mf_dim], EMBED_INIT), RegGroup::Mf);
        let q = s.add_embedding("Q", uniform_tensor(&mut rng, &[num_items, h.mf_dim], EMBED_INIT), RegGroup::Mf);
        let p_cnn = s.add_embedding(
            "P_cnn",
            uniform_tensor(&mut rng, &[num_users, h.cnn_embed_dim], EMBED_INIT),
            RegGroup::Cnn,
        );
        let q_cnn = s.add_embedding(
            "Q_cnn",
            uniform_tensor(&mut rng, &[num_items, h.cnn_embed_dim], EMBED_INIT),
            RegGroup::Cnn,
        );
        let user_filters = s.add("user_filters", kaiming_tensor(&mut rng, &[f, k], k), RegGroup::Cnn);
        let user_bias = s.add("user_bias", Tensor::zeros(&[f]), RegGroup::Cnn);
        let item_filters = s.add("item_filters", kaiming_tensor(&mut rng, &[f, k], k), RegGroup::Cnn);
        let item_bias = s.add("item_bias", Tensor::zeros(&[f]), RegGroup::Cnn);

        let mf_out = h.mf_out_dim();
        let proj_mf_w = s.add("proj_mf_w", kaiming_tensor(&mut rng, &[mf_out, w], mf_out), RegGroup::Free);
        let proj_mf_b = s.add("proj_mf_b", Tensor::zeros(&[w]), RegGroup::Free);
        let proj_user_w = s.add("proj_user_w", kaiming_tensor(&mut rng, &[f, w], f), RegGroup::Free);
        let proj_user_b = s.add("proj_user_b", Tensor::zeros(&[w]), RegGroup::Free);
        let proj_item_w = s.add("proj_item_w", kaiming_tensor(&mut rng, &[f, w], f), RegGroup::Free);
        let proj_item_b = s.add("proj_item_b", Tensor::zeros(&[w]), RegGroup::Free);

        let mut layers = Vec::with_capacity(h.num_transformer_layers);
        for l in 0..h.num_transformer_layers {
            let mut mat = |name: &str, shape: [usize; 2]| {
                s.add(format!("layer{l}.{name}"), kaiming_tensor(&mut rng, &shape, shape[0]), RegGroup::Free)
            };
            let wq = mat("wq", [w, w]);
            let wk = mat("wk", [w, w]);
            let wv = mat("wv", [w, w]);
            let wo = mat("wo", [w, w]);
            let ff_w1 = mat("ff_w1", [w, h.ffn_dim]);
            let ff_w2 = mat("ff_w2", [h.ffn_dim, w]);
            layers.push(LayerIds {
                wq,
                wk,
                wv,
                wo,
                ff_w1,
                ff_w2,
                ln1_gain: s.add(format!("layer{l}.ln1_gain"), Tensor::filled(&[w], 1.0), RegGroup::Free),
                ln1_shift: s.add(format!("layer{l}.ln1_shift"), Tensor::zeros(&[w]), RegGroup::Free),
                ff_b1: s.add(format!("layer{l}.ff_b1"), Tensor::zeros(&[h.ffn_dim]), RegGroup::Free),
                ff_b2: s.add(format!("layer{l}.ff_b2"), Tensor::zeros(&[w]), RegGroup::Free),
                ln2_gain: s.add(format!("layer{l}.ln2_gain"), Tensor::filled(&[w], 1.0), RegGroup::Free),
                ln2_shift: s.add(format!("layer{l}.ln2_shift"), Tensor::zeros(&[w]), RegGroup::Free),
            });
        }
        let head_w = s.add("head_w", kaiming_tensor(&mut rng, &[w, 1], w), RegGroup::Free);
        let head_b = s.add("head_b", Tensor::zeros(&[1]), RegGroup::Free);

        Ok(Ctncf {
            hyper,
            num_users,
            num_items,
            params: s,
            ids: Ids {
                p,
                q,
                p_cnn,
                q_cnn,
                user_filters,
                user_bias,
                item_filters,
                item_bias,
                proj_mf_w,
                proj_mf_b,
                proj_user_w,
                proj_user_b,
                proj_item_w,
                proj_item_b,
                layers,
                head_w,
                head_b,
            },
            attention_calls: AtomicU64::new(0),
        })
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    /// Number of attention evaluations since construction.
    pub fn attention_calls(&self) -> u64 {
        self.attention_calls.load(Ordering::Relaxed)
    }

    pub fn user_mf_table(&self) -> ParamId {
        self.ids.p
    }

    pub fn item_mf_table(&self) -> ParamId {
        self.ids.q
    }

    pub fn user_cnn_table(&self) -> ParamId {
        self.ids.p_cnn
    }

    pub fn item_cnn_table(&self) -> ParamId {
        self.ids.q_cnn
    }

    fn check_ids(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.num_users {
            return Err(Error::IdOutOfRange {
                kind: "user",
                id: user,
                size: self.num_users,
            });
        }
        if item >= self.num_items {
            return Err(Error::IdOutOfRange {
                kind: "item",
                id: item,
                size: self.num_items,
            });
        }
        Ok(())
    }

    /// Records the full forward pass for one pair on `tape`.
    pub fn forward_traced(&self, tape: &mut Tape, user: usize, item: usize) -> Result<ForwardTrace> {
        self.check_ids(user, item)?;
        let ids = &self.ids;
        let p = embed_lookup(tape, ids.p, user)?;
        let q = embed_lookup(tape, ids.q, item)?;
        let pc = embed_lookup(tape, ids.p_cnn, user)?;
        let qc = embed_lookup(tape, ids.q_cnn, item)?;

        let mf = mf_branch(tape, p, q, self.hyper.mf_mode)?;
        let (uf, ub) = (tape.param(ids.user_filters), tape.param(ids.user_bias));
        let cu = cnn_branch(tape, pc, uf, ub)?;
        let (itf, ib) = (tape.param(ids.item_filters), tape.param(ids.item_bias));
        let ci = cnn_branch(tape, qc, itf, ib)?;

        let projections = [
            (tape.param(ids.proj_mf_w), tape.param(ids.proj_mf_b)),
            (tape.param(ids.proj_user_w), tape.param(ids.proj_user_b)),
            (tape.param(ids.proj_item_w), tape.param(ids.proj_item_b)),
        ];
        let tokens = fuse_concat(tape, [mf, cu, ci], projections)?;

        let mut seq = tokens;
        let mut attention = Vec::new();
        for layer in &ids.layers {
            let w = layer.on_tape(tape);
            self.attention_calls.fetch_add(1, Ordering::Relaxed);
            let block = transformer_block(tape, seq, &w, self.hyper.num_heads)?;
            seq = block.out;
            attention.extend(block.attention);
        }

        let pooled = tape.mean_rows(seq)?;
        let (hw, hb) = (tape.param(ids.head_w), tape.param(ids.head_b));
        let logit = linear(tape, pooled, hw, hb)?;
        Ok(ForwardTrace {
            logit,
            tokens,
            attention,
        })
    }

    pub fn forward(&self, user: usize, item: usize) -> Result<Prediction> {
        let mut tape = Tape::new(&self.params);
        let trace = self.forward_traced(&mut tape, user, item)?;
        let s = tape.sigmoid(trace.logit);
        Ok(Prediction { score: tape.scalar(s) })
    }
}

impl Scorer for Ctncf {
    fn num_users(&self) -> usize {
        self.num_users
    }

    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score(&self, user: usize, item: usize) -> Result<f64> {
        self.forward(user, item).map(|p| p.score)
    }

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let mut out = Vec::with_capacity(items.len());
        for &item in items {
            tape.reset();
            let trace = self.forward_traced(&mut tape, user, item)?;
            let s = tape.sigmoid(trace.logit);
            out.push(tape.scalar(s));
        }
        Ok(out)
    }
}

impl Trainable for Ctncf {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn logit(&self, tape: &mut Tape, user: usize, item: usize) -> Result<Var> {
        self.forward_traced(tape, user, item).map(|t| t.logit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HyperParams {
        HyperParams {
            num_filters: 4,
            model_width: 8,
            ffn_dim: 16,
            cnn_embed_dim: 6,
            ..HyperParams::default()
        }
    }

    #[test]
    fn validates_hyper() {
        assert!(HyperParams::default().validate().is_ok());
        let h = HyperParams {
            cnn_embed_dim: 2,
            ..HyperParams::default()
        };
        assert!(h.validate().is_err());
        let h = HyperParams {
            num_heads: 3,
            ..HyperParams::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn score_in_open_interval() {
        let m = Ctncf::new(small(), 3, 4, 7).unwrap();
        for u in 0..3 {
            for i in 0..4 {
                let s = m.score(u, i).unwrap();
                assert!(s > 0.0 && s < 1.0);
            }
        }
    }

    #[test]
    fn zero_params_give_half() {
        let mut m = Ctncf::new(small(), 2, 2, 1).unwrap();
        for p in m.params_mut().iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.forward(1, 1).unwrap().score, 0.5);
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let m = Ctncf::new(small(), 2, 3, 1).unwrap();
        let err = m.forward(2, 0).unwrap_err();
        assert!(matches!(err, Error::IdOutOfRange { kind: "user", id: 2, size: 2 }));
        assert!(m.forward(0, 3).is_err());
    }

    #[test]
    fn ablated_model_never_runs_attention() {
        let h = HyperParams {
            num_transformer_layers: 0,
            ..small()
        };
        let m = Ctncf::new(h, 2, 2, 1).unwrap();
        m.score_items(0, &[0, 1]).unwrap();
        assert_eq!(m.attention_calls(), 0);
        let on = Ctncf::new(small(), 2, 2, 1).unwrap();
        on.score(0, 0).unwrap();
        assert_eq!(on.attention_calls(), 2);
    }

    #[test]
    fn same_seed_same_scores() {
        let a = Ctncf::new(small(), 3, 3, 42).unwrap();
        let b = Ctncf::new(small(), 3, 3, 42).unwrap();
        assert_eq!(a.score(1, 2).unwrap().to_bits(), b.score(1, 2).unwrap().to_bits());
    }
}
