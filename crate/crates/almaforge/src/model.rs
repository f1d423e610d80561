//! Pre-norm decoder-only transformer with learned absolute positions, a
//! two-matrix FFN (up-projection, GELU, down-projection), no linear biases,
//! and the output projection tied to the token embedding. The FFN
//! down-projection is named `layer.{i}.ffn.down`, the adapter target.
//!
//! `forward` runs on a `Tape`, so one call both computes logits and sets up
//! the backward pass; parameters enter the tape through `stage_params`,
//! which lets callers mark a subset as trainable.

use crate::error::{Error, Result};
use crate::objectives::Batch;
use crate::rng::stream;
use crate::tensor::{AttentionMask, Element, NodeId, Tape, Tensor};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: u32,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 512,
            max_len: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff <= self.d_model {
            return Err(Error::Config(format!(
                "d_ff {} must exceed d_model {}",
                self.d_ff, self.d_model
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab_size must cover the special ids".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

enum Init {
    Gauss,
    Zeros,
    Ones,
}

/// Parameter names with shapes, in the canonical (file and optimizer) order.
fn param_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("embed.tok".to_string(), cfg.vocab_size as usize, d, Init::Gauss),
        ("embed.pos".to_string(), cfg.max_len, d, Init::Gauss),
    ];
    for i in 0..cfg.n_layers {
        out.push((format!("layer.{i}.ln1.gain"), 1, d, Init::Ones));
        out.push((format!("layer.{i}.ln1.bias"), 1, d, Init::Zeros));
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("layer.{i}.attn.{w}"), d, d, Init::Gauss));
        }
        out.push((format!("layer.{i}.ln2.gain"), 1, d, Init::Ones));
        out.push((format!("layer.{i}.ln2.bias"), 1, d, Init::Zeros));
        out.push((format!("layer.{i}.ffn.up"), d, cfg.d_ff, Init::Gauss));
        out.push((format!("layer.{i}.ffn.down"), cfg.d_ff, d, Init::Gauss));
    }
    out.push(("norm.gain".to_string(), 1, d, Init::Ones));
    out.push(("norm.bias".to_string(), 1, d, Init::Zeros));
    out
}

#[derive(Debug, Clone)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    /// Insertion order is the canonical parameter order.
    pub tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Element> ModelParams<T> {
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Rebuild from named tensors, validating the full canonical table is
    /// present with the right shapes. Extra names are ignored so callers can
    /// pass a checkpoint's whole array map.
    pub fn from_tensors(cfg: &ModelConfig, source: &IndexMap<String, Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = IndexMap::new();
        for (name, rows, cols) in parameter_table(cfg) {
            let t = source.get(&name).ok_or_else(|| {
                Error::Checkpoint(format!("missing model parameter {name}"))
            })?;
            if t.shape() != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape [{}, {}], expected [{rows}, {cols}]",
                    t.rows(),
                    t.cols()
                )));
            }
            tensors.insert(name, t.clone());
        }
        Ok(ModelParams {
            config: *cfg,
            tensors,
        })
    }
}

/// The canonical parameter table as (name, rows, cols).
pub fn parameter_table(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    param_shapes(cfg)
        .into_iter()
        .map(|(name, rows, cols, _)| (name, rows, cols))
        .collect()
}

/// Gaussian(0, 0.02) matrices, unit layer-norm gains, zero biases;
/// deterministic per seed.
pub fn init_params<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = stream(seed, "model.init");
    let mut tensors = IndexMap::new();
    for (name, rows, cols, init) in param_shapes(cfg) {
        let t = match init {
            Init::Gauss => Tensor::randn(rows, cols, 0.02, &mut rng),
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Ones => Tensor::filled(rows, cols, T::ONE),
        };
        tensors.insert(name, t);
    }
    Ok(ModelParams { config: *cfg, tensors })
}

/// Closed-form parameter count for a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_shapes(cfg).iter().map(|(_, r, c, _)| r * c).sum()
}

/// Put every parameter on the tape, marking gradients only where `trainable`
/// says so. Frozen parameters cost nothing in the backward pass.
pub fn stage_params<T: Element>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    trainable: &dyn Fn(&str) -> bool,
) -> IndexMap<String, NodeId> {
    params
        .tensors
        .iter()
        .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), trainable(name))))
        .collect()
}

/// Attention probability nodes recorded during a forward pass, one per
/// (row, layer, head), for tests that inspect the distribution.
pub struct ForwardTrace {
    pub attn_probs: Vec<NodeId>,
}

/// Forward pass over `rows` packed sequences of length `seq_len` (row-major
/// flat `inputs`), each row under its own attention mask. Returns logits
/// as a `[rows*seq_len, vocab]` node.
pub fn forward<T: Element>(
    tape: &mut Tape<T>,
    nodes: &IndexMap<String, NodeId>,
    cfg: &ModelConfig,
    inputs: &[u32],
    rows: usize,
    seq_len: usize,
    masks: &[Arc<AttentionMask>],
) -> Result<NodeId> {
    Ok(forward_traced(tape, nodes, cfg, inputs, rows, seq_len, masks)?.0)
}

pub fn forward_traced<T: Element>(
    tape: &mut Tape<T>,
    nodes: &IndexMap<String, NodeId>,
    cfg: &ModelConfig,
    inputs: &[u32],
    rows: usize,
    seq_len: usize,
    masks: &[Arc<AttentionMask>],
) -> Result<(NodeId, ForwardTrace)> {
    if seq_len > cfg.max_len {
        return Err(Error::TooLong {
            len: seq_len,
            max_len: cfg.max_len,
        });
    }
    if inputs.len() != rows * seq_len || masks.len() != rows {
        return Err(Error::Data(format!(
            "forward got {} ids and {} masks for {} rows of length {}",
            inputs.len(),
            masks.len(),
            rows,
            seq_len
        )));
    }
    for m in masks {
        if m.size() != seq_len {
            return Err(Error::Data(format!(
                "attention mask is {}x{0} but rows have length {seq_len}",
                m.size()
            )));
        }
    }
    let p = |name: &str| -> NodeId { nodes[name] };

    // Token + position embeddings, positions repeating per row.
    let tok = tape.embedding_lookup(p("embed.tok"), inputs)?;
    let pos_ids: Vec<u32> = (0..rows)
        .flat_map(|_| (0..seq_len as u32).collect::<Vec<_>>())
        .collect();
    let pos = tape.embedding_lookup(p("embed.pos"), &pos_ids)?;
    let mut x = tape.add(tok, pos)?;

    let dh = cfg.head_dim();
    let att_scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut trace = ForwardTrace { attn_probs: Vec::new() };

    for i in 0..cfg.n_layers {
        let l = |part: &str| -> NodeId { p(&format!("layer.{i}.{part}")) };

        let h = tape.layer_norm(x, l("ln1.gain"), l("ln1.bias"))?;
        let q = tape.matmul(h, l("attn.wq"))?;
        let k = tape.matmul(h, l("attn.wk"))?;
        let v = tape.matmul(h, l("attn.wv"))?;

        // Attention runs per (row, head) on [seq_len, dh] blocks.
        let mut row_outputs = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut head_outputs = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let qs = tape.slice_block(q, r * seq_len, seq_len, hd * dh, dh)?;
                let ks = tape.slice_block(k, r * seq_len, seq_len, hd * dh, dh)?;
                let vs = tape.slice_block(v, r * seq_len, seq_len, hd * dh, dh)?;
                let kt = tape.transpose(ks);
                let scores = tape.matmul(qs, kt)?;
                let scaled = tape.scale(scores, att_scale);
                let probs = tape.masked_softmax_rows(scaled, &masks[r])?;
                trace.attn_probs.push(probs);
                // Sequential reduction: a position's context must not shift
                // bits when the sequence grows, or cached decoding could not
                // replay training-time values.
                head_outputs.push(tape.matmul_seq(probs, vs)?);
            }
            row_outputs.push(tape.concat_cols(&head_outputs)?);
        }
        let ctx = tape.concat_rows(&row_outputs)?;
        let attn_out = tape.matmul(ctx, l("attn.wo"))?;
        x = tape.add(x, attn_out)?;

        let h2 = tape.layer_norm(x, l("ln2.gain"), l("ln2.bias"))?;
        let up = tape.matmul(h2, l("ffn.up"))?;
        let act = tape.gelu(up);
        let down = tape.matmul(act, l("ffn.down"))?;
        x = tape.add(x, down)?;
    }

    let xn = tape.layer_norm(x, p("norm.gain"), p("norm.bias"))?;
    // Weight tying: logits through the transposed token embedding.
    let et = tape.transpose(p("embed.tok"));
    let logits = tape.matmul(xn, et)?;
    Ok((logits, trace))
}

/// Forward over an objectives `Batch`.
pub fn forward_batch<T: Element>(
    tape: &mut Tape<T>,
    nodes: &IndexMap<String, NodeId>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<NodeId> {
    forward(
        tape,
        nodes,
        cfg,
        &batch.inputs,
        batch.rows,
        batch.seq_len,
        &batch.masks,
    )
}
