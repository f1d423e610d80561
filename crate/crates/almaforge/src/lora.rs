//! Low-rank adapters on the FFN down-projections.
//!
//! Each target weight W [d_in, d_out] gets A [r, d_out] (Gaussian) and
//! B [d_in, r] (zeros); the forward path uses W_eff = W + (alpha/r)·B·A.
//! B starting at zero makes the initial delta exactly zero, so an adapted
//! model is bit-identical to the base model until training moves B.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::stream;
use crate::tensor::{product, Element, NodeId, Tape, Tensor};
use indexmap::IndexMap;

#[derive(Debug, Clone)]
pub struct LowRankPair<T = f32> {
    /// [rank, d_out], Gaussian(0, 0.02) at creation.
    pub a: Tensor<T>,
    /// [d_in, rank], zero at creation.
    pub b: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct AdapterSet<T = f32> {
    pub rank: usize,
    pub alpha: f64,
    /// Target weight name → its adapter pair, in model parameter order.
    pub pairs: IndexMap<String, LowRankPair<T>>,
    /// Targets where rank brings no compression (r ≥ min(d_in, d_out)).
    pub warnings: Vec<String>,
}

/// `*`-wildcard name matching: `*` spans any run of characters.
fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == parts.len() - 1 {
            return rest.ends_with(part);
        } else {
            match rest.find(part) {
                Some(at) => rest = &rest[at + part.len()..],
                None => return false,
            }
        }
    }
    // Pattern ends with '*' (or consumed everything).
    true
}

/// Scalars a LoRA pair trains for a `[d_in, d_out]` target.
pub fn pair_param_count(d_in: usize, d_out: usize, rank: usize) -> u64 {
    rank as u64 * (d_in as u64 + d_out as u64)
}

impl<T: Element> AdapterSet<T> {
    /// Adapter delta scale, alpha / rank.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Exact number of scalars receiving gradients when training adapters.
    pub fn count_trainable(&self) -> u64 {
        self.pairs
            .values()
            .map(|p| pair_param_count(p.b.rows(), p.a.cols(), self.rank))
            .sum()
    }

    /// Adapter tensors under the checkpoint name prefix `lora/`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(self.pairs.len() * 2);
        for (target, pair) in &self.pairs {
            out.push((format!("lora/{target}.a"), &pair.a));
            out.push((format!("lora/{target}.b"), &pair.b));
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let rest = name.strip_prefix("lora/")?;
        if let Some(target) = rest.strip_suffix(".a") {
            return self.pairs.get_mut(target).map(|p| &mut p.a);
        }
        if let Some(target) = rest.strip_suffix(".b") {
            return self.pairs.get_mut(target).map(|p| &mut p.b);
        }
        None
    }
}

/// Attach rank-`rank` adapters to every parameter matching `pattern`.
/// A is Gaussian(0, 0.02) seeded per target name, B is zero.
pub fn inject<T: Element>(
    params: &ModelParams<T>,
    rank: usize,
    alpha: f64,
    pattern: &str,
    seed: u64,
) -> Result<AdapterSet<T>> {
    if rank == 0 {
        return Err(Error::Config("adapter rank must be at least 1".into()));
    }
    let mut pairs = IndexMap::new();
    let mut warnings = Vec::new();
    for (name, w) in &params.tensors {
        if !glob_match(pattern, name) {
            continue;
        }
        let (d_in, d_out) = w.shape();
        if rank >= d_in.min(d_out) {
            warnings.push(format!(
                "adapter rank {rank} on {name} [{d_in}, {d_out}] brings no compression"
            ));
        }
        let mut rng = stream(seed, &format!("lora.init.{name}"));
        pairs.insert(
            name.clone(),
            LowRankPair {
                a: Tensor::randn(rank, d_out, 0.02, &mut rng),
                b: Tensor::zeros(d_in, rank),
            },
        );
    }
    if pairs.is_empty() {
        let available: Vec<&str> = params.tensors.keys().map(String::as_str).collect();
        return Err(Error::Config(format!(
            "adapter pattern {pattern:?} matches no parameters; available: {}",
            available.join(", ")
        )));
    }
    Ok(AdapterSet {
        rank,
        alpha,
        pairs,
        warnings,
    })
}

/// The published down-projection target.
pub const DOWN_PROJECTION_PATTERN: &str = "*.ffn.down";

/// Stage a model with adapters on a tape: base weights enter frozen, A and B
/// enter trainable, and each target's forward node becomes
/// `W + (alpha/r)·B·A`. Returns the forward node map and the trainable
/// leaves keyed by their checkpoint names (`lora/{target}.{a,b}`).
pub fn stage_adapted<T: Element>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    adapters: &AdapterSet<T>,
) -> Result<(IndexMap<String, NodeId>, IndexMap<String, NodeId>)> {
    let scale = T::from_f64(adapters.scale());
    let mut nodes = IndexMap::with_capacity(params.tensors.len());
    let mut trainable = IndexMap::with_capacity(adapters.pairs.len() * 2);
    for (name, w) in &params.tensors {
        let base = tape.leaf(w.clone(), false);
        let node = match adapters.pairs.get(name) {
            None => base,
            Some(pair) => {
                if pair.b.rows() != w.rows() || pair.a.cols() != w.cols() {
                    return Err(Error::Config(format!(
                        "adapter for {name} has shape B[{}, {}]·A[{}, {}] but the target is [{}, {}]",
                        pair.b.rows(),
                        pair.b.cols(),
                        pair.a.rows(),
                        pair.a.cols(),
                        w.rows(),
                        w.cols()
                    )));
                }
                let a = tape.leaf(pair.a.clone(), true);
                let b = tape.leaf(pair.b.clone(), true);
                trainable.insert(format!("lora/{name}.a"), a);
                trainable.insert(format!("lora/{name}.b"), b);
                let delta = tape.matmul(b, a)?;
                let scaled = tape.scale(delta, scale);
                tape.add(base, scaled)?
            }
        };
        nodes.insert(name.clone(), node);
    }
    Ok((nodes, trainable))
}

/// Fold the adapter deltas into the base weights: W ← W + (alpha/r)·B·A.
/// Merging the same adapters twice doubles the delta; reset or discard the
/// set after merging.
pub fn merge(params: &ModelParams<f32>, adapters: &AdapterSet<f32>) -> Result<ModelParams<f32>> {
    let mut merged = params.clone();
    let scale = adapters.scale() as f32;
    for (name, pair) in &adapters.pairs {
        let w = merged
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("merge target {name} not in the model")))?;
        if pair.b.rows() != w.rows() || pair.a.cols() != w.cols() || pair.b.cols() != pair.a.rows()
        {
            return Err(Error::Config(format!(
                "adapter for {name} has shape B[{}, {}]·A[{}, {}] but the target is [{}, {}]",
                pair.b.rows(),
                pair.b.cols(),
                pair.a.rows(),
                pair.a.cols(),
                w.rows(),
                w.cols()
            )));
        }
        let delta = product(&pair.b, &pair.a);
        for (wv, dv) in w.data_mut().iter_mut().zip(delta.data()) {
            *wv += scale * dv;
        }
    }
    Ok(merged)
}
