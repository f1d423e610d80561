//! The two-stage training loop: optimizer, schedule, accumulation, and
//! checkpoint selection.
//!
//! Stage 1 fine-tunes every weight on packed monolingual rows drawn from the
//! language mixture. Stage 2 fine-tunes on prompted parallel pairs, either
//! full-weight or through low-rank adapters. Both stages share one loop; the
//! differences live entirely in the data and the staged parameter set.

pub mod checkpoint;
pub mod optim;
pub mod schedule;

pub use checkpoint::{Checkpoint, LoraMeta, ValPoint};
pub use optim::{AdamW, GradAccum};
pub use schedule::{DecayKind, Schedule};

use crate::error::{Error, Result};
use crate::lora::{stage_adapted, AdapterSet};
use crate::model::{forward, stage_params, ModelParams};
use crate::objectives::{
    make_clm_batch, make_mod_batch, make_prefix_lm_batch, Batch, Truncation,
};
use crate::prompt::{packed_example, PromptedExample};
use crate::rng::stream;
use crate::tensor::{NodeId, Tape};
use crate::vocab::{Vocab, EOS};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainable {
    #[default]
    Full,
    Lora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Clm,
    Prefix,
    Mod,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// 1 = monolingual mixture, 2 = parallel pairs.
    pub stage: u8,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub micro_batch: usize,
    pub accum_steps: usize,
    /// Must equal micro_batch × accum_steps; spelled out so configs state
    /// the batch the recipe was tuned for.
    pub effective_batch: usize,
    pub max_seq_len: usize,
    /// Stage-1 stopping criterion, in whitespace words drawn from the mix.
    pub token_budget: Option<u64>,
    /// Stage-2 stopping criterion, passes over the pair set.
    pub epochs: Option<usize>,
    pub decay_kind: DecayKind,
    pub seed: u64,
    pub trainable: Trainable,
    pub objective: Objective,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            peak_lr: 2e-5,
            warmup_ratio: 0.01,
            weight_decay: 0.01,
            micro_batch: 16,
            accum_steps: 16,
            effective_batch: 256,
            max_seq_len: 512,
            token_budget: None,
            epochs: None,
            decay_kind: DecayKind::InvSqrtToZero,
            seed: 42,
            trainable: Trainable::Full,
            objective: Objective::Clm,
            lora_rank: 16,
            lora_alpha: 16.0,
        }
    }
}

impl TrainConfig {
    pub fn stage1(token_budget: u64) -> Self {
        Self {
            stage: 1,
            token_budget: Some(token_budget),
            ..Self::default()
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            epochs: Some(2),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!(
                "stage must be 1 or 2, got {}",
                self.stage
            )));
        }
        if self.micro_batch == 0 || self.accum_steps == 0 {
            return Err(Error::Config(
                "micro_batch and accum_steps must be positive".into(),
            ));
        }
        if self.effective_batch != self.micro_batch * self.accum_steps {
            return Err(Error::Config(format!(
                "effective_batch {} != micro_batch {} × accum_steps {}",
                self.effective_batch, self.micro_batch, self.accum_steps
            )));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return Err(Error::Config(format!(
                "warmup_ratio must be in (0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        match (self.stage, self.token_budget, self.epochs) {
            (1, Some(_), None) | (2, None, Some(_)) => {}
            (1, _, _) => {
                return Err(Error::Config(
                    "stage 1 takes token_budget and no epochs".into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "stage 2 takes epochs and no token_budget".into(),
                ))
            }
        }
        if self.stage == 2 && self.epochs == Some(0) {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.stage == 1 && self.trainable == Trainable::Lora {
            return Err(Error::Config(
                "stage 1 trains full weights; adapters belong to stage 2".into(),
            ));
        }
        if self.trainable == Trainable::Lora && self.lora_rank == 0 {
            return Err(Error::Config("lora_rank must be at least 1".into()));
        }
        Ok(())
    }

    /// Stable fingerprint of the configuration, embedded in checkpoints so
    /// an artifact names the recipe that produced it.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("fnv1a:{h:016x}")
    }
}

/// Everything the optimizer mutates: base weights and, for stage-2 LoRA,
/// the adapter pairs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adapters: Option<AdapterSet<f32>>,
}

impl TrainState {
    pub fn full(params: ModelParams<f32>) -> Self {
        Self {
            params,
            adapters: None,
        }
    }

    /// Weights ready for inference: base parameters with any adapters
    /// folded in.
    pub fn merged(&self) -> Result<ModelParams<f32>> {
        match &self.adapters {
            None => Ok(self.params.clone()),
            Some(a) => crate::lora::merge(&self.params, a),
        }
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut crate::tensor::Tensor<f32>> {
        if name.starts_with("lora/") {
            self.adapters.as_mut()?.tensor_mut(name)
        } else {
            self.params.tensors.get_mut(name)
        }
    }

    /// Stage on a tape: returns the forward node map and the trainable
    /// leaves keyed by the names the optimizer and checkpoints use.
    fn stage_on(
        &self,
        tape: &mut Tape<f32>,
    ) -> Result<(IndexMap<String, NodeId>, IndexMap<String, NodeId>)> {
        match &self.adapters {
            None => {
                let nodes = stage_params(tape, &self.params, &|_| true);
                let trainable = nodes.clone();
                Ok((nodes, trainable))
            }
            Some(adapters) => stage_adapted(tape, &self.params, adapters),
        }
    }

    pub fn to_checkpoint(
        &self,
        digest: &str,
        step: u64,
        val_history: Vec<ValPoint>,
    ) -> Checkpoint {
        let mut arrays = self.params.tensors.clone();
        let lora = self.adapters.as_ref().map(|a| {
            for (name, t) in a.named_tensors() {
                arrays.insert(name, t.clone());
            }
            LoraMeta {
                rank: a.rank,
                alpha: a.alpha,
            }
        });
        Checkpoint {
            model: self.params.config,
            train_digest: digest.to_string(),
            step,
            lora,
            val_history,
            arrays,
        }
    }
}

/// Training rows plus a held-out slice for validation-based selection.
#[derive(Debug, Clone, Default)]
pub struct StageData {
    pub train: Vec<PromptedExample>,
    pub val: Vec<PromptedExample>,
}

/// Concatenate documents (with EOS separators) and cut fixed-length rows.
/// Every position of every row is supervised; nothing is padded away. The
/// trailing remainder shorter than `pack_len` is dropped.
pub fn pack_documents<I>(docs: I, vocab: &Vocab, pack_len: usize, pair: &str) -> Result<Vec<PromptedExample>>
where
    I: IntoIterator<Item = Result<(String, String)>>,
{
    if pack_len < 2 {
        return Err(Error::Config("pack_len must be at least 2".into()));
    }
    let mut rows = Vec::new();
    let mut buf: Vec<u32> = Vec::with_capacity(pack_len * 2);
    for doc in docs {
        let (_lang, text) = doc?;
        buf.extend(vocab.encode(&text));
        buf.push(EOS);
        while buf.len() >= pack_len {
            let rest = buf.split_off(pack_len);
            rows.push(packed_example(std::mem::replace(&mut buf, rest), pair));
        }
    }
    Ok(rows)
}

fn build_batch(
    objective: Objective,
    rows: &[PromptedExample],
    vocab: &Vocab,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    match objective {
        Objective::Clm => make_clm_batch(rows, max_len, Truncation::Tail),
        Objective::Prefix => {
            // Plain rows get a random split point; prompted rows already
            // carry their prefix.
            let rows: Vec<PromptedExample> = rows
                .iter()
                .map(|ex| {
                    let mut ex = ex.clone();
                    if ex.prompt_len == 0 && ex.input_ids.len() >= 2 {
                        let k = rng.random_range(1..ex.input_ids.len());
                        ex.prompt_len = k;
                        for m in &mut ex.loss_mask[..k] {
                            *m = 0;
                        }
                    }
                    ex
                })
                .collect();
            make_prefix_lm_batch(&rows, max_len, Truncation::Tail)
        }
        Objective::Mod => make_mod_batch(rows, vocab, max_len, Truncation::Tail, rng),
    }
}

/// One forward pass worth of loss statistics, no gradients.
fn batch_loss(state: &TrainState, batch: &Batch) -> Result<(f64, usize)> {
    let mut tape: Tape<f32> = Tape::new();
    let (nodes, _) = state.stage_on(&mut tape)?;
    let logits = forward(
        &mut tape,
        &nodes,
        &state.params.config,
        &batch.inputs,
        batch.rows,
        batch.seq_len,
        &batch.masks,
    )?;
    let (_, stats) = tape.masked_cross_entropy(logits, &batch.labels, &batch.loss_mask)?;
    Ok((stats.sum, stats.count))
}

/// Mean masked NLL over a validation set, deterministic per config seed.
pub fn validation_loss(
    cfg: &TrainConfig,
    vocab: &Vocab,
    state: &TrainState,
    val: &[PromptedExample],
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut rng = stream(cfg.seed, "val.denoise");
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in val.chunks(cfg.micro_batch) {
        let batch = build_batch(cfg.objective, chunk, vocab, cfg.max_seq_len, &mut rng)?;
        let (s, c) = batch_loss(state, &batch)?;
        sum += s;
        count += c;
    }
    Ok(sum / count.max(1) as f64)
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss seen (ties to the earliest step); equals
    /// `last` when no validation set was supplied.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<ValPoint>,
    pub steps: u64,
    /// Supervised label positions consumed across all optimizer steps.
    pub tokens_supervised: u64,
}

/// A mid-run copy of the weights, taken the first time the supervised-token
/// counter reaches the requested milestone.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub milestone: u64,
    /// Supervised tokens actually consumed when the copy was taken; at
    /// least `milestone` except when the run ended short of it.
    pub tokens_seen: u64,
    pub step: u64,
    pub state: TrainState,
}

/// Run one stage to completion. `state` carries the initial weights (and
/// adapters for stage-2 LoRA); the data is consumed in shuffled order, one
/// optimizer step per `effective_batch` examples, validating at every 10%
/// of total progress.
pub fn train_stage(
    cfg: &TrainConfig,
    data: &StageData,
    vocab: &Vocab,
    state: TrainState,
) -> Result<TrainOutcome> {
    let (outcome, _) = train_stage_snapshots(cfg, data, vocab, state, &[])?;
    Ok(outcome)
}

/// `train_stage` that additionally copies the weights at token milestones.
/// Milestone 0 is the untrained input state; a milestone the run never
/// reaches resolves to the final state, so callers always get exactly one
/// snapshot per milestone, in order.
pub fn train_stage_snapshots(
    cfg: &TrainConfig,
    data: &StageData,
    vocab: &Vocab,
    state: TrainState,
    milestones: &[u64],
) -> Result<(TrainOutcome, Vec<Snapshot>)> {
    cfg.validate()?;
    if !milestones.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(
            "snapshot milestones must be strictly increasing".into(),
        ));
    }
    if data.train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.stage == 2 && data.val.is_empty() {
        return Err(Error::Data(
            "stage 2 selects by validation loss; supply a validation set".into(),
        ));
    }
    if cfg.trainable == Trainable::Lora && state.adapters.is_none() {
        return Err(Error::Config(
            "trainable=lora but the state carries no adapters".into(),
        ));
    }

    let mut state = state;
    let n = data.train.len();
    let epochs = cfg.epochs.unwrap_or(1);
    let steps_per_epoch = n.div_ceil(cfg.effective_batch);
    let total_steps = steps_per_epoch * epochs;
    let sched = Schedule::new(cfg.peak_lr, total_steps, cfg.warmup_ratio, cfg.decay_kind)?;
    let val_steps: Vec<usize> = (1..=10)
        .map(|k| (total_steps * k).div_ceil(10))
        .collect();

    let digest = cfg.digest();
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut accum = GradAccum::new();
    let mut denoise_rng = stream(cfg.seed, "train.denoise");
    let mut history: Vec<ValPoint> = Vec::new();
    let mut best: Option<(f64, TrainState, u64)> = None;
    let mut step = 0u64;
    let mut tokens_supervised = 0u64;
    let mut pending = milestones.iter().copied().peekable();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    if pending.peek() == Some(&0) {
        pending.next();
        snapshots.push(Snapshot {
            milestone: 0,
            tokens_seen: 0,
            step: 0,
            state: state.clone(),
        });
    }

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, &format!("train.order.{epoch}")));
        for chunk in order.chunks(cfg.effective_batch) {
            step += 1;
            accum.clear();
            for micro in chunk.chunks(cfg.micro_batch) {
                let rows: Vec<PromptedExample> =
                    micro.iter().map(|i| data.train[*i].clone()).collect();
                let batch =
                    build_batch(cfg.objective, &rows, vocab, cfg.max_seq_len, &mut denoise_rng)?;
                let mut tape: Tape<f32> = Tape::new();
                let (nodes, trainable) = state.stage_on(&mut tape)?;
                let logits = forward(
                    &mut tape,
                    &nodes,
                    &state.params.config,
                    &batch.inputs,
                    batch.rows,
                    batch.seq_len,
                    &batch.masks,
                )?;
                let (loss, stats) =
                    tape.masked_cross_entropy(logits, &batch.labels, &batch.loss_mask)?;
                let mut grads = tape.backward(loss)?;
                for (name, node) in &trainable {
                    if let Some(g) = grads.take(*node) {
                        accum.add(name, &g);
                    }
                }
                accum.add_stats(stats.sum, stats.count);
            }
            if !accum.loss_sum.is_finite() {
                return Err(Error::Diverged { step: step as usize });
            }
            tokens_supervised += accum.token_count as u64;
            let lr = sched.lr_at(step as usize);
            opt.begin_step();
            for (name, g) in accum.normalized() {
                let theta = state
                    .tensor_mut(&name)
                    .unwrap_or_else(|| panic!("trainable tensor {name} missing from state"));
                opt.update(&name, lr, theta, &g);
            }

            while pending.peek().is_some_and(|m| *m <= tokens_supervised) {
                snapshots.push(Snapshot {
                    milestone: pending.next().unwrap(),
                    tokens_seen: tokens_supervised,
                    step,
                    state: state.clone(),
                });
            }

            if val_steps.contains(&(step as usize)) {
                let train_loss = accum.loss_sum / accum.token_count.max(1) as f64;
                if data.val.is_empty() {
                    eprintln!(
                        "stage {}: step {step}/{total_steps}, train loss {train_loss:.4}",
                        cfg.stage
                    );
                } else {
                    let loss = validation_loss(cfg, vocab, &state, &data.val)?;
                    if !loss.is_finite() {
                        return Err(Error::Diverged { step: step as usize });
                    }
                    eprintln!(
                        "stage {}: step {step}/{total_steps}, train loss {train_loss:.4}, \
                         val loss {loss:.4}",
                        cfg.stage
                    );
                    history.push(ValPoint { step, loss });
                    let improved = best.as_ref().is_none_or(|(b, _, _)| loss < *b);
                    if improved {
                        best = Some((loss, state.clone(), step));
                    }
                }
            }
        }
    }

    for milestone in pending {
        snapshots.push(Snapshot {
            milestone,
            tokens_seen: tokens_supervised,
            step,
            state: state.clone(),
        });
    }

    let last = state.to_checkpoint(&digest, step, history.clone());
    let best = match best {
        Some((_, s, at)) => s.to_checkpoint(&digest, at, history.clone()),
        None => last.clone(),
    };
    let outcome = TrainOutcome {
        best,
        last,
        history,
        steps: step,
        tokens_supervised,
    };
    Ok((outcome, snapshots))
}
