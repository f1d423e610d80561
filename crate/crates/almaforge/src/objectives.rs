//! Training batch construction for the three fine-tuning objectives:
//!
//! * causal LM: predict every supervised next token under a causal mask;
//! * prefix LM: the prompt block attends bidirectionally, loss outside it;
//! * denoiser mixture: per example, sample span corruption (regular or
//!   extreme) or fall through to prefix LM ("sequential"), 25/25/50.
//!
//! A batch is a padded rectangle of rows plus per-row attention masks;
//! labels are the inputs shifted left by one, with pad labels masked out.

use crate::error::{Error, Result};
use crate::prompt::PromptedExample;
use crate::tensor::AttentionMask;
use crate::vocab::{Vocab, EOS, PAD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// What to do with examples longer than `max_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Refuse the batch.
    Reject,
    /// Keep the first `max_len` tokens.
    Tail,
}

/// A rectangular training batch. `inputs`, `labels` and `loss_mask` are
/// `rows * seq_len`, row-major; `labels[r][t] = inputs[r][t+1]`, and the
/// final position of each row carries PAD with mask 0.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: usize,
    pub seq_len: usize,
    pub inputs: Vec<u32>,
    pub labels: Vec<u32>,
    pub loss_mask: Vec<u8>,
    /// Attention mask per row; rows share masks via `Arc`.
    pub masks: Vec<Arc<AttentionMask>>,
    /// Number of mask=1 label positions.
    pub supervised: usize,
}

impl Batch {
    pub fn input_row(&self, r: usize) -> &[u32] {
        &self.inputs[r * self.seq_len..(r + 1) * self.seq_len]
    }

    pub fn label_row(&self, r: usize) -> &[u32] {
        &self.labels[r * self.seq_len..(r + 1) * self.seq_len]
    }

    pub fn mask_row(&self, r: usize) -> &[u8] {
        &self.loss_mask[r * self.seq_len..(r + 1) * self.seq_len]
    }
}

/// One row before padding: token ids, per-token supervision, and the length
/// of the bidirectional prefix (0 means fully causal).
struct RawRow {
    ids: Vec<u32>,
    supervise: Vec<u8>,
    prefix_len: usize,
}

fn truncate_row(mut row: RawRow, max_len: usize, trunc: Truncation) -> Result<RawRow> {
    if row.ids.len() > max_len {
        match trunc {
            Truncation::Reject => {
                return Err(Error::TooLong {
                    len: row.ids.len(),
                    max_len,
                })
            }
            Truncation::Tail => {
                row.ids.truncate(max_len);
                row.supervise.truncate(max_len);
                row.prefix_len = row.prefix_len.min(max_len);
            }
        }
    }
    Ok(row)
}

/// Pad rows to a rectangle and shift to build labels.
fn assemble(rows: Vec<RawRow>, use_prefix_masks: bool) -> Result<Batch> {
    if rows.is_empty() {
        return Err(Error::Data("cannot build a batch from zero examples".into()));
    }
    let seq_len = rows.iter().map(|r| r.ids.len()).max().expect("nonempty");
    let n = rows.len();
    let mut inputs = vec![PAD; n * seq_len];
    let mut labels = vec![PAD; n * seq_len];
    let mut loss_mask = vec![0u8; n * seq_len];
    let mut masks = Vec::with_capacity(n);
    let causal: Arc<AttentionMask> = Arc::new(AttentionMask::causal(seq_len));
    let mut supervised = 0usize;

    for (r, row) in rows.iter().enumerate() {
        let base = r * seq_len;
        let len = row.ids.len();
        inputs[base..base + len].copy_from_slice(&row.ids);
        for t in 0..len.saturating_sub(1) {
            labels[base + t] = row.ids[t + 1];
            let m = row.supervise[t + 1];
            loss_mask[base + t] = m;
            supervised += m as usize;
        }
        if use_prefix_masks && row.prefix_len > 0 {
            masks.push(Arc::new(
                AttentionMask::prefix(row.prefix_len, seq_len).expect("prefix <= len <= seq_len"),
            ));
        } else {
            masks.push(Arc::clone(&causal));
        }
    }
    if supervised == 0 {
        return Err(Error::NoSupervisedPositions);
    }
    Ok(Batch {
        rows: n,
        seq_len,
        inputs,
        labels,
        loss_mask,
        masks,
        supervised,
    })
}

/// Causal-LM batch: strictly causal attention, supervision wherever the
/// examples mark it (prompt positions are 0, all positions for plain text).
pub fn make_clm_batch(
    examples: &[PromptedExample],
    max_len: usize,
    trunc: Truncation,
) -> Result<Batch> {
    let rows = examples
        .iter()
        .map(|ex| {
            truncate_row(
                RawRow {
                    ids: ex.input_ids.clone(),
                    supervise: ex.loss_mask.clone(),
                    prefix_len: 0,
                },
                max_len,
                trunc,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(rows, false)
}

/// Prefix-LM batch: each row's prompt block is bidirectional, supervision
/// restricted to positions outside the prefix.
pub fn make_prefix_lm_batch(
    examples: &[PromptedExample],
    max_len: usize,
    trunc: Truncation,
) -> Result<Batch> {
    let rows = examples
        .iter()
        .map(|ex| {
            truncate_row(
                RawRow {
                    ids: ex.input_ids.clone(),
                    supervise: ex.loss_mask.clone(),
                    prefix_len: ex.prompt_len,
                },
                max_len,
                trunc,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(rows, true)
}

/// Square prefix attention mask: `(i, j)` allowed iff `j <= i` or both fall
/// inside the prefix block.
pub fn build_prefix_mask(prefix_len: usize, total_len: usize) -> Result<AttentionMask> {
    AttentionMask::prefix(prefix_len, total_len).map_err(Error::from)
}

/// Denoiser family, sampled per example during mixture-of-denoisers training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenoiserKind {
    Regular,
    Extreme,
    Sequential,
}

/// Span-corruption parameters. The canonical constructors pin the published
/// settings; tests may build custom rates directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserTask {
    pub kind: DenoiserKind,
    pub mean_span: f64,
    pub corruption_rate: f64,
}

impl DenoiserTask {
    /// Short spans, light corruption: mean length 3, rate 0.15.
    pub fn regular() -> Self {
        Self {
            kind: DenoiserKind::Regular,
            mean_span: 3.0,
            corruption_rate: 0.15,
        }
    }

    /// Long spans, aggressive corruption: mean length 32, rate 0.25.
    pub fn extreme() -> Self {
        Self {
            kind: DenoiserKind::Extreme,
            mean_span: 32.0,
            corruption_rate: 0.25,
        }
    }

    /// Prefix language modeling; carries no span parameters.
    pub fn sequential() -> Self {
        Self {
            kind: DenoiserKind::Sequential,
            mean_span: 0.0,
            corruption_rate: 0.0,
        }
    }
}

/// Draw a denoiser: Regular 25%, Extreme 25%, Sequential 50%.
pub fn sample_denoiser(rng: &mut ChaCha8Rng) -> DenoiserTask {
    let u: f64 = rng.random();
    if u < 0.25 {
        DenoiserTask::regular()
    } else if u < 0.5 {
        DenoiserTask::extreme()
    } else {
        DenoiserTask::sequential()
    }
}

/// Uniformly random composition of `n` into `k` positive parts.
///
/// Draws `k - 1` distinct cut points from `1..n` by a partial Fisher-Yates
/// pass (one `random_range(i..len)` draw per cut, in order), then sorts.
fn random_composition(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(k >= 1 && n >= k);
    if k == 1 {
        return vec![n];
    }
    let mut slots: Vec<usize> = (1..n).collect();
    for i in 0..k - 1 {
        let j = rng.random_range(i..slots.len());
        slots.swap(i, j);
    }
    let mut cuts: Vec<usize> = slots[..k - 1].to_vec();
    cuts.sort_unstable();
    let mut parts = Vec::with_capacity(k);
    let mut prev = 0;
    for c in &cuts {
        parts.push(c - prev);
        prev = *c;
    }
    parts.push(n - prev);
    parts
}

/// T5-style span corruption.
///
/// `num_noise = round(rate * L)`; when that is zero the input is returned
/// unchanged with an empty target. Otherwise `num_spans = max(1,
/// round(num_noise / mean_span))` spans are laid out as alternating
/// kept/noise segments (`kept_1 noise_1 ... kept_k noise_k`, every segment
/// nonempty), which keeps noise spans non-adjacent. Draw order: the noise
/// composition first, then the kept composition.
///
/// Returns `(corrupted_input, target)` where each span in the input is
/// replaced by one sentinel from `vocab`'s reserved block and the target is
/// `sentinel_0 span_0 sentinel_1 span_1 ... EOS`.
pub fn corrupt_spans(
    tokens: &[u32],
    task: &DenoiserTask,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let l = tokens.len();
    if l < 2 {
        return Err(Error::SequenceTooShort {
            len: l,
            spans: 1,
            noise: 1,
        });
    }
    let mut num_noise = (task.corruption_rate * l as f64).round() as usize;
    if num_noise == 0 {
        return Ok((tokens.to_vec(), Vec::new()));
    }
    // Keep at least one token so the leading kept segment exists.
    num_noise = num_noise.min(l - 1);
    let num_spans = ((num_noise as f64 / task.mean_span).round() as usize).max(1);
    if num_spans > vocab.num_sentinels() as usize {
        return Err(Error::SentinelBudget {
            spans: num_spans,
            budget: vocab.num_sentinels() as usize,
        });
    }
    let num_kept = l - num_noise;
    if num_kept < num_spans || num_noise < num_spans {
        return Err(Error::SequenceTooShort {
            len: l,
            spans: num_spans,
            noise: num_noise,
        });
    }
    let noise_parts = random_composition(num_noise, num_spans, rng);
    let kept_parts = random_composition(num_kept, num_spans, rng);

    let mut input = Vec::with_capacity(num_kept + num_spans);
    let mut target = Vec::with_capacity(num_noise + num_spans + 1);
    let mut pos = 0;
    for s in 0..num_spans {
        input.extend_from_slice(&tokens[pos..pos + kept_parts[s]]);
        pos += kept_parts[s];
        let sentinel = vocab.sentinel(s as u32)?;
        input.push(sentinel);
        target.push(sentinel);
        target.extend_from_slice(&tokens[pos..pos + noise_parts[s]]);
        pos += noise_parts[s];
    }
    debug_assert_eq!(pos, l);
    target.push(EOS);
    Ok((input, target))
}

/// Splice a corruption target back into the input. Test oracle for the
/// reconstruction invariant.
pub fn splice_reconstruction(input: &[u32], target: &[u32], vocab: &Vocab) -> Vec<u32> {
    let mut spans: Vec<Vec<u32>> = Vec::new();
    for id in target {
        if *id == EOS {
            break;
        }
        if vocab.is_sentinel(*id) {
            spans.push(Vec::new());
        } else if let Some(last) = spans.last_mut() {
            last.push(*id);
        }
    }
    let mut out = Vec::new();
    for id in input {
        if let Some(k) = vocab.sentinel_index(*id) {
            if let Some(span) = spans.get(k as usize) {
                out.extend_from_slice(span);
            }
        } else {
            out.push(*id);
        }
    }
    out
}

/// Mixture-of-denoisers batch. Per example, `sample_denoiser` picks the
/// objective: span corruption makes a `corrupted ++ target` row whose
/// corrupted part is a bidirectional prefix; Sequential falls through to
/// prefix LM on the example itself (plain text gets a random split point).
/// Corruptions that would be degenerate (no noise tokens, or too short)
/// fall back to the sequential treatment.
pub fn make_mod_batch(
    examples: &[PromptedExample],
    vocab: &Vocab,
    max_len: usize,
    trunc: Truncation,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let mut rows = Vec::with_capacity(examples.len());
    for ex in examples {
        let task = sample_denoiser(rng);
        let row = match task.kind {
            DenoiserKind::Regular | DenoiserKind::Extreme => {
                // Corrupt the raw token sequence without its terminal EOS.
                let body: &[u32] = match ex.input_ids.split_last() {
                    Some((last, rest)) if *last == EOS => rest,
                    _ => &ex.input_ids,
                };
                match corrupt_spans(body, &task, vocab, rng) {
                    Ok((_, ref target)) if target.is_empty() => sequential_row(ex, rng),
                    Ok((input, target)) => {
                        let prefix_len = input.len();
                        let mut ids = input;
                        ids.extend(&target);
                        let mut supervise = vec![0u8; prefix_len];
                        supervise.extend(std::iter::repeat(1u8).take(target.len()));
                        RawRow {
                            ids,
                            supervise,
                            prefix_len,
                        }
                    }
                    Err(Error::SequenceTooShort { .. }) => sequential_row(ex, rng),
                    Err(e) => return Err(e),
                }
            }
            DenoiserKind::Sequential => sequential_row(ex, rng),
        };
        rows.push(truncate_row(row, max_len, trunc)?);
    }
    assemble(rows, true)
}

/// Prefix-LM row: prompted examples use their prompt as the prefix; plain
/// text splits at a uniformly random interior point.
fn sequential_row(ex: &PromptedExample, rng: &mut ChaCha8Rng) -> RawRow {
    let len = ex.input_ids.len();
    let prefix_len = if ex.prompt_len > 0 {
        ex.prompt_len
    } else {
        rng.random_range(1..len.max(2))
    };
    let mut supervise = vec![0u8; len];
    for (t, s) in supervise.iter_mut().enumerate().skip(prefix_len) {
        *s = ex.loss_mask[t];
    }
    RawRow {
        ids: ex.input_ids.clone(),
        supervise,
        prefix_len,
    }
}
