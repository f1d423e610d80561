//! Greedy and beam-search decoding over a next-token scorer, plus
//! `ModelScorer`, an incremental forward pass with per-layer key/value
//! caches.
//!
//! The cache never re-runs earlier positions, yet its logits are bitwise
//! equal to the last row of the batch forward over the same ids. That holds
//! because the only reduction spanning the sequence, the attention context
//! product, is strictly sequential: growing the sequence pads a row's sum
//! with exact zeros without regrouping the terms already there. Every other
//! reduction runs over dimensions that do not grow.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{gelu_scalar, matmul_nn, matmul_nn_seq, row_moments, Element, Tensor};
use std::cmp::Ordering;

/// Anything that can score the next token given a growing context. Search
/// drives the scorer through explicit states so hypotheses can fork: states
/// must be cheap enough to clone once per live beam per step.
pub trait TokenScorer {
    type State: Clone;

    /// Number of scorable ids; log-prob vectors have exactly this length.
    fn vocab_size(&self) -> usize;

    /// Consume the prompt, returning the state after it and log-probs for
    /// the first generated token.
    fn start(&self, prompt: &[u32]) -> Result<(Self::State, Vec<f64>)>;

    /// Extend `state` by one token, returning the new state and log-probs
    /// for the position after it. The input state is untouched.
    fn advance(&self, state: &Self::State, token: u32) -> Result<(Self::State, Vec<f64>)>;
}

fn argmax(logp: &[f64]) -> Result<u32> {
    if logp.is_empty() {
        return Err(Error::Data("scorer returned an empty distribution".into()));
    }
    let mut best = 0;
    for (i, v) in logp.iter().enumerate().skip(1) {
        if *v > logp[best] {
            best = i;
        }
    }
    Ok(best as u32)
}

/// Follow the argmax chain until `eos` or `max_new` tokens. Ties pick the
/// lowest token id. The terminating `eos` is not part of the result.
pub fn greedy<S: TokenScorer>(
    scorer: &S,
    prompt: &[u32],
    eos: u32,
    max_new: usize,
) -> Result<Vec<u32>> {
    let (mut state, mut logp) = scorer.start(prompt)?;
    let mut out = Vec::new();
    for _ in 0..max_new {
        let next = argmax(&logp)?;
        if next == eos {
            break;
        }
        out.push(next);
        (state, logp) = scorer.advance(&state, next)?;
    }
    Ok(out)
}

/// A decoded candidate: generated tokens (terminating `eos` excluded),
/// their cumulative log-probability, and whether `eos` was actually reached
/// rather than the length cap.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

struct LiveBeam<S> {
    tokens: Vec<u32>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Highest log-prob first; exact ties break toward the lexicographically
/// smaller token sequence, making every search outcome a total order.
fn rank(a_lp: f64, a_tokens: &[u32], b_lp: f64, b_tokens: &[u32]) -> Ordering {
    b_lp.partial_cmp(&a_lp)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search with cumulative log-probability and no length penalty.
///
/// Each step expands every live hypothesis by every token, keeps the best
/// `beam` candidates, and retires those ending in `eos` to a finished set.
/// Growing a hypothesis can only lower its score, so the search stops early
/// once `beam` finished hypotheses all outscore the best live one. Returns
/// the best finished hypothesis, or the best live one if nothing finished
/// within `max_new` tokens.
pub fn beam_search<S: TokenScorer>(
    scorer: &S,
    prompt: &[u32],
    eos: u32,
    beam: usize,
    max_new: usize,
) -> Result<BeamHypothesis> {
    if beam < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let (state, next) = scorer.start(prompt)?;
    if next.len() != scorer.vocab_size() || next.is_empty() {
        return Err(Error::Data(format!(
            "scorer returned {} log-probs for a vocabulary of {}",
            next.len(),
            scorer.vocab_size()
        )));
    }
    let mut live = vec![LiveBeam {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut done: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..max_new {
        let mut cands: Vec<(f64, Vec<u32>, usize)> = Vec::new();
        for (parent, h) in live.iter().enumerate() {
            for (t, lp) in h.next.iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(t as u32);
                cands.push((h.log_prob + lp, tokens, parent));
            }
        }
        cands.sort_by(|a, b| rank(a.0, &a.1, b.0, &b.1));
        cands.truncate(beam);

        let mut next_live = Vec::with_capacity(beam);
        for (log_prob, mut tokens, parent) in cands {
            let last = *tokens.last().expect("candidates carry at least one token");
            if last == eos {
                tokens.pop();
                done.push(BeamHypothesis {
                    tokens,
                    log_prob,
                    finished: true,
                });
            } else {
                let (state, next) = scorer.advance(&live[parent].state, last)?;
                next_live.push(LiveBeam {
                    tokens,
                    log_prob,
                    state,
                    next,
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        if done.len() >= beam {
            done.sort_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
            let kth = done[beam - 1].log_prob;
            let best_live = live
                .iter()
                .map(|h| h.log_prob)
                .fold(f64::NEG_INFINITY, f64::max);
            if kth >= best_live {
                break;
            }
        }
    }

    if !done.is_empty() {
        done.sort_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
        return Ok(done.swap_remove(0));
    }
    live.sort_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
    let best = live.swap_remove(0);
    Ok(BeamHypothesis {
        tokens: best.tokens,
        log_prob: best.log_prob,
        finished: false,
    })
}

/// Cached projections for one growing sequence: one `[len, head_dim]`
/// row-major block per (layer, head).
#[derive(Debug, Clone)]
pub struct KvState<T> {
    len: usize,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T> KvState<T> {
    /// Positions cached so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

struct LayerWeights<'a, T> {
    ln1_gain: &'a Tensor<T>,
    ln1_bias: &'a Tensor<T>,
    wq: &'a Tensor<T>,
    wk: &'a Tensor<T>,
    wv: &'a Tensor<T>,
    wo: &'a Tensor<T>,
    ln2_gain: &'a Tensor<T>,
    ln2_bias: &'a Tensor<T>,
    up: &'a Tensor<T>,
    down: &'a Tensor<T>,
}

/// Incremental forward pass over borrowed model weights. Adapters must be
/// merged into the weights before building a scorer; the scorer itself has
/// no training-time machinery.
pub struct ModelScorer<'a, T: Element = f32> {
    cfg: ModelConfig,
    tok: &'a Tensor<T>,
    pos: &'a Tensor<T>,
    layers: Vec<LayerWeights<'a, T>>,
    norm_gain: &'a Tensor<T>,
    norm_bias: &'a Tensor<T>,
    /// `embed.tok` transposed once, reused for every logits row.
    tied_output: Tensor<T>,
}

fn norm_row<T: Element>(x: &[T], gain: &[T], bias: &[T]) -> Vec<T> {
    let (mean, rstd) = row_moments(x);
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (*v - mean) * rstd * *g + *b)
        .collect()
}

/// In-place softmax with max subtraction, the same scan the tape applies to
/// a fully allowed attention row.
fn softmax_row<T: Element>(row: &mut [T]) {
    let mut mx = row[0];
    for v in row.iter() {
        if *v > mx {
            mx = *v;
        }
    }
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn log_softmax<T: Element>(logits: &[T]) -> Vec<f64> {
    let vals: Vec<f64> = logits.iter().map(|v| v.to_f64()).collect();
    let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
    vals.into_iter().map(|v| v - lse).collect()
}

impl<'a, T: Element> ModelScorer<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Result<Self> {
        let cfg = params.config;
        cfg.validate()?;
        let get = |name: String| -> Result<&'a Tensor<T>> {
            params
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing model parameter {name}")))
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            layers.push(LayerWeights {
                ln1_gain: get(format!("layer.{i}.ln1.gain"))?,
                ln1_bias: get(format!("layer.{i}.ln1.bias"))?,
                wq: get(format!("layer.{i}.attn.wq"))?,
                wk: get(format!("layer.{i}.attn.wk"))?,
                wv: get(format!("layer.{i}.attn.wv"))?,
                wo: get(format!("layer.{i}.attn.wo"))?,
                ln2_gain: get(format!("layer.{i}.ln2.gain"))?,
                ln2_bias: get(format!("layer.{i}.ln2.bias"))?,
                up: get(format!("layer.{i}.ffn.up"))?,
                down: get(format!("layer.{i}.ffn.down"))?,
            });
        }
        let tok = get("embed.tok".into())?;
        Ok(Self {
            cfg,
            tok,
            pos: get("embed.pos".into())?,
            layers,
            norm_gain: get("norm.gain".into())?,
            norm_bias: get("norm.bias".into())?,
            tied_output: tok.transposed(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn empty_state(&self) -> KvState<T> {
        let slots = self.cfg.n_layers * self.cfg.n_heads;
        KvState {
            len: 0,
            k: vec![Vec::new(); slots],
            v: vec![Vec::new(); slots],
        }
    }

    /// Append `token` at the next position and return the new state plus the
    /// `[1, vocab]` logits row for what follows it.
    pub fn step(&self, state: &KvState<T>, token: u32) -> Result<(KvState<T>, Tensor<T>)> {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let t = state.len;
        if t >= cfg.max_len {
            return Err(Error::TooLong {
                len: t + 1,
                max_len: cfg.max_len,
            });
        }
        if token >= cfg.vocab_size {
            return Err(Error::Data(format!(
                "token id {token} is outside the vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let mut next = state.clone();
        next.len = t + 1;
        let cur = t + 1;

        let mut x: Vec<T> = self.tok.row(token as usize).to_vec();
        for (o, v) in x.iter_mut().zip(self.pos.row(t)) {
            *o += *v;
        }

        let att_scale = T::from_f64(1.0 / (dh as f64).sqrt());
        for (i, lw) in self.layers.iter().enumerate() {
            let h = norm_row(&x, lw.ln1_gain.data(), lw.ln1_bias.data());
            let mut q = vec![T::ZERO; d];
            matmul_nn(&h, lw.wq.data(), &mut q, 1, d, d);
            let mut k_row = vec![T::ZERO; d];
            matmul_nn(&h, lw.wk.data(), &mut k_row, 1, d, d);
            let mut v_row = vec![T::ZERO; d];
            matmul_nn(&h, lw.wv.data(), &mut v_row, 1, d, d);

            let mut ctx = vec![T::ZERO; d];
            for hd in 0..cfg.n_heads {
                let slot = i * cfg.n_heads + hd;
                let cols = hd * dh..(hd + 1) * dh;
                next.k[slot].extend_from_slice(&k_row[cols.clone()]);
                next.v[slot].extend_from_slice(&v_row[cols.clone()]);

                // Keys go through an explicit transpose so the dot products
                // reduce in the same order as the batch kernel.
                let kc = &next.k[slot];
                let mut kt = vec![T::ZERO; dh * cur];
                for j in 0..cur {
                    for e in 0..dh {
                        kt[e * cur + j] = kc[j * dh + e];
                    }
                }
                let mut scores = vec![T::ZERO; cur];
                matmul_nn(&q[cols.clone()], &kt, &mut scores, 1, dh, cur);
                for s in scores.iter_mut() {
                    *s = *s * att_scale;
                }
                softmax_row(&mut scores);
                matmul_nn_seq(&scores, &next.v[slot], &mut ctx[cols], 1, cur, dh);
            }
            let mut attn_out = vec![T::ZERO; d];
            matmul_nn(&ctx, lw.wo.data(), &mut attn_out, 1, d, d);
            for (o, v) in x.iter_mut().zip(&attn_out) {
                *o += *v;
            }

            let h2 = norm_row(&x, lw.ln2_gain.data(), lw.ln2_bias.data());
            let mut up = vec![T::ZERO; cfg.d_ff];
            matmul_nn(&h2, lw.up.data(), &mut up, 1, d, cfg.d_ff);
            for u in up.iter_mut() {
                *u = gelu_scalar(*u);
            }
            let mut down = vec![T::ZERO; d];
            matmul_nn(&up, lw.down.data(), &mut down, 1, cfg.d_ff, d);
            for (o, v) in x.iter_mut().zip(&down) {
                *o += *v;
            }
        }

        let xn = norm_row(&x, self.norm_gain.data(), self.norm_bias.data());
        let vocab = cfg.vocab_size as usize;
        let mut logits = Tensor::zeros(1, vocab);
        matmul_nn(&xn, self.tied_output.data(), logits.data_mut(), 1, d, vocab);
        Ok((next, logits))
    }
}

impl<'a, T: Element> TokenScorer for ModelScorer<'a, T> {
    type State = KvState<T>;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size as usize
    }

    fn start(&self, prompt: &[u32]) -> Result<(KvState<T>, Vec<f64>)> {
        if prompt.is_empty() {
            return Err(Error::Data("cannot decode from an empty prompt".into()));
        }
        let mut state = self.empty_state();
        let mut logits = None;
        for &token in prompt {
            let (s, l) = self.step(&state, token)?;
            state = s;
            logits = Some(l);
        }
        let logits = logits.expect("prompt is non-empty");
        Ok((state, log_softmax(logits.data())))
    }

    fn advance(&self, state: &KvState<T>, token: u32) -> Result<(KvState<T>, Vec<f64>)> {
        let (state, logits) = self.step(state, token)?;
        let logp = log_softmax(logits.data());
        Ok((state, logp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, stage_params};
    use crate::rng::stream;
    use crate::tensor::{AttentionMask, Tape};
    use crate::vocab;
    use rand::Rng;
    use std::sync::Arc;

    fn ln_probs(probs: &[f64]) -> Vec<f64> {
        probs.iter().map(|p| p.ln()).collect()
    }

    /// Distribution depends only on the previous token; row 0 starts.
    struct TableScorer {
        first: Vec<f64>,
        after: Vec<Vec<f64>>,
    }

    impl TokenScorer for TableScorer {
        type State = ();

        fn vocab_size(&self) -> usize {
            self.first.len()
        }

        fn start(&self, _prompt: &[u32]) -> Result<((), Vec<f64>)> {
            Ok(((), ln_probs(&self.first)))
        }

        fn advance(&self, _state: &(), token: u32) -> Result<((), Vec<f64>)> {
            Ok(((), ln_probs(&self.after[token as usize])))
        }
    }

    /// Distribution depends on both depth and previous token, drawn from a
    /// seeded stream: `tables[depth][last + 1][token]` as log-probs.
    struct DepthScorer {
        tables: Vec<Vec<Vec<f64>>>,
    }

    fn random_depth_scorer(vocab: usize, depth: usize, seed: u64) -> DepthScorer {
        let mut rng = stream(seed, "decode.table");
        let tables = (0..depth)
            .map(|_| {
                (0..=vocab)
                    .map(|_| {
                        let w: Vec<f64> =
                            (0..vocab).map(|_| rng.random::<f64>() + 0.05).collect();
                        let total: f64 = w.iter().sum();
                        w.into_iter().map(|x| (x / total).ln()).collect()
                    })
                    .collect()
            })
            .collect();
        DepthScorer { tables }
    }

    impl TokenScorer for DepthScorer {
        type State = (usize, u32);

        fn vocab_size(&self) -> usize {
            self.tables[0][0].len()
        }

        fn start(&self, _prompt: &[u32]) -> Result<((usize, u32), Vec<f64>)> {
            Ok(((1, 0), self.tables[0][0].clone()))
        }

        fn advance(&self, state: &(usize, u32), token: u32) -> Result<((usize, u32), Vec<f64>)> {
            let (depth, _) = *state;
            let row = self.tables[depth.min(self.tables.len() - 1)][token as usize + 1].clone();
            Ok(((depth + 1, token), row))
        }
    }

    /// Every length-`len` sequence scored one by one; ties keep the
    /// lexicographically smallest, like the beam ranking.
    fn brute_force_best<S: TokenScorer>(
        scorer: &S,
        prompt: &[u32],
        len: usize,
    ) -> (Vec<u32>, f64) {
        let vocab = scorer.vocab_size() as u32;
        let mut seq = vec![0u32; len];
        let mut best: Option<(Vec<u32>, f64)> = None;
        loop {
            let (mut state, mut logp) = scorer.start(prompt).unwrap();
            let mut total = 0.0;
            for &t in &seq {
                total += logp[t as usize];
                (state, logp) = scorer.advance(&state, t).unwrap();
            }
            if best.as_ref().is_none_or(|(_, b)| total > *b) {
                best = Some((seq.clone(), total));
            }
            let mut i = len;
            loop {
                if i == 0 {
                    return best.unwrap();
                }
                i -= 1;
                seq[i] += 1;
                if seq[i] < vocab {
                    break;
                }
                seq[i] = 0;
            }
        }
    }

    fn two_step_table() -> TableScorer {
        // Token 0 wins the first step, but token 1 opens a far better
        // continuation: greedy gets 0.6 * 0.3, a two-wide beam 0.4 * 0.9.
        TableScorer {
            first: vec![0.6, 0.4 - 2e-9, 1e-9, 1e-9],
            after: vec![
                vec![0.3, 0.25, 0.25, 0.2],
                vec![0.9, 0.05, 0.03, 0.02],
                vec![0.25, 0.25, 0.25, 0.25],
                vec![0.25, 0.25, 0.25, 0.25],
            ],
        }
    }

    #[test]
    fn wider_beam_finds_the_delayed_reward_greedy_misses() {
        let scorer = two_step_table();
        let eos = 9;
        assert_eq!(greedy(&scorer, &[], eos, 2).unwrap(), vec![0, 0]);
        let narrow = beam_search(&scorer, &[], eos, 1, 2).unwrap();
        assert_eq!(narrow.tokens, vec![0, 0]);
        assert!((narrow.log_prob - (0.6f64 * 0.3).ln()).abs() < 1e-9);
        for beam in 2..=4 {
            let wide = beam_search(&scorer, &[], eos, beam, 2).unwrap();
            assert_eq!(wide.tokens, vec![1, 0], "beam {beam}");
            assert!((wide.log_prob - ((0.4f64 - 2e-9) * 0.9).ln()).abs() < 1e-9);
            assert!(!wide.finished);
        }
    }

    #[test]
    fn zero_beam_width_is_rejected() {
        let scorer = two_step_table();
        assert!(matches!(
            beam_search(&scorer, &[], 9, 0, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn beam_five_matches_brute_force_on_a_three_token_vocabulary() {
        for seed in 0..50 {
            let scorer = random_depth_scorer(3, 4, seed);
            // eos = 5 lies outside the vocabulary, so every hypothesis runs
            // the full four steps and the search space is exactly 3^4.
            let (want, want_lp) = brute_force_best(&scorer, &[], 4);
            let got = beam_search(&scorer, &[], 5, 5, 4).unwrap();
            assert_eq!(got.tokens, want, "seed {seed}");
            assert!((got.log_prob - want_lp).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn full_width_beam_is_exhaustive_for_two_steps() {
        // Nine hypotheses cover every length-2 sequence over three tokens,
        // so a nine-wide beam must agree with enumeration for any table.
        for seed in 100..140 {
            let scorer = random_depth_scorer(3, 2, seed);
            let (want, _) = brute_force_best(&scorer, &[], 2);
            let got = beam_search(&scorer, &[], 5, 9, 2).unwrap();
            assert_eq!(got.tokens, want, "seed {seed}");
        }
    }

    #[test]
    fn eos_retires_hypotheses_and_is_not_emitted() {
        // Token 1 is eos and dominates the first step: greedy stops with an
        // empty output, beam returns an empty finished hypothesis.
        let scorer = TableScorer {
            first: vec![0.1, 0.8, 0.1],
            after: vec![vec![0.1, 0.8, 0.1]; 3],
        };
        assert_eq!(greedy(&scorer, &[], 1, 5).unwrap(), Vec::<u32>::new());
        let hyp = beam_search(&scorer, &[], 1, 1, 5).unwrap();
        assert!(hyp.finished);
        assert_eq!(hyp.tokens, Vec::<u32>::new());
        assert!((hyp.log_prob - 0.8f64.ln()).abs() < 1e-12);

        // Without eos in range the length cap rules.
        let open = beam_search(&scorer, &[], 9, 2, 5).unwrap();
        assert_eq!(open.tokens.len(), 5);
        assert!(!open.finished);
    }

    fn toy_model() -> (ModelConfig, ModelParams<f32>) {
        let cfg = ModelConfig {
            vocab_size: 48,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_len: 24,
        };
        let params = init_params(&cfg, 11).unwrap();
        (cfg, params)
    }

    fn tape_logits_last_row(cfg: &ModelConfig, params: &ModelParams<f32>, ids: &[u32]) -> Vec<u32> {
        let mut tape = Tape::new();
        let nodes = stage_params(&mut tape, params, &|_| false);
        let mask = Arc::new(AttentionMask::causal(ids.len()));
        let logits = forward(&mut tape, &nodes, cfg, ids, 1, ids.len(), &[mask]).unwrap();
        tape.value(logits)
            .row(ids.len() - 1)
            .iter()
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn cached_decode_matches_the_batch_forward_bitwise() {
        let (cfg, params) = toy_model();
        let scorer = ModelScorer::new(&params).unwrap();
        let ids = [4u32, 9, 17, 30, 8, 21, 40, 6, 11, 2];
        let mut state = scorer.empty_state();
        for n in 1..=ids.len() {
            let (s, logits) = scorer.step(&state, ids[n - 1]).unwrap();
            state = s;
            let got: Vec<u32> = logits.data().iter().map(|v| v.to_bits()).collect();
            let want = tape_logits_last_row(&cfg, &params, &ids[..n]);
            assert_eq!(got, want, "prefix of length {n} diverged");
        }
        assert_eq!(state.len(), ids.len());
    }

    #[test]
    fn stepping_is_pure_and_states_fork_cleanly() {
        let (_, params) = toy_model();
        let scorer = ModelScorer::new(&params).unwrap();
        let (state, _) = scorer.start(&[4, 9, 17]).unwrap();
        let (_, a1) = scorer.step(&state, 5).unwrap();
        let (_, a2) = scorer.step(&state, 5).unwrap();
        assert!(a1.bits_eq(&a2));
        // A sibling branch does not disturb the original state.
        let (_, b) = scorer.step(&state, 6).unwrap();
        let (_, a3) = scorer.step(&state, 5).unwrap();
        assert!(a1.bits_eq(&a3));
        assert!(!b.bits_eq(&a1));
    }

    #[test]
    fn beam_one_matches_greedy_on_the_model() {
        let (_, params) = toy_model();
        let scorer = ModelScorer::new(&params).unwrap();
        let mut rng = stream(77, "decode.prompts");
        for case in 0..100 {
            let len = rng.random_range(1..8usize);
            let prompt: Vec<u32> = (0..len).map(|_| rng.random_range(4..48u32)).collect();
            let g = greedy(&scorer, &prompt, vocab::EOS, 8).unwrap();
            let b = beam_search(&scorer, &prompt, vocab::EOS, 1, 8).unwrap();
            assert_eq!(g, b.tokens, "case {case} prompt {prompt:?}");
        }
    }

    #[test]
    fn wider_beams_never_score_worse_on_the_model() {
        let (_, params) = toy_model();
        let scorer = ModelScorer::new(&params).unwrap();
        let mut rng = stream(78, "decode.prompts");
        for _ in 0..5 {
            let len = rng.random_range(1..6usize);
            let prompt: Vec<u32> = (0..len).map(|_| rng.random_range(4..48u32)).collect();
            let mut prev = f64::NEG_INFINITY;
            for beam in 1..=5 {
                let hyp = beam_search(&scorer, &prompt, vocab::EOS, beam, 6).unwrap();
                assert!(
                    hyp.log_prob >= prev - 1e-12,
                    "beam {beam} scored {} after {prev}",
                    hyp.log_prob
                );
                prev = hyp.log_prob;
            }
        }
    }

    #[test]
    fn decode_respects_the_position_limit() {
        let (cfg, params) = toy_model();
        let scorer = ModelScorer::new(&params).unwrap();
        let ids: Vec<u32> = (0..cfg.max_len as u32).map(|i| 4 + (i % 40)).collect();
        let (state, _) = scorer.start(&ids).unwrap();
        assert!(matches!(
            scorer.step(&state, 4),
            Err(Error::TooLong { .. })
        ));
        assert!(matches!(
            scorer.start(&[]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            scorer.step(&scorer.empty_state(), 48),
            Err(Error::Data(_))
        ));
    }
}
