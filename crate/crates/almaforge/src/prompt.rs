//! The translation prompt and supervised examples.
//!
//! The prompt skeleton is fixed byte for byte; training computes loss only on
//! target tokens and the terminal EOS, never on the prompt or source.

use crate::error::{Error, Result};
use crate::vocab::{Vocab, BOS, EOS};
use serde::{Deserialize, Serialize};

/// Renders `"Translate this from {src} to {tgt}:\n{src}: {source}\n{tgt}:"`.
/// Single newline separators, one space after each content colon, no
/// trailing space after the final colon.
pub fn render_prompt(src_name: &str, tgt_name: &str, source: &str) -> String {
    format!("Translate this from {src_name} to {tgt_name}:\n{src_name}: {source}\n{tgt_name}:")
}

/// The two language names filling the prompt skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub src_name: String,
    pub tgt_name: String,
}

impl PromptTemplate {
    pub fn new(src_name: &str, tgt_name: &str) -> Result<Self> {
        if src_name.is_empty() || tgt_name.is_empty() {
            return Err(Error::Config(
                "prompt language names must be nonempty".into(),
            ));
        }
        Ok(Self {
            src_name: src_name.to_string(),
            tgt_name: tgt_name.to_string(),
        })
    }

    pub fn render(&self, source: &str) -> String {
        render_prompt(&self.src_name, &self.tgt_name, source)
    }
}

/// One tokenized training example: prompt (with source embedded) followed by
/// target tokens and EOS.
///
/// `loss_mask[t] == 1` means the token at position `t` is supervised when
/// predicted from positions before `t`; exactly the target tokens and the
/// terminal EOS carry 1. `sum(loss_mask) == target token count + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedExample {
    pub input_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    /// Tokens covered by the prompt + source prefix.
    pub prompt_len: usize,
    /// Language pair tag such as "aa-ab", or "mono:aa" for plain text.
    pub pair: String,
}

impl PromptedExample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn supervised_positions(&self) -> usize {
        self.loss_mask.iter().map(|m| *m as usize).sum()
    }
}

/// Tokenize a rendered prompt and its target into a supervised example.
/// `input_ids = tok(prompt) ++ tok(target) ++ [EOS]`.
pub fn build_example(prompt: &str, target: &str, vocab: &Vocab) -> Result<PromptedExample> {
    build_example_tagged(prompt, target, vocab, false, "")
}

/// As `build_example`, with an optional BOS anchor (off by default) and a
/// language pair tag.
pub fn build_example_tagged(
    prompt: &str,
    target: &str,
    vocab: &Vocab,
    add_bos: bool,
    pair: &str,
) -> Result<PromptedExample> {
    let mut input_ids = Vec::new();
    if add_bos {
        input_ids.push(BOS);
    }
    input_ids.extend(vocab.encode(prompt));
    let prompt_len = input_ids.len();
    let target_ids = vocab.encode(target);
    if target_ids.is_empty() {
        return Err(Error::EmptySupervision);
    }
    input_ids.extend(&target_ids);
    input_ids.push(EOS);

    let mut loss_mask = vec![0u8; input_ids.len()];
    for m in loss_mask.iter_mut().skip(prompt_len) {
        *m = 1;
    }
    Ok(PromptedExample {
        input_ids,
        loss_mask,
        prompt_len,
        pair: pair.to_string(),
    })
}

/// Plain text example for stage-1 language modeling: every position is
/// supervised and an EOS terminator is appended.
pub fn monolingual_example(text: &str, vocab: &Vocab, lang: &str) -> Result<PromptedExample> {
    let mut input_ids = vocab.encode(text);
    if input_ids.is_empty() {
        return Err(Error::EmptySupervision);
    }
    input_ids.push(EOS);
    let loss_mask = vec![1u8; input_ids.len()];
    Ok(PromptedExample {
        input_ids,
        loss_mask,
        prompt_len: 0,
        pair: format!("mono:{lang}"),
    })
}

/// Wrap an already-packed token row (stage-1 packing) as a fully supervised
/// example.
pub fn packed_example(input_ids: Vec<u32>, pair: &str) -> PromptedExample {
    let loss_mask = vec![1u8; input_ids.len()];
    PromptedExample {
        input_ids,
        loss_mask,
        prompt_len: 0,
        pair: pair.to_string(),
    }
}
