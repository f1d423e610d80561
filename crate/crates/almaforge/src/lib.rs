//! A two-stage fine-tuning recipe for small decoder-only translation models,
//! built from scratch: a reverse-mode tensor tape, a pre-norm transformer,
//! temperature-based monolingual data mixing, three training objectives
//! (causal LM, prefix LM, and a span-corruption denoiser mixture), low-rank
//! adapters, a warmup/inverse-sqrt trainer, beam-search decoding, and a
//! reference-faithful BLEU evaluator.
//!
//! Everything runs at desk scale on synthetic bilingual corpora where a
//! perfect translation exists, so the full pipeline is testable end to end.

pub mod bleu;
pub mod config;
pub mod datamix;
pub mod decode;
pub mod error;
pub mod eval;
pub mod lora;
pub mod model;
pub mod trainer;
pub mod objectives;
pub mod prompt;
pub mod recipe;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
