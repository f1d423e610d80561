//! The two-stage pipeline glued end to end: sample the monolingual mixture,
//! fine-tune on it, fine-tune again on parallel pairs, decode, and score.
//! `run_recipe` is the production path; `sweep_parallel_size` reruns stage 2
//! at several parallel-data sizes from one shared base.

use crate::bleu::BleuReport;
use crate::datamix::{
    compute_mixture, read_parallel, stream_mixture, CorpusManifest, MixtureSpec, ParallelPair,
};
use crate::error::{Error, Result};
use crate::eval::{both_directions, evaluate_directions, prompt_for_pair, EvalOptions};
use crate::lora::{inject, DOWN_PROJECTION_PATTERN};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::prompt::{build_example_tagged, PromptedExample};
use crate::report::{MetricsReport, SnapshotMetrics, SweepEntry, SweepReport};
use crate::trainer::{
    pack_documents, train_stage, train_stage_snapshots, Checkpoint, StageData, TrainConfig,
    TrainState, Trainable,
};
use crate::vocab::Vocab;
use indexmap::IndexMap;

/// Recipe-level knobs that sit above the per-stage configs.
#[derive(Debug, Clone)]
pub struct RecipeOptions {
    pub model: ModelConfig,
    /// Temperature for the stage-1 language mixture.
    pub temperature: f64,
    /// Languages with fixed sampling probability.
    pub pinned: IndexMap<String, f64>,
    /// Extra stage-1 milestones (supervised tokens) that each get their own
    /// stage-2 run and evaluation; the full budget is always covered by a
    /// final arm. Milestone 0 is the untrained model, i.e. the plain
    /// supervised-fine-tuning baseline.
    pub snapshots: Vec<u64>,
    pub eval: EvalOptions,
    /// Cap on scored test pairs per direction; 0 scores them all.
    pub eval_limit: usize,
    /// Score only these "src-tgt" directions; empty scores every one.
    pub directions: Vec<String>,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            temperature: crate::datamix::DEFAULT_TEMPERATURE,
            pinned: IndexMap::new(),
            snapshots: Vec::new(),
            eval: EvalOptions::default(),
            eval_limit: 0,
            directions: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct RecipeOutcome {
    pub report: MetricsReport,
    /// Stage-2 selected checkpoint of the full-budget arm.
    pub final_checkpoint: Checkpoint,
    /// Stage-1 final checkpoint, reusable as the base of further stage-2
    /// runs; absent when stage 1 was skipped.
    pub stage1: Option<Checkpoint>,
    /// Full per-direction reports from the final arm's evaluation.
    pub final_bleu: IndexMap<String, BleuReport>,
}

/// Prompted training rows for a parallel set, both directions of every pair.
pub fn parallel_examples(pairs: &[ParallelPair], vocab: &Vocab) -> Result<Vec<PromptedExample>> {
    let mut rows = Vec::with_capacity(pairs.len() * 2);
    for (direction, oriented) in both_directions(pairs) {
        for p in &oriented {
            rows.push(build_example_tagged(
                &prompt_for_pair(p),
                &p.tgt,
                vocab,
                false,
                &direction,
            )?);
        }
    }
    Ok(rows)
}

/// Packed stage-1 rows sampled from the manifest's language mixture, plus
/// the mixture itself for the report. The budget comes from the config.
pub fn stage1_rows(
    manifest: &CorpusManifest,
    vocab: &Vocab,
    cfg: &TrainConfig,
    temperature: f64,
    pinned: &IndexMap<String, f64>,
) -> Result<(Vec<PromptedExample>, MixtureSpec)> {
    let budget = cfg.token_budget.unwrap_or(0);
    let spec = compute_mixture(&manifest.stats(), temperature, pinned)?;
    let stream = stream_mixture(&spec, &manifest.shard_map(), cfg.seed, budget)?;
    let rows = pack_documents(stream, vocab, cfg.max_seq_len, "mono:mix")?;
    Ok((rows, spec))
}

/// Test pairs oriented both ways, filtered and capped per direction.
fn eval_corpora(
    test: &[ParallelPair],
    limit: usize,
    directions: &[String],
) -> Result<IndexMap<String, Vec<ParallelPair>>> {
    let mut corpora = both_directions(test);
    if !directions.is_empty() {
        for want in directions {
            if !corpora.contains_key(want) {
                let have: Vec<&str> = corpora.keys().map(String::as_str).collect();
                return Err(Error::Config(format!(
                    "eval directions: {want} is not a direction of this corpus (have: {})",
                    have.join(", ")
                )));
            }
        }
        corpora.retain(|k, _| directions.contains(k));
    }
    if limit > 0 {
        for pairs in corpora.values_mut() {
            pairs.truncate(limit);
        }
    }
    Ok(corpora)
}

/// Stage-2 starting state per the config: bare weights, or weights plus
/// freshly injected adapters when training LoRA.
pub fn stage2_state(params: ModelParams<f32>, cfg: &TrainConfig) -> Result<TrainState> {
    match cfg.trainable {
        Trainable::Full => Ok(TrainState::full(params)),
        Trainable::Lora => {
            let adapters = inject(
                &params,
                cfg.lora_rank,
                cfg.lora_alpha,
                DOWN_PROJECTION_PATTERN,
                cfg.seed,
            )?;
            Ok(TrainState {
                params,
                adapters: Some(adapters),
            })
        }
    }
}

struct ArmResult {
    /// Validation loss of the selected (lowest-loss) checkpoint.
    val_loss: f64,
    reports: IndexMap<String, BleuReport>,
    best: Checkpoint,
    warnings: Vec<String>,
}

/// Stage-2 fine-tune from `params` and score the selected checkpoint.
fn fine_tune_and_score(
    cfg: &TrainConfig,
    data: &StageData,
    vocab: &Vocab,
    params: ModelParams<f32>,
    corpora: &IndexMap<String, Vec<ParallelPair>>,
    eval: EvalOptions,
    label: &str,
) -> Result<ArmResult> {
    let state = stage2_state(params, cfg)?;
    let outcome = train_stage(cfg, data, vocab, state)?;
    let val_loss = outcome
        .history
        .iter()
        .map(|p| p.loss)
        .fold(f64::INFINITY, f64::min);
    let merged = outcome.best.state()?.merged()?;
    let scored = evaluate_directions(&merged, vocab, corpora, eval)?;
    Ok(ArmResult {
        val_loss,
        reports: scored.reports,
        best: outcome.best,
        warnings: scored
            .warnings
            .into_iter()
            .map(|w| format!("{label}: {w}"))
            .collect(),
    })
}

/// Execute the full recipe against a generated corpus: stage 1 on the
/// temperature-sampled monolingual mixture (skipped when the token budget is
/// zero), then stage 2 plus evaluation from every milestone snapshot. `base`
/// replaces the random initialization, which is how a stage-2-only run picks
/// up an existing stage-1 result.
pub fn run_recipe(
    stage1_cfg: &TrainConfig,
    stage2_cfg: &TrainConfig,
    manifest: &CorpusManifest,
    base: Option<&ModelParams<f32>>,
    opts: &RecipeOptions,
) -> Result<RecipeOutcome> {
    if stage1_cfg.stage != 1 {
        return Err(Error::Config(
            "run_recipe: the first config must be stage 1".into(),
        ));
    }
    if stage2_cfg.stage != 2 {
        return Err(Error::Config(
            "run_recipe: the second config must be stage 2".into(),
        ));
    }
    stage1_cfg.validate()?;
    stage2_cfg.validate()?;
    let vocab = Vocab::load(&manifest.vocab)?;
    if opts.model.vocab_size as usize != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match the corpus vocabulary of {}",
            opts.model.vocab_size,
            vocab.len()
        )));
    }
    if let Some(p) = base {
        if p.config != opts.model {
            return Err(Error::Config(
                "base parameters disagree with the configured model shape".into(),
            ));
        }
    }
    let budget = stage1_cfg.token_budget.unwrap_or(0);
    let init = match base {
        Some(p) => p.clone(),
        None => init_params(&opts.model, stage1_cfg.seed)?,
    };

    // Stage 1, snapshotting the weights at every requested milestone. Each
    // snapshot becomes an arm: its own stage 2 plus evaluation.
    let mut arms: Vec<(u64, ModelParams<f32>)> = Vec::new();
    let mut mixture: Option<MixtureSpec> = None;
    let mut stage1_ckpt: Option<Checkpoint> = None;
    if budget > 0 {
        let (rows, spec) = stage1_rows(manifest, &vocab, stage1_cfg, opts.temperature, &opts.pinned)?;
        eprintln!(
            "recipe: stage 1 on {} packed rows of {} tokens",
            rows.len(),
            stage1_cfg.max_seq_len
        );
        let data = StageData {
            train: rows,
            val: Vec::new(),
        };
        let (outcome, snaps) = train_stage_snapshots(
            stage1_cfg,
            &data,
            &vocab,
            TrainState::full(init),
            &opts.snapshots,
        )?;
        for s in snaps {
            arms.push((s.tokens_seen, s.state.params));
        }
        arms.push((outcome.tokens_supervised, outcome.last.params()?));
        stage1_ckpt = Some(outcome.last);
        mixture = Some(spec);
    } else {
        arms.push((0, init));
    }

    // Stage-2 data and the scoring corpus, shared by every arm.
    let train_pairs = read_parallel(&manifest.parallel_train)?;
    let val_pairs = read_parallel(&manifest.parallel_val)?;
    let test_pairs = read_parallel(&manifest.parallel_test)?;
    let data2 = StageData {
        train: parallel_examples(&train_pairs, &vocab)?,
        val: parallel_examples(&val_pairs, &vocab)?,
    };
    let corpora = eval_corpora(&test_pairs, opts.eval_limit, &opts.directions)?;

    let mut snapshots = Vec::with_capacity(arms.len());
    let mut warnings = Vec::new();
    let mut last: Option<(Checkpoint, IndexMap<String, BleuReport>)> = None;
    for (tokens_seen, params) in arms {
        eprintln!("recipe: stage 2 from the {tokens_seen}-token snapshot");
        let arm = fine_tune_and_score(
            stage2_cfg,
            &data2,
            &vocab,
            params,
            &corpora,
            opts.eval,
            &format!("snapshot {tokens_seen}"),
        )?;
        snapshots.push(SnapshotMetrics {
            tokens_seen,
            val_loss: arm.val_loss,
            bleu_per_direction: arm
                .reports
                .iter()
                .map(|(d, r)| (d.clone(), r.score))
                .collect(),
        });
        warnings.extend(arm.warnings);
        last = Some((arm.best, arm.reports));
    }
    let (final_checkpoint, final_bleu) = last.expect("at least one arm always runs");

    let report = MetricsReport {
        seed: stage1_cfg.seed,
        model: opts.model,
        stage1_digest: stage1_cfg.digest(),
        stage2_digest: stage2_cfg.digest(),
        mixture,
        snapshots,
        warnings,
    };
    Ok(RecipeOutcome {
        report,
        final_checkpoint,
        stage1: stage1_ckpt,
        final_bleu,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub eval: EvalOptions,
    /// Cap on scored test pairs per direction; 0 scores them all.
    pub eval_limit: usize,
    /// Score only these "src-tgt" directions; empty scores every one.
    pub directions: Vec<String>,
    /// Rerun every size from random init too, for the forgetting comparison.
    pub from_scratch: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            eval: EvalOptions::default(),
            eval_limit: 0,
            directions: Vec::new(),
            from_scratch: false,
        }
    }
}

/// Fine-tune one model per parallel-data size, every arm starting from the
/// same `base` weights, and score each. Sizes are nested: a smaller size
/// trains on a prefix of the larger one's pairs. With `from_scratch` set the
/// whole ladder runs again from random init.
pub fn sweep_parallel_size(
    stage2_cfg: &TrainConfig,
    base: &ModelParams<f32>,
    manifest: &CorpusManifest,
    sizes: &[usize],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if stage2_cfg.stage != 2 {
        return Err(Error::Config("the sweep config must be stage 2".into()));
    }
    stage2_cfg.validate()?;
    if sizes.is_empty() {
        return Err(Error::Config("the sweep needs at least one size".into()));
    }
    let vocab = Vocab::load(&manifest.vocab)?;
    if base.config.vocab_size as usize != vocab.len() {
        return Err(Error::Config(format!(
            "base vocab_size {} does not match the corpus vocabulary of {}",
            base.config.vocab_size,
            vocab.len()
        )));
    }
    let train_pairs = read_parallel(&manifest.parallel_train)?;
    let val_pairs = read_parallel(&manifest.parallel_val)?;
    let test_pairs = read_parallel(&manifest.parallel_test)?;
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes[0] == 0 {
        return Err(Error::Config("a sweep size of 0 trains nothing".into()));
    }
    if *sizes.last().unwrap() > train_pairs.len() {
        return Err(Error::Config(format!(
            "sweep size {} exceeds the {} available parallel pairs",
            sizes.last().unwrap(),
            train_pairs.len()
        )));
    }

    let val = parallel_examples(&val_pairs, &vocab)?;
    let corpora = eval_corpora(&test_pairs, opts.eval_limit, &opts.directions)?;
    let scratch = opts
        .from_scratch
        .then(|| init_params::<f32>(&base.config, stage2_cfg.seed))
        .transpose()?;
    let mut bases: Vec<(&str, &ModelParams<f32>)> = vec![("stage1", base)];
    if let Some(p) = &scratch {
        bases.push(("scratch", p));
    }

    let mut entries = Vec::new();
    for (name, params) in bases {
        for &size in &sizes {
            eprintln!("sweep: {size} pairs from the {name} base");
            let data = StageData {
                train: parallel_examples(&train_pairs[..size], &vocab)?,
                val: val.clone(),
            };
            let arm = fine_tune_and_score(
                stage2_cfg,
                &data,
                &vocab,
                params.clone(),
                &corpora,
                opts.eval,
                &format!("{name} base, {size} pairs"),
            )?;
            for w in arm.warnings {
                eprintln!("sweep: {w}");
            }
            entries.push(SweepEntry {
                pairs: size,
                base: name.to_string(),
                val_loss: arm.val_loss,
                bleu_per_direction: arm
                    .reports
                    .iter()
                    .map(|(d, r)| (d.clone(), r.score))
                    .collect(),
            });
        }
    }
    Ok(SweepReport {
        seed: stage2_cfg.seed,
        model: base.config,
        stage2_digest: stage2_cfg.digest(),
        entries,
    })
}
