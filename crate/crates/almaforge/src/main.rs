//! Command-line front end. Every subcommand is a thin wrapper over the
//! library: parse flags, load the config, call one function, print JSON.
//!
//! Logs go to stderr; stdout carries only the machine-readable result, so
//! every command can sit in a pipe. Exit codes: 0 on success, 2 for
//! configuration mistakes (the message names the offending key), 1 for
//! runtime failures.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;

use almaforge::bleu::{corpus_bleu, Smoothing, TokenizerKind};
use almaforge::config::{seed_from_env, RecipeConfig};
use almaforge::datamix::{
    compute_mixture, gen_toy_corpus, read_parallel, CorpusManifest, LanguageCorpusStat,
    ParallelPair, ToyCorpusSpec, Transform, DEFAULT_TEMPERATURE,
};
use almaforge::decode::ModelScorer;
use almaforge::error::{Error, Result};
use almaforge::eval::{prompt_for_pair, translate, EvalOptions};
use almaforge::model::{init_params, param_count, ModelParams};
use almaforge::recipe::{
    parallel_examples, run_recipe, stage1_rows, stage2_state, sweep_parallel_size, SweepOptions,
};
use almaforge::report::{metrics_report_schema, sweep_report_schema, validate};
use almaforge::trainer::{train_stage, Checkpoint, StageData, TrainState};
use almaforge::vocab::Vocab;

const CONFIG_KEYS: &str = "\
Config file keys (TOML):
  seed                 overrides both stages' seeds; --seed and ALMAFORGE_SEED
                       override it in turn
  manifest             corpus manifest path, relative to the config file
  snapshots            stage-1 milestones in supervised tokens; each one gets
                       its own stage-2 run and evaluation

  [model]              vocab_size, d_model, n_layers, n_heads, d_ff, max_len

  [mixture]            temperature (default 6); pinned.<lang> = fraction fixes
                       that language's sampling probability

  [stage1] / [stage2]  peak_lr, warmup_ratio, weight_decay, micro_batch,
                       accum_steps, effective_batch (defaults to micro_batch
                       x accum_steps), max_seq_len, seed,
                       decay_kind (inv-sqrt-to-zero | inv-sqrt | linear-to-zero),
                       objective (clm | prefix | mod),
                       trainable (full | lora), lora_rank, lora_alpha
  [stage1]             token_budget: whitespace words drawn from the mixture
  [stage2]             epochs (default 2)

  [eval]               beam (default 5), max_new (default 64),
                       limit (0 = score every held-out pair),
                       directions = [\"aa-ab\", ...] (empty = all directions)
";

/// Two-stage translation fine-tuning at desk scale: mix, train, decode, score.
#[derive(Parser)]
#[command(name = "almaforge", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Language-mixture arithmetic.
    #[command(subcommand)]
    Mix(MixCmd),
    /// Corpus generation.
    #[command(subcommand)]
    Data(DataCmd),
    /// Run a single training stage.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Run the full two-stage recipe and score every snapshot.
    #[command(subcommand)]
    Recipe(RecipeCmd),
    /// Refit stage 2 at several parallel-data sizes and compare.
    Sweep(SweepArgs),
    /// Translate lines of text with a trained checkpoint.
    Translate(TranslateArgs),
    /// Score hypothesis lines against reference lines.
    Bleu(BleuArgs),
    /// Print a checkpoint summary.
    Inspect(InspectArgs),
}

#[derive(Subcommand)]
enum MixCmd {
    /// Temperature-scaled sampling probabilities from per-language word counts.
    Compute(MixComputeArgs),
}

#[derive(Args)]
struct MixComputeArgs {
    /// JSON file: [{"language": "de", "word_count": 73.8e9}, ...]
    #[arg(long)]
    stats: PathBuf,
    /// Sampling temperature; higher flattens toward uniform.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Fix a language's probability, as lang=fraction. Repeatable.
    #[arg(long = "pin", value_name = "LANG=FRACTION")]
    pin: Vec<String>,
}

#[derive(Subcommand)]
enum DataCmd {
    /// Two toy languages related by a word cipher: monolingual shards,
    /// parallel train/val/test splits, a vocabulary, and manifest.json.
    GenToy(GenToyArgs),
}

#[derive(Args)]
struct GenToyArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generator seed (default 42; ALMAFORGE_SEED applies).
    #[arg(long)]
    seed: Option<u64>,
    /// Total vocabulary ids including specials and sentinels (default 200).
    #[arg(long)]
    vocab_size: Option<u32>,
    /// Monolingual sentences per language (default 10000).
    #[arg(long)]
    sentences: Option<usize>,
    /// Parallel training pairs (default 2000).
    #[arg(long)]
    parallel: Option<usize>,
    /// Parallel validation pairs (default 128).
    #[arg(long)]
    val: Option<usize>,
    /// Parallel held-out test pairs (default 256).
    #[arg(long)]
    test: Option<usize>,
    /// cipher | reverse (default cipher).
    #[arg(long)]
    transform: Option<String>,
    /// Monolingual shard files per language (default 4).
    #[arg(long)]
    shards: Option<usize>,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Fine-tune every weight on the monolingual mixture.
    Stage1(TrainArgs),
    /// Fine-tune on parallel pairs, full-weight or LoRA.
    Stage2(TrainArgs),
}

#[derive(Args)]
#[command(after_long_help = CONFIG_KEYS)]
struct TrainArgs {
    /// Recipe config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Corpus manifest; overrides the config's `manifest` key.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Start from this checkpoint instead of random init. Adapters in the
    /// checkpoint are merged first.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Save the resulting checkpoint here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides ALMAFORGE_SEED and the config's seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum RecipeCmd {
    /// Stage 1, snapshotting at each milestone; stage 2 and evaluation from
    /// every snapshot; checkpoints and a metrics report as artifacts.
    Run(RecipeRunArgs),
}

#[derive(Args)]
#[command(after_long_help = CONFIG_KEYS)]
struct RecipeRunArgs {
    /// Recipe config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base checkpoint replacing random init, e.g. an earlier stage-1 result
    /// when the config's token_budget is 0.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Artifact directory (default: `<config>.run` next to the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides ALMAFORGE_SEED and the config's seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
#[command(after_long_help = CONFIG_KEYS)]
struct SweepArgs {
    /// Recipe config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Parallel-pair counts to train at, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Stage-1 checkpoint to fine-tune from; omitted, stage 1 runs first
    /// per the config.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Also retrain every size from random init.
    #[arg(long)]
    from_scratch: bool,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides ALMAFORGE_SEED and the config's seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TranslateArgs {
    /// Trained checkpoint; adapters are merged before decoding.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file the checkpoint was trained with.
    #[arg(long)]
    vocab: PathBuf,
    /// Source language code, e.g. aa.
    #[arg(long)]
    src_lang: String,
    /// Target language code, e.g. ab.
    #[arg(long)]
    tgt_lang: String,
    /// Sentence to translate; repeatable. Omit to read lines from stdin.
    #[arg(long)]
    text: Vec<String>,
    /// Beam width; 1 is greedy search.
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Cap on generated tokens per sentence.
    #[arg(long, default_value_t = 64)]
    max_new: usize,
}

#[derive(Args)]
struct BleuArgs {
    /// Hypothesis file, one segment per line.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file, one segment per line.
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
    /// 13a | zh
    #[arg(long, default_value = "13a")]
    tokenizer: String,
    /// exp | none
    #[arg(long, default_value = "exp")]
    smoothing: String,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint path.
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Mix(MixCmd::Compute(a)) => mix_compute(a),
        Cmd::Data(DataCmd::GenToy(a)) => data_gen_toy(a),
        Cmd::Train(TrainCmd::Stage1(a)) => train_stage1(a),
        Cmd::Train(TrainCmd::Stage2(a)) => train_stage2(a),
        Cmd::Recipe(RecipeCmd::Run(a)) => recipe_run(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Translate(a) => translate_lines(a),
        Cmd::Bleu(a) => bleu(a),
        Cmd::Inspect(a) => inspect(a),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn mix_compute(a: MixComputeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.stats)
        .map_err(|e| Error::Config(format!("cannot read --stats {}: {e}", a.stats.display())))?;
    let stats: Vec<LanguageCorpusStat> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("--stats {}: {e}", a.stats.display())))?;
    let mut pinned = IndexMap::new();
    for pin in &a.pin {
        let (lang, frac) = pin
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--pin wants lang=fraction, got {pin:?}")))?;
        let frac: f64 = frac
            .parse()
            .map_err(|_| Error::Config(format!("--pin {pin:?}: fraction is not a number")))?;
        pinned.insert(lang.to_string(), frac);
    }
    let spec = compute_mixture(&stats, a.temperature, &pinned)?;
    print_json(&spec)
}

fn data_gen_toy(a: GenToyArgs) -> Result<()> {
    let d = ToyCorpusSpec::default();
    let transform = match a.transform.as_deref() {
        None => d.transform,
        Some("cipher") => Transform::Cipher,
        Some("reverse") => Transform::Reverse,
        Some(other) => {
            return Err(Error::Config(format!(
                "--transform must be cipher or reverse, got {other}"
            )))
        }
    };
    let spec = ToyCorpusSpec {
        seed: a.seed.or(seed_from_env()?).unwrap_or(d.seed),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        n_sentences: a.sentences.unwrap_or(d.n_sentences),
        n_parallel: a.parallel.unwrap_or(d.n_parallel),
        n_val: a.val.unwrap_or(d.n_val),
        n_test: a.test.unwrap_or(d.n_test),
        transform,
        shards_per_language: a.shards.unwrap_or(d.shards_per_language),
    };
    let manifest = gen_toy_corpus(&spec, &a.out)?;
    eprintln!("gen-toy: corpus written to {}", a.out.display());
    print_json(&manifest)
}

/// The manifest a training command should use: the flag wins over the config.
fn manifest_for(flag: &Option<PathBuf>, cfg: &RecipeConfig) -> Result<CorpusManifest> {
    match flag {
        Some(p) => CorpusManifest::load(p),
        None => CorpusManifest::load(cfg.want_manifest()?),
    }
}

/// Starting weights: a checkpoint (adapters merged) or random init from the
/// config's [model]. Either way the shape must match the vocabulary.
fn starting_params(
    init: &Option<PathBuf>,
    cfg: &RecipeConfig,
    vocab: &Vocab,
    seed: u64,
) -> Result<ModelParams<f32>> {
    let params = match init {
        Some(p) => Checkpoint::load(p)?.state()?.merged()?,
        None => init_params(&cfg.want_model()?, seed)?,
    };
    if params.config.vocab_size as usize != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match the corpus vocabulary of {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(params)
}

fn train_stage1(a: TrainArgs) -> Result<()> {
    let mut cfg = RecipeConfig::load(&a.config)?;
    cfg.resolve_seed(a.seed)?;
    let s1 = cfg.want_stage1()?.clone();
    let manifest = manifest_for(&a.manifest, &cfg)?;
    let vocab = Vocab::load(&manifest.vocab)?;
    let params = starting_params(&a.init, &cfg, &vocab, s1.seed)?;

    let (rows, mixture) = stage1_rows(&manifest, &vocab, &s1, cfg.temperature, &cfg.pinned)?;
    eprintln!(
        "stage 1: {} packed rows of {} tokens",
        rows.len(),
        s1.max_seq_len
    );
    let data = StageData {
        train: rows,
        val: Vec::new(),
    };
    let outcome = train_stage(&s1, &data, &vocab, TrainState::full(params))?;
    if let Some(out) = &a.out {
        outcome.last.save(out)?;
        eprintln!("stage 1: checkpoint saved to {}", out.display());
    }
    print_json(&serde_json::json!({
        "stage": 1,
        "steps": outcome.steps,
        "tokens_supervised": outcome.tokens_supervised,
        "digest": s1.digest(),
        "mixture": mixture,
        "checkpoint": a.out,
    }))
}

fn train_stage2(a: TrainArgs) -> Result<()> {
    let mut cfg = RecipeConfig::load(&a.config)?;
    cfg.resolve_seed(a.seed)?;
    let s2 = cfg.want_stage2()?.clone();
    let manifest = manifest_for(&a.manifest, &cfg)?;
    let vocab = Vocab::load(&manifest.vocab)?;
    let params = starting_params(&a.init, &cfg, &vocab, s2.seed)?;

    let data = StageData {
        train: parallel_examples(&read_parallel(&manifest.parallel_train)?, &vocab)?,
        val: parallel_examples(&read_parallel(&manifest.parallel_val)?, &vocab)?,
    };
    eprintln!(
        "stage 2: {} prompted rows, {} validation rows",
        data.train.len(),
        data.val.len()
    );
    let outcome = train_stage(&s2, &data, &vocab, stage2_state(params, &s2)?)?;
    if let Some(out) = &a.out {
        outcome.best.save(out)?;
        eprintln!("stage 2: selected checkpoint saved to {}", out.display());
    }
    print_json(&serde_json::json!({
        "stage": 2,
        "steps": outcome.steps,
        "tokens_supervised": outcome.tokens_supervised,
        "digest": s2.digest(),
        "best_step": outcome.best.step,
        "val_history": outcome.history,
        "checkpoint": a.out,
    }))
}

fn default_run_dir(config: &Path) -> PathBuf {
    let stem = config.file_stem().unwrap_or_default().to_string_lossy();
    config.with_file_name(format!("{stem}.run"))
}

fn recipe_run(a: RecipeRunArgs) -> Result<()> {
    let mut cfg = RecipeConfig::load(&a.config)?;
    cfg.resolve_seed(a.seed)?;
    let s1 = cfg.want_stage1()?.clone();
    let s2 = cfg.want_stage2()?.clone();
    let manifest = CorpusManifest::load(cfg.want_manifest()?)?;
    let opts = cfg.recipe_options()?;
    let base = a
        .init
        .as_ref()
        .map(|p| Checkpoint::load(p)?.state()?.merged())
        .transpose()?;

    let out = run_recipe(&s1, &s2, &manifest, base.as_ref(), &opts)?;
    let json = serde_json::to_value(&out.report)?;
    validate(&json, &metrics_report_schema())?;

    let dir = a.out_dir.unwrap_or_else(|| default_run_dir(&a.config));
    std::fs::create_dir_all(&dir)?;
    if let Some(ck) = &out.stage1 {
        ck.save(&dir.join("stage1.ckpt"))?;
    }
    out.final_checkpoint.save(&dir.join("final.ckpt"))?;
    let pretty = serde_json::to_string_pretty(&json)?;
    std::fs::write(dir.join("report.json"), format!("{pretty}\n"))?;
    eprintln!("recipe: artifacts in {}", dir.display());
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{pretty}");
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = RecipeConfig::load(&a.config)?;
    cfg.resolve_seed(a.seed)?;
    let s2 = cfg.want_stage2()?.clone();
    let manifest = manifest_for(&None, &cfg)?;
    let vocab = Vocab::load(&manifest.vocab)?;

    let base = match &a.base {
        Some(p) => {
            let params = Checkpoint::load(p)?.state()?.merged()?;
            if params.config.vocab_size as usize != vocab.len() {
                return Err(Error::Config(format!(
                    "base vocab_size {} does not match the corpus vocabulary of {}",
                    params.config.vocab_size,
                    vocab.len()
                )));
            }
            params
        }
        None => {
            let s1 = cfg.want_stage1()?.clone();
            let params = starting_params(&None, &cfg, &vocab, s1.seed)?;
            let (rows, _) = stage1_rows(&manifest, &vocab, &s1, cfg.temperature, &cfg.pinned)?;
            eprintln!("sweep: no --base given, running stage 1 on {} rows", rows.len());
            let data = StageData {
                train: rows,
                val: Vec::new(),
            };
            train_stage(&s1, &data, &vocab, TrainState::full(params))?
                .last
                .params()?
        }
    };

    let opts = SweepOptions {
        eval: cfg.eval.options(),
        eval_limit: cfg.eval.limit,
        directions: cfg.eval.directions.clone(),
        from_scratch: a.from_scratch,
    };
    let report = sweep_parallel_size(&s2, &base, &manifest, &a.sizes, &opts)?;
    let json = serde_json::to_value(&report)?;
    validate(&json, &sweep_report_schema())?;
    let pretty = serde_json::to_string_pretty(&json)?;
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{pretty}\n"))?;
    }
    println!("{pretty}");
    Ok(())
}

fn translate_lines(a: TranslateArgs) -> Result<()> {
    let params = Checkpoint::load(&a.checkpoint)?.state()?.merged()?;
    let vocab = Vocab::load(&a.vocab)?;
    if params.config.vocab_size as usize != vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint vocab_size {} does not match --vocab of {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    let scorer = ModelScorer::new(&params)?;
    let opts = EvalOptions {
        beam: a.beam,
        max_new: a.max_new,
    };
    let lines: Vec<String> = if a.text.is_empty() {
        std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()?
    } else {
        a.text
    };
    for line in lines {
        let pair = ParallelPair {
            src: line,
            tgt: String::new(),
            src_lang: a.src_lang.clone(),
            tgt_lang: a.tgt_lang.clone(),
        };
        println!("{}", translate(&scorer, &vocab, &prompt_for_pair(&pair), opts)?);
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(String::from)
        .collect())
}

fn bleu(a: BleuArgs) -> Result<()> {
    let tokenizer = match a.tokenizer.as_str() {
        "13a" => TokenizerKind::T13a,
        "zh" => TokenizerKind::Zh,
        other => {
            return Err(Error::Config(format!(
                "--tokenizer must be 13a or zh, got {other}"
            )))
        }
    };
    let smoothing = match a.smoothing.as_str() {
        "exp" => Smoothing::Exp,
        "none" => Smoothing::None,
        other => {
            return Err(Error::Config(format!(
                "--smoothing must be exp or none, got {other}"
            )))
        }
    };
    let report = corpus_bleu(&read_lines(&a.hyp)?, &read_lines(&a.reference)?, tokenizer, smoothing)?;
    print_json(&report)
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let adapter_params: usize = ck
        .arrays
        .iter()
        .filter(|(name, _)| name.starts_with("lora/"))
        .map(|(_, t)| t.data().len())
        .sum();
    print_json(&serde_json::json!({
        "model": ck.model,
        "step": ck.step,
        "train_digest": ck.train_digest,
        "trainable": {
            "full": param_count(&ck.model),
            "lora": (adapter_params > 0).then_some(adapter_params),
        },
        "lora": ck.lora,
        "val_history": ck.val_history,
        "arrays": ck.arrays.len(),
    }))
}
