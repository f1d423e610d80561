//! One TOML file drives the whole pipeline: model shape, language mixture,
//! both training stages, and evaluation. Unknown keys anywhere are errors,
//! as are inconsistent values; the file validates as a whole before any
//! work starts.
//!
//! ```
//! use almaforge::config::RecipeConfig;
//!
//! let cfg = RecipeConfig::parse(
//!     r#"
//!     seed = 7
//!     manifest = "corpus/manifest.json"
//!
//!     [model]
//!     vocab_size = 200
//!     d_model = 64
//!     n_layers = 2
//!     n_heads = 4
//!     d_ff = 128
//!     max_len = 128
//!
//!     [stage1]
//!     token_budget = 100_000
//!     micro_batch = 8
//!     accum_steps = 4
//!
//!     [stage2]
//!     micro_batch = 8
//!     accum_steps = 4
//!
//!     [eval]
//!     beam = 5
//! "#,
//! )?;
//! assert_eq!(cfg.stage1.as_ref().unwrap().effective_batch, 32);
//! assert_eq!(cfg.stage2.as_ref().unwrap().epochs, Some(2));
//! assert_eq!(cfg.stage2.as_ref().unwrap().seed, 7);
//! # Ok::<(), almaforge::Error>(())
//! ```

use crate::datamix::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::model::ModelConfig;
use crate::recipe::RecipeOptions;
use crate::trainer::TrainConfig;
use indexmap::IndexMap;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// `[eval]` section: decoding and scoring knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Beam width; 1 is greedy search.
    pub beam: usize,
    /// Cap on generated tokens per sentence.
    pub max_new: usize,
    /// Score at most this many held-out pairs per direction; 0 scores all.
    pub limit: usize,
    /// Directions to score, as "src-tgt" codes; empty scores every one.
    pub directions: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalOptions::default();
        Self {
            beam: d.beam,
            max_new: d.max_new,
            limit: 0,
            directions: Vec::new(),
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            beam: self.beam,
            max_new: self.max_new,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureSection {
    #[serde(default = "default_temperature")]
    temperature: f64,
    #[serde(default)]
    pinned: IndexMap<String, f64>,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

/// The file as written. Stage sections stay untyped here so their stage
/// number and derived batch size can be filled in before strict decoding.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    manifest: Option<PathBuf>,
    #[serde(default)]
    snapshots: Vec<u64>,
    model: Option<ModelConfig>,
    mixture: Option<MixtureSection>,
    stage1: Option<toml::Table>,
    stage2: Option<toml::Table>,
    eval: Option<EvalSection>,
}

/// A parsed and validated recipe file. Sections a given command does not
/// need may be absent; the `want_*` accessors turn absence into an error
/// naming the missing section.
#[derive(Debug, Clone)]
pub struct RecipeConfig {
    /// Top-level seed; when set it overrides both stages' seeds. The
    /// `--seed` flag and `ALMAFORGE_SEED` override it in turn.
    pub seed: Option<u64>,
    /// Corpus manifest path, resolved relative to the config file.
    pub manifest: Option<PathBuf>,
    /// Stage-1 milestones in supervised tokens; each gets its own stage-2
    /// run and evaluation.
    pub snapshots: Vec<u64>,
    pub model: Option<ModelConfig>,
    pub temperature: f64,
    pub pinned: IndexMap<String, f64>,
    pub stage1: Option<TrainConfig>,
    pub stage2: Option<TrainConfig>,
    pub eval: EvalSection,
}

/// `ALMAFORGE_SEED`, if set and well-formed.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var("ALMAFORGE_SEED") {
        Ok(s) => s.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::Config(format!(
                "ALMAFORGE_SEED must be an unsigned integer, got {s:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

impl RecipeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(m), Some(dir)) = (&mut cfg.manifest, path.parent()) {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut stage1 = raw.stage1.map(|t| stage_config(t, 1)).transpose()?;
        let mut stage2 = raw.stage2.map(|t| stage_config(t, 2)).transpose()?;
        if let Some(seed) = raw.seed {
            if let Some(c) = &mut stage1 {
                c.seed = seed;
            }
            if let Some(c) = &mut stage2 {
                c.seed = seed;
            }
        }
        if let Some(m) = &raw.model {
            m.validate()?;
        }
        let (temperature, pinned) = match raw.mixture {
            Some(m) => {
                if !(m.temperature > 0.0) {
                    return Err(Error::Config(format!(
                        "mixture.temperature must be positive, got {}",
                        m.temperature
                    )));
                }
                let total: f64 = m.pinned.values().sum();
                for (lang, p) in &m.pinned {
                    if !(*p > 0.0 && *p < 1.0) {
                        return Err(Error::Config(format!(
                            "mixture.pinned.{lang} must be in (0, 1), got {p}"
                        )));
                    }
                }
                if total >= 1.0 {
                    return Err(Error::Config(format!(
                        "mixture.pinned fractions sum to {total}, leaving nothing to share"
                    )));
                }
                (m.temperature, m.pinned)
            }
            None => (DEFAULT_TEMPERATURE, IndexMap::new()),
        };
        if !raw.snapshots.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "snapshots must be strictly increasing".into(),
            ));
        }
        let eval = raw.eval.unwrap_or_default();
        if eval.beam == 0 {
            return Err(Error::Config("eval.beam must be at least 1".into()));
        }
        if eval.max_new == 0 {
            return Err(Error::Config("eval.max_new must be at least 1".into()));
        }
        Ok(Self {
            seed: raw.seed,
            manifest: raw.manifest,
            snapshots: raw.snapshots,
            model: raw.model,
            temperature,
            pinned,
            stage1,
            stage2,
            eval,
        })
    }

    /// Overlay seed precedence: the flag beats `ALMAFORGE_SEED`, which beats
    /// the file. The winner lands in both stage configs.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<()> {
        let env = seed_from_env()?;
        self.apply_seed(flag, env);
        Ok(())
    }

    /// `resolve_seed` with the environment value passed in, for tests.
    pub fn apply_seed(&mut self, flag: Option<u64>, env: Option<u64>) {
        if let Some(seed) = flag.or(env) {
            self.seed = Some(seed);
            if let Some(c) = &mut self.stage1 {
                c.seed = seed;
            }
            if let Some(c) = &mut self.stage2 {
                c.seed = seed;
            }
        }
    }

    pub fn want_model(&self) -> Result<ModelConfig> {
        self.model
            .ok_or_else(|| Error::Config("this command needs a [model] section".into()))
    }

    pub fn want_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs the `manifest` key".into()))
    }

    pub fn want_stage1(&self) -> Result<&TrainConfig> {
        self.stage1
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [stage1] section".into()))
    }

    pub fn want_stage2(&self) -> Result<&TrainConfig> {
        self.stage2
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [stage2] section".into()))
    }

    /// The recipe-level knobs this file pins down.
    pub fn recipe_options(&self) -> Result<RecipeOptions> {
        Ok(RecipeOptions {
            model: self.want_model()?,
            temperature: self.temperature,
            pinned: self.pinned.clone(),
            snapshots: self.snapshots.clone(),
            eval: self.eval.options(),
            eval_limit: self.eval.limit,
            directions: self.eval.directions.clone(),
        })
    }
}

/// Strictly decode one stage section. The stage number comes from the
/// section name, and an omitted `effective_batch` defaults to
/// `micro_batch × accum_steps` so configs only state it to assert it.
fn stage_config(mut table: toml::Table, stage: u8) -> Result<TrainConfig> {
    if table.contains_key("stage") {
        return Err(Error::Config(format!(
            "[stage{stage}]: the stage number is implied by the section name; \
             remove the `stage` key"
        )));
    }
    table.insert("stage".into(), toml::Value::Integer(stage.into()));
    if !table.contains_key("effective_batch") {
        let int_or = |key: &str, default: i64| {
            table.get(key).and_then(toml::Value::as_integer).unwrap_or(default)
        };
        let derived = int_or("micro_batch", 16) * int_or("accum_steps", 16);
        table.insert("effective_batch".into(), toml::Value::Integer(derived));
    }
    if stage == 2 && !table.contains_key("epochs") && !table.contains_key("token_budget") {
        table.insert("epochs".into(), toml::Value::Integer(2));
    }
    let cfg: TrainConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("[stage{stage}]: {e}")))?;
    cfg.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("[stage{stage}]: {msg}")),
        other => other,
    })?;
    Ok(cfg)
}
