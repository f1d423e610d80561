//! Temperature-based language mixing and the synthetic bilingual corpora
//! used for desk-scale runs.
//!
//! `compute_mixture` turns per-language word counts into sampling
//! probabilities: unpinned languages get `P(l) ∝ (D_l / Σ D)^(1/T)`, scaled
//! so their total equals `1 - Σ pinned`. `stream_mixture` draws documents
//! from per-language shard files under those probabilities, deterministically
//! for a given (spec, seed), wrapping exhausted languages with a reshuffle.
//!
//! `gen_toy_corpus` fabricates a two-language world ("aa"/Alpha and
//! "ab"/Beta) where the translation is an exact token-level transform, so a
//! perfect translator exists and BLEU 100 is attainable.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::vocab::Vocab;
use indexmap::IndexMap;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageCorpusStat {
    pub language: String,
    /// Whitespace word count of the corpus (the mixing weight input).
    pub word_count: f64,
    #[serde(default)]
    pub shard_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Language → sampling probability, in corpus-stat order. Sums to 1.
    pub probabilities: IndexMap<String, f64>,
    pub temperature: f64,
    /// Languages whose probability was fixed rather than computed.
    pub pinned: IndexMap<String, f64>,
}

/// The published default: temperature 6, English pinned to 1/6.
pub fn default_pinned() -> IndexMap<String, f64> {
    IndexMap::from([("en".to_string(), 1.0 / 6.0)])
}

pub const DEFAULT_TEMPERATURE: f64 = 6.0;

/// Temperature-scaled sampling probabilities from corpus word counts.
/// Pinned languages keep their given fraction; the rest share `1 - Σ pinned`
/// in proportion to `(D_l / Σ D)^(1/T)`.
pub fn compute_mixture(
    stats: &[LanguageCorpusStat],
    temperature: f64,
    pinned: &IndexMap<String, f64>,
) -> Result<MixtureSpec> {
    if stats.is_empty() {
        return Err(Error::Config("no language statistics given".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut seen = HashMap::new();
    for s in stats {
        if !(s.word_count > 0.0) {
            return Err(Error::Data(format!(
                "language {} has nonpositive word count {}",
                s.language, s.word_count
            )));
        }
        if seen.insert(s.language.clone(), ()).is_some() {
            return Err(Error::Data(format!(
                "language {} appears twice in the statistics",
                s.language
            )));
        }
    }
    let mut pinned_sum = 0.0;
    for (lang, p) in pinned {
        if !seen.contains_key(lang) {
            return Err(Error::Config(format!(
                "pinned language {lang} is not in the corpus statistics"
            )));
        }
        if !(*p > 0.0) {
            return Err(Error::Config(format!(
                "pinned probability for {lang} must be positive, got {p}"
            )));
        }
        pinned_sum += p;
    }
    if pinned_sum >= 1.0 {
        return Err(Error::Config(format!(
            "pinned probabilities sum to {pinned_sum}, leaving nothing to distribute"
        )));
    }
    if pinned.len() == stats.len() {
        return Err(Error::Config(
            "every language is pinned; no language can receive the remaining mass".into(),
        ));
    }

    let total: f64 = stats.iter().map(|s| s.word_count).sum();
    let inv_t = 1.0 / temperature;
    let mut weights: Vec<f64> = Vec::with_capacity(stats.len());
    let mut weight_sum = 0.0;
    for s in stats {
        if pinned.contains_key(&s.language) {
            weights.push(0.0);
        } else {
            let w = (s.word_count / total).powf(inv_t);
            weights.push(w);
            weight_sum += w;
        }
    }
    let scale = (1.0 - pinned_sum) / weight_sum;
    let mut probabilities = IndexMap::with_capacity(stats.len());
    for (s, w) in stats.iter().zip(&weights) {
        let p = match pinned.get(&s.language) {
            Some(p) => *p,
            None => w * scale,
        };
        probabilities.insert(s.language.clone(), p);
    }
    Ok(MixtureSpec {
        probabilities,
        temperature,
        pinned: pinned.clone(),
    })
}

/// One language's shard cursor: shards are visited in a shuffled order and
/// reshuffled (with a log line) whenever the language is exhausted.
struct LanguageFeed {
    paths: Vec<PathBuf>,
    order: Vec<usize>,
    next_shard: usize,
    /// Remaining documents of the currently open shard, in reverse order so
    /// `pop` yields them front to back.
    pending: Vec<String>,
    rng: ChaCha8Rng,
    wraps: u64,
}

impl LanguageFeed {
    fn new(lang: &str, paths: Vec<PathBuf>, seed: u64) -> Self {
        let mut rng = stream(seed, &format!("mix.shards.{lang}"));
        let mut order: Vec<usize> = (0..paths.len()).collect();
        order.shuffle(&mut rng);
        Self {
            paths,
            order,
            next_shard: 0,
            pending: Vec::new(),
            rng,
            wraps: 0,
        }
    }

    fn load_shard(&mut self, idx: usize) -> Result<()> {
        let path = &self.paths[self.order[idx]];
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read shard {}: {e}", path.display())))?;
        let mut docs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: MonoRecord = serde_json::from_str(line).map_err(|e| {
                Error::Data(format!(
                    "shard {} line {}: bad JSON record: {e}",
                    path.display(),
                    ln + 1
                ))
            })?;
            docs.push(rec.text);
        }
        docs.reverse();
        self.pending = docs;
        Ok(())
    }

    fn next_doc(&mut self, lang: &str) -> Result<String> {
        let mut empty_loads = 0usize;
        loop {
            if let Some(doc) = self.pending.pop() {
                return Ok(doc);
            }
            if empty_loads > self.paths.len() {
                return Err(Error::Data(format!("language {lang} has no documents")));
            }
            if self.next_shard == self.paths.len() {
                // Exhausted: infinite-stream semantics, restart reshuffled.
                self.order.shuffle(&mut self.rng);
                self.next_shard = 0;
                self.wraps += 1;
                eprintln!(
                    "mix: language {lang} exhausted; reshuffling shards (wrap {})",
                    self.wraps
                );
            }
            let idx = self.next_shard;
            self.next_shard += 1;
            self.load_shard(idx)?;
            empty_loads += 1;
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MonoRecord {
    text: String,
    #[serde(default)]
    lang: String,
}

/// Deterministic interleaved document stream. Each draw samples a language
/// from the spec, then takes that language's next document; the stream ends
/// once the cumulative whitespace word count reaches `token_budget`.
pub struct MixtureStream {
    langs: Vec<String>,
    cumulative: Vec<f64>,
    feeds: Vec<LanguageFeed>,
    rng: ChaCha8Rng,
    token_budget: u64,
    emitted_tokens: u64,
    done: bool,
}

pub fn stream_mixture(
    spec: &MixtureSpec,
    shards: &IndexMap<String, Vec<PathBuf>>,
    seed: u64,
    token_budget: u64,
) -> Result<MixtureStream> {
    let mut langs = Vec::new();
    let mut cumulative = Vec::new();
    let mut feeds = Vec::new();
    let mut acc = 0.0;
    for (lang, p) in &spec.probabilities {
        let paths = shards
            .get(lang)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config(format!("language {lang} has no shards")))?;
        acc += p;
        langs.push(lang.clone());
        cumulative.push(acc);
        feeds.push(LanguageFeed::new(lang, paths.clone(), seed));
    }
    Ok(MixtureStream {
        langs,
        cumulative,
        feeds,
        rng: stream(seed, "mix.language"),
        token_budget,
        emitted_tokens: 0,
        done: false,
    })
}

impl MixtureStream {
    /// Wrap counts per language, for audit.
    pub fn wrap_counts(&self) -> IndexMap<String, u64> {
        self.langs
            .iter()
            .zip(&self.feeds)
            .map(|(l, f)| (l.clone(), f.wraps))
            .collect()
    }

    pub fn emitted_tokens(&self) -> u64 {
        self.emitted_tokens
    }
}

impl Iterator for MixtureStream {
    type Item = Result<(String, String)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.emitted_tokens >= self.token_budget {
            return None;
        }
        let u: f64 = self.rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.cumulative.len() - 1);
        match self.feeds[k].next_doc(&self.langs[k]) {
            Ok(doc) => {
                self.emitted_tokens += doc.split_whitespace().count() as u64;
                Some(Ok((self.langs[k].clone(), doc)))
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// How the target language relates to the source in the toy world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// Target sentence is the source tokens in reverse order.
    Reverse,
    /// Target sentence maps each source word through a fixed bijection.
    Cipher,
}

/// Reverse the token order of a whitespace-tokenized sentence.
pub fn reverse_sentence(text: &str) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    words.reverse();
    words.join(" ")
}

pub const TOY_SRC_LANG: &str = "aa";
pub const TOY_TGT_LANG: &str = "ab";

/// Display name used in prompts for a toy language code.
pub fn toy_language_name(code: &str) -> Option<&'static str> {
    match code {
        TOY_SRC_LANG => Some("Alpha"),
        TOY_TGT_LANG => Some("Beta"),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyCorpusSpec {
    pub seed: u64,
    /// Total id budget including specials and (when room) sentinels.
    pub vocab_size: u32,
    /// Monolingual sentences generated per language.
    pub n_sentences: usize,
    /// Parallel training pairs.
    pub n_parallel: usize,
    /// Parallel pairs held out for validation-loss selection.
    pub n_val: usize,
    /// Parallel pairs held out for scoring.
    pub n_test: usize,
    pub transform: Transform,
    pub shards_per_language: usize,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            vocab_size: 200,
            n_sentences: 10_000,
            n_parallel: 2_000,
            n_val: 128,
            n_test: 256,
            transform: Transform::Cipher,
            shards_per_language: 4,
        }
    }
}

/// Everything a generated corpus directory contains, with paths resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub transform: Transform,
    pub vocab: PathBuf,
    pub languages: Vec<ManifestLanguage>,
    pub parallel_train: PathBuf,
    pub parallel_val: PathBuf,
    pub parallel_test: PathBuf,
    /// Word-index bijection for the cipher transform: source word i maps to
    /// target word `cipher[i]`. Empty for reverse.
    pub cipher: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLanguage {
    pub code: String,
    pub name: String,
    pub shards: Vec<PathBuf>,
    pub word_count: f64,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: CorpusManifest = serde_json::from_str(&text)?;
        // Paths in the file are relative to the manifest's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        m.vocab = base.join(&m.vocab);
        m.parallel_train = base.join(&m.parallel_train);
        m.parallel_val = base.join(&m.parallel_val);
        m.parallel_test = base.join(&m.parallel_test);
        for lang in &mut m.languages {
            for s in &mut lang.shards {
                *s = base.join(&*s);
            }
        }
        Ok(m)
    }

    pub fn stats(&self) -> Vec<LanguageCorpusStat> {
        self.languages
            .iter()
            .map(|l| LanguageCorpusStat {
                language: l.code.clone(),
                word_count: l.word_count,
                shard_paths: l.shards.clone(),
            })
            .collect()
    }

    pub fn shard_map(&self) -> IndexMap<String, Vec<PathBuf>> {
        self.languages
            .iter()
            .map(|l| (l.code.clone(), l.shards.clone()))
            .collect()
    }

    pub fn language_name(&self, code: &str) -> Option<&str> {
        self.languages
            .iter()
            .find(|l| l.code == code)
            .map(|l| l.name.as_str())
    }
}

/// A parallel sentence pair, one JSONL record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParallelPair {
    pub src: String,
    pub tgt: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

pub fn read_parallel(path: &Path) -> Result<Vec<ParallelPair>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: ParallelPair = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{} line {}: bad JSON record: {e}", path.display(), ln + 1))
        })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_parallel(path: &Path, pairs: &[ParallelPair]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Token-level oracle translator for a generated toy corpus. Used to verify
/// that a perfect hypothesis set scores BLEU 100 and as the gold standard in
/// end-to-end tests.
pub struct ToyTranslator {
    transform: Transform,
    forward: HashMap<String, String>,
    backward: HashMap<String, String>,
}

impl ToyTranslator {
    pub fn from_manifest(manifest: &CorpusManifest, vocab: &Vocab) -> Result<Self> {
        let mut forward = HashMap::new();
        let mut backward = HashMap::new();
        if manifest.transform == Transform::Cipher {
            let n = manifest.cipher.len();
            if n == 0 {
                return Err(Error::Data("cipher manifest has an empty mapping".into()));
            }
            for (i, j) in manifest.cipher.iter().enumerate() {
                let a = word_a(i as u32);
                let b = word_b(*j);
                if vocab.id(&a).is_none() || vocab.id(&b).is_none() {
                    return Err(Error::Data(format!(
                        "cipher entry {i}->{j} refers to words missing from the vocabulary"
                    )));
                }
                forward.insert(a.clone(), b.clone());
                backward.insert(b, a);
            }
        }
        Ok(Self {
            transform: manifest.transform,
            forward,
            backward,
        })
    }

    /// Translate toy text exactly. `src_lang` must be one of the two toy
    /// codes; words outside the mapping pass through unchanged.
    pub fn translate(&self, text: &str, src_lang: &str) -> String {
        match self.transform {
            Transform::Reverse => reverse_sentence(text),
            Transform::Cipher => {
                let map = if src_lang == TOY_SRC_LANG {
                    &self.forward
                } else {
                    &self.backward
                };
                text.split_whitespace()
                    .map(|w| map.get(w).map_or(w, String::as_str))
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
    }
}

fn word_a(i: u32) -> String {
    format!("a{i}")
}

fn word_b(i: u32) -> String {
    format!("b{i}")
}

/// Words each prompt template line can contain, so prompts encode without
/// UNK when the vocabulary has room for them.
fn template_words() -> [String; 8] {
    [
        "Translate".into(),
        "this".into(),
        "from".into(),
        "to".into(),
        "Alpha".into(),
        "Beta".into(),
        "Alpha:".into(),
        "Beta:".into(),
    ]
}

/// Generate the synthetic two-language corpus into `out_dir`.
///
/// Source sentences are Zipf-distributed words (exponent 1.1) of uniform
/// length 3..=12; the target side applies the configured transform. Writes
/// per-language monolingual shards, parallel train/test JSONL, a vocabulary
/// file, and `manifest.json` tying them together. The id budget is spent in
/// priority order: 4 specials, prompt template words (needs room for 8),
/// the 64-sentinel block (needs room), then content words split evenly
/// between the two languages.
pub fn gen_toy_corpus(spec: &ToyCorpusSpec, out_dir: &Path) -> Result<CorpusManifest> {
    if spec.vocab_size < 10 {
        return Err(Error::Config(format!(
            "vocab_size {} leaves no room for words after the reserved ids",
            spec.vocab_size
        )));
    }
    if spec.shards_per_language == 0 {
        return Err(Error::Config("shards_per_language must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    // Allocate the id budget.
    let mut budget = spec.vocab_size - 4;
    let with_template = budget >= 8 + 2;
    if with_template {
        budget -= 8;
    }
    let with_sentinels = budget >= crate::vocab::NUM_SENTINELS + 2;
    if with_sentinels {
        budget -= crate::vocab::NUM_SENTINELS;
    }
    let half = budget / 2;
    debug_assert!(half >= 1);

    let mut words: Vec<String> = Vec::new();
    if with_template {
        words.extend(template_words());
    }
    words.extend((0..half).map(word_a));
    words.extend((0..half).map(word_b));
    let vocab = if with_sentinels {
        Vocab::with_words(words)?
    } else {
        Vocab::with_words_plain(words)?
    };
    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;

    // Cipher bijection over word indices.
    let cipher: Vec<u32> = match spec.transform {
        Transform::Cipher => {
            let mut perm: Vec<u32> = (0..half).collect();
            perm.shuffle(&mut stream(spec.seed, "toy.cipher"));
            perm
        }
        Transform::Reverse => Vec::new(),
    };

    let zipf = Zipf::new(half as f64, 1.1)
        .map_err(|e| Error::Config(format!("bad Zipf parameters: {e}")))?;
    let sample_indices = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.random_range(3..=12usize);
        (0..len).map(|_| zipf.sample(rng) as u32 - 1).collect()
    };
    let render = |indices: &[u32], lang: &str| -> String {
        indices
            .iter()
            .map(|i| match (lang, spec.transform) {
                (TOY_SRC_LANG, _) => word_a(*i),
                (_, Transform::Cipher) => word_b(cipher[*i as usize]),
                (_, Transform::Reverse) => word_a(*i),
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    // Monolingual shards.
    let mut languages = Vec::new();
    for code in [TOY_SRC_LANG, TOY_TGT_LANG] {
        let mut rng = stream(spec.seed, &format!("toy.mono.{code}"));
        let mut sentences = Vec::with_capacity(spec.n_sentences);
        for _ in 0..spec.n_sentences {
            let idx = sample_indices(&mut rng);
            let text = if code == TOY_TGT_LANG && spec.transform == Transform::Reverse {
                reverse_sentence(&render(&idx, code))
            } else {
                render(&idx, code)
            };
            sentences.push(text);
        }
        let word_count: usize = sentences.iter().map(|s| s.split_whitespace().count()).sum();
        let per_shard = sentences.len().div_ceil(spec.shards_per_language);
        let mut shards = Vec::new();
        for (k, chunk) in sentences.chunks(per_shard.max(1)).enumerate() {
            let rel = PathBuf::from(format!("mono.{code}.{k}.jsonl"));
            let mut out = std::io::BufWriter::new(std::fs::File::create(out_dir.join(&rel))?);
            for text in chunk {
                serde_json::to_writer(&mut out, &MonoRecord {
                    text: text.clone(),
                    lang: code.to_string(),
                })?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            shards.push(rel);
        }
        languages.push(ManifestLanguage {
            code: code.to_string(),
            name: toy_language_name(code).expect("toy code").to_string(),
            shards,
            word_count: word_count as f64,
        });
    }

    // Parallel pairs: fresh source sentences, deduplicated so the held-out
    // test split never overlaps training.
    let mut rng = stream(spec.seed, "toy.parallel");
    let want = spec.n_parallel + spec.n_val + spec.n_test;
    let mut seen = HashMap::new();
    let mut pairs = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while pairs.len() < want {
        attempts += 1;
        if attempts > want * 200 {
            return Err(Error::Data(format!(
                "could not draw {want} distinct source sentences; vocabulary too small"
            )));
        }
        let idx = sample_indices(&mut rng);
        let src = render(&idx, TOY_SRC_LANG);
        if seen.insert(src.clone(), ()).is_some() {
            continue;
        }
        let tgt = match spec.transform {
            Transform::Reverse => reverse_sentence(&src),
            Transform::Cipher => render(&idx, TOY_TGT_LANG),
        };
        pairs.push(ParallelPair {
            src,
            tgt,
            src_lang: TOY_SRC_LANG.to_string(),
            tgt_lang: TOY_TGT_LANG.to_string(),
        });
    }
    let test = pairs.split_off(spec.n_parallel + spec.n_val);
    let val = pairs.split_off(spec.n_parallel);
    let train_rel = PathBuf::from("parallel.train.jsonl");
    let val_rel = PathBuf::from("parallel.val.jsonl");
    let test_rel = PathBuf::from("parallel.test.jsonl");
    write_parallel(&out_dir.join(&train_rel), &pairs)?;
    write_parallel(&out_dir.join(&val_rel), &val)?;
    write_parallel(&out_dir.join(&test_rel), &test)?;

    let manifest = CorpusManifest {
        seed: spec.seed,
        transform: spec.transform,
        vocab: PathBuf::from("vocab.txt"),
        languages,
        parallel_train: train_rel,
        parallel_val: val_rel,
        parallel_test: test_rel,
        cipher,
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    CorpusManifest::load(&manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table7() -> Vec<LanguageCorpusStat> {
        [
            ("de", 73.8e9),
            ("cs", 9.7e9),
            ("is", 0.3e9),
            ("zh", 44.4e9),
            ("ru", 78.0e9),
            ("en", 523.9e9),
        ]
        .into_iter()
        .map(|(l, c)| LanguageCorpusStat {
            language: l.to_string(),
            word_count: c,
            shard_paths: vec![],
        })
        .collect()
    }

    #[test]
    fn published_word_counts_give_published_ratios() {
        let spec = compute_mixture(&table7(), DEFAULT_TEMPERATURE, &default_pinned()).unwrap();
        let expect = [
            ("de", 0.20),
            ("cs", 0.14),
            ("is", 0.08),
            ("zh", 0.19),
            ("ru", 0.22),
            ("en", 0.17),
        ];
        for (lang, want) in expect {
            let got = spec.probabilities[lang];
            assert!(
                (got - want).abs() <= 0.02,
                "{lang}: got {got:.4}, want {want} ± 0.02"
            );
        }
        let sum: f64 = spec.probabilities.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equal_counts_share_the_unpinned_mass_evenly() {
        let mut stats: Vec<LanguageCorpusStat> = (0..5)
            .map(|i| LanguageCorpusStat {
                language: format!("l{i}"),
                word_count: 3.0e9,
                shard_paths: vec![],
            })
            .collect();
        stats.push(LanguageCorpusStat {
            language: "en".into(),
            word_count: 500.0e9,
            shard_paths: vec![],
        });
        let spec = compute_mixture(&stats, 3.3, &default_pinned()).unwrap();
        for i in 0..5 {
            let p = spec.probabilities[&format!("l{i}")];
            assert!((p - (5.0 / 6.0) / 5.0).abs() < 1e-12, "got {p}");
        }
    }

    #[test]
    fn two_language_closed_form() {
        // Counts 1:8 at temperature 6 weight the languages 1 : 8^(1/6) = √2.
        let stats = vec![
            LanguageCorpusStat {
                language: "aa".into(),
                word_count: 1.0e9,
                shard_paths: vec![],
            },
            LanguageCorpusStat {
                language: "ab".into(),
                word_count: 8.0e9,
                shard_paths: vec![],
            },
            LanguageCorpusStat {
                language: "en".into(),
                word_count: 500.0e9,
                shard_paths: vec![],
            },
        ];
        let spec = compute_mixture(&stats, 6.0, &default_pinned()).unwrap();
        assert!((spec.probabilities["aa"] - 0.34518).abs() < 1e-5);
        assert!((spec.probabilities["ab"] - 0.48816).abs() < 1e-5);
    }

    #[test]
    fn mixture_is_scale_invariant() {
        let a = compute_mixture(&table7(), 6.0, &default_pinned()).unwrap();
        let mut scaled = table7();
        for s in &mut scaled {
            s.word_count *= 3.7;
        }
        let b = compute_mixture(&scaled, 6.0, &default_pinned()).unwrap();
        for (lang, p) in &a.probabilities {
            assert!((p - b.probabilities[lang]).abs() < 1e-12);
        }
    }

    #[test]
    fn bigger_corpora_get_bigger_shares_and_high_t_flattens() {
        let spec = compute_mixture(&table7(), 6.0, &default_pinned()).unwrap();
        // Unpinned monotonicity in word count.
        assert!(spec.probabilities["ru"] > spec.probabilities["de"]);
        assert!(spec.probabilities["de"] > spec.probabilities["zh"]);
        assert!(spec.probabilities["zh"] > spec.probabilities["cs"]);
        assert!(spec.probabilities["cs"] > spec.probabilities["is"]);

        let flat = compute_mixture(&table7(), 1.0e6, &default_pinned()).unwrap();
        let uniform = (5.0 / 6.0) / 5.0;
        for (lang, p) in &flat.probabilities {
            if lang != "en" {
                assert!((p - uniform).abs() < 1e-4, "{lang}: {p}");
            }
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let err = compute_mixture(&table7()[..5], 6.0, &default_pinned()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "unknown pinned language: {err}");

        let mut stats = table7();
        stats[0].word_count = 0.0;
        assert!(matches!(
            compute_mixture(&stats, 6.0, &default_pinned()).unwrap_err(),
            Error::Data(_)
        ));

        let all_pinned = IndexMap::from([("aa".to_string(), 0.5)]);
        let one = vec![LanguageCorpusStat {
            language: "aa".into(),
            word_count: 1.0,
            shard_paths: vec![],
        }];
        assert!(compute_mixture(&one, 6.0, &all_pinned).is_err());
    }

    fn tiny_corpus(dir: &Path) -> CorpusManifest {
        gen_toy_corpus(
            &ToyCorpusSpec {
                seed: 7,
                vocab_size: 200,
                n_sentences: 200,
                n_parallel: 50,
                n_val: 8,
                n_test: 10,
                transform: Transform::Cipher,
                shards_per_language: 3,
            },
            dir,
        )
        .unwrap()
    }

    #[test]
    fn stream_is_deterministic_and_budgeted() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path());
        let spec = compute_mixture(&manifest.stats(), 6.0, &IndexMap::new()).unwrap();
        let shards = manifest.shard_map();

        let collect = |seed: u64, budget: u64| -> Vec<(String, String)> {
            stream_mixture(&spec, &shards, seed, budget)
                .unwrap()
                .collect::<Result<Vec<_>>>()
                .unwrap()
        };
        let a = collect(3, 4000);
        let b = collect(3, 4000);
        assert_eq!(a, b, "same (spec, seed) must give a bit-identical stream");
        assert_ne!(a, collect(4, 4000), "different seed should reorder the stream");

        assert!(collect(3, 0).is_empty(), "budget 0 yields an empty stream");

        // The stream stops at the first document that reaches the budget.
        let mut s = stream_mixture(&spec, &shards, 3, 4000).unwrap();
        let mut total = 0u64;
        for item in &mut s {
            let (_, doc) = item.unwrap();
            total += doc.split_whitespace().count() as u64;
        }
        assert!(total >= 4000);
        assert!(total < 4000 + 13, "overshoot is at most one document");
        // 200 sentences/language at ~7.5 words: a 4000-token draw wraps.
        assert!(s.wrap_counts().values().sum::<u64>() >= 1);
    }

    #[test]
    fn stream_frequencies_converge_to_the_spec() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path());
        // Skew the weights away from 50/50 via pinning.
        let pinned = IndexMap::from([("aa".to_string(), 0.7)]);
        let spec = compute_mixture(&manifest.stats(), 6.0, &pinned).unwrap();
        let shards = manifest.shard_map();
        let mut counts: IndexMap<String, usize> = IndexMap::new();
        const DRAWS: usize = 100_000;
        let s = stream_mixture(&spec, &shards, 9, u64::MAX).unwrap();
        for item in s.take(DRAWS) {
            let (lang, _) = item.unwrap();
            *counts.entry(lang).or_insert(0) += 1;
        }
        for (lang, p) in &spec.probabilities {
            let f = counts[lang] as f64 / DRAWS as f64;
            assert!((f - p).abs() < 0.01, "{lang}: frequency {f} vs spec {p}");
        }
    }

    #[test]
    fn missing_shards_are_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path());
        let spec = compute_mixture(&manifest.stats(), 6.0, &IndexMap::new()).unwrap();
        let shards = IndexMap::from([("aa".to_string(), manifest.shard_map()["aa"].clone())]);
        match stream_mixture(&spec, &shards, 1, 10) {
            Err(Error::Config(_)) => {}
            Err(e) => panic!("expected a config error, got {e}"),
            Ok(_) => panic!("expected a config error"),
        }
    }

    #[test]
    fn reverse_transform_reverses_tokens() {
        assert_eq!(reverse_sentence("a b c"), "c b a");
        assert_eq!(reverse_sentence("solo"), "solo");
    }

    #[test]
    fn cipher_is_a_bijection_on_all_generated_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path());
        let vocab = Vocab::load(&manifest.vocab).unwrap();
        let oracle = ToyTranslator::from_manifest(&manifest, &vocab).unwrap();
        let mut sorted = manifest.cipher.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..manifest.cipher.len() as u32).collect::<Vec<_>>());
        for path in [
            &manifest.parallel_train,
            &manifest.parallel_val,
            &manifest.parallel_test,
        ] {
            for pair in read_parallel(path).unwrap() {
                assert_eq!(oracle.translate(&pair.src, "aa"), pair.tgt);
                assert_eq!(oracle.translate(&pair.tgt, "ab"), pair.src);
            }
        }
    }

    #[test]
    fn generated_sentence_lengths_match_the_distribution() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_toy_corpus(
            &ToyCorpusSpec {
                n_sentences: 10_000,
                n_parallel: 10,
                n_val: 4,
                n_test: 5,
                ..ToyCorpusSpec::default()
            },
            dir.path(),
        )
        .unwrap();
        let mut lens = Vec::new();
        for shard in &manifest.shard_map()["aa"] {
            let text = std::fs::read_to_string(shard).unwrap();
            for line in text.lines() {
                let rec: serde_json::Value = serde_json::from_str(line).unwrap();
                lens.push(rec["text"].as_str().unwrap().split_whitespace().count());
            }
        }
        assert_eq!(lens.len(), 10_000);
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert!((mean - 7.5).abs() < 0.5, "mean sentence length {mean}");
        assert!(lens.iter().all(|l| (3..=12).contains(l)));
    }

    #[test]
    fn toy_vocab_spends_the_id_budget() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path());
        let vocab = Vocab::load(&manifest.vocab).unwrap();
        // 4 specials + 8 template + 62+62 content + 64 sentinels = 200.
        assert_eq!(vocab.len(), 200);
        assert_eq!(vocab.num_sentinels(), 64);
        assert!(vocab.id("Translate").is_some());
        assert!(vocab.id("Beta:").is_some());
        assert!(vocab.id("a61").is_some());
        assert!(vocab.id("b61").is_some());
        assert!(vocab.id("a62").is_none());

        // Tiny budgets drop template words and sentinels but still work.
        let dir2 = tempfile::tempdir().unwrap();
        let small = gen_toy_corpus(
            &ToyCorpusSpec {
                vocab_size: 10,
                n_sentences: 20,
                n_parallel: 5,
                n_val: 2,
                n_test: 2,
                ..ToyCorpusSpec::default()
            },
            dir2.path(),
        )
        .unwrap();
        let v2 = Vocab::load(&small.vocab).unwrap();
        assert_eq!(v2.len(), 10);
        assert_eq!(v2.num_sentinels(), 0);

        assert!(gen_toy_corpus(
            &ToyCorpusSpec {
                vocab_size: 9,
                ..ToyCorpusSpec::default()
            },
            dir2.path(),
        )
        .is_err());
    }

    #[test]
    fn generation_is_reproducible_byte_for_byte() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = tiny_corpus(d1.path());
        let m2 = tiny_corpus(d2.path());
        for (a, b) in [
            (&m1.parallel_train, &m2.parallel_train),
            (&m1.parallel_val, &m2.parallel_val),
            (&m1.parallel_test, &m2.parallel_test),
            (&m1.vocab, &m2.vocab),
            (&m1.languages[0].shards[0], &m2.languages[0].shards[0]),
            (&m1.languages[1].shards[2], &m2.languages[1].shards[2]),
        ] {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{} differs between runs",
                a.display()
            );
        }
    }

    #[test]
    fn held_out_splits_are_disjoint_from_training() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path());
        let train = read_parallel(&manifest.parallel_train).unwrap();
        let val = read_parallel(&manifest.parallel_val).unwrap();
        let test = read_parallel(&manifest.parallel_test).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(val.len(), 8);
        assert_eq!(test.len(), 10);
        let mut srcs: std::collections::HashSet<&str> = std::collections::HashSet::new();
        for p in train.iter().chain(&val).chain(&test) {
            assert!(srcs.insert(p.src.as_str()), "{} appears twice", p.src);
        }
    }
}
