//! Toy parallel corpora with gold alignments.
//!
//! The "translation" maps every source word through a fixed dictionary and
//! reverses word order, so the target is an exact, checkable function of the
//! source that still requires reordering. Each word owns a short base pattern
//! of unit ids; an utterance is the concatenation of its words' patterns,
//! each stretched to a jittered duration. Nothing is deduplicated.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::cot::AlignedPair;
use crate::ctc_align::{FramePosteriors, WordAlignment, WordSpan};
use crate::error::{invalid, Error, Result};
use crate::quantizer::Features;
use crate::rng::{self, purpose};
use crate::vocab::BpeModel;

/// Generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    /// Words per language.
    pub n_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Mean frames per word.
    pub expansion_r: u32,
    /// Durations are uniform on `[r - jitter, r + jitter]`.
    pub jitter: u32,
    /// Size of the gold unit inventory.
    pub n_units: u32,
    pub pattern_min: usize,
    pub pattern_max: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n_words: 24,
            min_len: 2,
            max_len: 5,
            expansion_r: 10,
            jitter: 2,
            n_units: 64,
            pattern_min: 2,
            pattern_max: 4,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_words == 0 {
            return Err(invalid("n_words must be at least 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(invalid("need 1 <= min_len <= max_len"));
        }
        check_expansion(self.expansion_r, self.jitter)?;
        if self.n_units == 0 {
            return Err(invalid("n_units must be at least 1"));
        }
        if self.pattern_min == 0 || self.pattern_min > self.pattern_max {
            return Err(invalid("need 1 <= pattern_min <= pattern_max"));
        }
        Ok(())
    }
}

fn check_expansion(r: u32, jitter: u32) -> Result<()> {
    if r < 1 {
        return Err(invalid("expansion ratio must be at least 1"));
    }
    if jitter >= r {
        return Err(invalid("jitter must be smaller than the expansion ratio"));
    }
    Ok(())
}

/// Source and target lexicons plus the word-to-unit patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyLanguage {
    pub src_words: Vec<String>,
    /// `tgt_words[i]` translates `src_words[i]`.
    pub tgt_words: Vec<String>,
    pub unit_map: UnitMap,
}

/// Base unit pattern per word.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnitMap {
    pub patterns: BTreeMap<String, Vec<u32>>,
}

impl UnitMap {
    pub fn pattern(&self, word: &str) -> Option<&[u32]> {
        self.patterns.get(word).map(Vec::as_slice)
    }
}

const SRC_ONSETS: &[&str] = &["p", "t", "k", "m", "n", "l", "s"];
const SRC_VOWELS: &[&str] = &["a", "i", "u"];
const TGT_ONSETS: &[&str] = &["b", "d", "g", "v", "z", "r", "h"];
const TGT_VOWELS: &[&str] = &["e", "o"];

fn make_words<R: Rng>(n: usize, onsets: &[&str], vowels: &[&str], rng: &mut R) -> Vec<String> {
    let mut syllables = Vec::new();
    for o in onsets {
        for v in vowels {
            syllables.push(format!("{o}{v}"));
        }
    }
    let mut words: Vec<String> = Vec::new();
    let mut syl = 2;
    while words.len() < n {
        let w: String = (0..syl).map(|_| syllables[rng.gen_range(0..syllables.len())].as_str()).collect();
        if !words.contains(&w) {
            words.push(w);
        } else if rng.gen_ratio(1, 8) {
            // Grow words once the short forms get crowded.
            syl += 1;
        }
    }
    words
}

impl ToyLanguage {
    pub fn generate(params: &CorpusParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut r = rng::stream(seed, &[purpose::CORPUS, u64::MAX]);
        let src_words = make_words(params.n_words, SRC_ONSETS, SRC_VOWELS, &mut r);
        let tgt_words = make_words(params.n_words, TGT_ONSETS, TGT_VOWELS, &mut r);
        let mut patterns = BTreeMap::new();
        for w in src_words.iter().chain(&tgt_words) {
            let len = r.gen_range(params.pattern_min..=params.pattern_max);
            let mut pat = Vec::with_capacity(len);
            while pat.len() < len {
                let u = r.gen_range(0..params.n_units);
                if pat.last() != Some(&u) {
                    pat.push(u);
                }
            }
            patterns.insert(w.clone(), pat);
        }
        Ok(Self { src_words, tgt_words, unit_map: UnitMap { patterns } })
    }

    pub fn translate<S: AsRef<str>>(&self, src: &[S]) -> Result<Vec<String>> {
        src.iter()
            .rev()
            .map(|w| {
                let i = self
                    .src_words
                    .iter()
                    .position(|s| s == w.as_ref())
                    .ok_or_else(|| invalid(format!("unknown source word {:?}", w.as_ref())))?;
                Ok(self.tgt_words[i].clone())
            })
            .collect()
    }

    /// Inverse of [`translate`](Self::translate).
    pub fn back_translate<S: AsRef<str>>(&self, tgt: &[S]) -> Result<Vec<String>> {
        tgt.iter()
            .rev()
            .map(|w| {
                let i = self
                    .tgt_words
                    .iter()
                    .position(|s| s == w.as_ref())
                    .ok_or_else(|| invalid(format!("unknown target word {:?}", w.as_ref())))?;
                Ok(self.src_words[i].clone())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// A uniformly random source sentence and its toy translation.
pub fn gen_toy_pair<R: Rng + ?Sized>(
    rng: &mut R,
    lang: &ToyLanguage,
    min_len: usize,
    max_len: usize,
) -> Result<TextPair> {
    if min_len == 0 || min_len > max_len {
        return Err(invalid("need 1 <= min_len <= max_len"));
    }
    if lang.src_words.is_empty() {
        return Err(invalid("empty word list"));
    }
    let len = rng.gen_range(min_len..=max_len);
    let src: Vec<String> = (0..len).map(|_| lang.src_words[rng.gen_range(0..lang.src_words.len())].clone()).collect();
    let tgt = lang.translate(&src)?;
    Ok(TextPair { src, tgt })
}

/// Expands words into units: each word lasts `d ∈ [r - jitter, r + jitter]`
/// frames, frame `i` of a word taking `pattern[i·|pattern| / d]`. The gold
/// spans tile the output exactly.
pub fn text_to_units<S: AsRef<str>, R: Rng + ?Sized>(
    words: &[S],
    expansion_r: u32,
    jitter: u32,
    unit_map: &UnitMap,
    rng: &mut R,
) -> Result<(Vec<u32>, WordAlignment)> {
    check_expansion(expansion_r, jitter)?;
    let mut units = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    for w in words {
        let w = w.as_ref();
        let pattern = unit_map.pattern(w).ok_or_else(|| invalid(format!("no unit pattern for {w:?}")))?;
        if pattern.is_empty() {
            return Err(invalid(format!("empty unit pattern for {w:?}")));
        }
        let d = rng.gen_range(expansion_r - jitter..=expansion_r + jitter) as usize;
        let start = units.len();
        units.extend((0..d).map(|i| pattern[i * pattern.len() / d]));
        spans.push(WordSpan::new(start, units.len() - 1, w));
    }
    Ok((units, WordAlignment::new(spans)))
}

/// Synthetic CTC posteriors for forced-alignment tests and the pipeline.
///
/// Word `i` carries CTC labels `word_labels[i]` (non-zero; 0 is blank). Its
/// span is cut into one block per label, and every frame of block `j` puts
/// mass `sharpness` on label `j`. When the next label is the same id, the
/// block is twice as long and its final frame goes to blank instead so the two
/// stay separable.
/// Frames outside every span go to blank. The remaining `1 - sharpness` is
/// spread evenly over the other classes.
pub fn make_posteriors(
    frames: usize,
    align: &WordAlignment,
    word_labels: &[Vec<u32>],
    classes: usize,
    sharpness: f64,
) -> Result<FramePosteriors> {
    if !(sharpness > 0.0 && sharpness <= 1.0) {
        return Err(invalid("sharpness must lie in (0, 1]"));
    }
    if classes < 2 {
        return Err(invalid("need at least two CTC classes"));
    }
    if word_labels.len() != align.len() {
        return Err(Error::CountMismatch { counts: word_labels.len(), spans: align.len() });
    }
    align.validate(frames)?;
    let mut target = vec![0u32; frames];
    for (w, span) in align.spans.iter().enumerate() {
        let labels = &word_labels[w];
        let d = span.end - span.start + 1;
        if labels.is_empty() {
            return Err(invalid(format!("word {w} has no labels")));
        }
        // A label followed by the same id needs a trailing blank frame, so
        // its block counts double when the span is divided.
        let next_word = word_labels
            .get(w + 1)
            .and_then(|l| l.first())
            .filter(|_| align.spans.get(w + 1).is_some_and(|s| s.start == span.end + 1));
        let repeats: Vec<bool> = (0..labels.len())
            .map(|j| labels.get(j + 1).or(if j + 1 == labels.len() { next_word } else { None }) == Some(&labels[j]))
            .collect();
        let weights: Vec<usize> = repeats.iter().map(|&r| 1 + r as usize).collect();
        let total: usize = weights.iter().sum();
        if total > d {
            return Err(invalid(format!("word {w} needs {total} frames for its labels but spans {d}")));
        }
        let mut acc = 0;
        for (j, &label) in labels.iter().enumerate() {
            if label == 0 || label as usize >= classes {
                return Err(Error::InvalidTokenId { id: label, context: "CTC label" });
            }
            let a = span.start + acc * d / total;
            acc += weights[j];
            let b = span.start + acc * d / total;
            target[a..b].fill(label);
            if repeats[j] {
                target[b - 1] = 0;
            }
        }
    }
    let rest = if classes > 1 { (1.0 - sharpness) / (classes - 1) as f64 } else { 0.0 };
    let (hi, lo) = (libm::log(sharpness), libm::log(rest));
    let mut lp = Vec::with_capacity(frames * classes);
    for &t in &target {
        lp.extend((0..classes).map(|c| if c == t as usize { hi } else { lo }));
    }
    FramePosteriors::new(frames, classes, lp)
}

/// Fixed per-unit prototype vectors; a frame's feature is its unit's
/// prototype plus isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSynth {
    pub dim: usize,
    pub noise: f64,
    prototypes: Vec<f64>,
}

impl FeatureSynth {
    pub fn new(n_units: usize, dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if n_units == 0 || dim == 0 {
            return Err(invalid("n_units and dim must be at least 1"));
        }
        if !(noise >= 0.0) {
            return Err(invalid("noise must be non-negative"));
        }
        let mut r = rng::stream(seed, &[purpose::FEATURES, u64::MAX]);
        let prototypes = (0..n_units * dim).map(|_| rng::standard_normal(&mut r)).collect();
        Ok(Self { dim, noise, prototypes })
    }

    pub fn n_units(&self) -> usize {
        self.prototypes.len() / self.dim
    }

    pub fn prototype(&self, unit: u32) -> &[f64] {
        &self.prototypes[unit as usize * self.dim..(unit as usize + 1) * self.dim]
    }

    pub fn features<R: Rng + ?Sized>(&self, units: &[u32], rng: &mut R) -> Result<Features> {
        let mut data = Vec::with_capacity(units.len() * self.dim);
        for &u in units {
            if u as usize >= self.n_units() {
                return Err(Error::InvalidTokenId { id: u, context: "unit without a prototype" });
            }
            data.extend(self.prototype(u).iter().map(|&x| x + self.noise * rng::standard_normal(rng)));
        }
        Features::new(self.dim, data)
    }
}

/// One generated pair with gold units and alignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyPair {
    pub id: u64,
    pub src_text: String,
    pub tgt_text: String,
    pub src_units: Vec<u32>,
    pub tgt_units: Vec<u32>,
    pub src_align: WordAlignment,
    pub tgt_align: WordAlignment,
}

impl ToyPair {
    /// The pair with its gold alignments, ready for example assembly.
    pub fn aligned(&self, bpe: &BpeModel) -> AlignedPair {
        AlignedPair::new(
            self.id,
            self.src_units.clone(),
            self.src_align.clone(),
            self.tgt_units.clone(),
            self.tgt_align.clone(),
            bpe,
        )
    }
}

/// Generates pair `id`, using only its own RNG stream.
pub fn generate_pair(lang: &ToyLanguage, params: &CorpusParams, seed: u64, id: u64) -> Result<ToyPair> {
    let mut r = rng::stream(seed, &[purpose::CORPUS, id]);
    let text = gen_toy_pair(&mut r, lang, params.min_len, params.max_len)?;
    let (src_units, src_align) = text_to_units(&text.src, params.expansion_r, params.jitter, &lang.unit_map, &mut r)?;
    let (tgt_units, tgt_align) = text_to_units(&text.tgt, params.expansion_r, params.jitter, &lang.unit_map, &mut r)?;
    Ok(ToyPair {
        id,
        src_text: text.src.join(" "),
        tgt_text: text.tgt.join(" "),
        src_units,
        tgt_units,
        src_align,
        tgt_align,
    })
}

pub fn generate_pairs(lang: &ToyLanguage, params: &CorpusParams, seed: u64, n_pairs: usize) -> Result<Vec<ToyPair>> {
    if n_pairs == 0 {
        return Err(invalid("n_pairs must be at least 1"));
    }
    (0..n_pairs as u64).map(|id| generate_pair(lang, params, seed, id)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// 90/5/5 split: indices are ranked by a hash of `(seed, index)`; the lowest
/// 5% go to test, the next 5% to dev, the rest to train. Dev and test each get
/// at least one item once there are three or more.
pub fn split_assignments(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<(u64, usize)> =
        (0..n).map(|i| (rng::stream_key(seed, &[purpose::SPLIT, i as u64]), i)).collect();
    order.sort_unstable();
    let mut held = n * 5 / 100;
    if held == 0 && n >= 3 {
        held = 1;
    }
    let mut out = vec![Split::Train; n];
    for (rank, &(_, i)) in order.iter().enumerate() {
        if rank < held {
            out[i] = Split::Test;
        } else if rank < 2 * held {
            out[i] = Split::Dev;
        }
    }
    out
}

/// Shuffles in place with a derived stream (used for sampling subsets).
pub fn shuffled<T: Clone>(items: &[T], seed: u64, tag: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut rng::stream(seed, &[purpose::ANALYSIS, tag]));
    v
}
