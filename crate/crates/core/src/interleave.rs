//! Word-level interleaving of speech units with text tokens, and the text
//! ratio schedule that drives it during training.
//!
//! Words are drawn from the not-yet-replaced set `J` one span at a time; each
//! span's frames are replaced by the BPE tokens of its words (or a single MASK
//! token). Replacement continues while the replaced-word fraction is strictly
//! below `p`, so `p = 0` leaves the sequence untouched and any `p > 0` ends with
//! a fraction of at least `p`; the last span may overshoot.

use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use crate::ctc_align::{WordAlignment, WordSpan};
use crate::error::{invalid, Error, Result};
use crate::vocab::{BpeModel, JointVocab, Special};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterleaveMode {
    /// Replace spans with their words' BPE tokens.
    #[default]
    Text,
    /// Replace each span with a single MASK token.
    Mask,
    /// Like `Text`, but word spans are assumed evenly spaced over the
    /// utterance instead of taken from the alignment.
    TextEqualInterval,
}

impl InterleaveMode {
    pub fn name(self) -> &'static str {
        match self {
            InterleaveMode::Text => "text",
            InterleaveMode::Mask => "mask",
            InterleaveMode::TextEqualInterval => "text_equal_interval",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::Text, Self::Mask, Self::TextEqualInterval].into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterleaveConfig {
    /// Target fraction of replaced words, in `[0, 1]`.
    pub p: f64,
    /// Mean of the Poisson span-length extension.
    pub lambda: f64,
    pub mode: InterleaveMode,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self { p: 0.0, lambda: 1.0, mode: InterleaveMode::Text }
    }
}

impl InterleaveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid("text ratio p must lie in [0, 1]"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Words `first..=last` replaced in one loop iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replacement {
    pub first: usize,
    pub last: usize,
}

impl Replacement {
    pub fn words(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedSequence {
    /// Global ids in the joint vocabulary.
    pub tokens: Vec<u32>,
    pub total_words: usize,
    /// Replacements in the order they were drawn.
    pub replacements: Vec<Replacement>,
}

impl InterleavedSequence {
    pub fn replaced_words(&self) -> usize {
        self.replacements.iter().map(Replacement::words).sum()
    }

    /// Fraction of words replaced by text (or MASK).
    pub fn realized_text_fraction(&self) -> f64 {
        if self.total_words == 0 {
            0.0
        } else {
            self.replaced_words() as f64 / self.total_words as f64
        }
    }
}

pub fn realized_text_fraction(result: &InterleavedSequence) -> f64 {
    result.realized_text_fraction()
}

/// Knuth's multiplication method.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u32> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("Poisson mean must be finite and non-negative"));
    }
    let limit = libm::exp(-lambda);
    let mut k = 0u32;
    let mut prod = 1.0;
    loop {
        prod *= rng.gen::<f64>();
        if prod <= limit {
            return Ok(k);
        }
        k += 1;
    }
}

/// Evenly spaced spans: word `i` covers `i·⌊M/N⌋ ..= (i+1)·⌊M/N⌋ − 1`, and
/// the last word also takes any trailing frames.
pub fn equal_interval_spans<S: AsRef<str>>(frames: usize, words: &[S]) -> Result<WordAlignment> {
    let n = words.len();
    if n == 0 {
        return Ok(WordAlignment::default());
    }
    let width = frames / n;
    if width == 0 {
        return Err(Error::InvalidAlignment(alloc::format!("{frames} frames cannot hold {n} words")));
    }
    let spans = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let end = if i + 1 == n { frames - 1 } else { (i + 1) * width - 1 };
            WordSpan::new(i * width, end, w.as_ref())
        })
        .collect();
    Ok(WordAlignment::new(spans))
}

/// Maps a pure unit sequence into global ids.
pub fn units_to_global(units: &[u32], vocab: &JointVocab) -> Result<Vec<u32>> {
    units.iter().map(|&u| vocab.unit(u)).collect()
}

/// Builds `I_p` from units `S` and word alignment `A`.
pub fn interleave<R: Rng + ?Sized>(
    units: &[u32],
    align: &WordAlignment,
    cfg: &InterleaveConfig,
    vocab: &JointVocab,
    bpe: &BpeModel,
    rng: &mut R,
) -> Result<InterleavedSequence> {
    cfg.validate()?;
    if bpe.vocab_size() > vocab.n_text() {
        return Err(Error::InvalidVocab("BPE model is larger than the text id range"));
    }
    if units.is_empty() && !align.is_empty() {
        return Err(Error::InvalidAlignment("alignment given for an empty unit sequence".into()));
    }
    let equal;
    let align = if cfg.mode == InterleaveMode::TextEqualInterval {
        let words: Vec<&str> = align.words().collect();
        equal = equal_interval_spans(units.len(), &words)?;
        &equal
    } else {
        align
    };
    align.validate(units.len())?;

    let n = align.len();
    let mut available = alloc::vec![true; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut replacements = Vec::new();
    let mut replaced = 0usize;

    // Same expression as `realized_text_fraction`, so the stopping rule and
    // the reported fraction agree exactly.
    while n > 0 && (replaced as f64) / (n as f64) < cfg.p {
        let j = remaining[rng.gen_range(0..remaining.len())];
        let l = sample_poisson(cfg.lambda, rng)? as usize;
        let limit = j.saturating_add(l).min(n - 1);
        let mut last = j;
        while last < limit && available[last + 1] {
            last += 1;
        }
        for a in &mut available[j..=last] {
            *a = false;
        }
        remaining.retain(|&w| available[w]);
        replaced += last - j + 1;
        replacements.push(Replacement { first: j, last });
    }

    let mut ordered = replacements.clone();
    ordered.sort_by_key(|r| r.first);
    let mut tokens = Vec::with_capacity(units.len());
    let mut frame = 0;
    for r in &ordered {
        let start = align.spans[r.first].start;
        let end = align.spans[r.last].end;
        for &u in &units[frame..start] {
            tokens.push(vocab.unit(u)?);
        }
        match cfg.mode {
            InterleaveMode::Mask => tokens.push(vocab.special(Special::Mask)),
            InterleaveMode::Text | InterleaveMode::TextEqualInterval => {
                let mut text = String::new();
                for (k, span) in align.spans[r.first..=r.last].iter().enumerate() {
                    if k > 0 {
                        text.push(' ');
                    }
                    text.push_str(&span.word);
                }
                tokens.extend(bpe.encode(&text));
            }
        }
        frame = end + 1;
    }
    for &u in &units[frame..] {
        tokens.push(vocab.unit(u)?);
    }
    Ok(InterleavedSequence { tokens, total_words: n, replacements })
}

/// Which ends of a pair receive interleaving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    #[default]
    Both,
    Input,
    Output,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Both => "both",
            Side::Input => "input",
            Side::Output => "output",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Side::Both, Side::Input, Side::Output].into_iter().find(|x| x.name() == s)
    }

    /// `(p_src, p_tgt)` for a scheduled ratio `p`.
    pub fn ratios(self, p: f64) -> (f64, f64) {
        match self {
            Side::Both => (p, p),
            Side::Input => (p, 0.0),
            Side::Output => (0.0, p),
        }
    }
}

/// Text-ratio schedules used during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `p0` decayed by `delta` every `interval` steps, floored at 0.
    Scheduled { p0: f64, delta: f64, interval: u64 },
    /// A fixed ratio.
    Constant(f64),
    /// No interleaving at all (`p ≡ 0`).
    None,
}

pub const DEFAULT_P0: f64 = 0.9;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_INTERVAL: u64 = 300;
pub const DEFAULT_CONSTANT_P: f64 = 0.3;

impl Schedule {
    pub fn scheduled_default() -> Self {
        Schedule::Scheduled { p0: DEFAULT_P0, delta: DEFAULT_DELTA, interval: DEFAULT_INTERVAL }
    }

    pub fn constant_default() -> Self {
        Schedule::Constant(DEFAULT_CONSTANT_P)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Scheduled { p0, delta, interval } => check_schedule(p0, delta, interval),
            Schedule::Constant(p) if !(0.0..=1.0).contains(&p) => Err(invalid("constant p must lie in [0, 1]")),
            _ => Ok(()),
        }
    }

    pub fn text_ratio(&self, step: u64) -> f64 {
        match *self {
            Schedule::Scheduled { p0, delta, interval } => decayed(step, p0, delta, interval),
            Schedule::Constant(p) => p,
            Schedule::None => 0.0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Schedule::Scheduled { .. } => "scheduled",
            Schedule::Constant(_) => "constant",
            Schedule::None => "none",
        }
    }
}

fn check_schedule(p0: f64, delta: f64, interval: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(invalid("p0 must lie in [0, 1]"));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(invalid("delta must be positive"));
    }
    if interval == 0 {
        return Err(invalid("interval must be at least 1"));
    }
    Ok(())
}

fn decayed(step: u64, p0: f64, delta: f64, interval: u64) -> f64 {
    let raw = p0 - delta * (step / interval) as f64;
    // Snap to a 1e-12 grid so decimal steps land exactly (0.9 - 8 * 0.1 == 0.1).
    let snapped = libm::round(raw * 1e12) / 1e12;
    if snapped <= 0.0 {
        0.0
    } else {
        snapped
    }
}

/// `max(0, p0 − delta·⌊step/interval⌋)`.
pub fn schedule_text_ratio(step: u64, p0: f64, delta: f64, interval: u64) -> Result<f64> {
    check_schedule(p0, delta, interval)?;
    Ok(decayed(step, p0, delta, interval))
}

/// The unscheduled baseline ratio.
pub fn constant_text_ratio(_step: u64) -> f64 {
    DEFAULT_CONSTANT_P
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    fn setup() -> (JointVocab, BpeModel) {
        let bpe = BpeModel::train(&["a b c d"], 256).unwrap();
        (JointVocab::new(256, 8).unwrap(), bpe)
    }

    fn align(spans: &[(usize, usize, &str)]) -> WordAlignment {
        WordAlignment::new(spans.iter().map(|&(a, b, w)| WordSpan::new(a, b, w)).collect())
    }

    #[test]
    fn poisson_degenerate_and_invalid() {
        let mut r = rng::stream(0, &[]);
        assert!((0..100).all(|_| sample_poisson(0.0, &mut r).unwrap() == 0));
        assert!(sample_poisson(-1.0, &mut r).is_err());
    }

    #[test]
    fn poisson_mean() {
        let mut r = rng::stream(11, &[]);
        let n = 100_000;
        let sum: u64 = (0..n).map(|_| sample_poisson(1.0, &mut r).unwrap() as u64).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn p_zero_is_pure_speech() {
        let (v, bpe) = setup();
        let units = [1, 2, 3, 4, 5, 6];
        let al = align(&[(0, 2, "a"), (3, 5, "b")]);
        let cfg = InterleaveConfig { p: 0.0, ..Default::default() };
        let out = interleave(&units, &al, &cfg, &v, &bpe, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(out.tokens, units_to_global(&units, &v).unwrap());
        assert_eq!(out.realized_text_fraction(), 0.0);
    }

    #[test]
    fn p_one_replaces_everything() {
        let (v, bpe) = setup();
        let units = [1, 2, 3, 4, 5, 6];
        let al = align(&[(0, 1, "a"), (2, 3, "b"), (4, 5, "c")]);
        let cfg = InterleaveConfig { p: 1.0, lambda: 0.0, mode: InterleaveMode::Text };
        let out = interleave(&units, &al, &cfg, &v, &bpe, &mut rng::stream(2, &[])).unwrap();
        assert!(out.tokens.iter().all(|&t| v.is_text(t)));
        assert_eq!(out.tokens, vec![b'a' as u32, b'b' as u32, b'c' as u32]);
        assert_eq!(out.realized_text_fraction(), 1.0);
    }

    #[test]
    fn half_of_four_words() {
        let (v, bpe) = setup();
        let units = [0; 8];
        let al = align(&[(0, 1, "a"), (2, 3, "b"), (4, 5, "c"), (6, 7, "d")]);
        let cfg = InterleaveConfig { p: 0.5, lambda: 0.0, mode: InterleaveMode::Text };
        for seed in 0..20 {
            let out = interleave(&units, &al, &cfg, &v, &bpe, &mut rng::stream(seed, &[])).unwrap();
            assert_eq!(out.replaced_words(), 2);
            assert_eq!(out.realized_text_fraction(), 0.5);
        }
    }

    #[test]
    fn mask_mode() {
        let (v, bpe) = setup();
        let units = [1, 2, 3, 4, 5, 6];
        let al = align(&[(0, 2, "a"), (3, 5, "b")]);
        let cfg = InterleaveConfig { p: 1.0, lambda: 0.0, mode: InterleaveMode::Mask };
        let out = interleave(&units, &al, &cfg, &v, &bpe, &mut rng::stream(3, &[])).unwrap();
        let mask = v.special(Special::Mask);
        assert_eq!(out.tokens, vec![mask, mask]);
    }

    #[test]
    fn equal_interval_spans_layout() {
        let a = equal_interval_spans(10, &["x", "y"]).unwrap();
        assert_eq!(a.spans, vec![WordSpan::new(0, 4, "x"), WordSpan::new(5, 9, "y")]);
        let a = equal_interval_spans(11, &["x", "y", "z"]).unwrap();
        assert_eq!(a.spans.last().unwrap(), &WordSpan::new(6, 10, "z"));
        assert!(equal_interval_spans(2, &["x", "y", "z"]).is_err());
    }

    #[test]
    fn equal_interval_ignores_alignment_frames() {
        let (v, bpe) = setup();
        let units = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
        // Deliberately wrong gold spans; equal-interval mode must not use them.
        let al = align(&[(0, 0, "a"), (1, 1, "b")]);
        let cfg = InterleaveConfig { p: 1.0, lambda: 0.0, mode: InterleaveMode::TextEqualInterval };
        let out = interleave(&units, &al, &cfg, &v, &bpe, &mut rng::stream(4, &[])).unwrap();
        assert_eq!(out.tokens, vec![b'a' as u32, b'b' as u32]);
    }

    #[test]
    fn partial_replacement_keeps_positions() {
        let (v, bpe) = setup();
        let units = [1, 2, 3, 4, 5, 6];
        let al = align(&[(0, 1, "a"), (2, 3, "b"), (4, 5, "c")]);
        let cfg = InterleaveConfig { p: 0.3, lambda: 0.0, mode: InterleaveMode::Text };
        let out = interleave(&units, &al, &cfg, &v, &bpe, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(out.replaced_words(), 1);
        let r = out.replacements[0];
        let mut expected = units_to_global(&units, &v).unwrap();
        let word = b"abc"[r.first] as u32;
        expected.splice(2 * r.first..2 * r.first + 2, [word]);
        assert_eq!(out.tokens, expected);
    }

    #[test]
    fn errors() {
        let (v, bpe) = setup();
        let mut r = rng::stream(6, &[]);
        let cfg = InterleaveConfig { p: 0.5, ..Default::default() };
        let overlap = align(&[(0, 2, "a"), (2, 3, "b")]);
        assert!(interleave(&[0; 4], &overlap, &cfg, &v, &bpe, &mut r).is_err());
        let out_of_range = align(&[(0, 9, "a")]);
        assert!(interleave(&[0; 4], &out_of_range, &cfg, &v, &bpe, &mut r).is_err());
        assert!(interleave(&[], &align(&[(0, 0, "a")]), &cfg, &v, &bpe, &mut r).is_err());
        let bad = InterleaveConfig { p: 1.5, ..Default::default() };
        assert!(interleave(&[0], &align(&[(0, 0, "a")]), &bad, &v, &bpe, &mut r).is_err());
    }

    #[test]
    fn schedule_values() {
        let s = |step| schedule_text_ratio(step, 0.9, 0.1, 300).unwrap();
        assert_eq!(s(0), 0.9);
        assert_eq!(s(299), 0.9);
        assert_eq!(s(300), 0.8);
        assert_eq!(s(2699), 0.1);
        assert_eq!(s(2700), 0.0);
        assert_eq!(s(100_000), 0.0);
        assert!(schedule_text_ratio(0, 1.2, 0.1, 300).is_err());
        assert!(schedule_text_ratio(0, 0.9, 0.0, 300).is_err());
        assert!(schedule_text_ratio(0, 0.9, 0.1, 0).is_err());
    }

    #[test]
    fn constant_ratio() {
        assert_eq!(constant_text_ratio(0), 0.3);
        assert_eq!(constant_text_ratio(2700), 0.3);
        assert_eq!(constant_text_ratio(1_000_000), 0.3);
        assert_eq!(Schedule::None.text_ratio(5), 0.0);
    }
}
