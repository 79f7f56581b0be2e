//! CTC Viterbi forced alignment and word-level span aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Frame-level CTC log posteriors, row-major `frames × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePosteriors {
    frames: usize,
    classes: usize,
    log_probs: Vec<f64>,
}

impl FramePosteriors {
    /// Validates that every row is a log-probability distribution
    /// (entries ≤ 0, probabilities summing to 1 within 1e-6).
    pub fn new(frames: usize, classes: usize, log_probs: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::MalformedPosteriors("need a blank and at least one label".into()));
        }
        if log_probs.len() != frames * classes {
            return Err(Error::MalformedPosteriors(format!(
                "expected {} values, got {}",
                frames * classes,
                log_probs.len()
            )));
        }
        for (t, row) in log_probs.chunks_exact(classes).enumerate() {
            if row.iter().any(|&v| v.is_nan() || v > 1e-12) {
                return Err(Error::MalformedPosteriors(format!("row {t} has entries above 0")));
            }
            let sum: f64 = row.iter().map(|&v| libm::exp(v)).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::MalformedPosteriors(format!("row {t} sums to {sum}")));
            }
        }
        Ok(Self { frames, classes, log_probs })
    }

    /// Builds posteriors from probabilities, taking logs.
    pub fn from_probs(frames: usize, classes: usize, probs: &[f64]) -> Result<Self> {
        Self::new(frames, classes, probs.iter().map(|&p| libm::log(p)).collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.log_probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.log_probs[t * self.classes + c]
    }
}

/// Frames `start..=end` on which `token` is emitted on the best path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub token: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcAlignment {
    pub spans: Vec<TokenSpan>,
    /// Log probability of the best path.
    pub log_prob: f64,
    /// Label emitted on every frame (blank included).
    pub frame_labels: Vec<u32>,
}

/// Minimum number of frames a CTC path for `reference` needs: one per label
/// plus a blank between each pair of equal neighbours.
pub fn min_frames(reference: &[u32]) -> usize {
    reference.len() + reference.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Viterbi alignment of `reference` over the blank-extended label graph.
///
/// Backtrace ties prefer staying in the current state, then the previous
/// state, then the skip.
pub fn ctc_forced_align(posteriors: &FramePosteriors, reference: &[u32], blank: u32) -> Result<CtcAlignment> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let classes = posteriors.classes();
    if blank as usize >= classes {
        return Err(Error::MalformedPosteriors("blank id out of range".into()));
    }
    if let Some(&bad) = reference.iter().find(|&&r| r == blank || r as usize >= classes) {
        return Err(Error::InvalidTokenId { id: bad, context: "CTC reference label" });
    }
    let frames = posteriors.frames();
    let needed = min_frames(reference);
    if frames < needed {
        return Err(Error::InfeasibleAlignment { frames, needed });
    }

    // ext = [blank, r0, blank, r1, ..., r_{n-1}, blank]
    let states = 2 * reference.len() + 1;
    let label = |s: usize| if s % 2 == 0 { blank } else { reference[s / 2] };
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);

    let neg = f64::NEG_INFINITY;
    let mut prev = vec![neg; states];
    let mut cur = vec![neg; states];
    // 0 = stay, 1 = from s-1, 2 = from s-2
    let mut back = vec![0u8; frames * states];
    prev[0] = posteriors.get(0, blank as usize);
    prev[1] = posteriors.get(0, label(1) as usize);

    for t in 1..frames {
        let row = posteriors.row(t);
        for s in 0..states {
            let mut best = prev[s];
            let mut step = 0u8;
            if s >= 1 && prev[s - 1] > best {
                best = prev[s - 1];
                step = 1;
            }
            if can_skip(s) && prev[s - 2] > best {
                best = prev[s - 2];
                step = 2;
            }
            cur[s] = best + row[label(s) as usize];
            back[t * states + s] = step;
        }
        core::mem::swap(&mut prev, &mut cur);
    }

    let (mut s, log_prob) = if prev[states - 2] > prev[states - 1] {
        (states - 2, prev[states - 2])
    } else {
        (states - 1, prev[states - 1])
    };
    if log_prob == neg {
        return Err(Error::InfeasibleAlignment { frames, needed });
    }

    let mut path = vec![0usize; frames];
    for t in (0..frames).rev() {
        path[t] = s;
        if t > 0 {
            s -= back[t * states + s] as usize;
        }
    }

    let mut spans: Vec<Option<TokenSpan>> = vec![None; reference.len()];
    for (t, &st) in path.iter().enumerate() {
        if st % 2 == 1 {
            let i = st / 2;
            match &mut spans[i] {
                Some(span) => span.end = t,
                slot @ None => *slot = Some(TokenSpan { token: reference[i], start: t, end: t }),
            }
        }
    }
    let spans = spans.into_iter().map(|s| s.expect("every label state is visited on a complete path")).collect();
    let frame_labels = path.iter().map(|&st| label(st)).collect();
    Ok(CtcAlignment { spans, log_prob, frame_labels })
}

/// One word and its inclusive frame range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
    pub word: String,
}

impl WordSpan {
    pub fn new(start: usize, end: usize, word: impl Into<String>) -> Self {
        Self { start, end, word: word.into() }
    }
}

/// Sorted, non-overlapping word spans over a unit sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordAlignment {
    pub spans: Vec<WordSpan>,
}

impl WordAlignment {
    pub fn new(spans: Vec<WordSpan>) -> Self {
        Self { spans }
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Checks ordering, non-overlap and that all spans fit in `frames`.
    pub fn validate(&self, frames: usize) -> Result<()> {
        for (i, s) in self.spans.iter().enumerate() {
            if s.start > s.end {
                return Err(Error::InvalidAlignment(format!("span {i} has start > end")));
            }
            if s.end >= frames {
                return Err(Error::InvalidAlignment(format!(
                    "span {i} ends at frame {} but there are {frames} frames",
                    s.end
                )));
            }
            if i > 0 && self.spans[i - 1].end >= s.start {
                return Err(Error::InvalidAlignment(format!("span {i} overlaps its predecessor")));
            }
        }
        Ok(())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.spans.iter().map(|s| s.word.as_str())
    }
}

/// Aggregates token spans into word spans: word `i` covers its first token's
/// start through its last token's end.
pub fn tokens_to_word_spans<S: AsRef<str>>(
    token_spans: &[TokenSpan],
    word_token_counts: &[usize],
    words: &[S],
) -> Result<WordAlignment> {
    let total: usize = word_token_counts.iter().sum();
    if total != token_spans.len() {
        return Err(Error::CountMismatch { counts: total, spans: token_spans.len() });
    }
    if words.len() != word_token_counts.len() {
        return Err(Error::InvalidAlignment(format!(
            "{} words but {} token counts",
            words.len(),
            word_token_counts.len()
        )));
    }
    if word_token_counts.contains(&0) {
        return Err(Error::InvalidAlignment("every word needs at least one token".into()));
    }
    let mut spans = Vec::with_capacity(words.len());
    let mut next = 0;
    for (w, &count) in words.iter().zip(word_token_counts) {
        let group = &token_spans[next..next + count];
        next += count;
        spans.push(WordSpan::new(group[0].start, group[count - 1].end, w.as_ref()));
    }
    let out = WordAlignment::new(spans);
    let frames = out.spans.last().map_or(0, |s| s.end + 1);
    out.validate(frames)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(frames: &[u32], classes: usize) -> FramePosteriors {
        let mut p = vec![0.0; frames.len() * classes];
        for (t, &c) in frames.iter().enumerate() {
            p[t * classes + c as usize] = 1.0;
        }
        FramePosteriors::from_probs(frames.len(), classes, &p).unwrap()
    }

    #[test]
    fn single_token_fills_all_frames() {
        let post = one_hot(&[1, 1, 1, 1], 2);
        let a = ctc_forced_align(&post, &[1], 0).unwrap();
        assert_eq!(a.spans, vec![TokenSpan { token: 1, start: 0, end: 3 }]);
        assert_eq!(a.log_prob, 0.0);
    }

    #[test]
    fn repeated_label_needs_a_blank() {
        let post = one_hot(&[1], 2);
        assert_eq!(ctc_forced_align(&post, &[1, 1], 0), Err(Error::InfeasibleAlignment { frames: 1, needed: 3 }));
        let post = one_hot(&[1, 0, 1], 2);
        let a = ctc_forced_align(&post, &[1, 1], 0).unwrap();
        assert_eq!(a.spans[0], TokenSpan { token: 1, start: 0, end: 0 });
        assert_eq!(a.spans[1], TokenSpan { token: 1, start: 2, end: 2 });
    }

    #[test]
    fn empty_reference_and_bad_labels() {
        let post = one_hot(&[1, 1], 3);
        assert_eq!(ctc_forced_align(&post, &[], 0), Err(Error::EmptyReference));
        assert!(ctc_forced_align(&post, &[0], 0).is_err());
        assert!(ctc_forced_align(&post, &[7], 0).is_err());
    }

    #[test]
    fn malformed_posteriors() {
        assert!(FramePosteriors::new(1, 2, vec![0.0, 0.0]).is_err());
        assert!(FramePosteriors::new(1, 2, vec![0.0]).is_err());
        assert!(FramePosteriors::new(1, 2, vec![0.5, -1.0]).is_err());
    }

    #[test]
    fn blanks_between_words_belong_to_no_token() {
        let post = one_hot(&[1, 1, 0, 0, 2, 2, 0], 3);
        let a = ctc_forced_align(&post, &[1, 2], 0).unwrap();
        assert_eq!(a.spans[0], TokenSpan { token: 1, start: 0, end: 1 });
        assert_eq!(a.spans[1], TokenSpan { token: 2, start: 4, end: 5 });
    }

    #[test]
    fn word_aggregation() {
        let t = |s, e| TokenSpan { token: 1, start: s, end: e };
        let a = tokens_to_word_spans(&[t(2, 5)], &[1], &["w"]).unwrap();
        assert_eq!(a.spans, vec![WordSpan::new(2, 5, "w")]);
        let a = tokens_to_word_spans(&[t(0, 1), t(2, 3), t(5, 7)], &[2, 1], &["w1", "w2"]).unwrap();
        assert_eq!(a.spans, vec![WordSpan::new(0, 3, "w1"), WordSpan::new(5, 7, "w2")]);
        assert_eq!(
            tokens_to_word_spans(&[t(0, 1), t(2, 3), t(5, 7)], &[2], &["w1"]),
            Err(Error::CountMismatch { counts: 2, spans: 3 })
        );
    }

    #[test]
    fn alignment_validation() {
        let ok = WordAlignment::new(vec![WordSpan::new(0, 2, "a"), WordSpan::new(3, 4, "b")]);
        assert!(ok.validate(5).is_ok());
        assert!(ok.validate(4).is_err());
        let overlap = WordAlignment::new(vec![WordSpan::new(0, 2, "a"), WordSpan::new(2, 4, "b")]);
        assert!(overlap.validate(10).is_err());
    }
}
