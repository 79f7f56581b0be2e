//! Sequence layouts for direct and chain-of-thought speech-to-speech training.
//!
//! CoT layout: `[BOS, I_src, SEP_ASR, T_src, SEP_MT, T_tgt, SEP_TTS, I_tgt, EOS]`.
//! Direct layout: `[BOS, I_src, SEP_TTS, I_tgt, EOS]`.
//!
//! `loss_mask[t] = 1` means token `t` is a prediction target (scored from the
//! logits at `t - 1`). BOS and the source segment are conditioning only; each
//! separator is scored as the first token of the segment that follows it.

use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::ctc_align::WordAlignment;
use crate::error::{Error, Result};
use crate::interleave::{interleave, InterleaveConfig};
use crate::vocab::{BpeModel, JointVocab, Modality, Special};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CotMode {
    #[default]
    Cot,
    Direct,
}

impl CotMode {
    pub fn name(self) -> &'static str {
        match self {
            CotMode::Cot => "cot",
            CotMode::Direct => "direct",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "cot" => Some(CotMode::Cot),
            "direct" => Some(CotMode::Direct),
            _ => None,
        }
    }
}

/// Index ranges of the content segments (separators excluded). In direct
/// mode the text ranges are empty and sit at the SEP_TTS position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub i_src: Range<usize>,
    pub t_src: Range<usize>,
    pub t_tgt: Range<usize>,
    pub i_tgt: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub tokens: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub segments: Segments,
    pub mode: CotMode,
}

/// The positions scored by each factor of the chain-rule decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorRegions {
    /// `SEP_ASR` plus `T_src`.
    pub t_src: Range<usize>,
    /// `SEP_MT` plus `T_tgt`.
    pub t_tgt: Range<usize>,
    /// `SEP_TTS`, `I_tgt` and `EOS`.
    pub i_tgt: Range<usize>,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn factor_regions(&self) -> FactorRegions {
        let s = &self.segments;
        match self.mode {
            CotMode::Cot => FactorRegions {
                t_src: s.t_src.start - 1..s.t_src.end,
                t_tgt: s.t_tgt.start - 1..s.t_tgt.end,
                i_tgt: s.i_tgt.start - 1..self.tokens.len(),
            },
            CotMode::Direct => FactorRegions {
                t_src: s.i_src.end..s.i_src.end,
                t_tgt: s.i_src.end..s.i_src.end,
                i_tgt: s.i_tgt.start - 1..self.tokens.len(),
            },
        }
    }
}

fn check_ids(ids: &[u32], vocab: &JointVocab, allowed: &[Modality], context: &'static str) -> Result<()> {
    for &id in ids {
        let ok = match vocab.modality_of(id) {
            Some(Modality::Special) => {
                allowed.contains(&Modality::Special) && vocab.special_of(id) == Some(Special::Mask)
            }
            Some(m) => allowed.contains(&m),
            None => false,
        };
        if !ok {
            return Err(Error::InvalidTokenId { id, context });
        }
    }
    Ok(())
}

const SPEECH_SIDE: [Modality; 3] = [Modality::Speech, Modality::Text, Modality::Special];

/// Assembles one training sequence and its loss mask.
///
/// `i_src`/`i_tgt` may mix unit, text and MASK ids; text segments must be
/// text ids. Direct mode ignores the text segments.
pub fn build_training_example(
    i_src: &[u32],
    t_src: &[u32],
    t_tgt: &[u32],
    i_tgt: &[u32],
    mode: CotMode,
    vocab: &JointVocab,
) -> Result<TrainingExample> {
    if i_src.is_empty() {
        return Err(Error::EmptySegment("I_src"));
    }
    if i_tgt.is_empty() {
        return Err(Error::EmptySegment("I_tgt"));
    }
    check_ids(i_src, vocab, &SPEECH_SIDE, "I_src")?;
    check_ids(i_tgt, vocab, &SPEECH_SIDE, "I_tgt")?;

    let sp = |s| vocab.special(s);
    let mut tokens = Vec::with_capacity(i_src.len() + t_src.len() + t_tgt.len() + i_tgt.len() + 5);
    tokens.push(sp(Special::Bos));
    tokens.extend_from_slice(i_src);
    let i_src_range = 1..tokens.len();

    let (t_src_range, t_tgt_range) = match mode {
        CotMode::Cot => {
            if t_src.is_empty() {
                return Err(Error::EmptySegment("T_src"));
            }
            if t_tgt.is_empty() {
                return Err(Error::EmptySegment("T_tgt"));
            }
            check_ids(t_src, vocab, &[Modality::Text], "T_src")?;
            check_ids(t_tgt, vocab, &[Modality::Text], "T_tgt")?;
            tokens.push(sp(Special::SepAsr));
            let a = tokens.len();
            tokens.extend_from_slice(t_src);
            let t_src_range = a..tokens.len();
            tokens.push(sp(Special::SepMt));
            let b = tokens.len();
            tokens.extend_from_slice(t_tgt);
            (t_src_range, b..tokens.len())
        }
        CotMode::Direct => {
            let at = tokens.len();
            (at..at, at..at)
        }
    };
    tokens.push(sp(Special::SepTts));
    let c = tokens.len();
    tokens.extend_from_slice(i_tgt);
    let i_tgt_range = c..tokens.len();
    tokens.push(sp(Special::Eos));

    let mut loss_mask = alloc::vec![0u8; tokens.len()];
    for m in &mut loss_mask[i_src_range.end..] {
        *m = 1;
    }
    Ok(TrainingExample {
        tokens,
        loss_mask,
        segments: Segments { i_src: i_src_range, t_src: t_src_range, t_tgt: t_tgt_range, i_tgt: i_tgt_range },
        mode,
    })
}

/// `[BOS, i_src, SEP_ASR]` for CoT, `[BOS, i_src, SEP_TTS]` for direct.
pub fn build_inference_prompt(i_src: &[u32], mode: CotMode, vocab: &JointVocab) -> Result<Vec<u32>> {
    if i_src.is_empty() {
        return Err(Error::EmptySegment("I_src"));
    }
    check_ids(i_src, vocab, &SPEECH_SIDE, "I_src")?;
    let mut out = Vec::with_capacity(i_src.len() + 2);
    out.push(vocab.special(Special::Bos));
    out.extend_from_slice(i_src);
    out.push(vocab.special(match mode {
        CotMode::Cot => Special::SepAsr,
        CotMode::Direct => Special::SepTts,
    }));
    Ok(out)
}

/// A translation pair with speech units, word alignments and transcript BPE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub id: u64,
    pub src_units: Vec<u32>,
    pub src_align: WordAlignment,
    pub tgt_units: Vec<u32>,
    pub tgt_align: WordAlignment,
    /// BPE ids of the source transcript (`T_src`).
    pub src_text: Vec<u32>,
    /// BPE ids of the target transcript (`T_tgt`).
    pub tgt_text: Vec<u32>,
}

impl AlignedPair {
    /// Transcripts are the aligned words joined by single spaces.
    pub fn new(
        id: u64,
        src_units: Vec<u32>,
        src_align: WordAlignment,
        tgt_units: Vec<u32>,
        tgt_align: WordAlignment,
        bpe: &BpeModel,
    ) -> Self {
        let text = |a: &WordAlignment| bpe.encode(&a.words().collect::<Vec<_>>().join(" "));
        let src_text = text(&src_align);
        let tgt_text = text(&tgt_align);
        Self { id, src_units, src_align, tgt_units, tgt_align, src_text, tgt_text }
    }
}

/// An assembled example with the realized text fractions of both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledExample {
    pub example: TrainingExample,
    pub f_src: f64,
    pub f_tgt: f64,
}

/// Interleaves both ends of `pair` and lays out the training sequence.
#[allow(clippy::too_many_arguments)]
pub fn assemble_pair_example<R: Rng + ?Sized>(
    pair: &AlignedPair,
    src_cfg: &InterleaveConfig,
    tgt_cfg: &InterleaveConfig,
    mode: CotMode,
    vocab: &JointVocab,
    bpe: &BpeModel,
    src_rng: &mut R,
    tgt_rng: &mut R,
) -> Result<AssembledExample> {
    let i_src = interleave(&pair.src_units, &pair.src_align, src_cfg, vocab, bpe, src_rng)?;
    let i_tgt = interleave(&pair.tgt_units, &pair.tgt_align, tgt_cfg, vocab, bpe, tgt_rng)?;
    let example = build_training_example(&i_src.tokens, &pair.src_text, &pair.tgt_text, &i_tgt.tokens, mode, vocab)?;
    Ok(AssembledExample { example, f_src: i_src.realized_text_fraction(), f_tgt: i_tgt.realized_text_fraction() })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitOutput {
    pub t_src: Vec<u32>,
    pub t_tgt: Vec<u32>,
    pub s_tgt: Vec<u32>,
    /// Set when a separator or the final EOS is missing or out of order.
    pub malformed: bool,
}

/// Splits a generated continuation of a CoT prompt into its segments.
///
/// Accepts either the continuation alone (`T_src, SEP_MT, T_tgt, SEP_TTS,
/// S_tgt, EOS`) or a full sequence that still contains the prompt, in which
/// case everything up to the first SEP_ASR is dropped. Tokens after EOS are
/// ignored.
pub fn split_generated(tokens: &[u32], vocab: &JointVocab) -> SplitOutput {
    let sep_asr = vocab.special(Special::SepAsr);
    let body = match tokens.iter().position(|&t| t == sep_asr) {
        Some(i) => &tokens[i + 1..],
        None => tokens,
    };
    let (body, has_eos) = match body.iter().position(|&t| t == vocab.special(Special::Eos)) {
        Some(i) => (&body[..i], true),
        None => (body, false),
    };
    let sep_mt = vocab.special(Special::SepMt);
    let sep_tts = vocab.special(Special::SepTts);
    let mut out = SplitOutput { malformed: !has_eos, ..Default::default() };
    match body.iter().position(|&t| t == sep_mt) {
        Some(i) => {
            out.t_src = body[..i].to_vec();
            let rest = &body[i + 1..];
            match rest.iter().position(|&t| t == sep_tts) {
                Some(j) => {
                    out.t_tgt = rest[..j].to_vec();
                    out.s_tgt = rest[j + 1..].to_vec();
                }
                None => {
                    out.t_tgt = rest.to_vec();
                    out.malformed = true;
                }
            }
        }
        None => {
            out.t_src = body.to_vec();
            out.malformed = true;
        }
    }
    let stray = |seg: &[u32]| seg.iter().any(|&t| matches!(vocab.modality_of(t), Some(Modality::Special)));
    if stray(&out.t_src) || stray(&out.t_tgt) || stray(&out.s_tgt) {
        out.malformed = true;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab() -> JointVocab {
        JointVocab::new(10, 10).unwrap()
    }

    fn units(v: &JointVocab, n: u32) -> Vec<u32> {
        (0..n).map(|u| v.unit(u).unwrap()).collect()
    }

    #[test]
    fn cot_layout_and_mask() {
        let v = vocab();
        let ex = build_training_example(&units(&v, 3), &[1, 2], &[3, 4], &units(&v, 4), CotMode::Cot, &v).unwrap();
        assert_eq!(ex.len(), 16);
        assert_eq!(ex.loss_mask.iter().map(|&m| m as usize).sum::<usize>(), 12);
        assert_eq!(ex.tokens[0], v.special(Special::Bos));
        assert_eq!(ex.tokens[4], v.special(Special::SepAsr));
        assert_eq!(ex.segments.t_src, 5..7);
        assert_eq!(ex.tokens[7], v.special(Special::SepMt));
        assert_eq!(ex.segments.t_tgt, 8..10);
        assert_eq!(ex.tokens[10], v.special(Special::SepTts));
        assert_eq!(ex.segments.i_tgt, 11..15);
        assert_eq!(*ex.tokens.last().unwrap(), v.special(Special::Eos));
        assert!(ex.loss_mask[..4].iter().all(|&m| m == 0));
        assert!(ex.loss_mask[4..].iter().all(|&m| m == 1));
        let f = ex.factor_regions();
        assert_eq!((f.t_src, f.t_tgt, f.i_tgt), (4..7, 7..10, 10..16));
    }

    #[test]
    fn direct_layout_and_mask() {
        let v = vocab();
        let ex = build_training_example(&units(&v, 3), &[], &[], &units(&v, 4), CotMode::Direct, &v).unwrap();
        assert_eq!(ex.len(), 10);
        assert_eq!(ex.loss_mask.iter().map(|&m| m as usize).sum::<usize>(), 6);
        assert_eq!(ex.tokens[4], v.special(Special::SepTts));
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = vocab();
        let u = units(&v, 2);
        assert_eq!(build_training_example(&[], &[1], &[1], &u, CotMode::Cot, &v), Err(Error::EmptySegment("I_src")));
        assert!(build_training_example(&u, &[u[0]], &[1], &u, CotMode::Cot, &v).is_err());
        assert!(build_training_example(&u, &[1], &[1], &[99], CotMode::Cot, &v).is_err());
        let bos = v.special(Special::Bos);
        assert!(build_training_example(&[bos], &[1], &[1], &u, CotMode::Cot, &v).is_err());
    }

    #[test]
    fn inference_prompts() {
        let v = vocab();
        let p = build_inference_prompt(&units(&v, 3), CotMode::Cot, &v).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(*p.last().unwrap(), v.special(Special::SepAsr));
        let p = build_inference_prompt(&units(&v, 3), CotMode::Direct, &v).unwrap();
        assert_eq!(*p.last().unwrap(), v.special(Special::SepTts));
        assert!(build_inference_prompt(&[], CotMode::Cot, &v).is_err());
    }

    #[test]
    fn split_roundtrip() {
        let v = vocab();
        let ex = build_training_example(&units(&v, 3), &[1, 2], &[3], &units(&v, 4), CotMode::Cot, &v).unwrap();
        let s = split_generated(&ex.tokens, &v);
        assert_eq!(s.t_src, vec![1, 2]);
        assert_eq!(s.t_tgt, vec![3]);
        assert_eq!(s.s_tgt, units(&v, 4));
        assert!(!s.malformed);
    }

    #[test]
    fn split_malformed() {
        let v = vocab();
        let sep_mt = v.special(Special::SepMt);
        let eos = v.special(Special::Eos);
        let s = split_generated(&[1, sep_mt, 2, eos], &v);
        assert!(s.malformed);
        assert!(s.s_tgt.is_empty());
        assert_eq!(s.t_tgt, vec![2]);

        let sep_tts = v.special(Special::SepTts);
        let u = v.unit(1).unwrap();
        let s = split_generated(&[1, sep_mt, 2, sep_tts, u, u], &v);
        assert!(s.malformed);
        assert_eq!(s.s_tgt, vec![u, u]);
    }
}
