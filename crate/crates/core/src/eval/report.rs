//! Decoding-based evaluation and the report container.

use alloc::vec::Vec;

use super::analysis::{LengthRow, SimilarityReport};
use super::bleu::unit_bleu;
use crate::cot::{build_inference_prompt, split_generated, AlignedPair, CotMode, SplitOutput};
use crate::error::{Error, Result};
use crate::interleave::units_to_global;
use crate::model::{greedy_decode, Params};
use crate::vocab::{JointVocab, Modality, Special};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalScores {
    pub n: usize,
    pub unit_bleu: f64,
    /// `None` in direct mode, which produces no text segments.
    pub t_src_exact: Option<f64>,
    pub t_tgt_exact: Option<f64>,
    pub malformed_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityRow {
    pub step: u64,
    pub p: f64,
    pub report: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub scores: Option<EvalScores>,
    pub length_table: Vec<LengthRow>,
    pub similarity: Vec<SimilarityRow>,
}

fn check_gold(g: &AlignedPair, mode: CotMode) -> Result<()> {
    if g.src_units.is_empty() {
        return Err(Error::MissingGold("source units"));
    }
    if g.tgt_units.is_empty() {
        return Err(Error::MissingGold("target units"));
    }
    if mode == CotMode::Cot && (g.src_text.is_empty() || g.tgt_text.is_empty()) {
        return Err(Error::MissingGold("transcripts"));
    }
    Ok(())
}

/// Scores split predictions against the gold pairs. `S_tgt` is compared in
/// global ids, so stray text or special tokens count as mismatches.
pub fn score_predictions(
    preds: &[SplitOutput],
    gold: &[AlignedPair],
    mode: CotMode,
    vocab: &JointVocab,
) -> Result<EvalScores> {
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if preds.len() != gold.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} predictions for {} references", preds.len(), gold.len())));
    }
    let mut refs = Vec::with_capacity(gold.len());
    let (mut src_ok, mut tgt_ok, mut bad) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gold) {
        check_gold(g, mode)?;
        refs.push(units_to_global(&g.tgt_units, vocab)?);
        src_ok += (p.t_src == g.src_text) as usize;
        tgt_ok += (p.t_tgt == g.tgt_text) as usize;
        bad += p.malformed as usize;
    }
    let hyps: Vec<&[u32]> = preds.iter().map(|p| p.s_tgt.as_slice()).collect();
    let n = gold.len() as f64;
    let text = |k: usize| (mode == CotMode::Cot).then(|| k as f64 / n);
    Ok(EvalScores {
        n: gold.len(),
        unit_bleu: unit_bleu(&hyps, &refs, 4)?,
        t_src_exact: text(src_ok),
        t_tgt_exact: text(tgt_ok),
        malformed_rate: bad as f64 / n,
    })
}

/// Splits a direct-mode continuation `S_tgt, EOS`.
pub(crate) fn split_direct(tokens: &[u32], vocab: &JointVocab) -> SplitOutput {
    let eos = vocab.special(Special::Eos);
    let (body, has_eos) = match tokens.iter().position(|&t| t == eos) {
        Some(i) => (&tokens[..i], true),
        None => (tokens, false),
    };
    let stray = body.iter().any(|&t| vocab.modality_of(t) == Some(Modality::Special));
    SplitOutput { s_tgt: body.to_vec(), malformed: !has_eos || stray, ..Default::default() }
}

/// Greedy-decodes each pure-speech source prompt and scores the output.
pub fn evaluate_s2st(
    params: &Params,
    test: &[AlignedPair],
    mode: CotMode,
    vocab: &JointVocab,
    max_new: usize,
) -> Result<EvalScores> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(test.len());
    for g in test {
        check_gold(g, mode)?;
        let prompt = build_inference_prompt(&units_to_global(&g.src_units, vocab)?, mode, vocab)?;
        let out = greedy_decode(params, &prompt, max_new, vocab)?;
        preds.push(match mode {
            CotMode::Cot => split_generated(&out.tokens, vocab),
            CotMode::Direct => split_direct(&out.tokens, vocab),
        });
    }
    score_predictions(&preds, test, mode, vocab)
}
