//! Length-gap and segment-representation diagnostics.

use alloc::vec::Vec;
use core::ops::Range;

use crate::cot::{AlignedPair, CotMode, Segments, TrainingExample};
use crate::error::{invalid, Error, Result};
use crate::interleave::{interleave, InterleaveConfig, InterleaveMode};
use crate::model::{forward, Params};
use crate::rng::{self, purpose};
use crate::vocab::{BpeModel, JointVocab};

/// Mean `|I_p| / |T|` per side at one text ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthRow {
    pub p: f64,
    pub src_ratio: f64,
    pub tgt_ratio: f64,
}

/// For each `p`, averages interleaved length over transcript BPE length.
pub fn length_ratio_stats(
    pairs: &[AlignedPair],
    p_values: &[f64],
    lambda: f64,
    mode: InterleaveMode,
    vocab: &JointVocab,
    bpe: &BpeModel,
    seed: u64,
) -> Result<Vec<LengthRow>> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(p_values.len());
    for (k, &p) in p_values.iter().enumerate() {
        let cfg = InterleaveConfig { p, lambda, mode };
        let (mut src, mut tgt) = (0.0, 0.0);
        for pair in pairs {
            if pair.src_text.is_empty() || pair.tgt_text.is_empty() {
                return Err(Error::MissingGold("transcript"));
            }
            let mut rs = rng::stream(seed, &[purpose::ANALYSIS, pair.id, k as u64, 0]);
            let mut rt = rng::stream(seed, &[purpose::ANALYSIS, pair.id, k as u64, 1]);
            let i_src = interleave(&pair.src_units, &pair.src_align, &cfg, vocab, bpe, &mut rs)?;
            let i_tgt = interleave(&pair.tgt_units, &pair.tgt_align, &cfg, vocab, bpe, &mut rt)?;
            src += i_src.tokens.len() as f64 / pair.src_text.len() as f64;
            tgt += i_tgt.tokens.len() as f64 / pair.tgt_text.len() as f64;
        }
        let n = pairs.len() as f64;
        rows.push(LengthRow { p, src_ratio: src / n, tgt_ratio: tgt / n });
    }
    Ok(rows)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((ab / (libm::sqrt(aa) * libm::sqrt(bb))).clamp(-1.0, 1.0))
}

fn mean_pool(hidden: &[f64], d: usize, r: &Range<usize>) -> Result<Vec<f64>> {
    if r.is_empty() {
        return Err(Error::EmptySegment("pooled segment"));
    }
    if r.end * d > hidden.len() {
        return Err(Error::ShapeMismatch("segment beyond hidden states".into()));
    }
    let mut out = alloc::vec![0.0; d];
    for t in r.clone() {
        for (o, h) in out.iter_mut().zip(&hidden[t * d..(t + 1) * d]) {
            *o += h;
        }
    }
    let n = r.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Cosines `(src S-T, src-tgt T, tgt T-S)` from row-major hidden states
/// `len × d`; `None` where a pooled vector has zero norm.
pub fn pooled_similarity(hidden: &[f64], d: usize, seg: &Segments) -> Result<[Option<f64>; 3]> {
    if d == 0 {
        return Err(invalid("hidden width must be at least 1"));
    }
    let i_src = mean_pool(hidden, d, &seg.i_src)?;
    let t_src = mean_pool(hidden, d, &seg.t_src)?;
    let t_tgt = mean_pool(hidden, d, &seg.t_tgt)?;
    let i_tgt = mean_pool(hidden, d, &seg.i_tgt)?;
    let c = |a: &[f64], b: &[f64]| match cosine(a, b) {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroNorm) => Ok(None),
        Err(e) => Err(e),
    };
    Ok([c(&i_src, &t_src)?, c(&t_src, &t_tgt)?, c(&t_tgt, &i_tgt)?])
}

/// Example-averaged similarities; undefined cosines are excluded and counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    pub src_st: f64,
    pub src_tgt_t: f64,
    pub tgt_ts: f64,
    pub examples: usize,
    pub undefined: usize,
}

/// Mean-pools the last hidden state over each segment (separators excluded)
/// and averages the three cosines over `examples`.
pub fn segment_similarity(params: &Params, examples: &[TrainingExample]) -> Result<SimilarityReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = params.cfg.d_model;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    let mut undefined = 0;
    let mut unused = rng::stream(0, &[]);
    for ex in examples {
        if ex.mode != CotMode::Cot {
            return Err(invalid("similarity analysis needs chain-of-thought examples"));
        }
        let out = forward(params, &ex.tokens, false, &mut unused)?;
        for (k, v) in pooled_similarity(&out.last_hidden, d, &ex.segments)?.into_iter().enumerate() {
            match v {
                Some(v) => {
                    sums[k] += v;
                    counts[k] += 1;
                }
                None => undefined += 1,
            }
        }
    }
    let mean = |k: usize| if counts[k] == 0 { f64::NAN } else { sums[k] / counts[k] as f64 };
    Ok(SimilarityReport { src_st: mean(0), src_tgt_t: mean(1), tgt_ts: mean(2), examples: examples.len(), undefined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn seg(a: Range<usize>, b: Range<usize>, c: Range<usize>, d: Range<usize>) -> Segments {
        Segments { i_src: a, t_src: b, t_tgt: c, i_tgt: d }
    }

    #[test]
    fn injected_orthogonal_states() {
        // Rows: I_src = e0, T_src = e1, T_tgt = e1, I_tgt = e0.
        let h = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let s = pooled_similarity(&h, 2, &seg(0..1, 1..2, 2..3, 3..4)).unwrap();
        assert_eq!(s, [Some(0.0), Some(1.0), Some(0.0)]);
    }

    #[test]
    fn zero_norm_is_undefined() {
        let h = vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let s = pooled_similarity(&h, 2, &seg(0..1, 1..2, 2..3, 3..4)).unwrap();
        assert_eq!(s[0], None);
        assert_eq!(s[1], Some(1.0));
    }

    #[test]
    fn cosine_bounds() {
        assert!((cosine(&[1.0, 2.0], &[-2.0, -4.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0], &[1.0]), Err(Error::ZeroNorm));
    }
}
