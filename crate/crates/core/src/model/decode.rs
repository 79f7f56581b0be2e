//! Greedy autoregressive decoding.

use alloc::vec::Vec;

use super::transformer::last_logits;
use super::Params;
use crate::error::{Error, Result};
use crate::vocab::{JointVocab, Special};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// Generated tokens (prompt excluded), ending with EOS when `hit_eos`.
    pub tokens: Vec<u32>,
    pub hit_eos: bool,
    /// Generation stopped at `max_len` or the context limit before EOS.
    pub truncated: bool,
}

/// Picks the argmax (lowest id on ties) until EOS or `max_len` new tokens.
pub fn greedy_decode(params: &Params, prompt: &[u32], max_len: usize, vocab: &JointVocab) -> Result<Decoded> {
    if prompt.is_empty() {
        return Err(Error::EmptySegment("prompt"));
    }
    let eos = vocab.special(Special::Eos);
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_len && seq.len() < params.cfg.max_seq_len {
        let logits = last_logits(params, &seq)?;
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        let id = best as u32;
        out.push(id);
        seq.push(id);
        if id == eos {
            return Ok(Decoded { tokens: out, hit_eos: true, truncated: false });
        }
    }
    Ok(Decoded { tokens: out, hit_eos: false, truncated: true })
}
