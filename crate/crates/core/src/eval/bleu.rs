use alloc::collections::BTreeMap;

use crate::error::{Error, Result};

fn ngram_counts(seq: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
    let mut m = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU over id sequences: clipped n-gram precision, unsmoothed for
/// unigrams and add-one smoothed for `n > 1`, with the brevity penalty.
pub fn unit_bleu<H: AsRef<[u32]>, R: AsRef<[u32]>>(hypotheses: &[H], references: &[R], max_n: usize) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.is_empty() || references.iter().any(|r| r.as_ref().is_empty()) {
        return Err(Error::EmptyReference);
    }
    if max_n == 0 {
        return Err(crate::error::invalid("max_n must be at least 1"));
    }
    let mut matches = alloc::vec![0usize; max_n];
    let mut totals = alloc::vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = libm::log(matches[0] as f64 / totals[0] as f64);
    for n in 1..max_n {
        log_sum += libm::log((matches[n] + 1) as f64 / (totals[n] + 1) as f64);
    }
    let bp = if hyp_len >= ref_len { 1.0 } else { libm::exp(1.0 - ref_len as f64 / hyp_len as f64) };
    Ok((bp * libm::exp(log_sum / max_n as f64)).min(1.0))
}
