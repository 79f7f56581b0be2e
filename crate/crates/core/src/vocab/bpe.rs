//! Byte-level BPE.
//!
//! The base alphabet is the 256 byte values, so any UTF-8 string encodes
//! without an unknown-token path. Text is first cut into chunks (an optional
//! single leading space followed by a run of non-whitespace, or a single
//! whitespace character); merges never cross chunk boundaries. Chunks
//! concatenate back to the input, which makes decode an exact inverse.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const BYTE_ALPHABET: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    /// Byte value of each base token; `base[i]` has id `i`.
    base: Vec<u8>,
    byte_to_id: [u32; 256],
    /// Merge rules in training order. Merge `r` creates id `base.len() + r`.
    merges: Vec<(u32, u32)>,
    /// Byte string of every token, indexed by id.
    tokens: Vec<Vec<u8>>,
    /// Inverse of `tokens`.
    token_to_id: BTreeMap<Vec<u8>, u32>,
    /// Merge rank keyed by the pair it merges.
    ranks: BTreeMap<(u32, u32), u32>,
}

/// Splits text into BPE chunks. Concatenating the chunks gives back `text`.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c.is_whitespace() {
            let attaches = c == ' ' && iter.peek().is_some_and(|&(_, n)| !n.is_whitespace());
            if !attaches {
                if start < i {
                    chunks.push(&text[start..i]);
                }
                let end = i + c.len_utf8();
                chunks.push(&text[i..end]);
                start = end;
                continue;
            }
            if start < i {
                chunks.push(&text[start..i]);
            }
            start = i;
        }
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

impl BpeModel {
    /// Learns merges until the vocabulary holds `target_size` tokens or no
    /// adjacent pair is left. The most frequent pair wins; ties go to the
    /// lexicographically smallest `(left bytes, right bytes)`.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if target_size < BYTE_ALPHABET {
            return Err(Error::VocabTooSmall { target: target_size, base: BYTE_ALPHABET });
        }
        let mut model = Self::from_merges((0..=255u8).collect(), Vec::new())?;

        let mut chunk_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for line in corpus {
            for chunk in pretokenize(line.as_ref()) {
                *chunk_counts.entry(chunk).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> =
            chunk_counts.into_iter().map(|(c, n)| (c.bytes().map(u32::from).collect(), n)).collect();

        while model.tokens.len() < target_size {
            let mut pair_counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
            for (ids, n) in &words {
                for w in ids.windows(2) {
                    *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
                }
            }
            let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // Reverse so that the smaller byte pair compares as greater.
                    let ka = (&model.tokens[pa.0 as usize], &model.tokens[pa.1 as usize]);
                    let kb = (&model.tokens[pb.0 as usize], &model.tokens[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            });
            let Some((pair, _)) = best else { break };
            let new_id = model.push_merge(pair)?;
            for (ids, _) in &mut words {
                merge_in_place(ids, pair, new_id);
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from its base alphabet and merge list.
    pub fn from_merges(base: Vec<u8>, merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut seen = [false; 256];
        for &b in &base {
            if core::mem::replace(&mut seen[b as usize], true) {
                return Err(Error::InvalidVocab("duplicate byte in base alphabet"));
            }
        }
        if base.len() != BYTE_ALPHABET {
            return Err(Error::InvalidVocab("base alphabet must cover all 256 bytes"));
        }
        let mut byte_to_id = [0u32; 256];
        for (i, &b) in base.iter().enumerate() {
            byte_to_id[b as usize] = i as u32;
        }
        let tokens: Vec<Vec<u8>> = base.iter().map(|&b| alloc::vec![b]).collect();
        let token_to_id = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut model = Self { base, byte_to_id, merges: Vec::new(), tokens, token_to_id, ranks: BTreeMap::new() };
        for pair in merges {
            model.push_merge(pair)?;
        }
        Ok(model)
    }

    fn push_merge(&mut self, (l, r): (u32, u32)) -> Result<u32> {
        let n = self.tokens.len() as u32;
        if l >= n || r >= n {
            return Err(Error::InvalidVocab("merge refers to an unknown token"));
        }
        let mut bytes = self.tokens[l as usize].clone();
        bytes.extend_from_slice(&self.tokens[r as usize]);
        if self.token_to_id.contains_key(&bytes) {
            return Err(Error::InvalidVocab("merge produces a duplicate token"));
        }
        self.ranks.insert((l, r), self.merges.len() as u32);
        self.merges.push((l, r));
        self.token_to_id.insert(bytes.clone(), n);
        self.tokens.push(bytes);
        Ok(n)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn base(&self) -> &[u8] {
        &self.base
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        self.token_to_id.get(bytes).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            out.extend(self.encode_chunk(chunk));
        }
        out
    }

    /// Encodes each pretokenized chunk separately. Whitespace-separated words
    /// of `text` map one-to-one onto the returned groups when words are
    /// separated by single spaces.
    pub fn encode_chunks(&self, text: &str) -> Vec<Vec<u32>> {
        pretokenize(text).into_iter().map(|c| self.encode_chunk(c)).collect()
    }

    fn encode_chunk(&self, chunk: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = chunk.bytes().map(|b| self.byte_to_id[b as usize]).collect();
        loop {
            let best = ids.windows(2).filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1])))).min();
            let Some((rank, pair)) = best else { break };
            let new_id = (self.base.len() + rank as usize) as u32;
            merge_in_place(&mut ids, pair, new_id);
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).ok_or(Error::UnknownToken(id))?;
            bytes.extend_from_slice(tok);
        }
        String::from_utf8(bytes).map_err(|_| Error::InvalidVocab("decoded bytes are not UTF-8"))
    }
}

fn merge_in_place(ids: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}
