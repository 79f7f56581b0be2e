#![allow(dead_code)]

use silt_core::cot::AlignedPair;
use silt_core::synth::{generate_pairs, CorpusParams, ToyLanguage};
use silt_core::vocab::{BpeModel, JointVocab};

pub struct Toy {
    pub lang: ToyLanguage,
    pub vocab: JointVocab,
    pub bpe: BpeModel,
    pub pairs: Vec<AlignedPair>,
}

/// A toy corpus with a BPE trained on its own transcripts.
pub fn toy(params: &CorpusParams, seed: u64, n: usize, bpe_size: usize) -> Toy {
    let lang = ToyLanguage::generate(params, seed).unwrap();
    let raw = generate_pairs(&lang, params, seed, n).unwrap();
    let text: Vec<&str> = raw.iter().flat_map(|p| [p.src_text.as_str(), p.tgt_text.as_str()]).collect();
    let bpe = BpeModel::train(&text, bpe_size).unwrap();
    let vocab = JointVocab::new(bpe_size, params.n_units as usize).unwrap();
    let pairs = raw.iter().map(|p| p.aligned(&bpe)).collect();
    Toy { lang, vocab, bpe, pairs }
}
