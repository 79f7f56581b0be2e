//! Text tokenization and the joint speech/text token space.

mod bpe;
mod joint;

pub use bpe::{pretokenize, BpeModel, BYTE_ALPHABET};
pub use joint::{JointVocab, Modality, Special};
