use crate::error::{Error, Result};

/// Named special tokens, in id order after the unit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Special {
    Pad,
    Bos,
    Eos,
    SepAsr,
    SepMt,
    SepTts,
    Mask,
}

impl Special {
    pub const ALL: [Special; 7] =
        [Special::Pad, Special::Bos, Special::Eos, Special::SepAsr, Special::SepMt, Special::SepTts, Special::Mask];

    pub fn name(self) -> &'static str {
        match self {
            Special::Pad => "PAD",
            Special::Bos => "BOS",
            Special::Eos => "EOS",
            Special::SepAsr => "SEP_ASR",
            Special::SepMt => "SEP_MT",
            Special::SepTts => "SEP_TTS",
            Special::Mask => "MASK",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Speech,
    Special,
}

/// Global token space: text ids `[0, n_text)`, unit ids
/// `[n_text, n_text + n_units)`, then the specials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointVocab {
    n_text: u32,
    n_units: u32,
}

impl JointVocab {
    pub fn new(n_text: usize, n_units: usize) -> Result<Self> {
        if n_text == 0 || n_units == 0 {
            return Err(Error::InvalidVocab("n_text and n_units must be at least 1"));
        }
        let total = n_text as u64 + n_units as u64 + Special::ALL.len() as u64;
        if total > u32::MAX as u64 {
            return Err(Error::InvalidVocab("vocabulary does not fit in u32 ids"));
        }
        Ok(Self { n_text: n_text as u32, n_units: n_units as u32 })
    }

    pub fn n_text(&self) -> usize {
        self.n_text as usize
    }

    pub fn n_units(&self) -> usize {
        self.n_units as usize
    }

    pub fn total(&self) -> usize {
        (self.n_text + self.n_units) as usize + Special::ALL.len()
    }

    pub fn special(&self, s: Special) -> u32 {
        self.n_text + self.n_units + s as u32
    }

    pub fn unit(&self, unit: u32) -> Result<u32> {
        if unit < self.n_units {
            Ok(self.n_text + unit)
        } else {
            Err(Error::InvalidTokenId { id: unit, context: "unit index out of range" })
        }
    }

    /// Maps a global id back to its unit index, if it is a unit.
    pub fn unit_index(&self, id: u32) -> Option<u32> {
        (self.modality_of(id) == Some(Modality::Speech)).then(|| id - self.n_text)
    }

    pub fn text(&self, id: u32) -> Result<u32> {
        if id < self.n_text {
            Ok(id)
        } else {
            Err(Error::InvalidTokenId { id, context: "text id out of range" })
        }
    }

    /// `None` for ids outside `[0, total)`.
    pub fn modality_of(&self, id: u32) -> Option<Modality> {
        if id < self.n_text {
            Some(Modality::Text)
        } else if id < self.n_text + self.n_units {
            Some(Modality::Speech)
        } else if (id as usize) < self.total() {
            Some(Modality::Special)
        } else {
            None
        }
    }

    pub fn special_of(&self, id: u32) -> Option<Special> {
        let base = self.n_text + self.n_units;
        id.checked_sub(base).and_then(|i| Special::ALL.get(i as usize).copied())
    }

    pub fn is_text(&self, id: u32) -> bool {
        self.modality_of(id) == Some(Modality::Text)
    }

    pub fn is_unit(&self, id: u32) -> bool {
        self.modality_of(id) == Some(Modality::Speech)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let v = JointVocab::new(512, 64).unwrap();
        assert_eq!(v.unit(0).unwrap(), 512);
        assert_eq!(v.unit(63).unwrap(), 575);
        assert!(v.unit(64).is_err());
        assert_eq!(v.modality_of(0), Some(Modality::Text));
        assert_eq!(v.modality_of(511), Some(Modality::Text));
        assert_eq!(v.modality_of(512), Some(Modality::Speech));
        assert_eq!(v.modality_of(512 + 64), Some(Modality::Special));
        assert_eq!(v.special(Special::Pad), 576);
        assert_eq!(v.special_of(576), Some(Special::Pad));
        assert_eq!(v.total(), 512 + 64 + 7);
        assert_eq!(v.modality_of(v.total() as u32), None);
        assert_eq!(v.unit_index(520), Some(8));
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(JointVocab::new(0, 4).is_err());
        assert!(JointVocab::new(4, 0).is_err());
    }

    #[test]
    fn modality_partitions_the_id_space() {
        let v = JointVocab::new(37, 11).unwrap();
        let (mut t, mut s, mut x) = (0, 0, 0);
        for id in 0..v.total() as u32 {
            match v.modality_of(id).unwrap() {
                Modality::Text => t += 1,
                Modality::Speech => s += 1,
                Modality::Special => x += 1,
            }
        }
        assert_eq!((t, s, x), (37, 11, Special::ALL.len()));
    }

    #[test]
    fn special_names_roundtrip() {
        for s in Special::ALL {
            assert_eq!(Special::from_name(s.name()), Some(s));
        }
    }
}
