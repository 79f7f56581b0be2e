//! On-disk formats: JSON-Lines datasets, JSON models and reports.
//!
//! Every JSONL file starts with `{"kind":"header","header":{..},"meta":{..}}`
//! followed by records tagged with their own `kind`. JSON files carry the
//! same header under a top-level `"header"` key.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use silt_core::ctc_align::{WordAlignment, WordSpan};
use silt_core::quantizer::Codebook;
use silt_core::synth::CorpusParams;
use silt_core::vocab::{BpeModel, JointVocab, Special};

use crate::artifact::Header;
use crate::error::{CliError, Result};

/// `(first_frame, last_frame, word)`.
pub type SpanTuple = (usize, usize, String);

pub fn spans_to_tuples(a: &WordAlignment) -> Vec<SpanTuple> {
    a.spans.iter().map(|s| (s.start, s.end, s.word.clone())).collect()
}

pub fn tuples_to_spans(t: &[SpanTuple]) -> WordAlignment {
    WordAlignment::new(t.iter().map(|(a, b, w)| WordSpan::new(*a, *b, w.as_str())).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    kind: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Serialize)]
struct HeaderLine<'a, M> {
    kind: &'a str,
    header: &'a Header,
    meta: &'a M,
}

pub fn write_jsonl<M: Serialize, R: Serialize>(
    path: &Path,
    header: &Header,
    meta: &M,
    kind: &str,
    records: &[R],
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    let head = HeaderLine { kind: "header", header, meta };
    let head = serde_json::to_string(&head).map_err(|e| CliError::Format(e.to_string()))?;
    writeln!(w, "{head}").map_err(io)?;
    for r in records {
        let line = serde_json::to_string(&Tagged { kind, record: r }).map_err(|e| CliError::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub struct Jsonl<M, R> {
    pub header: Header,
    pub meta: M,
    pub records: Vec<R>,
}

pub fn read_jsonl<M: DeserializeOwned, R: DeserializeOwned>(path: &Path, kind: &str) -> Result<Jsonl<M, R>> {
    let parse = |line: usize, msg: String| CliError::Parse { path: path.into(), line, msg };
    let mut lines = open(path)?.lines();
    let first = lines.next().ok_or_else(|| parse(1, "empty file".into()))?.map_err(|e| CliError::io(path, e))?;
    let head: Value = serde_json::from_str(&first).map_err(|e| parse(1, e.to_string()))?;
    if head.get("kind").and_then(Value::as_str) != Some("header") {
        return Err(parse(1, "first line is not a header".into()));
    }
    let header: Header = serde_json::from_value(head["header"].clone()).map_err(|e| parse(1, e.to_string()))?;
    let meta: M = serde_json::from_value(head["meta"].clone()).map_err(|e| parse(1, e.to_string()))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse(n, e.to_string()))?;
        match v.get("kind").and_then(Value::as_str) {
            Some(k) if k == kind => {}
            other => return Err(parse(n, format!("expected kind {kind:?}, found {other:?}"))),
        }
        records.push(serde_json::from_value(v).map_err(|e| parse(n, e.to_string()))?);
    }
    Ok(Jsonl { header, meta, records })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Format(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Parse {
        path: path.into(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Generator settings recorded in the corpus header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub n_pairs: usize,
    pub n_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub expansion_r: u32,
    pub jitter: u32,
    pub n_units: u32,
    pub pattern_min: usize,
    pub pattern_max: usize,
}

impl CorpusMeta {
    pub fn new(n_pairs: usize, p: &CorpusParams) -> Self {
        Self {
            n_pairs,
            n_words: p.n_words,
            min_len: p.min_len,
            max_len: p.max_len,
            expansion_r: p.expansion_r,
            jitter: p.jitter,
            n_units: p.n_units,
            pattern_min: p.pattern_min,
            pattern_max: p.pattern_max,
        }
    }

    pub fn params(&self) -> CorpusParams {
        CorpusParams {
            n_words: self.n_words,
            min_len: self.min_len,
            max_len: self.max_len,
            expansion_r: self.expansion_r,
            jitter: self.jitter,
            n_units: self.n_units,
            pattern_min: self.pattern_min,
            pattern_max: self.pattern_max,
        }
    }
}

/// One generated pair with gold units and gold word spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: u64,
    pub split: String,
    pub src_text: String,
    pub tgt_text: String,
    pub src_units: Vec<u32>,
    pub tgt_units: Vec<u32>,
    pub src_align: Vec<SpanTuple>,
    pub tgt_align: Vec<SpanTuple>,
}

/// A pair after quantization and forced alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub id: u64,
    pub split: String,
    pub src_units: Vec<u32>,
    pub tgt_units: Vec<u32>,
    pub src_align: Vec<SpanTuple>,
    pub tgt_align: Vec<SpanTuple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignMeta {
    pub n_text: usize,
    pub n_units: usize,
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRanges {
    pub i_src: [usize; 2],
    pub t_src: [usize; 2],
    pub t_tgt: [usize; 2],
    pub i_tgt: [usize; 2],
}

impl From<&silt_core::cot::Segments> for SegmentRanges {
    fn from(s: &silt_core::cot::Segments) -> Self {
        let r = |r: &std::ops::Range<usize>| [r.start, r.end];
        Self { i_src: r(&s.i_src), t_src: r(&s.t_src), t_tgt: r(&s.t_tgt), i_tgt: r(&s.i_tgt) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: u64,
    pub split: String,
    pub tokens: Vec<u32>,
    pub mask: Vec<u8>,
    pub segments: SegmentRanges,
    pub f_src: f64,
    pub f_tgt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplesMeta {
    pub mode: String,
    pub side: String,
    pub cot: String,
    pub p: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeFile {
    pub header: Header,
    pub base: Vec<u8>,
    pub merges: Vec<(u32, u32)>,
}

impl BpeFile {
    pub fn new(header: Header, bpe: &BpeModel) -> Self {
        Self { header, base: bpe.base().to_vec(), merges: bpe.merges().to_vec() }
    }

    pub fn model(&self) -> Result<BpeModel> {
        Ok(BpeModel::from_merges(self.base.clone(), self.merges.clone())?)
    }
}

pub fn load_bpe(path: &Path) -> Result<BpeModel> {
    read_json::<BpeFile>(path)?.model()
}

/// Settings of the synthetic feature front end, shared by k-means fitting
/// and alignment so both see identical frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub n_units: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookFile {
    pub header: Header,
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub features: FeatureSpec,
}

impl CodebookFile {
    pub fn new(header: Header, cb: &Codebook, features: FeatureSpec) -> Self {
        Self {
            header,
            k: cb.k,
            dim: cb.dim,
            centroids: cb.centroids.chunks(cb.dim).map(<[f64]>::to_vec).collect(),
            inertia: cb.inertia,
            features,
        }
    }

    pub fn codebook(&self) -> Result<Codebook> {
        if self.centroids.len() != self.k || self.centroids.iter().any(|c| c.len() != self.dim) {
            return Err(CliError::Format("codebook centroids do not match k × dim".into()));
        }
        Ok(Codebook { k: self.k, dim: self.dim, centroids: self.centroids.concat(), inertia: self.inertia })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub header: Header,
    pub n_text: usize,
    pub n_units: usize,
    pub total: usize,
    pub specials: std::collections::BTreeMap<String, u32>,
}

impl VocabFile {
    pub fn new(header: Header, v: &JointVocab) -> Self {
        let specials = Special::ALL.iter().map(|&s| (s.name().to_string(), v.special(s))).collect();
        Self { header, n_text: v.n_text(), n_units: v.n_units(), total: v.total(), specials }
    }
}
