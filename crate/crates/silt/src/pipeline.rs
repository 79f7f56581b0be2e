//! Pipeline stages. Each stage is an in-memory function plus a `cmd_*`
//! wrapper that reads and writes the artifact files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use silt_core::cot::AlignedPair;
use silt_core::ctc_align::{ctc_forced_align, tokens_to_word_spans, WordAlignment};
use silt_core::eval::{evaluate_s2st, length_ratio_stats, segment_similarity, LengthRow, SimilarityReport};
use silt_core::interleave::Schedule;
use silt_core::model::{assemble_at_step, Checkpoint, ModelConfig, StepLog, TrainConfig, Trainer};
use silt_core::quantizer::{kmeans_fit, quantize, Codebook, Features};
use silt_core::rng::{self, purpose};
use silt_core::synth::{generate_pairs, make_posteriors, split_assignments, FeatureSynth, ToyLanguage};
use silt_core::vocab::{BpeModel, JointVocab};

use crate::artifact::Header;
use crate::checkpoint;
use crate::config::{parse_cot, parse_mode, parse_side, ModelSpec, TrainSpec};
use crate::error::{CliError, Result};
use crate::formats::{
    load_bpe, read_json, read_jsonl, spans_to_tuples, tuples_to_spans, write_json, write_jsonl, AlignMeta,
    AlignedRecord, BpeFile, CodebookFile, CorpusMeta, ExampleRecord, ExamplesMeta, FeatureSpec, Jsonl, PairRecord,
    SegmentRanges, VocabFile,
};

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub corpus: CorpusMeta,
}

pub fn generate(cfg: &GenConfig) -> Result<Vec<PairRecord>> {
    let params = cfg.corpus.params();
    let lang = ToyLanguage::generate(&params, cfg.seed)?;
    let pairs = generate_pairs(&lang, &params, cfg.seed, cfg.corpus.n_pairs)?;
    let splits = split_assignments(pairs.len(), cfg.seed);
    Ok(pairs
        .into_iter()
        .zip(splits)
        .map(|(p, s)| PairRecord {
            id: p.id,
            split: s.name().into(),
            src_units: p.src_units,
            tgt_units: p.tgt_units,
            src_align: spans_to_tuples(&p.src_align),
            tgt_align: spans_to_tuples(&p.tgt_align),
            src_text: p.src_text,
            tgt_text: p.tgt_text,
        })
        .collect())
}

pub fn cmd_gen(cfg: &GenConfig, out: &Path) -> Result<()> {
    let records = generate(cfg)?;
    write_jsonl(out, &Header::new("gen", cfg, cfg.seed), &cfg.corpus, "pair", &records)
}

pub fn load_corpus(path: &Path) -> Result<Jsonl<CorpusMeta, PairRecord>> {
    read_jsonl(path, "pair")
}

// ---------------------------------------------------------------- bpe

/// Trains on the source and target transcripts of the training split.
pub fn train_bpe(records: &[PairRecord], size: usize) -> Result<BpeModel> {
    let text: Vec<&str> = records
        .iter()
        .filter(|r| r.split == "train")
        .flat_map(|r| [r.src_text.as_str(), r.tgt_text.as_str()])
        .collect();
    Ok(BpeModel::train(&text, size)?)
}

#[derive(Serialize)]
struct BpeConfig<'a> {
    input: &'a str,
    size: usize,
}

pub fn cmd_train_bpe(corpus: &Path, size: usize, out: &Path) -> Result<()> {
    let c = load_corpus(corpus)?;
    let bpe = train_bpe(&c.records, size)?;
    let header = Header::new("train-bpe", &BpeConfig { input: &c.header.config_hash, size }, c.header.seed);
    write_json(out, &BpeFile::new(header, &bpe))
}

// ---------------------------------------------------------------- k-means

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub dim: usize,
    pub noise: f64,
    pub max_iters: usize,
    pub seed: u64,
}

/// Synthetic encoder frames for one side (0 = source, 1 = target).
pub fn synth_features(synth: &FeatureSynth, spec: &FeatureSpec, id: u64, side: u64, units: &[u32]) -> Result<Features> {
    Ok(synth.features(units, &mut rng::stream(spec.seed, &[purpose::FEATURES, id, side]))?)
}

/// Fits the codebook on every training-split frame.
pub fn fit_codebook(records: &[PairRecord], n_units: usize, cfg: &KmeansConfig) -> Result<(Codebook, FeatureSpec)> {
    let spec = FeatureSpec { n_units, dim: cfg.dim, noise: cfg.noise, seed: cfg.seed };
    let synth = FeatureSynth::new(n_units, cfg.dim, cfg.noise, cfg.seed)?;
    let mut data = Vec::new();
    for r in records.iter().filter(|r| r.split == "train") {
        for (side, units) in [(0, &r.src_units), (1, &r.tgt_units)] {
            data.extend(synth_features(&synth, &spec, r.id, side, units)?.data);
        }
    }
    let feats = Features::new(cfg.dim, data)?;
    Ok((kmeans_fit(&feats, cfg.k, cfg.max_iters, cfg.seed)?, spec))
}

#[derive(Serialize)]
struct KmeansHashed<'a> {
    input: &'a str,
    cfg: &'a KmeansConfig,
}

pub fn cmd_fit_kmeans(corpus: &Path, cfg: &KmeansConfig, out: &Path) -> Result<()> {
    let c = load_corpus(corpus)?;
    let (cb, spec) = fit_codebook(&c.records, c.meta.n_units as usize, cfg)?;
    let header = Header::new("fit-kmeans", &KmeansHashed { input: &c.header.config_hash, cfg }, cfg.seed);
    write_json(out, &CodebookFile::new(header, &cb, spec))
}

// ---------------------------------------------------------------- align

/// Quantizes one side and force-aligns its transcript.
///
/// CTC posteriors are synthesized from the gold word spans (one label block
/// per BPE token) and the aligner recovers word spans from them alone.
fn align_side(
    units: &[u32],
    gold: &WordAlignment,
    text: &str,
    feats: &Features,
    cb: &Codebook,
    bpe: &BpeModel,
    sharpness: f64,
) -> Result<(Vec<u32>, WordAlignment)> {
    let quantized = quantize(cb, feats)?.units;
    debug_assert_eq!(quantized.len(), units.len());
    let chunks = bpe.encode_chunks(text);
    let words: Vec<&str> = gold.words().collect();
    if chunks.len() != words.len() {
        return Err(CliError::Format(format!("transcript {text:?} does not split into {} words", words.len())));
    }
    let labels: Vec<Vec<u32>> = chunks.iter().map(|c| c.iter().map(|&t| t + 1).collect()).collect();
    let post = make_posteriors(units.len(), gold, &labels, bpe.vocab_size() + 1, sharpness)?;
    let flat: Vec<u32> = labels.concat();
    let ctc = ctc_forced_align(&post, &flat, 0)?;
    let counts: Vec<usize> = labels.iter().map(Vec::len).collect();
    Ok((quantized, tokens_to_word_spans(&ctc.spans, &counts, &words)?))
}

pub fn align_records(
    records: &[PairRecord],
    cb: &Codebook,
    spec: &FeatureSpec,
    bpe: &BpeModel,
    sharpness: f64,
) -> Result<Vec<AlignedRecord>> {
    let synth = FeatureSynth::new(spec.n_units, spec.dim, spec.noise, spec.seed)?;
    records
        .iter()
        .map(|r| {
            let sf = synth_features(&synth, spec, r.id, 0, &r.src_units)?;
            let tf = synth_features(&synth, spec, r.id, 1, &r.tgt_units)?;
            let (su, sa) =
                align_side(&r.src_units, &tuples_to_spans(&r.src_align), &r.src_text, &sf, cb, bpe, sharpness)?;
            let (tu, ta) =
                align_side(&r.tgt_units, &tuples_to_spans(&r.tgt_align), &r.tgt_text, &tf, cb, bpe, sharpness)?;
            Ok(AlignedRecord {
                id: r.id,
                split: r.split.clone(),
                src_units: su,
                tgt_units: tu,
                src_align: spans_to_tuples(&sa),
                tgt_align: spans_to_tuples(&ta),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct AlignHashed<'a> {
    corpus: &'a str,
    codebook: &'a str,
    bpe: &'a str,
    sharpness: f64,
}

pub fn cmd_align(
    corpus: &Path,
    codebook: &Path,
    bpe_path: &Path,
    sharpness: f64,
    out: &Path,
    vocab_out: &Path,
) -> Result<()> {
    let c = load_corpus(corpus)?;
    let cbf: CodebookFile = read_json(codebook)?;
    let bpef: BpeFile = read_json(bpe_path)?;
    let bpe = bpef.model()?;
    let aligned = align_records(&c.records, &cbf.codebook()?, &cbf.features, &bpe, sharpness)?;
    let vocab = JointVocab::new(bpe.vocab_size(), cbf.k)?;
    let cfg = AlignHashed {
        corpus: &c.header.config_hash,
        codebook: &cbf.header.config_hash,
        bpe: &bpef.header.config_hash,
        sharpness,
    };
    let header = Header::new("align", &cfg, c.header.seed);
    let meta = AlignMeta { n_text: vocab.n_text(), n_units: vocab.n_units(), sharpness };
    write_jsonl(out, &header, &meta, "aligned", &aligned)?;
    write_json(vocab_out, &VocabFile::new(header, &vocab))
}

// ---------------------------------------------------------------- datasets

/// Aligned records with the joint vocabulary they index into.
pub struct AlignedSet {
    pub header: Header,
    pub vocab: JointVocab,
    pub bpe: BpeModel,
    pub records: Vec<(String, AlignedPair)>,
}

impl AlignedSet {
    pub fn build(header: Header, meta: &AlignMeta, records: &[AlignedRecord], bpe: BpeModel) -> Result<Self> {
        if bpe.vocab_size() != meta.n_text {
            return Err(CliError::Format(format!(
                "BPE has {} tokens but the aligned set was built with {}",
                bpe.vocab_size(),
                meta.n_text
            )));
        }
        let vocab = JointVocab::new(meta.n_text, meta.n_units)?;
        let records = records
            .iter()
            .map(|r| {
                let pair = AlignedPair::new(
                    r.id,
                    r.src_units.clone(),
                    tuples_to_spans(&r.src_align),
                    r.tgt_units.clone(),
                    tuples_to_spans(&r.tgt_align),
                    &bpe,
                );
                (r.split.clone(), pair)
            })
            .collect();
        Ok(Self { header, vocab, bpe, records })
    }

    pub fn load(aligned: &Path, bpe: &Path) -> Result<Self> {
        let a: Jsonl<AlignMeta, AlignedRecord> = read_jsonl(aligned, "aligned")?;
        Self::build(a.header, &a.meta, &a.records, load_bpe(bpe)?)
    }

    pub fn split(&self, name: &str) -> Vec<AlignedPair> {
        self.records.iter().filter(|(s, _)| s == name).map(|(_, p)| p.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub p: f64,
    pub lambda: f64,
    pub mode: String,
    pub side: String,
    pub cot: String,
    pub seed: u64,
}

impl DatasetConfig {
    fn train_config(&self) -> Result<TrainConfig> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(CliError::Usage(format!("--p must lie in [0, 1], got {}", self.p)));
        }
        Ok(TrainConfig {
            seed: self.seed,
            lambda: self.lambda,
            interleave_mode: parse_mode(&self.mode)?,
            side: parse_side(&self.side)?,
            cot_mode: parse_cot(&self.cot)?,
            ..Default::default()
        })
    }
}

pub fn make_examples(set: &AlignedSet, cfg: &DatasetConfig) -> Result<Vec<ExampleRecord>> {
    let tc = cfg.train_config()?;
    set.records
        .iter()
        .map(|(split, pair)| {
            let a = assemble_at_step(pair, cfg.p, &tc, &set.vocab, &set.bpe, 0)?;
            Ok(ExampleRecord {
                id: pair.id,
                split: split.clone(),
                segments: SegmentRanges::from(&a.example.segments),
                tokens: a.example.tokens,
                mask: a.example.loss_mask,
                f_src: a.f_src,
                f_tgt: a.f_tgt,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct DatasetHashed<'a> {
    input: &'a str,
    cfg: &'a DatasetConfig,
}

pub fn cmd_make_dataset(aligned: &Path, bpe: &Path, cfg: &DatasetConfig, out: &Path) -> Result<()> {
    let set = AlignedSet::load(aligned, bpe)?;
    let records = make_examples(&set, cfg)?;
    let header = Header::new("make-dataset", &DatasetHashed { input: &set.header.config_hash, cfg }, cfg.seed);
    let meta = ExamplesMeta {
        mode: cfg.mode.clone(),
        side: cfg.side.clone(),
        cot: cfg.cot.clone(),
        p: cfg.p,
        lambda: cfg.lambda,
    };
    write_jsonl(out, &header, &meta, "example", &records)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub model: ModelSpec,
    pub train: TrainSpec,
    /// Also snapshot every this many steps (0 disables).
    pub save_every: u64,
}

pub const METRICS_COLUMNS: &str = "step,p,loss,f_src,f_tgt,len_mean";

pub fn metrics_row(l: &StepLog) -> String {
    format!("{},{},{},{},{},{}", l.step, l.p, l.loss, l.f_src, l.f_tgt, l.len_mean)
}

/// Trains on the training split, calling `on_snapshot` after every
/// `save_every`-th step.
pub fn train_model(
    set: &AlignedSet,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&StepLog),
    mut on_snapshot: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    let mut mcfg = ModelConfig::from(&opts.model);
    mcfg.vocab_size = set.vocab.total();
    let tcfg = TrainConfig::try_from(&opts.train)?;
    let data = set.split("train");
    let mut t = Trainer::new(&data, &mcfg, &tcfg, &set.vocab, &set.bpe)?;
    while !t.is_done() {
        let log = t.step()?;
        on_step(&log);
        if opts.save_every > 0 && t.step % opts.save_every == 0 && !t.is_done() {
            on_snapshot(&t.checkpoint())?;
        }
    }
    Ok(t.checkpoint())
}

#[derive(Serialize)]
struct TrainHashed<'a> {
    input: &'a str,
    opts: &'a TrainOptions,
}

pub fn snapshot_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

pub fn cmd_train(aligned: &Path, bpe: &Path, opts: &TrainOptions, out: &Path, metrics: &Path) -> Result<()> {
    let set = AlignedSet::load(aligned, bpe)?;
    let mut spec = opts.clone();
    spec.model.vocab_size = set.vocab.total();
    let header = Header::new("train", &TrainHashed { input: &set.header.config_hash, opts: &spec }, spec.train.seed);
    let mut rows = vec![header.csv_comment(), METRICS_COLUMNS.to_string()];
    let mut skipped = 0;
    let snap_dir = out.with_extension("snapshots");
    let ckpt = train_model(
        &set,
        &spec,
        |l| {
            skipped += l.skipped;
            rows.push(metrics_row(l));
        },
        |c| checkpoint::save(&snapshot_path(&snap_dir, c.step), c, &header),
    )?;
    if skipped > 0 {
        eprintln!("silt: skipped {skipped} overlength examples");
    }
    checkpoint::save(out, &ckpt, &header)?;
    write_lines(metrics, &rows)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| CliError::io(path, e))?);
    for l in lines {
        writeln!(f, "{l}").map_err(|e| CliError::io(path, e))?;
    }
    f.flush().map_err(|e| CliError::io(path, e))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub header: Header,
    pub split: String,
    pub checkpoint_step: u64,
    pub schedule: String,
    pub n: usize,
    pub unit_bleu: f64,
    pub t_src_exact: Option<f64>,
    pub t_tgt_exact: Option<f64>,
    pub malformed_rate: f64,
}

/// Decoding budget: the longest gold continuation in `pairs` plus slack,
/// capped by the context.
pub fn decode_budget(pairs: &[AlignedPair], max_seq_len: usize) -> usize {
    let longest =
        pairs.iter().map(|p| p.src_units.len() + p.src_text.len() + p.tgt_text.len() + p.tgt_units.len() + 5).max();
    longest.unwrap_or(max_seq_len).min(max_seq_len)
}

#[derive(Serialize)]
struct EvalHashed<'a> {
    checkpoint: &'a str,
    data: &'a str,
    split: &'a str,
    max_new: usize,
}

pub fn cmd_eval(
    ckpt_path: &Path,
    aligned: &Path,
    bpe: &Path,
    split: &str,
    max_new: Option<usize>,
    out: &Path,
) -> Result<()> {
    let (ckpt, meta) = checkpoint::load(ckpt_path)?;
    let set = AlignedSet::load(aligned, bpe)?;
    let test = set.split(split);
    let max_new = max_new.unwrap_or_else(|| decode_budget(&test, ckpt.params.cfg.max_seq_len));
    let scores = evaluate_s2st(&ckpt.params, &test, ckpt.train_cfg.cot_mode, &set.vocab, max_new)?;
    let cfg = EvalHashed { checkpoint: &meta.header.config_hash, data: &set.header.config_hash, split, max_new };
    let report = EvalFile {
        header: Header::new("eval", &cfg, meta.header.seed),
        split: split.into(),
        checkpoint_step: ckpt.step,
        schedule: ckpt.train_cfg.schedule.kind_name().into(),
        n: scores.n,
        unit_bleu: scores.unit_bleu,
        t_src_exact: scores.t_src_exact,
        t_tgt_exact: scores.t_tgt_exact,
        malformed_rate: scores.malformed_rate,
    };
    write_json(out, &report)
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthEntry {
    pub p: f64,
    pub src_ratio: f64,
    pub tgt_ratio: f64,
}

impl From<LengthRow> for LengthEntry {
    fn from(r: LengthRow) -> Self {
        Self { p: r.p, src_ratio: r.src_ratio, tgt_ratio: r.tgt_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEntry {
    pub checkpoint: String,
    pub step: u64,
    pub schedule: String,
    pub p: f64,
    pub src_st: f64,
    pub src_tgt_t: f64,
    pub tgt_ts: f64,
    pub examples: usize,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFile {
    pub header: Header,
    pub lengths: Vec<LengthEntry>,
    pub similarity: Vec<SimilarityEntry>,
}

pub const ANALYSIS_P: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Similarity of `ckpt` on `pairs`, each assembled the way the run itself saw
/// its data at that step: the checkpoint's schedule ratio, side and mode.
pub fn checkpoint_similarity(
    ckpt: &Checkpoint,
    pairs: &[AlignedPair],
    set: &AlignedSet,
) -> Result<(f64, SimilarityReport)> {
    let p = ckpt.train_cfg.schedule.text_ratio(ckpt.step);
    let cfg = &ckpt.train_cfg;
    let examples = pairs
        .iter()
        .map(|pair| assemble_at_step(pair, p, cfg, &set.vocab, &set.bpe, ckpt.step).map(|a| a.example))
        .filter(|e| e.as_ref().map_or(true, |e| e.len() <= ckpt.params.cfg.max_seq_len))
        .collect::<silt_core::Result<Vec<_>>>()?;
    Ok((p, segment_similarity(&ckpt.params, &examples)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub split: String,
    pub max_utterances: usize,
    pub lambda: f64,
    pub mode: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct AnalyzeHashed<'a> {
    data: &'a str,
    checkpoints: Vec<String>,
    cfg: &'a AnalyzeConfig,
}

pub fn cmd_analyze(
    aligned: &Path,
    bpe: &Path,
    checkpoints: &[PathBuf],
    cfg: &AnalyzeConfig,
    out: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let set = AlignedSet::load(aligned, bpe)?;
    let mut pairs = set.split(&cfg.split);
    pairs.truncate(cfg.max_utterances);
    let rows =
        length_ratio_stats(&pairs, &ANALYSIS_P, cfg.lambda, parse_mode(&cfg.mode)?, &set.vocab, &set.bpe, cfg.seed)?;
    let mut similarity = Vec::new();
    let mut hashes = Vec::new();
    for path in checkpoints {
        let (ckpt, meta) = checkpoint::load(path)?;
        let (p, r) = checkpoint_similarity(&ckpt, &pairs, &set)?;
        hashes.push(meta.header.config_hash.clone());
        similarity.push(SimilarityEntry {
            checkpoint: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            step: ckpt.step,
            schedule: ckpt.train_cfg.schedule.kind_name().into(),
            p,
            src_st: r.src_st,
            src_tgt_t: r.src_tgt_t,
            tgt_ts: r.tgt_ts,
            examples: r.examples,
            undefined: r.undefined,
        });
        if r.undefined > 0 {
            eprintln!("silt: {} undefined cosines excluded for {}", r.undefined, path.display());
        }
    }
    let header =
        Header::new("analyze", &AnalyzeHashed { data: &set.header.config_hash, checkpoints: hashes, cfg }, cfg.seed);
    if let Some(csv) = csv {
        let mut lines = vec![header.csv_comment(), "p,src_ratio,tgt_ratio".to_string()];
        lines.extend(rows.iter().map(|r| format!("{},{},{}", r.p, r.src_ratio, r.tgt_ratio)));
        write_lines(csv, &lines)?;
    }
    let lengths = rows.into_iter().map(LengthEntry::from).collect();
    write_json(out, &AnalysisFile { header, lengths, similarity })
}

/// Schedule from CLI-style parts.
pub fn schedule_from(kind: &str, p0: f64, delta: f64, interval: u64, p: f64) -> Result<Schedule> {
    let s = match kind {
        "scheduled" => Schedule::Scheduled { p0, delta, interval },
        "constant" => Schedule::Constant(p),
        "none" => Schedule::None,
        other => return Err(CliError::Usage(format!("unknown schedule {other:?}"))),
    };
    s.validate()?;
    Ok(s)
}
