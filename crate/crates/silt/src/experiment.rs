//! The quick-start pipeline and the multi-seed schedule comparison.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use silt_core::eval::evaluate_s2st;
use silt_core::interleave::Schedule;
use silt_core::model::{AdamConfig, ModelConfig, TrainConfig};
use silt_core::synth::CorpusParams;

use crate::artifact::Header;
use crate::config::{ModelSpec, ScheduleSpec, TrainSpec};
use crate::error::Result;
use crate::formats::{write_json, AlignMeta, CorpusMeta};
use crate::pipeline::{
    align_records, checkpoint_similarity, cmd_align, cmd_analyze, cmd_eval, cmd_fit_kmeans, cmd_gen, cmd_make_dataset,
    cmd_train, cmd_train_bpe, decode_budget, fit_codebook, generate, snapshot_path, train_bpe, train_model, AlignedSet,
    AnalyzeConfig, DatasetConfig, GenConfig, KmeansConfig, TrainOptions,
};

/// Desk-scale model: two layers, width 32.
pub fn desk_model() -> ModelSpec {
    ModelSpec::from(&ModelConfig { d_model: 32, n_heads: 4, d_ff: 128, max_seq_len: 160, ..Default::default() })
}

pub fn desk_train(schedule: Schedule, steps: u64, seed: u64) -> TrainSpec {
    TrainSpec::from(&TrainConfig {
        adam: AdamConfig { lr: 1e-3, ..Default::default() },
        batch_size: 8,
        total_steps: steps,
        schedule,
        seed,
        ..Default::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuickstartConfig {
    pub seed: u64,
    pub corpus: CorpusMeta,
    pub bpe_size: usize,
    pub kmeans: KmeansConfig,
    pub sharpness: f64,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub save_every: u64,
}

impl QuickstartConfig {
    pub fn new(seed: u64) -> Self {
        let corpus = CorpusParams { expansion_r: 5, jitter: 1, ..Default::default() };
        Self {
            seed,
            corpus: CorpusMeta::new(100, &corpus),
            bpe_size: 512,
            kmeans: KmeansConfig { k: 64, dim: 16, noise: 0.3, max_iters: 50, seed },
            sharpness: 0.9,
            model: desk_model(),
            train: desk_train(Schedule::scheduled_default(), 300, seed),
            save_every: 100,
        }
    }
}

/// Paths written by [`run_quickstart`], in pipeline order.
#[derive(Debug, Clone)]
pub struct QuickstartOutputs {
    pub corpus: PathBuf,
    pub bpe: PathBuf,
    pub codebook: PathBuf,
    pub aligned: PathBuf,
    pub vocab: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub analysis: PathBuf,
    pub lengths_csv: PathBuf,
}

impl QuickstartOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus.jsonl"),
            bpe: dir.join("bpe.json"),
            codebook: dir.join("codebook.json"),
            aligned: dir.join("aligned.jsonl"),
            vocab: dir.join("vocab.json"),
            dataset: dir.join("dataset.jsonl"),
            checkpoint: dir.join("model.ckpt"),
            metrics: dir.join("metrics.csv"),
            report: dir.join("report.json"),
            analysis: dir.join("analysis.json"),
            lengths_csv: dir.join("lengths.csv"),
        }
    }

    /// Every artifact file, snapshots included.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut v = vec![
            self.corpus.clone(),
            self.bpe.clone(),
            self.codebook.clone(),
            self.aligned.clone(),
            self.vocab.clone(),
            self.dataset.clone(),
            self.checkpoint.clone(),
            self.metrics.clone(),
            self.report.clone(),
            self.analysis.clone(),
            self.lengths_csv.clone(),
        ];
        if let Ok(rd) = std::fs::read_dir(self.checkpoint.with_extension("snapshots")) {
            let mut snaps: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
            snaps.sort();
            v.extend(snaps);
        }
        v
    }
}

/// gen → train-bpe → fit-kmeans → align → make-dataset → train → eval → analyze.
pub fn run_quickstart(dir: &Path, cfg: &QuickstartConfig) -> Result<QuickstartOutputs> {
    let o = QuickstartOutputs::in_dir(dir);
    cmd_gen(&GenConfig { seed: cfg.seed, corpus: cfg.corpus.clone() }, &o.corpus)?;
    cmd_train_bpe(&o.corpus, cfg.bpe_size, &o.bpe)?;
    cmd_fit_kmeans(&o.corpus, &cfg.kmeans, &o.codebook)?;
    cmd_align(&o.corpus, &o.codebook, &o.bpe, cfg.sharpness, &o.aligned, &o.vocab)?;
    let ds = DatasetConfig {
        p: 0.3,
        lambda: cfg.train.lambda,
        mode: cfg.train.mode.clone(),
        side: cfg.train.side.clone(),
        cot: cfg.train.cot.clone(),
        seed: cfg.seed,
    };
    cmd_make_dataset(&o.aligned, &o.bpe, &ds, &o.dataset)?;
    let opts = TrainOptions { model: cfg.model.clone(), train: cfg.train.clone(), save_every: cfg.save_every };
    cmd_train(&o.aligned, &o.bpe, &opts, &o.checkpoint, &o.metrics)?;
    cmd_eval(&o.checkpoint, &o.aligned, &o.bpe, "test", None, &o.report)?;
    let mut ckpts: Vec<PathBuf> = (1..)
        .map(|k| k * cfg.save_every)
        .take_while(|&s| cfg.save_every > 0 && s < cfg.train.total_steps)
        .map(|s| snapshot_path(&o.checkpoint.with_extension("snapshots"), s))
        .collect();
    ckpts.push(o.checkpoint.clone());
    let an = AnalyzeConfig {
        split: "dev".into(),
        max_utterances: 200,
        lambda: cfg.train.lambda,
        mode: cfg.train.mode.clone(),
        seed: cfg.seed,
    };
    cmd_analyze(&o.aligned, &o.bpe, &ckpts, &an, &o.analysis, Some(&o.lengths_csv))?;
    Ok(o)
}

// ---------------------------------------------------------------- experiment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub schedule: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seeds the corpus, tokenizer and codebook (shared by every run).
    pub data_seed: u64,
    /// One training run per arm and seed.
    pub seeds: Vec<u64>,
    pub corpus: CorpusMeta,
    pub bpe_size: usize,
    pub kmeans: KmeansConfig,
    pub sharpness: f64,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub arms: Vec<Arm>,
    /// Steps at which representation similarity is measured.
    pub similarity_steps: Vec<u64>,
    pub similarity_split: String,
}

impl ExperimentConfig {
    /// 500 pairs, 3000 steps, Baseline against Scheduled ILT over three seeds.
    pub fn low_resource() -> Self {
        let corpus = CorpusParams { expansion_r: 5, jitter: 1, ..Default::default() };
        Self {
            data_seed: 1,
            seeds: vec![0, 1, 2],
            corpus: CorpusMeta::new(500, &corpus),
            bpe_size: 512,
            kmeans: KmeansConfig { k: 64, dim: 16, noise: 0.3, max_iters: 50, seed: 1 },
            sharpness: 0.9,
            model: desk_model(),
            train: desk_train(Schedule::None, 3000, 0),
            arms: vec![
                Arm { name: "baseline".into(), schedule: ScheduleSpec::None },
                Arm { name: "scheduled".into(), schedule: Schedule::scheduled_default().into() },
            ],
            similarity_steps: vec![300, 600, 1500, 3000],
            similarity_split: "dev".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPoint {
    pub step: u64,
    pub p: f64,
    pub src_st: f64,
    pub src_tgt_t: f64,
    pub tgt_ts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub arm: String,
    pub seed: u64,
    pub unit_bleu: f64,
    pub t_src_exact: Option<f64>,
    pub t_tgt_exact: Option<f64>,
    pub malformed_rate: f64,
    pub final_loss: f64,
    pub similarity: Vec<SimilarityPoint>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub median_unit_bleu: f64,
    pub median_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub header: Header,
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub runs: Vec<RunResult>,
    pub summary: Vec<ArmSummary>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == name)
    }

    /// Median `src S-T` of an arm at `step`.
    pub fn median_src_st(&self, arm: &str, step: u64) -> f64 {
        median(
            self.runs
                .iter()
                .filter(|r| r.arm == arm)
                .filter_map(|r| r.similarity.iter().find(|s| s.step == step).map(|s| s.src_st))
                .collect(),
        )
    }
}

/// Builds the shared data once, then trains and evaluates every run.
/// `progress` receives one line per finished run.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(&RunResult)) -> Result<ExperimentReport> {
    let records = generate(&GenConfig { seed: cfg.data_seed, corpus: cfg.corpus.clone() })?;
    let bpe = train_bpe(&records, cfg.bpe_size)?;
    let (cb, spec) = fit_codebook(&records, cfg.corpus.n_units as usize, &cfg.kmeans)?;
    let aligned = align_records(&records, &cb, &spec, &bpe, cfg.sharpness)?;
    let header = Header::new("experiment", cfg, cfg.data_seed);
    let meta = AlignMeta { n_text: bpe.vocab_size(), n_units: cb.k, sharpness: cfg.sharpness };
    let set = AlignedSet::build(header.clone(), &meta, &aligned, bpe)?;
    let test = set.split("test");
    let probe = set.split(&cfg.similarity_split);

    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for arm in &cfg.arms {
            let start = Instant::now();
            let mut model = cfg.model.clone();
            model.seed = seed;
            let mut train = cfg.train.clone();
            train.seed = seed;
            train.schedule = arm.schedule;
            let steps = &cfg.similarity_steps;
            let every = steps.iter().fold(0, |g, &s| gcd(g, s));
            let opts = TrainOptions { model, train, save_every: every };
            let mut similarity = Vec::new();
            let mut last_loss = f64::NAN;
            let ckpt = train_model(
                &set,
                &opts,
                |l| last_loss = l.loss,
                |c| {
                    if steps.contains(&c.step) {
                        let (p, r) = checkpoint_similarity(c, &probe, &set)?;
                        similarity.push(SimilarityPoint {
                            step: c.step,
                            p,
                            src_st: r.src_st,
                            src_tgt_t: r.src_tgt_t,
                            tgt_ts: r.tgt_ts,
                        });
                    }
                    Ok(())
                },
            )?;
            if steps.contains(&ckpt.step) {
                let (p, r) = checkpoint_similarity(&ckpt, &probe, &set)?;
                similarity.push(SimilarityPoint {
                    step: ckpt.step,
                    p,
                    src_st: r.src_st,
                    src_tgt_t: r.src_tgt_t,
                    tgt_ts: r.tgt_ts,
                });
            }
            let budget = decode_budget(&test, ckpt.params.cfg.max_seq_len);
            let scores = evaluate_s2st(&ckpt.params, &test, ckpt.train_cfg.cot_mode, &set.vocab, budget)?;
            let run = RunResult {
                arm: arm.name.clone(),
                seed,
                unit_bleu: scores.unit_bleu,
                t_src_exact: scores.t_src_exact,
                t_tgt_exact: scores.t_tgt_exact,
                malformed_rate: scores.malformed_rate,
                final_loss: last_loss,
                similarity,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&run);
            runs.push(run);
        }
    }
    let summary = cfg
        .arms
        .iter()
        .map(|a| {
            let of = |f: fn(&RunResult) -> f64| median(runs.iter().filter(|r| r.arm == a.name).map(f).collect());
            ArmSummary {
                arm: a.name.clone(),
                median_unit_bleu: of(|r| r.unit_bleu),
                median_final_loss: of(|r| r.final_loss),
            }
        })
        .collect();
    Ok(ExperimentReport {
        header,
        config: cfg.clone(),
        n_train: set.split("train").len(),
        n_test: test.len(),
        runs,
        summary,
    })
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(path, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(Vec::new()).is_nan());
    }

    #[test]
    fn snapshot_interval_hits_every_probe_step() {
        let steps = ExperimentConfig::low_resource().similarity_steps;
        let g = steps.iter().fold(0, |g, &s| gcd(g, s));
        assert_eq!(g, 300);
        assert!(steps.iter().all(|s| s % g == 0));
    }

    #[test]
    fn early_probe_is_in_the_text_heavy_phase() {
        let cfg = ExperimentConfig::low_resource();
        let sched: Schedule = cfg.arms[1].schedule.into();
        assert!(sched.text_ratio(cfg.similarity_steps[0]) >= 0.7);
        assert_eq!(cfg.seeds.len(), 3);
        assert_eq!(cfg.corpus.n_pairs, 500);
    }
}
