use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use silt::config::{ModelSpec, TrainSpec};
use silt::experiment::{self, ExperimentConfig, QuickstartConfig};
use silt::formats::CorpusMeta;
use silt::pipeline::{self, AnalyzeConfig, DatasetConfig, GenConfig, KmeansConfig, TrainOptions};
use silt::{CliError, Result};
use silt_core::interleave::{DEFAULT_CONSTANT_P, DEFAULT_DELTA, DEFAULT_INTERVAL, DEFAULT_P0};
use silt_core::model::{ModelConfig, TrainConfig};
use silt_core::synth::CorpusParams;

#[derive(Parser)]
#[command(name = "silt", version, about = "Scheduled interleaved speech-text training for toy S2ST")]
#[command(args_conflicts_with_subcommands = true, subcommand_required = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
#[command(allow_negative_numbers = true)]
enum Cmd {
    /// Generate a synthetic parallel corpus with gold alignments.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "n", default_value_t = 500)]
        n_pairs: usize,
        #[arg(long, default_value_t = 5)]
        r: u32,
        #[arg(long, default_value_t = 1)]
        jitter: u32,
        #[arg(long, default_value_t = 64)]
        n_units: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a byte-level BPE on the training-split transcripts.
    TrainBpe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a k-means codebook on synthetic frame features.
    FitKmeans {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize, CTC-align and aggregate to word spans.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        sharpness: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab_out: PathBuf,
    },
    /// Materialise interleaved CoT examples at a fixed text ratio.
    MakeDataset {
        #[arg(long)]
        aligned: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "text")]
        mode: String,
        #[arg(long, default_value = "both")]
        side: String,
        #[arg(long, default_value = "cot")]
        cot: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the decoder-only model.
    Train(TrainArgs),
    /// Greedy-decode a split and score unit BLEU.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        aligned: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        max_new: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Length-ratio table and representation similarity of checkpoints.
    Analyze {
        #[arg(long)]
        aligned: PathBuf,
        #[arg(long)]
        bpe: PathBuf,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long, default_value_t = 200)]
        max_utterances: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "text")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the whole pipeline on a small corpus into one directory.
    Quickstart {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Baseline against scheduled interleaving over several seeds.
    Experiment {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        steps: Option<u64>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    aligned: PathBuf,
    #[arg(long)]
    bpe: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    /// scheduled, constant or none
    #[arg(long, default_value = "scheduled")]
    schedule: String,
    #[arg(long, default_value_t = DEFAULT_P0)]
    p0: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_INTERVAL)]
    interval: u64,
    /// Text ratio of the constant schedule.
    #[arg(long, default_value_t = DEFAULT_CONSTANT_P)]
    p: f64,
    #[arg(long, default_value_t = 3000)]
    steps: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value = "text")]
    mode: String,
    #[arg(long, default_value = "both")]
    side: String,
    #[arg(long, default_value = "cot")]
    cot: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long, default_value_t = 512)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long)]
    tie_embeddings: bool,
    /// Extra snapshot every N steps (0 disables).
    #[arg(long, default_value_t = 0)]
    save_every: u64,
}

impl TrainArgs {
    fn options(&self) -> Result<TrainOptions> {
        let model = ModelSpec::from(&ModelConfig {
            n_layers: self.layers,
            d_model: self.d_model,
            n_heads: self.heads,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            max_seq_len: self.max_seq_len,
            dropout_rate: self.dropout,
            seed: self.seed,
            tie_embeddings: self.tie_embeddings,
            ..Default::default()
        });
        let schedule = pipeline::schedule_from(&self.schedule, self.p0, self.delta, self.interval, self.p)?;
        let mut base = TrainConfig {
            batch_size: self.batch_size,
            total_steps: self.steps,
            schedule,
            seed: self.seed,
            lambda: self.lambda,
            ..Default::default()
        };
        base.adam.lr = self.lr;
        let mut train = TrainSpec::from(&base);
        train.mode = self.mode.clone();
        train.side = self.side.clone();
        train.cot = self.cot.clone();
        // Validate the string fields before any work starts.
        TrainConfig::try_from(&train)?;
        Ok(TrainOptions { model, train, save_every: self.save_every })
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { seed, n_pairs, r, jitter, n_units, out } => {
            let p = CorpusParams { expansion_r: r, jitter, n_units, ..Default::default() };
            pipeline::cmd_gen(&GenConfig { seed, corpus: CorpusMeta::new(n_pairs, &p) }, &out)
        }
        Cmd::TrainBpe { corpus, size, out } => pipeline::cmd_train_bpe(&corpus, size, &out),
        Cmd::FitKmeans { corpus, k, dim, noise, max_iters, seed, out } => {
            pipeline::cmd_fit_kmeans(&corpus, &KmeansConfig { k, dim, noise, max_iters, seed }, &out)
        }
        Cmd::Align { corpus, codebook, bpe, sharpness, out, vocab_out } => {
            pipeline::cmd_align(&corpus, &codebook, &bpe, sharpness, &out, &vocab_out)
        }
        Cmd::MakeDataset { aligned, bpe, p, lambda, mode, side, cot, seed, out } => {
            pipeline::cmd_make_dataset(&aligned, &bpe, &DatasetConfig { p, lambda, mode, side, cot, seed }, &out)
        }
        Cmd::Train(a) => pipeline::cmd_train(&a.aligned, &a.bpe, &a.options()?, &a.out, &a.metrics),
        Cmd::Eval { checkpoint, aligned, bpe, split, max_new, out } => {
            pipeline::cmd_eval(&checkpoint, &aligned, &bpe, &split, max_new, &out)
        }
        Cmd::Analyze { aligned, bpe, checkpoints, split, max_utterances, lambda, mode, seed, out, csv } => {
            if checkpoints.is_empty() {
                return Err(CliError::Usage("at least one --checkpoint is required".into()));
            }
            let cfg = AnalyzeConfig { split, max_utterances, lambda, mode, seed };
            pipeline::cmd_analyze(&aligned, &bpe, &checkpoints, &cfg, &out, csv.as_deref())
        }
        Cmd::Quickstart { seed, dir } => {
            let o = experiment::run_quickstart(&dir, &QuickstartConfig::new(seed))?;
            println!("{}", o.report.display());
            Ok(())
        }
        Cmd::Experiment { out, seeds, steps } => {
            let mut cfg = ExperimentConfig::low_resource();
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
                cfg.similarity_steps.retain(|&x| x <= s);
            }
            let report = experiment::run_experiment(&cfg, |r| {
                eprintln!(
                    "{} seed {}: unit_bleu {:.4} loss {:.3} ({:.0}s)",
                    r.arm, r.seed, r.unit_bleu, r.final_loss, r.seconds
                )
            })?;
            for s in &report.summary {
                println!("{}: median unit_bleu {:.4}", s.arm, s.median_unit_bleu);
            }
            experiment::write_report(&out, &report)
        }
    }
}

fn report(e: &CliError) -> ExitCode {
    let line = serde_json::json!({ "error": e.code(), "message": e.to_string() });
    eprintln!("{line}");
    ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return report(&CliError::Usage(first.to_string()));
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
