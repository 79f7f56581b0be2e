//! The training loop with per-step text-ratio scheduling.
//!
//! Every random draw of step `s` comes from a stream keyed by the training
//! seed and `s`, so a checkpoint needs no RNG state beyond `(seed, step)` and
//! a resumed run continues the uninterrupted trace bit for bit.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::transformer::accumulate_grads;
use super::{ModelConfig, Params};
use crate::cot::{assemble_pair_example, AlignedPair, AssembledExample, CotMode};
use crate::error::{invalid, Error, Result};
use crate::interleave::{InterleaveConfig, InterleaveMode, Schedule, Side};
use crate::rng::{self, purpose};
use crate::vocab::{BpeModel, JointVocab};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    pub schedule: Schedule,
    /// Seeds batching, interleaving and dropout.
    pub seed: u64,
    pub lambda: f64,
    pub interleave_mode: InterleaveMode,
    pub side: Side,
    pub cot_mode: CotMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 8,
            total_steps: 3000,
            schedule: Schedule::scheduled_default(),
            seed: 0,
            lambda: 1.0,
            interleave_mode: InterleaveMode::Text,
            side: Side::Both,
            cot_mode: CotMode::Cot,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.total_steps == 0 {
            return Err(invalid("total_steps must be at least 1"));
        }
        InterleaveConfig { p: 0.0, lambda: self.lambda, mode: self.interleave_mode }.validate()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub p: f64,
    /// Token-mean masked NLL over the batch; NaN if every example was skipped.
    pub loss: f64,
    pub f_src: f64,
    pub f_tgt: f64,
    pub len_mean: f64,
    /// Examples dropped for exceeding `max_seq_len`.
    pub skipped: usize,
}

/// Everything needed to resume: θ, Adam moments and the next step index.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Params,
    pub adam: AdamState,
    pub train_cfg: TrainConfig,
    /// Number of completed steps.
    pub step: u64,
}

/// Assembles the training example for `pair` at `step` using the step's own
/// interleaving streams.
#[allow(clippy::too_many_arguments)]
pub fn assemble_at_step(
    pair: &AlignedPair,
    p: f64,
    cfg: &TrainConfig,
    vocab: &JointVocab,
    bpe: &BpeModel,
    step: u64,
) -> Result<AssembledExample> {
    let (p_src, p_tgt) = cfg.side.ratios(p);
    let src_cfg = InterleaveConfig { p: p_src, lambda: cfg.lambda, mode: cfg.interleave_mode };
    let tgt_cfg = InterleaveConfig { p: p_tgt, ..src_cfg };
    let mut rs = rng::stream(cfg.seed, &[purpose::INTERLEAVE_SRC, pair.id, step]);
    let mut rt = rng::stream(cfg.seed, &[purpose::INTERLEAVE_TGT, pair.id, step]);
    assemble_pair_example(pair, &src_cfg, &tgt_cfg, cfg.cot_mode, vocab, bpe, &mut rs, &mut rt)
}

pub struct Trainer<'a> {
    pub params: Params,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub step: u64,
    data: &'a [AlignedPair],
    vocab: &'a JointVocab,
    bpe: &'a BpeModel,
}

impl<'a> Trainer<'a> {
    pub fn new(
        data: &'a [AlignedPair],
        model_cfg: &ModelConfig,
        cfg: &TrainConfig,
        vocab: &'a JointVocab,
        bpe: &'a BpeModel,
    ) -> Result<Self> {
        let params = Params::init(model_cfg)?;
        Self::with_state(data, params, AdamState::new(model_cfg.param_count()), cfg, 0, vocab, bpe)
    }

    pub fn resume(data: &'a [AlignedPair], ckpt: Checkpoint, vocab: &'a JointVocab, bpe: &'a BpeModel) -> Result<Self> {
        Self::with_state(data, ckpt.params, ckpt.adam, &ckpt.train_cfg, ckpt.step, vocab, bpe)
    }

    fn with_state(
        data: &'a [AlignedPair],
        params: Params,
        adam: AdamState,
        cfg: &TrainConfig,
        step: u64,
        vocab: &'a JointVocab,
        bpe: &'a BpeModel,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if params.cfg.vocab_size != vocab.total() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "model vocabulary {} differs from joint vocabulary {}",
                params.cfg.vocab_size,
                vocab.total()
            )));
        }
        if adam.m.len() != params.len() || adam.v.len() != params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        Ok(Self { params, adam, cfg: cfg.clone(), step, data, vocab, bpe })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            train_cfg: self.cfg.clone(),
            step: self.step,
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// Runs one optimisation step.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.step;
        let p = self.cfg.schedule.text_ratio(step);
        let mut br = rng::stream(self.cfg.seed, &[purpose::BATCH, step]);
        let picks: Vec<usize> = (0..self.cfg.batch_size).map(|_| br.gen_range(0..self.data.len())).collect();

        let max_len = self.params.cfg.max_seq_len;
        let mut batch = Vec::with_capacity(picks.len());
        let (mut f_src, mut f_tgt, mut len_sum, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for (slot, &i) in picks.iter().enumerate() {
            let a = assemble_at_step(&self.data[i], p, &self.cfg, self.vocab, self.bpe, step)?;
            f_src += a.f_src;
            f_tgt += a.f_tgt;
            len_sum += a.example.len();
            if a.example.len() > max_len {
                skipped += 1;
                continue;
            }
            batch.push((slot as u64, a.example));
        }
        let n = picks.len() as f64;
        let mut log = StepLog {
            step,
            p,
            loss: f64::NAN,
            f_src: f_src / n,
            f_tgt: f_tgt / n,
            len_mean: len_sum as f64 / n,
            skipped,
        };

        let count: usize = batch.iter().map(|(_, e)| e.loss_mask.iter().skip(1).filter(|&&m| m != 0).count()).sum();
        if count > 0 {
            let scale = 1.0 / count as f64;
            let params = &self.params;
            let seed = self.cfg.seed;
            let one = |(slot, ex): &(u64, crate::cot::TrainingExample)| -> Result<(f64, Vec<f64>)> {
                let mut g = vec![0.0; params.len()];
                let mut dr = rng::stream(seed, &[purpose::DROPOUT, step, *slot]);
                let l = accumulate_grads(params, &ex.tokens, &ex.loss_mask, scale, Some(&mut dr), &mut g)?;
                Ok((l.sum, g))
            };
            #[cfg(feature = "parallel")]
            let parts: Vec<Result<(f64, Vec<f64>)>> = {
                use rayon::prelude::*;
                batch.par_iter().map(one).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let parts: Vec<Result<(f64, Vec<f64>)>> = batch.iter().map(one).collect();

            // Reduce in slot order so the result does not depend on scheduling.
            let mut grads = vec![0.0; self.params.len()];
            let mut sum = 0.0;
            for part in parts {
                let (s, g) = part?;
                sum += s;
                for (a, b) in grads.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            adam_step(&self.cfg.adam, &mut self.adam, &mut self.params.data, &mut grads)?;
            log.loss = sum * scale;
        }
        self.step += 1;
        Ok(log)
    }
}

/// Trains from scratch for `train_cfg.total_steps`, reporting every step.
pub fn train(
    data: &[AlignedPair],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab: &JointVocab,
    bpe: &BpeModel,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Checkpoint> {
    let mut t = Trainer::new(data, model_cfg, train_cfg, vocab, bpe)?;
    while !t.is_done() {
        let log = t.step()?;
        on_step(&log);
    }
    Ok(t.checkpoint())
}
