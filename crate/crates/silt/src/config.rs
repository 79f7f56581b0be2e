//! Serializable mirrors of the core configuration types.

use serde::{Deserialize, Serialize};
use silt_core::cot::CotMode;
use silt_core::interleave::{InterleaveMode, Schedule, Side};
use silt_core::model::{AdamConfig, ModelConfig, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub tie_embeddings: bool,
    pub init_std: f64,
}

impl From<&ModelConfig> for ModelSpec {
    fn from(c: &ModelConfig) -> Self {
        Self {
            n_layers: c.n_layers,
            d_model: c.d_model,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            max_seq_len: c.max_seq_len,
            vocab_size: c.vocab_size,
            dropout_rate: c.dropout_rate,
            seed: c.seed,
            tie_embeddings: c.tie_embeddings,
            init_std: c.init_std,
        }
    }
}

impl From<&ModelSpec> for ModelConfig {
    fn from(s: &ModelSpec) -> Self {
        Self {
            n_layers: s.n_layers,
            d_model: s.d_model,
            n_heads: s.n_heads,
            d_ff: s.d_ff,
            max_seq_len: s.max_seq_len,
            vocab_size: s.vocab_size,
            dropout_rate: s.dropout_rate,
            seed: s.seed,
            tie_embeddings: s.tie_embeddings,
            init_std: s.init_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Scheduled { p0: f64, delta: f64, interval: u64 },
    Constant { p: f64 },
    None,
}

impl From<Schedule> for ScheduleSpec {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::Scheduled { p0, delta, interval } => ScheduleSpec::Scheduled { p0, delta, interval },
            Schedule::Constant(p) => ScheduleSpec::Constant { p },
            Schedule::None => ScheduleSpec::None,
        }
    }
}

impl From<ScheduleSpec> for Schedule {
    fn from(s: ScheduleSpec) -> Self {
        match s {
            ScheduleSpec::Scheduled { p0, delta, interval } => Schedule::Scheduled { p0, delta, interval },
            ScheduleSpec::Constant { p } => Schedule::Constant(p),
            ScheduleSpec::None => Schedule::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip_norm: Option<f64>,
    pub batch_size: usize,
    pub total_steps: u64,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    pub lambda: f64,
    pub mode: String,
    pub side: String,
    pub cot: String,
}

impl From<&TrainConfig> for TrainSpec {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.adam.lr,
            beta1: c.adam.beta1,
            beta2: c.adam.beta2,
            eps: c.adam.eps,
            grad_clip_norm: c.adam.grad_clip,
            batch_size: c.batch_size,
            total_steps: c.total_steps,
            schedule: c.schedule.into(),
            seed: c.seed,
            lambda: c.lambda,
            mode: c.interleave_mode.name().into(),
            side: c.side.name().into(),
            cot: c.cot_mode.name().into(),
        }
    }
}

impl TryFrom<&TrainSpec> for TrainConfig {
    type Error = CliError;

    fn try_from(s: &TrainSpec) -> Result<Self> {
        Ok(Self {
            adam: AdamConfig {
                lr: s.learning_rate,
                beta1: s.beta1,
                beta2: s.beta2,
                eps: s.eps,
                grad_clip: s.grad_clip_norm,
            },
            batch_size: s.batch_size,
            total_steps: s.total_steps,
            schedule: s.schedule.into(),
            seed: s.seed,
            lambda: s.lambda,
            interleave_mode: parse_mode(&s.mode)?,
            side: parse_side(&s.side)?,
            cot_mode: parse_cot(&s.cot)?,
        })
    }
}

pub fn parse_mode(s: &str) -> Result<InterleaveMode> {
    InterleaveMode::from_name(s).ok_or_else(|| CliError::Usage(format!("unknown interleave mode {s:?}")))
}

pub fn parse_side(s: &str) -> Result<Side> {
    Side::from_name(s).ok_or_else(|| CliError::Usage(format!("unknown side {s:?}")))
}

pub fn parse_cot(s: &str) -> Result<CotMode> {
    CotMode::from_name(s).ok_or_else(|| CliError::Usage(format!("unknown sequence layout {s:?}")))
}
