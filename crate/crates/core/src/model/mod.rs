//! A small decoder-only transformer over the joint vocabulary, with
//! hand-derived backpropagation, Adam and the interleaved training loop.
//!
//! Architecture: learned token and position embeddings, pre-norm blocks
//! (LayerNorm → causal multi-head attention → residual, LayerNorm → GELU MLP →
//! residual), a final LayerNorm whose output is the "last hidden state", and
//! an output projection (optionally tied to the token embedding).
//!
//! All parameters live in one flat `f64` buffer; [`Layout`] names the slices.

mod adam;
mod decode;
mod ops;
mod train;
mod transformer;

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{invalid, Result};
use crate::rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use decode::{greedy_decode, Decoded};
pub use train::{assemble_at_step, train, Checkpoint, StepLog, TrainConfig, Trainer};
pub use transformer::{forward, loss_and_grads, masked_nll, ForwardOutput, Loss};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub tie_embeddings: bool,
    /// Standard deviation of the weight initialisation.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 512,
            vocab_size: 512 + 64 + crate::vocab::Special::ALL.len(),
            dropout_rate: 0.2,
            seed: 0,
            tie_embeddings: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(invalid("layer, width, head and MLP sizes must be at least 1"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(invalid("d_model must be divisible by n_heads"));
        }
        if self.max_seq_len == 0 || self.vocab_size == 0 {
            return Err(invalid("max_seq_len and vocab_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid("dropout_rate must lie in [0, 1)"));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return Err(invalid("init_std must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ff, self.max_seq_len);
        let per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let out = if self.tie_embeddings { v } else { d * v + v };
        v * d + l * d + self.n_layers * per_layer + 2 * d + out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc1: Range<usize>,
    pub b_fc1: Range<usize>,
    pub w_fc2: Range<usize>,
    pub b_fc2: Range<usize>,
}

/// Name, shape and slice of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub w_out: Option<Range<usize>>,
    pub b_out: Range<usize>,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

struct Alloc {
    next: usize,
    tensors: Vec<TensorInfo>,
}

impl Alloc {
    fn take(&mut self, name: String, shape: &[usize]) -> Range<usize> {
        let n: usize = shape.iter().product();
        let r = self.next..self.next + n;
        self.next += n;
        self.tensors.push(TensorInfo { name, shape: shape.to_vec(), range: r.clone() });
        r
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut a = Alloc { next: 0, tensors: Vec::new() };
        let tok_emb = a.take("tok_emb".into(), &[v, d]);
        let pos_emb = a.take("pos_emb".into(), &[cfg.max_seq_len, d]);
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let mut t = |n: &str, s: &[usize]| a.take(alloc::format!("layers.{i}.{n}"), s);
                LayerLayout {
                    ln1_g: t("ln1.weight", &[d]),
                    ln1_b: t("ln1.bias", &[d]),
                    w_qkv: t("attn.w_qkv", &[d, 3 * d]),
                    b_qkv: t("attn.b_qkv", &[3 * d]),
                    w_o: t("attn.w_o", &[d, d]),
                    b_o: t("attn.b_o", &[d]),
                    ln2_g: t("ln2.weight", &[d]),
                    ln2_b: t("ln2.bias", &[d]),
                    w_fc1: t("mlp.w_fc1", &[d, f]),
                    b_fc1: t("mlp.b_fc1", &[f]),
                    w_fc2: t("mlp.w_fc2", &[f, d]),
                    b_fc2: t("mlp.b_fc2", &[d]),
                }
            })
            .collect();
        let lnf_g = a.take("ln_f.weight".into(), &[d]);
        let lnf_b = a.take("ln_f.bias".into(), &[d]);
        let w_out = (!cfg.tie_embeddings).then(|| a.take("out.weight".into(), &[d, v]));
        let b_out = a.take("out.bias".into(), &[v]);
        Layout { tok_emb, pos_emb, layers, lnf_g, lnf_b, w_out, b_out, total: a.next, tensors: a.tensors }
    }
}

/// Model parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl Params {
    /// Scaled-normal weights (residual output projections further scaled by
    /// `1/sqrt(2·n_layers)`), zero biases, unit LayerNorm gains.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut data = alloc::vec![0.0; layout.total];
        let mut r = rng::stream(cfg.seed, &[0x1D17]);
        let resid_std = cfg.init_std / libm::sqrt(2.0 * cfg.n_layers as f64);
        let mut fill = |range: &Range<usize>, std: f64, data: &mut [f64]| {
            for x in &mut data[range.clone()] {
                *x = std * rng::standard_normal(&mut r);
            }
        };
        fill(&layout.tok_emb, cfg.init_std, &mut data);
        fill(&layout.pos_emb, cfg.init_std, &mut data);
        for l in &layout.layers {
            fill(&l.w_qkv, cfg.init_std, &mut data);
            fill(&l.w_o, resid_std, &mut data);
            fill(&l.w_fc1, cfg.init_std, &mut data);
            fill(&l.w_fc2, resid_std, &mut data);
            data[l.ln1_g.clone()].fill(1.0);
            data[l.ln2_g.clone()].fill(1.0);
        }
        data[layout.lnf_g.clone()].fill(1.0);
        if let Some(w) = &layout.w_out {
            fill(w, cfg.init_std, &mut data);
        }
        Ok(Self { cfg: cfg.clone(), layout, data })
    }

    /// All-zero weights except unit LayerNorm gains; every logit is 0.
    pub fn zeroed(cfg: &ModelConfig) -> Result<Self> {
        let mut p = Self::init(&ModelConfig { init_std: 0.0, ..cfg.clone() })?;
        p.cfg.init_std = cfg.init_std;
        Ok(p)
    }

    pub fn from_data(cfg: &ModelConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        if data.len() != layout.total {
            return Err(crate::Error::ShapeMismatch(alloc::format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self { cfg: cfg.clone(), layout, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensors.iter().find(|t| t.name == name).map(|t| &self.data[t.range.clone()])
    }
}
