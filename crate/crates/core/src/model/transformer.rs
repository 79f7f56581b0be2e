//! Forward pass with activation caching, and its exact backward pass.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, RngCore};

use super::ops::{
    col_sum_acc, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, log_sum_exp, matmul_acc, matmul_at_acc,
    matmul_bt_acc,
};
use super::Params;
use crate::error::{Error, Result};

/// Sum and count of the masked next-token negative log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Loss {
    pub sum: f64,
    pub count: usize,
}

impl Loss {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `len × vocab_size`.
    pub logits: Vec<f64>,
    /// Final LayerNorm output, `len × d_model`.
    pub last_hidden: Vec<f64>,
    pub len: usize,
}

struct LayerCache {
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    n1: Vec<f64>,
    qkv: Vec<f64>,
    /// `heads × T × T`, row-stochastic over `s ≤ t`.
    att: Vec<f64>,
    /// Inverted-dropout multipliers for `att`, when training.
    att_keep: Option<Vec<f64>>,
    y: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    n2: Vec<f64>,
    h1: Vec<f64>,
    /// GELU output after dropout; the input of the second MLP matmul.
    act: Vec<f64>,
    act_keep: Option<Vec<f64>>,
}

struct Cache {
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    nf: Vec<f64>,
    logits: Vec<f64>,
}

fn check_tokens(params: &Params, tokens: &[u32]) -> Result<()> {
    let cfg = &params.cfg;
    if tokens.is_empty() {
        return Err(Error::ShapeMismatch("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong { len: tokens.len(), max: cfg.max_seq_len });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::InvalidTokenId { id: bad, context: "token outside the model vocabulary" });
    }
    Ok(())
}

fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Runs the network. `dropout` enables train mode; logits are produced for
/// every position when `all_logits`, otherwise only for the last one.
fn run(params: &Params, tokens: &[u32], mut dropout: Option<&mut dyn RngCore>, all_logits: bool) -> Cache {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let w = &params.data;
    let (t_len, d, f, v) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (heads, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / libm::sqrt(dh as f64);
    let rate = if dropout.is_some() { cfg.dropout_rate } else { 0.0 };

    let mut x = vec![0.0; t_len * d];
    let tok = &w[lay.tok_emb.clone()];
    let pos = &w[lay.pos_emb.clone()];
    for (t, &id) in tokens.iter().enumerate() {
        let id = id as usize;
        for j in 0..d {
            x[t * d + j] = tok[id * d + j] + pos[t * d + j];
        }
    }

    let mut layers = Vec::with_capacity(lay.layers.len());
    for l in &lay.layers {
        let mut ln1_xhat = vec![0.0; t_len * d];
        let mut ln1_rstd = vec![0.0; t_len];
        let mut n1 = vec![0.0; t_len * d];
        layer_norm(&x, &w[l.ln1_g.clone()], &w[l.ln1_b.clone()], &mut n1, &mut ln1_xhat, &mut ln1_rstd);

        let mut qkv = vec![0.0; t_len * 3 * d];
        super::ops::add_rows(&mut qkv, &w[l.b_qkv.clone()]);
        matmul_acc(&n1, &w[l.w_qkv.clone()], &mut qkv, t_len, d, 3 * d);

        let mut att = vec![0.0; heads * t_len * t_len];
        for h in 0..heads {
            for t in 0..t_len {
                let q = &qkv[t * 3 * d + h * dh..t * 3 * d + (h + 1) * dh];
                let row = &mut att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                let mut max = f64::NEG_INFINITY;
                for s in 0..=t {
                    let k = &qkv[s * 3 * d + d + h * dh..s * 3 * d + d + (h + 1) * dh];
                    row[s] = dot(q, k) * scale;
                    max = max.max(row[s]);
                }
                let mut z = 0.0;
                for a in &mut row[..=t] {
                    *a = libm::exp(*a - max);
                    z += *a;
                }
                for a in &mut row[..=t] {
                    *a /= z;
                }
            }
        }
        let att_keep = match dropout.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(att.len(), rate, r)),
            _ => None,
        };

        let mut y = vec![0.0; t_len * d];
        for h in 0..heads {
            for t in 0..t_len {
                let base = (h * t_len + t) * t_len;
                let out = &mut y[t * d + h * dh..t * d + (h + 1) * dh];
                for s in 0..=t {
                    let a = match &att_keep {
                        Some(m) => att[base + s] * m[base + s],
                        None => att[base + s],
                    };
                    if a == 0.0 {
                        continue;
                    }
                    let vv = &qkv[s * 3 * d + 2 * d + h * dh..s * 3 * d + 2 * d + (h + 1) * dh];
                    for (o, &vj) in out.iter_mut().zip(vv) {
                        *o += a * vj;
                    }
                }
            }
        }

        let mut attn_out = vec![0.0; t_len * d];
        super::ops::add_rows(&mut attn_out, &w[l.b_o.clone()]);
        matmul_acc(&y, &w[l.w_o.clone()], &mut attn_out, t_len, d, d);
        for (xi, a) in x.iter_mut().zip(&attn_out) {
            *xi += a;
        }

        let mut ln2_xhat = vec![0.0; t_len * d];
        let mut ln2_rstd = vec![0.0; t_len];
        let mut n2 = vec![0.0; t_len * d];
        layer_norm(&x, &w[l.ln2_g.clone()], &w[l.ln2_b.clone()], &mut n2, &mut ln2_xhat, &mut ln2_rstd);

        let mut h1 = vec![0.0; t_len * f];
        super::ops::add_rows(&mut h1, &w[l.b_fc1.clone()]);
        matmul_acc(&n2, &w[l.w_fc1.clone()], &mut h1, t_len, d, f);
        let mut act: Vec<f64> = h1.iter().map(|&u| gelu(u)).collect();
        let act_keep = match dropout.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(act.len(), rate, r)),
            _ => None,
        };
        if let Some(m) = &act_keep {
            for (a, k) in act.iter_mut().zip(m) {
                *a *= k;
            }
        }

        let mut mlp_out = vec![0.0; t_len * d];
        super::ops::add_rows(&mut mlp_out, &w[l.b_fc2.clone()]);
        matmul_acc(&act, &w[l.w_fc2.clone()], &mut mlp_out, t_len, f, d);
        for (xi, m) in x.iter_mut().zip(&mlp_out) {
            *xi += m;
        }

        layers.push(LayerCache {
            ln1_xhat,
            ln1_rstd,
            n1,
            qkv,
            att,
            att_keep,
            y,
            ln2_xhat,
            ln2_rstd,
            n2,
            h1,
            act,
            act_keep,
        });
    }

    let mut lnf_xhat = vec![0.0; t_len * d];
    let mut lnf_rstd = vec![0.0; t_len];
    let mut nf = vec![0.0; t_len * d];
    layer_norm(&x, &w[lay.lnf_g.clone()], &w[lay.lnf_b.clone()], &mut nf, &mut lnf_xhat, &mut lnf_rstd);

    let rows = if all_logits { t_len } else { 1 };
    let hidden = &nf[(t_len - rows) * d..];
    let mut logits = vec![0.0; rows * v];
    super::ops::add_rows(&mut logits, &w[lay.b_out.clone()]);
    match &lay.w_out {
        Some(wo) => matmul_acc(hidden, &w[wo.clone()], &mut logits, rows, d, v),
        None => matmul_bt_acc(hidden, &w[lay.tok_emb.clone()], &mut logits, rows, d, v),
    }
    Cache { layers, lnf_xhat, lnf_rstd, nf, logits }
}

fn backward(params: &Params, tokens: &[u32], cache: &Cache, dlogits: &[f64], g: &mut [f64]) {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let w = &params.data;
    let (t_len, d, f, v) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (heads, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / libm::sqrt(dh as f64);

    let mut dnf = vec![0.0; t_len * d];
    col_sum_acc(dlogits, &mut g[lay.b_out.clone()]);
    match &lay.w_out {
        Some(wo) => {
            matmul_at_acc(&cache.nf, dlogits, &mut g[wo.clone()], t_len, d, v);
            matmul_bt_acc(dlogits, &w[wo.clone()], &mut dnf, t_len, v, d);
        }
        None => {
            matmul_acc(dlogits, &w[lay.tok_emb.clone()], &mut dnf, t_len, v, d);
            matmul_at_acc(dlogits, &cache.nf, &mut g[lay.tok_emb.clone()], t_len, v, d);
        }
    }

    let mut dx = vec![0.0; t_len * d];
    {
        let (dg, db) = two_mut(g, lay.lnf_g.clone(), lay.lnf_b.clone());
        layer_norm_backward(&dnf, &cache.lnf_xhat, &cache.lnf_rstd, &w[lay.lnf_g.clone()], &mut dx, dg, db);
    }

    for (l, c) in lay.layers.iter().zip(&cache.layers).rev() {
        // MLP branch.
        matmul_at_acc(&c.act, &dx, &mut g[l.w_fc2.clone()], t_len, f, d);
        col_sum_acc(&dx, &mut g[l.b_fc2.clone()]);
        let mut dact = vec![0.0; t_len * f];
        matmul_bt_acc(&dx, &w[l.w_fc2.clone()], &mut dact, t_len, d, f);
        for i in 0..dact.len() {
            let keep = c.act_keep.as_ref().map_or(1.0, |m| m[i]);
            dact[i] *= keep * gelu_grad(c.h1[i]);
        }
        let dh1 = dact;
        matmul_at_acc(&c.n2, &dh1, &mut g[l.w_fc1.clone()], t_len, d, f);
        col_sum_acc(&dh1, &mut g[l.b_fc1.clone()]);
        let mut dn2 = vec![0.0; t_len * d];
        matmul_bt_acc(&dh1, &w[l.w_fc1.clone()], &mut dn2, t_len, f, d);
        {
            let (dg, db) = two_mut(g, l.ln2_g.clone(), l.ln2_b.clone());
            layer_norm_backward(&dn2, &c.ln2_xhat, &c.ln2_rstd, &w[l.ln2_g.clone()], &mut dx, dg, db);
        }

        // Attention branch.
        matmul_at_acc(&c.y, &dx, &mut g[l.w_o.clone()], t_len, d, d);
        col_sum_acc(&dx, &mut g[l.b_o.clone()]);
        let mut dy = vec![0.0; t_len * d];
        matmul_bt_acc(&dx, &w[l.w_o.clone()], &mut dy, t_len, d, d);

        let mut dqkv = vec![0.0; t_len * 3 * d];
        let mut datt = vec![0.0; t_len];
        for h in 0..heads {
            for t in 0..t_len {
                let base = (h * t_len + t) * t_len;
                let dyt = &dy[t * d + h * dh..t * d + (h + 1) * dh];
                for s in 0..=t {
                    let keep = c.att_keep.as_ref().map_or(1.0, |m| m[base + s]);
                    let a = c.att[base + s] * keep;
                    let voff = s * 3 * d + 2 * d + h * dh;
                    if a != 0.0 {
                        for j in 0..dh {
                            dqkv[voff + j] += a * dyt[j];
                        }
                    }
                    datt[s] = dot(dyt, &c.qkv[voff..voff + dh]) * keep;
                }
                let mut weighted = 0.0;
                for s in 0..=t {
                    weighted += c.att[base + s] * datt[s];
                }
                let qoff = t * 3 * d + h * dh;
                for s in 0..=t {
                    let ds = c.att[base + s] * (datt[s] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = s * 3 * d + d + h * dh;
                    for j in 0..dh {
                        dqkv[qoff + j] += ds * c.qkv[koff + j];
                        dqkv[koff + j] += ds * c.qkv[qoff + j];
                    }
                }
            }
        }
        matmul_at_acc(&c.n1, &dqkv, &mut g[l.w_qkv.clone()], t_len, d, 3 * d);
        col_sum_acc(&dqkv, &mut g[l.b_qkv.clone()]);
        let mut dn1 = vec![0.0; t_len * d];
        matmul_bt_acc(&dqkv, &w[l.w_qkv.clone()], &mut dn1, t_len, 3 * d, d);
        {
            let (dg, db) = two_mut(g, l.ln1_g.clone(), l.ln1_b.clone());
            layer_norm_backward(&dn1, &c.ln1_xhat, &c.ln1_rstd, &w[l.ln1_g.clone()], &mut dx, dg, db);
        }
    }

    let tok_start = lay.tok_emb.start;
    let pos_start = lay.pos_emb.start;
    for (t, &id) in tokens.iter().enumerate() {
        for j in 0..d {
            g[tok_start + id as usize * d + j] += dx[t * d + j];
            g[pos_start + t * d + j] += dx[t * d + j];
        }
    }
}

/// Disjoint mutable views of two non-overlapping ranges, `a` before `b`.
fn two_mut(g: &mut [f64], a: core::ops::Range<usize>, b: core::ops::Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

/// Full forward pass. Dropout is active only when `train_mode` is set.
pub fn forward(params: &Params, tokens: &[u32], train_mode: bool, rng: &mut dyn RngCore) -> Result<ForwardOutput> {
    check_tokens(params, tokens)?;
    let cache = run(params, tokens, train_mode.then_some(rng), true);
    Ok(ForwardOutput { logits: cache.logits, last_hidden: cache.nf, len: tokens.len() })
}

/// Eval-mode logits of the final position only.
pub(crate) fn last_logits(params: &Params, tokens: &[u32]) -> Result<Vec<f64>> {
    check_tokens(params, tokens)?;
    Ok(run(params, tokens, None, false).logits)
}

fn check_mask(tokens: &[u32], mask: &[u8]) -> Result<usize> {
    if mask.len() != tokens.len() {
        return Err(Error::ShapeMismatch("loss mask and tokens differ in length".into()));
    }
    let count = mask.iter().skip(1).filter(|&&m| m != 0).count();
    if count == 0 {
        return Err(Error::EmptyLossMask);
    }
    Ok(count)
}

/// Masked next-token NLL (eval mode, no gradients).
pub fn masked_nll(params: &Params, tokens: &[u32], mask: &[u8]) -> Result<Loss> {
    check_tokens(params, tokens)?;
    let count = check_mask(tokens, mask)?;
    let cache = run(params, tokens, None, true);
    let v = params.cfg.vocab_size;
    let mut sum = 0.0;
    for t in 1..tokens.len() {
        if mask[t] != 0 {
            let row = &cache.logits[(t - 1) * v..t * v];
            sum += log_sum_exp(row) - row[tokens[t] as usize];
        }
    }
    Ok(Loss { sum, count })
}

/// Adds `scale · ∇(Σ masked NLL)` into `grads` and returns the loss.
pub(crate) fn accumulate_grads(
    params: &Params,
    tokens: &[u32],
    mask: &[u8],
    scale: f64,
    dropout: Option<&mut dyn RngCore>,
    grads: &mut [f64],
) -> Result<Loss> {
    check_tokens(params, tokens)?;
    let count = check_mask(tokens, mask)?;
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch("gradient buffer size".into()));
    }
    let cache = run(params, tokens, dropout, true);
    let v = params.cfg.vocab_size;
    let mut dlogits = vec![0.0; tokens.len() * v];
    let mut sum = 0.0;
    for t in 1..tokens.len() {
        if mask[t] == 0 {
            continue;
        }
        let row = &cache.logits[(t - 1) * v..t * v];
        let lse = log_sum_exp(row);
        let target = tokens[t] as usize;
        sum += lse - row[target];
        let drow = &mut dlogits[(t - 1) * v..t * v];
        for (dv, &z) in drow.iter_mut().zip(row) {
            *dv = scale * libm::exp(z - lse);
        }
        drow[target] -= scale;
    }
    backward(params, tokens, &cache, &dlogits, grads);
    Ok(Loss { sum, count })
}

/// Mean masked NLL and its exact gradient (eval mode).
pub fn loss_and_grads(params: &Params, tokens: &[u32], mask: &[u8]) -> Result<(Loss, Vec<f64>)> {
    let count = check_mask(tokens, mask)?;
    let mut grads = vec![0.0; params.len()];
    let loss = accumulate_grads(params, tokens, mask, 1.0 / count as f64, None, &mut grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;
    use crate::rng;
    use alloc::vec;

    fn tiny(seed: u64) -> Params {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 10,
            vocab_size: 11,
            dropout_rate: 0.2,
            seed,
            tie_embeddings: false,
            init_std: 0.4,
        };
        Params::init(&cfg).unwrap()
    }

    #[test]
    fn eval_forward_is_deterministic_and_normalized() {
        let p = tiny(1);
        let toks = [1, 4, 2, 9, 0];
        let a = forward(&p, &toks, false, &mut rng::stream(0, &[])).unwrap();
        let b = forward(&p, &toks, false, &mut rng::stream(99, &[])).unwrap();
        assert_eq!(a, b);
        for row in a.logits.chunks_exact(11) {
            let s: f64 = row.iter().map(|&z| libm::exp(z - log_sum_exp(row))).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn causal() {
        let p = tiny(2);
        let a = forward(&p, &[1, 2, 3, 4], false, &mut rng::stream(0, &[])).unwrap();
        let b = forward(&p, &[1, 2, 3, 7], false, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(a.logits[..3 * 11], b.logits[..3 * 11]);
        assert_ne!(a.logits[3 * 11..], b.logits[3 * 11..]);
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let p = tiny(3);
        let toks = [1, 2, 3, 4, 5];
        let e = forward(&p, &toks, false, &mut rng::stream(0, &[])).unwrap();
        let t1 = forward(&p, &toks, true, &mut rng::stream(0, &[])).unwrap();
        let t2 = forward(&p, &toks, true, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(e.logits, t1.logits);
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let cfg = ModelConfig { vocab_size: 37, d_model: 8, n_heads: 2, d_ff: 8, max_seq_len: 8, ..Default::default() };
        let p = Params::zeroed(&cfg).unwrap();
        let (loss, _) = loss_and_grads(&p, &[1, 2, 3, 4], &[0, 1, 1, 1]).unwrap();
        assert!((loss.mean() - libm::log(37.0)).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let p = tiny(4);
        assert_eq!(loss_and_grads(&p, &[1, 2], &[0, 0]).unwrap_err(), Error::EmptyLossMask);
        assert!(matches!(loss_and_grads(&p, &[1, 2, 3], &[0, 1]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(
            forward(&p, &[0; 11], false, &mut rng::stream(0, &[])),
            Err(Error::SequenceTooLong { len: 11, max: 10 })
        ));
        assert!(forward(&p, &[11], false, &mut rng::stream(0, &[])).is_err());
    }

    #[test]
    fn last_logits_match_full_forward() {
        let p = tiny(5);
        let toks = [3, 1, 4, 1, 5];
        let full = forward(&p, &toks, false, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(last_logits(&p, &toks).unwrap(), full.logits[4 * 11..]);
    }

    #[test]
    fn dropout_gradients_match_finite_differences() {
        let p0 = tiny(6);
        let toks = [2u32, 5, 1, 8, 3, 3];
        let mask = [0u8, 0, 1, 1, 1, 1];
        let v = 11;
        let loss = |p: &Params| {
            let out = forward(p, &toks, true, &mut rng::stream(42, &[])).unwrap();
            let mut s = 0.0;
            for t in 1..toks.len() {
                if mask[t] != 0 {
                    let row = &out.logits[(t - 1) * v..t * v];
                    s += log_sum_exp(row) - row[toks[t] as usize];
                }
            }
            s
        };
        let mut g = vec![0.0; p0.len()];
        accumulate_grads(&p0, &toks, &mask, 1.0, Some(&mut rng::stream(42, &[])), &mut g).unwrap();
        let mut p = p0.clone();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..p.len()).step_by(7) {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let up = loss(&p);
            p.data[i] = orig - h;
            let down = loss(&p);
            p.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "{worst:e}");
    }
}
