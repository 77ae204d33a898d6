//! Pre-norm causal transformer: forward pass with cache, and its backward pass.
//!
//! ```text
//! x₀[t] = Σ w·E[token] + PE[t]
//! x₁    = x  + drop(Attn(LN₁(x)))
//! x₂    = x₁ + drop(FFN(LN₂(x₁)))          (per layer)
//! logits = LN_f(x_L)[p] · W_out + b_out    (prediction position p)
//! ```
//! Attention at query `t` sees keys `s ≤ t` that are not PAD.

use rand::Rng;

use super::input::ModelInput;
use super::ops::*;
use super::params::{head_idx, layer_idx, Params, TOK_EMB};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    /// Residual stream entering the layer.
    pub x_in: Vec<T>,
    ln1: LnCache<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    /// Attention probabilities `[head][query][key]`, zero where masked.
    pub probs: Vec<T>,
    ctx: Vec<T>,
    /// Residual update from the attention branch (after dropout).
    pub attn_update: Vec<T>,
    drop1: Option<Vec<T>>,
    /// Residual stream between the two sublayers.
    pub x_mid: Vec<T>,
    ln2: LnCache<T>,
    b: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
    /// Residual update from the feed-forward branch (after dropout).
    pub ffn_update: Vec<T>,
    drop2: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub n: usize,
    pub layers: Vec<LayerCache<T>>,
    /// Final residual stream `[n × d]`.
    pub x_final: Vec<T>,
    lnf: LnCache<T>,
    z: Vec<T>,
    pub prediction_position: usize,
}

fn embed<T: Scalar>(params: &Params<T>, cfg: &ModelConfig, input: &ModelInput<T>) -> Result<Vec<T>> {
    let d = cfg.d_model;
    let n = input.len();
    let emb = &params.tensors[TOK_EMB].data;
    let pe: Vec<T> = sinusoidal_table(n, d);
    let mut x = pe;
    for t in 0..n {
        let row = &mut x[t * d..(t + 1) * d];
        for &(id, w) in input.position(t) {
            let id = id as usize;
            if id >= cfg.vocab_size {
                return Err(Error::invalid(format!("token {id} outside vocabulary of {}", cfg.vocab_size)));
            }
            for (o, &e) in row.iter_mut().zip(&emb[id * d..(id + 1) * d]) {
                *o += w * e;
            }
        }
    }
    Ok(x)
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect()
}

/// Runs the model over `input` and returns pace-bin logits at `prediction_position`.
///
/// Dropout is active only when `rng` is given.
pub fn forward<T: Scalar, R: Rng>(
    params: &Params<T>,
    cfg: &ModelConfig,
    input: &ModelInput<T>,
    prediction_position: usize,
    mut rng: Option<&mut R>,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    let n = input.len();
    if n == 0 || n > cfg.window_capacity {
        return Err(Error::invalid(format!(
            "sequence length {n} outside 1..={}",
            cfg.window_capacity
        )));
    }
    if prediction_position >= n {
        return Err(Error::invalid(format!("prediction position {prediction_position} beyond length {n}")));
    }
    let (d, h, dh, f) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut x = embed(params, cfg, input)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);

    for l in 0..cfg.n_layers {
        let li = layer_idx(l);
        let p = |i: usize| params.tensors[i].data.as_slice();
        let x_in = x.clone();

        let mut a = vec![T::zero(); n * d];
        let ln1 = layer_norm(&x, d, p(li.ln1_g), p(li.ln1_b), &mut a);
        let mut qkv = vec![T::zero(); n * 3 * d];
        matmul(&a, n, d, p(li.w_qkv), 3 * d, &mut qkv);
        add_bias(&mut qkv, 3 * d, p(li.b_qkv));

        let mut probs = vec![T::zero(); h * n * n];
        let mut ctx = vec![T::zero(); n * d];
        for head in 0..h {
            let qo = head * dh;
            let ko = d + head * dh;
            let vo = 2 * d + head * dh;
            for t in 0..n {
                let q = &qkv[t * 3 * d + qo..t * 3 * d + qo + dh];
                let row = &mut probs[(head * n + t) * n..(head * n + t + 1) * n];
                let mut max = T::neg_infinity();
                for s in 0..=t {
                    if input.pad[s] {
                        continue;
                    }
                    let score = dot(q, &qkv[s * 3 * d + ko..s * 3 * d + ko + dh]) * scale;
                    row[s] = score;
                    max = max.max(score);
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let mut total = T::zero();
                for s in 0..=t {
                    if input.pad[s] {
                        continue;
                    }
                    let e = (row[s] - max).exp();
                    row[s] = e;
                    total += e;
                }
                let c = &mut ctx[t * d + qo..t * d + qo + dh];
                for s in 0..=t {
                    if input.pad[s] {
                        continue;
                    }
                    row[s] /= total;
                    let pw = row[s];
                    for (cv, &vv) in c.iter_mut().zip(&qkv[s * 3 * d + vo..s * 3 * d + vo + dh]) {
                        *cv += pw * vv;
                    }
                }
            }
        }

        let mut attn_update = vec![T::zero(); n * d];
        matmul(&ctx, n, d, p(li.w_o), d, &mut attn_update);
        add_bias(&mut attn_update, d, p(li.b_o));
        let drop1 = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let m = dropout_mask(n * d, cfg.dropout, r);
                for (u, &mv) in attn_update.iter_mut().zip(&m) {
                    *u *= mv;
                }
                Some(m)
            }
            _ => None,
        };
        for (xv, &u) in x.iter_mut().zip(&attn_update) {
            *xv += u;
        }
        let x_mid = x.clone();

        let mut b = vec![T::zero(); n * d];
        let ln2 = layer_norm(&x, d, p(li.ln2_g), p(li.ln2_b), &mut b);
        let mut h_pre = vec![T::zero(); n * f];
        matmul(&b, n, d, p(li.w_ff1), f, &mut h_pre);
        add_bias(&mut h_pre, f, p(li.b_ff1));
        let h_act: Vec<T> = h_pre.iter().map(|&v| gelu(v)).collect();
        let mut ffn_update = vec![T::zero(); n * d];
        matmul(&h_act, n, f, p(li.w_ff2), d, &mut ffn_update);
        add_bias(&mut ffn_update, d, p(li.b_ff2));
        let drop2 = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                let m = dropout_mask(n * d, cfg.dropout, r);
                for (u, &mv) in ffn_update.iter_mut().zip(&m) {
                    *u *= mv;
                }
                Some(m)
            }
            _ => None,
        };
        for (xv, &u) in x.iter_mut().zip(&ffn_update) {
            *xv += u;
        }

        layers.push(LayerCache {
            x_in,
            ln1,
            a,
            qkv,
            probs,
            ctx,
            attn_update,
            drop1,
            x_mid,
            ln2,
            b,
            h_pre,
            h_act,
            ffn_update,
            drop2,
        });
    }

    let hi = head_idx(cfg.n_layers);
    let row = &x[prediction_position * d..(prediction_position + 1) * d];
    let mut z = vec![T::zero(); d];
    let lnf = layer_norm(row, d, &params.tensors[hi.lnf_g].data, &params.tensors[hi.lnf_b].data, &mut z);
    let mut logits = vec![T::zero(); cfg.pace_bins];
    matmul(&z, 1, d, &params.tensors[hi.w_out].data, cfg.pace_bins, &mut logits);
    add_bias(&mut logits, cfg.pace_bins, &params.tensors[hi.b_out].data);

    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logit at bin {bad}")));
    }
    Ok((logits, ForwardCache { n, layers, x_final: x, lnf, z, prediction_position }))
}

/// Logits at every position, from a cached forward pass (used for diagnostics and tests).
pub fn all_position_logits<T: Scalar>(params: &Params<T>, cfg: &ModelConfig, cache: &ForwardCache<T>) -> Vec<Vec<T>> {
    let d = cfg.d_model;
    let hi = head_idx(cfg.n_layers);
    (0..cache.n)
        .map(|t| {
            let mut z = vec![T::zero(); d];
            layer_norm(
                &cache.x_final[t * d..(t + 1) * d],
                d,
                &params.tensors[hi.lnf_g].data,
                &params.tensors[hi.lnf_b].data,
                &mut z,
            );
            let mut logits = vec![T::zero(); cfg.pace_bins];
            matmul(&z, 1, d, &params.tensors[hi.w_out].data, cfg.pace_bins, &mut logits);
            add_bias(&mut logits, cfg.pace_bins, &params.tensors[hi.b_out].data);
            logits
        })
        .collect()
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the prediction-position logits is `dlogits`.
pub fn backward<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    input: &ModelInput<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
    grads: &mut Params<T>,
) -> Result<()> {
    if dlogits.len() != cfg.pace_bins {
        return Err(Error::invalid("logit gradient has wrong length"));
    }
    let n = cache.n;
    let (d, h, dh, f, k) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff, cfg.pace_bins);
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let pp = cache.prediction_position;

    let hi = head_idx(cfg.n_layers);
    matmul_tn_acc(&cache.z, 1, d, dlogits, k, &mut grads.tensors[hi.w_out].data);
    sum_rows_acc(dlogits, k, &mut grads.tensors[hi.b_out].data);
    let mut dz = vec![T::zero(); d];
    matmul_nt(dlogits, 1, k, &params.tensors[hi.w_out].data, d, &mut dz);

    let mut dx = vec![T::zero(); n * d];
    {
        let (g_lo, g_hi) = grads.tensors.split_at_mut(hi.lnf_b);
        layer_norm_backward(
            &dz,
            d,
            &cache.lnf,
            &params.tensors[hi.lnf_g].data,
            &mut g_lo[hi.lnf_g].data,
            &mut g_hi[0].data,
            &mut dx[pp * d..(pp + 1) * d],
        );
    }

    for l in (0..cfg.n_layers).rev() {
        let li = layer_idx(l);
        let lc = &cache.layers[l];
        let p = |i: usize| params.tensors[i].data.as_slice();

        // feed-forward branch
        let mut df = dx.clone();
        if let Some(m) = &lc.drop2 {
            for (g, &mv) in df.iter_mut().zip(m) {
                *g *= mv;
            }
        }
        matmul_tn_acc(&lc.h_act, n, f, &df, d, &mut grads.tensors[li.w_ff2].data);
        sum_rows_acc(&df, d, &mut grads.tensors[li.b_ff2].data);
        let mut dh_act = vec![T::zero(); n * f];
        matmul_nt(&df, n, d, p(li.w_ff2), f, &mut dh_act);
        for (g, &pre) in dh_act.iter_mut().zip(&lc.h_pre) {
            *g *= gelu_grad(pre);
        }
        matmul_tn_acc(&lc.b, n, d, &dh_act, f, &mut grads.tensors[li.w_ff1].data);
        sum_rows_acc(&dh_act, f, &mut grads.tensors[li.b_ff1].data);
        let mut db = vec![T::zero(); n * d];
        matmul_nt(&dh_act, n, f, p(li.w_ff1), d, &mut db);
        {
            let (g_lo, g_hi) = grads.tensors.split_at_mut(li.ln2_b);
            layer_norm_backward(&db, d, &lc.ln2, p(li.ln2_g), &mut g_lo[li.ln2_g].data, &mut g_hi[0].data, &mut dx);
        }

        // attention branch
        let mut dattn = dx.clone();
        if let Some(m) = &lc.drop1 {
            for (g, &mv) in dattn.iter_mut().zip(m) {
                *g *= mv;
            }
        }
        matmul_tn_acc(&lc.ctx, n, d, &dattn, d, &mut grads.tensors[li.w_o].data);
        sum_rows_acc(&dattn, d, &mut grads.tensors[li.b_o].data);
        let mut dctx = vec![T::zero(); n * d];
        matmul_nt(&dattn, n, d, p(li.w_o), d, &mut dctx);

        let mut dqkv = vec![T::zero(); n * 3 * d];
        let mut dp = vec![T::zero(); n];
        for head in 0..h {
            let qo = head * dh;
            let ko = d + head * dh;
            let vo = 2 * d + head * dh;
            for t in 0..n {
                let dc = &dctx[t * d + qo..t * d + qo + dh];
                if dc.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                let row = &lc.probs[(head * n + t) * n..(head * n + t + 1) * n];
                let mut weighted = T::zero();
                for s in 0..=t {
                    if row[s] == T::zero() {
                        dp[s] = T::zero();
                        continue;
                    }
                    let v = &lc.qkv[s * 3 * d + vo..s * 3 * d + vo + dh];
                    dp[s] = dot(dc, v);
                    weighted += row[s] * dp[s];
                    for (g, &c) in dqkv[s * 3 * d + vo..s * 3 * d + vo + dh].iter_mut().zip(dc) {
                        *g += row[s] * c;
                    }
                }
                for s in 0..=t {
                    if row[s] == T::zero() {
                        continue;
                    }
                    let ds = row[s] * (dp[s] - weighted) * scale;
                    for j in 0..dh {
                        let kv = lc.qkv[s * 3 * d + ko + j];
                        let qv = lc.qkv[t * 3 * d + qo + j];
                        dqkv[t * 3 * d + qo + j] += ds * kv;
                        dqkv[s * 3 * d + ko + j] += ds * qv;
                    }
                }
            }
        }
        matmul_tn_acc(&lc.a, n, d, &dqkv, 3 * d, &mut grads.tensors[li.w_qkv].data);
        sum_rows_acc(&dqkv, 3 * d, &mut grads.tensors[li.b_qkv].data);
        let mut da = vec![T::zero(); n * d];
        matmul_nt(&dqkv, n, 3 * d, p(li.w_qkv), d, &mut da);
        {
            let (g_lo, g_hi) = grads.tensors.split_at_mut(li.ln1_b);
            layer_norm_backward(&da, d, &lc.ln1, p(li.ln1_g), &mut g_lo[li.ln1_g].data, &mut g_hi[0].data, &mut dx);
        }
    }

    let emb = &mut grads.tensors[TOK_EMB].data;
    for t in 0..n {
        let g = &dx[t * d..(t + 1) * d];
        for &(id, w) in input.position(t) {
            let id = id as usize;
            for (e, &gv) in emb[id * d..(id + 1) * d].iter_mut().zip(g) {
                *e += w * gv;
            }
        }
    }
    Ok(())
}
