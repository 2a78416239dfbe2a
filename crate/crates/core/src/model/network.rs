//! Forward and backward passes of the per-pixel temporal-attention classifier.
//!
//! Per sequence of `L` slots with `C` standardized channels:
//!
//! ```text
//! e_t   = W_in x_t + b_in + PE(p_t)
//! z_t   = LayerNorm_in(e_t)
//! k_t   = W_k z_t + b_k                       split into H heads of width d_k
//! a_h   = softmax_t(q_h · k_t,h / sqrt(d_k))   invalid slots excluded
//! o_h   = W_v,h (Σ_t a_h,t z_t) + b_v,h        = Σ_t a_h,t (W_v,h z_t + b_v,h)
//! y     = LayerNorm_out(W_o dropout(o) + b_o)
//! logit = W_2 dropout(relu(W_1 y + b_1)) + b_2
//! ```
//!
//! The value projection is applied after pooling; since the attention
//! weights sum to one the result equals projecting every slot first.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PeVariant;
use super::params::{ClassifierParams, ParamBuffer, ParamId};
use super::pe::{scaled_position, sinusoid_into};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// One minibatch of pixel sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// B×L×C standardized reflectance; pad slots hold arbitrary values.
    pub sequences: Array3<f64>,
    /// B×L raw positions: slot index, day of year or cumulative GDD.
    pub positions: Array2<f64>,
    /// B×L, false at pad slots.
    pub valid: Array2<bool>,
    /// Class ids, one per sequence; may be empty for pure inference.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sequences.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, params: &ClassifierParams) -> Result<()> {
        let (b, l, c) = self.sequences.dim();
        if c != params.config.in_channels {
            return Err(Error::InvalidInput(format!(
                "batch has {c} channels, model expects {}",
                params.config.in_channels
            )));
        }
        if self.positions.dim() != (b, l) || self.valid.dim() != (b, l) {
            return Err(Error::InvalidInput(
                "batch position/valid shapes disagree with sequences".into(),
            ));
        }
        if !self.labels.is_empty() && self.labels.len() != b {
            return Err(Error::InvalidInput(format!(
                "{} labels for {b} sequences",
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= params.config.n_classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range")));
        }
        if let Some(i) = self
            .valid
            .outer_iter()
            .position(|row| !row.iter().any(|&v| v))
        {
            return Err(Error::InvalidInput(format!(
                "sequence {i} has no valid slot"
            )));
        }
        Ok(())
    }
}

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dropout {
    Off,
    On { rate: f64, seed: u64 },
}

struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

/// Intermediates kept for the backward pass.
pub struct Cache {
    x: Array2<f64>,
    valid: Array2<bool>,
    ln_in: NormCache,
    z: Array2<f64>,
    keys: Array2<f64>,
    attn: Array3<f64>,
    pooled: Array3<f64>,
    mask_attn: Option<Array2<f64>>,
    o_dropped: Array2<f64>,
    ln_out: NormCache,
    y: Array2<f64>,
    hidden_pre: Array2<f64>,
    mask_hidden: Option<Array2<f64>>,
    hidden: Array2<f64>,
}

impl Cache {
    /// B×H×L attention weights; zero at invalid slots.
    pub fn attention(&self) -> &Array3<f64> {
        &self.attn
    }
}

pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub cache: Cache,
}

fn layer_norm(x: &Array2<f64>, gain: &[f64], bias: &[f64]) -> (Array2<f64>, NormCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut rstd = Array1::zeros(n);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[[i, j]] = h;
            out[[i, j]] = h * gain[j] + bias[j];
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Returns dx and accumulates gain/bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Array2<f64> {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            let g = dy[[i, j]];
            let xh = cache.xhat[[i, j]];
            dgain[j] += g * xh;
            dbias[j] += g;
            dxhat[j] = g * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[[i, j]] = r * (dxhat[j] - mean_dxhat - cache.xhat[[i, j]] * mean_dxhat_xhat);
        }
    }
    dx
}

fn add_row_bias(m: &mut Array2<f64>, bias: &[f64]) {
    for mut row in m.rows_mut() {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, rate: f64, shape: (usize, usize)) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

/// Rows of positional encoding for every (sequence, slot), memoized per distinct position.
fn encode_positions(variant: PeVariant, positions: &Array2<f64>, d: usize) -> Option<Array2<f64>> {
    if variant == PeVariant::None {
        return None;
    }
    let (b, l) = positions.dim();
    let mut rows: HashMap<u64, usize> = HashMap::new();
    let mut table: Vec<f64> = Vec::new();
    let mut out = Array2::zeros((b * l, d));
    for (i, &p) in positions.iter().enumerate() {
        let key = p.to_bits();
        let idx = *rows.entry(key).or_insert_with(|| {
            let start = table.len();
            table.resize(start + d, 0.0);
            sinusoid_into(scaled_position(variant, p), &mut table[start..]);
            start / d
        });
        out.row_mut(i)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&table[idx * d..(idx + 1) * d]);
    }
    Some(out)
}

pub fn forward(
    params: &ClassifierParams,
    batch: &Batch,
    dropout: Dropout,
) -> Result<ForwardOutput> {
    batch.check(params)?;
    let cfg = &params.config;
    let w = &params.weights;
    let (b, l, c) = batch.sequences.dim();
    let (d, h, dk) = (cfg.d_model, cfg.n_head, cfg.d_head());
    let scale = 1.0 / (dk as f64).sqrt();

    let x = batch
        .sequences
        .view()
        .into_shape_with_order((b * l, c))
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .to_owned();

    // embedding + positions
    let mut e = x.dot(&w.mat(ParamId::InputWeight).t());
    add_row_bias(&mut e, w.slice(ParamId::InputBias));
    if let Some(pe) = encode_positions(cfg.pe_variant, &batch.positions, d) {
        e += &pe;
    }
    let (z, ln_in) = layer_norm(
        &e,
        w.slice(ParamId::InNormGain),
        w.slice(ParamId::InNormBias),
    );

    let mut keys = z.dot(&w.mat(ParamId::KeyWeight).t());
    add_row_bias(&mut keys, w.slice(ParamId::KeyBias));

    // master-query attention per head, then pooling of normalized inputs
    let query = w.mat(ParamId::Query);
    let mut attn = Array3::<f64>::zeros((b, h, l));
    let mut pooled = Array3::<f64>::zeros((b, h, d));
    for bi in 0..b {
        let valid = batch.valid.row(bi);
        for hi in 0..h {
            let q = query.row(hi);
            let mut max = f64::NEG_INFINITY;
            for t in 0..l {
                if valid[t] {
                    let k = keys.slice(s![bi * l + t, hi * dk..(hi + 1) * dk]);
                    let score = q.dot(&k) * scale;
                    attn[[bi, hi, t]] = score;
                    max = max.max(score);
                }
            }
            let mut sum = 0.0;
            for t in 0..l {
                if valid[t] {
                    let v = (attn[[bi, hi, t]] - max).exp();
                    attn[[bi, hi, t]] = v;
                    sum += v;
                }
            }
            let mut acc = pooled.slice_mut(s![bi, hi, ..]);
            for t in 0..l {
                if valid[t] {
                    let a = attn[[bi, hi, t]] / sum;
                    attn[[bi, hi, t]] = a;
                    acc.scaled_add(a, &z.row(bi * l + t));
                }
            }
        }
    }

    // value projection per head on the pooled vectors
    let wv = w.mat(ParamId::ValueWeight);
    let bv = w.slice(ParamId::ValueBias);
    let mut o = Array2::<f64>::zeros((b, d));
    for hi in 0..h {
        let ph = pooled.slice(s![.., hi, ..]);
        let wvh = wv.slice(s![hi * dk..(hi + 1) * dk, ..]);
        let oh = ph.dot(&wvh.t());
        o.slice_mut(s![.., hi * dk..(hi + 1) * dk]).assign(&oh);
    }
    add_row_bias(&mut o, bv);

    let mut rng = match dropout {
        Dropout::On { rate, seed } if rate > 0.0 => Some((rate, ChaCha8Rng::seed_from_u64(seed))),
        _ => None,
    };
    let mask_attn = rng.as_mut().map(|(rate, r)| dropout_mask(r, *rate, (b, d)));
    let o_dropped = match &mask_attn {
        Some(m) => &o * m,
        None => o,
    };

    let mut y_pre = o_dropped.dot(&w.mat(ParamId::OutWeight).t());
    add_row_bias(&mut y_pre, w.slice(ParamId::OutBias));
    let (y, ln_out) = layer_norm(
        &y_pre,
        w.slice(ParamId::OutNormGain),
        w.slice(ParamId::OutNormBias),
    );

    let mut hidden_pre = y.dot(&w.mat(ParamId::HiddenWeight).t());
    add_row_bias(&mut hidden_pre, w.slice(ParamId::HiddenBias));
    let relu = hidden_pre.mapv(|v| v.max(0.0));
    let mask_hidden = rng
        .as_mut()
        .map(|(rate, r)| dropout_mask(r, *rate, relu.dim()));
    let hidden = match &mask_hidden {
        Some(m) => &relu * m,
        None => relu,
    };

    let mut logits = hidden.dot(&w.mat(ParamId::ClassWeight).t());
    add_row_bias(&mut logits, w.slice(ParamId::ClassBias));

    Ok(ForwardOutput {
        logits,
        cache: Cache {
            x,
            valid: batch.valid.clone(),
            ln_in,
            z,
            keys,
            attn,
            pooled,
            mask_attn,
            o_dropped,
            ln_out,
            y,
            hidden_pre,
            mask_hidden,
            hidden,
        },
    })
}

/// Gradients of all parameters given `dlogits` (B×K).
pub fn backward(
    params: &ClassifierParams,
    cache: &Cache,
    dlogits: ArrayView2<'_, f64>,
) -> ParamBuffer {
    let cfg = &params.config;
    let w = &params.weights;
    let (b, h) = (dlogits.nrows(), cfg.n_head);
    let (d, dk) = (cfg.d_model, cfg.d_head());
    let l = cache.valid.ncols();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut g = ParamBuffer::zeros(cfg);

    // classifier head
    g.mat_mut(ParamId::ClassWeight)
        .assign(&dlogits.t().dot(&cache.hidden));
    g.vec_mut(ParamId::ClassBias)
        .assign(&dlogits.sum_axis(Axis(0)));
    let mut dhidden = dlogits.dot(&w.mat(ParamId::ClassWeight));
    if let Some(m) = &cache.mask_hidden {
        dhidden *= m;
    }
    Zip::from(&mut dhidden)
        .and(&cache.hidden_pre)
        .for_each(|dv, &pre| {
            if pre <= 0.0 {
                *dv = 0.0;
            }
        });
    g.mat_mut(ParamId::HiddenWeight)
        .assign(&dhidden.t().dot(&cache.y));
    g.vec_mut(ParamId::HiddenBias)
        .assign(&dhidden.sum_axis(Axis(0)));
    let dy = dhidden.dot(&w.mat(ParamId::HiddenWeight));

    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let dy_pre = layer_norm_backward(
        &dy,
        &cache.ln_out,
        w.slice(ParamId::OutNormGain),
        &mut dgain,
        &mut dbias,
    );
    g.slice_mut(ParamId::OutNormGain).copy_from_slice(&dgain);
    g.slice_mut(ParamId::OutNormBias).copy_from_slice(&dbias);

    g.mat_mut(ParamId::OutWeight)
        .assign(&dy_pre.t().dot(&cache.o_dropped));
    g.vec_mut(ParamId::OutBias)
        .assign(&dy_pre.sum_axis(Axis(0)));
    let mut d_o = dy_pre.dot(&w.mat(ParamId::OutWeight));
    if let Some(m) = &cache.mask_attn {
        d_o *= m;
    }
    g.vec_mut(ParamId::ValueBias).assign(&d_o.sum_axis(Axis(0)));

    // value projection and pooling
    let wv = w.mat(ParamId::ValueWeight);
    let mut dpooled = Array3::<f64>::zeros((b, h, d));
    {
        let mut dwv = g.mat_mut(ParamId::ValueWeight);
        for hi in 0..h {
            let doh = d_o.slice(s![.., hi * dk..(hi + 1) * dk]);
            let ph = cache.pooled.slice(s![.., hi, ..]);
            dwv.slice_mut(s![hi * dk..(hi + 1) * dk, ..])
                .assign(&doh.t().dot(&ph));
            let wvh = wv.slice(s![hi * dk..(hi + 1) * dk, ..]);
            dpooled.slice_mut(s![.., hi, ..]).assign(&doh.dot(&wvh));
        }
    }

    let query = w.mat(ParamId::Query);
    let mut dz = Array2::<f64>::zeros((b * l, d));
    let mut dkeys = Array2::<f64>::zeros((b * l, d));
    let mut dquery = Array2::<f64>::zeros((h, dk));
    let mut da = vec![0.0; l];
    for bi in 0..b {
        let valid = cache.valid.row(bi);
        for hi in 0..h {
            let dp = dpooled.slice(s![bi, hi, ..]);
            let mut weighted = 0.0;
            for t in 0..l {
                if valid[t] {
                    let a = cache.attn[[bi, hi, t]];
                    da[t] = dp.dot(&cache.z.row(bi * l + t));
                    weighted += a * da[t];
                    dz.row_mut(bi * l + t).scaled_add(a, &dp);
                }
            }
            let q = query.row(hi);
            for t in 0..l {
                if valid[t] {
                    let ds = cache.attn[[bi, hi, t]] * (da[t] - weighted) * scale;
                    let row = bi * l + t;
                    let k = cache.keys.slice(s![row, hi * dk..(hi + 1) * dk]);
                    dquery.row_mut(hi).scaled_add(ds, &k);
                    dkeys
                        .slice_mut(s![row, hi * dk..(hi + 1) * dk])
                        .scaled_add(ds, &q);
                }
            }
        }
    }
    g.mat_mut(ParamId::Query).assign(&dquery);
    g.mat_mut(ParamId::KeyWeight)
        .assign(&dkeys.t().dot(&cache.z));
    g.vec_mut(ParamId::KeyBias).assign(&dkeys.sum_axis(Axis(0)));
    dz += &dkeys.dot(&w.mat(ParamId::KeyWeight));

    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let de = layer_norm_backward(
        &dz,
        &cache.ln_in,
        w.slice(ParamId::InNormGain),
        &mut dgain,
        &mut dbias,
    );
    g.slice_mut(ParamId::InNormGain).copy_from_slice(&dgain);
    g.slice_mut(ParamId::InNormBias).copy_from_slice(&dbias);
    g.mat_mut(ParamId::InputWeight)
        .assign(&de.t().dot(&cache.x));
    g.vec_mut(ParamId::InputBias).assign(&de.sum_axis(Axis(0)));
    g
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean softmax cross-entropy and its exact gradient.
pub fn loss_and_grad(
    params: &ClassifierParams,
    batch: &Batch,
    dropout: Dropout,
) -> Result<(f64, ParamBuffer, Array2<f64>)> {
    if batch.labels.len() != batch.len() {
        return Err(Error::InvalidInput(
            "training batch needs one label per sequence".into(),
        ));
    }
    let out = forward(params, batch, dropout)?;
    let (loss, dlogits) = cross_entropy(&out.logits, &batch.labels)?;
    let grads = backward(params, &out.cache, dlogits.view());
    Ok((loss, grads, out.logits))
}

/// Mean cross-entropy over rows and `d loss / d logits`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = labels.len() as f64;
    let mut dlogits = softmax_rows(logits);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let li = lse - row[y];
        if !li.is_finite() {
            return Err(Error::NonFiniteLoss { sequence: i });
        }
        total += li;
        dlogits[[i, y]] -= 1.0;
    }
    dlogits /= n;
    Ok((total / n, dlogits))
}

pub fn predict_proba(params: &ClassifierParams, batch: &Batch) -> Result<Array2<f64>> {
    Ok(softmax_rows(&forward(params, batch, Dropout::Off)?.logits))
}

pub(crate) fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean of `n_members` softmax outputs with dropout active at `rate`.
pub fn mc_dropout_predict(
    params: &ClassifierParams,
    batch: &Batch,
    n_members: usize,
    rate: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if n_members == 0 {
        return Err(Error::InvalidInput(
            "MC dropout needs at least one member".into(),
        ));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    // incremental mean: identical members reproduce the single pass exactly
    let mut mean: Option<Array2<f64>> = None;
    for m in 0..n_members {
        let dropout = Dropout::On {
            rate,
            seed: mix_seed(seed, m as u64),
        };
        let p = softmax_rows(&forward(params, batch, dropout)?.logits);
        match &mut mean {
            Some(acc) => {
                let k = (m + 1) as f64;
                Zip::from(acc).and(&p).for_each(|a, &v| *a += (v - *a) / k);
            }
            None => mean = Some(p),
        }
    }
    Ok(mean.expect("at least one member"))
}

/// `1 - max(p)` per row.
pub fn uncertainty(probs: ArrayView2<'_, f64>) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|r| 1.0 - r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}
