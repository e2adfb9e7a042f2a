use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};

use super::params::{LayerParams, ModelState, Params};
use super::Scalar;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::textseg::{TokenId, Vocab};

const LN_EPS: f64 = 1e-5;

/// Right-padded batch of token sequences, flattened row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<TokenId>,
    pub batch: usize,
    pub seq: usize,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_sequences<S: AsRef<[TokenId]>>(seqs: &[S]) -> Batch {
        let seq = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = vec![Vocab::PAD; seqs.len() * seq];
        for (b, s) in seqs.iter().enumerate() {
            let s = s.as_ref();
            ids[b * seq..b * seq + s.len()].copy_from_slice(s);
        }
        Batch {
            ids,
            batch: seqs.len(),
            seq,
            lengths: seqs.iter().map(|s| s.as_ref().len()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }

    /// Next-token targets and their mask. Position `t` of sequence `b`
    /// predicts token `t + 1`; the last real position and all padding are
    /// masked out.
    pub fn targets(&self) -> (Vec<TokenId>, Vec<bool>) {
        let mut targets = vec![Vocab::PAD; self.rows()];
        let mut mask = vec![false; self.rows()];
        for b in 0..self.batch {
            for t in 0..self.lengths[b].saturating_sub(1) {
                targets[b * self.seq + t] = self.ids[b * self.seq + t + 1];
                mask[b * self.seq + t] = true;
            }
        }
        (targets, mask)
    }
}

struct NormCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

struct LayerCache<T> {
    norm1: NormCache<T>,
    h1: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    attn: Array2<T>,
    drop_attn: Option<Array2<T>>,
    norm2: NormCache<T>,
    h2: Array2<T>,
    fc_pre: Array2<T>,
    fc_act: Array2<T>,
    drop_mlp: Option<Array2<T>>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    ids: Vec<TokenId>,
    batch: usize,
    seq: usize,
    drop_emb: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    normf: NormCache<T>,
    hf: Array2<T>,
}

fn layer_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, bias: &Array1<T>) -> (Array2<T>, NormCache<T>) {
    let (n, d) = x.dim();
    let inv_d = T::lit(1.0 / d as f64);
    let eps = T::lit(LN_EPS);
    let mut xhat = Array2::zeros((n, d));
    let mut rstd = Array1::zeros(n);
    for (r, row) in x.outer_iter().enumerate() {
        let mean = row.sum() * inv_d;
        let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        Zip::from(xhat.row_mut(r))
            .and(row)
            .for_each(|o, &v| *o = (v - mean) * rs);
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_back<T: Scalar>(
    dy: &Array2<T>,
    cache: &NormCache<T>,
    gain: &Array1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    let d = dy.ncols();
    let inv_d = T::lit(1.0 / d as f64);
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.dim());
    for r in 0..dy.nrows() {
        let gr = dxhat.row(r);
        let xr = cache.xhat.row(r);
        let mean_g = gr.sum() * inv_d;
        let mean_gx = gr.dot(&xr) * inv_d;
        let rs = cache.rstd[r];
        Zip::from(dx.row_mut(r))
            .and(gr)
            .and(xr)
            .for_each(|o, &g, &xh| *o = rs * (g - mean_g - xh * mean_gx));
    }
    dx
}

fn linear<T: Scalar>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
fn linear_back<T: Scalar>(
    dy: &Array2<T>,
    x: &Array2<T>,
    w: &Array2<T>,
    dw: &mut Array2<T>,
    db: &mut Array1<T>,
) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), dy, T::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * a * x * x)
}

fn dropout_mask<T: Scalar>(shape: (usize, usize), p: f64, rng: &mut Rng) -> Array2<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.next_f64() < p { T::zero() } else { keep })
}

fn head_cols(part: usize, dim: usize, head: usize, hd: usize) -> std::ops::Range<usize> {
    let start = part * dim + head * hd;
    start..start + hd
}

/// Causal softmax attention for one sequence and head; returns (probs, out).
fn attend<T: Scalar>(q: ArrayView2<T>, k: ArrayView2<T>, v: ArrayView2<T>, scale: T) -> (Array2<T>, Array2<T>) {
    let t_len = q.nrows();
    let mut p = q.dot(&k.t());
    for t in 0..t_len {
        let mut row = p.row_mut(t);
        let mut max = T::neg_infinity();
        for j in 0..=t {
            row[j] *= scale;
            max = max.max(row[j]);
        }
        let mut sum = T::zero();
        for j in 0..=t {
            let e = (row[j] - max).exp();
            row[j] = e;
            sum += e;
        }
        for j in 0..=t {
            row[j] = row[j] / sum;
        }
        for j in t + 1..t_len {
            row[j] = T::zero();
        }
    }
    let out = p.dot(&v);
    (p, out)
}

fn check_batch<T: Scalar>(state: &ModelState<T>, batch: &Batch) -> Result<()> {
    let cfg = &state.config;
    if batch.seq > cfg.max_seq {
        return Err(Error::SequenceTooLong {
            len: batch.seq,
            max_seq: cfg.max_seq,
        });
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {bad} out of range for vocab_size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Forward pass over `batch.rows()` positions. With `dropout_rng`, dropout
/// is applied at the configured rate; without it the pass is deterministic.
/// Returns logits of shape `rows x vocab`.
pub fn forward_train<T: Scalar>(
    state: &ModelState<T>,
    batch: &Batch,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<(Array2<T>, ForwardCache<T>)> {
    check_batch(state, batch)?;
    let cfg = &state.config;
    let p = &state.params;
    let (bsz, seq) = (batch.batch, batch.seq);
    let rows = batch.rows();
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let rate = cfg.dropout;
    let mut drop = |shape: (usize, usize)| -> Option<Array2<T>> {
        match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Some(dropout_mask(shape, rate, rng)),
            _ => None,
        }
    };

    let mut x = Array2::<T>::zeros((rows, d));
    for (r, mut row) in x.outer_iter_mut().enumerate() {
        let tok = p.tok_emb.row(batch.ids[r] as usize);
        let pos = p.pos_emb.row(r % seq.max(1));
        Zip::from(&mut row).and(tok).and(pos).for_each(|o, &a, &b| *o = a + b);
    }
    let drop_emb = drop((rows, d));
    if let Some(m) = &drop_emb {
        x *= m;
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &p.layers {
        let (h1, norm1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias);
        let qkv = linear(&h1, &lp.w_qkv, &lp.b_qkv);
        let mut attn = Array2::<T>::zeros((rows, d));
        let mut probs = Vec::with_capacity(bsz * cfg.n_heads);
        for b in 0..bsz {
            let rs = b * seq..(b + 1) * seq;
            for h in 0..cfg.n_heads {
                let q = qkv.slice(s![rs.clone(), head_cols(0, d, h, hd)]);
                let k = qkv.slice(s![rs.clone(), head_cols(1, d, h, hd)]);
                let v = qkv.slice(s![rs.clone(), head_cols(2, d, h, hd)]);
                let (pr, out) = attend(q, k, v, scale);
                attn.slice_mut(s![rs.clone(), head_cols(0, d, h, hd)]).assign(&out);
                probs.push(pr);
            }
        }
        let mut a = linear(&attn, &lp.w_attn_out, &lp.b_attn_out);
        let drop_attn = drop((rows, d));
        if let Some(m) = &drop_attn {
            a *= m;
        }
        x += &a;

        let (h2, norm2) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias);
        let fc_pre = linear(&h2, &lp.w_fc, &lp.b_fc);
        let fc_act = fc_pre.mapv(gelu);
        let mut m = linear(&fc_act, &lp.w_proj, &lp.b_proj);
        let drop_mlp = drop((rows, d));
        if let Some(mask) = &drop_mlp {
            m *= mask;
        }
        x += &m;

        layers.push(LayerCache {
            norm1,
            h1,
            qkv,
            probs,
            attn,
            drop_attn,
            norm2,
            h2,
            fc_pre,
            fc_act,
            drop_mlp,
        });
    }

    let (hf, normf) = layer_norm(&x, &p.lnf_gain, &p.lnf_bias);
    let logits = linear(&hf, &p.w_head, &p.b_head);
    Ok((
        logits,
        ForwardCache {
            ids: batch.ids.clone(),
            batch: bsz,
            seq,
            drop_emb,
            layers,
            normf,
            hf,
        },
    ))
}

/// Deterministic forward pass; logits shaped `batch x seq x vocab`.
pub fn forward<T: Scalar>(state: &ModelState<T>, batch: &Batch) -> Result<Array3<T>> {
    let (logits, _) = forward_train(state, batch, None)?;
    let v = state.config.vocab_size;
    logits
        .into_shape_with_order((batch.batch, batch.seq, v))
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Mean next-token negative log-likelihood over unmasked rows, and its
/// gradient with respect to the logits.
pub fn lm_loss_and_grad<T: Scalar>(
    logits: &Array2<T>,
    targets: &[TokenId],
    mask: &[bool],
) -> Result<(f64, Array2<T>)> {
    let (rows, vocab) = logits.dim();
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Shape(format!(
            "logits have {rows} rows, targets {}, mask {}",
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::NothingToAverage);
    }
    let inv = T::lit(1.0 / count as f64);
    let mut grad = Array2::<T>::zeros((rows, vocab));
    let mut total = 0.0f64;
    for r in (0..rows).filter(|&r| mask[r]) {
        let target = targets[r] as usize;
        if target >= vocab {
            return Err(Error::Shape(format!("target {target} >= vocab {vocab}")));
        }
        let row = logits.row(r);
        let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum = row.fold(T::zero(), |s, &x| s + (x - max).exp());
        let log_z = max + sum.ln();
        total += (log_z - row[target]).to_f64().unwrap_or(f64::NAN);
        let mut g = grad.row_mut(r);
        Zip::from(&mut g).and(row).for_each(|o, &x| *o = (x - log_z).exp() * inv);
        g[target] -= inv;
    }
    Ok((total / count as f64, grad))
}

pub fn lm_loss<T: Scalar>(logits: &Array2<T>, targets: &[TokenId], mask: &[bool]) -> Result<f64> {
    lm_loss_and_grad(logits, targets, mask).map(|(l, _)| l)
}

/// Gradients of the loss with respect to every parameter, given the
/// gradient at the logits.
pub fn backward<T: Scalar>(state: &ModelState<T>, cache: &ForwardCache<T>, dlogits: &Array2<T>) -> Params<T> {
    let cfg = &state.config;
    let p = &state.params;
    let mut g = Params::<T>::zeros(cfg);
    let (bsz, seq) = (cache.batch, cache.seq);
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let scale = T::lit(1.0 / (hd as f64).sqrt());

    let dhf = linear_back(dlogits, &cache.hf, &p.w_head, &mut g.w_head, &mut g.b_head);
    let mut dx = layer_norm_back(&dhf, &cache.normf, &p.lnf_gain, &mut g.lnf_gain, &mut g.lnf_bias);

    for (li, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let lg: &mut LayerParams<T> = &mut g.layers[li];

        let mut dm = dx.clone();
        if let Some(mask) = &lc.drop_mlp {
            dm *= mask;
        }
        let mut dact = linear_back(&dm, &lc.fc_act, &lp.w_proj, &mut lg.w_proj, &mut lg.b_proj);
        Zip::from(&mut dact)
            .and(&lc.fc_pre)
            .for_each(|o, &x| *o *= gelu_grad(x));
        let dh2 = linear_back(&dact, &lc.h2, &lp.w_fc, &mut lg.w_fc, &mut lg.b_fc);
        dx += &layer_norm_back(&dh2, &lc.norm2, &lp.ln2_gain, &mut lg.ln2_gain, &mut lg.ln2_bias);

        let mut da = dx.clone();
        if let Some(mask) = &lc.drop_attn {
            da *= mask;
        }
        let dattn = linear_back(&da, &lc.attn, &lp.w_attn_out, &mut lg.w_attn_out, &mut lg.b_attn_out);
        let mut dqkv = Array2::<T>::zeros(lc.qkv.dim());
        for b in 0..bsz {
            let rs = b * seq..(b + 1) * seq;
            for h in 0..cfg.n_heads {
                let pr = &lc.probs[b * cfg.n_heads + h];
                let q = lc.qkv.slice(s![rs.clone(), head_cols(0, d, h, hd)]);
                let k = lc.qkv.slice(s![rs.clone(), head_cols(1, d, h, hd)]);
                let v = lc.qkv.slice(s![rs.clone(), head_cols(2, d, h, hd)]);
                let dout = dattn.slice(s![rs.clone(), head_cols(0, d, h, hd)]);

                let mut ds = dout.dot(&v.t());
                let dv = pr.t().dot(&dout);
                for t in 0..seq {
                    let pr_row = pr.row(t);
                    let mut ds_row = ds.row_mut(t);
                    let inner = pr_row.dot(&ds_row);
                    Zip::from(&mut ds_row)
                        .and(pr_row)
                        .for_each(|o, &pv| *o = pv * (*o - inner) * scale);
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![rs.clone(), head_cols(0, d, h, hd)]).assign(&dq);
                dqkv.slice_mut(s![rs.clone(), head_cols(1, d, h, hd)]).assign(&dk);
                dqkv.slice_mut(s![rs.clone(), head_cols(2, d, h, hd)]).assign(&dv);
            }
        }
        let dh1 = linear_back(&dqkv, &lc.h1, &lp.w_qkv, &mut lg.w_qkv, &mut lg.b_qkv);
        dx += &layer_norm_back(&dh1, &lc.norm1, &lp.ln1_gain, &mut lg.ln1_gain, &mut lg.ln1_bias);
    }

    if let Some(mask) = &cache.drop_emb {
        dx *= mask;
    }
    for (r, row) in dx.outer_iter().enumerate() {
        let mut te = g.tok_emb.row_mut(cache.ids[r] as usize);
        te += &row;
        let mut pe = g.pos_emb.row_mut(r % seq.max(1));
        pe += &row;
    }
    g
}
