use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

use super::config::ModelConfig;
use super::Scalar;
use crate::error::{Error, Result};
use crate::rng::Rng;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    /// `dim x 3*dim`, columns laid out as [q | k | v].
    pub w_qkv: Array2<T>,
    pub b_qkv: Array1<T>,
    pub w_attn_out: Array2<T>,
    pub b_attn_out: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub w_fc: Array2<T>,
    pub b_fc: Array1<T>,
    pub w_proj: Array2<T>,
    pub b_proj: Array1<T>,
}

/// All trainable tensors. Matrices are stored input-major so a linear layer
/// is `x.dot(w) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tok_emb: Array2<T>,
    pub pos_emb: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub lnf_gain: Array1<T>,
    pub lnf_bias: Array1<T>,
    pub w_head: Array2<T>,
    pub b_head: Array1<T>,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(
            ln1_gain, ln1_bias, w_qkv, b_qkv, w_attn_out, b_attn_out, ln2_gain, ln2_bias, w_fc,
            b_fc, w_proj, b_proj
        )
    };
}

impl<T: Scalar> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let layer = || LayerParams {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_attn_out: Array2::zeros((d, d)),
            b_attn_out: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            w_fc: Array2::zeros((d, cfg.mlp_dim())),
            b_fc: Array1::zeros(cfg.mlp_dim()),
            w_proj: Array2::zeros((cfg.mlp_dim(), d)),
            b_proj: Array1::zeros(d),
        };
        Params {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_seq, d)),
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
            lnf_gain: Array1::zeros(d),
            lnf_bias: Array1::zeros(d),
            w_head: Array2::zeros((d, cfg.vocab_size)),
            b_head: Array1::zeros(cfg.vocab_size),
        }
    }

    /// Named views in a fixed order: embeddings, layers, final norm, head.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! push {
                ($($f:ident),*) => {
                    $(out.push((format!("layers.{i}.{}", stringify!($f)), l.$f.view().into_dyn()));)*
                };
            }
            layer_fields!(push);
        }
        out.push(("lnf_gain".to_string(), self.lnf_gain.view().into_dyn()));
        out.push(("lnf_bias".to_string(), self.lnf_bias.view().into_dyn()));
        out.push(("w_head".to_string(), self.w_head.view().into_dyn()));
        out.push(("b_head".to_string(), self.b_head.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            macro_rules! push {
                ($($f:ident),*) => {
                    $(out.push((format!("layers.{i}.{}", stringify!($f)), l.$f.view_mut().into_dyn()));)*
                };
            }
            layer_fields!(push);
        }
        out.push(("lnf_gain".to_string(), self.lnf_gain.view_mut().into_dyn()));
        out.push(("lnf_bias".to_string(), self.lnf_bias.view_mut().into_dyn()));
        out.push(("w_head".to_string(), self.w_head.view_mut().into_dyn()));
        out.push(("b_head".to_string(), self.b_head.view_mut().into_dyn()));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2)).collect::<Vec<_>>())
            .sum()
    }

    pub fn scale(&mut self, factor: T) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }

    /// Converts element type, e.g. an `f32` model to `f64` for checking.
    pub fn cast<U: Scalar>(&self, cfg: &ModelConfig) -> Params<U> {
        let mut out = Params::<U>::zeros(cfg);
        for ((_, src), (_, mut dst)) in self.tensors().into_iter().zip(out.tensors_mut()) {
            dst.zip_mut_with(&src, |d, &s| *d = U::lit(s.to_f64().unwrap_or(f64::NAN)));
        }
        out
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = Params::<T>::zeros(cfg);
        let want = reference.tensors();
        let have = self.tensors();
        if want.len() != have.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((name, w), (_, h)) in want.iter().zip(have.iter()) {
            if w.shape() != h.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, found {:?}",
                    w.shape(),
                    h.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameters and progress counters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Epochs completed so far.
    pub epoch: usize,
    pub optimizer: Option<super::optim::Adam<T>>,
}

/// Normal(0, 0.02) weights, residual output projections scaled by
/// `1/sqrt(2 * n_layers)`, unit norm gains, zero biases.
pub fn init<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelState<T>> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let mut p = Params::<T>::zeros(cfg);
    let residual_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();

    let mut fill = |a: &mut Array2<T>, std: f64| {
        a.mapv_inplace(|_| T::lit(rng.normal() * std));
    };
    fill(&mut p.tok_emb, INIT_STD);
    fill(&mut p.pos_emb, INIT_STD);
    for l in &mut p.layers {
        fill(&mut l.w_qkv, INIT_STD);
        fill(&mut l.w_attn_out, residual_std);
        fill(&mut l.w_fc, INIT_STD);
        fill(&mut l.w_proj, residual_std);
        l.ln1_gain.fill(T::one());
        l.ln2_gain.fill(T::one());
    }
    fill(&mut p.w_head, INIT_STD);
    p.lnf_gain.fill(T::one());

    Ok(ModelState {
        config: cfg.clone(),
        params: p,
        step: 0,
        epoch: 0,
        optimizer: None,
    })
}
