//! Named parameter store and the primitive layers, written with
//! differentiable tensor ops only so every path backpropagates.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::kv_cache::KvCache;
use rand_distr::{Distribution, Normal};

use formula_distill_core::seed::{derive_seed, rng_from};

use crate::config::Result;

const LN_EPS: f64 = 1e-5;

/// Parameters in registration order; names are unique.
#[derive(Debug, Clone)]
pub struct Params {
    vars: Vec<(String, Var)>,
    index: HashMap<String, usize>,
    device: Device,
    dtype: DType,
}

pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

impl Params {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self { vars: Vec::new(), index: HashMap::new(), device, dtype }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Register `name`; values come from a generator keyed by (seed, name).
    pub fn add(&mut self, seed: u64, name: &str, shape: &[usize], init: Init) -> Result<()> {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let mut rng = rng_from(derive_seed(seed, name, 0));
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        self.index.insert(name.to_string(), self.vars.len());
        self.vars.push((name.to_string(), Var::from_tensor(&t)?));
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i].1.as_tensor()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.vars[i].1)
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Register a `d_in × d_out` weight and a bias under `prefix`.
    pub fn add_linear(&mut self, seed: u64, prefix: &str, d_in: usize, d_out: usize, gain: f64) -> Result<()> {
        self.add(seed, &format!("{prefix}.w"), &[d_in, d_out], Init::Normal(gain / (d_in as f64).sqrt()))?;
        self.add(seed, &format!("{prefix}.b"), &[d_out], Init::Zeros)
    }

    pub fn add_layer_norm(&mut self, seed: u64, prefix: &str, d: usize) -> Result<()> {
        self.add(seed, &format!("{prefix}.g"), &[d], Init::Ones)?;
        self.add(seed, &format!("{prefix}.b"), &[d], Init::Zeros)
    }

    pub fn add_attention(&mut self, seed: u64, prefix: &str, d: usize) -> Result<()> {
        for p in ["q", "k", "v", "o"] {
            self.add_linear(seed, &format!("{prefix}.{p}"), d, d, 1.0)?;
        }
        Ok(())
    }

    pub fn linear(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(self.get(&format!("{prefix}.w")))?.broadcast_add(self.get(&format!("{prefix}.b")))?)
    }

    pub fn layer_norm(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(xn.broadcast_mul(self.get(&format!("{prefix}.g")))?.broadcast_add(self.get(&format!("{prefix}.b")))?)
    }
}

/// `(B, L, d)` to `(B, h, L, d/h)`.
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, l, d) = x.dims3()?;
    Ok(x.reshape((b, l, heads, d / heads))?.transpose(1, 2)?.contiguous()?)
}

/// `(B, h, L, dh)` to `(B, L, h·dh)`.
pub fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, l, dh) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, l, h * dh))?)
}

/// Scaled dot-product attention over head-split tensors; `mask` is additive `(Lq, Lk)`.
pub fn attend(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let dh = q.dim(D::Minus1)?;
    let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
    let scores = match mask {
        Some(m) => scores.broadcast_add(m)?,
        None => scores,
    };
    let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
    Ok(att.matmul(v)?)
}

/// Key and value projections of `kv`, head-split.
pub fn project_kv(p: &Params, prefix: &str, kv: &Tensor, heads: usize) -> Result<(Tensor, Tensor)> {
    let k = split_heads(&p.linear(&format!("{prefix}.k"), kv)?, heads)?;
    let v = split_heads(&p.linear(&format!("{prefix}.v"), kv)?, heads)?;
    Ok((k, v))
}

/// Multi-head attention of `q_in` over `kv_in`.
pub fn mha(p: &Params, prefix: &str, q_in: &Tensor, kv_in: &Tensor, heads: usize, mask: Option<&Tensor>) -> Result<Tensor> {
    let q = split_heads(&p.linear(&format!("{prefix}.q"), q_in)?, heads)?;
    let (k, v) = project_kv(p, prefix, kv_in, heads)?;
    p.linear(&format!("{prefix}.o"), &merge_heads(&attend(&q, &k, &v, mask)?)?)
}

/// Self-attention of one new position against a growing key/value cache.
pub fn mha_cached(p: &Params, prefix: &str, x: &Tensor, heads: usize, cache: &mut KvCache) -> Result<Tensor> {
    let q = split_heads(&p.linear(&format!("{prefix}.q"), x)?, heads)?;
    let (k, v) = project_kv(p, prefix, x, heads)?;
    let (k, v) = cache.append(&k, &v)?;
    p.linear(&format!("{prefix}.o"), &merge_heads(&attend(&q, &k, &v, None)?)?)
}

/// Additive causal mask: 0 on and below the diagonal, -inf above.
pub fn causal_mask(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = (0..len * len).map(|i| if i % len > i / len { f32::NEG_INFINITY } else { 0.0 }).collect();
    Ok(Tensor::from_vec(data, (len, len), device)?.to_dtype(dtype)?)
}

/// Broadcast a learned `(n, d)` matrix over a batch of `b`.
pub fn batch_expand(t: &Tensor, b: usize) -> Result<Tensor> {
    let (n, d) = t.dims2()?;
    Ok(t.unsqueeze(0)?.broadcast_as((b, n, d))?.contiguous()?)
}
