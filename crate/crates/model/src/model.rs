//! Set encoder over observations and causal decoder over history tokens.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::kv_cache::KvCache;
use rand::{Rng, RngCore};

use formula_distill_core::datagen::PointSet;

use crate::config::{ModelConfig, ModelError, Result};
use crate::nn::{attend, batch_expand, causal_mask, merge_heads, mha, mha_cached, project_kv, split_heads, Init, Params};

/// Output weights start small so the initial prediction is close to uniform.
const OUT_GAIN: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct SeqModel {
    pub config: ModelConfig,
    pub params: Params,
    pub seed: u64,
}

/// Signed log compression keeps wide-ranged observations on a common scale.
pub fn squash(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

impl SeqModel {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut p = Params::new(Device::Cpu, dtype);
        p.add_linear(seed, "enc.embed", config.input_dim(), d, 1.0)?;
        for i in 0..config.n_enc_blocks {
            p.add(seed, &format!("enc.isab{i}.inducing"), &[config.n_inducing, d], Init::Normal(1.0))?;
            for m in ["mab0", "mab1"] {
                add_mab(&mut p, seed, &format!("enc.isab{i}.{m}"), d)?;
            }
        }
        p.add(seed, "enc.pma.seeds", &[config.n_seed_vectors, d], Init::Normal(1.0))?;
        p.add_linear(seed, "enc.pma.ff_in", d, d, 1.0)?;
        add_mab(&mut p, seed, "enc.pma.mab", d)?;

        p.add(seed, "dec.tok_emb", &[config.vocab_size, d], Init::Normal(1.0))?;
        p.add(seed, "dec.pos_emb", &[config.max_seq_len, d], Init::Normal(0.1))?;
        for i in 0..config.n_dec_layers {
            let pre = format!("dec.layer{i}");
            p.add_layer_norm(seed, &format!("{pre}.ln1"), d)?;
            p.add_attention(seed, &format!("{pre}.self"), d)?;
            p.add_layer_norm(seed, &format!("{pre}.ln2"), d)?;
            p.add_attention(seed, &format!("{pre}.cross"), d)?;
            p.add_layer_norm(seed, &format!("{pre}.ln3"), d)?;
            p.add_linear(seed, &format!("{pre}.ff1"), d, config.d_ff, 1.0)?;
            p.add_linear(seed, &format!("{pre}.ff2"), config.d_ff, d, 1.0 / (2.0 * config.n_dec_layers as f64).sqrt())?;
        }
        p.add_layer_norm(seed, "dec.ln_f", d)?;
        p.add_linear(seed, "dec.out", d, config.vocab_size, OUT_GAIN)?;
        Ok(Self { config, params: p, seed })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// `(B, N, max_vars + 1)` encoder input; missing variables are zero columns.
    pub fn points_tensor(&self, sets: &[&PointSet]) -> Result<Tensor> {
        let Some(first) = sets.first() else {
            return Err(ModelError::Config("empty point batch".into()));
        };
        let n = first.len();
        let din = self.config.input_dim();
        let mut data = Vec::with_capacity(sets.len() * n * din);
        for ps in sets {
            if ps.len() != n {
                return Err(ModelError::Config(format!("point counts differ in a batch ({} vs {n})", ps.len())));
            }
            if ps.is_empty() {
                return Err(ModelError::Config("point set is empty".into()));
            }
            if ps.dims() > self.config.max_vars {
                return Err(ModelError::Dims { got: ps.dims(), max: self.config.max_vars });
            }
            for (i, row) in ps.x.rows().into_iter().enumerate() {
                for j in 0..self.config.max_vars {
                    data.push(if j < ps.dims() { squash(row[j]) } else { 0.0 });
                }
                data.push(squash(ps.y[i]));
            }
        }
        Ok(Tensor::from_vec(data, (sets.len(), n, din), self.device())?.to_dtype(self.dtype())?)
    }

    /// Latent `(B, n_seed_vectors, d_model)` for a batch of encoder inputs.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let p = &self.params;
        let heads = self.config.n_heads;
        let b = x.dim(0)?;
        let mut h = p.linear("enc.embed", x)?;
        for i in 0..self.config.n_enc_blocks {
            let ind = batch_expand(p.get(&format!("enc.isab{i}.inducing")), b)?;
            let summary = mab(p, &format!("enc.isab{i}.mab0"), &ind, &h, heads)?;
            h = mab(p, &format!("enc.isab{i}.mab1"), &h, &summary, heads)?;
        }
        let seeds = batch_expand(p.get("enc.pma.seeds"), b)?;
        let hx = p.linear("enc.pma.ff_in", &h)?.relu()?;
        mab(p, "enc.pma.mab", &seeds, &hx, heads)
    }

    pub fn encode_points(&self, points: &PointSet) -> Result<Tensor> {
        self.encode(&self.points_tensor(&[points])?)
    }

    fn embed(&self, ids: &Tensor, offset: usize) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        if offset + l > self.config.max_seq_len {
            return Err(ModelError::Length { len: offset + l, max: self.config.max_seq_len });
        }
        let tok = self.params.get("dec.tok_emb").index_select(&ids.flatten_all()?, 0)?.reshape((b, l, self.config.d_model))?;
        let pos = self.params.get("dec.pos_emb").narrow(0, offset, l)?;
        Ok(tok.broadcast_add(&pos)?)
    }

    /// Logits `(B, L, vocab)` for input ids `(B, L)` conditioned on `z`.
    pub fn decode(&self, ids: &Tensor, z: &Tensor, mut dropout: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let p = &self.params;
        let heads = self.config.n_heads;
        let (_, l) = ids.dims2()?;
        let mask = causal_mask(l, self.dtype(), self.device())?;
        let mut x = self.embed(ids, 0)?;
        for i in 0..self.config.n_dec_layers {
            let pre = format!("dec.layer{i}");
            let h = p.layer_norm(&format!("{pre}.ln1"), &x)?;
            let a = mha(p, &format!("{pre}.self"), &h, &h, heads, Some(&mask))?;
            x = (x + self.dropout(a, &mut dropout)?)?;
            let h = p.layer_norm(&format!("{pre}.ln2"), &x)?;
            let c = mha(p, &format!("{pre}.cross"), &h, z, heads, None)?;
            x = (x + self.dropout(c, &mut dropout)?)?;
            let f = self.feed_forward(&pre, &x)?;
            x = (x + self.dropout(f, &mut dropout)?)?;
        }
        p.linear("dec.out", &p.layer_norm("dec.ln_f", &x)?)
    }

    fn feed_forward(&self, pre: &str, x: &Tensor) -> Result<Tensor> {
        let p = &self.params;
        let h = p.layer_norm(&format!("{pre}.ln3"), x)?;
        p.linear(&format!("{pre}.ff2"), &p.linear(&format!("{pre}.ff1"), &h)?.gelu()?)
    }

    fn dropout(&self, x: Tensor, rng: &mut Option<&mut dyn RngCore>) -> Result<Tensor> {
        let rate = self.config.dropout;
        let Some(rng) = rng.as_mut() else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f32> = (0..x.elem_count()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep as f32 }).collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }

    /// Mean next-token cross-entropy over positions whose target is not padding.
    pub fn loss(&self, batch: &Batch, dropout: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let z = self.encode(&batch.points)?;
        let logits = self.decode(&batch.inputs, &z, dropout)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let picked = (logp * &batch.target_weights)?.sum_all()?;
        Ok((picked.neg()? / batch.n_targets as f64)?)
    }

    /// Start incremental decoding for one point set.
    pub fn start(&self, z: &Tensor) -> Result<DecoderState> {
        let p = &self.params;
        let heads = self.config.n_heads;
        let mut cross = Vec::new();
        let mut caches = Vec::new();
        for i in 0..self.config.n_dec_layers {
            cross.push(project_kv(p, &format!("dec.layer{i}.cross"), z, heads)?);
            caches.push(KvCache::new(2, self.config.max_seq_len));
        }
        Ok(DecoderState { caches, cross, pos: 0 })
    }

    /// Feed one token; returns the next-token logits.
    pub fn step(&self, state: &mut DecoderState, id: u32) -> Result<Vec<f32>> {
        let p = &self.params;
        let heads = self.config.n_heads;
        let ids = Tensor::new(&[[id]], self.device())?;
        let mut x = self.embed(&ids, state.pos)?;
        for i in 0..self.config.n_dec_layers {
            let pre = format!("dec.layer{i}");
            let h = p.layer_norm(&format!("{pre}.ln1"), &x)?;
            x = (x + mha_cached(p, &format!("{pre}.self"), &h, heads, &mut state.caches[i])?)?;
            let h = p.layer_norm(&format!("{pre}.ln2"), &x)?;
            let q = split_heads(&p.linear(&format!("{pre}.cross.q"), &h)?, heads)?;
            let (k, v) = &state.cross[i];
            let c = p.linear(&format!("{pre}.cross.o"), &merge_heads(&attend(&q, k, v, None)?)?)?;
            x = (x + c)?;
            x = (&x + self.feed_forward(&pre, &x)?)?;
        }
        state.pos += 1;
        let logits = p.linear("dec.out", &p.layer_norm("dec.ln_f", &x)?)?;
        Ok(logits.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
    }
}

fn add_mab(p: &mut Params, seed: u64, prefix: &str, d: usize) -> Result<()> {
    p.add_attention(seed, &format!("{prefix}.att"), d)?;
    p.add_layer_norm(seed, &format!("{prefix}.ln1"), d)?;
    p.add_linear(seed, &format!("{prefix}.ff"), d, d, 1.0)?;
    p.add_layer_norm(seed, &format!("{prefix}.ln2"), d)
}

/// Multihead attention block: H = LN(Q + Att(Q, K)), out = LN(H + relu(W H + b)).
fn mab(p: &Params, prefix: &str, q: &Tensor, k: &Tensor, heads: usize) -> Result<Tensor> {
    let h = p.layer_norm(&format!("{prefix}.ln1"), &(q + mha(p, &format!("{prefix}.att"), q, k, heads, None)?)?)?;
    let f = p.linear(&format!("{prefix}.ff"), &h)?.relu()?;
    p.layer_norm(&format!("{prefix}.ln2"), &(h + f)?)
}

/// Per-layer caches for autoregressive decoding of a single sequence.
#[derive(Debug, Clone)]
pub struct DecoderState {
    caches: Vec<KvCache>,
    cross: Vec<(Tensor, Tensor)>,
    pos: usize,
}

impl DecoderState {
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Training batch: every sequence shares its point-set size.
#[derive(Debug, Clone)]
pub struct Batch {
    pub points: Tensor,
    pub inputs: Tensor,
    /// One-hot target rows; all-zero at padded positions.
    pub target_weights: Tensor,
    pub n_targets: usize,
}

impl Batch {
    /// `sequences` are token ids without `<bos>`; inputs are shifted right by one.
    pub fn new(model: &SeqModel, points: &[&PointSet], sequences: &[Vec<u32>], pad: u32, bos: u32) -> Result<Self> {
        let v = model.config.vocab_size;
        let l = sequences.iter().map(Vec::len).max().unwrap_or(0);
        if l == 0 {
            return Err(ModelError::Config("empty sequences".into()));
        }
        if l > model.config.max_seq_len {
            return Err(ModelError::Length { len: l, max: model.config.max_seq_len });
        }
        let b = sequences.len();
        let mut inputs = vec![pad; b * l];
        let mut weights = vec![0f32; b * l * v];
        let mut n_targets = 0;
        for (i, seq) in sequences.iter().enumerate() {
            for (t, &tok) in seq.iter().enumerate() {
                inputs[i * l + t] = if t == 0 { bos } else { seq[t - 1] };
                if tok != pad {
                    weights[(i * l + t) * v + tok as usize] = 1.0;
                    n_targets += 1;
                }
            }
        }
        let dev = model.device();
        Ok(Self {
            points: model.points_tensor(points)?,
            inputs: Tensor::from_vec(inputs, (b, l), dev)?,
            target_weights: Tensor::from_vec(weights, (b, l, v), dev)?.to_dtype(model.dtype())?,
            n_targets: n_targets.max(1),
        })
    }
}
