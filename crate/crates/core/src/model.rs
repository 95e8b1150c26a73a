//! A small token classifier trained from scratch.
//!
//! Each token is represented by the concatenated embeddings of a window of
//! `2r + 1` tokens centred on it (padding outside the sentence), optionally
//! shifted by a learned query embedding. A `tanh` hidden layer feeds either a
//! per-token softmax over the label set or independent sigmoid outputs.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_radius: usize,
    pub hidden_dim: usize,
    /// Softmax classes, or the number of sigmoid outputs.
    pub n_classes: usize,
    pub max_len: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Size of the query-embedding table; 0 disables query conditioning.
    #[serde(default)]
    pub n_queries: usize,
    #[serde(default)]
    pub output: OutputKind,
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        (2 * self.context_radius + 1) * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_classes", self.n_classes),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Probability rows for the real tokens of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    n_classes: usize,
    probs: Vec<f64>,
}

impl PredictionMatrix {
    /// Checks that every row is a probability distribution (sum 1 ± 1e-6).
    pub fn new(n_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || !probs.len().is_multiple_of(n_classes) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {n_classes}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks(n_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(
                    "probs",
                    format!("row {i} is not a probability distribution"),
                ));
            }
        }
        Ok(Self { n_classes, probs })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_classes = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != n_classes) {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        Self::new(n_classes, rows.concat())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of token rows.
    pub fn len(&self) -> usize {
        self.probs.len() / self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Per-token argmax; ties go to the lowest class index.
pub fn predict_labels(probs: &PredictionMatrix) -> Vec<usize> {
    probs
        .rows()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub const BLOCK_NAMES: [&str; 6] = ["embedding", "query_embedding", "w1", "b1", "w2", "b2"];

/// All trainable weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    /// `vocab_size × embed_dim`
    pub embedding: Vec<f64>,
    /// `n_queries × input_dim`
    pub query_embedding: Vec<f64>,
    /// `input_dim × hidden_dim`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden_dim × n_classes`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub type Gradients = ModelParameters;

impl ModelParameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.input_dim();
        Self {
            embedding: vec![0.0; config.vocab_size * config.embed_dim],
            query_embedding: vec![0.0; config.n_queries * d],
            w1: vec![0.0; d * config.hidden_dim],
            b1: vec![0.0; config.hidden_dim],
            w2: vec![0.0; config.hidden_dim * config.n_classes],
            b2: vec![0.0; config.n_classes],
            config: config.clone(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            (BLOCK_NAMES[0], &self.embedding),
            (BLOCK_NAMES[1], &self.query_embedding),
            (BLOCK_NAMES[2], &self.w1),
            (BLOCK_NAMES[3], &self.b1),
            (BLOCK_NAMES[4], &self.w2),
            (BLOCK_NAMES[5], &self.b2),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 6] {
        [
            (BLOCK_NAMES[0], &mut self.embedding),
            (BLOCK_NAMES[1], &mut self.query_embedding),
            (BLOCK_NAMES[2], &mut self.w1),
            (BLOCK_NAMES[3], &mut self.b1),
            (BLOCK_NAMES[4], &mut self.w2),
            (BLOCK_NAMES[5], &mut self.b2),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// Flat copy in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    pub fn from_flat(config: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(config);
        if flat.len() != p.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                p.n_params()
            )));
        }
        let mut off = 0;
        for (_, block) in p.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(p)
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &ModelParameters) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }
}

/// Uniform `[-init_scale, init_scale]` weights, zero biases.
pub fn init_params(config: &ModelConfig) -> Result<ModelParameters> {
    config.validate()?;
    let mut p = ModelParameters::zeros(config);
    let s = config.init_scale;
    if s > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for block in [&mut p.embedding, &mut p.query_embedding, &mut p.w1, &mut p.w2] {
            block.iter_mut().for_each(|x| *x = rng.gen_range(-s..=s));
        }
    }
    Ok(p)
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub ids: Vec<usize>,
    pub query: Option<usize>,
    /// `n × input_dim`
    pub inputs: Vec<f64>,
    /// `n × hidden_dim`, post-tanh
    pub hidden: Vec<f64>,
    /// `n × n_classes` softmax or sigmoid outputs
    pub outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn window_id(ids: &[usize], pos: isize) -> usize {
    if pos < 0 || pos as usize >= ids.len() {
        PAD
    } else {
        ids[pos as usize]
    }
}

pub fn forward_cached(params: &ModelParameters, ids: &[usize], query: Option<usize>) -> Result<ForwardCache> {
    let cfg = &params.config;
    if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::invalid(
            "ids",
            format!("token id {bad} out of range for vocabulary of {}", cfg.vocab_size),
        ));
    }
    match (query, cfg.n_queries) {
        (Some(q), n) if q >= n => return Err(Error::invalid("query", format!("query {q} out of range for {n}"))),
        (None, n) if n > 0 => return Err(Error::invalid("query", "model expects a query")),
        _ => {}
    }

    let (e, d, h, c) = (cfg.embed_dim, cfg.input_dim(), cfg.hidden_dim, cfg.n_classes);
    let r = cfg.context_radius as isize;
    let n = ids.len();
    let mut inputs = vec![0.0; n * d];
    let mut hidden = vec![0.0; n * h];
    let mut outputs = vec![0.0; n * c];

    for i in 0..n {
        let x = &mut inputs[i * d..(i + 1) * d];
        for (j, off) in (-r..=r).enumerate() {
            let id = window_id(ids, i as isize + off);
            x[j * e..(j + 1) * e].copy_from_slice(&params.embedding[id * e..(id + 1) * e]);
        }
        if let Some(q) = query {
            let qe = &params.query_embedding[q * d..(q + 1) * d];
            x.iter_mut().zip(qe).for_each(|(a, b)| *a += b);
        }

        let hi = &mut hidden[i * h..(i + 1) * h];
        hi.copy_from_slice(&params.b1);
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                let row = &params.w1[k * h..(k + 1) * h];
                hi.iter_mut().zip(row).for_each(|(a, w)| *a += xk * w);
            }
        }
        hi.iter_mut().for_each(|a| *a = a.tanh());

        let z = &mut outputs[i * c..(i + 1) * c];
        z.copy_from_slice(&params.b2);
        for (k, &hk) in hi.iter().enumerate() {
            let row = &params.w2[k * c..(k + 1) * c];
            z.iter_mut().zip(row).for_each(|(a, w)| *a += hk * w);
        }
        match cfg.output {
            OutputKind::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                z.iter_mut().for_each(|v| *v /= sum);
            }
            OutputKind::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
    }

    Ok(ForwardCache {
        ids: ids.to_vec(),
        query,
        inputs,
        hidden,
        outputs,
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax probabilities for every real token of an encoded sentence.
pub fn forward(params: &ModelParameters, ids: &[usize]) -> Result<PredictionMatrix> {
    if params.config.output != OutputKind::Softmax {
        return Err(Error::invalid("params", "forward needs a softmax output layer"));
    }
    let cache = forward_cached(params, ids, None)?;
    Ok(PredictionMatrix {
        n_classes: params.config.n_classes,
        probs: cache.outputs,
    })
}

/// Accumulates the parameter gradients for one sentence into `grads`, given
/// the loss gradient with respect to the output logits (`n × n_classes`).
pub fn backward_into(
    params: &ModelParameters,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    let cfg = &params.config;
    let (e, d, h, c) = (cfg.embed_dim, cfg.input_dim(), cfg.hidden_dim, cfg.n_classes);
    let n = cache.len();
    if dlogits.len() != n * c {
        return Err(Error::Shape(format!(
            "logit gradient has {} entries, expected {} ({n} tokens × {c})",
            dlogits.len(),
            n * c
        )));
    }
    if cache.inputs.len() != n * d || cache.hidden.len() != n * h || grads.config != *cfg {
        return Err(Error::Shape("forward cache does not match parameters".into()));
    }
    let r = cfg.context_radius as isize;
    let mut dh = vec![0.0; h];
    let mut dx = vec![0.0; d];

    for i in 0..n {
        let dz = &dlogits[i * c..(i + 1) * c];
        let hi = &cache.hidden[i * h..(i + 1) * h];
        let x = &cache.inputs[i * d..(i + 1) * d];

        grads.b2.iter_mut().zip(dz).for_each(|(g, v)| *g += v);
        for k in 0..h {
            let row = &mut grads.w2[k * c..(k + 1) * c];
            row.iter_mut().zip(dz).for_each(|(g, v)| *g += hi[k] * v);
            let wrow = &params.w2[k * c..(k + 1) * c];
            let s: f64 = wrow.iter().zip(dz).map(|(w, v)| w * v).sum();
            dh[k] = s * (1.0 - hi[k] * hi[k]);
        }

        grads.b1.iter_mut().zip(&dh).for_each(|(g, v)| *g += v);
        for k in 0..d {
            let row = &mut grads.w1[k * h..(k + 1) * h];
            if x[k] != 0.0 {
                row.iter_mut().zip(&dh).for_each(|(g, v)| *g += x[k] * v);
            }
            let wrow = &params.w1[k * h..(k + 1) * h];
            dx[k] = wrow.iter().zip(&dh).map(|(w, v)| w * v).sum();
        }

        for (j, off) in (-r..=r).enumerate() {
            let id = window_id(&cache.ids, i as isize + off);
            let g = &mut grads.embedding[id * e..(id + 1) * e];
            g.iter_mut().zip(&dx[j * e..(j + 1) * e]).for_each(|(a, b)| *a += b);
        }
        if let Some(q) = cache.query {
            let g = &mut grads.query_embedding[q * d..(q + 1) * d];
            g.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
    }
    Ok(())
}

pub fn backward(params: &ModelParameters, cache: &ForwardCache, dlogits: &[f64]) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    backward_into(params, cache, dlogits, &mut grads)?;
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ModelParameters,
    pub v: ModelParameters,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParameters, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters are left untouched when any
/// gradient is non-finite.
pub fn adam_step(params: &mut ModelParameters, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.config != params.config || state.m.config != params.config {
        return Err(Error::Shape(
            "gradient or optimizer state shape differs from parameters".into(),
        ));
    }
    for (name, block) in grads.blocks() {
        if block.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(name));
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let p_blocks = params.blocks_mut();
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    for (((_, p), (_, m)), ((_, v), (_, g))) in p_blocks
        .into_iter()
        .zip(m_blocks)
        .zip(v_blocks.into_iter().zip(grads.blocks()))
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"MOMNERCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Writes `magic | version u32 | header length u32 | header JSON | count u64 |
/// f64 values`, all little-endian, values in declaration order.
pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParameters, extra: &serde_json::Value) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader {
        config: params.config.clone(),
        extra: extra.clone(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let flat = params.to_flat();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParameters, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let mut header = vec![0u8; u32::from_le_bytes(u32buf) as usize];
    r.read_exact(&mut header)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    header.config.validate()?;

    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let expected = ModelParameters::zeros(&header.config).n_params();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "{count} values stored, config needs {expected}"
        )));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64buf)?;
        flat.push(f64::from_le_bytes(u64buf));
    }
    Ok((ModelParameters::from_flat(&header.config, &flat)?, header.extra))
}
