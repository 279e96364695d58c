//! A small trainable code encoder, a feature-hashing baseline, and cosine
//! similarity.
//!
//! The model has two layers. Layer 0 looks up token embeddings (with a
//! summary token prepended). Layer 1 mixes each position with the sequence
//! mean: `z_i = W (s_i + mean(s)) + b`. The four pooling strategies read
//! different summaries of these states. Every gradient is written out by
//! hand in [`EncoderModel::backward`].

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SUMMARY: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<summary>", "<sep>", "<mask>"];

/// Token-to-id map with five reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Specials first, then `tokens` in the given order (duplicates and
    /// spellings of special tokens skipped).
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.push(s.to_owned());
        }
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    /// Every token seen at least `min_count` times, most frequent first,
    /// ties in lexicographic order.
    pub fn build<S: AsRef<str>>(sequences: &[Vec<S>], min_count: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for t in seq {
                *freq.entry(t.as_ref()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && !SPECIALS.contains(&t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`; special spellings and unseen tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i >= SPECIALS.len() => i,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Lowercased words and single punctuation characters of natural-language
/// text.
pub fn nl_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingStrategy {
    /// Mean of the layer-1 states.
    LastAvg,
    /// Mean of the layer-0 mean and the layer-1 mean.
    FirstLastAvg,
    /// Layer-1 state of the summary position.
    #[serde(rename = "cls", alias = "summary")]
    Summary,
    /// `max(0, Summary)`.
    #[serde(rename = "cls-relu", alias = "summary-relu")]
    SummaryRelu,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 4] = [
        PoolingStrategy::LastAvg,
        PoolingStrategy::FirstLastAvg,
        PoolingStrategy::Summary,
        PoolingStrategy::SummaryRelu,
    ];

    /// Wire name used by the remote embedding protocol.
    pub fn name(self) -> &'static str {
        match self {
            PoolingStrategy::LastAvg => "last-avg",
            PoolingStrategy::FirstLastAvg => "first-last-avg",
            PoolingStrategy::Summary => "cls",
            PoolingStrategy::SummaryRelu => "cls-relu",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "last-avg" | "last_avg" => PoolingStrategy::LastAvg,
            "first-last-avg" | "first_last_avg" => PoolingStrategy::FirstLastAvg,
            "cls" | "summary" => PoolingStrategy::Summary,
            "cls-relu" | "summary-relu" | "summary_relu" => PoolingStrategy::SummaryRelu,
            other => return Err(Error::Config(format!("unknown pooling `{other}`"))),
        })
    }
}

/// A fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

/// `u·v / (|u| |v|)`. A zero vector has no direction; its cosine with
/// anything is 0.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(u.dim(), v.dim()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine with a zero vector; returning 0");
        return Ok(0.0);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ derive_seed(seed, &[]);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Feature-hashed bag of tokens: each token adds 1 to one of `d` buckets.
pub fn hash_embed<S: AsRef<str>>(tokens: &[S], d: usize, seed: u64) -> Embedding {
    let d = d.max(1);
    let mut v = vec![0.0; d];
    for t in tokens {
        v[(fnv1a(t.as_ref().as_bytes(), seed) % d as u64) as usize] += 1.0;
    }
    Embedding(v.into_iter().map(|x: f64| x.max(0.0)).collect())
}

/// Seeded keep/drop mask over layer-0 states: each entry is 0 with
/// probability `p`, else `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f64>,
    dim: usize,
}

impl DropoutMask {
    pub fn sample(positions: usize, dim: usize, p: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let keep = 1.0 / (1.0 - p);
        let scale = (0..positions * dim)
            .map(|_| if r.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        DropoutMask { scale, dim }
    }

    fn at(&self, pos: usize, k: usize) -> f64 {
        self.scale.get(pos * self.dim + k).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 32, seed: 0 }
    }
}

/// Parameters: embedding table `e` (|V|×d), mixing matrix `w` (d×d, row
/// major) and bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &EncoderModel) -> Self {
        Gradients {
            e: vec![0.0; model.e.len()],
            w: vec![0.0; model.w.len()],
            b: vec![0.0; model.b.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for (a, b) in [(&mut self.e, &other.e), (&mut self.w, &other.w), (&mut self.b, &other.b)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for x in self.e.iter_mut().chain(&mut self.w).chain(&mut self.b) {
            *x *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().chain(&self.w).chain(&self.b).all(|x| x.is_finite())
    }
}

/// Intermediate states of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub ids: Vec<usize>,
    /// Layer-0 states after dropout, one row per position.
    pub s: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Layer-1 states.
    pub z: Vec<Vec<f64>>,
    mask: Option<DropoutMask>,
}

impl EncoderModel {
    /// Seeded initialization: entries of `e` and `w` uniform with standard
    /// deviation `1/sqrt(d)`, reserved-token rows and `b` zero.
    pub fn new(vocab: Vocabulary, config: EncoderConfig) -> Result<Self> {
        if config.dim < 8 {
            return Err(Error::Config(format!("encoder dimension {} is below 8", config.dim)));
        }
        let d = config.dim;
        let mut r = rng(derive_seed(config.seed, &[0xe4c0]));
        let a = 3f64.sqrt() / (d as f64).sqrt();
        let mut e: Vec<f64> = (0..vocab.len() * d).map(|_| r.gen_range(-a..a)).collect();
        // reserved tokens start at zero so the summary state first reads the sequence mean
        e[..SPECIALS.len().min(vocab.len()) * d].iter_mut().for_each(|x| *x = 0.0);
        let w = (0..d * d).map(|_| r.gen_range(-a..a)).collect();
        Ok(EncoderModel {
            config,
            vocab,
            e,
            w,
            b: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        let d = self.dim();
        &self.e[id * d..(id + 1) * d]
    }

    fn mix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|r| {
                self.w[r * d..(r + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.b[r]
            })
            .collect()
    }

    /// Ids of `tokens` with the summary id prepended.
    pub fn input_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        std::iter::once(SUMMARY).chain(self.vocab.ids(tokens)).collect()
    }

    /// Forward pass over ids (the caller supplies the summary id).
    pub fn forward(&self, ids: &[usize], mask: Option<&DropoutMask>) -> Result<Forward> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let d = self.dim();
        let n = ids.len();
        let s: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let row = self.embedding(id);
                match mask {
                    Some(m) => (0..d).map(|k| row[k] * m.at(i, k)).collect(),
                    None => row.to_vec(),
                }
            })
            .collect();
        let mut mean = vec![0.0; d];
        for row in &s {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let z = s
            .iter()
            .map(|row| {
                let x: Vec<f64> = row.iter().zip(&mean).map(|(a, b)| a + b).collect();
                self.mix(&x)
            })
            .collect();
        Ok(Forward {
            ids: ids.to_vec(),
            s,
            mean,
            z,
            mask: mask.cloned(),
        })
    }

    pub fn pool(&self, f: &Forward, pooling: PoolingStrategy) -> Embedding {
        let d = self.dim();
        let n = f.z.len() as f64;
        let last_avg = || {
            let mut v = vec![0.0; d];
            for row in &f.z {
                for (a, x) in v.iter_mut().zip(row) {
                    *a += x;
                }
            }
            v.iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        Embedding(match pooling {
            PoolingStrategy::LastAvg => last_avg(),
            PoolingStrategy::FirstLastAvg => last_avg()
                .iter()
                .zip(&f.mean)
                .map(|(a, b)| (a + b) / 2.0)
                .collect(),
            PoolingStrategy::Summary => f.z[0].clone(),
            PoolingStrategy::SummaryRelu => f.z[0].iter().map(|x| x.max(0.0)).collect(),
        })
    }

    /// Embed `tokens` (summary token prepended, unknown tokens as UNK).
    pub fn encode<S: AsRef<str>>(
        &self,
        tokens: &[S],
        pooling: PoolingStrategy,
        mask: Option<&DropoutMask>,
    ) -> Result<Embedding> {
        let f = self.forward(&self.input_ids(tokens), mask)?;
        Ok(self.pool(&f, pooling))
    }

    /// Split the gradient of a pooled vector into per-position layer-1
    /// gradients and a direct gradient on the layer-0 mean.
    pub fn pool_backward(
        &self,
        f: &Forward,
        pooling: PoolingStrategy,
        dv: &[f64],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = self.dim();
        let n = f.z.len();
        let mut dz = vec![vec![0.0; d]; n];
        let mut dmean = vec![0.0; d];
        match pooling {
            PoolingStrategy::LastAvg => {
                for row in &mut dz {
                    for (g, x) in row.iter_mut().zip(dv) {
                        *g = x / n as f64;
                    }
                }
            }
            PoolingStrategy::FirstLastAvg => {
                for row in &mut dz {
                    for (g, x) in row.iter_mut().zip(dv) {
                        *g = x / (2.0 * n as f64);
                    }
                }
                for (g, x) in dmean.iter_mut().zip(dv) {
                    *g = x / 2.0;
                }
            }
            PoolingStrategy::Summary => dz[0].copy_from_slice(dv),
            PoolingStrategy::SummaryRelu => {
                for k in 0..d {
                    dz[0][k] = if f.z[0][k] > 0.0 { dv[k] } else { 0.0 };
                }
            }
        }
        (dz, dmean)
    }

    /// Accumulate parameter gradients given `dz` (one row per position) and
    /// an extra gradient on the layer-0 mean.
    pub fn backward(&self, f: &Forward, dz: &[Vec<f64>], dmean_extra: &[f64], grads: &mut Gradients) {
        let d = self.dim();
        let n = f.s.len();
        let mut dmean = dmean_extra.to_vec();
        let mut ds = vec![vec![0.0; d]; n];
        for i in 0..n {
            let g = &dz[i];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            for r in 0..d {
                grads.b[r] += g[r];
                let row = &mut grads.w[r * d..(r + 1) * d];
                for c in 0..d {
                    row[c] += g[r] * (f.s[i][c] + f.mean[c]);
                }
            }
            // Wᵀ g flows into both s_i and the mean
            for c in 0..d {
                let u: f64 = (0..d).map(|r| self.w[r * d + c] * g[r]).sum();
                ds[i][c] += u;
                dmean[c] += u;
            }
        }
        for (i, &id) in f.ids.iter().enumerate() {
            let row = &mut grads.e[id * d..(id + 1) * d];
            for k in 0..d {
                let mut g = ds[i][k] + dmean[k] / n as f64;
                if let Some(m) = &f.mask {
                    g *= m.at(i, k);
                }
                row[k] += g;
            }
        }
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (p, g) in [(&mut self.e, &grads.e), (&mut self.w, &grads.w), (&mut self.b, &grads.b)] {
            for (x, y) in p.iter_mut().zip(g) {
                *x -= lr * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().chain(&self.w).chain(&self.b).all(|x| x.is_finite())
    }

    /// All parameters as one flat slice order: e, w, b.
    pub fn param_count(&self) -> usize {
        self.e.len() + self.w.len() + self.b.len()
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let (ne, nw) = (self.e.len(), self.w.len());
        if i < ne {
            &mut self.e[i]
        } else if i < ne + nw {
            &mut self.w[i - ne]
        } else {
            &mut self.b[i - ne - nw]
        }
    }
}

impl Gradients {
    pub fn get(&self, i: usize) -> f64 {
        let (ne, nw) = (self.e.len(), self.w.len());
        if i < ne {
            self.e[i]
        } else if i < ne + nw {
            self.w[i - ne]
        } else {
            self.b[i - ne - nw]
        }
    }
}

const MAGIC: &[u8; 8] = b"SYNENC\0\x01";

/// Binary checkpoint, all integers and floats little-endian:
///
/// ```text
/// magic    8 bytes  "SYNENC\0" followed by format version 0x01
/// dim      u64
/// seed     u64
/// vocab    u64 count, then per token: u32 byte length + UTF-8 bytes
/// e        count·dim f64, row major
/// w        dim·dim f64, row major
/// b        dim f64
/// ```
pub fn write_checkpoint_to(model: &EncoderModel, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(model.dim() as u64).to_le_bytes())?;
    w.write_all(&model.config.seed.to_le_bytes())?;
    w.write_all(&(model.vocab.len() as u64).to_le_bytes())?;
    for t in model.vocab.tokens() {
        w.write_all(&(t.len() as u32).to_le_bytes())?;
        w.write_all(t.as_bytes())?;
    }
    for x in model.e.iter().chain(&model.w).chain(&model.b) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    write_checkpoint_to(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn read_checkpoint_from(mut r: impl Read) -> Result<EncoderModel> {
    let bad = |m: &str| Error::Checkpoint(m.to_owned());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic or unsupported version"));
    }
    let dim = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    if dim < 8 || dim > 1 << 16 || count > 1 << 24 {
        return Err(bad("implausible dimensions"));
    }
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let mut lb = [0u8; 4];
        r.read_exact(&mut lb)?;
        let mut buf = vec![0u8; u32::from_le_bytes(lb) as usize];
        r.read_exact(&mut buf)?;
        tokens.push(String::from_utf8(buf).map_err(|_| bad("token is not UTF-8"))?);
    }
    if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
        return Err(bad("vocabulary does not start with the reserved tokens"));
    }
    let vocab = Vocabulary::from_tokens(tokens.into_iter().skip(SPECIALS.len()));
    if vocab.len() != count {
        return Err(bad("duplicate vocabulary entries"));
    }
    let e = read_f64s(&mut r, count * dim)?;
    let w = read_f64s(&mut r, dim * dim)?;
    let b = read_f64s(&mut r, dim)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(EncoderModel {
        config: EncoderConfig { dim, seed },
        vocab,
        e,
        w,
        b,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderModel> {
    read_checkpoint_from(std::io::BufReader::new(std::fs::File::open(path)?))
}
