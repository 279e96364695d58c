//! Contrastive training of the encoder: masked-token prediction plus an
//! InfoNCE objective over (anchor, equivalent variant, mutant) triples.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::code::{tokenize, Lang, SourceUnit};
use crate::encoder::{
    DropoutMask, EncoderConfig, EncoderModel, Forward, Gradients, PoolingStrategy, Vocabulary,
    MASK, SEP, SUMMARY,
};
use crate::error::{Error, Result};
use crate::metrics::keywords;
use crate::mutate::{mutate_unit, operator_sites, OperatorClass};
use crate::par;
use crate::rng::{derive_seed, rng};
use crate::sketch::sketch_unit;
use crate::transform::{sample_variant, TransformRule};

/// Fraction of code positions selected for masking.
pub const MASK_RATE: f64 = 0.15;

/// One line of a training corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub lang: Lang,
    #[serde(default)]
    pub nl: String,
    pub code: String,
}

pub fn parse_training_corpus(reader: impl BufRead) -> Result<Vec<TrainingRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_training_corpus(path: &Path) -> Result<Vec<TrainingRecord>> {
    parse_training_corpus(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Tokens of the sketched unit.
pub fn code_tokens(unit: &SourceUnit) -> Result<Vec<String>> {
    unit.require_valid()?;
    Ok(tokenize(&sketch_unit(unit)?))
}

/// NL tokens and sketched code tokens; the model input is
/// `[SUMMARY] ++ nl ++ [SEP] ++ code`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub nl: Vec<String>,
    pub code: Vec<String>,
}

impl TrainingPair {
    pub fn new(nl: Vec<String>, code: Vec<String>) -> Result<Self> {
        if code.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(TrainingPair { nl, code })
    }

    fn input_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.nl.len() + self.code.len() + 2);
        ids.push(SUMMARY);
        ids.extend(vocab.ids(&self.nl));
        ids.push(SEP);
        ids.extend(vocab.ids(&self.code));
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    ReplaceWithMask,
    ReplaceWithRandom(usize),
    Keep,
}

/// Masked code positions with what to feed the model at each.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskPlan {
    pub entries: Vec<(usize, MaskAction)>,
}

impl MaskPlan {
    /// `round(0.15 * code_len)` distinct code positions; each is masked with
    /// probability 0.8, replaced by a random non-special token with 0.1,
    /// left unchanged with 0.1.
    pub fn sample(code_len: usize, vocab_len: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let count = (MASK_RATE * code_len as f64).round() as usize;
        let first = 5.min(vocab_len);
        let mut idx = sample(&mut r, code_len, count.min(code_len)).into_vec();
        idx.sort_unstable();
        let entries = idx
            .into_iter()
            .map(|i| {
                let u: f64 = r.gen();
                let action = if u < 0.8 {
                    MaskAction::ReplaceWithMask
                } else if u < 0.9 {
                    let id = if vocab_len > first {
                        r.gen_range(first..vocab_len)
                    } else {
                        crate::encoder::UNK
                    };
                    MaskAction::ReplaceWithRandom(id)
                } else {
                    MaskAction::Keep
                };
                (i, action)
            })
            .collect();
        MaskPlan { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn log_softmax_row(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    (logits.iter().map(|l| (l - lse).exp()).collect(), lse)
}

/// Sum over masked positions of `-log softmax(E z_i)[true id]`, with the
/// output layer tied to the embedding table.
pub fn mlm_loss(model: &EncoderModel, pair: &TrainingPair, plan: &MaskPlan) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(model);
    if plan.is_empty() {
        return Ok((0.0, grads));
    }
    let d = model.dim();
    let v = model.vocab.len();
    let mut ids = pair.input_ids(&model.vocab);
    let offset = pair.nl.len() + 2;
    let mut targets = Vec::with_capacity(plan.len());
    for &(i, action) in &plan.entries {
        if i >= pair.code.len() {
            return Err(Error::Config(format!("mask index {i} beyond code length {}", pair.code.len())));
        }
        let p = offset + i;
        targets.push((p, ids[p]));
        match action {
            MaskAction::ReplaceWithMask => ids[p] = MASK,
            MaskAction::ReplaceWithRandom(t) => ids[p] = t,
            MaskAction::Keep => {}
        }
    }
    let f = model.forward(&ids, None)?;
    let mut dz = vec![vec![0.0; d]; ids.len()];
    let mut loss = 0.0;
    for &(p, truth) in &targets {
        let z = &f.z[p];
        let logits: Vec<f64> = (0..v)
            .map(|t| model.embedding(t).iter().zip(z).map(|(a, b)| a * b).sum())
            .collect();
        let (probs, lse) = log_softmax_row(&logits);
        loss += lse - logits[truth];
        for (t, &pt) in probs.iter().enumerate() {
            let g = pt - if t == truth { 1.0 } else { 0.0 };
            let row = model.embedding(t);
            let ge = &mut grads.e[t * d..(t + 1) * d];
            for k in 0..d {
                ge[k] += g * z[k];
                dz[p][k] += g * row[k];
            }
        }
    }
    model.backward(&f, &dz, &vec![0.0; d], &mut grads);
    Ok((loss, grads))
}

/// Anchor, behavior-preserving positive and mutant negative, as sketched
/// token lists. `dropout` carries the two masks of a dropout positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub anchor: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub dropout: Option<(DropoutMask, DropoutMask)>,
}

/// Loss of anchor `i` given its similarities to every positive and
/// negative in the batch, with the gradients of the loss with respect to
/// each similarity.
pub fn anchor_loss(pos: &[f64], neg: &[f64], i: usize, tau: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = pos.iter().chain(neg).map(|s| s / tau).collect();
    let (probs, lse) = log_softmax_row(&logits);
    let loss = lse - logits[i];
    let mut dpos: Vec<f64> = probs[..pos.len()].iter().map(|p| p / tau).collect();
    dpos[i] -= 1.0 / tau;
    let dneg = probs[pos.len()..].iter().map(|p| p / tau).collect();
    (loss, dpos, dneg)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulate `g · d cos(u, v)` into `du` and `dv`.
fn cosine_backward(u: &[f64], v: &[f64], g: f64, du: &mut [f64], dv: &mut [f64]) {
    let (nu, nv) = (norm(u), norm(v));
    let s = dot(u, v) / (nu * nv);
    for k in 0..u.len() {
        du[k] += g * (v[k] / (nu * nv) - s * u[k] / (nu * nu));
        dv[k] += g * (u[k] / (nu * nv) - s * v[k] / (nv * nv));
    }
}

/// Mean over anchors of the InfoNCE loss whose denominator holds every
/// positive and every negative of the batch.
pub fn contrastive_loss(
    model: &EncoderModel,
    batch: &[Triple],
    tau: f64,
    pooling: PoolingStrategy,
) -> Result<(f64, Gradients)> {
    contrastive_loss_with(model, batch, tau, pooling, false)
}

fn contrastive_loss_with(
    model: &EncoderModel,
    batch: &[Triple],
    tau: f64,
    pooling: PoolingStrategy,
    parallel: bool,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} is not positive")));
    }
    let b = batch.len();
    // rows 0..b anchors, b..2b positives, 2b..3b negatives
    let jobs: Vec<(&[String], Option<&DropoutMask>)> = batch
        .iter()
        .map(|t| (t.anchor.as_slice(), t.dropout.as_ref().map(|m| &m.0)))
        .chain(batch.iter().map(|t| (t.positive.as_slice(), t.dropout.as_ref().map(|m| &m.1))))
        .chain(batch.iter().map(|t| (t.negative.as_slice(), None)))
        .collect();
    let run = |_: usize, job: &(&[String], Option<&DropoutMask>)| -> Result<(Forward, Vec<f64>)> {
        let f = model.forward(&model.input_ids(job.0), job.1)?;
        let h = model.pool(&f, pooling).0;
        Ok((f, h))
    };
    let encoded: Vec<(Forward, Vec<f64>)> = if parallel {
        par::map(&jobs, run).into_iter().collect::<Result<_>>()?
    } else {
        jobs.iter().enumerate().map(|(i, j)| run(i, j)).collect::<Result<_>>()?
    };
    if encoded.iter().any(|(_, h)| norm(h) == 0.0) {
        return Err(Error::ZeroEmbedding);
    }
    let h: Vec<&[f64]> = encoded.iter().map(|(_, h)| h.as_slice()).collect();
    let cos = |x: usize, y: usize| dot(h[x], h[y]) / (norm(h[x]) * norm(h[y]));
    let d = model.dim();
    let mut dh = vec![vec![0.0; d]; 3 * b];
    let mut loss = 0.0;
    for i in 0..b {
        let pos: Vec<f64> = (0..b).map(|j| cos(i, b + j)).collect();
        let neg: Vec<f64> = (0..b).map(|j| cos(i, 2 * b + j)).collect();
        let (l, dpos, dneg) = anchor_loss(&pos, &neg, i, tau);
        loss += l;
        for j in 0..b {
            for (other, g) in [(b + j, dpos[j]), (2 * b + j, dneg[j])] {
                let (mut du, mut dv) = (vec![0.0; d], vec![0.0; d]);
                cosine_backward(h[i], h[other], g / b as f64, &mut du, &mut dv);
                for k in 0..d {
                    dh[i][k] += du[k];
                    dh[other][k] += dv[k];
                }
            }
        }
    }
    let mut grads = Gradients::zeros(model);
    for ((f, _), g) in encoded.iter().zip(&dh) {
        let (dz, dmean) = model.pool_backward(f, pooling, g);
        model.backward(f, &dz, &dmean, &mut grads);
    }
    Ok((loss / b as f64, grads))
}

/// A positive example for an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Positive {
    pub anchor: Vec<String>,
    pub positive: Vec<String>,
    /// Encode both sides with independent dropout masks.
    pub dropout: bool,
}

/// Fair seeded coin: heads pairs the anchor with itself under dropout,
/// tails pairs it with a sampled syntactic variant. Units without any
/// variant always take the dropout branch.
pub fn build_positive(unit: &SourceUnit, seed: u64) -> Result<Positive> {
    let anchor = code_tokens(unit)?;
    if rng(seed).gen_bool(0.5) {
        if let Some(v) = sample_variant(unit, &TransformRule::ALL, derive_seed(seed, &[1])) {
            return Ok(Positive {
                anchor,
                positive: code_tokens(&v)?,
                dropout: false,
            });
        }
    }
    Ok(Positive {
        positive: anchor.clone(),
        anchor,
        dropout: true,
    })
}

/// Sketched tokens of a single-operator mutant.
pub fn build_negative(unit: &SourceUnit, seed: u64) -> Result<Vec<String>> {
    unit.require_valid()?;
    let classes: BTreeSet<OperatorClass> = OperatorClass::ALL.into_iter().collect();
    match mutate_unit(unit, &classes, seed)? {
        Some(m) => code_tokens(&m),
        None => Err(Error::NoMutableSite),
    }
}

/// Anything that yields a loss and its analytic gradient.
pub trait Objective {
    fn loss_and_grad(&self, model: &EncoderModel) -> Result<(f64, Gradients)>;

    fn loss(&self, model: &EncoderModel) -> Result<f64> {
        self.loss_and_grad(model).map(|(l, _)| l)
    }
}

#[derive(Debug, Clone)]
pub struct MlmObjective {
    pub pair: TrainingPair,
    pub plan: MaskPlan,
}

impl Objective for MlmObjective {
    fn loss_and_grad(&self, model: &EncoderModel) -> Result<(f64, Gradients)> {
        mlm_loss(model, &self.pair, &self.plan)
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveObjective {
    pub batch: Vec<Triple>,
    pub tau: f64,
    pub pooling: PoolingStrategy,
}

impl Objective for ContrastiveObjective {
    fn loss_and_grad(&self, model: &EncoderModel) -> Result<(f64, Gradients)> {
        contrastive_loss(model, &self.batch, self.tau, self.pooling)
    }
}

/// Wraps an objective and multiplies its analytic gradient, to check that
/// [`grad_check`] catches a wrong gradient.
#[derive(Debug, Clone)]
pub struct ScaledGradient<O>(pub O, pub f64);

impl<O: Objective> Objective for ScaledGradient<O> {
    fn loss_and_grad(&self, model: &EncoderModel) -> Result<(f64, Gradients)> {
        let (l, mut g) = self.0.loss_and_grad(model)?;
        g.scale(self.1);
        Ok((l, g))
    }

    fn loss(&self, model: &EncoderModel) -> Result<f64> {
        self.0.loss(model)
    }
}

/// Largest dimension and vocabulary [`grad_check`] accepts.
pub const GRAD_CHECK_MAX_DIM: usize = 8;
pub const GRAD_CHECK_MAX_VOCAB: usize = 30;
const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest `|analytic - numeric| / max(|numeric|, 1e-6)` over every
/// parameter, with central differences of step `epsilon`.
pub fn grad_check(model: &EncoderModel, objective: &dyn Objective, epsilon: f64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("grad-check epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    if model.dim() > GRAD_CHECK_MAX_DIM || model.vocab.len() > GRAD_CHECK_MAX_VOCAB {
        return Err(Error::Config(format!(
            "grad-check needs d <= {GRAD_CHECK_MAX_DIM} and |V| <= {GRAD_CHECK_MAX_VOCAB}"
        )));
    }
    let (_, analytic) = objective.loss_and_grad(model)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.param_count() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + epsilon;
        let up = objective.loss(&probe)?;
        *probe.param_mut(i) = orig - epsilon;
        let down = objective.loss(&probe)?;
        *probe.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (analytic.get(i) - numeric).abs() / numeric.abs().max(GRAD_CHECK_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// A seeded random model (d = 8, 25 tokens) with one masked-prediction and
/// one contrastive objective (batch 3) over random token lists.
pub fn tiny_instance(
    seed: u64,
    pooling: PoolingStrategy,
) -> Result<(EncoderModel, MlmObjective, ContrastiveObjective)> {
    let words: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
    let vocab = Vocabulary::from_tokens(words.iter().cloned());
    let mut r = rng(derive_seed(seed, &[0x71]));
    let mut model = EncoderModel::new(vocab, EncoderConfig { dim: 8, seed })?;
    // Under ReLU pooling, alternate clearly active and clearly dead units
    // so both branches are checked and no coordinate sits near the kink.
    let relu = pooling == PoolingStrategy::SummaryRelu;
    for (j, x) in model.b.iter_mut().enumerate() {
        *x = match (relu, j % 2) {
            (false, _) => r.gen_range(-0.5..0.5),
            (true, 0) => r.gen_range(0.5..1.0),
            (true, _) => r.gen_range(-1.0..-0.5),
        };
    }
    let mut seq = |lo: usize, hi: usize| -> Vec<String> {
        let n = r.gen_range(lo..=hi);
        (0..n).map(|_| words[r.gen_range(0..words.len())].clone()).collect()
    };
    let pair = TrainingPair::new(seq(0, 4), seq(7, 14))?;
    let mut triples = Vec::new();
    for j in 0..3 {
        let anchor = seq(2, 8);
        let dropout = (j == 0).then(|| {
            let n = anchor.len() + 1;
            (
                DropoutMask::sample(n, 8, 0.1, derive_seed(seed, &[j, 1])),
                DropoutMask::sample(n, 8, 0.1, derive_seed(seed, &[j, 2])),
            )
        });
        let positive = if dropout.is_some() { anchor.clone() } else { seq(2, 8) };
        triples.push(Triple {
            anchor,
            positive,
            negative: seq(2, 8),
            dropout,
        });
    }
    let plan = MaskPlan::sample(pair.code.len(), model.vocab.len(), derive_seed(seed, &[0x3a]));
    let tau = r.gen_range(0.1..1.0);
    Ok((
        model,
        MlmObjective { pair, plan },
        ContrastiveObjective {
            batch: triples,
            tau,
            pooling,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Softmax temperature.
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub pooling: PoolingStrategy,
    /// Weight of the masked-prediction loss, 0 or 1.
    pub mlm_weight: f64,
    pub dim: usize,
    /// Precomputed (positive, negative) draws per unit; epoch `k` uses
    /// draw `k mod views`.
    pub views: usize,
    /// Encode a batch on the thread pool; reductions keep a fixed order.
    pub parallel_batch: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            tau: 0.05,
            batch_size: 16,
            learning_rate: 0.05,
            epochs: 30,
            dropout: 0.1,
            seed: 0,
            pooling: PoolingStrategy::SummaryRelu,
            mlm_weight: 1.0,
            dim: 32,
            views: 4,
            parallel_batch: false,
        }
    }
}

impl TrainerConfig {
    /// Settings for the bundled synthetic corpus: mean pooling, τ = 0.07,
    /// step 0.3, batch 8, d = 32, 300 epochs.
    pub fn synthetic_preset() -> Self {
        TrainerConfig {
            tau: 0.07,
            batch_size: 8,
            learning_rate: 0.3,
            epochs: 300,
            pooling: PoolingStrategy::LastAvg,
            dim: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.mlm_weight != 0.0 && self.mlm_weight != 1.0 {
            return bad(format!("mlm weight must be 0 or 1, got {}", self.mlm_weight));
        }
        if self.epochs == 0 || self.views == 0 {
            return bad("epochs and views must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mlm: f64,
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_mlm,l_cl,l_total\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.9},{:.9},{:.9}\n", e.epoch, e.mlm, e.contrastive, e.total));
        }
        s
    }
}

/// A training unit after preparation.
#[derive(Debug, Clone)]
struct Prepared {
    nl: Vec<String>,
    anchor: Vec<String>,
    views: Vec<(Positive, Vec<String>)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: EncoderModel,
    pub log: TrainingLog,
    /// Ids of records left out (no parse or no mutable operator).
    pub skipped: Vec<String>,
}

fn prepare(rec: &TrainingRecord, config: &TrainerConfig, index: u64) -> Result<Option<Prepared>> {
    let unit = SourceUnit::new(rec.lang, rec.code.as_str());
    if unit.has_error() {
        return Ok(None);
    }
    let all: BTreeSet<OperatorClass> = OperatorClass::ALL.into_iter().collect();
    if operator_sites(&unit, &all)?.is_empty() {
        return Ok(None);
    }
    let mut views = Vec::with_capacity(config.views);
    for v in 0..config.views as u64 {
        let pos = build_positive(&unit, derive_seed(config.seed, &[0x905, index, v]))?;
        let neg = match build_negative(&unit, derive_seed(config.seed, &[0x4e9, index, v])) {
            Ok(n) => n,
            Err(Error::NoMutableSite) => return Ok(None),
            Err(e) => return Err(e),
        };
        views.push((pos, neg));
    }
    Ok(Some(Prepared {
        nl: crate::encoder::nl_tokens(&rec.nl),
        anchor: code_tokens(&unit)?,
        views,
    }))
}

/// Vocabulary over the corpus: sketched code, NL text, derived positives
/// and negatives, plus keywords and operators of every language present.
fn training_vocabulary(prepared: &[Prepared], langs: &BTreeSet<Lang>) -> Vocabulary {
    let mut seqs: Vec<Vec<String>> = Vec::new();
    for p in prepared {
        seqs.push(p.anchor.clone());
        seqs.push(p.nl.clone());
        for (pos, neg) in &p.views {
            seqs.push(pos.positive.clone());
            seqs.push(neg.clone());
        }
    }
    for &lang in langs {
        seqs.push(keywords(lang).iter().map(|s| s.to_string()).collect());
        seqs.push(
            OperatorClass::ALL
                .iter()
                .flat_map(|c| c.inventory(lang).iter().map(|s| s.to_string()))
                .collect(),
        );
    }
    Vocabulary::build(&seqs, 1)
}

fn has_zero_encoding(model: &EncoderModel, t: &Triple, pooling: PoolingStrategy) -> bool {
    let masks = t.dropout.as_ref();
    [
        (&t.anchor, masks.map(|m| &m.0)),
        (&t.positive, masks.map(|m| &m.1)),
        (&t.negative, None),
    ]
    .into_iter()
    .any(|(tokens, mask)| model.encode(tokens, pooling, mask).map_or(true, |v| v.is_zero()))
}

/// Seeded mini-batch gradient descent on `mlm_weight * L_mlm + L_cl`, where
/// `L_mlm` is the batch mean of each pair's masked-token loss divided by its
/// number of masked positions.
/// Bit-reproducible for a given config. A non-finite loss or parameter
/// aborts with [`Error::Divergence`] carrying the model from the start of
/// the failing epoch.
pub fn train(records: &[TrainingRecord], config: &TrainerConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut prepared = Vec::new();
    let mut skipped = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        match prepare(rec, config, i as u64)? {
            Some(p) => prepared.push(p),
            None => {
                log::info!("skipping training record {}: no parse or no mutable operator", rec.id);
                skipped.push(rec.id.clone());
            }
        }
    }
    if prepared.is_empty() {
        return Err(Error::EmptyInput);
    }
    let langs: BTreeSet<Lang> = records.iter().map(|r| r.lang).collect();
    let vocab = training_vocabulary(&prepared, &langs);
    let mut model = EncoderModel::new(
        vocab,
        EncoderConfig {
            dim: config.dim,
            seed: config.seed,
        },
    )?;
    let mut log = TrainingLog::default();
    let n = prepared.len();
    for epoch in 0..config.epochs {
        let last_good = model.clone();
        let diverged = |model: EncoderModel| Error::Divergence {
            epoch,
            last_good: Box::new(model),
        };
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng(derive_seed(config.seed, &[0xe90c, epoch as u64])));
        let (mut sum_mlm, mut sum_cl, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let view = epoch % config.views;
            let triples: Vec<Triple> = chunk
                .iter()
                .map(|&u| {
                    let (pos, neg) = &prepared[u].views[view];
                    let dropout = (pos.dropout && config.dropout > 0.0).then(|| {
                        let len = pos.anchor.len() + 1;
                        let s = |k: u64| derive_seed(config.seed, &[0xd0, epoch as u64, u as u64, k]);
                        (
                            DropoutMask::sample(len, config.dim, config.dropout, s(0)),
                            DropoutMask::sample(len, config.dim, config.dropout, s(1)),
                        )
                    });
                    Triple {
                        anchor: pos.anchor.clone(),
                        positive: pos.positive.clone(),
                        negative: neg.clone(),
                        dropout,
                    }
                })
                .collect();
            let cl = |batch: &[Triple]| {
                contrastive_loss_with(&model, batch, config.tau, config.pooling, config.parallel_batch)
            };
            let (l_cl, mut grads) = match cl(&triples) {
                Err(Error::ZeroEmbedding) => {
                    let kept: Vec<Triple> = triples
                        .into_iter()
                        .filter(|t| !has_zero_encoding(&model, t, config.pooling))
                        .collect();
                    log::warn!("epoch {epoch}: dropped triples with an all-zero encoding");
                    if kept.is_empty() {
                        (0.0, Gradients::zeros(&model))
                    } else {
                        cl(&kept)?
                    }
                }
                other => other?,
            };
            let mut l_mlm = 0.0;
            if config.mlm_weight > 0.0 {
                let vlen = model.vocab.len();
                let run = |_: usize, &u: &usize| -> Result<(f64, Gradients)> {
                    let p = &prepared[u];
                    let pair = TrainingPair::new(p.nl.clone(), p.anchor.clone())?;
                    let plan = MaskPlan::sample(
                        pair.code.len(),
                        vlen,
                        derive_seed(config.seed, &[0x3a5c, epoch as u64, u as u64]),
                    );
                    let (l, mut g) = mlm_loss(&model, &pair, &plan)?;
                    // per masked token, so a pair's loss does not grow with its length
                    let k = plan.len().max(1) as f64;
                    g.scale(1.0 / k);
                    Ok((l / k, g))
                };
                let parts: Vec<Result<(f64, Gradients)>> = if config.parallel_batch {
                    par::map(chunk, run)
                } else {
                    chunk.iter().enumerate().map(|(i, u)| run(i, u)).collect()
                };
                let k = config.mlm_weight / chunk.len() as f64;
                for part in parts {
                    let (l, g) = part?;
                    l_mlm += l / chunk.len() as f64;
                    grads.add_scaled(&g, k);
                }
            }
            if !(l_cl.is_finite() && l_mlm.is_finite() && grads.is_finite()) {
                return Err(diverged(last_good));
            }
            model.apply_gradients(&grads, config.learning_rate);
            if !model.is_finite() {
                return Err(diverged(last_good));
            }
            sum_mlm += l_mlm;
            sum_cl += l_cl;
            batches += 1;
        }
        let entry = EpochLog {
            epoch,
            mlm: sum_mlm / batches as f64,
            contrastive: sum_cl / batches as f64,
            total: (config.mlm_weight * sum_mlm + sum_cl) / batches as f64,
        };
        log::debug!("epoch {epoch}: mlm {:.4} cl {:.4}", entry.mlm, entry.contrastive);
        log.epochs.push(entry);
    }
    Ok(TrainOutput { model, log, skipped })
}

/// How well a model separates behavior-preserving variants from mutants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub pairs: usize,
    pub mean_variant: f64,
    pub mean_mutant: f64,
    /// Fraction of pairs whose variant scores strictly above the mutant.
    pub ordering_accuracy: f64,
}

impl Separation {
    pub fn gap(&self) -> f64 {
        self.mean_variant - self.mean_mutant
    }
}

/// For every unit with both a syntactic variant and a mutant, compare
/// `cos(unit, variant)` with `cos(unit, mutant)`.
pub fn separation(
    model: &EncoderModel,
    records: &[TrainingRecord],
    pooling: PoolingStrategy,
    seed: u64,
) -> Result<Separation> {
    let classes: BTreeSet<OperatorClass> = OperatorClass::ALL.into_iter().collect();
    let (mut sv, mut sm, mut wins, mut pairs) = (0.0, 0.0, 0usize, 0usize);
    for (i, rec) in records.iter().enumerate() {
        let unit = SourceUnit::new(rec.lang, rec.code.as_str());
        if unit.has_error() {
            continue;
        }
        let s = derive_seed(seed, &[i as u64]);
        let Some(variant) = sample_variant(&unit, &TransformRule::ALL, derive_seed(s, &[1])) else {
            continue;
        };
        let Some(mutant) = mutate_unit(&unit, &classes, derive_seed(s, &[2]))? else {
            continue;
        };
        let enc = |u: &SourceUnit| -> Result<crate::encoder::Embedding> {
            model.encode(&code_tokens(u)?, pooling, None)
        };
        let r = enc(&unit)?;
        let cv = crate::encoder::cosine(&r, &enc(&variant)?)?;
        let cm = crate::encoder::cosine(&r, &enc(&mutant)?)?;
        sv += cv;
        sm += cm;
        wins += usize::from(cv > cm);
        pairs += 1;
    }
    if pairs == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(Separation {
        pairs,
        mean_variant: sv / pairs as f64,
        mean_mutant: sm / pairs as f64,
        ordering_accuracy: wins as f64 / pairs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_plan_size_and_range() {
        for len in [0usize, 1, 3, 7, 10, 33, 100] {
            let p = MaskPlan::sample(len, 50, len as u64);
            assert_eq!(p.len(), (0.15 * len as f64).round() as usize);
            let idx: BTreeSet<usize> = p.entries.iter().map(|e| e.0).collect();
            assert_eq!(idx.len(), p.len());
            assert!(idx.iter().all(|&i| i < len));
            for (_, a) in &p.entries {
                if let MaskAction::ReplaceWithRandom(t) = a {
                    assert!((5..50).contains(t));
                }
            }
        }
    }

    #[test]
    fn empty_plan_gives_zero_loss() {
        let (m, mlm, _) = tiny_instance(1, PoolingStrategy::Summary).unwrap();
        let (l, g) = mlm_loss(&m, &mlm.pair, &MaskPlan::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.e.iter().chain(&g.w).chain(&g.b).all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let (mut m, mlm, _) = tiny_instance(2, PoolingStrategy::Summary).unwrap();
        m.e.iter_mut().for_each(|x| *x = 0.0);
        let plan = MaskPlan {
            entries: vec![(0, MaskAction::ReplaceWithMask)],
        };
        let (l, _) = mlm_loss(&m, &mlm.pair, &plan).unwrap();
        assert!((l - (m.vocab.len() as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn symmetric_batch_of_one_gives_ln_two() {
        let (l, dpos, dneg) = anchor_loss(&[0.37], &[0.37], 0, 0.05);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!((dpos[0] + dneg[0]).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_as_temperature_drops() {
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.5, 0.1, 0.05, 0.01, 0.001] {
            let (l, _, _) = anchor_loss(&[1.0, 0.2], &[0.0, 0.3], 0, tau);
            assert!(l <= prev);
            prev = l;
        }
        assert!(prev < 1e-100);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (s, pooling) in PoolingStrategy::ALL.into_iter().enumerate() {
            let (m, mlm, cl) = tiny_instance(10 + s as u64, pooling).unwrap();
            assert!(grad_check(&m, &mlm, 1e-5).unwrap() < 1e-4);
            assert!(grad_check(&m, &cl, 1e-5).unwrap() < 1e-4, "{pooling}");
        }
    }

    #[test]
    fn planted_fault_is_caught() {
        let (m, mlm, cl) = tiny_instance(3, PoolingStrategy::LastAvg).unwrap();
        let e1 = grad_check(&m, &ScaledGradient(mlm, 2.0), 1e-5).unwrap();
        let e2 = grad_check(&m, &ScaledGradient(cl, 2.0), 1e-5).unwrap();
        assert!((e1 - 1.0).abs() < 0.05 && (e2 - 1.0).abs() < 0.05, "{e1} {e2}");
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let (m, mlm, _) = tiny_instance(3, PoolingStrategy::LastAvg).unwrap();
        assert!(grad_check(&m, &mlm, 0.1).is_err());
    }

    #[test]
    fn negative_needs_an_operator() {
        let unit = SourceUnit::new(Lang::Python, "def f():\n    return 1\n");
        assert!(matches!(build_negative(&unit, 0), Err(Error::NoMutableSite)));
        let unit = SourceUnit::new(Lang::Python, "def f(a, b):\n    a = a + b\n    return a\n");
        assert_eq!(build_negative(&unit, 4).unwrap(), build_negative(&unit, 4).unwrap());
    }

    #[test]
    fn positive_without_sites_uses_dropout() {
        let unit = SourceUnit::new(Lang::Python, "def f(a):\n    return a\n");
        for s in 0..20 {
            let p = build_positive(&unit, s).unwrap();
            assert!(p.dropout);
            assert_eq!(p.anchor, p.positive);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = [
            TrainerConfig { tau: 0.0, ..Default::default() },
            TrainerConfig { batch_size: 1, ..Default::default() },
            TrainerConfig { mlm_weight: 0.5, ..Default::default() },
            TrainerConfig { dropout: 1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
