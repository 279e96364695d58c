//! Test-free correctness score: gate the prediction, sketch both sides,
//! embed them and threshold the cosine similarity.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::code::{tokenize, Lang, SourceUnit};
use crate::corpus::CorpusRecord;
use crate::encoder::{cosine, hash_embed, read_checkpoint, Embedding, EncoderModel, PoolingStrategy};
use crate::error::{Error, Result};
use crate::par;
use crate::remote::{ClientConfig, RemoteEmbedder, Snippet};
use crate::sandbox::{self, CommandSpec};
use crate::sketch::sketch_unit;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_HASH_DIM: usize = 256;

/// Validity check applied to the prediction before scoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Gate {
    /// The prediction parses without error nodes.
    #[default]
    ParseOnly,
    /// An external command accepts the prediction. Each template names the
    /// file holding the unit with `{file}`; a language without a command
    /// is a configuration error.
    Compile {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        python: Option<CommandSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        java: Option<CommandSpec>,
    },
}

impl Gate {
    fn command(&self, lang: Lang) -> Option<&CommandSpec> {
        match (self, lang) {
            (Gate::ParseOnly, _) => None,
            (Gate::Compile { python, .. }, Lang::Python) => python.as_ref(),
            (Gate::Compile { java, .. }, Lang::Java) => java.as_ref(),
        }
    }

    /// Whether `unit` passes. A compile timeout counts as failure.
    pub fn check(&self, unit: &SourceUnit) -> Result<bool> {
        if matches!(self, Gate::ParseOnly) {
            return Ok(!unit.try_tree()?.has_error());
        }
        let spec = self
            .command(unit.lang())
            .ok_or_else(|| Error::Config(format!("no compile command configured for {}", unit.lang())))?;
        let name = match unit.lang() {
            Lang::Python => "unit.py",
            Lang::Java => "Main.java",
        };
        let argv = sandbox::expand_template(&spec.template, std::path::Path::new(name))?;
        let out = sandbox::run_with_files(&[(name, unit.text())], &argv, spec.timeout())?;
        if out.timed_out {
            log::warn!("compile gate timed out after {:.1}s", spec.timeout_secs);
        }
        Ok(out.success())
    }
}

/// Where embeddings come from, as written in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    /// A trained encoder checkpoint.
    Model { checkpoint: PathBuf },
    /// Seeded feature hashing of the sketched tokens; needs no training.
    Hash {
        #[serde(default = "default_hash_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// An HTTP embedding service.
    Remote(ClientConfig),
}

fn default_hash_dim() -> usize {
    DEFAULT_HASH_DIM
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Hash {
            dim: DEFAULT_HASH_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Binary score is 1 only when the similarity is strictly above this.
    pub threshold: f64,
    pub gate: Gate,
    pub pooling: PoolingStrategy,
    pub backend: BackendSpec,
    /// Report the similarity instead of the binary score where a single
    /// value is wanted.
    pub continuous: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            threshold: DEFAULT_THRESHOLD,
            gate: Gate::ParseOnly,
            pooling: PoolingStrategy::SummaryRelu,
            backend: BackendSpec::default(),
            continuous: false,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if let BackendSpec::Hash { dim: 0, .. } = self.backend {
            return Err(Error::Config("hash dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub gate_passed: bool,
    /// Cosine similarity clipped to `[0, 1]`; 0 when the gate fails.
    pub similarity: f64,
    pub binary: u8,
}

impl ScoreResult {
    pub const GATE_FAILED: ScoreResult = ScoreResult {
        gate_passed: false,
        similarity: 0.0,
        binary: 0,
    };

    /// Binarize an already computed similarity.
    pub fn from_similarity(similarity: f64, threshold: f64) -> Self {
        let similarity = similarity.clamp(0.0, 1.0);
        ScoreResult {
            gate_passed: true,
            similarity,
            binary: u8::from(similarity > threshold),
        }
    }

    /// The single value reported in continuous or binary mode.
    pub fn value(&self, continuous: bool) -> f64 {
        if continuous {
            self.similarity
        } else {
            f64::from(self.binary)
        }
    }
}

/// A loaded embedding source.
#[derive(Debug)]
pub enum Backend {
    Model(Box<EncoderModel>),
    Hash { dim: usize, seed: u64 },
    Remote(RemoteEmbedder),
}

impl Backend {
    /// Load a checkpoint or connect to a service. The pooling given here
    /// overrides the one in a remote client configuration.
    pub fn load(spec: &BackendSpec, pooling: PoolingStrategy) -> Result<Self> {
        Ok(match spec {
            BackendSpec::Model { checkpoint } => Backend::Model(Box::new(read_checkpoint(checkpoint)?)),
            BackendSpec::Hash { dim, seed } => Backend::Hash { dim: *dim, seed: *seed },
            BackendSpec::Remote(c) => {
                let mut c = c.clone();
                c.pooling = pooling;
                Backend::Remote(RemoteEmbedder::connect(c)?)
            }
        })
    }

    /// Embed already sketched units, in order.
    pub fn embed(&self, units: &[SourceUnit], pooling: PoolingStrategy) -> Result<Vec<Embedding>> {
        match self {
            Backend::Model(m) => par::map(units, |_, u| m.encode(&tokenize(u), pooling, None))
                .into_iter()
                .collect(),
            Backend::Hash { dim, seed } => Ok(par::map(units, |_, u| hash_embed(&tokenize(u), *dim, *seed))),
            Backend::Remote(client) => {
                let snippets: Vec<Snippet> = units
                    .iter()
                    .map(|u| Snippet {
                        lang: u.lang(),
                        code: u.text().to_owned(),
                    })
                    .collect();
                client.embed(&snippets)
            }
        }
    }
}

/// Gate, sketch, embed and compare one pair.
pub fn score(
    reference: &SourceUnit,
    prediction: &SourceUnit,
    config: &ScoreConfig,
    backend: &Backend,
) -> Result<ScoreResult> {
    let scorer = ScorerRef { config, backend };
    let mut out = scorer.score_many(&[("reference", reference, prediction)])?;
    Ok(out.remove(0))
}

/// Config and backend together.
#[derive(Debug)]
pub struct Scorer {
    pub config: ScoreConfig,
    pub backend: Backend,
}

impl Scorer {
    pub fn new(config: ScoreConfig) -> Result<Self> {
        config.validate()?;
        let backend = Backend::load(&config.backend, config.pooling)?;
        Ok(Scorer { config, backend })
    }

    pub fn with_backend(config: ScoreConfig, backend: Backend) -> Result<Self> {
        config.validate()?;
        Ok(Scorer { config, backend })
    }

    pub fn score(&self, reference: &SourceUnit, prediction: &SourceUnit) -> Result<ScoreResult> {
        score(reference, prediction, &self.config, &self.backend)
    }

    /// Score every record's prediction (or its reference when it has none)
    /// against its reference, in record order.
    pub fn score_records(&self, records: &[CorpusRecord]) -> Result<Vec<ScoreResult>> {
        let units: Vec<(SourceUnit, SourceUnit)> = records
            .iter()
            .map(|r| (r.reference_unit(), r.prediction_unit()))
            .collect();
        let triples: Vec<(&str, &SourceUnit, &SourceUnit)> = records
            .iter()
            .zip(&units)
            .map(|(r, (a, b))| (r.id.as_str(), a, b))
            .collect();
        ScorerRef {
            config: &self.config,
            backend: &self.backend,
        }
        .score_many(&triples)
    }
}

struct ScorerRef<'a> {
    config: &'a ScoreConfig,
    backend: &'a Backend,
}

impl ScorerRef<'_> {
    fn score_many(&self, pairs: &[(&str, &SourceUnit, &SourceUnit)]) -> Result<Vec<ScoreResult>> {
        self.config.validate()?;
        let prepared = par::map(pairs, |_, &(id, reference, prediction)| {
            let sketched_ref = sketch_unit(reference).map_err(|e| Error::InvalidReference {
                id: id.to_owned(),
                reason: e.to_string(),
            })?;
            if !self.config.gate.check(prediction)? {
                return Ok(None);
            }
            match sketch_unit(prediction) {
                Ok(p) => Ok(Some((sketched_ref, p))),
                Err(Error::ParseErrorInput(_)) => {
                    log::warn!("{id}: prediction passed the gate but does not parse; scoring 0");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        });
        let prepared: Vec<Option<(SourceUnit, SourceUnit)>> = prepared.into_iter().collect::<Result<_>>()?;
        let mut batch = Vec::new();
        for (r, p) in prepared.iter().flatten() {
            batch.push(r.clone());
            batch.push(p.clone());
        }
        let vectors = self.backend.embed(&batch, self.config.pooling)?;
        if vectors.len() != batch.len() {
            return Err(Error::BackendFailure(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                vectors.len()
            )));
        }
        let mut pairs_of_vectors = vectors.chunks(2);
        prepared
            .iter()
            .map(|p| match p {
                None => Ok(ScoreResult::GATE_FAILED),
                Some(_) => {
                    let v = pairs_of_vectors.next().expect("one vector pair per gated unit");
                    Ok(ScoreResult::from_similarity(cosine(&v[0], &v[1])?, self.config.threshold))
                }
            })
            .collect()
    }
}
