//! Experiments over labelled corpora: perturb predictions, score them with
//! every configured metric, and compare the scores with the pass@1 labels
//! through mean absolute error and a binary classification view.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::code::SourceUnit;
use crate::corpus::{CorpusRecord, TestOracle};
use crate::error::{Error, Result};
use crate::metrics::{MetricContext, MetricKind, CRYSTAL_TOP_K};
use crate::mutate::{mutate_corpus, MutationPlan};
use crate::par;
use crate::rng::derive_seed;
use crate::scorer::Scorer;
use crate::sketch::sketch_unit;
use crate::transform::{sample_variant, TransformRule};

/// Seeds used for seeded perturbations unless configured otherwise.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Cut-off used to binarize continuous metrics for classification.
pub const BINARY_CUTOFF: f64 = 0.5;

/// Mean absolute error between metric values and labels.
pub fn mae(values: &[f64], labels: &[f64]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::LengthMismatch(values.len(), labels.len()));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = values.iter().zip(labels).map(|(v, l)| (v - l).abs()).sum();
    Ok(total / values.len() as f64)
}

/// Confusion counts and the statistics derived from them. Precision and
/// recall are 0 when their denominators are 0, and so is F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(predicted: &[u8], labels: &[u8]) -> Result<Classification> {
    if predicted.len() != labels.len() {
        return Err(Error::LengthMismatch(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => return Err(Error::Config(format!("non-binary value in ({p}, {l})"))),
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Classification {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, predicted.len()),
        precision,
        recall,
        f1,
    })
}

/// How predictions are perturbed before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// No change.
    Original,
    /// Sketch predictions only.
    TokenO2S,
    /// Sketch references and predictions.
    TokenS2S,
    /// A random semantics-preserving variant of each prediction.
    Syntax,
    /// Mutate a share of the passing predictions and set their label to 0.
    Semantic { ratio: f64 },
}

impl PerturbationKind {
    /// Whether the outcome depends on the seed.
    pub fn is_seeded(self) -> bool {
        matches!(self, PerturbationKind::Syntax | PerturbationKind::Semantic { .. })
    }

    /// Seeds to aggregate over by default.
    pub fn default_seeds(self) -> Vec<u64> {
        if self.is_seeded() {
            DEFAULT_SEEDS.to_vec()
        } else {
            DEFAULT_SEEDS[..1].to_vec()
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationKind::Original => f.write_str("original"),
            PerturbationKind::TokenO2S => f.write_str("o2s"),
            PerturbationKind::TokenS2S => f.write_str("s2s"),
            PerturbationKind::Syntax => f.write_str("syntax"),
            PerturbationKind::Semantic { ratio } => write!(f, "semantic-{}", (ratio * 100.0).round()),
        }
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    /// `original`, `o2s`, `s2s`, `syntax`, or `semantic-<percent>`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "original" | "none" => PerturbationKind::Original,
            "o2s" => PerturbationKind::TokenO2S,
            "s2s" => PerturbationKind::TokenS2S,
            "syntax" => PerturbationKind::Syntax,
            other => {
                let pct = other
                    .strip_prefix("semantic-")
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| (0.0..=100.0).contains(p))
                    .ok_or_else(|| Error::Config(format!("unknown perturbation `{other}`")))?;
                PerturbationKind::Semantic { ratio: pct / 100.0 }
            }
        })
    }
}

fn sketched(unit: &SourceUnit, id: &str) -> String {
    match sketch_unit(unit) {
        Ok(u) => u.text().to_owned(),
        Err(e) => {
            log::warn!("{id}: left unsketched ({e})");
            unit.text().to_owned()
        }
    }
}

/// Apply `kind` with `seed`. Records without a prediction are an error.
pub fn perturb_corpus(
    records: &[CorpusRecord],
    kind: PerturbationKind,
    seed: u64,
    oracle: &dyn TestOracle,
) -> Result<Vec<CorpusRecord>> {
    if let Some(r) = records.iter().find(|r| r.prediction.is_none()) {
        return Err(Error::Config(format!("record {} has no prediction", r.id)));
    }
    match kind {
        PerturbationKind::Original => Ok(records.to_vec()),
        PerturbationKind::TokenO2S | PerturbationKind::TokenS2S => Ok(par::map(records, |_, r| {
            let mut out = r.clone();
            out.prediction = Some(sketched(&r.prediction_unit(), &r.id));
            if kind == PerturbationKind::TokenS2S {
                out.reference = sketched(&r.reference_unit(), &r.id);
            }
            out
        })),
        PerturbationKind::Syntax => Ok(par::map(records, |i, r| {
            let mut out = r.clone();
            let s = derive_seed(seed, &[0x5e7a, i as u64]);
            if let Some(v) = sample_variant(&r.prediction_unit(), &TransformRule::ALL, s) {
                out.prediction = Some(v.text().to_owned());
            }
            out
        })),
        PerturbationKind::Semantic { ratio } => mutate_corpus(records, &MutationPlan::all_classes(ratio, seed)?, oracle),
    }
}

/// A score column in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentMetric {
    Match(MetricKind),
    /// 1 when the texts are byte-identical.
    ExactMatch,
    /// Binary test-free score.
    CodeScoreR,
    /// Its similarity before thresholding.
    CodeScoreRSim,
}

impl ExperimentMetric {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentMetric::Match(k) => k.name(),
            ExperimentMetric::ExactMatch => "exact-match",
            ExperimentMetric::CodeScoreR => "codescore-r",
            ExperimentMetric::CodeScoreRSim => "codescore-r-sim",
        }
    }

    fn needs_scorer(self) -> bool {
        matches!(self, ExperimentMetric::CodeScoreR | ExperimentMetric::CodeScoreRSim)
    }
}

impl fmt::Display for ExperimentMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exact-match" => ExperimentMetric::ExactMatch,
            "codescore-r" => ExperimentMetric::CodeScoreR,
            "codescore-r-sim" => ExperimentMetric::CodeScoreRSim,
            other => ExperimentMetric::Match(other.parse()?),
        })
    }
}

/// One metric over one corpus condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean_score: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub mean_label: f64,
    pub metrics: Vec<MetricSummary>,
    pub confusion: Vec<Classification>,
}

/// Per-record scores of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub seed: u64,
    pub id: String,
    pub pass1: u8,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: String,
    pub ratio: Option<f64>,
    pub seeds: Vec<u64>,
    pub records: usize,
    pub metrics: Vec<String>,
    /// Seed means of every summary field.
    pub mean: Vec<MetricSummary>,
    pub per_seed: Vec<SeedRun>,
    pub rows: Vec<ScoreRow>,
}

/// What an experiment needs besides the corpus.
pub struct ExperimentSetup<'a> {
    pub metrics: Vec<ExperimentMetric>,
    pub scorer: Option<&'a Scorer>,
    pub oracle: &'a dyn TestOracle,
    pub context: MetricContext,
}

impl<'a> ExperimentSetup<'a> {
    /// Match metrics use trivially shared n-grams from the references of
    /// `records`.
    pub fn new(
        records: &[CorpusRecord],
        metrics: Vec<ExperimentMetric>,
        scorer: Option<&'a Scorer>,
        oracle: &'a dyn TestOracle,
    ) -> Self {
        let refs: Vec<SourceUnit> = records.iter().map(|r| r.reference_unit()).collect();
        ExperimentSetup {
            metrics,
            scorer,
            oracle,
            context: MetricContext::default().with_shared_ngrams(&refs, CRYSTAL_TOP_K),
        }
    }
}

fn label(r: &CorpusRecord) -> Result<u8> {
    r.pass1
        .ok_or_else(|| Error::Config(format!("record {} has no pass1 label", r.id)))
}

/// Score columns for `records`, one vector per metric.
fn score_columns(records: &[CorpusRecord], setup: &ExperimentSetup) -> Result<Vec<Vec<f64>>> {
    let scorer_results = match setup.metrics.iter().any(|m| m.needs_scorer()) {
        true => {
            let scorer = setup
                .scorer
                .ok_or_else(|| Error::Config("codescore-r requested without a scorer".into()))?;
            Some(scorer.score_records(records)?)
        }
        false => None,
    };
    let units: Vec<(SourceUnit, SourceUnit)> = records
        .iter()
        .map(|r| (r.reference_unit(), r.prediction_unit()))
        .collect();
    Ok(setup
        .metrics
        .iter()
        .map(|&m| match m {
            ExperimentMetric::Match(k) => par::map(&units, |_, (a, b)| setup.context.score(k, a, b)),
            ExperimentMetric::ExactMatch => units
                .iter()
                .map(|(a, b)| f64::from(u8::from(a.text() == b.text())))
                .collect(),
            ExperimentMetric::CodeScoreR => scorer_results
                .iter()
                .flatten()
                .map(|s| f64::from(s.binary))
                .collect(),
            ExperimentMetric::CodeScoreRSim => scorer_results.iter().flatten().map(|s| s.similarity).collect(),
        })
        .collect())
}

fn binarize(m: ExperimentMetric, v: f64, threshold: f64) -> u8 {
    match m {
        ExperimentMetric::CodeScoreR | ExperimentMetric::ExactMatch => u8::from(v >= 1.0),
        ExperimentMetric::CodeScoreRSim => u8::from(v > threshold),
        ExperimentMetric::Match(_) => u8::from(v > BINARY_CUTOFF),
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Perturb with each seed, score, and summarize against the labels.
pub fn run_experiment(
    records: &[CorpusRecord],
    kind: PerturbationKind,
    seeds: &[u64],
    setup: &ExperimentSetup,
) -> Result<MetricReport> {
    if records.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let threshold = setup.scorer.map_or(BINARY_CUTOFF, |s| s.config.threshold);
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut rows = Vec::new();
    for &seed in seeds {
        let perturbed = perturb_corpus(records, kind, seed, setup.oracle)?;
        let labels: Vec<u8> = perturbed.iter().map(label).collect::<Result<_>>()?;
        let label_f: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let columns = score_columns(&perturbed, setup)?;
        let mut metrics = Vec::new();
        let mut confusion = Vec::new();
        for (&m, col) in setup.metrics.iter().zip(&columns) {
            let binary: Vec<u8> = col.iter().map(|&v| binarize(m, v, threshold)).collect();
            let c = classification_metrics(&binary, &labels)?;
            metrics.push(MetricSummary {
                metric: m.name().to_owned(),
                mean_score: mean(col.iter().copied()),
                mae: mae(col, &label_f)?,
                accuracy: c.accuracy,
                precision: c.precision,
                recall: c.recall,
                f1: c.f1,
            });
            confusion.push(c);
        }
        for (i, r) in perturbed.iter().enumerate() {
            rows.push(ScoreRow {
                seed,
                id: r.id.clone(),
                pass1: labels[i],
                values: columns.iter().map(|c| c[i]).collect(),
            });
        }
        per_seed.push(SeedRun {
            seed,
            mean_label: mean(label_f),
            metrics,
            confusion,
        });
    }
    let mean_summary = setup
        .metrics
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let field = |f: fn(&MetricSummary) -> f64| mean(per_seed.iter().map(|s| f(&s.metrics[j])));
            MetricSummary {
                metric: m.name().to_owned(),
                mean_score: field(|s| s.mean_score),
                mae: field(|s| s.mae),
                accuracy: field(|s| s.accuracy),
                precision: field(|s| s.precision),
                recall: field(|s| s.recall),
                f1: field(|s| s.f1),
            }
        })
        .collect();
    Ok(MetricReport {
        kind: kind.to_string(),
        ratio: match kind {
            PerturbationKind::Semantic { ratio } => Some(ratio),
            _ => None,
        },
        seeds: seeds.to_vec(),
        records: records.len(),
        metrics: setup.metrics.iter().map(|m| m.name().to_owned()).collect(),
        mean: mean_summary,
        per_seed,
        rows,
    })
}

impl MetricReport {
    /// Structured report: metadata first, then seed means, per-seed
    /// values and the per-record table.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Per-record scores as CSV: `seed,id,pass1,<metric>...`.
    pub fn scores_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["seed".to_owned(), "id".to_owned(), "pass1".to_owned()];
        header.extend(self.metrics.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.seed.to_string(), r.id.clone(), r.pass1.to_string()];
            rec.extend(r.values.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Which summary field a table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableField {
    Mae,
    MeanScore,
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl TableField {
    fn get(self, s: &MetricSummary) -> f64 {
        match self {
            TableField::Mae => s.mae,
            TableField::MeanScore => s.mean_score,
            TableField::Accuracy => s.accuracy,
            TableField::Precision => s.precision,
            TableField::Recall => s.recall,
            TableField::F1 => s.f1,
        }
    }
}

/// One row per report, one column per metric.
pub fn summary_csv(reports: &[MetricReport], field: TableField) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else {
        return out;
    };
    out.push_str("condition");
    for m in &first.metrics {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for r in reports {
        out.push_str(&r.kind);
        for s in &r.mean {
            let _ = write!(out, ",{:.4}", field.get(s));
        }
        out.push('\n');
    }
    out
}

/// Aligned text rendering of [`summary_csv`].
pub fn render_table(reports: &[MetricReport], field: TableField) -> String {
    let rows: Vec<Vec<String>> = summary_csv(reports, field)
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    let Some(width) = rows.first().map(Vec::len) else {
        return String::new();
    };
    let widths: Vec<usize> = (0..width)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
        }
    }
    out
}
