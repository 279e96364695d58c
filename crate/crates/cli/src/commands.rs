//! One function per subcommand.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use serde::Serialize;
use synth_eval::code::{Lang, SourceUnit};
use synth_eval::corpus::{read_corpus, write_corpus_to, CorpusRecord};
use synth_eval::encoder::{write_checkpoint, PoolingStrategy};
use synth_eval::exec::Executor;
use synth_eval::harness::{
    perturb_corpus, render_table, run_experiment, summary_csv, ExperimentMetric, ExperimentSetup, MetricReport,
    PerturbationKind, TableField, DEFAULT_SEEDS,
};
use synth_eval::metrics::{MetricContext, MetricKind, CRYSTAL_TOP_K};
use synth_eval::mutate::{mutate_corpus, mutate_unit, MutationPlan, OperatorClass};
use synth_eval::remote::ClientConfig;
use synth_eval::rng::derive_seed;
use synth_eval::scorer::{BackendSpec, ScoreConfig, Scorer};
use synth_eval::sketch::sketch;
use synth_eval::synth::synthetic_corpus;
use synth_eval::trainer::{
    grad_check, read_training_corpus, separation, tiny_instance, train, ScaledGradient, TrainerConfig,
};
use synth_eval::transform::{sample_variant, TransformRule};
use synth_eval::{par, Error};

use crate::config::{Header, RunConfig};
use crate::{
    BackendKind, Cli, Command, GradCheckArgs, Internal, MetricsArgs, MutateArgs, PairArgs, PerturbArgs, Preset,
    ReportArgs, ScoreArgs, ScorerArgs, SketchArgs, TrainArgs, TransformArgs,
};

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    header: Header,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?.override_with(cli.seed, cli.jobs, cli.lang)?;
    let header = Header {
        tool: concat!("synth-eval ", env!("CARGO_PKG_VERSION")),
        command: cli.command.name().to_owned(),
        args: std::env::args().skip(1).collect(),
        config: cfg.clone(),
    };
    info!("resolved run: {}", serde_json::to_string(&header)?);
    let ctx = Ctx {
        cfg,
        out: cli.out,
        header,
    };
    par::with_jobs(ctx.cfg.jobs, || match &cli.command {
        Command::Sketch(a) => sketch_cmd(&ctx, a),
        Command::Transform(a) => transform_cmd(&ctx, a),
        Command::Mutate(a) => mutate_cmd(&ctx, a),
        Command::Metrics(a) => metrics_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Score(a) => score_cmd(&ctx, a),
        Command::Perturb(a) => perturb_cmd(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
        Command::GradCheck(a) => grad_check_cmd(&ctx, a),
    })
}

// ------------------------------------------------------------------ helpers

fn read_input(path: Option<&Path>) -> anyhow::Result<String> {
    match path {
        Some(p) if p.as_os_str() != "-" => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
            Ok(s)
        }
    }
}

fn lang_for(ctx: &Ctx, path: Option<&Path>) -> anyhow::Result<Lang> {
    ctx.cfg
        .lang
        .or_else(|| path.and_then(Lang::from_path))
        .ok_or_else(|| Error::Config("cannot tell the language; pass --lang".into()).into())
}

fn read_unit(ctx: &Ctx, path: Option<&Path>) -> anyhow::Result<SourceUnit> {
    Ok(SourceUnit::new(lang_for(ctx, path)?, read_input(path)?))
}

fn read_records(path: &Path) -> anyhow::Result<Vec<CorpusRecord>> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

/// Write to `--out` when given, stdout otherwise.
fn emit(ctx: &Ctx, text: &str) -> anyhow::Result<()> {
    match &ctx.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            so.flush()?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pretty<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `<path><suffix>`, keeping the full original file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Outputs that cannot carry a header (code, JSONL) get a `.run.json`
/// sidecar when written to a file.
fn run_sidecar(ctx: &Ctx, path: &Path) -> anyhow::Result<()> {
    write_file(&sidecar(path, ".run.json"), &pretty(&ctx.header)?)
}

fn csv_text(header: &Header, rows: Vec<Vec<String>>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(header.comment().into_bytes());
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Reference/prediction pairs from either `--ref/--pred` or `--corpus`.
fn pairs(ctx: &Ctx, input: &PairArgs) -> anyhow::Result<Vec<CorpusRecord>> {
    match (&input.reference, &input.pred, &input.corpus) {
        (Some(r), Some(p), None) => {
            let lang = lang_for(ctx, Some(r))?;
            Ok(vec![CorpusRecord {
                id: "pair".into(),
                lang,
                nl: None,
                reference: read_input(Some(r))?,
                prediction: Some(read_input(Some(p))?),
                pass1: None,
                tests: None,
                entry: None,
            }])
        }
        (None, None, Some(c)) => read_records(c),
        _ => Err(Error::Config("give either --ref and --pred, or --corpus".into()).into()),
    }
}

fn score_config(ctx: &Ctx, a: &ScorerArgs) -> anyhow::Result<ScoreConfig> {
    let mut sc = ctx.cfg.score.clone();
    if let Some(t) = a.threshold {
        sc.threshold = t;
    }
    if let Some(p) = a.pooling {
        sc.pooling = p;
    }
    let kind = match (a.backend, &a.checkpoint) {
        (None, Some(_)) => Some(BackendKind::Model),
        (k, _) => k,
    };
    match kind {
        None => {}
        Some(BackendKind::Hash) => {
            if !matches!(sc.backend, BackendSpec::Hash { .. }) {
                sc.backend = BackendSpec::default();
            }
        }
        Some(BackendKind::Model) => {
            let checkpoint = match (&a.checkpoint, &sc.backend) {
                (Some(c), _) => c.clone(),
                (None, BackendSpec::Model { checkpoint }) => checkpoint.clone(),
                _ => bail!(Error::Config("--backend model needs --checkpoint".into())),
            };
            sc.backend = BackendSpec::Model { checkpoint };
        }
        Some(BackendKind::Remote) => {
            let Some(url) = a.endpoint.clone() else {
                bail!(Error::Config("--backend remote needs --endpoint".into()));
            };
            sc.backend = BackendSpec::Remote(ClientConfig::new(url, a.model_id.clone(), sc.pooling));
        }
    }
    sc.validate()?;
    Ok(sc)
}

fn with_score_config(ctx: &Ctx, sc: &ScoreConfig) -> Header {
    let mut h = ctx.header.clone();
    h.config.score = sc.clone();
    h
}

// ------------------------------------------------------------------ commands

fn sketch_cmd(ctx: &Ctx, a: &SketchArgs) -> anyhow::Result<()> {
    let unit = read_unit(ctx, a.input.as_deref())?;
    let (sketched, map) = sketch(&unit)?;
    emit(ctx, sketched.text())?;
    let map_path = a.map.clone().or_else(|| ctx.out.as_ref().map(|o| sidecar(o, ".map.json")));
    match map_path {
        Some(p) => {
            #[derive(Serialize)]
            struct MapFile<'a> {
                header: &'a Header,
                map: &'a synth_eval::sketch::SketchMap,
            }
            write_file(&p, &pretty(&MapFile { header: &ctx.header, map: &map })?)
        }
        None => {
            info!("placeholder map not written (no --map or --out)");
            Ok(())
        }
    }
}

fn transform_cmd(ctx: &Ctx, a: &TransformArgs) -> anyhow::Result<()> {
    let unit = read_unit(ctx, a.input.as_deref())?;
    unit.require_valid()?;
    let rules = if a.rules.is_empty() { TransformRule::ALL.to_vec() } else { a.rules.clone() };
    let text = match sample_variant(&unit, &rules, ctx.cfg.seed) {
        Some(v) => v.text().to_owned(),
        None => {
            warn!("no transform site; output is unchanged");
            unit.text().to_owned()
        }
    };
    emit(ctx, &text)?;
    ctx.out.as_deref().map_or(Ok(()), |p| run_sidecar(ctx, p))
}

fn mutate_cmd(ctx: &Ctx, a: &MutateArgs) -> anyhow::Result<()> {
    let classes: Vec<OperatorClass> = if a.classes.is_empty() { OperatorClass::ALL.to_vec() } else { a.classes.clone() };
    let is_corpus = a.input.as_deref().and_then(Path::extension).is_some_and(|e| e == "jsonl");
    let text = if is_corpus {
        let records = read_records(a.input.as_deref().unwrap())?;
        let plan = MutationPlan::new(a.ratio, ctx.cfg.seed, classes)?;
        let out = mutate_corpus(&records, &plan, &Executor::new(ctx.cfg.sandbox.clone()))?;
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &out)?;
        String::from_utf8(buf)?
    } else {
        let unit = read_unit(ctx, a.input.as_deref())?;
        let set = classes.into_iter().collect();
        match mutate_unit(&unit, &set, ctx.cfg.seed)? {
            Some(m) => m.text().to_owned(),
            None => bail!(Error::NoMutableSite),
        }
    };
    emit(ctx, &text)?;
    ctx.out.as_deref().map_or(Ok(()), |p| run_sidecar(ctx, p))
}

fn metrics_cmd(ctx: &Ctx, a: &MetricsArgs) -> anyhow::Result<()> {
    let records = pairs(ctx, &a.input)?;
    let kinds = if a.kinds.is_empty() { MetricKind::ALL.to_vec() } else { a.kinds.clone() };
    let refs: Vec<SourceUnit> = records.iter().map(CorpusRecord::reference_unit).collect();
    let mc = MetricContext::default().with_shared_ngrams(&refs, CRYSTAL_TOP_K);
    let scores = par::map(&records, |_, r| {
        let (x, y) = (r.reference_unit(), r.prediction_unit());
        kinds.iter().map(|&k| mc.score(k, &x, &y)).collect::<Vec<f64>>()
    });
    let mut rows = vec![["id", "pass1"].into_iter().map(String::from).chain(kinds.iter().map(|k| k.name().to_owned())).collect()];
    for (r, s) in records.iter().zip(scores) {
        let mut row = vec![r.id.clone(), r.pass1.map(|p| p.to_string()).unwrap_or_default()];
        row.extend(s.iter().map(|v| format!("{v:.6}")));
        rows.push(row);
    }
    emit(ctx, &csv_text(&ctx.header, rows)?)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> anyhow::Result<()> {
    let records = match (&a.corpus, a.synthetic) {
        (Some(p), _) => read_training_corpus(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(n)) => {
            let langs = ctx.cfg.lang.map_or(vec![Lang::Python, Lang::Java], |l| vec![l]);
            synthetic_corpus(n, a.synthetic_seed.unwrap_or(ctx.cfg.seed), &langs)
        }
        (None, None) => bail!(Error::Config("give --corpus or --synthetic".into())),
    };
    if a.holdout >= records.len() {
        bail!(Error::Config(format!("--holdout {} leaves nothing to train on", a.holdout)));
    }
    let (fit, held) = records.split_at(records.len() - a.holdout);
    let tc = match a.preset {
        Preset::Config => ctx.cfg.train.clone(),
        Preset::Synthetic => TrainerConfig {
            seed: ctx.cfg.train.seed,
            ..TrainerConfig::synthetic_preset()
        },
    };
    let mut header = ctx.header.clone();
    header.config.train = tc.clone();
    let checkpoint = a
        .checkpoint
        .clone()
        .or_else(|| ctx.out.clone())
        .ok_or_else(|| Error::Config("give --checkpoint or --out".into()))?;
    let out = train(fit, &tc)?;
    write_checkpoint(&out.model, &checkpoint)?;
    let log_path = a.log.clone().unwrap_or_else(|| sidecar(&checkpoint, ".log.csv"));
    write_file(&log_path, &format!("{}{}", header.comment(), out.log.to_csv()))?;
    let sep = if held.is_empty() {
        None
    } else {
        Some(separation(&out.model, held, tc.pooling, a.holdout_seed)?)
    };
    #[derive(Serialize)]
    struct Summary<'a> {
        header: &'a Header,
        checkpoint: &'a Path,
        trained_on: usize,
        skipped: &'a [String],
        final_epoch: Option<&'a synth_eval::trainer::EpochLog>,
        holdout: Option<HoldoutSummary>,
    }
    #[derive(Serialize)]
    struct HoldoutSummary {
        pairs: usize,
        mean_variant: f64,
        mean_mutant: f64,
        gap: f64,
        ordering_accuracy: f64,
    }
    let summary = Summary {
        header: &header,
        checkpoint: &checkpoint,
        trained_on: fit.len() - out.skipped.len(),
        skipped: &out.skipped,
        final_epoch: out.log.epochs.last(),
        holdout: sep.map(|s| HoldoutSummary {
            pairs: s.pairs,
            mean_variant: s.mean_variant,
            mean_mutant: s.mean_mutant,
            gap: s.gap(),
            ordering_accuracy: s.ordering_accuracy,
        }),
    };
    let text = pretty(&summary)?;
    let mut so = std::io::stdout().lock();
    so.write_all(text.as_bytes())?;
    Ok(())
}

fn score_cmd(ctx: &Ctx, a: &ScoreArgs) -> anyhow::Result<()> {
    let sc = score_config(ctx, &a.scorer)?;
    let header = with_score_config(ctx, &sc);
    let scorer = Scorer::new(sc)?;
    let records = pairs(ctx, &a.input)?;
    let results = scorer.score_records(&records)?;
    if a.input.corpus.is_none() {
        let r = &results[0];
        #[derive(Serialize)]
        struct PairScore<'a> {
            header: &'a Header,
            gate_passed: bool,
            similarity: f64,
            binary: u8,
        }
        return emit(
            ctx,
            &pretty(&PairScore {
                header: &header,
                gate_passed: r.gate_passed,
                similarity: r.similarity,
                binary: r.binary,
            })?,
        );
    }
    let mut rows: Vec<Vec<String>> = vec![["id", "pass1", "gate_passed", "codescore_r_sim", "codescore_r"]
        .into_iter()
        .map(String::from)
        .collect()];
    for (rec, r) in records.iter().zip(&results) {
        rows.push(vec![
            rec.id.clone(),
            rec.pass1.map(|p| p.to_string()).unwrap_or_default(),
            u8::from(r.gate_passed).to_string(),
            format!("{:.6}", r.similarity),
            r.binary.to_string(),
        ]);
    }
    emit(ctx, &csv_text(&header, rows)?)
}

fn perturb_cmd(ctx: &Ctx, a: &PerturbArgs) -> anyhow::Result<()> {
    let records = read_records(&a.corpus)?;
    let seeds = if a.seeds.is_empty() { vec![ctx.cfg.seed] } else { a.seeds.clone() };
    let exec = Executor::new(ctx.cfg.sandbox.clone());
    let render = |seed: u64| -> anyhow::Result<String> {
        let out = perturb_corpus(&records, a.kind, seed, &exec)?;
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &out)?;
        Ok(String::from_utf8(buf)?)
    };
    match (seeds.as_slice(), &ctx.out) {
        ([seed], _) => {
            emit(ctx, &render(*seed)?)?;
            ctx.out.as_deref().map_or(Ok(()), |p| run_sidecar(ctx, p))
        }
        (_, Some(dir)) => {
            fs::create_dir_all(dir)?;
            for &s in &seeds {
                write_file(&dir.join(format!("{}-seed{s}.jsonl", a.kind)), &render(s)?)?;
            }
            write_file(&dir.join("run.json"), &pretty(&ctx.header)?)
        }
        (_, None) => bail!(Error::Config("several seeds need --out DIR".into())),
    }
}

const ALL_KINDS: [&str; 8] = ["original", "o2s", "s2s", "syntax", "semantic-25", "semantic-50", "semantic-75", "semantic-100"];

fn report_cmd(ctx: &Ctx, a: &ReportArgs) -> anyhow::Result<()> {
    let records = read_records(&a.corpus)?;
    let kinds: Vec<PerturbationKind> = if a.kinds.is_empty() {
        ALL_KINDS.iter().map(|k| k.parse()).collect::<synth_eval::Result<_>>()?
    } else {
        a.kinds.clone()
    };
    let metrics = if a.metrics.is_empty() {
        MetricKind::ALL
            .into_iter()
            .map(ExperimentMetric::Match)
            .chain([ExperimentMetric::ExactMatch, ExperimentMetric::CodeScoreR, ExperimentMetric::CodeScoreRSim])
            .collect()
    } else {
        a.metrics.clone()
    };
    let needs_scorer = metrics
        .iter()
        .any(|m| matches!(m, ExperimentMetric::CodeScoreR | ExperimentMetric::CodeScoreRSim));
    let sc = score_config(ctx, &a.scorer)?;
    let header = with_score_config(ctx, &sc);
    let scorer = if needs_scorer { Some(Scorer::new(sc)?) } else { None };
    let exec = Executor::new(ctx.cfg.sandbox.clone());
    let setup = ExperimentSetup::new(&records, metrics, scorer.as_ref(), &exec);
    let reports = kinds
        .iter()
        .map(|&k| {
            let seeds = match (a.seeds.is_empty(), k.is_seeded()) {
                (false, true) => a.seeds.clone(),
                (_, false) => vec![ctx.cfg.seed],
                (true, true) => DEFAULT_SEEDS.to_vec(),
            };
            info!("running {k} over {} seed(s)", seeds.len());
            run_experiment(&records, k, &seeds, &setup)
        })
        .collect::<synth_eval::Result<Vec<MetricReport>>>()?;
    let field = TableField::from(a.field);
    let table = format!("{}{}", header.comment(), render_table(&reports, field));
    if let Some(dir) = &ctx.out {
        fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct ReportFile<'a> {
            header: &'a Header,
            report: &'a MetricReport,
        }
        for r in &reports {
            write_file(&dir.join(format!("report-{}.json", r.kind)), &pretty(&ReportFile { header: &header, report: r })?)?;
            write_file(&dir.join(format!("scores-{}.csv", r.kind)), &format!("{}{}", header.comment(), r.scores_csv()?))?;
        }
        write_file(&dir.join("summary.csv"), &format!("{}{}", header.comment(), summary_csv(&reports, field)))?;
        write_file(&dir.join("table.txt"), &table)?;
    }
    let mut so = std::io::stdout().lock();
    so.write_all(table.as_bytes())?;
    Ok(())
}

fn grad_check_cmd(ctx: &Ctx, a: &GradCheckArgs) -> anyhow::Result<()> {
    let mut rows = vec![vec!["instance".to_owned(), "pooling".into(), "mlm".into(), "contrastive".into()]];
    let mut worst = 0.0f64;
    for i in 0..a.instances {
        let pooling = PoolingStrategy::ALL[i as usize % PoolingStrategy::ALL.len()];
        let (m, mlm, cl) = tiny_instance(derive_seed(ctx.cfg.seed, &[i]), pooling)?;
        let e1 = grad_check(&m, &mlm, a.epsilon)?;
        let e2 = grad_check(&m, &cl, a.epsilon)?;
        worst = worst.max(e1).max(e2);
        rows.push(vec![i.to_string(), pooling.name().to_owned(), format!("{e1:.3e}"), format!("{e2:.3e}")]);
    }
    let (m, mlm, cl) = tiny_instance(derive_seed(ctx.cfg.seed, &[u64::MAX]), PoolingStrategy::LastAvg)?;
    let p1 = grad_check(&m, &ScaledGradient(mlm, 2.0), a.epsilon)?;
    let p2 = grad_check(&m, &ScaledGradient(cl, 2.0), a.epsilon)?;
    rows.push(vec!["planted".into(), "last-avg".into(), format!("{p1:.3e}"), format!("{p2:.3e}")]);
    emit(ctx, &csv_text(&ctx.header, rows)?)?;
    if worst >= a.tolerance {
        bail!(Internal(format!("gradient mismatch: max relative error {worst:.3e}")));
    }
    if p1 < a.tolerance || p2 < a.tolerance {
        bail!(Internal("the planted gradient fault went undetected".into()));
    }
    Ok(())
}
