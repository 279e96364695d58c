//! Acceptance criteria A1 to A10. Runs without the libtest harness so that
//! every criterion prints one line whether it passes or not; the process
//! exits nonzero when any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use synth_eval::code::{tokenize, Lang, SourceUnit};
use synth_eval::corpus::{read_corpus, CorpusRecord, TestOracle};
use synth_eval::encoder::{EncoderModel, PoolingStrategy};
use synth_eval::exec::{Executor, SandboxConfig};
use synth_eval::harness::{
    classification_metrics, mae, run_experiment, ExperimentMetric, ExperimentSetup, PerturbationKind,
    DEFAULT_SEEDS,
};
use synth_eval::metrics::{
    bleu, chrf, crystal_bleu, edit_similarity, rouge_l, trivially_shared, BleuConfig, MetricKind,
};
use synth_eval::mutate::{mutate_unit, OperatorClass};
use synth_eval::par;
use synth_eval::rng::{derive_seed, rng};
use synth_eval::scorer::{Backend, ScoreConfig, Scorer};
use synth_eval::sketch::{rename_identifiers, user_identifiers};
use synth_eval::synth::synthetic_corpus;
use synth_eval::trainer::{
    contrastive_loss, grad_check, mlm_loss, separation, tiny_instance, train, MaskAction, MaskPlan,
    ScaledGradient, TrainerConfig, Triple,
};
use synth_eval::transform::{apply_transform, find_sites, TransformRule};

mod common;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn demo() -> Vec<CorpusRecord> {
    read_corpus(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/demo.jsonl"))).expect("demo corpus")
}

fn executor() -> Executor {
    Executor::new(SandboxConfig::default())
}

/// The A4 model with the time it took to train.
struct Trained {
    model: EncoderModel,
    pooling: PoolingStrategy,
    elapsed: Duration,
}

fn train_a4() -> Result<Trained, String> {
    let t = Instant::now();
    let corpus = synthetic_corpus(280, 2024, &[Lang::Python, Lang::Java]);
    let cfg = TrainerConfig::synthetic_preset();
    let out = train(&corpus[..200], &cfg).map_err(fail)?;
    Ok(Trained {
        model: out.model,
        pooling: cfg.pooling,
        elapsed: t.elapsed(),
    })
}

/// Fresh names for every user identifier, drawn from the seed.
fn renamed(unit: &SourceUnit, seed: u64) -> synth_eval::Result<SourceUnit> {
    let mut r = rng(seed);
    let mapping: HashMap<String, String> = user_identifiers(unit)?
        .into_iter()
        .enumerate()
        .map(|(k, id)| (id.name, format!("n{}_{k}", r.gen_range(0..100_000u32))))
        .collect();
    rename_identifiers(unit, &mapping)
}

fn a1(trained: &Trained) -> Outcome {
    let recs = demo();
    let config = ScoreConfig {
        pooling: trained.pooling,
        ..ScoreConfig::default()
    };
    let hash = Scorer::new(config.clone()).map_err(fail)?;
    let model = Scorer::with_backend(config, Backend::Model(Box::new(trained.model.clone()))).map_err(fail)?;
    let (mut total, mut exact, mut changed) = (0, 0, 0);
    for (i, r) in recs.iter().enumerate() {
        let reference = r.reference_unit();
        let pred = r.prediction_unit();
        for seed in 0..7u64 {
            let perturbed = renamed(&pred, derive_seed(seed, &[i as u64])).map_err(fail)?;
            changed += usize::from(perturbed.text() != pred.text());
            for scorer in [&hash, &model] {
                let a = scorer.score(&reference, &pred).map_err(fail)?;
                let b = scorer.score(&reference, &perturbed).map_err(fail)?;
                total += 1;
                let same = a.similarity.to_bits() == b.similarity.to_bits()
                    && a.binary == b.binary
                    && a.gate_passed == b.gate_passed;
                if same {
                    exact += 1;
                } else {
                    eprintln!("A1 mismatch on {} seed {seed}: {a:?} vs {b:?}", r.id);
                }
            }
        }
    }
    check(
        exact == total && changed >= 200,
        format!("{exact}/{total} bit-exact over {changed} renamed predictions, Hash and Model backends"),
    )
}

fn a2() -> Outcome {
    let exec = executor();
    let (mut variants, mut sound) = (0, 0);
    for r in &demo() {
        let tests = r.tests.as_deref().unwrap_or_default();
        for unit in [r.reference_unit(), r.prediction_unit()] {
            let base = exec.run(&unit, tests, r.entry.as_deref()).map_err(fail)?;
            for site in find_sites(&unit, &TransformRule::ALL).map_err(fail)? {
                let v = apply_transform(&unit, &site).map_err(fail)?;
                let out = exec.run(&v, tests, r.entry.as_deref()).map_err(fail)?;
                variants += 1;
                if out.results.iter().map(|t| t.passed).eq(base.results.iter().map(|t| t.passed)) {
                    sound += 1;
                } else {
                    eprintln!("A2 unsound {} {}:\n{}", r.id, site.rule.name(), v.text());
                }
            }
        }
    }
    check(
        variants > 0 && sound == variants,
        format!("{sound}/{variants} variants pass exactly the original tests"),
    )
}

fn a3() -> Outcome {
    let exec = executor();
    let classes: BTreeSet<OperatorClass> = OperatorClass::ALL.into_iter().collect();
    let recs = demo();
    let (mut draws, mut killed) = (0, 0);
    for seed in DEFAULT_SEEDS {
        for (i, r) in recs.iter().enumerate() {
            let Some(m) = mutate_unit(&r.reference_unit(), &classes, derive_seed(seed, &[i as u64])).map_err(fail)?
            else {
                continue;
            };
            draws += 1;
            let out = exec.run(&m, r.tests.as_deref().unwrap_or_default(), r.entry.as_deref()).map_err(fail)?;
            if out.passed {
                eprintln!("A3 equivalent-mutant candidate {} seed {seed}:\n{}", r.id, m.text());
            } else {
                killed += 1;
            }
        }
    }
    let rate = killed as f64 / draws.max(1) as f64;
    check(rate >= 0.9, format!("{killed}/{draws} mutants killed ({:.1}%)", rate * 100.0))
}

fn a4(trained: &Trained) -> Outcome {
    let t = Instant::now();
    let corpus = synthetic_corpus(280, 2024, &[Lang::Python, Lang::Java]);
    let sep = separation(&trained.model, &corpus[200..], trained.pooling, 99).map_err(fail)?;
    let elapsed = trained.elapsed + t.elapsed();
    check(
        sep.gap() >= 0.2 && sep.ordering_accuracy >= 0.9 && elapsed < Duration::from_secs(300),
        format!(
            "gap {:.4} (variant {:.4}, mutant {:.4}), ordering {:.4} over {} pairs, {:.1}s",
            sep.gap(),
            sep.mean_variant,
            sep.mean_mutant,
            sep.ordering_accuracy,
            sep.pairs,
            elapsed.as_secs_f64()
        ),
    )
}

fn a5() -> Outcome {
    let mut worst = 0.0f64;
    for s in 0..20u64 {
        let pooling = PoolingStrategy::ALL[s as usize % 4];
        let (m, mlm, cl) = tiny_instance(s, pooling).map_err(fail)?;
        worst = worst.max(grad_check(&m, &mlm, 1e-5).map_err(fail)?);
        worst = worst.max(grad_check(&m, &cl, 1e-5).map_err(fail)?);
    }
    let (m, mlm, cl) = tiny_instance(20, PoolingStrategy::LastAvg).map_err(fail)?;
    let planted_mlm = grad_check(&m, &ScaledGradient(mlm, 2.0), 1e-5).map_err(fail)?;
    let planted_cl = grad_check(&m, &ScaledGradient(cl, 2.0), 1e-5).map_err(fail)?;
    check(
        worst < 1e-4 && planted_mlm > 1e-4 && planted_cl > 1e-4,
        format!("max relative error {worst:.2e} over 20 instances; planted fault reads {planted_mlm:.3} / {planted_cl:.3}"),
    )
}

fn a6() -> Outcome {
    let (m, mlm, _) = tiny_instance(5, PoolingStrategy::LastAvg).map_err(fail)?;
    let tokens = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let triple = Triple {
        anchor: tokens(&["t1", "t2", "t3"]),
        positive: tokens(&["t4", "t5"]),
        negative: tokens(&["t4", "t5"]),
        dropout: None,
    };
    let (cl, _) = contrastive_loss(&m, &[triple], 0.1, PoolingStrategy::LastAvg).map_err(fail)?;
    let (zero, _) = mlm_loss(&m, &mlm.pair, &MaskPlan::default()).map_err(fail)?;
    let mut flat = m.clone();
    flat.e.iter_mut().for_each(|x| *x = 0.0);
    let one = MaskPlan {
        entries: vec![(0, MaskAction::ReplaceWithMask)],
    };
    let (uniform, _) = mlm_loss(&flat, &mlm.pair, &one).map_err(fail)?;
    let ln_v = (flat.vocab.len() as f64).ln();
    check(
        (cl - 2f64.ln()).abs() < 1e-9 && zero == 0.0 && (uniform - ln_v).abs() < 1e-9,
        format!("symmetric {cl:.12} vs ln 2; zero-mask {zero}; uniform {uniform:.12} vs ln {}", flat.vocab.len()),
    )
}

fn a7() -> Outcome {
    let mut r = rng(7);
    let alphabet = ["a", "b", "c", "x", "if", "return", "+", "=", "(", ")"];
    let seq = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
        let n = r.gen_range(1..=24);
        (0..n).map(|_| alphabet[r.gen_range(0..alphabet.len())].to_string()).collect()
    };
    let cfg = BleuConfig::default();
    let mut agree = [0usize; 5];
    for _ in 0..50 {
        let (a, b) = (seq(&mut r), seq(&mut r));
        let shared = trivially_shared(&[a.clone(), b.clone()], 4, r.gen_range(1..6));
        let skip = |g: &[String]| shared.contains(&g.to_vec());
        let (sa, sb) = (a.join(" "), b.join(""));
        let pairs = [
            (bleu(&a, &b, &cfg), common::oracle_bleu(&a, &b, 4, Some(0.1), &|_| 1.0, &|_| false)),
            (rouge_l(&a, &b), common::oracle_rouge(&a, &b)),
            (chrf(&sa, &sb), common::oracle_chrf(&sa, &sb)),
            (edit_similarity(&sa, &sb), common::oracle_edit(&sa, &sb)),
            (crystal_bleu(&a, &b, &shared, &cfg), common::oracle_bleu(&a, &b, 4, Some(0.1), &|_| 1.0, &skip)),
        ];
        for (k, (got, want)) in pairs.into_iter().enumerate() {
            agree[k] += usize::from(got == want);
        }
    }
    check(
        agree.iter().all(|&n| n == 50),
        format!("exact agreement BLEU {} ROUGE-L {} ChrF {} ED {} CrystalBLEU {} (of 50)", agree[0], agree[1], agree[2], agree[3], agree[4]),
    )
}

fn a8() -> Outcome {
    let a = "def sum (a , b) :\n    a = a + b\n    return a";
    let c = "def f (num_0 , num_1) :\n    num_0 = num_0 + num_1\n    return num_0";
    let d = "def sum (a , b) :\n    a += b\n    return a";
    let py = |s: &str| tokenize(&SourceUnit::new(Lang::Python, s));
    let b_ac = bleu(&py(a), &py(c), &BleuConfig::default());
    let c_ad = chrf(a, d);
    check(
        (b_ac - 0.040).abs() <= 0.01 && (c_ad - 0.807).abs() <= 0.01,
        format!("BLEU(a, c) = {b_ac:.4}, ChrF(a, d) = {c_ad:.4}"),
    )
}

fn a9() -> Outcome {
    let mut p = vec![1u8; 10];
    p.extend([0; 5]);
    let mut l = vec![1u8; 8];
    l.extend([0, 0, 1, 1, 0, 0, 0]);
    let c = classification_metrics(&p, &l).map_err(fail)?;
    let stats_ok = mae(&[0.3, 0.9, 0.5], &[0.0, 1.0, 1.0]).map_err(fail)? == (0.3 + 0.1 + 0.5) / 3.0
        && mae(&[1.0, 0.0], &[0.0, 0.0]).map_err(fail)? == 0.5
        && mae(&[0.2, 0.7], &[0.2, 0.7]).map_err(fail)? == 0.0
        && (c.tp, c.fp, c.fn_, c.tn) == (8, 2, 2, 3)
        && c.precision == 0.8
        && c.recall == 0.8
        && c.f1 == 2.0 * 0.8 * 0.8 / 1.6
        && c.accuracy == 11.0 / 15.0;

    let recs = demo();
    let exec = executor();
    let scorer = Scorer::new(ScoreConfig::default()).map_err(fail)?;
    let metrics: Vec<ExperimentMetric> = MetricKind::ALL
        .into_iter()
        .map(ExperimentMetric::Match)
        .chain([ExperimentMetric::CodeScoreR, ExperimentMetric::CodeScoreRSim])
        .collect();
    let setup = ExperimentSetup::new(&recs, metrics, Some(&scorer), &exec);
    let kinds = [PerturbationKind::Syntax, PerturbationKind::Semantic { ratio: 0.5 }];
    let render = |jobs: usize| -> Result<String, String> {
        par::with_jobs(jobs, || {
            let mut out = String::new();
            for k in kinds {
                let rep = run_experiment(&recs, k, &DEFAULT_SEEDS, &setup).map_err(fail)?;
                out.push_str(&rep.to_json().map_err(fail)?);
                out.push_str(&rep.scores_csv().map_err(fail)?);
            }
            Ok(out)
        })
    };
    let first = render(4)?;
    let again = render(4)?;
    let single = render(1)?;
    let deterministic = first == again && first == single;
    check(
        stats_ok && deterministic,
        format!(
            "hand-computed statistics {}; 5-seed reports {} ({} bytes, 1 vs 4 threads)",
            if stats_ok { "match" } else { "differ" },
            if deterministic { "byte-identical" } else { "differ" },
            first.len()
        ),
    )
}

fn a10() -> Outcome {
    let (mut counts, mut exact) = ([0usize; 3], 0);
    for s in 0..10_000u64 {
        let plan = MaskPlan::sample(100, 300, derive_seed(s, &[0xa10]));
        exact += usize::from(plan.len() == 15);
        for (_, a) in &plan.entries {
            counts[match a {
                MaskAction::ReplaceWithMask => 0,
                MaskAction::ReplaceWithRandom(_) => 1,
                MaskAction::Keep => 2,
            }] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let share = counts.map(|c| c as f64 / n as f64);
    check(
        exact == 10_000
            && (share[0] - 0.8).abs() <= 0.02
            && (share[1] - 0.1).abs() <= 0.02
            && (share[2] - 0.1).abs() <= 0.02,
        format!(
            "{exact}/10000 plans mask exactly 15%; split {:.4}/{:.4}/{:.4}",
            share[0], share[1], share[2]
        ),
    )
}

fn report(name: &str, budget: Option<Duration>, run: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = run();
    let elapsed = t.elapsed();
    let over = budget.is_some_and(|b| elapsed > b);
    let (ok, detail) = match outcome {
        Ok(d) if !over => (true, d),
        Ok(d) => (false, format!("{d}; over the time budget")),
        Err(d) => (false, d),
    };
    println!(
        "{name} {}: {detail} [{:.1}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn main() -> ExitCode {
    let trained = &train_a4();
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let model_ok = |f: fn(&Trained) -> Outcome| -> Box<dyn FnOnce() -> Outcome + '_> {
        Box::new(move || trained.as_ref().map_err(Clone::clone).and_then(f))
    };
    let results = [
        report("A1", minutes(1), model_ok(a1)),
        report("A2", minutes(3), a2),
        report("A3", minutes(3), a3),
        report("A4", None, model_ok(a4)),
        report("A5", Some(Duration::from_secs(30)), a5),
        report("A6", None, a6),
        report("A7", None, a7),
        report("A8", None, a8),
        report("A9", None, a9),
        report("A10", None, a10),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
