use synth_eval::code::{Lang, SourceUnit};
use synth_eval::encoder::{write_checkpoint_to, PoolingStrategy};
use synth_eval::synth::synthetic_corpus;
use synth_eval::trainer::{
    anchor_loss, build_negative, build_positive, code_tokens, train, MaskAction, MaskPlan,
    TrainerConfig, TrainingRecord,
};
use synth_eval::Error;

fn py(s: &str) -> SourceUnit {
    SourceUnit::new(Lang::Python, s)
}

fn small_config() -> TrainerConfig {
    TrainerConfig {
        epochs: 2,
        dim: 8,
        batch_size: 4,
        ..TrainerConfig::synthetic_preset()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let corpus = synthetic_corpus(12, 3, &[Lang::Python, Lang::Java]);
    let cfg = TrainerConfig {
        epochs: 1,
        learning_rate: 0.0,
        ..small_config()
    };
    let a = train(&corpus, &cfg).unwrap();
    let untouched = synth_eval::encoder::EncoderModel::new(
        a.model.vocab.clone(),
        synth_eval::encoder::EncoderConfig { dim: 8, seed: cfg.seed },
    )
    .unwrap();
    assert_eq!(a.model, untouched);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let corpus = synthetic_corpus(16, 4, &[Lang::Python, Lang::Java]);
    let bytes = |cfg: &TrainerConfig| {
        let out = train(&corpus, cfg).unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&out.model, &mut buf).unwrap();
        (buf, out.log)
    };
    let cfg = small_config();
    assert_eq!(bytes(&cfg), bytes(&cfg));
    let par = TrainerConfig {
        parallel_batch: true,
        ..cfg.clone()
    };
    assert_eq!(bytes(&cfg), bytes(&par));
    let other = TrainerConfig { seed: 1, ..cfg };
    assert_ne!(bytes(&small_config()).0, bytes(&other).0);
}

#[test]
fn runaway_step_reports_divergence_with_last_good_model() {
    let corpus = synthetic_corpus(16, 5, &[Lang::Python]);
    let cfg = TrainerConfig {
        learning_rate: 1e200,
        epochs: 3,
        ..small_config()
    };
    match train(&corpus, &cfg) {
        Err(Error::Divergence { epoch, last_good }) => {
            assert_eq!(epoch, 0);
            assert!(last_good.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn contrastive_loss_falls_over_first_five_epochs() {
    let corpus = synthetic_corpus(200, 2024, &[Lang::Python, Lang::Java]);
    let cfg = TrainerConfig {
        epochs: 5,
        ..TrainerConfig::synthetic_preset()
    };
    let out = train(&corpus, &cfg).unwrap();
    let cl: Vec<f64> = out.log.epochs.iter().map(|e| e.contrastive).collect();
    assert!(cl.windows(2).all(|w| w[1] < w[0]), "{cl:?}");
    let csv = out.log.to_csv();
    assert!(csv.starts_with("epoch,l_mlm,l_cl,l_total\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn units_without_operators_are_skipped() {
    let mut corpus = synthetic_corpus(6, 8, &[Lang::Python]);
    corpus.push(TrainingRecord {
        id: "flat".into(),
        lang: Lang::Python,
        nl: String::new(),
        code: "def f(a):\n    return a\n".into(),
    });
    let out = train(&corpus, &small_config()).unwrap();
    assert_eq!(out.skipped, vec!["flat".to_string()]);
}

#[test]
fn relu_pooling_trains_without_aborting() {
    let corpus = synthetic_corpus(24, 6, &[Lang::Python, Lang::Java]);
    let cfg = TrainerConfig {
        pooling: PoolingStrategy::SummaryRelu,
        ..small_config()
    };
    assert_eq!(train(&corpus, &cfg).unwrap().log.epochs.len(), 2);
}

#[test]
fn mask_statistics_over_many_plans() {
    let (mut mask, mut random, mut keep) = (0usize, 0usize, 0usize);
    for s in 0..10_000u64 {
        let p = MaskPlan::sample(100, 300, s);
        assert_eq!(p.len(), 15);
        for (_, a) in &p.entries {
            match a {
                MaskAction::ReplaceWithMask => mask += 1,
                MaskAction::ReplaceWithRandom(_) => random += 1,
                MaskAction::Keep => keep += 1,
            }
        }
    }
    let n = (mask + random + keep) as f64;
    assert!((mask as f64 / n - 0.8).abs() < 0.02);
    assert!((random as f64 / n - 0.1).abs() < 0.02);
    assert!((keep as f64 / n - 0.1).abs() < 0.02);
}

#[test]
fn lower_temperature_never_raises_a_separated_loss() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.9, 0.1, 0.4], &[0.3, 0.2, 0.85]),
        (&[0.5], &[0.49]),
        (&[0.2, 0.1], &[-0.3, 0.15]),
    ];
    for (pos, neg) in cases {
        let mut prev = f64::INFINITY;
        for i in (1..=200).rev() {
            let tau = i as f64 / 100.0;
            let (l, _, _) = anchor_loss(pos, neg, 0, tau);
            assert!(l <= prev + 1e-12, "tau {tau}");
            assert!(l >= 0.0);
            prev = l;
        }
    }
}

#[test]
fn augmented_assignment_positive() {
    let unit = py("def f(a, b):\n    a += b\n    return a\n");
    let expanded = code_tokens(&py("def f(a, b):\n    a = a + b\n    return a\n")).unwrap();
    let mut seen_variant = false;
    for s in 0..40 {
        let p = build_positive(&unit, s).unwrap();
        assert_eq!(p, build_positive(&unit, s).unwrap());
        if !p.dropout {
            assert_eq!(p.positive, expanded);
            seen_variant = true;
        } else {
            assert_eq!(p.positive, p.anchor);
        }
    }
    assert!(seen_variant);
}

#[test]
fn subtraction_is_an_admissible_negative() {
    let unit = py("def f(a, b):\n    a = a + b\n    return a\n");
    let want = code_tokens(&py("def f(a, b):\n    a = a - b\n    return a\n")).unwrap();
    assert!((0..200).any(|s| build_negative(&unit, s).unwrap() == want));
}

#[test]
fn unparsable_unit_is_rejected() {
    assert!(matches!(
        build_positive(&py("def f(:\n"), 0),
        Err(Error::ParseErrorInput(Lang::Python))
    ));
}
