use super::*;
use crate::teacher_store::Modality;

fn small_corpus() -> SyntheticCorpus {
    SyntheticCorpus::generate(&SyntheticSpec {
        concepts: 12,
        sentences_per_concept: 3,
        dim: 8,
        dev_pairs: 40,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small_config(objective: Objective, steps: usize) -> TrainConfig {
    TrainConfig {
        objective,
        steps,
        batch_size: 6,
        eval_every: 10,
        learning_rate: 3e-3,
        init_scale: 0.01,
        hidden_dim: 12,
        grounded_dim: 6,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig, corpus: &SyntheticCorpus) -> Result<(TrainHistory, StudentParams)> {
    let mut student = init_student(
        cfg,
        &corpus.manifest,
        &corpus.text,
        &corpus.visual,
        &corpus.dev,
    )?;
    let inputs = TrainInputs {
        manifest: &corpus.manifest,
        text: &corpus.text,
        visual: &corpus.visual,
        dev: &corpus.dev,
    };
    let h = train(cfg, &inputs, &mut student)?;
    Ok((h, student))
}

#[test]
fn paired_step_examples() {
    assert_eq!(paired_step(1000, 250).unwrap(), 4);
    assert_eq!(paired_step(1000, 300).unwrap(), 4);
    assert_eq!(paired_step(5, 5).unwrap(), 1);
    assert_eq!(paired_step(3, 10).unwrap(), 1);
    assert!(paired_step(0, 1).is_err());
}

#[test]
fn step_kind_examples() {
    assert_eq!(step_kind(3, 4), StepKind::TextOnly);
    assert_eq!(step_kind(8, 4), StepKind::Multimodal);
    assert!((1..50).all(|t| step_kind(t, 1) == StepKind::Multimodal));
}

#[test]
fn zero_steps_keeps_params_and_writes_headers() {
    let corpus = small_corpus();
    let cfg = small_config(Objective::Kdmcse, 0);
    let before = init_student(
        &cfg,
        &corpus.manifest,
        &corpus.text,
        &corpus.visual,
        &corpus.dev,
    )
    .unwrap();
    let (h, after) = run(&cfg, &corpus).unwrap();
    assert_eq!(before, after);
    assert!(h.steps.is_empty() && h.evals.is_empty() && h.best.is_none());
    assert_eq!(h.steps_csv(), "step,branch,loss\n");
    assert_eq!(h.evals_csv(), "step,spearman,alignment,uniformity\n");
}

#[test]
fn simcse_loss_trends_down_on_two_sentences() {
    let text = FeatureTable::from_rows(
        Modality::Text,
        vec!["a".into(), "b".into()],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        true,
    )
    .unwrap();
    let visual = FeatureTable::from_rows(
        Modality::Visual,
        vec!["i".into()],
        vec![vec![1.0, 0.0]],
        true,
    )
    .unwrap();
    let manifest = DatasetManifest {
        text_only: vec!["a".into(), "b".into()],
        multimodal: vec![],
    };
    let dev = vec![
        StsPair::new("a", "b", 1.0).unwrap(),
        StsPair::new("a", "a", 5.0).unwrap(),
    ];
    let cfg = TrainConfig {
        objective: Objective::Simcse,
        steps: 200,
        batch_size: 2,
        eval_every: 50,
        learning_rate: 1e-2,
        hidden_dim: 3,
        grounded_dim: 2,
        dropout_rate: 0.3,
        ..TrainConfig::default()
    };
    let mut student = init_student(&cfg, &manifest, &text, &visual, &dev).unwrap();
    let inputs = TrainInputs {
        manifest: &manifest,
        text: &text,
        visual: &visual,
        dev: &dev,
    };
    let h = train(&cfg, &inputs, &mut student).unwrap();
    assert!(h.steps.iter().all(|s| s.kind == StepKind::TextOnly));
    let mean = |r: &[StepRecord]| r.iter().map(|s| s.loss).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&h.steps[..20]), mean(&h.steps[180..]));
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn runs_are_bitwise_deterministic() {
    let corpus = small_corpus();
    let cfg = small_config(Objective::Kdmcse, 40);
    let (a, sa) = run(&cfg, &corpus).unwrap();
    let (b, sb) = run(&cfg, &corpus).unwrap();
    assert_eq!(a.steps_csv(), b.steps_csv());
    assert_eq!(a.evals_csv(), b.evals_csv());
    assert_eq!(sa, sb);
    let other = TrainConfig { seed: 43, ..cfg };
    assert_ne!(run(&other, &corpus).unwrap().0.steps_csv(), a.steps_csv());
}

#[test]
fn schedule_counts_multimodal_steps() {
    let corpus = small_corpus();
    let mut manifest = corpus.manifest.clone();
    // |D| = 36, |D^M| = 10 → p = 4
    manifest.multimodal.truncate(10);
    let cfg = small_config(Objective::Mcse, 30);
    let mut student =
        init_student(&cfg, &manifest, &corpus.text, &corpus.visual, &corpus.dev).unwrap();
    let inputs = TrainInputs {
        manifest: &manifest,
        text: &corpus.text,
        visual: &corpus.visual,
        dev: &corpus.dev,
    };
    let h = train(&cfg, &inputs, &mut student).unwrap();
    let multi: Vec<usize> = h
        .steps
        .iter()
        .filter(|s| s.kind == StepKind::Multimodal)
        .map(|s| s.step)
        .collect();
    assert_eq!(multi, vec![4, 8, 12, 16, 20, 24, 28]);
}

#[test]
fn teacher_tables_are_untouched() {
    let corpus = small_corpus();
    let (text, visual) = (corpus.text.clone(), corpus.visual.clone());
    run(&small_config(Objective::Kdmcse, 20), &corpus).unwrap();
    assert_eq!(text, corpus.text);
    assert_eq!(visual, corpus.visual);
}

#[test]
fn best_checkpoint_reproduces_its_score() {
    let corpus = small_corpus();
    let (h, _) = run(&small_config(Objective::Kdmcse, 60), &corpus).unwrap();
    let best = h.best.as_ref().unwrap();
    let max = h
        .evals
        .iter()
        .map(|e| e.report.spearman)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.spearman, max);
    let first_max = h
        .evals
        .iter()
        .find(|e| e.report.spearman == max)
        .unwrap()
        .step;
    assert_eq!(best.step, first_max);
    let again = evaluate(&best.params, &corpus.dev).unwrap().spearman;
    assert!((again - best.spearman).abs() <= 1e-9);
}

#[test]
fn ablations_match_hyperparameter_settings() {
    let corpus = small_corpus();
    let losses = |cfg: &TrainConfig| -> Vec<f64> {
        run(cfg, &corpus)
            .unwrap()
            .0
            .steps
            .iter()
            .map(|s| s.loss)
            .collect()
    };

    let no_margin = losses(&small_config(Objective::KdmcseNoMargin, 50));
    let mut zero = small_config(Objective::Kdmcse, 50);
    zero.objective_config.margin = 0.0;
    let zero = losses(&zero);
    assert!(no_margin
        .iter()
        .zip(&zero)
        .all(|(a, b)| (a - b).abs() <= 1e-12));

    let no_filter = losses(&small_config(Objective::KdmcseNoFilter, 50));
    let mut pass = small_config(Objective::Kdmcse, 50);
    pass.objective_config.threshold = 1.0;
    let pass = losses(&pass);
    assert!(no_filter
        .iter()
        .zip(&pass)
        .all(|(a, b)| (a - b).abs() <= 1e-12));

    // the filter actually bites at the default threshold
    assert_ne!(losses(&small_config(Objective::Kdmcse, 50)), no_filter);
}

#[test]
fn inconsistent_manifest_is_rejected() {
    let corpus = small_corpus();
    let mut manifest = corpus.manifest.clone();
    manifest
        .multimodal
        .push(("c000_s0".into(), "missing".into()));
    let cfg = small_config(Objective::Kdmcse, 5);
    let mut student =
        init_student(&cfg, &manifest, &corpus.text, &corpus.visual, &corpus.dev).unwrap();
    let inputs = TrainInputs {
        manifest: &manifest,
        text: &corpus.text,
        visual: &corpus.visual,
        dev: &corpus.dev,
    };
    assert!(matches!(
        train(&cfg, &inputs, &mut student),
        Err(Error::InconsistentManifest(_))
    ));

    // simcse ignores the pairs entirely
    let cfg = small_config(Objective::Simcse, 5);
    assert!(train(&cfg, &inputs, &mut student).is_ok());
}

#[test]
fn nan_parameters_abort_with_step() {
    let corpus = small_corpus();
    let cfg = small_config(Objective::Simcse, 5);
    let mut student = init_student(
        &cfg,
        &corpus.manifest,
        &corpus.text,
        &corpus.visual,
        &corpus.dev,
    )
    .unwrap();
    student.values.base.iter_mut().for_each(|v| *v = f64::NAN);
    let inputs = TrainInputs {
        manifest: &corpus.manifest,
        text: &corpus.text,
        visual: &corpus.visual,
        dev: &corpus.dev,
    };
    assert!(matches!(
        train(&cfg, &inputs, &mut student),
        Err(Error::NonFiniteLoss { step: Some(1) })
    ));
}

#[test]
fn kdmcse_improves_over_initialization() {
    let corpus = small_corpus();
    let cfg = small_config(Objective::Kdmcse, 300);
    let student = init_student(
        &cfg,
        &corpus.manifest,
        &corpus.text,
        &corpus.visual,
        &corpus.dev,
    )
    .unwrap();
    let init = evaluate(&student, &corpus.dev).unwrap().spearman;
    let (h, _) = run(&cfg, &corpus).unwrap();
    let best = h.best.unwrap().spearman;
    assert!(best > init + 0.3, "init {init} best {best}");
}

#[test]
fn csv_uses_nine_significant_digits() {
    assert_eq!(fmt_float(1.0), "1.00000000e0");
    assert_eq!(fmt_float(-0.000123456789123), "-1.23456789e-4");
    assert_eq!(fmt_float(f64::NAN), "nan");
}
