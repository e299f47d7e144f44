mod common;

use std::fs;
use std::path::{Path, PathBuf};

use gap_core::anonymizer::Anonymizer;
use gap_core::corpus::{GapExample, Label};
use gap_core::embedding::{stub_vector, Role};
use gap_core::eval::{read_submission, write_submission, PredictionTriple};
use gap_core::features::{HandFeatures, ZeroLinguistic};
use gap_core::models::{Checkpoint, Classifier, End2endInput};
use gap_core::pipeline::{self, PipelineConfig};
use gap_core::Error;

use common::Spec;

fn setup(dir: &Path, extra: &str) -> PipelineConfig {
    let train = common::corpus(&Spec { n: 60, seed: 1, label_noise: 0.1, two_word: 0.3 });
    let mut test = common::corpus(&Spec { n: 20, seed: 2, label_noise: 0.0, two_word: 0.3 });
    for (i, ex) in test.iter_mut().enumerate() {
        ex.id = format!("test-{}", i + 1);
    }
    common::write(&dir.join("train.tsv"), &train);
    common::write(&dir.join("test.tsv"), &test);
    let path = dir.join("gap.toml");
    fs::write(&path, common::config(extra)).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_bit_identical() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&d1, &d2] {
        let cfg = setup(d.path(), "");
        pipeline::cmd_augment(&cfg).unwrap();
        pipeline::cmd_train(&cfg).unwrap();
        pipeline::cmd_predict(&cfg).unwrap();
        pipeline::cmd_evaluate(&cfg).unwrap();
    }
    let (o1, o2) = (d1.path().join("out"), d2.path().join("out"));
    let files = files_under(&o1);
    assert_eq!(files, files_under(&o2));
    assert!(files.iter().any(|f| f.ends_with("submission.csv")));
    assert!(files.iter().any(|f| f.ends_with("fold2_seed1.json")));
    for f in files {
        assert_eq!(fs::read(o1.join(&f)).unwrap(), fs::read(o2.join(&f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn zero_epochs_score_near_ln3() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = setup(d.path(), "");
    for m in &mut cfg.models {
        m.train.epochs = 0;
    }
    let report = pipeline::cmd_train(&cfg).unwrap();
    let ln3 = 3f64.ln();
    assert!((report.ensemble.overall - ln3).abs() < 0.05, "{}", report.ensemble.overall);
}

#[test]
fn uniform_submission_scores_ln3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    let test = pipeline::load_corpus(cfg.corpus.test.as_ref().unwrap()).unwrap();
    let rows: Vec<_> = test.iter().map(|e| (e.id.clone(), PredictionTriple::new(1.0, 1.0, 1.0))).collect();
    fs::create_dir_all(&cfg.out_dir).unwrap();
    write_submission(&rows, fs::File::create(cfg.out_dir.join("submission.csv")).unwrap()).unwrap();
    let report = pipeline::cmd_evaluate(&cfg).unwrap();
    assert!((report.overall - 3f64.ln()).abs() < 1e-12);
    assert_eq!(report.count, 20);
}

#[test]
fn one_hot_weights_reproduce_the_single_model() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = setup(d.path(), "");
    cfg.ensemble.weights = Some(vec![1.0, 0.0]);
    let report = pipeline::cmd_train(&cfg).unwrap();
    assert_eq!(report.ensemble, report.models["e2e"]);
    let ens = read_submission(fs::File::open(cfg.out_dir.join("oof/ensemble.csv")).unwrap()).unwrap();
    let single = read_submission(fs::File::open(cfg.out_dir.join("oof/e2e.csv")).unwrap()).unwrap();
    for ((_, e), (_, s)) in ens.iter().zip(&single) {
        assert_eq!(e.to_array(), s.to_array().map(|x| x.max(cfg.ensemble.clip)));
    }
}

#[test]
fn submission_respects_clip_floor() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = setup(d.path(), "");
    cfg.ensemble.clip = 0.05;
    pipeline::cmd_train(&cfg).unwrap();
    for (_, p) in pipeline::cmd_predict(&cfg).unwrap() {
        assert!(p.to_array().iter().all(|&x| x >= 0.05));
    }
}

/// Probability from one End2end checkpoint, recomputed with nothing but the
/// stub hash, the hand features and the stored weights.
fn oracle_e2e(ckpt: &Checkpoint, ex: &GapExample, variants: &[gap_core::anonymizer::AugmentedVariant]) -> PredictionTriple {
    let Checkpoint::End2end { net, layers, .. } = ckpt else { panic!("wrong kind") };
    let mut acc = [0.0; 3];
    for v in variants {
        let emb = |role: Role, s: &str| -> Vec<f64> {
            layers.iter().flat_map(|&l| stub_vector(s, role, l, 6, 3)).map(f64::from).collect()
        };
        let f = HandFeatures::compute(ex, v, &ZeroLinguistic(0));
        let input = End2endInput {
            a: emb(Role::A, &v.name_a),
            b: emb(Role::B, &v.name_b),
            p: emb(Role::Pronoun, &v.pronoun),
            feats_a: f.candidate_vector(true),
            feats_b: f.candidate_vector(false),
        };
        let p = net.predict(&input).unwrap().to_array();
        for k in 0..3 {
            acc[k] += p[k] / variants.len() as f64;
        }
    }
    PredictionTriple::from_array(acc)
}

#[test]
fn predict_matches_step_by_step_composition() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = setup(d.path(), "");
    cfg.ensemble.weights = Some(vec![1.0, 0.0]);
    pipeline::cmd_train(&cfg).unwrap();
    let rows = pipeline::cmd_predict(&cfg).unwrap();
    let test = pipeline::load_corpus(cfg.corpus.test.as_ref().unwrap()).unwrap();
    let anon = Anonymizer::default();
    let mut ckpts = Vec::new();
    for fold in 0..3 {
        for seed in [0, 1] {
            let p = cfg.out_dir.join(format!("checkpoints/e2e/fold{fold}_seed{seed}.json"));
            ckpts.push(Checkpoint::load(&p).unwrap());
        }
    }
    for ((id, got), ex) in rows.iter().zip(&test) {
        assert_eq!(id, &ex.id);
        let variants = anon.expand_with_tta(ex);
        let mut mean = [0.0; 3];
        for c in &ckpts {
            let p = oracle_e2e(c, ex, &variants).to_array();
            for k in 0..3 {
                mean[k] += p[k] / ckpts.len() as f64;
            }
        }
        let want = mean.map(|x| x.max(cfg.ensemble.clip));
        for (g, w) in got.to_array().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{id}: {g} vs {w}");
        }
    }
}

#[test]
fn store_source_reports_missing_keys() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    let written = pipeline::cmd_extract_stub(&cfg).unwrap();
    let text = fs::read_to_string(&written).unwrap();
    // drop every pronoun record of the first training example
    let kept: String = text
        .lines()
        .filter(|l| !(l.contains("\"example_id\":\"syn-1\"") && l.contains("\"role\":\"P\"")))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(kept.len() < text.len());
    fs::write(d.path().join("partial.jsonl"), kept).unwrap();
    let mut cfg = setup(d.path(), "");
    cfg.embeddings.insert("stub".into(), pipeline::EmbeddingSource::Store { path: d.path().join("partial.jsonl") });
    let err = pipeline::cmd_train(&cfg).unwrap_err();
    match &err {
        Error::MissingEmbeddings(keys) => assert!(keys.iter().all(|k| k.starts_with("syn-1#") && k.ends_with("/P"))),
        other => panic!("{other}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn stored_stub_embeddings_train_like_computed_ones() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = setup(d1.path(), "");
    let computed = pipeline::cmd_train(&cfg).unwrap();
    let written = pipeline::cmd_extract_stub(&cfg).unwrap();
    let mut cfg2 = setup(d2.path(), "");
    cfg2.embeddings.insert("stub".into(), pipeline::EmbeddingSource::Store { path: written });
    assert_eq!(pipeline::cmd_train(&cfg2).unwrap(), computed);
}

#[test]
fn predict_without_checkpoints_is_missing_artifact() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    let err = pipeline::cmd_predict(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn evaluate_needs_every_labeled_id() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    fs::create_dir_all(&cfg.out_dir).unwrap();
    let rows = vec![("test-1".to_string(), PredictionTriple::UNIFORM)];
    write_submission(&rows, fs::File::create(cfg.out_dir.join("submission.csv")).unwrap()).unwrap();
    let err = pipeline::cmd_evaluate(&cfg).unwrap_err();
    assert!(err.to_string().contains("test-2"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn corrections_change_training_labels_only() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("fix.tsv"), "id\tlabel\nsyn-1\tNEITHER\nsyn-2\tA\n").unwrap();
    let cfg = setup(d.path(), "");
    let plain = pipeline::cmd_train(&cfg).unwrap();
    assert!(plain.corrected.is_none());
    let mut cfg = setup(d.path(), "");
    cfg.corpus.corrections = Some(d.path().join("fix.tsv"));
    let fixed = pipeline::cmd_train(&cfg).unwrap();
    assert!(fixed.corrected.is_some());
    assert_ne!(fixed.ensemble, plain.ensemble);
    assert_eq!(fixed.ensemble.count, 60);
}

#[test]
fn sampled_rows_join_training() {
    let d = tempfile::tempdir().unwrap();
    let mut pool = common::corpus(&Spec { n: 30, seed: 5, label_noise: 0.0, two_word: 0.0 });
    for (i, ex) in pool.iter_mut().enumerate() {
        ex.id = format!("val-{i}");
    }
    common::write(&d.path().join("val.tsv"), &pool);
    let mut cfg = setup(d.path(), "");
    cfg.corpus.sample = Some(pipeline::SampleConfig { path: d.path().join("val.tsv"), rows: 12 });
    let all = pipeline::training_corpus(&cfg).unwrap();
    assert_eq!(all.len(), 72);
    let picked: Vec<&str> = all[60..].iter().map(|e| e.id.as_str()).collect();
    assert_eq!(picked, pipeline::training_corpus(&cfg).unwrap()[60..].iter().map(|e| e.id.as_str()).collect::<Vec<_>>());
    cfg.seed += 1;
    let other: Vec<String> = pipeline::training_corpus(&cfg).unwrap()[60..].iter().map(|e| e.id.clone()).collect();
    assert_ne!(picked, other);
    cfg.corpus.sample.as_mut().unwrap().rows = 31;
    assert!(pipeline::training_corpus(&cfg).is_err());
}

#[test]
fn bootstrap_and_lengths_write_reports() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = setup(d.path(), "");
    cfg.bootstrap.iterations = 200;
    cfg.bootstrap.sample_size = 20;
    cfg.lengths.bin_width = 50;
    pipeline::cmd_train(&cfg).unwrap();
    pipeline::cmd_predict(&cfg).unwrap();
    let report = pipeline::cmd_evaluate(&cfg).unwrap();
    let b = pipeline::cmd_bootstrap(&cfg).unwrap();
    assert_eq!(b.point, report.overall);
    assert!(b.q025 <= b.q50 && b.q50 <= b.q975);
    let lengths = pipeline::cmd_report_lengths(&cfg).unwrap();
    assert_eq!(lengths["train"].values().sum::<usize>(), 60);
    assert_eq!(lengths["test"].values().sum::<usize>(), 20);
    assert!(cfg.out_dir.join("lengths/train.csv").exists());
    assert!(cfg.out_dir.join("bootstrap.json").exists());
}

#[test]
fn augment_writes_five_records_per_example() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "");
    let report = pipeline::cmd_augment(&cfg).unwrap();
    assert_eq!(report.examples, 60);
    let text = fs::read_to_string(cfg.out_dir.join("variants.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 300);
    assert!(cfg.out_dir.join("coverage.json").exists());
    let labels: Vec<Label> = pipeline::training_corpus(&cfg).unwrap().iter().map(|e| e.label()).collect();
    assert_eq!(labels.len(), 60);
}
