use super::*;
use crate::classifier::{train_classifier, ClassifierConfig};
use crate::corrupt::{make_dataset, CorruptionKind, UNSEEN};

fn toy() -> (ClassifierParams, Dataset, Dataset) {
    let (train, test) = make_dataset(21, 40, 20, 10).unwrap();
    let mut clf = train_classifier(
        &train,
        &ClassifierConfig {
            epochs: 2,
            batch_size: 8,
            ..ClassifierConfig::default()
        },
    )
    .unwrap();
    clf.freeze();
    (clf, train, test)
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 8,
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn config_text_round_trip() {
    let cfg = TrainConfig {
        leave_out: Some(AugFamily::NeuralEnhance),
        mode: Mode::BlendOnly,
        scenario: Scenario::Blind,
        ..TrainConfig::default()
    };
    let text = cfg.to_text();
    assert!(text.contains("leave_out = \"neural-enhance\""), "{text}");
    assert_eq!(TrainConfig::parse(&text).unwrap(), cfg);
    assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
    assert!(TrainConfig::parse("epochs = 3\nbogus = 1").is_err());
    assert!(TrainConfig::parse("threshold = 0.05").is_err());
    assert!(TrainConfig::parse("scale = \"huge\"").is_err());
    assert_ne!(cfg.hash(), TrainConfig::default().hash());
}

#[test]
fn training_needs_a_frozen_classifier() {
    let (train, _) = make_dataset(1, 10, 1, 10).unwrap();
    let clf = ClassifierParams::init(0, 3, 32, 10).unwrap();
    assert!(matches!(train_dyntta(&clf, &train, &quick()), Err(Error::Contract(_))));
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let (clf, train, _) = toy();
    let before_sum = clf.checksum();
    let cfg = TrainConfig { epochs: 2, ..quick() };
    let init = DynttaParams::standard(cfg.seed, cfg.scale, cfg.mode, None).unwrap();
    let l0 = dyntta_loss(&clf, &init, &train).unwrap();
    let a = train_dyntta(&clf, &train, &cfg).unwrap();
    let l1 = dyntta_loss(&clf, &a.params, &train).unwrap();
    assert!(l1 < l0, "{l0} → {l1}");
    assert_eq!(clf.checksum(), before_sum);
    let b = train_dyntta(&clf, &train, &cfg).unwrap();
    assert_eq!(a.params.params.checksum(), b.params.params.checksum());
    assert_eq!(a.epoch_loss, b.epoch_loss);
}

#[test]
fn leave_out_and_blend_only_train() {
    let (clf, train, _) = toy();
    let cfg = TrainConfig {
        leave_out: Some(AugFamily::HighPass),
        mode: Mode::BlendOnly,
        scenario: Scenario::Blind,
        ..quick()
    };
    let out = train_dyntta(&clf, &train, &cfg).unwrap();
    assert_eq!(out.params.k(), 31);
    assert_eq!(out.params.mode, Mode::BlendOnly);
    // Magnitude rows of the head never receive gradient in BlendOnly.
    let p = out.params.p();
    let head = out.params.params.get("backbone.head.b").unwrap();
    assert!(head.data()[..p].iter().all(|v| *v == 0.0));
}

#[test]
fn baseline_report_compares_to_itself_with_zero_deltas() {
    let (clf, _, test) = toy();
    let grid: Vec<(CorruptionKind, u8)> = UNSEEN
        .iter()
        .map(|k| (*k, 5))
        .chain([(CorruptionKind::Fog, 2)])
        .collect();
    let opts = EvalOptions::default();
    let mut a = evaluate("baseline", &clf, None, &test, &grid, &opts).unwrap();
    let b = evaluate("baseline", &clf, None, &test, &grid, &opts).unwrap();
    a.compare_to(&b).unwrap();
    let d = a.deltas.as_ref().unwrap();
    assert_eq!(d.clean, 0.0);
    assert!(d.cells.iter().all(|v| *v == 0.0));
    assert_eq!(d.unseen_mean, Some(0.0));
    let unseen: f64 = a.cells[..4].iter().map(|c| c.accuracy).sum::<f64>() / 4.0;
    assert!((a.unseen_mean.unwrap() - unseen).abs() < 1e-9);
    let all: f64 = a.cells.iter().map(|c| c.accuracy).sum::<f64>() / 5.0;
    assert!((a.all_mean.unwrap() - all).abs() < 1e-9);
    assert!(a.executed_mean.is_none());
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 1 + 1 + grid.len());
    let back: EvalReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn enhanced_report_counts_executed_entries() {
    let (clf, train, test) = toy();
    let out = train_dyntta(&clf, &train, &quick()).unwrap();
    let grid = [(CorruptionKind::SpeckleNoise, 5)];
    let full = evaluate("t0", &clf, Some(&out.params), &test, &grid, &EvalOptions::default()).unwrap();
    assert_eq!(full.executed_mean, Some(50.0));
    let pruned = evaluate(
        "t1",
        &clf,
        Some(&out.params),
        &test,
        &grid,
        &EvalOptions {
            threshold: 0.1,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert!(pruned.executed_mean.unwrap() < 50.0);
    assert!(pruned.executed_mean.unwrap() >= 1.0);
}

#[test]
fn range_scale_ablation_has_three_paired_rows() {
    let (clf, train, test) = toy();
    let small = train.select(&(0..16).collect::<Vec<_>>());
    let report = run_ablation(
        AblationSuite::RangeScale,
        &quick(),
        &clf,
        &small,
        &test.select(&[0, 1, 2, 3]),
        &[(CorruptionKind::GaussianBlur, 5)],
        &[4],
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.labels(), ["small", "standard", "large"]);
    let h = &report.rows[0].paired_hash;
    assert!(report.rows.iter().all(|r| &r.paired_hash == h));
    let distinct: std::collections::HashSet<_> = report.rows.iter().map(|r| &r.config_hash).collect();
    assert_eq!(distinct.len(), 3);
}
