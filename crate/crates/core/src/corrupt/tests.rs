use super::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample_images(n: usize) -> Vec<crate::diffcore::Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..n).map(|i| render(i % CLASSES, &mut rng)).collect()
}

#[test]
fn partition_is_disjoint_and_complete() {
    assert_eq!(SEEN.len(), 12);
    assert_eq!(UNSEEN.len(), 4);
    for k in CorruptionKind::ALL {
        assert!(SEEN.contains(&k) ^ UNSEEN.contains(&k), "{k}");
        assert_eq!(CorruptionKind::parse(k.name()).unwrap(), k);
    }
}

#[test]
fn dataset_is_deterministic_and_balanced() {
    let (a, at) = make_dataset(0, 200, 50, 10).unwrap();
    let (b, bt) = make_dataset(0, 200, 50, 10).unwrap();
    assert_eq!(a, b);
    assert_eq!(at, bt);
    assert_eq!(a.per_class(), vec![20; 10]);
    assert_eq!(at.per_class(), vec![5; 10]);
    assert!(a.images.iter().all(|t| t.shape() == [3, SIZE, SIZE]));
    assert!(a.images.iter().flat_map(|t| t.data()).all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(a.images[0], at.images[0]);
}

#[test]
fn two_thousand_images_give_two_hundred_per_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let _ = render(0, &mut rng);
    let (a, _) = make_dataset(3, 2000, 1, 10).unwrap();
    assert_eq!(a.per_class(), vec![200; 10]);
}

#[test]
fn severity_zero_is_identity() {
    let img = &sample_images(1)[0];
    for k in CorruptionKind::ALL {
        assert_eq!(&corrupt(img, k, 0, 5).unwrap(), img);
    }
    assert!(corrupt(img, CorruptionKind::Fog, 6, 0).is_err());
}

#[test]
fn corruption_is_deterministic() {
    let img = &sample_images(1)[0];
    for k in CorruptionKind::ALL {
        for s in SEVERITIES {
            assert_eq!(
                corrupt(img, k, s, 9).unwrap(),
                corrupt(img, k, s, 9).unwrap(),
                "{k}@{s}"
            );
        }
    }
}

#[test]
fn distortion_increases_with_severity() {
    let imgs = sample_images(100);
    for k in CorruptionKind::ALL {
        let dist: Vec<f64> = SEVERITIES
            .map(|s| {
                imgs.iter()
                    .enumerate()
                    .map(|(i, x)| mean_abs_diff(&corrupt(x, k, s, i as u64).unwrap(), x))
                    .sum::<f64>()
                    / imgs.len() as f64
            })
            .collect();
        assert!(dist.windows(2).all(|w| w[1] > w[0]), "{k}: {dist:?}");
    }
}

#[test]
fn png_round_trip() {
    let (ds, _) = make_dataset(1, 20, 1, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_png(&ds, dir.path(), "train").unwrap();
    assert!(dir.path().join("train/class_3").is_dir());
    let back = import_png(dir.path(), "train").unwrap();
    assert_eq!(back.labels, ds.labels);
    for (a, b) in back.images.iter().zip(&ds.images) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
    // A second export of the import is lossless.
    let dir2 = tempfile::tempdir().unwrap();
    export_png(&back, dir2.path(), "train").unwrap();
    assert_eq!(import_png(dir2.path(), "train").unwrap(), back);
}

#[test]
fn mix_limits_and_names() {
    let img = &sample_images(1)[0];
    let ops = op_set("all").unwrap();
    assert_eq!(mix_augment_with(img, 3, &ops, Some(0.0)).unwrap(), *img);
    assert_eq!(mix_augment(img, 3, &ops).unwrap(), mix_augment(img, 3, &ops).unwrap());
    assert_eq!(op_set("normal").unwrap().len(), 9);
    let all: Vec<&str> = ops[9..].iter().map(|o| o.name()).collect();
    assert_eq!(all, ["saturation", "contrast", "brightness", "sharpness"]);
    let est: Vec<&str> = op_set("estimated").unwrap()[9..].iter().map(|o| o.name()).collect();
    assert_eq!(est, ["saturation", "contrast", "highpass", "gamma"]);
    assert!(MixOp::parse("frobnicate").is_err());
    assert!(MixOp::parse("rotate:up").is_err());
    let op = MixOp::parse("saturation:down").unwrap();
    assert_eq!(op, MixOp::Saturation(Direction::Down));
    assert_eq!(op.to_string(), "saturation:down");
    for op in ops.iter().chain(
        [
            MixOp::LowPass,
            MixOp::HighPass,
            MixOp::Blur,
            MixOp::InverseGamma(Direction::Up),
        ]
        .iter(),
    ) {
        assert_eq!(MixOp::parse(&op.to_string()).unwrap(), *op);
    }
}

#[test]
fn non_blind_choices_cover_seen_and_clean() {
    assert_eq!(NON_BLIND_CHOICES, 61);
    let clean = (0..NON_BLIND_CHOICES)
        .filter(|&i| non_blind_choice(i) == BatchSource::Clean)
        .count();
    assert_eq!(clean, 1);
    for i in 0..NON_BLIND_CHOICES {
        if let BatchSource::Corrupted(k, s) = non_blind_choice(i) {
            assert!(k.is_seen() && (1..=5).contains(&s));
        }
    }
}

#[test]
fn streams_are_reproducible() {
    let (ds, _) = make_dataset(2, 60, 1, 10).unwrap();
    for sc in [Scenario::NonBlind, Scenario::Blind] {
        let a: Vec<Batch> = scenario_batches(sc, &ds, 8, 4).unwrap().map(|b| b.unwrap()).collect();
        let b: Vec<Batch> = scenario_batches(sc, &ds, 8, 4).unwrap().map(|b| b.unwrap()).collect();
        assert_eq!(a.len(), 8);
        assert_eq!(a.iter().map(|b| b.images.len()).sum::<usize>(), 60);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.images, y.images);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.source, y.source);
            if sc == Scenario::Blind {
                assert_eq!(x.source, BatchSource::Mixed);
            } else {
                assert_ne!(x.source, BatchSource::Mixed);
            }
        }
    }
}

#[test]
fn clean_frequency_matches_uniform_choice() {
    let (ds, _) = make_dataset(2, 10, 1, 10).unwrap();
    let mut clean = 0;
    let draws = 61 * 40;
    for seed in 0..draws as u64 {
        let first = scenario_batches(Scenario::NonBlind, &ds, 1, seed)
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        clean += (first.source == BatchSource::Clean) as usize;
    }
    // Binomial(2440, 1/61): mean 40, sd ≈ 6.3.
    assert!((15..=65).contains(&clean), "{clean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn corruptions_stay_in_range(k in 0usize..16, s in 1u8..=5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = render((seed % 10) as usize, &mut rng);
        let out = corrupt(&img, CorruptionKind::ALL[k], s, seed).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mix_stays_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = render((seed % 10) as usize, &mut rng);
        let out = mix_augment(&img, seed, &all_ops()).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
