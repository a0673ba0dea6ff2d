use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::GradCheck;

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::new(vec![3, h, w], data).unwrap()
}

fn image64(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * h * w).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(vec![3, h, w], data).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[test]
fn catalog_has_fifty_entries_in_order() {
    let cat = catalog(MagnitudeScale::Standard);
    assert_eq!(cat.len(), 50);
    assert_eq!(cat[0].kind, AugKind::Rotate);
    assert_eq!(cat[10].kind, AugKind::Gamma);
    assert_eq!(cat[11].kind, AugKind::LowPass(Cutoff::new(1).unwrap()));
    assert_eq!(cat[29].kind, AugKind::LowPass(Cutoff::new(19).unwrap()));
    assert_eq!(cat[30].kind, AugKind::HighPass(Cutoff::new(1).unwrap()));
    assert_eq!(cat[49].kind, AugKind::NeuralEnhance);
    assert_eq!(cat.iter().filter(|s| s.parameterized).count(), 8);
    for s in &cat {
        assert_eq!(s.parameterized, s.activation != Activation::None);
        assert_eq!(s.parameterized, s.magnitude_range.is_some());
    }
}

#[test]
fn catalog_ranges() {
    let std = catalog(MagnitudeScale::Standard);
    assert_eq!(std[0].activation, Activation::Tanh);
    assert_eq!(std[0].magnitude_range, Some(30.0));
    let large = catalog(MagnitudeScale::Large);
    assert!((large[3].magnitude_range.unwrap() - 4.5).abs() < 1e-12);
    let small = catalog(MagnitudeScale::Small);
    assert!((small[1].magnitude_range.unwrap() - 0.15).abs() < 1e-12);
}

#[test]
fn kind_names_round_trip() {
    for spec in catalog(MagnitudeScale::Standard) {
        assert_eq!(AugKind::parse(&spec.kind.to_string()).unwrap(), spec.kind);
    }
    assert!(AugKind::parse("low-pass").is_err());
    assert!(AugKind::parse("rotate@0.5").is_err());
    assert_eq!(
        catalog_without(MagnitudeScale::Standard, Some(AugFamily::LowPass)).len(),
        31
    );
}

#[test]
fn cutoff_parsing() {
    assert_eq!(Cutoff::from_value(0.35).unwrap().step(), 7);
    assert!(Cutoff::from_value(0.33).is_err());
    assert!(Cutoff::from_value(1.0).is_err());
    assert!(Cutoff::new(0).is_err());
}

#[test]
fn magnitude_mapping_examples() {
    let cat = catalog(MagnitudeScale::Standard);
    assert_eq!(map_magnitude(0.0, &cat[0]), Some(0.0));
    assert_eq!(map_magnitude(0.0, &cat[3]), Some(1.5));
    // Independent evaluation of 30·tanh(1) from the exponential form.
    let e2 = std::f64::consts::E.powi(2);
    let oracle = 30.0 * (e2 - 1.0) / (e2 + 1.0);
    assert!((map_magnitude(1.0, &cat[0]).unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 22.847_824_678_672_95).abs() < 1e-12);
    assert_eq!(map_magnitude(3.0, &cat[6]), None);
}

#[test]
fn magnitude_var_matches_plain() {
    for spec in catalog(MagnitudeScale::Large).iter().filter(|s| s.parameterized) {
        let mut g = Graph::<f64>::new();
        let raw = g.constant(Tensor::scalar(0.37));
        let m = map_magnitude_var(&mut g, raw, spec).unwrap().unwrap();
        let plain = map_magnitude(0.37, spec).unwrap();
        assert!((g.value(m).item() - plain).abs() < 1e-12);
    }
}

#[test]
fn argument_contract() {
    let x = image(1, 8, 8);
    assert!(matches!(
        apply(AugKind::Rotate, &x, None, None),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        apply(AugKind::Invert, &x, Some(1.0), None),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        apply(AugKind::NeuralEnhance, &x, None, None),
        Err(Error::Contract(_))
    ));
    let mut bad = x.clone();
    bad.data_mut()[5] = f32::NAN;
    assert!(apply(AugKind::Invert, &bad, None, None).unwrap_err().is_numeric());
}

#[test]
fn invert_is_one_minus_x() {
    let x = image(2, 8, 8);
    let y = apply(AugKind::Invert, &x, None, None).unwrap();
    for (a, b) in x.data().iter().zip(y.data()) {
        assert_eq!(*b, 1.0 - a);
    }
}

#[test]
fn zero_rotation_is_bitwise_identity() {
    let x = image(3, 16, 16);
    let y = apply(AugKind::Rotate, &x, Some(0.0), None).unwrap();
    assert_eq!(x.data(), y.data());
}

#[test]
fn identity_limits() {
    let x = image(4, 12, 10);
    for (kind, m) in [
        (AugKind::Rotate, 0.0),
        (AugKind::Scale, 0.0),
        (AugKind::Brightness, 0.0),
        (AugKind::Hue, 0.0),
        (AugKind::Saturate, 1.0),
        (AugKind::Contrast, 1.0),
        (AugKind::Sharpness, 1.0),
        (AugKind::Gamma, 1.0),
    ] {
        assert_eq!(neutral_magnitude(kind), Some(m));
        let y = apply(kind, &x, Some(m), None).unwrap();
        assert!(max_diff(&x, &y) <= 1e-6, "{kind}: {}", max_diff(&x, &y));
    }
}

#[test]
fn rotate_quarter_turn_permutes_pixels() {
    // A 90° turn maps the pixel grid onto itself.
    let x = image(5, 7, 7);
    let y = apply(AugKind::Rotate, &x, Some(90.0), None).unwrap();
    let n = 7;
    for c in 0..3 {
        for yy in 0..n {
            for xx in 0..n {
                // Output (xx, yy) samples source (c·dx + s·dy, −s·dx + c·dy) = (dy, −dx).
                let (sx, sy) = (yy, n - 1 - xx);
                let got = y.data()[(c * n + yy) * n + xx];
                let want = x.data()[(c * n + sy) * n + sx];
                assert!((got - want).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn highpass_of_constant_is_zero() {
    let x = Tensor::full(&[3, 16, 16], 0.7f32);
    for c in Cutoff::all() {
        let y = apply(AugKind::HighPass(c), &x, None, None).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let raw = apply_unclamped(AugKind::HighPass(c), &x, None).unwrap();
        assert!(raw.data().iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn lowpass_and_highpass_are_complementary() {
    let x = image(6, 32, 32);
    for c in Cutoff::all() {
        let lp = apply_unclamped(AugKind::LowPass(c), &x, None).unwrap();
        let hp = apply_unclamped(AugKind::HighPass(c), &x, None).unwrap();
        for ((a, b), v) in lp.data().iter().zip(hp.data()).zip(x.data()) {
            assert!((a + b - v).abs() <= 1e-4);
        }
    }
}

#[test]
fn filters_are_linear() {
    let x = image(7, 16, 16);
    let y = image(8, 16, 16);
    let (a, b) = (0.3f32, -1.7f32);
    let mix = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
    )
    .unwrap();
    for c in Cutoff::all() {
        for kind in [AugKind::LowPass(c), AugKind::HighPass(c)] {
            let fm = apply_unclamped(kind, &mix, None).unwrap();
            let fx = apply_unclamped(kind, &x, None).unwrap();
            let fy = apply_unclamped(kind, &y, None).unwrap();
            for ((m, p), q) in fm.data().iter().zip(fx.data()).zip(fy.data()) {
                assert!((m - (a * p + b * q)).abs() <= 1e-4);
            }
        }
    }
}

#[test]
fn filter_bank_matches_single_filters() {
    let x = image(9, 16, 16);
    let kinds: Vec<AugKind> = catalog(MagnitudeScale::Standard)
        .iter()
        .map(|s| s.kind)
        .filter(|k| k.is_filter())
        .collect();
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.clone());
    let outs = filter_bank_var(&mut g, xv, &kinds).unwrap();
    for (k, v) in kinds.iter().zip(outs) {
        let single = apply(*k, &x, None, None).unwrap();
        assert!(max_diff(g.value(v), &single) < 1e-5, "{k}");
    }
}

#[test]
fn autocontrast_is_idempotent() {
    for seed in 0..5 {
        let mut x = image(10 + seed, 16, 16);
        // Squeeze into a narrow band so the first pass does real work.
        x.data_mut().iter_mut().for_each(|v| *v = 0.3 + 0.4 * *v);
        let once = apply(AugKind::AutoContrast, &x, None, None).unwrap();
        let twice = apply(AugKind::AutoContrast, &once, None, None).unwrap();
        assert!(max_diff(&once, &twice) <= 1e-5);
    }
}

#[test]
fn autocontrast_flat_channel_passes_through() {
    let x = Tensor::full(&[3, 4, 4], 0.25f32);
    let y = apply(AugKind::AutoContrast, &x, None, None).unwrap();
    assert_eq!(x.data(), y.data());
}

#[test]
fn equalize_spreads_histogram() {
    let x = image(20, 16, 16);
    let squeezed = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| 0.4 + 0.2 * v).collect()).unwrap();
    let y = apply(AugKind::Equalize, &squeezed, None, None).unwrap();
    let plane = &y.data()[..256];
    let lo = plane.iter().copied().fold(f32::MAX, f32::min);
    let hi = plane.iter().copied().fold(f32::MIN, f32::max);
    assert_eq!(lo, 0.0);
    assert_eq!(hi, 1.0);
}

#[test]
fn hue_preserves_luma() {
    let x = image(21, 8, 8);
    let y = apply_unclamped(AugKind::Hue, &x, Some(1.3)).unwrap();
    let hw = 64;
    for i in 0..hw {
        let l = |t: &Tensor| {
            LUMA.iter()
                .enumerate()
                .map(|(c, k)| *k as f32 * t.data()[c * hw + i])
                .sum::<f32>()
        };
        assert!((l(&x) - l(&y)).abs() < 1e-5);
    }
}

#[test]
fn enhancer_starts_as_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = EnhancerParams::init(&mut rng, 3);
    let x = image(22, 16, 16);
    let y = apply(AugKind::NeuralEnhance, &x, None, Some(&e)).unwrap();
    assert_eq!(x.data(), y.data());
    assert_eq!(e.numel(), 16 * 3 * 9 + 16 + 16 * 16 * 9 + 16 + 3 * 16 * 9 + 3);
}

#[test]
fn enhancer_output_in_range_for_random_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut e = EnhancerParams::init(&mut rng, 3);
    for t in e.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    }
    let x = Tensor::zeros(&[3, 8, 8]);
    let y = neural_enhance(&x, &e).unwrap();
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(y.data().iter().any(|v| *v > 0.0));
}

#[test]
fn enhancer_rejects_wrong_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = EnhancerParams::init(&mut rng, 1);
    assert!(matches!(neural_enhance(&image(1, 4, 4), &e), Err(Error::Contract(_))));
}

/// Checks the gradient of an unclamped augmentation w.r.t. its magnitude
/// and the image, at five random magnitudes inside the Standard range.
fn check_parameterized(kind: AugKind, tol: f32) {
    let spec = catalog(MagnitudeScale::Standard)
        .into_iter()
        .find(|s| s.kind == kind)
        .unwrap();
    let range = spec.magnitude_range.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..5u64 {
        let m = match spec.activation {
            Activation::Tanh => rng.random_range(-0.9..0.9) * range,
            _ => rng.random_range(0.1..0.9) * range,
        };
        let x = image64(seed, 10, 10, 0.05, 0.95).with_grad();
        let mv = Tensor::scalar(m).with_grad();
        let report = GradCheck::new(1e-4)
            .unwrap()
            .seed(seed)
            .run(
                &kind.to_string(),
                |g, v| apply_unclamped_var(g, kind, v[0], Some(v[1]), None),
                &[x, mv],
            )
            .unwrap();
        assert!(report.passes(tol), "{kind} at m={m}: {:?}", report.max_rel_err);
    }
}

#[test]
fn grad_rotate() {
    check_parameterized(AugKind::Rotate, 5e-3);
}

#[test]
fn grad_rotate_five_degrees() {
    let x = image64(5, 16, 16, 0.0, 1.0).with_grad();
    let m = Tensor::scalar(5.0).with_grad();
    let report = GradCheck::new(1e-4)
        .unwrap()
        .run(
            "rotate",
            |g, v| apply_unclamped_var(g, AugKind::Rotate, v[0], Some(v[1]), None),
            &[x, m],
        )
        .unwrap();
    assert!(report.passes(5e-3), "{:?}", report.max_rel_err);
}

#[test]
fn grad_scale() {
    check_parameterized(AugKind::Scale, 5e-3);
}

#[test]
fn grad_saturate() {
    check_parameterized(AugKind::Saturate, 1e-3);
}

#[test]
fn grad_contrast() {
    check_parameterized(AugKind::Contrast, 1e-3);
}

#[test]
fn grad_sharpness() {
    check_parameterized(AugKind::Sharpness, 1e-3);
}

#[test]
fn grad_brightness() {
    check_parameterized(AugKind::Brightness, 1e-3);
}

#[test]
fn grad_hue() {
    check_parameterized(AugKind::Hue, 1e-3);
}

#[test]
fn grad_gamma() {
    check_parameterized(AugKind::Gamma, 1e-3);
}

#[test]
fn grad_unparameterized_differentiable_kinds() {
    for kind in [
        AugKind::AutoContrast,
        AugKind::Invert,
        AugKind::LowPass(Cutoff::new(4).unwrap()),
        AugKind::HighPass(Cutoff::new(13).unwrap()),
    ] {
        for seed in 0..5 {
            let x = image64(seed, 8, 8, 0.05, 0.95).with_grad();
            let report = GradCheck::new(1e-4)
                .unwrap()
                .seed(seed)
                .run(
                    &kind.to_string(),
                    |g, v| apply_unclamped_var(g, kind, v[0], None, None),
                    &[x],
                )
                .unwrap();
            assert!(report.passes(1e-3), "{kind}: {:?}", report.max_rel_err);
        }
    }
}

#[test]
fn grad_filter_bank_band_path() {
    let kinds: Vec<AugKind> = Cutoff::all()
        .flat_map(|c| [AugKind::LowPass(c), AugKind::HighPass(c)])
        .collect();
    let x = image64(3, 8, 8, 0.05, 0.95).with_grad();
    let report = GradCheck::new(1e-4)
        .unwrap()
        .run("filter-bank", |g, v| filter_bank_unclamped_var(g, v[0], &kinds), &[x])
        .unwrap();
    assert!(report.passes(1e-3), "{:?}", report.max_rel_err);
}

#[test]
fn equalize_gradient_is_straight_through() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(image64(1, 4, 4, 0.0, 1.0).with_grad());
    let y = g.apply(Equalize, &[x]).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|v| *v == 1.0));
}

#[test]
fn grad_enhancer_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut e = EnhancerParams::init(&mut rng, 3);
    // Non-zero last layer so every weight receives gradient.
    for t in e.params.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let names: Vec<String> = e.params.iter().map(|(n, _)| n.to_string()).collect();
    for seed in 0..5u64 {
        let mut inputs: Vec<Tensor<f64>> = vec![image64(seed, 6, 6, 0.2, 0.8)];
        inputs.extend(e.params.iter().map(|(_, t)| t.cast::<f64>().with_grad()));
        let names = names.clone();
        let report = GradCheck::new(1e-4)
            .unwrap()
            .seed(seed)
            .run(
                "neural-enhance",
                move |g, v| {
                    let bound = BoundParams::from_vars(names.clone(), v[1..].to_vec());
                    enhance_var(g, v[0], &bound)
                },
                &inputs,
            )
            .unwrap();
        assert!(report.passes(1e-3), "{:?}", report.max_rel_err);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_in_unit_range(seed in 0u64..1000, raw in -4.0f64..4.0, idx in 0usize..50) {
        let cat = catalog(MagnitudeScale::Large);
        let spec = cat[idx];
        let x = image(seed, 8, 8);
        let m = map_magnitude(raw, &spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = EnhancerParams::init(&mut rng, 3);
        for t in e.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        let enh = (spec.kind == AugKind::NeuralEnhance).then_some(&e);
        let y = apply(spec.kind, &x, m, enh).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
