//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 8 drives the `dyntta` binary, which `cargo test --workspace`
//! builds next to this test executable.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dyntta::augment::{apply_unclamped, AugFamily, AugKind, Cutoff};
use dyntta::classifier::{train_classifier, ClassifierConfig, ClassifierParams};
use dyntta::corrupt::{make_dataset, CorruptionKind, Dataset, Scenario, UNSEEN};
use dyntta::diffcore::{Graph, Tensor};
use dyntta::estimate::{
    boxplot_svg, collect_stats, concat, corrupted_splits, estimate_augs, rank_families, retrain_and_compare,
};
use dyntta::gradsuite::run_suite;
use dyntta::head::{blend, dyntta_forward, enhance_batch, forward_var, DynttaParams, Mode};
use dyntta::train::{evaluate, run_ablation, train_dyntta, AblationSuite, EvalOptions, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [0, 1, 2];
const CORRUPTION_SEED: u64 = 777;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn majority(hits: usize) -> bool {
    2 * hits > SEEDS.len()
}

/// Shared toy setup: one dataset and one frozen classifier.
struct Toy {
    train: Dataset,
    test: Dataset,
    clf: ClassifierParams,
    /// Non-blind enhancement models, one per seed.
    nonblind: Vec<DynttaParams>,
    /// Blind enhancement model used for estimation.
    blind: Option<DynttaParams>,
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f32, hi: f32) -> Tensor {
    let data = (0..3 * h * w).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(vec![3, h, w], data).unwrap()
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let entries = match run_suite(5, None) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<&str> = entries
        .iter()
        .filter(|e| !e.passes())
        .map(|e| e.name.as_str())
        .collect();
    let worst = entries
        .iter()
        .map(|e| e.max_rel_err / e.tolerance)
        .fold(0.0f32, f32::max);
    outcome(
        failed.is_empty() && !entries.is_empty() && secs < 120.0,
        format!(
            "{} checks x 5 seeds, worst error at {:.0}% of its tolerance, {secs:.1}s{}",
            entries.len(),
            100.0 * worst,
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", failed.join(" "))
            }
        ),
    )
}

fn c2_blend() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum = 0.0f64;
    let mut hull_violations = 0;
    let mut onehot_mismatches = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=50);
        let (h, w) = (rng.random_range(2..8), rng.random_range(2..8));
        // Unclamped augmentation outputs can leave [0, 1].
        let imgs: Vec<Tensor> = (0..k).map(|_| random_image(&mut rng, h, w, -0.5, 1.5)).collect();
        let logits: Vec<f32> = (0..k).map(|_| 3.0 * rng.sample::<f32, _>(StandardNormal)).collect();

        let mut g = Graph::<f32>::new();
        let lv = g.constant(Tensor::new(vec![k], logits).unwrap());
        let wv = g.softmax(lv).unwrap();
        let items: Vec<_> = imgs.iter().map(|t| g.constant(t.clone())).collect();
        let out = g.weighted_sum(wv, &items).unwrap();
        let s: f64 = g.value(wv).data().iter().map(|v| *v as f64).sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
        let out = g.value(out).data();
        for (p, v) in out.iter().enumerate() {
            let lo = imgs.iter().map(|t| t.data()[p]).fold(f32::INFINITY, f32::min);
            let hi = imgs.iter().map(|t| t.data()[p]).fold(f32::NEG_INFINITY, f32::max);
            // f32 accumulation of k terms, each below 1.5 in magnitude.
            let slack = k as f32 * f32::EPSILON * 1.5;
            if *v < lo - slack || *v > hi + slack {
                hull_violations += 1;
            }
        }

        // One-hot weights reproduce the first image, through the tape and
        // through the inference blend.
        let unit: Vec<Tensor> = (0..k).map(|_| random_image(&mut rng, h, w, 0.0, 1.0)).collect();
        let mut onehot = vec![0.0f64; k];
        onehot[0] = 1.0;
        if blend(&unit, &onehot).unwrap() != unit[0] {
            onehot_mismatches += 1;
        }
        let mut g = Graph::<f32>::new();
        let wv = g.constant(Tensor::new(vec![k], onehot.iter().map(|v| *v as f32).collect()).unwrap());
        let items: Vec<_> = unit.iter().map(|t| g.constant(t.clone())).collect();
        let out = g.weighted_sum(wv, &items).unwrap();
        if g.value(out) != &unit[0] {
            onehot_mismatches += 1;
        }
    }
    outcome(
        worst_sum <= 1e-6 && hull_violations == 0 && onehot_mismatches == 0,
        format!(
            "1000 cases: max |sum w - 1| {worst_sum:.1e}, {hull_violations} pixels outside the input range, {onehot_mismatches} one-hot mismatches"
        ),
    )
}

fn c3_filters() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cutoffs: Vec<Cutoff> = Cutoff::all().collect();
    let mut recon = 0.0f32;
    let mut linear = 0.0f32;
    for (h, w) in [(16, 16), (24, 40), (32, 32)] {
        let x = random_image(&mut rng, h, w, 0.0, 1.0);
        let y = random_image(&mut rng, h, w, 0.0, 1.0);
        let (a, b) = (rng.random_range(-2.0f32..2.0), rng.random_range(-2.0f32..2.0));
        let mix = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        for &c in &cutoffs {
            let lp = apply_unclamped(AugKind::LowPass(c), &x, None).unwrap();
            let hp = apply_unclamped(AugKind::HighPass(c), &x, None).unwrap();
            for ((l, hh), v) in lp.data().iter().zip(hp.data()).zip(x.data()) {
                recon = recon.max((l + hh - v).abs());
            }
            for kind in [AugKind::LowPass(c), AugKind::HighPass(c)] {
                let fm = apply_unclamped(kind, &mix, None).unwrap();
                let fx = apply_unclamped(kind, &x, None).unwrap();
                let fy = apply_unclamped(kind, &y, None).unwrap();
                for ((m, p), q) in fm.data().iter().zip(fx.data()).zip(fy.data()) {
                    linear = linear.max((m - (a * p + b * q)).abs());
                }
            }
        }
    }
    outcome(
        cutoffs.len() == 19 && recon <= 1e-4 && linear <= 1e-4,
        format!(
            "{} cutoffs, 3 image sizes: reconstruction error {recon:.1e}, linearity error {linear:.1e}",
            cutoffs.len()
        ),
    )
}

fn unseen_grid() -> Vec<(CorruptionKind, u8)> {
    UNSEEN.iter().map(|k| (*k, 5)).collect()
}

fn c4_pruning(toy: &Toy) -> Outcome {
    let p = &toy.nonblind[0];
    let mut bitwise = true;
    for img in toy.test.images.iter().take(8) {
        let mut g = Graph::<f32>::new();
        let b = p.bind(&mut g, false);
        let x = g.constant(img.clone());
        let y = forward_var(&mut g, x, p, &b, p.mode, None).unwrap();
        let single = dyntta_forward(img, p, 0.0, p.mode).unwrap();
        let batch = enhance_batch(std::slice::from_ref(img), p, 0.0).unwrap();
        bitwise &= g.value(y) == &single && batch.images[0] == single && batch.executed == p.k();
    }
    let grid = unseen_grid();
    let at = |t: f64| {
        let opts = EvalOptions {
            threshold: t,
            ..EvalOptions::default()
        };
        evaluate("pruned", &toy.clf, Some(p), &toy.test, &grid, &opts).unwrap()
    };
    let full = at(0.0);
    let pruned = at(0.05);
    let (e0, e1) = (full.executed_mean.unwrap(), pruned.executed_mean.unwrap());
    let reduction = 1.0 - e1 / e0;
    let delta = 100.0 * (pruned.unseen_mean.unwrap() - full.unseen_mean.unwrap());
    outcome(
        bitwise && reduction >= 0.5 && delta.abs() <= 1.0,
        format!(
            "threshold 0 bitwise equal: {bitwise}; threshold 0.05 executes {e1:.2} of {e0:.0} ({:.0}% fewer), Unseen change {delta:+.2} points",
            100.0 * reduction
        ),
    )
}

fn c5_robustness(toy: &Toy, started: Instant) -> Outcome {
    let grid = unseen_grid();
    let opts = EvalOptions::default();
    let base = evaluate("baseline", &toy.clf, None, &toy.test, &grid, &opts).unwrap();
    let mut hits = 0;
    let mut parts = Vec::new();
    for (seed, p) in SEEDS.iter().zip(&toy.nonblind) {
        let mut r = evaluate("dyntta", &toy.clf, Some(p), &toy.test, &grid, &opts).unwrap();
        r.compare_to(&base).unwrap();
        let d = r.deltas.as_ref().unwrap();
        let (du, dc) = (100.0 * d.unseen_mean.unwrap(), 100.0 * d.clean);
        let ok = du >= 3.0 && dc >= -1.0;
        hits += ok as usize;
        parts.push(format!("seed {seed}: Unseen {du:+.1}, clean {dc:+.1}"));
    }
    let mins = started.elapsed().as_secs_f64() / 60.0;
    outcome(
        majority(hits) && mins < 30.0,
        format!("{hits}/3 seeds meet the bar ({}), {mins:.1} min", parts.join("; ")),
    )
}

/// Blind ablation runs share one reduced setup: 1000 training images,
/// 3 epochs, 200 test images, every corruption at severity 3.
fn ablation_setup(toy: &Toy) -> (TrainConfig, Dataset, Dataset, Vec<(CorruptionKind, u8)>) {
    let base = TrainConfig {
        epochs: 3,
        scenario: Scenario::Blind,
        ..TrainConfig::default()
    };
    let train = toy.train.select(&(0..1000).collect::<Vec<_>>());
    let test = toy.test.select(&(0..200).collect::<Vec<_>>());
    let grid = CorruptionKind::ALL.iter().map(|k| (*k, 3)).collect();
    (base, train, test, grid)
}

fn c6_ablations(toy: &Toy) -> Outcome {
    let (base, train, test, grid) = ablation_setup(toy);
    let opts = EvalOptions::default();
    let modes = run_ablation(
        AblationSuite::Modes,
        &base,
        &toy.clf,
        &train,
        &test,
        &grid,
        &SEEDS,
        &opts,
    )
    .unwrap();
    let mut mode_hits = 0;
    for s in SEEDS {
        let full = modes.metric(Mode::Full.name(), s).unwrap();
        let blend_only = modes.metric(Mode::BlendOnly.name(), s).unwrap();
        mode_hits += (full >= blend_only) as usize;
    }

    let loo = run_ablation(
        AblationSuite::LeaveOneOut,
        &base,
        &toy.clf,
        &train,
        &test,
        &grid,
        &SEEDS,
        &opts,
    )
    .unwrap();
    let mut loo_hits = 0;
    let mut largest = Vec::new();
    for s in SEEDS {
        let reference = loo.metric("none", s).unwrap();
        let (name, drop) = AugFamily::ALL
            .iter()
            .map(|f| (f.name(), reference - loo.metric(f.name(), s).unwrap()))
            .fold(("", f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        loo_hits += (name == AugFamily::NeuralEnhance.name()) as usize;
        largest.push(format!("seed {s}: {name} {:+.2}", -100.0 * drop));
    }
    outcome(
        majority(mode_hits) && majority(loo_hits),
        format!(
            "full >= blend-only in {mode_hits}/3 seeds; neural-enhance largest leave-one-out drop in {loo_hits}/3 (largest: {})",
            largest.join("; ")
        ),
    )
}

fn c7_estimation(toy: &Toy) -> Outcome {
    let blind = toy.blind.as_ref().unwrap();
    let parts = corrupted_splits(
        &toy.test,
        &[CorruptionKind::SpeckleNoise, CorruptionKind::SaturateShift],
        5,
        CORRUPTION_SEED,
    )
    .unwrap();
    let vals: Vec<&Dataset> = parts.iter().map(|(_, v, _)| v).collect();
    let stats = collect_stats(blind, &concat(&vals).unwrap()).unwrap();
    let top: Vec<AugFamily> = rank_families(&stats).into_iter().take(4).map(|(f, _)| f).collect();
    let ranked = top.contains(&AugFamily::LowPass) && top.contains(&AugFamily::Saturate);
    let ops = estimate_augs(&stats, 4).unwrap();

    let cfg = ClassifierConfig::default();
    let report = retrain_and_compare(&toy.train, &toy.test, &ops, &SEEDS, &cfg, CORRUPTION_SEED).unwrap();
    let mut hits = 0;
    for s in SEEDS {
        let est = report.row("estimated", s).unwrap().mean;
        let normal = report.row("normal", s).unwrap().mean;
        hits += (est > normal) as usize;
    }
    let names: Vec<&str> = top.iter().map(|f| f.name()).collect();
    let ops: Vec<String> = ops.iter().map(|o| o.to_string()).collect();
    outcome(
        ranked && majority(hits),
        format!(
            "top-4 families [{}] (low-pass and saturate both present: {ranked}); estimated ops [{}]; Unseen mean normal {:.1} / all {:.1} / estimated {:.1}, estimated > normal in {hits}/3 seeds",
            names.join(", "),
            ops.join(", "),
            100.0 * report.average("normal").unwrap(),
            100.0 * report.average("all").unwrap(),
            100.0 * report.average("estimated").unwrap()
        ),
    )
}

fn cli_binary() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().unwrap();
    let dir = if dir.ends_with("deps") {
        dir.parent().unwrap()
    } else {
        dir
    };
    dir.join(format!("dyntta{}", std::env::consts::EXE_SUFFIX))
}

/// Runs every subcommand once, writing under `root`.
fn cli_chain(bin: &Path, root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).display().to_string();
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    fs::write(root.join("train.toml"), "epochs = 1\nbatch_size = 8\n").map_err(|e| e.to_string())?;
    let runs: Vec<Vec<String>> = vec![
        vec![
            "gen-data".into(),
            "--out".into(),
            p("data"),
            "--n-train".into(),
            "80".into(),
            "--n-test".into(),
            "40".into(),
        ],
        vec![
            "train-classifier".into(),
            "--data".into(),
            p("data"),
            "--out".into(),
            p("clf"),
            "--epochs".into(),
            "1".into(),
        ],
        vec![
            "train-dyntta".into(),
            "--data".into(),
            p("data"),
            "--classifier".into(),
            p("clf/classifier.json"),
            "--out".into(),
            p("dyn"),
            "--train-limit".into(),
            "16".into(),
            "--config".into(),
            p("train.toml"),
        ],
        vec![
            "eval".into(),
            "--data".into(),
            p("data"),
            "--classifier".into(),
            p("clf/classifier.json"),
            "--dyntta".into(),
            p("dyn/dyntta.json"),
            "--out".into(),
            p("eval"),
            "--test-limit".into(),
            "10".into(),
            "--kinds".into(),
            "fog,jpeg".into(),
            "--severities".into(),
            "1-2".into(),
        ],
        vec![
            "prune-sweep".into(),
            "--data".into(),
            p("data"),
            "--classifier".into(),
            p("clf/classifier.json"),
            "--dyntta".into(),
            p("dyn/dyntta.json"),
            "--out".into(),
            p("sweep"),
            "--thresholds".into(),
            "0,0.05".into(),
            "--test-limit".into(),
            "10".into(),
            "--kinds".into(),
            "fog".into(),
        ],
        vec![
            "ablate".into(),
            "--suite".into(),
            "modes".into(),
            "--data".into(),
            p("data"),
            "--classifier".into(),
            p("clf/classifier.json"),
            "--out".into(),
            p("ablate"),
            "--seeds".into(),
            "0".into(),
            "--train-limit".into(),
            "8".into(),
            "--test-limit".into(),
            "6".into(),
            "--kinds".into(),
            "fog".into(),
            "--config".into(),
            p("train.toml"),
        ],
        vec![
            "estimate".into(),
            "--data".into(),
            p("data"),
            "--dyntta".into(),
            p("dyn/dyntta.json"),
            "--out".into(),
            p("est"),
        ],
        vec![
            "retrain-estimated".into(),
            "--data".into(),
            p("data"),
            "--estimated".into(),
            p("est/estimated.txt"),
            "--out".into(),
            p("retrain"),
            "--seeds".into(),
            "0".into(),
            "--epochs".into(),
            "1".into(),
            "--train-limit".into(),
            "20".into(),
            "--test-limit".into(),
            "10".into(),
        ],
        vec![
            "grad-check".into(),
            "--seeds".into(),
            "1".into(),
            "--filter".into(),
            "softmax".into(),
            "--out".into(),
            p("grad"),
        ],
    ];
    for args in runs {
        let out = Command::new(bin)
            .args(["--seed", "3"])
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "`{}` failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    Ok(())
}

fn files_under(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files_under(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

fn c8_determinism() -> Outcome {
    let bin = cli_binary();
    if !bin.is_file() {
        return outcome(false, format!("CLI binary not found at {}", bin.display()));
    }
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for root in [&a, &b] {
        if let Err(e) = cli_chain(&bin, root) {
            return outcome(false, e);
        }
    }
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    files_under(&a, &a, &mut fa);
    files_under(&b, &b, &mut fb);
    fa.sort();
    fb.sort();
    if fa != fb {
        return outcome(false, "the two runs wrote different file sets".into());
    }
    let mut differing = Vec::new();
    let mut compared = 0;
    for rel in &fa {
        let (x, y) = (fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap());
        if rel.file_name().is_some_and(|n| n == "manifest.json") {
            // Wall-clock time and absolute paths differ; the recorded output
            // hashes must not.
            let outputs = |bytes: &[u8]| -> BTreeMap<String, String> {
                let v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                serde_json::from_value(v["outputs"].clone()).unwrap()
            };
            if outputs(&x) != outputs(&y) {
                differing.push(rel.display().to_string());
            }
        } else {
            compared += 1;
            if x != y {
                differing.push(rel.display().to_string());
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "9 subcommands run twice with --seed 3: {compared} files compared byte for byte{}",
            if differing.is_empty() {
                String::new()
            } else {
                format!(", differing: {}", differing.join(" "))
            }
        ),
    )
}

fn c9_statistics(toy: &Toy) -> Outcome {
    let val = toy.test.select(&(0..100).collect::<Vec<_>>());
    let mut worst = 0.0f64;
    let mut boxes = Vec::new();
    let models: Vec<(&DynttaParams, usize)> = vec![(toy.blind.as_ref().unwrap(), AugFamily::ALL.len())];
    let loo = DynttaParams::standard(
        4,
        dyntta::augment::MagnitudeScale::Standard,
        Mode::Full,
        Some(AugFamily::HighPass),
    )
    .unwrap();
    let models = models.into_iter().chain([(&loo, AugFamily::ALL.len() - 1)]);
    let mut ok = true;
    for (p, want) in models {
        let st = collect_stats(p, &val).unwrap();
        let s: f64 = st.entries.iter().map(|e| e.weight.mean).sum();
        worst = worst.max((s - 1.0).abs());
        let n = boxplot_svg(&st, "weights").matches(r#"class="box""#).count();
        ok &= n == want;
        boxes.push(format!("{n} boxes for {want} kinds/groups"));
    }
    outcome(
        ok && worst <= 1e-6,
        format!("max |sum of entry means - 1| {worst:.1e}; {}", boxes.join(", ")),
    )
}

fn report(n: usize, name: &str, o: &Outcome, secs: f64) {
    println!(
        "criterion {n} {:<4} {name}: {} [{secs:.0}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    let _ = std::io::stdout().flush();
}

fn main() {
    let mut passed = Vec::new();
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(n, name, &o, t.elapsed().as_secs_f64());
        passed.push(o.pass);
    };

    run(1, "gradient suite", &mut c1_gradients);
    run(2, "blend contract", &mut c2_blend);
    run(3, "filter algebra", &mut c3_filters);

    let started = Instant::now();
    let (train, test) = make_dataset(0, 2000, 500, 10).unwrap();
    let mut clf = train_classifier(&train, &ClassifierConfig::default()).unwrap();
    clf.freeze();
    let nonblind = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                epochs: 10,
                seed,
                ..TrainConfig::default()
            };
            train_dyntta(&clf, &train, &cfg).unwrap().params
        })
        .collect();
    let mut toy = Toy {
        train,
        test,
        clf,
        nonblind,
        blind: None,
    };
    let setup = started.elapsed().as_secs_f64();

    run(4, "pruning equivalence", &mut || c4_pruning(&toy));
    run(5, "robustness gain", &mut || c5_robustness(&toy, started));
    eprintln!("(criteria 4-5 share {setup:.0}s of classifier and model training)");
    run(6, "ablation directions", &mut || c6_ablations(&toy));

    let cfg = TrainConfig {
        epochs: 10,
        scenario: Scenario::Blind,
        ..TrainConfig::default()
    };
    toy.blind = Some(train_dyntta(&toy.clf, &toy.train, &cfg).unwrap().params);
    run(7, "estimation pipeline", &mut || c7_estimation(&toy));
    run(8, "determinism", &mut c8_determinism);
    run(9, "statistics contract", &mut || c9_statistics(&toy));

    let n = passed.iter().filter(|p| **p).count();
    println!("acceptance: {n}/{} criteria pass", passed.len());
    if n != passed.len() {
        std::process::exit(1);
    }
}
