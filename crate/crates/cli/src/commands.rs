use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dyntta::checkpoint::write_atomic;
use dyntta::classifier::{accuracy, train_classifier, Augmentation, ClassifierConfig, ClassifierParams};
use dyntta::corrupt::{
    export_png, import_png, make_dataset, op_set, with_normal, CorruptionKind, Dataset, MixOp, CLASSES, SEEN,
    SEVERITIES, UNSEEN,
};
use dyntta::estimate::{
    boxplot_svg, collect_stats, concat, corrupted_splits, estimate_augs, rank_families, retrain_and_compare,
};
use dyntta::gradsuite::run_suite;
use dyntta::head::DynttaParams;
use dyntta::train::{evaluate, run_ablation, train_dyntta, AblationSuite, EvalOptions, EvalReport, TrainConfig};
use dyntta::{Error, Result};

use crate::manifest::{check_input, hash_path, prepare_out, RunManifest};
use crate::{plot, Cli, Command, GridArgs};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub fn parse_kinds(s: &str) -> Result<Vec<CorruptionKind>> {
    match s {
        "unseen" => Ok(UNSEEN.to_vec()),
        "seen" => Ok(SEEN.to_vec()),
        "all" => Ok(CorruptionKind::ALL.to_vec()),
        list => list.split(',').map(|k| CorruptionKind::parse(k.trim())).collect(),
    }
}

pub fn parse_severities(s: &str) -> Result<Vec<u8>> {
    let bad = || invalid(format!("bad severity list `{s}`"));
    let out: Vec<u8> = if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u8, u8) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if out.is_empty() || out.iter().any(|v| !SEVERITIES.contains(v)) {
        return Err(bad());
    }
    Ok(out)
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| invalid(format!("bad seed list `{s}`"))))
        .collect()
}

fn parse_augmentation(s: &str) -> Result<Augmentation> {
    Ok(match s {
        "none" => Augmentation::None,
        "mix" => Augmentation::Mix,
        "normal" | "all" | "estimated" => Augmentation::MixPlus(op_set(s)?),
        list => {
            let ops = list
                .split(',')
                .map(|o| MixOp::parse(o.trim()))
                .collect::<Result<Vec<_>>>()?;
            Augmentation::MixPlus(with_normal(&ops))
        }
    })
}

fn limit(d: Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < d.len() => d.select(&(0..n).collect::<Vec<_>>()),
        _ => d,
    }
}

fn train_config(path: Option<&Path>, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

/// Book-keeping for one command: inputs read, files written, timing.
struct Run {
    out: PathBuf,
    command: &'static str,
    config: String,
    seeds: Vec<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    start: Instant,
}

impl Run {
    fn new(out: &Path, command: &'static str, force: bool) -> Result<Self> {
        prepare_out(out, force)?;
        Ok(Run {
            out: out.to_path_buf(),
            command,
            config: String::new(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        })
    }

    /// Verifies `path` against the manifest of the run that wrote it and
    /// records its hash.
    fn input(&mut self, path: &Path) -> Result<()> {
        check_input(path)?;
        self.inputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.out.join(name), text.as_bytes())?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Records a file or directory written by other means.
    fn wrote(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    fn finish(self) -> Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|o| Ok((o.clone(), hash_path(&self.out.join(o))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            duration_secs: self.start.elapsed().as_secs_f64(),
        }
        .write(&self.out)
    }
}

fn load_split(run: &mut Run, data: &Path, split: &str, n: Option<usize>) -> Result<Dataset> {
    run.input(&data.join(split))?;
    Ok(limit(import_png(data, split)?, n))
}

fn load_classifier(run: &mut Run, path: &Path) -> Result<ClassifierParams> {
    run.input(path)?;
    ClassifierParams::load(path)
}

fn load_dyntta(run: &mut Run, path: &Path) -> Result<DynttaParams> {
    run.input(path)?;
    DynttaParams::load(path)
}

fn grid_cells(g: &GridArgs) -> Result<Vec<(CorruptionKind, u8)>> {
    let kinds = parse_kinds(&g.kinds)?;
    let sevs = parse_severities(&g.severities)?;
    Ok(kinds.iter().flat_map(|k| sevs.iter().map(move |s| (*k, *s))).collect())
}

fn summary(r: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let mut s = format!(
        "{}: clean {:.2}  unseen {}  all {}",
        r.name,
        100.0 * r.clean,
        opt(r.unseen_mean),
        opt(r.all_mean)
    );
    if let Some(e) = r.executed_mean {
        let _ = write!(s, "  executed {e:.2}");
    }
    if let Some(d) = &r.deltas {
        let _ = write!(s, "  (Δclean {:+.2}, Δunseen {})", 100.0 * d.clean, opt(d.unseen_mean));
    }
    s
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    let seed = g.seed;
    match &cli.command {
        Command::GenData { out, n_train, n_test } => {
            let mut run = Run::new(out, "gen-data", g.force)?;
            run.seeds = vec![seed];
            run.config = format!("n_train = {n_train}\nn_test = {n_test}\n");
            let (train, test) = make_dataset(seed, *n_train, *n_test, CLASSES)?;
            export_png(&train, out, "train")?;
            export_png(&test, out, "test")?;
            run.wrote("train");
            run.wrote("test");
            run.finish()?;
            println!(
                "wrote {} train and {} test images to {}",
                train.len(),
                test.len(),
                out.display()
            );
        }
        Command::TrainClassifier {
            data,
            out,
            epochs,
            lr,
            batch_size,
            augmentation,
            train_limit,
        } => {
            let mut run = Run::new(out, "train-classifier", g.force)?;
            let train = load_split(&mut run, data, "train", *train_limit)?;
            let test = load_split(&mut run, data, "test", None)?;
            let cfg = ClassifierConfig {
                epochs: *epochs,
                lr: *lr,
                batch_size: *batch_size,
                seed,
                augmentation: parse_augmentation(augmentation)?,
            };
            run.seeds = vec![seed];
            run.config = format!("{cfg:?}");
            let params = train_classifier(&train, &cfg)?;
            params.save(&out.join("classifier.json"))?;
            run.wrote("classifier.json");
            run.wrote("classifier.bin");
            let acc = accuracy(&test.images, &test.labels, &params)?;
            run.write("metrics.json", &format!("{{\n  \"clean_test_accuracy\": {acc}\n}}\n"))?;
            run.finish()?;
            println!("clean test accuracy {:.2}", 100.0 * acc);
        }
        Command::TrainDyntta {
            data,
            classifier,
            out,
            train_limit,
        } => {
            let mut run = Run::new(out, "train-dyntta", g.force)?;
            let cfg = train_config(g.config.as_deref(), seed)?;
            if let Some(c) = &g.config {
                run.input(c)?;
            }
            run.seeds = vec![seed];
            run.config = cfg.to_text();
            let clf = load_classifier(&mut run, classifier)?;
            let train = load_split(&mut run, data, "train", *train_limit)?;
            let outcome = train_dyntta(&clf, &train, &cfg)?;
            outcome.params.save(&out.join("dyntta.json"))?;
            run.wrote("dyntta.json");
            run.wrote("dyntta.bin");
            let mut loss = String::from("epoch,loss\n");
            for (i, l) in outcome.epoch_loss.iter().enumerate() {
                let _ = writeln!(loss, "{i},{l:.6}");
            }
            run.write("loss.csv", &loss)?;
            run.write("config.toml", &cfg.to_text())?;
            run.finish()?;
            println!(
                "final loss {:.4}",
                outcome.epoch_loss.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval {
            data,
            classifier,
            dyntta,
            out,
            threshold,
            grid,
        } => {
            let mut run = Run::new(out, "eval", g.force)?;
            let clf = load_classifier(&mut run, classifier)?;
            let d = dyntta.as_deref().map(|p| load_dyntta(&mut run, p)).transpose()?;
            let test = load_split(&mut run, data, "test", grid.test_limit)?;
            let cells = grid_cells(grid)?;
            let opts = EvalOptions {
                threshold: *threshold,
                batch_size: grid.batch_size,
                seed,
            };
            run.seeds = vec![seed];
            run.config = format!("{opts:?}\n{grid:?}");
            let base = evaluate("baseline", &clf, None, &test, &cells, &opts)?;
            let mut report = match &d {
                Some(d) => evaluate("dyntta", &clf, Some(d), &test, &cells, &opts)?,
                None => base.clone(),
            };
            report.compare_to(&base)?;
            run.write("report.csv", &report.to_csv())?;
            run.write("report.json", &report.to_json())?;
            let curves: Vec<&EvalReport> = if d.is_some() { vec![&base, &report] } else { vec![&base] };
            run.write("accuracy.svg", &plot::severity_curves(&curves))?;
            run.finish()?;
            println!("{}", summary(&report));
        }
        Command::Ablate {
            suite,
            data,
            classifier,
            out,
            seeds,
            train_limit,
            grid,
        } => {
            let mut run = Run::new(out, "ablate", g.force)?;
            let suite = AblationSuite::parse(suite)?;
            let seeds = parse_seeds(seeds)?;
            let base = train_config(g.config.as_deref(), seed)?;
            if let Some(c) = &g.config {
                run.input(c)?;
            }
            let clf = load_classifier(&mut run, classifier)?;
            let train = load_split(&mut run, data, "train", *train_limit)?;
            let test = load_split(&mut run, data, "test", grid.test_limit)?;
            let cells = grid_cells(grid)?;
            let opts = EvalOptions {
                threshold: 0.0,
                batch_size: grid.batch_size,
                seed,
            };
            run.seeds = seeds.clone();
            run.config = base.to_text();
            let report = run_ablation(suite, &base, &clf, &train, &test, &cells, &seeds, &opts)?;
            run.write("ablation.csv", &report.to_csv())?;
            run.write("ablation.json", &report.to_json())?;
            run.finish()?;
            for label in report.labels() {
                let v: Vec<String> = seeds
                    .iter()
                    .filter_map(|s| report.metric(&label, *s))
                    .map(|m| format!("{:.2}", 100.0 * m))
                    .collect();
                println!("{label:<16} {}", v.join(" "));
            }
        }
        Command::PruneSweep {
            data,
            classifier,
            dyntta,
            out,
            thresholds,
            grid,
        } => {
            let mut run = Run::new(out, "prune-sweep", g.force)?;
            let ths: Vec<f64> = thresholds
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| invalid(format!("bad threshold list `{thresholds}`")))
                })
                .collect::<Result<_>>()?;
            if ths.is_empty() || ths.iter().any(|t| t.is_nan() || *t < 0.0) {
                return Err(invalid("thresholds must be non-negative"));
            }
            let clf = load_classifier(&mut run, classifier)?;
            let d = load_dyntta(&mut run, dyntta)?;
            let test = load_split(&mut run, data, "test", grid.test_limit)?;
            let cells = grid_cells(grid)?;
            run.seeds = vec![seed];
            run.config = format!("thresholds = {ths:?}\n{grid:?}");
            let mut reports: Vec<EvalReport> = Vec::new();
            for &t in &ths {
                let opts = EvalOptions {
                    threshold: t,
                    batch_size: grid.batch_size,
                    seed,
                };
                let mut r = evaluate(&format!("threshold-{t}"), &clf, Some(&d), &test, &cells, &opts)?;
                if let Some(first) = reports.first() {
                    r.compare_to(first)?;
                }
                reports.push(r);
            }
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
            let mut csv = String::from("threshold,executed_mean,clean,unseen_mean,all_mean,delta_unseen,delta_all\n");
            for r in &reports {
                let d = r.deltas.as_ref();
                let _ = writeln!(
                    csv,
                    "{},{},{:.6},{},{},{},{}",
                    r.threshold,
                    opt(r.executed_mean),
                    r.clean,
                    opt(r.unseen_mean),
                    opt(r.all_mean),
                    opt(d.and_then(|d| d.unseen_mean)),
                    opt(d.and_then(|d| d.all_mean))
                );
            }
            run.write("sweep.csv", &csv)?;
            run.write(
                "sweep.json",
                &serde_json::to_string_pretty(&reports).expect("reports serialize"),
            )?;
            run.finish()?;
            for r in &reports {
                println!("{}", summary(r));
            }
        }
        Command::Estimate {
            data,
            dyntta,
            out,
            kinds,
            top_n,
        } => {
            let mut run = Run::new(out, "estimate", g.force)?;
            let d = load_dyntta(&mut run, dyntta)?;
            let test = load_split(&mut run, data, "test", None)?;
            let kinds = parse_kinds(kinds)?;
            run.seeds = vec![seed];
            run.config = format!("kinds = {kinds:?}\ntop_n = {top_n}\n");
            let parts = corrupted_splits(&test, &kinds, 5, seed)?;
            let vals: Vec<&Dataset> = parts.iter().map(|(_, v, _)| v).collect();
            let stats = collect_stats(&d, &concat(&vals)?)?;
            let ops = estimate_augs(&stats, *top_n)?;
            let mut ranking = String::from("family,max_weight,median_magnitude\n");
            for (f, m) in rank_families(&stats) {
                let med = stats.median_magnitude(f).map_or(String::new(), |v| format!("{v:.6}"));
                let _ = writeln!(ranking, "{f},{m:.6},{med}");
            }
            let list: String = ops.iter().map(|o| format!("{o}\n")).collect();
            run.write("stats.json", &stats.to_json())?;
            run.write("ranking.csv", &ranking)?;
            run.write(
                "boxplot.svg",
                &boxplot_svg(&stats, "blend weights on the validation split"),
            )?;
            run.write("estimated.txt", &list)?;
            run.finish()?;
            print!("{list}");
        }
        Command::RetrainEstimated {
            data,
            estimated,
            out,
            seeds,
            epochs,
            train_limit,
            test_limit,
        } => {
            let mut run = Run::new(out, "retrain-estimated", g.force)?;
            run.input(estimated)?;
            let ops = fs::read_to_string(estimated)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| MixOp::parse(l.trim()))
                .collect::<Result<Vec<_>>>()?;
            let seeds = parse_seeds(seeds)?;
            let train = load_split(&mut run, data, "train", *train_limit)?;
            let test = load_split(&mut run, data, "test", *test_limit)?;
            let cfg = ClassifierConfig {
                epochs: *epochs,
                ..ClassifierConfig::default()
            };
            run.seeds = seeds.clone();
            run.config = format!("{cfg:?}\nestimated = {ops:?}");
            let report = retrain_and_compare(&train, &test, &ops, &seeds, &cfg, seed)?;
            run.write("retrain.csv", &report.to_csv())?;
            run.write("retrain.json", &report.to_json())?;
            run.finish()?;
            for set in ["normal", "all", "estimated"] {
                println!("{set:<10} {:.2}", 100.0 * report.average(set).unwrap_or(f64::NAN));
            }
        }
        Command::GradCheck { seeds, filter, out } => {
            let mut run = out.as_deref().map(|o| Run::new(o, "grad-check", g.force)).transpose()?;
            let entries = run_suite(*seeds, filter.as_deref())?;
            let mut csv = String::from("check,max_rel_err,tolerance,checked,skipped_kinks,pass\n");
            let mut ok = true;
            for e in &entries {
                ok &= e.passes();
                let _ = writeln!(
                    csv,
                    "{},{:.3e},{:.0e},{},{},{}",
                    e.name,
                    e.max_rel_err,
                    e.tolerance,
                    e.checked_elements,
                    e.skipped_kinks,
                    e.passes()
                );
                println!(
                    "{:<18} max rel err {:.2e} (tol {:.0e}) {}",
                    e.name,
                    e.max_rel_err,
                    e.tolerance,
                    if e.passes() { "ok" } else { "FAIL" }
                );
            }
            if let Some(run) = run.as_mut() {
                run.seeds = (0..*seeds).collect();
                run.config = format!("filter = {filter:?}");
                run.write("grad_check.csv", &csv)?;
            }
            if let Some(run) = run {
                run.finish()?;
            }
            if entries.is_empty() {
                return Err(invalid("no gradient check matches the filter"));
            }
            return Ok(if ok { 0 } else { 2 });
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsers() {
        assert_eq!(parse_kinds("unseen").unwrap().len(), 4);
        assert_eq!(
            parse_kinds("fog,jpeg").unwrap(),
            [CorruptionKind::Fog, CorruptionKind::JpegLike]
        );
        assert!(parse_kinds("fog,smoke").is_err());
        assert_eq!(parse_severities("1-5").unwrap(), [1, 2, 3, 4, 5]);
        assert_eq!(parse_severities("2,5").unwrap(), [2, 5]);
        assert!(parse_severities("0-5").is_err());
        assert!(parse_severities("6").is_err());
        assert_eq!(parse_seeds("0, 1,2").unwrap(), [0, 1, 2]);
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn augmentation_names() {
        assert_eq!(parse_augmentation("none").unwrap(), Augmentation::None);
        assert_eq!(
            parse_augmentation("all").unwrap(),
            Augmentation::MixPlus(op_set("all").unwrap())
        );
        let Augmentation::MixPlus(ops) = parse_augmentation("highpass,saturation:down").unwrap() else {
            panic!()
        };
        assert_eq!(ops.len(), 11);
        assert!(parse_augmentation("warp").is_err());
    }
}
