//! Training-time augmentation estimation.
//!
//! A trained enhancement model is run over a corrupted validation split; the
//! augmentations it leans on most are mapped to the operations that would
//! have produced such images, and those ops drive classifier retraining.

mod svg;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use svg::boxplot_svg;

use crate::augment::AugFamily;
use crate::classifier::{accuracy, train_classifier, Augmentation, ClassifierConfig};
use crate::corrupt::{corrupt_dataset, op_set, with_normal, CorruptionKind, Dataset, Direction, MixOp, UNSEEN};
use crate::error::{Error, Result};
use crate::head::{raw_plan, DynttaParams};

/// Fraction of each corrupted split used for validation; the rest is held out.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Five-number summary plus mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    /// Quartiles interpolate linearly between order statistics.
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() {
            return Err(Error::invalid("summary of an empty sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("summary", "non-finite sample"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Summary {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    /// Catalog label, e.g. `low-pass@0.35`.
    pub label: String,
    pub family: AugFamily,
    pub weight: Summary,
    /// Present for parameterized kinds.
    pub magnitude: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub family: AugFamily,
    /// Summary of the per-image sum of member weights.
    pub weight: Summary,
}

/// Blend-weight and magnitude statistics over a validation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub images: usize,
    /// One per catalog entry, in catalog order.
    pub entries: Vec<EntryStats>,
    /// The low-pass and high-pass groups, when present.
    pub groups: Vec<GroupStats>,
}

impl WeightStats {
    /// One `(family, weight summary)` per family in catalog order; filter
    /// groups are represented by their group sums.
    pub fn families(&self) -> Vec<(AugFamily, Summary)> {
        let mut out: Vec<(AugFamily, Summary)> = Vec::new();
        for e in &self.entries {
            if out.iter().any(|(f, _)| *f == e.family) {
                continue;
            }
            let s = if e.family.is_group() {
                match self.groups.iter().find(|g| g.family == e.family) {
                    Some(g) => g.weight,
                    None => continue,
                }
            } else {
                e.weight
            };
            out.push((e.family, s));
        }
        out
    }

    /// Median magnitude of the first entry of `family`, if parameterized.
    pub fn median_magnitude(&self, family: AugFamily) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.family == family)
            .and_then(|e| e.magnitude.map(|m| m.median))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("weight stats", e.to_string()))
    }
}

/// Runs the model once per image (no pruning) and summarizes weights and
/// magnitudes per entry, plus per-image filter-group sums.
pub fn collect_stats(dyntta: &DynttaParams, validation: &Dataset) -> Result<WeightStats> {
    if validation.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let plans = validation
        .images
        .par_iter()
        .map(|x| raw_plan(x, dyntta))
        .collect::<Result<Vec<_>>>()?;
    let specs = dyntta.specs();
    let column = |k: usize| plans.iter().map(|p| p.weights[k]).collect::<Vec<_>>();
    let entries = specs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mags: Vec<f64> = plans.iter().filter_map(|p| p.magnitudes[k]).collect();
            Ok(EntryStats {
                label: s.kind.to_string(),
                family: s.kind.family(),
                weight: Summary::of(&column(k))?,
                magnitude: if mags.is_empty() {
                    None
                } else {
                    Some(Summary::of(&mags)?)
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut groups = Vec::new();
    for family in [AugFamily::LowPass, AugFamily::HighPass] {
        let members: Vec<usize> = (0..specs.len()).filter(|&k| specs[k].kind.family() == family).collect();
        if members.is_empty() {
            continue;
        }
        let sums: Vec<f64> = plans
            .iter()
            .map(|p| members.iter().map(|&k| p.weights[k]).sum())
            .collect();
        groups.push(GroupStats {
            family,
            weight: Summary::of(&sums)?,
        });
    }
    Ok(WeightStats {
        images: validation.len(),
        entries,
        groups,
    })
}

/// Families by maximum blend weight, descending; ties keep catalog order.
pub fn rank_families(stats: &WeightStats) -> Vec<(AugFamily, f64)> {
    let mut ranked: Vec<(AugFamily, f64)> = stats.families().into_iter().map(|(f, s)| (f, s.max)).collect();
    // Stable sort, so equal maxima stay in catalog order.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

/// Direction of a test-time magnitude relative to the neutral value.
fn test_direction(stats: &WeightStats, family: AugFamily, neutral: f64) -> Direction {
    match stats.median_magnitude(family) {
        Some(m) if m > neutral => Direction::Up,
        Some(m) if m < neutral => Direction::Down,
        _ => Direction::Both,
    }
}

/// The training-time operation that undoes what `family` does at test time.
pub fn inverse_op(stats: &WeightStats, family: AugFamily) -> MixOp {
    let dir = |f: AugFamily, neutral: f64| test_direction(stats, f, neutral);
    match family {
        AugFamily::LowPass => MixOp::HighPass,
        AugFamily::HighPass => MixOp::LowPass,
        AugFamily::Gamma => MixOp::InverseGamma(dir(family, 1.0)),
        AugFamily::Contrast => MixOp::Contrast(dir(family, 1.0).opposite()),
        AugFamily::Saturate => MixOp::Saturation(dir(family, 1.0).opposite()),
        AugFamily::Brightness => MixOp::Brightness(dir(family, 0.0).opposite()),
        AugFamily::Sharpness => MixOp::Blur,
        AugFamily::Rotate => MixOp::Rotate,
        AugFamily::Scale => MixOp::Scale,
        AugFamily::AutoContrast => MixOp::AutoContrast,
        AugFamily::Hue => MixOp::Hue,
        AugFamily::Equalize => MixOp::Equalize,
        AugFamily::Invert => MixOp::Invert,
        // A learned enhancer has no closed-form inverse.
        AugFamily::NeuralEnhance => MixOp::Identity,
    }
}

/// Inverse ops of the `top_n` families with the largest maximum weight,
/// deduplicated in rank order. Asking for more families than exist returns
/// every family, with a warning.
pub fn estimate_augs(stats: &WeightStats, top_n: usize) -> Result<Vec<MixOp>> {
    let ranked = rank_families(stats);
    if ranked.is_empty() {
        return Err(Error::invalid("empty weight statistics"));
    }
    if top_n > ranked.len() {
        log::warn!(
            "top_n {top_n} exceeds the {} ranked augmentations; truncating",
            ranked.len()
        );
    }
    let mut ops: Vec<MixOp> = Vec::new();
    for (family, _) in ranked.into_iter().take(top_n) {
        let op = inverse_op(stats, family);
        if !ops.contains(&op) {
            ops.push(op);
        }
    }
    Ok(ops)
}

/// Corrupts `test` with each kind at `severity` and splits every copy into
/// validation (first fifth) and held-out parts.
pub fn corrupted_splits(
    test: &Dataset,
    kinds: &[CorruptionKind],
    severity: u8,
    seed: u64,
) -> Result<Vec<(CorruptionKind, Dataset, Dataset)>> {
    kinds
        .iter()
        .map(|&k| {
            let c = corrupt_dataset(test, k, severity, seed)?;
            let (val, held) = c.split(VALIDATION_FRACTION);
            Ok((k, val, held))
        })
        .collect()
}

/// Concatenation of datasets sharing a class count.
pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
    let classes = parts
        .first()
        .map(|d| d.classes)
        .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    if parts.iter().any(|d| d.classes != classes) {
        return Err(Error::contract("datasets disagree on the class count"));
    }
    Ok(Dataset {
        images: parts.iter().flat_map(|d| d.images.iter().cloned()).collect(),
        labels: parts.iter().flat_map(|d| d.labels.iter().copied()).collect(),
        classes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainRow {
    /// `normal`, `all` or `estimated`.
    pub set: String,
    pub seed: u64,
    /// Held-out accuracy per Unseen kind, in [`UNSEEN`] order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub kinds: Vec<CorruptionKind>,
    pub estimated: Vec<String>,
    pub rows: Vec<RetrainRow>,
}

impl RetrainReport {
    /// Mean over seeds of the average accuracy of `set`.
    pub fn average(&self, set: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.set == set).map(|r| r.mean).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn row(&self, set: &str, seed: u64) -> Option<&RetrainRow> {
        self.rows.iter().find(|r| r.set == set && r.seed == seed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("set,seed");
        for k in &self.kinds {
            s.push(',');
            s.push_str(k.name());
        }
        s.push_str(",average\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}", r.set, r.seed));
            for a in &r.accuracies {
                s.push_str(&format!(",{a:.6}"));
            }
            s.push_str(&format!(",{:.6}\n", r.mean));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Trains one classifier per op set ("normal", "all", "estimated") and
/// seed, then scores each on the held-out part of every Unseen kind at
/// severity 5. Seeds are shared across op sets.
pub fn retrain_and_compare(
    train: &Dataset,
    test: &Dataset,
    estimated: &[MixOp],
    seeds: &[u64],
    base: &ClassifierConfig,
    corruption_seed: u64,
) -> Result<RetrainReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("retraining needs at least one seed"));
    }
    let held: Vec<Dataset> = corrupted_splits(test, &UNSEEN, 5, corruption_seed)?
        .into_iter()
        .map(|(_, _, h)| h)
        .collect();
    let sets = [
        ("normal", op_set("normal")?),
        ("all", op_set("all")?),
        ("estimated", with_normal(estimated)),
    ];
    let runs: Vec<(&str, &Vec<MixOp>, u64)> = seeds
        .iter()
        .flat_map(|&seed| sets.iter().map(move |(n, ops)| (*n, ops, seed)))
        .collect();
    let rows = runs
        .par_iter()
        .map(|&(name, ops, seed)| {
            let cfg = ClassifierConfig {
                seed,
                augmentation: Augmentation::MixPlus(ops.clone()),
                ..base.clone()
            };
            let clf = train_classifier(train, &cfg)?;
            let accuracies = held
                .iter()
                .map(|d| accuracy(&d.images, &d.labels, &clf))
                .collect::<Result<Vec<_>>>()?;
            let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
            Ok(RetrainRow {
                set: name.to_string(),
                seed,
                accuracies,
                mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrainReport {
        kinds: UNSEEN.to_vec(),
        estimated: estimated.iter().map(|o| o.to_string()).collect(),
        rows,
    })
}
