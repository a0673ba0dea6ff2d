//! Paired ablation runs: leave-one-out, modes and magnitude ranges.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalOptions, EvalReport};
use super::{train_dyntta, TrainConfig};
use crate::augment::{AugFamily, MagnitudeScale};
use crate::classifier::ClassifierParams;
use crate::corrupt::{CorruptionKind, Dataset};
use crate::error::{Error, Result};
use crate::head::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationSuite {
    LeaveOneOut,
    Modes,
    RangeScale,
}

impl AblationSuite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "leave-one-out" => Ok(AblationSuite::LeaveOneOut),
            "modes" => Ok(AblationSuite::Modes),
            "range-scale" => Ok(AblationSuite::RangeScale),
            _ => Err(Error::invalid(format!("unknown ablation suite `{s}`"))),
        }
    }

    /// `(label, config)` per variant. Leave-one-out also carries the full
    /// catalog as its reference row.
    fn variants(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationSuite::LeaveOneOut => std::iter::once(("none".to_string(), with(&|c| c.leave_out = None)))
                .chain(
                    AugFamily::ALL
                        .iter()
                        .map(|f| (f.name().to_string(), with(&|c| c.leave_out = Some(*f)))),
                )
                .collect(),
            AblationSuite::Modes => [Mode::BlendOnly, Mode::Full]
                .iter()
                .map(|m| (m.name().to_string(), with(&|c| c.mode = *m)))
                .collect(),
            AblationSuite::RangeScale => MagnitudeScale::ALL
                .iter()
                .map(|s| (s.name().to_string(), with(&|c| c.scale = *s)))
                .collect(),
        }
    }

    /// The config with the ablated factor reset, so paired runs hash equal.
    fn normalized(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            AblationSuite::LeaveOneOut => c.leave_out = None,
            AblationSuite::Modes => c.mode = Mode::Full,
            AblationSuite::RangeScale => c.scale = MagnitudeScale::Standard,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    /// Hash with the ablated factor reset; equal across a paired group.
    pub paired_hash: String,
    pub final_loss: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: AblationSuite,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Mean corruption accuracy of row `label` at `seed`.
    pub fn metric(&self, label: &str, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.label == label && r.seed == seed)
            .and_then(|r| r.report.all_mean)
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,seed,clean,corruption_mean,unseen_mean,final_loss,config_hash\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{},{:.6},{}",
                r.label,
                r.seed,
                r.report.clean,
                opt(r.report.all_mean),
                opt(r.report.unseen_mean),
                r.final_loss,
                &r.config_hash[..16]
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Trains and evaluates every variant of `suite` for every seed. Runs are
/// independent and execute in parallel; rows keep (seed, variant) order.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    suite: AblationSuite,
    base: &TrainConfig,
    classifier: &ClassifierParams,
    train: &Dataset,
    test: &Dataset,
    grid: &[(CorruptionKind, u8)],
    seeds: &[u64],
    opts: &EvalOptions,
) -> Result<AblationReport> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let runs: Vec<(String, TrainConfig)> = seeds
        .iter()
        .flat_map(|&seed| {
            let seeded = TrainConfig { seed, ..base.clone() };
            suite.variants(&seeded)
        })
        .collect();
    let rows = runs
        .par_iter()
        .map(|(label, cfg)| {
            let out = train_dyntta(classifier, train, cfg)?;
            let report = evaluate(label, classifier, Some(&out.params), test, grid, opts)?;
            Ok(AblationRow {
                label: label.clone(),
                seed: cfg.seed,
                config_hash: cfg.hash(),
                paired_hash: suite.normalized(cfg).hash(),
                final_loss: out.epoch_loss.last().copied().unwrap_or(f64::NAN),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { suite, rows })
}
