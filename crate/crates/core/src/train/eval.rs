//! Accuracy over clean data and a grid of corruption cells.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{predict, ClassifierParams};
use crate::corrupt::{corrupt_dataset, CorruptionKind, Dataset};
use crate::error::{Error, Result};
use crate::head::{enhance_batch, DynttaParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Images sharing one pruning plan.
    pub batch_size: usize,
    /// Seed of the corruption noise; equal seeds give equal test images.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.0,
            batch_size: 32,
            seed: 12345,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub accuracy: f64,
    /// Mean executed augmentations per image (enhanced runs only).
    pub executed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub baseline: String,
    pub clean: f64,
    pub cells: Vec<f64>,
    pub unseen_mean: Option<f64>,
    pub all_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub clean: f64,
    pub clean_executed: Option<f64>,
    pub cells: Vec<CellResult>,
    /// Mean over Unseen cells (absent when the grid has none).
    pub unseen_mean: Option<f64>,
    /// Mean over all cells (absent for an empty grid).
    pub all_mean: Option<f64>,
    /// Mean executed augmentations over clean and every cell.
    pub executed_mean: Option<f64>,
    pub threshold: f64,
    pub deltas: Option<Deltas>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Accuracy and mean executed count of one split.
fn score(
    classifier: &ClassifierParams,
    dyntta: Option<&DynttaParams>,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<(f64, Option<f64>)> {
    let Some(d) = dyntta else {
        let pred = predict(&data.images, classifier)?;
        let ok = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        return Ok((ok as f64 / data.len() as f64, None));
    };
    let mut ok = 0usize;
    let mut executed = 0usize;
    for (imgs, labels) in data
        .images
        .chunks(opts.batch_size)
        .zip(data.labels.chunks(opts.batch_size))
    {
        let out = enhance_batch(imgs, d, opts.threshold)?;
        executed += out.executed * imgs.len();
        let pred = predict(&out.images, classifier)?;
        ok += pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    }
    let n = data.len() as f64;
    Ok((ok as f64 / n, Some(executed as f64 / n)))
}

/// Evaluates clean accuracy plus every `(kind, severity)` cell of `grid`.
/// Without `dyntta` this is the no-enhancement baseline.
pub fn evaluate(
    name: &str,
    classifier: &ClassifierParams,
    dyntta: Option<&DynttaParams>,
    test: &Dataset,
    grid: &[(CorruptionKind, u8)],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let (clean, clean_executed) = score(classifier, dyntta, test, opts)?;
    let mut cells = Vec::with_capacity(grid.len());
    for &(kind, severity) in grid {
        let data = corrupt_dataset(test, kind, severity, opts.seed)?;
        let (accuracy, executed) = score(classifier, dyntta, &data, opts)?;
        cells.push(CellResult {
            kind,
            severity,
            accuracy,
            executed,
        });
    }
    let executed_mean = clean_executed.map(|c| {
        let s: f64 = cells.iter().filter_map(|c| c.executed).sum();
        (c + s) / (cells.len() + 1) as f64
    });
    Ok(EvalReport {
        name: name.to_string(),
        clean,
        clean_executed,
        unseen_mean: mean(cells.iter().filter(|c| !c.kind.is_seen()).map(|c| c.accuracy)),
        all_mean: mean(cells.iter().map(|c| c.accuracy)),
        cells,
        executed_mean,
        threshold: opts.threshold,
        deltas: None,
    })
}

impl EvalReport {
    /// Fills `deltas` with `self − baseline`, cell by cell.
    pub fn compare_to(&mut self, baseline: &EvalReport) -> Result<()> {
        let same_grid = self.cells.len() == baseline.cells.len()
            && self
                .cells
                .iter()
                .zip(&baseline.cells)
                .all(|(a, b)| a.kind == b.kind && a.severity == b.severity);
        if !same_grid {
            return Err(Error::contract("reports cover different grids"));
        }
        let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
        self.deltas = Some(Deltas {
            baseline: baseline.name.clone(),
            clean: self.clean - baseline.clean,
            cells: self
                .cells
                .iter()
                .zip(&baseline.cells)
                .map(|(a, b)| a.accuracy - b.accuracy)
                .collect(),
            unseen_mean: diff(self.unseen_mean, baseline.unseen_mean),
            all_mean: diff(self.all_mean, baseline.all_mean),
        });
        Ok(())
    }

    /// One row per cell, plus a `clean` row first.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,severity,accuracy,delta,executed\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let d = self.deltas.as_ref();
        let _ = writeln!(
            s,
            "clean,0,{:.6},{},{}",
            self.clean,
            opt(d.map(|d| d.clean)),
            opt(self.clean_executed)
        );
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{}",
                c.kind,
                c.severity,
                c.accuracy,
                opt(d.map(|d| d.cells[i])),
                opt(c.executed)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
