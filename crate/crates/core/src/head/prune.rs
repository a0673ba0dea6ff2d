//! Convex blending and inference-time pruning of low-weight entries.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub(crate) const SUM_TOL: f64 = 1e-6;

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::contract(format!(
            "{what}: weights must be finite and nonnegative"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::contract(format!("{what}: weights sum to {s}, not 1")));
    }
    Ok(())
}

/// `Σ w_k·x_k` clamped to `[0, 1]`. Entries with zero weight are skipped.
pub fn blend(images: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if images.is_empty() || images.len() != weights.len() {
        return Err(Error::contract(format!(
            "blend: {} images for {} weights",
            images.len(),
            weights.len()
        )));
    }
    check_row(weights, "blend")?;
    let shape = images[0].shape();
    if images.iter().any(|t| t.shape() != shape) {
        return Err(Error::contract("blend: images differ in shape"));
    }
    let mut acc = vec![0.0f64; images[0].len()];
    for (img, w) in images.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += w * *v as f64;
        }
    }
    Tensor::new(
        shape.to_vec(),
        acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    )
}

/// For each entry, the executed index that receives its weight: itself when
/// executed, else the next executed entry (wrapping to the first).
pub fn redistribution_targets(mask: &[bool]) -> Result<Vec<usize>> {
    let first = mask
        .iter()
        .position(|&m| m)
        .ok_or_else(|| Error::contract("no executed entry to receive weight"))?;
    // Scanning backwards, entries past the last executed one see `first`.
    let mut out = vec![first; mask.len()];
    let mut next = first;
    for k in (0..mask.len()).rev() {
        if mask[k] {
            next = k;
        }
        out[k] = next;
    }
    Ok(out)
}

/// Moves each row's skipped weight onto its redistribution target.
pub fn redistribute(row: &[f64], targets: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    for (k, w) in row.iter().enumerate() {
        out[targets[k]] += w;
    }
    out
}

/// Batch-level execution mask and redistributed weights.
///
/// Entry `k` runs iff some row gives it weight `≥ threshold`.
pub fn prune_plan(batch: &[Vec<f64>], threshold: f64) -> Result<(Vec<bool>, Vec<Vec<f64>>)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::invalid(format!("threshold {threshold} must be ≥ 0")));
    }
    let k = batch.first().map_or(0, Vec::len);
    if k == 0 || batch.iter().any(|r| r.len() != k) {
        return Err(Error::contract("prune_plan needs a non-empty rectangular batch"));
    }
    for row in batch {
        check_row(row, "prune_plan")?;
    }
    let mask: Vec<bool> = (0..k)
        .map(|j| batch.iter().map(|r| r[j]).fold(f64::MIN, f64::max) >= threshold)
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegeneratePlan {
            threshold: threshold as f32,
        });
    }
    if mask.iter().all(|&m| m) {
        return Ok((mask, batch.to_vec()));
    }
    let targets = redistribution_targets(&mask)?;
    let rows = batch.iter().map(|r| redistribute(r, &targets)).collect();
    Ok((mask, rows))
}

/// [`prune_plan`], falling back to executing only the entry with the
/// largest batch-max weight (first on ties) when everything is pruned.
pub fn prune_plan_or_argmax(batch: &[Vec<f64>], threshold: f64) -> Result<(Vec<bool>, Vec<Vec<f64>>)> {
    match prune_plan(batch, threshold) {
        Err(Error::DegeneratePlan { .. }) => {
            let k = batch[0].len();
            let col_max = |j: usize| batch.iter().map(|r| r[j]).fold(f64::MIN, f64::max);
            let best = (1..k).fold(0, |b, j| if col_max(j) > col_max(b) { j } else { b });
            let mut mask = vec![false; k];
            mask[best] = true;
            let rows = batch
                .iter()
                .map(|_| {
                    let mut r = vec![0.0; k];
                    r[best] = 1.0;
                    r
                })
                .collect();
            Ok((mask, rows))
        }
        other => other,
    }
}
