//! Toy dataset, corruptions, scenario streams and mix augmentation.

mod dataset;
mod imgops;
mod kinds;
mod mix;
mod scenario;

pub use dataset::{export_png, import_png, make_dataset, render, Dataset, CLASSES, SIZE};
pub use imgops::mean_abs_diff;
pub use kinds::{corrupt, CorruptionKind, GAUSSIAN_SIGMA, SEEN, SEVERITIES, UNSEEN};
pub use mix::{all_ops, mix_augment, mix_augment_with, op_set, with_normal, Direction, MixOp, NORMAL};
pub use scenario::{
    non_blind_choice, scenario_batches, scenario_batches_with, Batch, BatchSource, Scenario, ScenarioStream,
    NON_BLIND_CHOICES,
};

const _: () = {
    // Seen and unseen never overlap.
    let mut i = 0;
    while i < SEEN.len() {
        let mut j = 0;
        while j < UNSEEN.len() {
            assert!(SEEN[i] as u8 != UNSEEN[j] as u8);
            j += 1;
        }
        i += 1;
    }
};

/// Corrupts every image of `data` with per-image seeds `seed + i`.
pub fn corrupt_dataset(data: &Dataset, kind: CorruptionKind, severity: u8, seed: u64) -> crate::Result<Dataset> {
    use rayon::prelude::*;
    let images = data
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| corrupt(img, kind, severity, seed.wrapping_add(i as u64)))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(Dataset {
        images,
        labels: data.labels.clone(),
        classes: data.classes,
    })
}

#[cfg(test)]
mod tests;
