//! Training batch streams for the non-blind and blind settings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::kinds::{corrupt, CorruptionKind, SEEN};
use super::mix::{mix_augment, MixOp, NORMAL};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    NonBlind,
    Blind,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::NonBlind => "non-blind",
            Scenario::Blind => "blind",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "non-blind" => Ok(Scenario::NonBlind),
            "blind" => Ok(Scenario::Blind),
            _ => Err(Error::invalid(format!("unknown scenario `{s}`"))),
        }
    }
}

/// What was applied to a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSource {
    Clean,
    Corrupted(CorruptionKind, u8),
    Mixed,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub source: BatchSource,
}

/// Number of non-blind choices: every seen kind at every severity, plus clean.
pub const NON_BLIND_CHOICES: usize = SEEN.len() * 5 + 1;

/// Maps a choice index in `0..NON_BLIND_CHOICES` to its source; the last is clean.
pub fn non_blind_choice(i: usize) -> BatchSource {
    if i >= SEEN.len() * 5 {
        BatchSource::Clean
    } else {
        BatchSource::Corrupted(SEEN[i / 5], (i % 5) as u8 + 1)
    }
}

fn mix_seed(seed: u64, batch: usize, pos: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((batch as u64) << 20 | pos as u64)
}

/// Lazily produced batches over one shuffled pass of a dataset.
pub struct ScenarioStream<'a> {
    scenario: Scenario,
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
    rng: ChaCha8Rng,
    seed: u64,
    ops: Vec<MixOp>,
}

impl Iterator for ScenarioStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.next * self.batch_size;
        if start >= self.order.len() {
            return None;
        }
        let idx = &self.order[start..(start + self.batch_size).min(self.order.len())];
        let b = self.next;
        self.next += 1;
        let labels = idx.iter().map(|&i| self.data.labels[i]).collect();
        let source = match self.scenario {
            Scenario::NonBlind => non_blind_choice(self.rng.random_range(0..NON_BLIND_CHOICES)),
            Scenario::Blind => BatchSource::Mixed,
        };
        let noise_seed: u64 = self.rng.random();
        let images: Result<Vec<Tensor>> = idx
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let img = &self.data.images[i];
                match source {
                    BatchSource::Clean => Ok(img.clone()),
                    BatchSource::Corrupted(kind, s) => corrupt(img, kind, s, noise_seed.wrapping_add(pos as u64)),
                    BatchSource::Mixed => mix_augment(img, mix_seed(self.seed, b, pos), &self.ops),
                }
            })
            .collect();
        Some(images.map(|images| Batch { images, labels, source }))
    }
}

/// One epoch of batches. Non-blind applies one uniformly chosen seen
/// corruption (or none) per batch; blind mix-augments every image with the
/// base op set.
pub fn scenario_batches(
    scenario: Scenario,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<ScenarioStream<'_>> {
    scenario_batches_with(scenario, data, batch_size, seed, &NORMAL)
}

/// [`scenario_batches`] with an explicit blind op set.
pub fn scenario_batches_with<'a>(
    scenario: Scenario,
    data: &'a Dataset,
    batch_size: usize,
    seed: u64,
    ops: &[MixOp],
) -> Result<ScenarioStream<'a>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    Ok(ScenarioStream {
        scenario,
        data,
        order,
        batch_size,
        next: 0,
        rng,
        seed,
        ops: ops.to_vec(),
    })
}
