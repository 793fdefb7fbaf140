//! Matching a cube's band count to the width a denoiser was trained on.
//!
//! - fewer bands: mirror about the last band (`b0 .. b_{B-1}, b_{B-2}, b_{B-3}, ..`);
//! - up to twice as many: drop randomly chosen bands, refilled from the nearest kept band;
//! - more than twice as many: contiguous batches, the last one mirror-padded.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cube::HsiCube;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignKind {
    Identity,
    Mirror,
    Remove,
    Split,
}

/// How aligned batches map back onto the original bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandPlan {
    kind: AlignKind,
    original_bands: usize,
    train_bands: usize,
    /// Source band of every column of every batch.
    batch_sources: Vec<Vec<usize>>,
    /// For each original band, the (batch, column) its output is read from.
    restore_from: Vec<(usize, usize)>,
    /// Bands dropped by [`AlignKind::Remove`], ascending.
    removed: Vec<usize>,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct AlignedBands {
    pub batches: Vec<HsiCube>,
    pub plan: BandPlan,
}

/// Sequence `start..len` followed by its reflection about `len - 1`, cut to `target` entries.
fn mirrored(start: usize, len: usize, target: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (start..len).collect();
    let mut next = len.checked_sub(2);
    while out.len() < target {
        match next {
            Some(b) => {
                out.push(b);
                next = b.checked_sub(1);
            }
            None => break,
        }
    }
    out
}

pub fn align_bands(cube: &HsiCube, train_bands: usize, seed: u64) -> Result<AlignedBands> {
    let plan = BandPlan::new(cube.bands(), train_bands, seed)?;
    let batches = plan
        .batch_sources
        .iter()
        .map(|sources| cube.select_bands(sources))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignedBands { batches, plan })
}

impl BandPlan {
    pub fn new(bands: usize, train_bands: usize, seed: u64) -> Result<Self> {
        if train_bands == 0 || bands == 0 {
            return Err(Error::BandAlignment(format!(
                "band counts must be positive (cube {bands}, trained {train_bands})"
            )));
        }
        let mut plan = BandPlan {
            kind: AlignKind::Identity,
            original_bands: bands,
            train_bands,
            batch_sources: Vec::new(),
            restore_from: Vec::new(),
            removed: Vec::new(),
            seed,
        };
        if bands == train_bands {
            plan.batch_sources.push((0..bands).collect());
            plan.restore_from = (0..bands).map(|b| (0, b)).collect();
        } else if bands < train_bands {
            if train_bands > 2 * bands - 1 {
                return Err(Error::BandAlignment(format!(
                    "cannot mirror {bands} bands up to {train_bands} (at most {})",
                    2 * bands - 1
                )));
            }
            plan.kind = AlignKind::Mirror;
            plan.batch_sources.push(mirrored(0, bands, train_bands));
            plan.restore_from = (0..bands).map(|b| (0, b)).collect();
        } else if bands <= 2 * train_bands {
            plan.kind = AlignKind::Remove;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut removed =
                rand::seq::index::sample(&mut rng, bands, bands - train_bands).into_vec();
            removed.sort_unstable();
            let kept: Vec<usize> = (0..bands).filter(|b| removed.binary_search(b).is_err()).collect();
            plan.restore_from = (0..bands)
                .map(|b| {
                    // Nearest kept band; ties go to the lower index.
                    let pos = kept.partition_point(|&k| k < b);
                    let column = match (pos.checked_sub(1), kept.get(pos)) {
                        (_, Some(&k)) if k == b => pos,
                        (Some(lo), Some(&hi)) if hi - b < b - kept[lo] => pos,
                        (Some(lo), _) => lo,
                        (None, _) => pos,
                    };
                    (0, column)
                })
                .collect();
            plan.batch_sources.push(kept);
            plan.removed = removed;
        } else {
            plan.kind = AlignKind::Split;
            let count = bands.div_ceil(train_bands);
            for j in 0..count {
                let start = j * train_bands;
                let end = (start + train_bands).min(bands);
                let sources = if end - start == train_bands {
                    (start..end).collect()
                } else {
                    // More than 2*train_bands bands exist, so the reflection never runs out.
                    mirrored(start, bands, train_bands)
                };
                plan.batch_sources.push(sources);
            }
            plan.restore_from = (0..bands)
                .map(|b| (b / train_bands, b % train_bands))
                .collect();
        }
        Ok(plan)
    }

    pub fn kind(&self) -> AlignKind {
        self.kind
    }

    pub fn original_bands(&self) -> usize {
        self.original_bands
    }

    pub fn train_bands(&self) -> usize {
        self.train_bands
    }

    pub fn batch_sources(&self) -> &[Vec<usize>] {
        &self.batch_sources
    }

    pub fn removed(&self) -> &[usize] {
        &self.removed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rebuilds a cube with the original band count from per-batch outputs.
    pub fn reassemble(&self, outputs: &[HsiCube]) -> Result<HsiCube> {
        if outputs.len() != self.batch_sources.len() {
            return Err(Error::BandAlignment(format!(
                "expected {} batch outputs, got {}",
                self.batch_sources.len(),
                outputs.len()
            )));
        }
        let first = &outputs[0];
        for out in outputs {
            if out.bands() != self.train_bands
                || out.height() != first.height()
                || out.width() != first.width()
            {
                return Err(Error::BandAlignment(format!(
                    "batch output shape {}x{}x{} does not match plan",
                    out.height(),
                    out.width(),
                    out.bands()
                )));
            }
        }
        let mut values = Vec::with_capacity(first.pixels() * self.original_bands);
        for p in 0..first.pixels() {
            values.extend(
                self.restore_from
                    .iter()
                    .map(|&(batch, column)| outputs[batch].pixel(p)[column]),
            );
        }
        first.with_values(self.original_bands, values)
    }
}
