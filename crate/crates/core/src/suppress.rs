//! Background suppression at inference.
//!
//! The raw cube goes through the denoiser; its output is taken as the
//! background "noise" and removed with the inverse diffusion step. Repeating
//! this `K` times suppresses the background further. Cubes whose band count
//! differs from the trained width are band-aligned first.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bands::align_bands;
use crate::cube::{check_finite, HsiCube};
use crate::denoiser::DenoiserParams;
use crate::diffusion::{remove_background, DiffusionSchedule};
use crate::train::Checkpoint;
use crate::{Error, Result};

/// Parameters of one suppression run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuppressOptions {
    /// Number of repeated passes `K`.
    pub repeats: usize,
    /// Diffusion step used both for the time embedding and for the removal.
    pub t: usize,
    /// Seed for random band removal when the cube has more bands than the model.
    pub align_seed: u64,
}

impl SuppressOptions {
    pub fn new(repeats: usize, t: usize) -> Self {
        Self { repeats, t, align_seed: 0 }
    }
}

/// One pass: `H <- (H - gamma_t f(H)) / sqrt(alpha_bar_t)`.
pub fn suppress_once(
    cube: &HsiCube,
    params: &DenoiserParams<f32>,
    schedule: &DiffusionSchedule,
    t: usize,
) -> Result<HsiCube> {
    let estimate = params.forward(&cube.to_f32(), t)?;
    let estimate: Vec<f64> = estimate.into_iter().map(f64::from).collect();
    remove_background(cube, &estimate, schedule, t)
}

pub fn suppress(cube: &HsiCube, ckpt: &Checkpoint, options: SuppressOptions) -> Result<HsiCube> {
    let mut trace = suppress_trace(cube, ckpt, options)?;
    Ok(trace.pop().expect("at least one pass"))
}

/// Every intermediate cube, `trace[k]` being the result after `k + 1` passes.
pub fn suppress_trace(cube: &HsiCube, ckpt: &Checkpoint, options: SuppressOptions) -> Result<Vec<HsiCube>> {
    if options.repeats == 0 {
        return Err(Error::InvalidArgument(format!("repeat count K must be at least 1")));
    }
    let schedule = ckpt.schedule()?;
    schedule.check_step(options.t)?;
    let mut trace: Vec<HsiCube> = Vec::with_capacity(options.repeats);
    for _ in 0..options.repeats {
        // Each pass re-aligns the reassembled cube, so K passes equal any split of K.
        let current = trace.last().unwrap_or(cube);
        let aligned = align_bands(current, ckpt.bands(), options.align_seed)?;
        let outputs = aligned
            .batches
            .iter()
            .map(|batch| suppress_once(batch, &ckpt.params, &schedule, options.t))
            .collect::<Result<Vec<_>>>()?;
        let restored = aligned.plan.reassemble(&outputs)?;
        check_finite(restored.values())?;
        trace.push(restored);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_params;
    use crate::diffusion::cube_stats;
    use crate::train::TrainConfig;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(bands: usize, seed: u64) -> HsiCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::new(4, 5, bands, (0..20 * bands).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn checkpoint(bands: usize) -> Checkpoint {
        let c = cube(bands, 99);
        Checkpoint {
            params: init_params(bands, 1),
            config: TrainConfig::default(),
            stats: cube_stats(&c),
            loss_history: vec![],
        }
    }

    #[test]
    fn single_pass_is_forward_then_removal() {
        let ckpt = checkpoint(6);
        let c = cube(6, 3);
        let out = suppress(&c, &ckpt, SuppressOptions::new(1, 30)).unwrap();
        let schedule = ckpt.schedule().unwrap();
        let est: Vec<f64> = ckpt.params.forward(&c.to_f32(), 30).unwrap().into_iter().map(f64::from).collect();
        assert_eq!(out, remove_background(&c, &est, &schedule, 30).unwrap());
    }

    #[test]
    fn zero_head_scales_by_inverse_signal() {
        let mut ckpt = checkpoint(5);
        ckpt.params.head.weight.iter_mut().for_each(|w| *w = 0.0);
        let c = cube(5, 4);
        let k = 3;
        let out = suppress(&c, &ckpt, SuppressOptions::new(k, 40)).unwrap();
        let scale = 1.0 / ckpt.schedule().unwrap().alpha_bar(40).sqrt();
        for (o, h) in out.values().iter().zip(c.values()) {
            let mut expected = *h;
            for _ in 0..k {
                expected *= scale;
            }
            assert_eq!(*o, expected);
        }
    }

    #[test]
    fn trace_ends_with_result() {
        let ckpt = checkpoint(4);
        let c = cube(4, 5);
        let options = SuppressOptions::new(4, 30);
        let trace = suppress_trace(&c, &ckpt, options).unwrap();
        assert_eq!(trace.len(), 4);
        assert_eq!(trace[3], suppress(&c, &ckpt, options).unwrap());
        assert_eq!(suppress(&c, &ckpt, options).unwrap(), trace[3]);
    }

    #[test]
    fn composition_of_repeat_counts() {
        let ckpt = checkpoint(4);
        let c = cube(4, 6);
        let all = suppress(&c, &ckpt, SuppressOptions::new(5, 30)).unwrap();
        let first = suppress(&c, &ckpt, SuppressOptions::new(2, 30)).unwrap();
        let rest = suppress(&first, &ckpt, SuppressOptions::new(3, 30)).unwrap();
        assert_eq!(all, rest);
    }

    #[test]
    fn foreign_band_counts_are_aligned() {
        let ckpt = checkpoint(6);
        for bands in [4, 6, 9, 13] {
            let out = suppress(&cube(bands, 7), &ckpt, SuppressOptions::new(2, 30)).unwrap();
            assert_eq!(out.bands(), bands);
        }
        assert!(matches!(
            suppress(&cube(3, 7), &ckpt, SuppressOptions::new(1, 30)),
            Err(Error::BandAlignment(_))
        ));
    }

    #[test]
    fn rejects_bad_options() {
        let ckpt = checkpoint(4);
        let c = cube(4, 8);
        assert!(suppress(&c, &ckpt, SuppressOptions::new(0, 30)).is_err());
        assert!(suppress(&c, &ckpt, SuppressOptions::new(1, 0)).is_err());
        assert!(suppress(&c, &ckpt, SuppressOptions::new(1, 1001)).is_err());
    }
}
