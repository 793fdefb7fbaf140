//! Fixed-noise, full-batch training of the denoiser.
//!
//! One pseudo-noise field and one diffused cube are built before the first
//! epoch and reused by every epoch.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::diffusion::{cube_stats, diffuse, sample_pseudo_noise, CubeStats, DiffusionSchedule, NoiseField};
use crate::nn::Parameters;
use crate::optim::{adam_step, cosine_lr, AdamConfig, AdamState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub adam: AdamConfig,
    /// Diffusion length `T`.
    pub steps: usize,
    pub lambda: f64,
    /// Diffusion step used for every epoch.
    pub t_train: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr_init: 1e-4,
            lr_final: 1e-5,
            adam: AdamConfig::default(),
            steps: crate::diffusion::DEFAULT_STEPS,
            lambda: crate::diffusion::DEFAULT_LAMBDA,
            t_train: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad(format!("epochs must be at least 1"));
        }
        if self.t_train == 0 || self.t_train > self.steps {
            return bad(format!("t_train {} outside [1, {}]", self.t_train, self.steps));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_init && self.lr_init.is_finite()) {
            return bad(format!(
                "learning rates need 0 < lr_final <= lr_init, got {} and {}",
                self.lr_final, self.lr_init
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.steps, self.lambda)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.epochs, self.lr_init, self.lr_final)
    }

    /// Seed of the pseudo-noise field; weight initialization uses `seed` itself.
    pub fn noise_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

/// A trained denoiser and everything needed to use and audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams<f32>,
    pub config: TrainConfig,
    /// Statistics of the training cube.
    pub stats: CubeStats,
    /// Training loss evaluated at the start of each epoch.
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn bands(&self) -> usize {
        self.params.bands()
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        self.config.schedule()
    }
}

/// The fixed training pair: the diffused cube fed to the network and its noise target.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub noise: NoiseField,
    pub diffused: HsiCube,
}

pub fn training_pair(cube: &HsiCube, config: &TrainConfig) -> Result<TrainingPair> {
    let schedule = config.schedule()?;
    let noise = sample_pseudo_noise(cube_stats(cube), cube.pixels(), cube.bands(), config.noise_seed());
    let diffused = diffuse(cube, &noise, &schedule, config.t_train)?;
    Ok(TrainingPair { noise, diffused })
}

pub fn train(cube: &HsiCube, config: &TrainConfig) -> Result<Checkpoint> {
    train_with(cube, config, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, loss)` after each epoch.
pub fn train_with(
    cube: &HsiCube,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    config.validate()?;
    let pair = training_pair(cube, config)?;
    let input: Vec<f32> = pair.diffused.to_f32();
    let target: Vec<f32> = pair.noise.values().iter().map(|&v| v as f32).collect();

    let mut params = DenoiserParams::<f32>::init(DenoiserConfig::new(cube.bands()), config.seed)?;
    let mut state = AdamState::new(&params);
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = params.backward(&input, &target, config.t_train)?;
        let loss = f64::from(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        loss_history.push(loss);
        adam_step(&mut params, &grads, &mut state, config.lr_at(epoch), &config.adam);
        on_epoch(epoch, loss);
    }
    if !params.all_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
            loss: f64::NAN,
        });
    }
    Ok(Checkpoint {
        params,
        config: config.clone(),
        stats: cube_stats(cube),
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_scene, SceneConfig};

    fn small_scene() -> HsiCube {
        let config = SceneConfig {
            height: 12,
            width: 12,
            bands: 8,
            anomaly_count: 1,
            anomaly_size: 2,
            ..Default::default()
        };
        synth_scene(&config).unwrap().0
    }

    #[test]
    fn history_has_one_entry_per_epoch_and_is_reproducible() {
        let cube = small_scene();
        let config = TrainConfig { epochs: 12, ..Default::default() };
        let a = train(&cube, &config).unwrap();
        assert_eq!(a.loss_history.len(), 12);
        assert!(a.loss_history.iter().all(|l| l.is_finite()));
        let b = train(&cube, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stats, cube_stats(&cube));
    }

    #[test]
    fn pair_is_built_once_from_seeded_noise() {
        let cube = small_scene();
        let config = TrainConfig::default();
        let a = training_pair(&cube, &config).unwrap();
        let b = training_pair(&cube, &config).unwrap();
        assert_eq!(a.noise, b.noise);
        assert_eq!(a.diffused, b.diffused);
    }

    #[test]
    fn rejects_invalid_configs() {
        let cube = small_scene();
        for config in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { t_train: 0, ..Default::default() },
            TrainConfig { t_train: 1001, ..Default::default() },
            TrainConfig { lambda: 1.5, ..Default::default() },
            TrainConfig { lr_final: 1e-3, ..Default::default() },
        ] {
            assert!(train(&cube, &config).is_err(), "{config:?}");
        }
    }

    #[test]
    fn callback_sees_every_epoch() {
        let cube = small_scene();
        let config = TrainConfig { epochs: 3, ..Default::default() };
        let mut seen = Vec::new();
        let ckpt = train_with(&cube, &config, |e, l| seen.push((e, l))).unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen.iter().map(|s| s.1).collect::<Vec<_>>(), ckpt.loss_history);
    }
}
