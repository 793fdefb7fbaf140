//! Downstream anomaly detectors: global RX and an autoencoder reconstruction error.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{check_finite, min_max, HsiCube};
use crate::linalg::Cholesky;
use crate::nn::{matmul_atb, Mlp};
use crate::optim::{adam_step, cosine_lr, AdamConfig, AdamState};
use crate::{Error, Result};

/// Relative ridge added to the RX covariance, scaled by its mean diagonal.
pub const RX_RIDGE: f64 = 1e-6;

/// One anomaly score per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
    pub normalized: bool,
}

impl DetectionMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width || scores.is_empty() {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} scores, got {}",
                height * width,
                scores.len()
            )));
        }
        check_finite(&scores)?;
        Ok(Self {
            height,
            width,
            scores,
            normalized: false,
        })
    }

    /// The map as a single-band cube, the on-disk form.
    pub fn to_cube(&self) -> HsiCube {
        HsiCube::new(self.height, self.width, 1, self.scores.clone()).expect("map is finite and non-empty")
    }

    pub fn from_cube(cube: &HsiCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::Shape(format!(
                "detection maps have one band, got {}",
                cube.bands()
            )));
        }
        Self::new(cube.height(), cube.width(), cube.values().to_vec())
    }
}

/// Min-max scaling onto `[0, 1]`; constant maps become all zeros.
pub fn normalize_map(map: &DetectionMap) -> DetectionMap {
    DetectionMap {
        scores: min_max(&map.scores),
        normalized: true,
        ..map.clone()
    }
}

/// Global RX: Mahalanobis distance of each pixel to the image mean.
///
/// The covariance is the population covariance over all pixels plus a ridge
/// of `RX_RIDGE * trace / bands` on the diagonal.
pub fn rx_detect(cube: &HsiCube) -> Result<DetectionMap> {
    let bands = cube.bands();
    let pixels = cube.pixels();
    let mut mean = vec![0.0; bands];
    for row in cube.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= pixels as f64);

    let centered: Vec<f64> = cube
        .rows()
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();
    let mut cov = vec![0.0; bands * bands];
    matmul_atb(&centered, pixels, bands, &centered, bands, 0.0, &mut cov);
    cov.iter_mut().for_each(|c| *c /= pixels as f64);
    let trace: f64 = (0..bands).map(|i| cov[i * bands + i]).sum();
    let ridge = RX_RIDGE * trace / bands as f64;
    for i in 0..bands {
        cov[i * bands + i] += ridge;
    }

    let chol = Cholesky::factor(&cov, bands)?;
    let mut scratch = Vec::with_capacity(bands);
    let scores = centered
        .chunks_exact(bands)
        .map(|x| chol.inverse_quadratic_form(x, &mut scratch))
        .collect();
    DetectionMap::new(cube.height(), cube.width(), scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 70, 50, 70, 100],
            epochs: 500,
            lr_init: 1e-3,
            lr_final: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Fully connected autoencoder, tanh on hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub mlp: Mlp<f32>,
    pub loss_history: Vec<f64>,
}

impl Autoencoder {
    pub fn init(bands: usize, config: &AeConfig) -> Mlp<f32> {
        let mut widths = vec![bands];
        widths.extend(&config.hidden);
        widths.push(bands);
        Mlp::glorot(&widths, &mut ChaCha8Rng::seed_from_u64(config.seed))
    }

    pub fn reconstruct(&self, cube: &HsiCube) -> Result<HsiCube> {
        if cube.bands() != self.mlp.input_dim() {
            return Err(Error::Shape(format!(
                "autoencoder expects {} bands, cube has {}",
                self.mlp.input_dim(),
                cube.bands()
            )));
        }
        let out = self.mlp.forward(&cube.to_f32(), cube.pixels());
        cube.with_values(cube.bands(), out.into_iter().map(f64::from).collect())
    }
}

/// Mean squared error over all entries and its gradient w.r.t. the reconstruction.
pub fn reconstruction_loss<S: crate::nn::Scalar>(output: &[S], target: &[S]) -> (S, Vec<S>) {
    let n = S::of(output.len() as f64);
    let mut loss = S::zero();
    let grad = output
        .iter()
        .zip(target)
        .map(|(&y, &x)| {
            let r = y - x;
            loss += r * r;
            S::of(2.0) * r / n
        })
        .collect();
    (loss / n, grad)
}

pub fn ae_train(cube: &HsiCube, config: &AeConfig) -> Result<Autoencoder> {
    if config.epochs == 0 {
        return Err(Error::InvalidArgument(format!("epochs must be at least 1")));
    }
    let mut mlp = Autoencoder::init(cube.bands(), config);
    let input = cube.to_f32();
    let rows = cube.pixels();
    let mut state = AdamState::new(&mlp);
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let tape = mlp.forward_tape(&input, rows);
        let (loss, grad) = reconstruction_loss(&tape.outputs[tape.outputs.len() - 1], &input);
        let loss = f64::from(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        loss_history.push(loss);
        let grads = mlp.backward(&tape, grad);
        let lr = cosine_lr(epoch, config.epochs, config.lr_init, config.lr_final);
        adam_step(&mut mlp, &grads, &mut state, lr, &config.adam);
    }
    Ok(Autoencoder { mlp, loss_history })
}

/// Per-pixel mean squared residual between a cube and its reconstruction.
pub fn reconstruction_scores(cube: &HsiCube, reconstruction: &HsiCube) -> Result<DetectionMap> {
    if cube.values().len() != reconstruction.values().len() || cube.bands() != reconstruction.bands() {
        return Err(Error::Shape(format!("reconstruction shape does not match cube")));
    }
    let scores = cube
        .rows()
        .zip(reconstruction.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
        .collect();
    DetectionMap::new(cube.height(), cube.width(), scores)
}

pub fn ae_detect(cube: &HsiCube, model: &Autoencoder) -> Result<DetectionMap> {
    reconstruction_scores(cube, &model.reconstruct(cube)?)
}
