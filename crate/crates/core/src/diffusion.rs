//! Forward diffusion with pseudo background noise.
//!
//! The noise is Gaussian with the cube's own mean and standard deviation and
//! is shared by every step, so `t` steps of
//! `x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) n` collapse to
//! `x_t = sqrt(alpha_bar_t) x_0 + gamma_t n`.

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::nn::Scalar;
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_LAMBDA: f64 = 0.02;
/// Lower bound applied to the noise standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Linear schedule `beta_t = lambda * t / T` and the tables derived from it.
///
/// All tables are indexed by the 1-based step through the accessor methods.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    lambda: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    gamma: Vec<f64>,
}

pub fn make_schedule(steps: usize, lambda: f64) -> Result<DiffusionSchedule> {
    DiffusionSchedule::new(steps, lambda)
}

impl DiffusionSchedule {
    pub fn new(steps: usize, lambda: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument(format!("schedule needs at least one step")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in (0, 1), got {lambda}"
            )));
        }
        let beta: Vec<f64> = (1..=steps)
            .map(|t| lambda * t as f64 / steps as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        // gamma_t = sum_{k=0}^{t-1} sqrt(alpha_bar_t * beta_{t-k} / alpha_bar_{t-k})
        let gamma = (0..steps)
            .map(|t| {
                (0..=t)
                    .map(|s| (alpha_bar[t] * beta[s] / alpha_bar[s]).sqrt())
                    .sum()
            })
            .collect();
        Ok(Self {
            steps,
            lambda,
            beta,
            alpha,
            alpha_bar,
            gamma,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(Error::TimeStep { t, steps: self.steps })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t - 1]
    }
}

/// Global mean and standard deviation of a cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeStats {
    pub mu: f64,
    pub sigma: f64,
}

/// Population statistics over every value of the cube, `sigma` floored at [`SIGMA_FLOOR`].
pub fn cube_stats(cube: &HsiCube) -> CubeStats {
    let values = cube.values();
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    CubeStats {
        mu,
        sigma: var.sqrt().max(SIGMA_FLOOR),
    }
}

/// An `L x B` field of i.i.d. `N(mu, sigma^2)` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pixels: usize,
    bands: usize,
    values: Vec<f64>,
    stats: CubeStats,
    seed: u64,
}

pub fn sample_pseudo_noise(stats: CubeStats, pixels: usize, bands: usize, seed: u64) -> NoiseField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..pixels * bands)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            stats.mu + stats.sigma * z
        })
        .collect();
    NoiseField {
        pixels,
        bands,
        values,
        stats,
        seed,
    }
}

impl NoiseField {
    /// Wraps explicit values, e.g. a fixed field in tests.
    pub fn from_values(pixels: usize, bands: usize, values: Vec<f64>, stats: CubeStats, seed: u64) -> Result<Self> {
        if values.len() != pixels * bands {
            return Err(Error::Shape(format!(
                "noise field {pixels}x{bands} needs {} values, got {}",
                pixels * bands,
                values.len()
            )));
        }
        Ok(Self {
            pixels,
            bands,
            values,
            stats,
            seed,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stats(&self) -> CubeStats {
        self.stats
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pixels, self.bands)
    }
}

fn check_noise_shape(cube: &HsiCube, noise: &[f64]) -> Result<()> {
    if noise.len() != cube.values().len() {
        return Err(Error::Shape(format!(
            "noise has {} values, cube has {}",
            noise.len(),
            cube.values().len()
        )));
    }
    Ok(())
}

/// Closed-form diffusion on flat values, in any precision.
pub fn diffuse_values<S: Scalar>(h: &[S], noise: &[S], schedule: &DiffusionSchedule, t: usize) -> Vec<S> {
    let signal = S::of(schedule.alpha_bar(t).sqrt());
    let gamma = S::of(schedule.gamma(t));
    h.iter().zip(noise).map(|(&h, &n)| signal * h + gamma * n).collect()
}

/// The one-step recursion applied `t` times on flat values, in any precision.
pub fn diffuse_stepwise_values<S: Scalar>(h: &[S], noise: &[S], schedule: &DiffusionSchedule, t: usize) -> Vec<S> {
    let mut x = h.to_vec();
    for step in 1..=t {
        let a = S::of(schedule.alpha(step).sqrt());
        let b = S::of(schedule.beta(step).sqrt());
        for (xi, &n) in x.iter_mut().zip(noise) {
            *xi = a * *xi + b * n;
        }
    }
    x
}

/// `(H - gamma_t N) / sqrt(alpha_bar_t)` on flat values, in any precision.
pub fn remove_background_values<S: Scalar>(h: &[S], noise: &[S], schedule: &DiffusionSchedule, t: usize) -> Vec<S> {
    let scale = S::of(1.0 / schedule.alpha_bar(t).sqrt());
    let gamma = S::of(schedule.gamma(t));
    h.iter().zip(noise).map(|(&h, &n)| scale * (h - gamma * n)).collect()
}

/// Closed-form diffusion `sqrt(alpha_bar_t) H + gamma_t N`.
pub fn diffuse(cube: &HsiCube, noise: &NoiseField, schedule: &DiffusionSchedule, t: usize) -> Result<HsiCube> {
    schedule.check_step(t)?;
    check_noise_shape(cube, noise.values())?;
    cube.with_values(cube.bands(), diffuse_values(cube.values(), noise.values(), schedule, t))
}

/// Applies the one-step recursion `t` times with the same noise field.
///
/// Independent of the `gamma` table, so it serves as a cross-check for [`diffuse`].
pub fn diffuse_stepwise(
    cube: &HsiCube,
    noise: &NoiseField,
    schedule: &DiffusionSchedule,
    t: usize,
) -> Result<HsiCube> {
    schedule.check_step(t)?;
    check_noise_shape(cube, noise.values())?;
    cube.with_values(cube.bands(), diffuse_stepwise_values(cube.values(), noise.values(), schedule, t))
}

/// Inverse of [`diffuse`] given a noise estimate. No clipping is applied.
pub fn remove_background(
    cube: &HsiCube,
    noise_estimate: &[f64],
    schedule: &DiffusionSchedule,
    t: usize,
) -> Result<HsiCube> {
    schedule.check_step(t)?;
    check_noise_shape(cube, noise_estimate)?;
    cube.with_values(cube.bands(), remove_background_values(cube.values(), noise_estimate, schedule, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn random_cube(seed: u64, h: usize, w: usize, b: usize) -> HsiCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::new(h, w, b, (0..h * w * b).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        let s = make_schedule(1000, 0.02).unwrap();
        assert!((s.beta(1) - 2e-5).abs() < 1e-18);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        assert_eq!(s.gamma(1), s.beta(1).sqrt());
        // gamma peaks near t = 605 for this schedule and then decays.
        for t in 1..1000 {
            if t < 600 {
                assert!(s.gamma(t + 1) > s.gamma(t));
            }
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
        }
    }

    #[test]
    fn gamma_two_steps_by_hand() {
        // Unrolling twice: x2 = sqrt(a2 a1) x0 + (sqrt(a2 b1) + sqrt(b2)) n.
        let s = make_schedule(2, 0.02).unwrap();
        let expected = 0.02f64.sqrt() + (0.98f64 * 0.01).sqrt();
        assert!((s.gamma(2) - expected).abs() < 1e-15);
        assert!((s.gamma(2) - 0.240416).abs() < 1e-6);
    }

    #[test]
    fn schedule_rejects_bad_lambda() {
        assert!(make_schedule(10, 1.0).is_err());
        assert!(make_schedule(10, 1.5).is_err());
        assert!(make_schedule(10, 0.0).is_err());
        assert!(make_schedule(0, 0.02).is_err());
    }

    #[test]
    fn stats_examples() {
        let constant = HsiCube::new(2, 2, 1, vec![3.0; 4]).unwrap();
        assert_eq!(cube_stats(&constant), CubeStats { mu: 3.0, sigma: SIGMA_FLOOR });

        let half = HsiCube::new(1, 4, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(cube_stats(&half), CubeStats { mu: 0.5, sigma: 0.5 });
    }

    #[test]
    fn stats_match_two_pass_reference() {
        let cube = random_cube(3, 5, 7, 4);
        let v = cube.values();
        let n = v.len() as f64;
        let mut mean = 0.0;
        for x in v {
            mean += x / n;
        }
        let mut m2 = 0.0;
        for x in v {
            m2 += (x - mean).powi(2) / n;
        }
        let stats = cube_stats(&cube);
        assert!((stats.mu - mean).abs() < 1e-6);
        assert!((stats.sigma - m2.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn noise_moments_and_determinism() {
        let stats = CubeStats { mu: 0.3, sigma: 0.1 };
        let field = sample_pseudo_noise(stats, 1000, 1000, 11);
        let mean = field.values().iter().sum::<f64>() / 1e6;
        assert!((mean - 0.3).abs() <= 5.0 * 0.1 / 1e3);
        assert_eq!(field, sample_pseudo_noise(stats, 1000, 1000, 11));

        let flat = sample_pseudo_noise(CubeStats { mu: 0.7, sigma: SIGMA_FLOOR }, 10, 10, 1);
        assert!(flat.values().iter().all(|v| (v - 0.7).abs() < 1e-5));
    }

    #[test]
    fn diffuse_limits() {
        let cube = random_cube(1, 4, 4, 3);
        let noise = sample_pseudo_noise(cube_stats(&cube), 16, 3, 2);
        let tiny = make_schedule(10, 1e-14).unwrap();
        let out = diffuse(&cube, &noise, &tiny, 10).unwrap();
        for (a, b) in out.values().iter().zip(cube.values()) {
            assert!((a - b).abs() < 1e-6);
        }

        let s = make_schedule(100, 0.02).unwrap();
        let zero = HsiCube::zeros(4, 4, 3).unwrap();
        let out = diffuse(&zero, &noise, &s, 37).unwrap();
        for (a, n) in out.values().iter().zip(noise.values()) {
            assert_eq!(*a, s.gamma(37) * n);
        }
        assert!(matches!(diffuse(&cube, &noise, &s, 0), Err(Error::TimeStep { .. })));
        assert!(matches!(diffuse(&cube, &noise, &s, 101), Err(Error::TimeStep { .. })));
    }

    #[test]
    fn stepwise_single_and_double_step() {
        let cube = random_cube(4, 3, 3, 2);
        let noise = sample_pseudo_noise(cube_stats(&cube), 9, 2, 5);
        let s = make_schedule(50, 0.02).unwrap();
        let one = diffuse_stepwise(&cube, &noise, &s, 1).unwrap();
        let two = diffuse_stepwise(&cube, &noise, &s, 2).unwrap();
        let (a1, a2, b1, b2) = (s.alpha(1), s.alpha(2), s.beta(1), s.beta(2));
        for i in 0..18 {
            let (h, n) = (cube.values()[i], noise.values()[i]);
            let e1 = a1.sqrt() * h + b1.sqrt() * n;
            let e2 = (a2 * a1).sqrt() * h + ((a2 * b1).sqrt() + b2.sqrt()) * n;
            assert!((one.values()[i] - e1).abs() < 1e-15);
            assert!((two.values()[i] - e2).abs() < 1e-14);
        }
    }

    #[test]
    fn remove_background_examples() {
        let cube = random_cube(6, 4, 5, 3);
        let s = make_schedule(1000, 0.02).unwrap();
        let zero = vec![0.0; cube.values().len()];
        let out = remove_background(&cube, &zero, &s, 40).unwrap();
        for (o, h) in out.values().iter().zip(cube.values()) {
            assert!((o - h / s.alpha_bar(40).sqrt()).abs() < 1e-15);
        }

        // Scalar formula evaluated from scratch.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let estimate: Vec<f64> = (0..cube.values().len()).map(|_| rng.random::<f64>()).collect();
        let out = remove_background(&cube, &estimate, &s, 40).unwrap();
        let mut abar = 1.0f64;
        let mut betas = vec![];
        for t in 1..=40 {
            let b = 0.02 * t as f64 / 1000.0;
            betas.push(b);
            abar *= 1.0 - b;
        }
        let mut gamma = 0.0;
        let mut acc = 1.0f64;
        // gamma via the recursion gamma_t = sqrt(alpha_t) gamma_{t-1} + sqrt(beta_t).
        for b in &betas {
            acc *= 1.0 - b;
            gamma = (1.0 - b).sqrt() * gamma + b.sqrt();
        }
        assert!((acc - abar).abs() < 1e-15);
        for i in 0..estimate.len() {
            let expected = (cube.values()[i] - gamma * estimate[i]) / abar.sqrt();
            assert!((out.values()[i] - expected).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn closed_form_matches_stepwise(seed in 0u64..10_000, t in 1usize..=64) {
            let cube = random_cube(seed, 4, 4, 5);
            let noise = sample_pseudo_noise(cube_stats(&cube), 16, 5, seed + 1);
            let s = make_schedule(64, 0.02).unwrap();
            let a = diffuse(&cube, &noise, &s, t).unwrap();
            let b = diffuse_stepwise(&cube, &noise, &s, t).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                proptest::prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn removal_inverts_diffusion(seed in 0u64..10_000, t in 1usize..=1000) {
            let cube = random_cube(seed, 3, 4, 6);
            let noise = sample_pseudo_noise(cube_stats(&cube), 12, 6, seed);
            let s = make_schedule(1000, 0.02).unwrap();
            let diffused = diffuse(&cube, &noise, &s, t).unwrap();
            let back = remove_background(&diffused, noise.values(), &s, t).unwrap();
            for (x, y) in back.values().iter().zip(cube.values()) {
                proptest::prop_assert!((x - y).abs() <= 1e-5);
            }
        }

        #[test]
        fn diffusion_is_homogeneous(seed in 0u64..10_000, scale in -4.0f64..4.0, t in 1usize..=100) {
            let cube = random_cube(seed, 2, 3, 4);
            let noise = sample_pseudo_noise(cube_stats(&cube), 6, 4, seed);
            let s = make_schedule(100, 0.02).unwrap();
            let scaled_cube = cube.with_values(4, cube.values().iter().map(|v| v * scale).collect()).unwrap();
            let scaled_noise = NoiseField::from_values(
                6, 4, noise.values().iter().map(|v| v * scale).collect(), noise.stats(), 0,
            ).unwrap();
            let lhs = diffuse(&scaled_cube, &scaled_noise, &s, t).unwrap();
            let rhs = diffuse(&cube, &noise, &s, t).unwrap();
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                proptest::prop_assert!((x - scale * y).abs() <= 1e-12);
            }
        }
    }
}
