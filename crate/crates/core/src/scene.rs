//! Synthetic hyperspectral scenes with implanted anomalies.
//!
//! The image is split into Voronoi regions around random seeds, one per
//! background cluster. Each cluster has a smooth mean spectrum and an AR(1)
//! band-correlated Gaussian spread. Anomalies are small compact blocks whose
//! spectra are the local background plus a fixed offset on half the bands.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::{normalize_cube, AnomalyMask, HsiCube};
use crate::{Error, Result};

/// Largest anomaly fraction a generated scene may have.
pub const MAX_ANOMALY_FRACTION: f64 = 0.02;

const BAND_CORRELATION: f64 = 0.7;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub background_cluster_count: usize,
    pub cluster_mean_range: (f64, f64),
    pub cluster_sigma_range: (f64, f64),
    pub anomaly_count: usize,
    /// Pixels per anomaly.
    pub anomaly_size: usize,
    pub anomaly_spectrum_offset: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            bands: 20,
            background_cluster_count: 2,
            cluster_mean_range: (0.2, 0.8),
            cluster_sigma_range: (0.02, 0.05),
            anomaly_count: 4,
            anomaly_size: 4,
            anomaly_spectrum_offset: 0.05,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn implied_anomaly_fraction(&self) -> f64 {
        (self.anomaly_count * self.anomaly_size) as f64 / (self.height * self.width).max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad(format!(
                "scene dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.bands
            ));
        }
        if self.background_cluster_count == 0 {
            return bad(format!("background_cluster_count must be at least 1"));
        }
        let (m0, m1) = self.cluster_mean_range;
        let (s0, s1) = self.cluster_sigma_range;
        if !(m0.is_finite() && m1.is_finite() && m0 <= m1) {
            return bad(format!("cluster_mean_range {m0}..{m1} is not an interval"));
        }
        if !(s0.is_finite() && s1.is_finite() && 0.0 <= s0 && s0 <= s1) {
            return bad(format!("cluster_sigma_range {s0}..{s1} is not a nonnegative interval"));
        }
        if self.anomaly_count > 0 && self.anomaly_size == 0 {
            return bad(format!("anomaly_size must be at least 1"));
        }
        if !self.anomaly_spectrum_offset.is_finite() {
            return bad(format!("anomaly_spectrum_offset must be finite"));
        }
        let fraction = self.implied_anomaly_fraction();
        if fraction > MAX_ANOMALY_FRACTION {
            return bad(format!(
                "anomaly fraction {fraction:.4} exceeds {MAX_ANOMALY_FRACTION}"
            ));
        }
        Ok(())
    }
}

struct Cluster {
    mean: Vec<f64>,
    sigma: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Offsets of an anomaly's pixels inside its bounding box, filled row by row.
fn block_shape(size: usize) -> (usize, usize) {
    let mut side = 1;
    while side * side < size {
        side += 1;
    }
    (size.div_ceil(side), side)
}

pub fn synth_scene(config: &SceneConfig) -> Result<(HsiCube, AnomalyMask)> {
    config.validate()?;
    let (h, w, bands) = (config.height, config.width, config.bands);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let centers: Vec<(f64, f64)> = (0..config.background_cluster_count)
        .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)))
        .collect();
    let mean_span = config.cluster_mean_range.1 - config.cluster_mean_range.0;
    let clusters: Vec<Cluster> = (0..config.background_cluster_count)
        .map(|_| {
            let base = uniform(&mut rng, config.cluster_mean_range);
            let amplitude = rng.random_range(0.0..=0.25) * mean_span;
            let cycles = rng.random_range(0.5..2.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let mean = (0..bands)
                .map(|b| base + amplitude * (2.0 * PI * cycles * b as f64 / bands as f64 + phase).sin())
                .collect();
            Cluster {
                mean,
                sigma: uniform(&mut rng, config.cluster_sigma_range),
            }
        })
        .collect();

    let innovation = (1.0 - BAND_CORRELATION * BAND_CORRELATION).sqrt();
    let mut values = Vec::with_capacity(h * w * bands);
    for y in 0..h {
        for x in 0..w {
            let (yc, xc) = (y as f64 + 0.5, x as f64 + 0.5);
            let nearest = centers
                .iter()
                .map(|&(cy, cx)| (cy - yc) * (cy - yc) + (cx - xc) * (cx - xc))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
                .0;
            let cluster = &clusters[nearest];
            let mut e: f64 = rng.sample(StandardNormal);
            for b in 0..bands {
                if b > 0 {
                    let z: f64 = rng.sample(StandardNormal);
                    e = BAND_CORRELATION * e + innovation * z;
                }
                values.push(cluster.mean[b] + cluster.sigma * e);
            }
        }
    }

    let mut mask = AnomalyMask::empty(h, w)?;
    let (bh, bw) = block_shape(config.anomaly_size);
    let mut boxes: Vec<(usize, usize)> = Vec::new();
    let shifted_bands = bands.div_ceil(2);
    for _ in 0..config.anomaly_count {
        if bh > h || bw > w {
            return Err(Error::Scene(format!(
                "{bh}x{bw} anomaly block does not fit a {h}x{w} image"
            )));
        }
        // Blocks keep a one-pixel gap from each other.
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let y0 = rng.random_range(0..=h - bh);
            let x0 = rng.random_range(0..=w - bw);
            let clear = boxes.iter().all(|&(oy, ox)| {
                y0 > oy + bh || oy > y0 + bh || x0 > ox + bw || ox > x0 + bw
            });
            clear.then_some((y0, x0))
        });
        let Some((y0, x0)) = placed else {
            return Err(Error::Scene(format!(
                "could not place {} anomalies of {} pixels without overlap",
                config.anomaly_count, config.anomaly_size
            )));
        };
        boxes.push((y0, x0));
        let chosen = rand::seq::index::sample(&mut rng, bands, shifted_bands);
        for i in 0..config.anomaly_size {
            let p = (y0 + i / bw) * w + x0 + i % bw;
            mask.labels_mut()[p] = true;
            for b in chosen.iter() {
                values[p * bands + b] += config.anomaly_spectrum_offset;
            }
        }
    }

    let cube = HsiCube::new(h, w, bands, values)?;
    Ok((normalize_cube(&cube), mask))
}
