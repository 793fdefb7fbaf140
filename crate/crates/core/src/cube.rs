//! Hyperspectral cubes and anomaly masks.
//!
//! A cube is stored pixel-major: the `bands` values of pixel 0, then pixel 1,
//! and so on, with pixels flattened row by row.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f64>,
}

impl HsiCube {
    /// Builds a cube, rejecting empty dimensions, a wrong value count, or non-finite values.
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{bands} cube needs {expected} values, got {}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            height,
            width,
            bands,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::new(height, width, bands, alloc::vec![0.0; height * width * bands])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of pixels `L = height * width`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.bands..(index + 1) * self.bands]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.bands)
    }

    /// Same spatial size, new values (and possibly a new band count).
    pub fn with_values(&self, bands: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, bands, values)
    }

    /// Extracts the listed bands, in order, into a new cube.
    pub fn select_bands(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&b| b >= self.bands) {
            return Err(Error::Shape(format!(
                "band {bad} out of range for {} bands",
                self.bands
            )));
        }
        let mut values = Vec::with_capacity(self.pixels() * indices.len());
        for row in self.rows() {
            values.extend(indices.iter().map(|&b| row[b]));
        }
        self.with_values(indices.len(), values)
    }

    /// Values rounded to `f32`, the on-disk precision.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Min-max maps the whole cube onto `[0, 1]`. Constant cubes become all zeros.
pub fn normalize_cube(cube: &HsiCube) -> HsiCube {
    let values = min_max(cube.values());
    HsiCube {
        values,
        ..cube.clone()
    }
}

pub(crate) fn min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return alloc::vec![0.0; values.len()];
    }
    // Rounding can push (v - lo) / range a hair past 1 for the maximum.
    values
        .iter()
        .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
        .collect()
}

/// Per-pixel anomaly labels; `true` marks an anomaly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyMask {
    height: usize,
    width: usize,
    labels: Vec<bool>,
}

impl AnomalyMask {
    pub fn new(height: usize, width: usize, labels: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, alloc::vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [bool] {
        &mut self.labels
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn anomaly_fraction(&self) -> f64 {
        self.anomaly_count() as f64 / self.labels.len() as f64
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height() && self.width == cube.width()
    }
}
