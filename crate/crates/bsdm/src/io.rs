//! Cube, mask and detection-map files.
//!
//! A cube named `scene` is stored as `scene.hdr.json` plus `scene.bin`, the
//! latter holding `height * width * bands` little-endian `f32` values with all
//! bands of a pixel adjacent. Masks are binary P5 graymaps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bsdm_core::cube::{AnomalyMask, HsiCube};
use bsdm_core::detect::DetectionMap;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const HEADER_SUFFIX: &str = ".hdr.json";
pub const DATA_SUFFIX: &str = ".bin";
const DTYPE: &str = "f32le";
const LAYOUT: &str = "pixel-major";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
}

impl CubeHeader {
    pub fn for_cube(cube: &HsiCube) -> Self {
        Self {
            height: cube.height(),
            width: cube.width(),
            bands: cube.bands(),
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
        }
    }

    fn value_count(&self) -> Option<usize> {
        self.height.checked_mul(self.width)?.checked_mul(self.bands)
    }
}

/// Strips `suffix` from the file name of `path`, if present.
pub fn strip_suffix(path: &Path, suffix: &str) -> Option<PathBuf> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(suffix)?;
    Some(path.with_file_name(stem))
}

/// Appends `suffix` to the file name of `prefix`.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Accepts `scene`, `scene.hdr.json` or `scene.bin` and returns `scene`.
pub fn cube_prefix(path: &Path) -> PathBuf {
    strip_suffix(path, HEADER_SUFFIX)
        .or_else(|| strip_suffix(path, DATA_SUFFIX))
        .unwrap_or_else(|| path.to_path_buf())
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(Error::io(dir)),
        _ => Ok(()),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub(crate) fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn f32_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes a cube; values are rounded to `f32`.
pub fn save_cube(prefix: &Path, cube: &HsiCube) -> Result<()> {
    let prefix = cube_prefix(prefix);
    write_json(&with_suffix(&prefix, HEADER_SUFFIX), &CubeHeader::for_cube(cube))?;
    let data = with_suffix(&prefix, DATA_SUFFIX);
    fs::write(&data, f32_le_bytes(cube.to_f32())).map_err(Error::io(data))
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    let prefix = cube_prefix(path);
    let header_path = with_suffix(&prefix, HEADER_SUFFIX);
    let header: CubeHeader = read_json(&header_path)?;
    if header.dtype != DTYPE || header.layout != LAYOUT {
        return Err(Error::format(
            &header_path,
            format!(
                "unsupported dtype/layout {}/{}, expected {DTYPE}/{LAYOUT}",
                header.dtype, header.layout
            ),
        ));
    }
    let count = header
        .value_count()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::format(&header_path, "empty or overflowing dimensions"))?;

    let data_path = with_suffix(&prefix, DATA_SUFFIX);
    let bytes = fs::read(&data_path).map_err(Error::io(&data_path))?;
    if bytes.len() != count * 4 {
        return Err(Error::format(
            &data_path,
            format!(
                "expected {} bytes for {}x{}x{}, found {}",
                count * 4,
                header.height,
                header.width,
                header.bands,
                bytes.len()
            ),
        ));
    }
    let values = f32_from_le(&bytes);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(&data_path, format!("non-finite value {} at index {i}", values[i])));
    }
    let values = values.into_iter().map(f64::from).collect();
    Ok(HsiCube::new(header.height, header.width, header.bands, values)?)
}

/// Detection maps use the cube format with a single band.
pub fn save_map(prefix: &Path, map: &DetectionMap) -> Result<()> {
    save_cube(prefix, &map.to_cube())
}

pub fn load_map(path: &Path) -> Result<DetectionMap> {
    let cube = load_cube(path)?;
    DetectionMap::from_cube(&cube).map_err(|e| Error::format(cube_prefix(path), e.to_string()))
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{width} {height}\n255\n")
        .and_then(|_| out.write_all(pixels))
        .and_then(|_| out.flush())
        .map_err(Error::io(path))
}

pub fn save_mask(path: &Path, mask: &AnomalyMask) -> Result<()> {
    let pixels: Vec<u8> = mask.labels().iter().map(|&a| if a { 255 } else { 0 }).collect();
    write_pgm(path, mask.width(), mask.height(), &pixels)
}

/// 8-bit grayscale rendering of a map after min-max scaling.
pub fn save_map_preview(path: &Path, map: &DetectionMap) -> Result<()> {
    let scaled = bsdm_core::detect::normalize_map(map);
    let pixels: Vec<u8> = scaled
        .scores
        .iter()
        .map(|s| (s * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write_pgm(path, map.width, map.height, &pixels)
}

/// Reads `P5` header fields, skipping whitespace and `#` comments.
struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn token(&mut self) -> Option<&[u8]> {
        loop {
            match self.bytes.get(self.pos)? {
                b'#' => {
                    while *self.bytes.get(self.pos)? != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<usize> {
        std::str::from_utf8(self.token()?).ok()?.parse().ok()
    }
}

pub fn load_mask(path: &Path) -> Result<AnomalyMask> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let bad = |message: &str| Error::format(path, message.to_string());
    let mut header = PgmHeader { bytes: &bytes, pos: 0 };
    if header.token() != Some(b"P5") {
        return Err(bad("not a binary graymap (P5)"));
    }
    let width = header.number().ok_or_else(|| bad("missing width"))?;
    let height = header.number().ok_or_else(|| bad("missing height"))?;
    let maxval = header.number().ok_or_else(|| bad("missing maxval"))?;
    if maxval != 255 {
        return Err(bad("mask maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = header.pos + 1;
    let raster = bytes.get(start..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes for {width}x{height}, found {}", width * height, raster.len()),
        ));
    }
    let mut labels = Vec::with_capacity(raster.len());
    for (i, &v) in raster.iter().enumerate() {
        match v {
            0 => labels.push(false),
            255 => labels.push(true),
            other => {
                return Err(Error::format(path, format!("mask value {other} at pixel {i}, expected 0 or 255")))
            }
        }
    }
    AnomalyMask::new(height, width, labels).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> HsiCube {
        HsiCube::new(2, 3, 2, (0..12).map(|i| i as f64 * 0.125 - 0.5).collect()).unwrap()
    }

    #[test]
    fn prefix_forms_resolve_to_the_same_cube() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("a");
        save_cube(&prefix, &cube()).unwrap();
        for p in ["a", "a.hdr.json", "a.bin"] {
            assert_eq!(load_cube(&dir.path().join(p)).unwrap(), cube());
        }
        let header = fs::read_to_string(dir.path().join("a.hdr.json")).unwrap();
        let header: serde_json::Value = serde_json::from_str(&header).unwrap();
        assert_eq!(header["dtype"], "f32le");
        assert_eq!(header["layout"], "pixel-major");
        assert_eq!(fs::metadata(dir.path().join("a.bin")).unwrap().len(), 48);
    }

    #[test]
    fn first_bytes_are_pixel_zero_band_zero() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("c");
        save_cube(&prefix, &cube()).unwrap();
        let bytes = fs::read(dir.path().join("c.bin")).unwrap();
        assert_eq!(&bytes[..4], &(-0.5f32).to_le_bytes());
        assert_eq!(&bytes[4..8], &(-0.375f32).to_le_bytes());
    }

    #[test]
    fn size_mismatch_and_nan_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("c");
        save_cube(&prefix, &cube()).unwrap();
        let bin = dir.path().join("c.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.pop();
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(load_cube(&prefix), Err(Error::Format { .. })));

        let mut bytes = f32_le_bytes(cube().to_f32());
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&bin, &bytes).unwrap();
        let err = load_cube(&prefix).unwrap_err().to_string();
        assert!(err.contains("index 2"), "{err}");
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cube(&dir.path().join("none")), Err(Error::Io { .. })));
        assert!(matches!(load_mask(&dir.path().join("none.pgm")), Err(Error::Io { .. })));
    }

    #[test]
    fn mask_round_trip_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = AnomalyMask::new(2, 3, vec![false, true, false, false, false, true]).unwrap();
        save_mask(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);

        fs::write(&path, b"P5\n# comment\n3 2\n255\n\x00\xff\x00\x00\x11\xff").unwrap();
        let err = load_mask(&path).unwrap_err().to_string();
        assert!(err.contains("17"), "{err}");

        fs::write(&path, b"P2\n3 2\n255\n0 0 0 0 0 0").unwrap();
        assert!(load_mask(&path).is_err());
        fs::write(&path, b"P5\n3 2\n255\n\x00\x00").unwrap();
        assert!(load_mask(&path).is_err());
    }

    #[test]
    fn map_needs_one_band() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("m");
        save_cube(&prefix, &cube()).unwrap();
        assert!(load_map(&prefix).is_err());
        let map = DetectionMap::new(2, 2, vec![0.0, 1.0, 0.25, 0.5]).unwrap();
        save_map(&prefix, &map).unwrap();
        assert_eq!(load_map(&prefix).unwrap(), map);
        save_map_preview(&dir.path().join("m.pgm"), &map).unwrap();
        let bytes = fs::read(dir.path().join("m.pgm")).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 64, 128]);
    }
}
