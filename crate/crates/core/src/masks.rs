//! Head masks: validation, area resampling, binarization, flattening and union.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{resample_area, sha256_hex};

/// Threshold used to harden masks for the attention constraint.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Segmentor,
    UserSupplied,
}

/// A `[0, 1]`-valued spatial mask, 1 on the head region.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMask {
    values: Array2<f64>,
    source: MaskSource,
}

impl HeadMask {
    pub fn new(values: Array2<f64>, source: MaskSource) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(invalid!("mask must be at least 1x1, got {h}x{w}"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("mask value {v} outside [0, 1]"));
        }
        Ok(Self { values, source })
    }

    pub fn filled(resolution: (usize, usize), value: f64, source: MaskSource) -> Result<Self> {
        Self::new(Array2::from_elem(resolution, value), source)
    }

    /// Inverse of [`HeadMask::flatten`].
    pub fn from_flat(flat: &[f64], resolution: (usize, usize), source: MaskSource) -> Result<Self> {
        let values = Array2::from_shape_vec(resolution, flat.to_vec())
            .map_err(|e| invalid!("cannot reshape {} values to {resolution:?}: {e}", flat.len()))?;
        Self::new(values, source)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    /// `(H, W)`.
    pub fn resolution(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn resize(&self, target: (usize, usize)) -> Result<Self> {
        if target == self.resolution() {
            return Ok(self.clone());
        }
        Ok(Self {
            values: resample_area(self.values.view(), target)?,
            source: self.source,
        })
    }

    /// Entries `>= threshold` become 1, the rest 0.
    pub fn binarize(&self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid!("binarize threshold {threshold} must lie in (0, 1)"));
        }
        Ok(Self {
            values: self
                .values
                .mapv(|v| if v >= threshold { 1.0 } else { 0.0 }),
            source: self.source,
        })
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Row-major linearization; the canonical attention-position order.
    pub fn flatten(&self) -> Array1<f64> {
        Array1::from_iter(self.values.iter().copied())
    }

    /// Soft area (sum of entries).
    pub fn area(&self) -> f64 {
        self.values.sum()
    }

    /// Elementwise maximum of equally sized masks.
    pub fn union(masks: &[HeadMask]) -> Result<Self> {
        let (first, rest) = masks
            .split_first()
            .ok_or_else(|| invalid!("union of an empty mask list"))?;
        let mut values = first.values.clone();
        for m in rest {
            if m.resolution() != first.resolution() {
                return Err(invalid!(
                    "union shape mismatch: {:?} vs {:?}",
                    first.resolution(),
                    m.resolution()
                ));
            }
            values.zip_mut_with(&m.values, |a, &b| *a = a.max(b));
        }
        let source = if masks.iter().all(|m| m.source == MaskSource::Segmentor) {
            MaskSource::Segmentor
        } else {
            MaskSource::UserSupplied
        };
        Ok(Self { values, source })
    }

    /// 8-bit quantized bytes, as written to disk.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_gray8())
    }

    pub fn load_png(path: &Path, source: MaskSource) -> Result<Self> {
        let img = ::image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let values = Array2::from_shape_vec(
            (h as usize, w as usize),
            img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
        .map_err(|e| invalid!("mask image shape: {e}"))?;
        Self::new(values, source)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.resolution();
        let buf: ::image::GrayImage =
            ::image::ImageBuffer::from_raw(w as u32, h as u32, self.to_gray8())
                .ok_or_else(|| invalid!("mask buffer size mismatch"))?;
        buf.save_with_format(path, ::image::ImageFormat::Png)?;
        Ok(())
    }
}

/// A base mask plus resampled copies keyed by `(H, W)`.
#[derive(Debug, Clone)]
pub struct MaskPyramid {
    base: HeadMask,
    levels: BTreeMap<(usize, usize), HeadMask>,
}

impl MaskPyramid {
    pub fn build(base: HeadMask, resolutions: &[(usize, usize)]) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(invalid!("mask pyramid needs at least one resolution"));
        }
        let mut levels = BTreeMap::new();
        for &res in resolutions {
            if let std::collections::btree_map::Entry::Vacant(e) = levels.entry(res) {
                e.insert(base.resize(res)?);
            }
        }
        Ok(Self { base, levels })
    }

    pub fn base(&self) -> &HeadMask {
        &self.base
    }

    pub fn level(&self, resolution: (usize, usize)) -> Option<&HeadMask> {
        if resolution == self.base.resolution() {
            return Some(&self.base);
        }
        self.levels.get(&resolution)
    }

    /// The stored level, or one resampled from the base on demand.
    pub fn level_or_resize(&self, resolution: (usize, usize)) -> Result<Cow<'_, HeadMask>> {
        match self.level(resolution) {
            Some(m) => Ok(Cow::Borrowed(m)),
            None => Ok(Cow::Owned(self.base.resize(resolution)?)),
        }
    }

    pub fn resolutions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.levels.keys().copied()
    }
}
