use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::image::RgbImage;
use crate::masks::{HeadMask, MaskSource};

/// Head segmentation of the stage-1 layout image. Returns `None` when no head
/// is found; a returned mask must be at the image's resolution.
pub trait HeadSegmentor: Send + Sync {
    fn name(&self) -> String;
    fn segment(&self, image: &RgbImage) -> Result<Option<HeadMask>>;
}

/// Always returns the same mask.
#[derive(Debug, Clone)]
pub struct FixedSegmentor {
    mask: HeadMask,
}

impl FixedSegmentor {
    pub fn new(mask: HeadMask) -> Self {
        Self { mask }
    }
}

impl HeadSegmentor for FixedSegmentor {
    fn name(&self) -> String {
        format!("fixed:{}", &self.mask.checksum()[..12])
    }

    fn segment(&self, _image: &RgbImage) -> Result<Option<HeadMask>> {
        Ok(Some(self.mask.clone()))
    }
}

/// Never finds a head.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullSegmentor;

impl HeadSegmentor for NullSegmentor {
    fn name(&self) -> String {
        "null".into()
    }

    fn segment(&self, _image: &RgbImage) -> Result<Option<HeadMask>> {
        Ok(None)
    }
}

/// Stand-in for a real head segmentor: marks pixels whose luminance is at
/// least `threshold`.
#[derive(Debug, Clone, Copy)]
pub struct LuminanceSegmentor {
    pub threshold: f64,
}

impl Default for LuminanceSegmentor {
    fn default() -> Self {
        Self { threshold: 0.6 }
    }
}

impl HeadSegmentor for LuminanceSegmentor {
    fn name(&self) -> String {
        format!("luminance>={}", self.threshold)
    }

    fn segment(&self, image: &RgbImage) -> Result<Option<HeadMask>> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid!("segmentor threshold {} outside [0, 1]", self.threshold));
        }
        let values = Array2::from_shape_fn((image.height(), image.width()), |(y, x)| {
            if image.luminance(y, x) >= self.threshold {
                1.0
            } else {
                0.0
            }
        });
        if values.iter().all(|&v| v == 0.0) {
            return Ok(None);
        }
        HeadMask::new(values, MaskSource::Segmentor).map(Some)
    }
}
