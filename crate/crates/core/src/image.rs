//! In-memory RGB images with values in `[0, 1]`, PNG persistence and grid tiling.

use std::path::Path;

use ::image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::sha256_hex;

/// `H×W×3` image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!("image dimensions must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(invalid!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * 3
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(invalid!("image values must be finite and within [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self, y: usize, x: usize) -> f64 {
        let [r, g, b] = self.pixel(y, x);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// SHA-256 of the 8-bit RGB bytes; this is what manifests record.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_rgb8())
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y + h > self.height || x + w > self.width {
            return Err(invalid!(
                "crop {h}x{w} at ({y},{x}) outside {}x{} image",
                self.height,
                self.width
            ));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for row in y..y + h {
            let o = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[o..o + w * 3]);
        }
        Self::new(h, w, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
                .ok_or_else(|| invalid!("image buffer size mismatch"))?;
        buf.save_with_format(path, ::image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = ::image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(h as usize, w as usize, img.as_raw())
    }
}

/// Tiles images row-major into a `rows×cols` grid. All tiles must share one
/// size; unused trailing cells are black.
pub fn tile_grid(images: &[RgbImage], cols: usize) -> Result<RgbImage> {
    let first = images
        .first()
        .ok_or_else(|| invalid!("grid needs at least one image"))?;
    if cols == 0 {
        return Err(invalid!("grid needs at least one column"));
    }
    let (th, tw) = (first.height, first.width);
    if let Some(bad) = images.iter().find(|im| (im.height, im.width) != (th, tw)) {
        return Err(invalid!(
            "grid tiles must share one size: {th}x{tw} vs {}x{}",
            bad.height,
            bad.width
        ));
    }
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * th, cols * tw);
    let mut data = vec![0.0; gh * gw * 3];
    for (idx, im) in images.iter().enumerate() {
        let (r, c) = (idx / cols, idx % cols);
        for y in 0..th {
            let src = &im.data[y * tw * 3..(y + 1) * tw * 3];
            let o = ((r * th + y) * gw + c * tw) * 3;
            data[o..o + tw * 3].copy_from_slice(src);
        }
    }
    RgbImage::new(gh, gw, data)
}

pub(crate) fn read_dir_images(dir: &Path) -> Result<Vec<(String, RgbImage)>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, RgbImage::load(&p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_of_four_two_columns() {
        let tiles: Vec<_> = (0..4)
            .map(|i| RgbImage::filled(3, 5, i as f64 / 4.0).unwrap())
            .collect();
        let g = tile_grid(&tiles, 2).unwrap();
        assert_eq!((g.height(), g.width()), (6, 10));
        assert_eq!(g.pixel(0, 0)[0], 0.0);
        assert_eq!(g.pixel(0, 5)[0], 0.25);
        assert_eq!(g.pixel(3, 0)[0], 0.5);
        assert_eq!(g.pixel(5, 9)[0], 0.75);
    }

    #[test]
    fn partial_last_row_is_black() {
        let tiles: Vec<_> = (0..3).map(|_| RgbImage::filled(2, 2, 1.0).unwrap()).collect();
        let g = tile_grid(&tiles, 2).unwrap();
        assert_eq!((g.height(), g.width()), (4, 4));
        assert_eq!(g.pixel(3, 3), [0.0; 3]);
    }

    #[test]
    fn mismatched_tiles_rejected() {
        let a = RgbImage::filled(2, 2, 0.0).unwrap();
        let b = RgbImage::filled(2, 3, 0.0).unwrap();
        assert!(tile_grid(&[a, b], 2).is_err());
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(RgbImage::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
    }
}
