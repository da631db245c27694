//! Small numeric helpers shared by masks, filters and the toy backend.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

/// A `C×H×W` real-valued feature map.
pub type Field = Array3<f64>;

/// One-dimensional overlap table for area resampling.
///
/// Source cell `k` spans `[k·m, (k+1)·m)` and target cell `i` spans
/// `[i·n, (i+1)·n)` on a common integer axis of length `n·m`, so every overlap
/// is an exact integer and each target row of weights sums to exactly `n`.
fn overlap_table(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    (0..m)
        .map(|i| {
            let lo = i * n;
            let hi = (i + 1) * n;
            let first = lo / m;
            let last = (hi - 1) / m;
            (first..=last)
                .filter_map(|k| {
                    let a = lo.max(k * m);
                    let b = hi.min((k + 1) * m);
                    (b > a).then(|| (k, (b - a) as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted (box filter) resampling of a 2D grid to `target = (H, W)`.
///
/// Each output value is the overlap-weighted mean of the source cells it
/// covers, clamped to the min/max of those cells so that constant regions
/// come out bit-exact.
pub fn resample_area(src: ArrayView2<'_, f64>, target: (usize, usize)) -> Result<Array2<f64>> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(invalid!("resample target must be at least 1x1, got {th}x{tw}"));
    }
    let (sh, sw) = src.dim();
    if sh == 0 || sw == 0 {
        return Err(invalid!("cannot resample an empty {sh}x{sw} grid"));
    }
    if (sh, sw) == target {
        return Ok(src.to_owned());
    }
    let rows = overlap_table(sh, th);
    let cols = overlap_table(sw, tw);
    let norm = (sh * sw) as f64;
    let mut out = Array2::<f64>::zeros(target);
    for (i, rw) in rows.iter().enumerate() {
        for (j, cw) in cols.iter().enumerate() {
            let mut acc = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &(k, wk) in rw {
                let mut row_acc = 0.0;
                for &(l, wl) in cw {
                    let v = src[[k, l]];
                    row_acc += wl * v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                acc += wk * row_acc;
            }
            out[[i, j]] = (acc / norm).clamp(lo, hi);
        }
    }
    Ok(out)
}

/// Applies [`resample_area`] to every channel of a field.
pub fn resample_field(field: &Field, target: (usize, usize)) -> Result<Field> {
    let c = field.len_of(Axis(0));
    let mut out = Field::zeros((c, target.0, target.1));
    for (ch, mut dst) in out.outer_iter_mut().enumerate() {
        dst.assign(&resample_area(field.index_axis(Axis(0), ch), target)?);
    }
    Ok(out)
}

pub fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid!("{what} contains non-finite values"))
    }
}

/// Little-endian f32 encoding, row-major.
pub fn to_f32le<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
