//! Gaussian low-pass / complementary high-pass filtering and the kernel-size
//! schedule that drives it.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{ensure_finite, Field};

/// Normalized, odd-sized, isotropic Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    /// Normalized 1D profile; `weights` is its outer product with itself.
    profile: Vec<f64>,
    weights: Array2<f64>,
}

impl GaussianKernel {
    /// `sigma = max(size / 6, 0.3)`, so the support spans roughly ±3σ.
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(invalid!("kernel size must be odd and positive, got {size}"));
        }
        let sigma = (size as f64 / 6.0).max(0.3);
        let radius = (size / 2) as f64;
        let raw: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - radius;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let profile: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let weights = Array2::from_shape_fn((size, size), |(i, j)| profile[i] * profile[j]);
        Ok(Self {
            size,
            sigma,
            profile,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

/// `round(alpha · sqrt(area))`, bumped to the next odd number, at least 1.
pub fn kernel_size_from_mask(area: f64, alpha: f64) -> Result<usize> {
    if !(area >= 0.0 && area.is_finite()) {
        return Err(invalid!("mask area must be finite and non-negative, got {area}"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid!("alpha must be finite and non-negative, got {alpha}"));
    }
    let size = (alpha * area.sqrt()).round() as usize;
    Ok(if size.is_multiple_of(2) { size + 1 } else { size })
}

/// Half-sample symmetric reflection (`…c b a | a b c … x y z | z y x…`).
/// Periodic with period `2n`, so any radius is valid even on tiny grids.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn convolve_rows(src: ArrayView2<'_, f64>, mut dst: ArrayViewMut2<'_, f64>, profile: &[f64]) {
    let (_, w) = src.dim();
    let r = (profile.len() / 2) as isize;
    let taps: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| (-r..=r).map(|d| reflect(x + d, w)).collect())
        .collect();
    for (srow, mut drow) in src.outer_iter().zip(dst.outer_iter_mut()) {
        for (x, idx) in taps.iter().enumerate() {
            drow[x] = idx.iter().zip(profile).map(|(&k, &g)| g * srow[k]).sum();
        }
    }
}

fn low_pass_channel(src: ArrayView2<'_, f64>, kernel: &GaussianKernel) -> Array2<f64> {
    let (lo, hi) = src
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi || kernel.size == 1 {
        return src.to_owned();
    }
    let mut tmp = Array2::zeros(src.dim());
    convolve_rows(src, tmp.view_mut(), &kernel.profile);
    let mut out = Array2::zeros(src.dim());
    convolve_rows(tmp.t(), out.view_mut().reversed_axes(), &kernel.profile);
    // A convex combination of a channel stays within its range; clamping only
    // removes rounding excursions.
    out.mapv_inplace(|v| v.clamp(lo, hi));
    out
}

/// Per-channel separable Gaussian blur with symmetric reflect padding.
pub fn low_pass(field: &Field, kernel: &GaussianKernel) -> Result<Field> {
    ensure_finite(field.iter(), "low-pass input")?;
    let mut out = Field::zeros(field.dim());
    for (src, mut dst) in field.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&low_pass_channel(src, kernel));
    }
    Ok(out)
}

/// `x − low_pass(x)`.
pub fn high_pass(field: &Field, kernel: &GaussianKernel) -> Result<Field> {
    Ok(field - &low_pass(field, kernel)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    LinearDecremental,
    LinearIncremental,
}

/// Timestep-dependent kernel scale α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSchedule {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub total_steps: usize,
    pub mode: ScheduleMode,
}

impl KernelSchedule {
    pub fn constant(alpha: f64, total_steps: usize) -> Result<Self> {
        Self::new(alpha, alpha, total_steps, ScheduleMode::Constant)
    }

    /// The default 2.5 → 0.5 decremental schedule.
    pub fn decremental_default(total_steps: usize) -> Self {
        Self {
            alpha_start: 2.5,
            alpha_end: 0.5,
            total_steps,
            mode: ScheduleMode::LinearDecremental,
        }
    }

    pub fn new(alpha_start: f64, alpha_end: f64, total_steps: usize, mode: ScheduleMode) -> Result<Self> {
        let s = Self {
            alpha_start,
            alpha_end,
            total_steps,
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(invalid!("schedule needs at least one step"));
        }
        for a in [self.alpha_start, self.alpha_end] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid!("alpha must be finite and non-negative, got {a}"));
            }
        }
        match self.mode {
            ScheduleMode::Constant if self.alpha_start != self.alpha_end => Err(invalid!(
                "constant schedule needs alpha_start == alpha_end"
            )),
            ScheduleMode::LinearDecremental if self.alpha_start < self.alpha_end => Err(invalid!(
                "decremental schedule needs alpha_start >= alpha_end"
            )),
            ScheduleMode::LinearIncremental if self.alpha_start > self.alpha_end => Err(invalid!(
                "incremental schedule needs alpha_start <= alpha_end"
            )),
            _ => Ok(()),
        }
    }

    /// α at denoising step `step` (0 is the first step).
    pub fn eval(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(invalid!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            ));
        }
        let (a, b) = (self.alpha_start, self.alpha_end);
        if self.mode == ScheduleMode::Constant || self.total_steps == 1 || step == 0 {
            return Ok(a);
        }
        if step == self.total_steps - 1 {
            return Ok(b);
        }
        let f = step as f64 / (self.total_steps - 1) as f64;
        Ok((a + (b - a) * f).clamp(a.min(b), a.max(b)))
    }

    /// Compact label such as `2.5->0.5` or `1.5`.
    pub fn label(&self) -> String {
        match self.mode {
            ScheduleMode::Constant => format!("{}", self.alpha_start),
            _ => format!("{}->{}", self.alpha_start, self.alpha_end),
        }
    }
}

/// Residual-merge filter configuration, named (SD-side filter, PFD-side filter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Replace,
    NoFilter,
    LowLow,
    HighHigh,
    HighLow,
    LowHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    None,
    Low,
    High,
}

impl FilterMode {
    pub const ALL: [FilterMode; 6] = [
        FilterMode::Replace,
        FilterMode::NoFilter,
        FilterMode::LowLow,
        FilterMode::HighHigh,
        FilterMode::HighLow,
        FilterMode::LowHigh,
    ];

    /// `(sd_filter, pfd_filter)`; `None` for `Replace`, which does not blend.
    pub fn filters(self) -> Option<(Filter, Filter)> {
        use Filter::{High, Low};
        match self {
            FilterMode::Replace => None,
            FilterMode::NoFilter => Some((Filter::None, Filter::None)),
            FilterMode::LowLow => Some((Low, Low)),
            FilterMode::HighHigh => Some((High, High)),
            FilterMode::HighLow => Some((High, Low)),
            FilterMode::LowHigh => Some((Low, High)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::Replace => "replace",
            FilterMode::NoFilter => "no-filter",
            FilterMode::LowLow => "low-low",
            FilterMode::HighHigh => "high-high",
            FilterMode::HighLow => "high-low",
            FilterMode::LowHigh => "low-high",
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "replace" => FilterMode::Replace,
            "nofilter" => FilterMode::NoFilter,
            "lowlow" => FilterMode::LowLow,
            "highhigh" => FilterMode::HighHigh,
            "highlow" => FilterMode::HighLow,
            "lowhigh" => FilterMode::LowHigh,
            _ => return Err(invalid!("unknown filter mode {s:?}")),
        })
    }
}

impl Filter {
    pub fn apply(self, field: &Field, kernel: &GaussianKernel) -> Result<Field> {
        match self {
            Filter::None => Ok(field.clone()),
            Filter::Low => low_pass(field, kernel),
            Filter::High => high_pass(field, kernel),
        }
    }
}
