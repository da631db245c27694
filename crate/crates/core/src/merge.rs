//! Latent merge and residual merge between the general (SD) and
//! personalized (PFD) branches.

use std::fmt;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filters::{Filter, FilterMode, GaussianKernel};
use crate::masks::{HeadMask, MaskPyramid};
use crate::tensor::{ensure_finite, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchTag {
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "PFD")]
    Pfd,
    #[serde(rename = "merged")]
    Merged,
}

impl fmt::Display for BranchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchTag::Sd => "SD",
            BranchTag::Pfd => "PFD",
            BranchTag::Merged => "merged",
        })
    }
}

/// `C×H×W` latent at a diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    values: Field,
    timestep: usize,
    branch: BranchTag,
}

impl LatentGrid {
    pub fn new(values: Field, timestep: usize, branch: BranchTag) -> Result<Self> {
        ensure_finite(values.iter(), "latent")?;
        if values.is_empty() {
            return Err(invalid!("latent must be non-empty"));
        }
        Ok(Self {
            values,
            timestep,
            branch,
        })
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn into_values(self) -> Field {
        self.values
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn branch(&self) -> BranchTag {
        self.branch
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.values.dim();
        (h, w)
    }

    pub fn with_branch(mut self, branch: BranchTag) -> Self {
        self.branch = branch;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer {
    pub index: usize,
    pub values: Field,
}

/// Per-skip-connection feature maps from one denoiser call.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    pub layers: Vec<ResidualLayer>,
    pub branch: BranchTag,
}

impl ResidualStack {
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().map(|l| l.values.dim()).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// `m ⊙ a + (1 − m) ⊙ b`, broadcast over channels. Exact at `m ∈ {0, 1}` and
/// wherever `a == b`.
pub(crate) fn blend(mask: &Array2<f64>, a: &Field, b: &Field) -> Field {
    let mut out = Field::zeros(a.dim());
    for ((mut o, a), b) in out
        .axis_iter_mut(Axis(0))
        .zip(a.axis_iter(Axis(0)))
        .zip(b.axis_iter(Axis(0)))
    {
        Zip::from(&mut o)
            .and(mask)
            .and(&a)
            .and(&b)
            .for_each(|o, &m, &x, &y| {
                *o = if m == 1.0 || x == y {
                    x
                } else if m == 0.0 {
                    y
                } else {
                    m * x + (1.0 - m) * y
                };
            });
    }
    out
}

/// Mask-weighted latent blend; `mask` must be at the latent resolution.
pub fn latent_merge(z_pfd: &LatentGrid, z_sd: &LatentGrid, mask: &HeadMask) -> Result<LatentGrid> {
    if z_pfd.shape() != z_sd.shape() {
        return Err(invalid!(
            "latent shapes differ: {:?} vs {:?}",
            z_pfd.shape(),
            z_sd.shape()
        ));
    }
    if z_pfd.timestep != z_sd.timestep {
        return Err(invalid!(
            "latent timesteps differ: {} vs {}",
            z_pfd.timestep,
            z_sd.timestep
        ));
    }
    if mask.resolution() != z_pfd.spatial() {
        return Err(invalid!(
            "mask {:?} is not at latent resolution {:?}",
            mask.resolution(),
            z_pfd.spatial()
        ));
    }
    Ok(LatentGrid {
        values: blend(mask.values(), &z_pfd.values, &z_sd.values),
        timestep: z_pfd.timestep,
        branch: BranchTag::Merged,
    })
}

/// Residual merge over every layer.
pub fn residual_merge(
    r_pfd: &ResidualStack,
    r_sd: &ResidualStack,
    pyramid: &MaskPyramid,
    kernel: &GaussianKernel,
    mode: FilterMode,
) -> Result<ResidualStack> {
    residual_merge_layers(r_pfd, r_sd, pyramid, kernel, mode, |_| true)
}

/// Residual merge restricted to layers for which `enabled(layer_index)` holds;
/// other layers keep the personalized branch's own residuals.
pub fn residual_merge_layers(
    r_pfd: &ResidualStack,
    r_sd: &ResidualStack,
    pyramid: &MaskPyramid,
    kernel: &GaussianKernel,
    mode: FilterMode,
    enabled: impl Fn(usize) -> bool,
) -> Result<ResidualStack> {
    if r_pfd.shapes() != r_sd.shapes() {
        return Err(invalid!(
            "residual stacks differ: {:?} vs {:?}",
            r_pfd.shapes(),
            r_sd.shapes()
        ));
    }
    let mut layers = Vec::with_capacity(r_pfd.len());
    for (p, s) in r_pfd.layers.iter().zip(&r_sd.layers) {
        if p.index != s.index {
            return Err(invalid!("residual layer order differs: {} vs {}", p.index, s.index));
        }
        let values = if !enabled(p.index) {
            p.values.clone()
        } else {
            match mode.filters() {
                None => s.values.clone(),
                Some((sd_filter, pfd_filter)) => {
                    let (_, h, w) = p.values.dim();
                    let m = pyramid.level_or_resize((h, w))?;
                    let pf = apply_side(pfd_filter, &p.values, kernel)?;
                    let sf = apply_side(sd_filter, &s.values, kernel)?;
                    blend(m.values(), &pf, &sf)
                }
            }
        };
        layers.push(ResidualLayer {
            index: p.index,
            values,
        });
    }
    Ok(ResidualStack {
        layers,
        branch: BranchTag::Merged,
    })
}

fn apply_side(filter: Filter, field: &Field, kernel: &GaussianKernel) -> Result<Field> {
    filter.apply(field, kernel)
}
