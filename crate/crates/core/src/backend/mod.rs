//! The denoiser contract every backend implements, plus the desk-scale toy
//! backend and a recording wrapper used to inspect pipeline wiring.
//!
//! A real-model adapter implements [`DenoiserBackend`] and declares a
//! [`BackendDescriptor`]. The two hooks in [`Hooks`] are the only integration
//! surface the fusion pipeline needs: an attention interceptor called on every
//! post-softmax cross-attention map, and a residual override that replaces the
//! decoder's skip inputs.

mod recording;
mod text;
mod toy;

pub use recording::{CallRecord, RecordingBackend};
pub use text::ToyTextEncoder;
pub use toy::{sample_noise, ToyBackend, ToyBackendSpec};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionInterceptor, AttentionMap, ConditioningSequence};
use crate::error::{invalid, Result};
use crate::image::RgbImage;
use crate::merge::{LatentGrid, ResidualStack};
use crate::tensor::{ensure_finite, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionLayerSpec {
    pub resolution: (usize, usize),
    pub n_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    /// `(C, H, W)`.
    pub latent_shape: (usize, usize, usize),
    pub token_dim: usize,
    pub attention_layers: Vec<AttentionLayerSpec>,
    pub residual_layer_shapes: Vec<(usize, usize, usize)>,
    pub supports_identity_token: bool,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<()> {
        let pos = |(c, h, w): (usize, usize, usize)| c > 0 && h > 0 && w > 0;
        if !pos(self.latent_shape) || self.token_dim == 0 {
            return Err(invalid!("backend {} declares an empty latent or token shape", self.name));
        }
        if self.residual_layer_shapes.is_empty() || !self.residual_layer_shapes.iter().all(|&s| pos(s)) {
            return Err(invalid!("backend {} needs at least one positive residual layer", self.name));
        }
        if self
            .attention_layers
            .iter()
            .any(|a| a.n_tokens == 0 || a.resolution.0 == 0 || a.resolution.1 == 0)
        {
            return Err(invalid!("backend {} declares an empty attention layer", self.name));
        }
        Ok(())
    }

    pub fn latent_spatial(&self) -> (usize, usize) {
        (self.latent_shape.1, self.latent_shape.2)
    }

    pub fn residual_resolutions(&self) -> Vec<(usize, usize)> {
        self.residual_layer_shapes.iter().map(|&(_, h, w)| (h, w)).collect()
    }

    /// True when two branches can be fused step by step.
    pub fn compatible_with(&self, other: &BackendDescriptor) -> bool {
        self.latent_shape == other.latent_shape
            && self.residual_layer_shapes == other.residual_layer_shapes
    }
}

/// Step constants of the sampler. The toy sampler is
/// `z_{t−1} = z_t − γ_t · ε` with `γ_t = 1/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    pub total_steps: usize,
    /// `γ_t` for `t = 1..=T`, stored at index `t − 1`.
    pub step_coefficients: Vec<f64>,
    pub sampler_name: String,
}

pub const TOY_SAMPLER: &str = "toy-euler";

impl SchedulerParams {
    pub fn toy(total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(invalid!("sampler needs at least one step"));
        }
        Ok(Self {
            total_steps,
            step_coefficients: vec![1.0 / total_steps as f64; total_steps],
            sampler_name: TOY_SAMPLER.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.step_coefficients.len() != self.total_steps {
            return Err(invalid!(
                "sampler has {} coefficients for {} steps",
                self.step_coefficients.len(),
                self.total_steps
            ));
        }
        ensure_finite(&self.step_coefficients, "step coefficients")
    }
}

pub type ResidualTransform<'a> = dyn Fn(&ResidualStack) -> Result<ResidualStack> + Sync + 'a;

/// How the decoder's skip inputs are replaced.
#[derive(Clone, Copy)]
pub enum ResidualOverride<'a> {
    /// Use this stack instead of the encoder's residuals.
    Replace(&'a ResidualStack),
    /// Map the encoder's own residuals to the stack the decoder consumes.
    Transform(&'a ResidualTransform<'a>),
}

impl ResidualOverride<'_> {
    pub fn resolve(&self, own: &ResidualStack) -> Result<ResidualStack> {
        let out = match self {
            ResidualOverride::Replace(r) => (*r).clone(),
            ResidualOverride::Transform(f) => f(own)?,
        };
        if out.shapes() != own.shapes() {
            return Err(invalid!(
                "residual override shapes {:?} differ from the backend's {:?}",
                out.shapes(),
                own.shapes()
            ));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Default)]
pub struct Hooks<'a> {
    pub attention: Option<&'a dyn AttentionInterceptor>,
    pub residuals: Option<ResidualOverride<'a>>,
    /// Return the (post-interception) attention maps in the output.
    pub capture_attention: bool,
}

impl<'a> Hooks<'a> {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub predicted_noise: Field,
    /// The encoder-side residual taps.
    pub residuals: ResidualStack,
    pub attention_maps: Option<Vec<AttentionMap>>,
}

pub trait DenoiserBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// A string from which the backend can be rebuilt (recorded in manifests).
    fn spec_string(&self) -> String {
        self.descriptor().name.clone()
    }

    /// Predicts `ε(z_t, t, C)` for the latent at timestep `t ≥ 1`.
    fn predict_noise(
        &self,
        z: &LatentGrid,
        t: usize,
        cond: &ConditioningSequence,
        hooks: &Hooks<'_>,
    ) -> Result<DenoiseOutput>;

    /// One deterministic sampler update from timestep `t` to `t − 1`.
    fn scheduler_step(
        &self,
        z: &LatentGrid,
        noise: &Field,
        t: usize,
        params: &SchedulerParams,
    ) -> Result<LatentGrid> {
        scheduler_step(z, noise, t, params)
    }

    /// Maps a fully denoised latent to an RGB image in `[0, 1]`.
    fn decode(&self, z0: &LatentGrid) -> Result<RgbImage>;
}

/// The toy sampler update shared by all bundled backends.
pub fn scheduler_step(z: &LatentGrid, noise: &Field, t: usize, params: &SchedulerParams) -> Result<LatentGrid> {
    params.validate()?;
    if params.sampler_name != TOY_SAMPLER {
        return Err(invalid!("unsupported sampler {:?}", params.sampler_name));
    }
    if t == 0 || t > params.total_steps {
        return Err(invalid!(
            "timestep {t} outside 1..={}",
            params.total_steps
        ));
    }
    if z.timestep() != t {
        return Err(invalid!("latent is at timestep {}, not {t}", z.timestep()));
    }
    if noise.dim() != z.values().dim() {
        return Err(invalid!(
            "noise shape {:?} differs from latent {:?}",
            noise.dim(),
            z.values().dim()
        ));
    }
    let gamma = params.step_coefficients[t - 1];
    let next = z.values() - &(noise * gamma);
    LatentGrid::new(next, t - 1, z.branch())
}
