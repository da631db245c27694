//! A small analytic denoiser with genuine cross-attention and skip
//! connections, cheap enough to run full 50-step trajectories in tests.
//!
//! `ε(z, t, C) = W_t·z + U·pool(C) + Σ_l up(D_l·skip_l) + β·Σ_a up(A_a·V_a)`
//!
//! where `W_t = W₀ + sin(0.37·t)·W₁`, the encoder taps are
//! `r_l = (1 + 0.25·sin(0.37·t))·E_l·down(z)`, and each attention layer
//! computes `A = softmax(Q·Kᵀ/√d)` from the pooled latent and the
//! conditioning tokens.

use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    AttentionLayerSpec, BackendDescriptor, DenoiseOutput, DenoiserBackend, Hooks,
};
use crate::attention::{AttentionLayerInfo, AttentionMap, ConditioningSequence};
use crate::error::{invalid, Error, Result};
use crate::image::RgbImage;
use crate::merge::{BranchTag, LatentGrid, ResidualLayer, ResidualStack};
use crate::tensor::{resample_field, Field};

const KEY_DIM: usize = 8;
const ATTENTION_GAIN: f64 = 0.5;
const DECODE_UPSCALE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyBackendSpec {
    /// `(C, H, W)`.
    pub latent_shape: (usize, usize, usize),
    /// Number of skip-connection layers `L`.
    pub layers: usize,
    pub n_tokens: usize,
    pub token_dim: usize,
    pub seed: u64,
}

impl Default for ToyBackendSpec {
    fn default() -> Self {
        Self {
            latent_shape: (4, 8, 8),
            layers: 2,
            n_tokens: 16,
            token_dim: 16,
            seed: 1,
        }
    }
}

impl ToyBackendSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// `toy[:key=value,...]` with keys `seed`, `c`, `h`, `w`, `layers`,
/// `tokens`, `dim`.
impl FromStr for ToyBackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if kind != "toy" {
            return Err(invalid!("unknown backend {kind:?}; only `toy` is bundled"));
        }
        let mut spec = ToyBackendSpec::default();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid!("backend option {kv:?} is not key=value"))?;
            let num = || -> Result<u64> {
                v.parse::<u64>()
                    .map_err(|_| invalid!("backend option {k}={v:?} is not an integer"))
            };
            match k {
                "seed" => spec.seed = num()?,
                "c" => spec.latent_shape.0 = num()? as usize,
                "h" => spec.latent_shape.1 = num()? as usize,
                "w" => spec.latent_shape.2 = num()? as usize,
                "layers" => spec.layers = num()? as usize,
                "tokens" => spec.n_tokens = num()? as usize,
                "dim" => spec.token_dim = num()? as usize,
                _ => return Err(invalid!("unknown backend option {k:?}")),
            }
        }
        Ok(spec)
    }
}

impl std::fmt::Display for ToyBackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (c, h, w) = self.latent_shape;
        write!(
            f,
            "toy:seed={},c={c},h={h},w={w},layers={},tokens={},dim={}",
            self.seed, self.layers, self.n_tokens, self.token_dim
        )
    }
}

#[derive(Debug, Clone)]
struct AttentionWeights {
    resolution: (usize, usize),
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    spec: ToyBackendSpec,
    descriptor: BackendDescriptor,
    w0: Array2<f64>,
    w1: Array2<f64>,
    u: Array2<f64>,
    enc: Vec<Array2<f64>>,
    dec: Vec<Array2<f64>>,
    attn: Vec<AttentionWeights>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

/// `out[o, y, x] = Σ_i m[o, i] · f[i, y, x]`.
fn mix_channels(m: &Array2<f64>, f: &Field) -> Field {
    let (c, h, w) = f.dim();
    let flat = f.view().into_shape_with_order((c, h * w)).expect("contiguous field");
    m.dot(&flat)
        .into_shape_with_order((m.nrows(), h, w))
        .expect("shape preserved")
}

impl ToyBackend {
    pub fn new(spec: ToyBackendSpec) -> Result<Self> {
        let (c, h, w) = spec.latent_shape;
        if c == 0 || h == 0 || w == 0 || spec.layers == 0 || spec.n_tokens == 0 || spec.token_dim == 0 {
            return Err(invalid!("toy backend spec must be positive: {spec}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let cs = 1.0 / (c as f64).sqrt();
        let w0 = gaussian_matrix(&mut rng, c, c, 0.3 * cs);
        let w1 = gaussian_matrix(&mut rng, c, c, 0.2 * cs);
        let u = gaussian_matrix(&mut rng, c, spec.token_dim, 0.3 / (spec.token_dim as f64).sqrt());

        let mut residual_shapes = Vec::with_capacity(spec.layers);
        let mut enc = Vec::with_capacity(spec.layers);
        let mut dec = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let cl = c + l;
            let shape = (cl, (h >> l).max(1), (w >> l).max(1));
            residual_shapes.push(shape);
            enc.push(gaussian_matrix(&mut rng, cl, c, 0.5 * cs));
            dec.push(gaussian_matrix(&mut rng, c, cl, 0.5 / (cl as f64).sqrt()));
        }

        let mut resolutions: Vec<(usize, usize)> = residual_shapes.iter().map(|&(_, h, w)| (h, w)).collect();
        resolutions.dedup();
        let attn: Vec<AttentionWeights> = resolutions
            .iter()
            .map(|&resolution| AttentionWeights {
                resolution,
                wq: gaussian_matrix(&mut rng, KEY_DIM, c, 2.0 * cs),
                wk: gaussian_matrix(&mut rng, KEY_DIM, spec.token_dim, 2.0),
                wv: gaussian_matrix(&mut rng, c, spec.token_dim, 1.0),
            })
            .collect();

        let descriptor = BackendDescriptor {
            name: spec.to_string(),
            latent_shape: spec.latent_shape,
            token_dim: spec.token_dim,
            attention_layers: attn
                .iter()
                .map(|a| AttentionLayerSpec {
                    resolution: a.resolution,
                    n_tokens: spec.n_tokens,
                })
                .collect(),
            residual_layer_shapes: residual_shapes,
            supports_identity_token: true,
        };
        descriptor.validate()?;
        Ok(Self {
            spec,
            descriptor,
            w0,
            w1,
            u,
            enc,
            dec,
            attn,
        })
    }

    pub fn spec(&self) -> ToyBackendSpec {
        self.spec
    }

    fn time_factor(t: usize) -> f64 {
        (0.37 * t as f64).sin()
    }

    /// Encoder-side skip taps; a deterministic function of `(z, t)`.
    fn encoder_residuals(&self, z: &Field, t: usize, branch: BranchTag) -> Result<ResidualStack> {
        let gain = 1.0 + 0.25 * Self::time_factor(t);
        let layers = self
            .descriptor
            .residual_layer_shapes
            .iter()
            .zip(&self.enc)
            .enumerate()
            .map(|(index, (&(_, h, w), e))| {
                let down = resample_field(z, (h, w))?;
                Ok(ResidualLayer {
                    index,
                    values: mix_channels(e, &down) * gain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ResidualStack { layers, branch })
    }

    fn attention_term(
        &self,
        z: &Field,
        cond: &ConditioningSequence,
        hooks: &Hooks<'_>,
        captured: &mut Vec<AttentionMap>,
    ) -> Result<Field> {
        let (c, h, w) = z.dim();
        let mut total = Field::zeros((c, h, w));
        let scale = 1.0 / (KEY_DIM as f64).sqrt();
        let tokens = cond.tokens();
        for (layer_index, a) in self.attn.iter().enumerate() {
            let (ah, aw) = a.resolution;
            let pooled = resample_field(z, a.resolution)?;
            let positions = pooled
                .view()
                .into_shape_with_order((c, ah * aw))
                .expect("contiguous field");
            let q = a.wq.dot(&positions); // d × P
            let k = a.wk.dot(&tokens.t()); // d × N
            let mut logits = q.t().dot(&k) * scale; // P × N
            for mut row in logits.rows_mut() {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - mx).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let mut map = AttentionMap::new(logits, a.resolution)?;
            if let Some(hook) = hooks.attention {
                let info = AttentionLayerInfo {
                    layer_index,
                    spatial_shape: a.resolution,
                    n_tokens: cond.n_tokens(),
                };
                map = hook.intercept(&info, map)?;
                if map.weights().dim() != (ah * aw, cond.n_tokens()) {
                    return Err(invalid!("attention interceptor changed the map shape"));
                }
            }
            let values = a.wv.dot(&tokens.t()); // C × N
            let attended = values.dot(&map.weights().t()); // C × P
            let attended = attended
                .into_shape_with_order((c, ah, aw))
                .expect("shape preserved");
            total = total + resample_field(&attended, (h, w))? * ATTENTION_GAIN;
            if hooks.capture_attention {
                captured.push(map);
            }
        }
        Ok(total)
    }
}

impl DenoiserBackend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn spec_string(&self) -> String {
        self.spec.to_string()
    }

    fn predict_noise(
        &self,
        z: &LatentGrid,
        t: usize,
        cond: &ConditioningSequence,
        hooks: &Hooks<'_>,
    ) -> Result<DenoiseOutput> {
        if z.shape() != self.descriptor.latent_shape {
            return Err(invalid!(
                "latent shape {:?} does not match backend {:?}",
                z.shape(),
                self.descriptor.latent_shape
            ));
        }
        if t == 0 || z.timestep() != t {
            return Err(invalid!(
                "predict_noise needs a latent at timestep t >= 1 (got t={t}, latent at {})",
                z.timestep()
            ));
        }
        if cond.n_tokens() != self.spec.n_tokens || cond.dim() != self.spec.token_dim {
            return Err(invalid!(
                "conditioning is {}x{}, backend expects {}x{}",
                cond.n_tokens(),
                cond.dim(),
                self.spec.n_tokens,
                self.spec.token_dim
            ));
        }
        let zv = z.values();
        let tf = Self::time_factor(t);
        let wt = &self.w0 + &(&self.w1 * tf);
        let mut eps = mix_channels(&wt, zv);

        let bias = self.u.dot(&ndarray::Array1::from(cond.pooled()));
        for (mut ch, b) in eps.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            ch += *b;
        }

        let own = self.encoder_residuals(zv, t, z.branch())?;
        let skips = match &hooks.residuals {
            Some(ov) => ov.resolve(&own)?,
            None => own.clone(),
        };
        let (_, h, w) = self.descriptor.latent_shape;
        for (layer, d) in skips.layers.iter().zip(&self.dec) {
            eps = eps + resample_field(&mix_channels(d, &layer.values), (h, w))?;
        }

        let mut captured = Vec::new();
        eps = eps + self.attention_term(zv, cond, hooks, &mut captured)?;

        if eps.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("toy backend produced non-finite noise"));
        }
        Ok(DenoiseOutput {
            predicted_noise: eps,
            residuals: own,
            attention_maps: hooks.capture_attention.then_some(captured),
        })
    }

    fn decode(&self, z0: &LatentGrid) -> Result<RgbImage> {
        if z0.timestep() != 0 {
            return Err(invalid!("decode needs a latent at timestep 0, got {}", z0.timestep()));
        }
        let (c, h, w) = z0.shape();
        let (ih, iw) = (h * DECODE_UPSCALE, w * DECODE_UPSCALE);
        let zv = z0.values();
        let mut data = Vec::with_capacity(ih * iw * 3);
        for y in 0..ih {
            for x in 0..iw {
                for k in 0..3 {
                    let v = zv[[k % c, y / DECODE_UPSCALE, x / DECODE_UPSCALE]];
                    data.push((0.5 + 0.5 * v).clamp(0.0, 1.0));
                }
            }
        }
        RgbImage::new(ih, iw, data)
    }
}

/// Standard-normal `z_T` drawn from a seeded ChaCha stream.
pub fn sample_noise(shape: (usize, usize, usize), seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| StandardNormal.sample(&mut rng))
}
