//! Two-stage generation: an SD-only layout pass that yields the head mask,
//! then lockstep SD/PFD denoising fused through the cross-attention
//! constraint, latent merge and residual merge.

mod ablation;
pub mod manifest;
mod segmentor;

pub use ablation::{ablation_sweep, rows_to_csv, AblationAxes, AblationCell, AblationRow, ToggleSet};
pub use manifest::{BackendNames, MaskProvenance, RunManifest, StepRecord, SubjectInfo};
pub use segmentor::{FixedSegmentor, HeadSegmentor, LuminanceSegmentor, NullSegmentor};

use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionInterceptor, CacInterceptor, ConditioningSequence, InterceptorChain};
use crate::backend::{
    sample_noise, DenoiserBackend, Hooks, ResidualOverride, SchedulerParams, ToyTextEncoder,
};
use crate::error::{invalid, Error, Result};
use crate::filters::{kernel_size_from_mask, FilterMode, GaussianKernel, KernelSchedule};
use crate::image::RgbImage;
use crate::masks::{HeadMask, MaskPyramid, MaskSource};
use crate::merge::{latent_merge, residual_merge, BranchTag, LatentGrid, ResidualStack};
use crate::tensor::{sha256_hex, to_f32le, Field};

pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub enable_cac: bool,
    pub enable_latent_merge: bool,
    pub enable_residual_merge: bool,
    pub filter_mode: FilterMode,
    pub kernel_schedule: KernelSchedule,
    /// Denoising steps completed before the identity token activates.
    pub injection_step: usize,
    pub seed: u64,
    pub total_steps: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self::with_steps(DEFAULT_STEPS)
    }
}

impl MergeConfig {
    /// All mechanisms on, LowHigh filtering, 2.5 → 0.5 schedule, immediate
    /// injection.
    pub fn with_steps(total_steps: usize) -> Self {
        Self {
            enable_cac: true,
            enable_latent_merge: true,
            enable_residual_merge: true,
            filter_mode: FilterMode::LowHigh,
            kernel_schedule: KernelSchedule::decremental_default(total_steps),
            injection_step: 0,
            seed: 0,
            total_steps,
        }
    }

    pub fn with_toggles(mut self, cac: bool, lm: bool, rm: bool) -> Self {
        self.enable_cac = cac;
        self.enable_latent_merge = lm;
        self.enable_residual_merge = rm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(invalid!("total_steps must be at least 1"));
        }
        if self.injection_step > self.total_steps {
            return Err(invalid!(
                "injection_step {} exceeds total_steps {}",
                self.injection_step,
                self.total_steps
            ));
        }
        if self.kernel_schedule.total_steps != self.total_steps {
            return Err(invalid!(
                "kernel schedule covers {} steps, run has {}",
                self.kernel_schedule.total_steps,
                self.total_steps
            ));
        }
        self.kernel_schedule.validate()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)[..16].to_string()
    }
}

/// PFD conditioning whose class-word row becomes the identity token once
/// injection starts.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedConditioning {
    text: ConditioningSequence,
    slot: usize,
    identity_row: Array1<f64>,
}

impl PersonalizedConditioning {
    pub fn new(text: ConditioningSequence, slot: usize, identity_row: Vec<f64>) -> Result<Self> {
        if slot >= text.n_tokens() {
            return Err(invalid!("identity slot {slot} out of range for {} tokens", text.n_tokens()));
        }
        if identity_row.len() != text.dim() {
            return Err(invalid!(
                "identity embedding has dim {}, tokens have {}",
                identity_row.len(),
                text.dim()
            ));
        }
        Ok(Self {
            text: ConditioningSequence::new(text.tokens().clone(), None, text.descriptor())?,
            slot,
            identity_row: Array1::from(identity_row),
        })
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn text_only(&self) -> &ConditioningSequence {
        &self.text
    }

    pub fn with_identity(&self) -> ConditioningSequence {
        let mut tokens = self.text.tokens().clone();
        tokens.row_mut(self.slot).assign(&self.identity_row);
        ConditioningSequence::new(tokens, Some(self.slot), self.text.descriptor())
            .expect("validated at construction")
    }

    pub fn is_active(step: usize, injection_step: usize) -> bool {
        step >= injection_step
    }

    pub fn at_step(&self, step: usize, injection_step: usize) -> ConditioningSequence {
        if Self::is_active(step, injection_step) {
            self.with_identity()
        } else {
            self.text.clone()
        }
    }
}

/// Turns prompts into conditioning for both branches.
pub trait PromptEncoder: Send + Sync {
    fn encode(&self, prompt: &str) -> Result<ConditioningSequence>;
    fn personalize(&self, prompt: &str, subject: &SubjectInfo) -> Result<PersonalizedConditioning>;
}

impl PromptEncoder for ToyTextEncoder {
    fn encode(&self, prompt: &str) -> Result<ConditioningSequence> {
        ToyTextEncoder::encode(self, prompt)
    }

    fn personalize(&self, prompt: &str, subject: &SubjectInfo) -> Result<PersonalizedConditioning> {
        let slot = self.find_word(prompt, &subject.class_word).ok_or_else(|| {
            invalid!(
                "class word {:?} does not appear in the prompt {prompt:?}",
                subject.class_word
            )
        })?;
        let class = self.embed_token(&subject.class_word.to_lowercase());
        let id = self.identity_embedding(&subject.descriptor);
        let fused = class
            .iter()
            .zip(&id)
            .map(|(c, i)| (c + i) * std::f64::consts::FRAC_1_SQRT_2)
            .collect();
        PersonalizedConditioning::new(self.encode(prompt)?, slot, fused)
    }
}

/// Where the head mask comes from when the segmentor is not authoritative.
#[derive(Debug, Clone, Default)]
pub struct MaskPolicy {
    /// Skip segmentation and use this mask.
    pub user_mask: Option<HeadMask>,
    /// Used only when the segmentor finds no head.
    pub fallback: Option<HeadMask>,
    /// Recorded in the manifest for replay.
    pub user_mask_path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub image: RgbImage,
    pub mask: HeadMask,
    pub provenance: MaskProvenance,
}

/// Runs `backend` alone from `z_t` (at timestep `T`) down to timestep 0.
pub fn rollout(
    backend: &dyn DenoiserBackend,
    z_t: &LatentGrid,
    params: &SchedulerParams,
    cond_at: &dyn Fn(usize) -> ConditioningSequence,
) -> Result<LatentGrid> {
    let total = params.total_steps;
    if z_t.timestep() != total {
        return Err(invalid!("initial latent at timestep {}, expected {total}", z_t.timestep()));
    }
    let mut z = z_t.clone();
    for s in 0..total {
        let t = total - s;
        let cond = cond_at(s);
        let out = backend.predict_noise(&z, t, &cond, &Hooks::none())?;
        z = backend.scheduler_step(&z, &out.predicted_noise, t, params)?;
    }
    Ok(z)
}

fn to_image_resolution(mask: &HeadMask, image: &RgbImage) -> Result<HeadMask> {
    let res = (image.height(), image.width());
    if mask.resolution() == res {
        Ok(mask.clone())
    } else {
        mask.resize(res)
    }
}

/// SD-only layout pass and head segmentation.
pub fn stage1_layout(
    sd: &dyn DenoiserBackend,
    prompt_cond: &ConditioningSequence,
    z_t: &LatentGrid,
    params: &SchedulerParams,
    segmentor: &dyn HeadSegmentor,
    policy: &MaskPolicy,
) -> Result<Stage1Output> {
    let z0 = rollout(sd, &z_t.clone().with_branch(BranchTag::Sd), params, &|_| prompt_cond.clone())?;
    let image = sd.decode(&z0)?;
    let provenance = |mask: &HeadMask, segmentor_name: Option<String>, fallback_used: bool, path: Option<String>| {
        MaskProvenance {
            source: mask.source(),
            segmentor: segmentor_name,
            fallback_used,
            path,
            resolution: mask.resolution(),
            checksum: mask.checksum(),
        }
    };
    if let Some(user) = &policy.user_mask {
        let mask = to_image_resolution(user, &image)?;
        let prov = provenance(&mask, None, false, policy.user_mask_path.clone());
        return Ok(Stage1Output {
            image,
            mask,
            provenance: prov,
        });
    }
    match segmentor.segment(&image)? {
        Some(mask) => {
            if mask.resolution() != (image.height(), image.width()) {
                return Err(invalid!(
                    "segmentor returned a {:?} mask for a {}x{} image",
                    mask.resolution(),
                    image.height(),
                    image.width()
                ));
            }
            let prov = provenance(&mask, Some(segmentor.name()), false, None);
            Ok(Stage1Output {
                image,
                mask,
                provenance: prov,
            })
        }
        None => match &policy.fallback {
            Some(fb) => {
                let mask = to_image_resolution(fb, &image)?;
                let prov = provenance(&mask, Some(segmentor.name()), true, policy.user_mask_path.clone());
                Ok(Stage1Output {
                    image,
                    mask,
                    provenance: prov,
                })
            }
            None => Err(Error::NoHeadFound {
                image: Box::new(image),
            }),
        },
    }
}

/// An extra subject gated by its own identity token and head mask.
#[derive(Debug, Clone)]
pub struct SubjectGate {
    pub identity_index: usize,
    pub mask: HeadMask,
}

pub struct Stage2Inputs<'a> {
    pub sd: &'a dyn DenoiserBackend,
    pub pfd: &'a dyn DenoiserBackend,
    pub cond_sd: &'a ConditioningSequence,
    pub cond_pfd: &'a PersonalizedConditioning,
    /// Full-resolution head mask from stage 1.
    pub head_mask: &'a HeadMask,
    pub extra_subjects: &'a [SubjectGate],
    pub z_t: &'a LatentGrid,
    pub params: &'a SchedulerParams,
}

/// Per-step tensors, kept only when capture is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub timestep: usize,
    pub sd_noise: Field,
    pub pfd_noise: Field,
    pub sd_residuals: ResidualStack,
    /// Residuals the PFD decoder consumed, when residual merge is on.
    pub merged_residuals: Option<ResidualStack>,
    /// Branch latents after the scheduler step, before latent merge.
    pub z_sd: Field,
    pub z_pfd: Field,
    pub z_merged: Option<Field>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub final_latent: LatentGrid,
    pub image: RgbImage,
    pub trace: Vec<StepTrace>,
}

struct Stage2Setup {
    latent_mask: HeadMask,
    pyramid: MaskPyramid,
    cac: Vec<CacInterceptor>,
    area: f64,
}

fn prepare_masks(inputs: &Stage2Inputs<'_>) -> Result<Stage2Setup> {
    let desc = inputs.pfd.descriptor();
    let base_res = inputs.head_mask.resolution();
    let mut all = vec![inputs.head_mask.clone()];
    for g in inputs.extra_subjects {
        all.push(if g.mask.resolution() == base_res {
            g.mask.clone()
        } else {
            g.mask.resize(base_res)?
        });
    }
    let union = if all.len() == 1 {
        all[0].clone()
    } else {
        HeadMask::union(&all)?
    };
    let mut resolutions = desc.residual_resolutions();
    resolutions.extend(desc.attention_layers.iter().map(|a| a.resolution));
    resolutions.push(desc.latent_spatial());
    let pyramid = MaskPyramid::build(union, &resolutions)?;
    let latent_mask = pyramid.level_or_resize(desc.latent_spatial())?.into_owned();

    let mut gates = vec![(inputs.cond_pfd.slot(), inputs.head_mask.clone())];
    gates.extend(inputs.extra_subjects.iter().map(|g| (g.identity_index, g.mask.clone())));
    let mut cac = Vec::with_capacity(gates.len());
    for (id, mask) in gates {
        let attn_res: Vec<_> = desc.attention_layers.iter().map(|a| a.resolution).collect();
        cac.push(CacInterceptor::new(MaskPyramid::build(mask, &attn_res)?, Some(id)));
    }
    Ok(Stage2Setup {
        area: latent_mask.area(),
        latent_mask,
        pyramid,
        cac,
    })
}

/// Lockstep fused denoising. Step records are appended to `manifest`; on
/// failure the manifest is returned inside [`Error::RunAborted`].
pub fn stage2_fused_generate(
    inputs: &Stage2Inputs<'_>,
    config: &MergeConfig,
    manifest: &mut RunManifest,
    capture: bool,
) -> Result<Stage2Output> {
    let mut step_cursor = 0;
    let result = stage2_inner(inputs, config, manifest, capture, &mut step_cursor);
    result.map_err(|e| {
        manifest.failed_step = Some(step_cursor);
        Error::RunAborted {
            step: step_cursor,
            manifest: Box::new(manifest.clone()),
            source: Box::new(e),
        }
    })
}

fn stage2_inner(
    inputs: &Stage2Inputs<'_>,
    config: &MergeConfig,
    manifest: &mut RunManifest,
    capture: bool,
    cursor: &mut usize,
) -> Result<Stage2Output> {
    config.validate()?;
    let (sd, pfd, params) = (inputs.sd, inputs.pfd, inputs.params);
    if !sd.descriptor().compatible_with(pfd.descriptor()) {
        return Err(invalid!(
            "backends {} and {} are not shape-compatible",
            sd.descriptor().name,
            pfd.descriptor().name
        ));
    }
    let total = config.total_steps;
    if params.total_steps != total || inputs.z_t.timestep() != total {
        return Err(invalid!(
            "run has {total} steps but the sampler has {} and z_T is at timestep {}",
            params.total_steps,
            inputs.z_t.timestep()
        ));
    }
    let setup = prepare_masks(inputs)?;
    let cac_stages: Vec<&dyn AttentionInterceptor> =
        setup.cac.iter().map(|c| c as &dyn AttentionInterceptor).collect();
    let cac = InterceptorChain::new(cac_stages);

    let mut kernels: HashMap<usize, GaussianKernel> = HashMap::new();
    let mut z_sd = inputs.z_t.clone().with_branch(BranchTag::Sd);
    let mut z_pfd = inputs.z_t.clone().with_branch(BranchTag::Pfd);
    let mut trace = Vec::new();

    for s in 0..total {
        *cursor = s;
        let t = total - s;
        let active = PersonalizedConditioning::is_active(s, config.injection_step);
        let cond_pfd = inputs.cond_pfd.at_step(s, config.injection_step);
        let alpha = config.kernel_schedule.eval(s)?;
        let size = kernel_size_from_mask(setup.area, alpha)?;
        if let std::collections::hash_map::Entry::Vacant(e) = kernels.entry(size) {
            e.insert(GaussianKernel::new(size)?);
        }
        let kernel = &kernels[&size];

        let sd_out = sd.predict_noise(&z_sd, t, inputs.cond_sd, &Hooks::none())?;

        let consumed: Mutex<Option<ResidualStack>> = Mutex::new(None);
        let merge = |own: &ResidualStack| -> Result<ResidualStack> {
            let merged = residual_merge(own, &sd_out.residuals, &setup.pyramid, kernel, config.filter_mode)?;
            if capture {
                *consumed.lock().expect("capture poisoned") = Some(merged.clone());
            }
            Ok(merged)
        };
        let hooks = Hooks {
            attention: (config.enable_cac && active).then_some(&cac as &dyn AttentionInterceptor),
            residuals: config
                .enable_residual_merge
                .then_some(ResidualOverride::Transform(&merge)),
            capture_attention: false,
        };
        let pfd_out = pfd.predict_noise(&z_pfd, t, &cond_pfd, &hooks)?;

        let next_sd = sd.scheduler_step(&z_sd, &sd_out.predicted_noise, t, params)?;
        let next_pfd = pfd.scheduler_step(&z_pfd, &pfd_out.predicted_noise, t, params)?;
        let merged = if config.enable_latent_merge {
            Some(latent_merge(&next_pfd, &next_sd, &setup.latent_mask)?)
        } else {
            None
        };
        if capture {
            trace.push(StepTrace {
                step: s,
                timestep: t,
                sd_noise: sd_out.predicted_noise.clone(),
                pfd_noise: pfd_out.predicted_noise.clone(),
                sd_residuals: sd_out.residuals.clone(),
                merged_residuals: consumed.into_inner().expect("capture poisoned"),
                z_sd: next_sd.values().clone(),
                z_pfd: next_pfd.values().clone(),
                z_merged: merged.as_ref().map(|m| m.values().clone()),
            });
        }
        match merged {
            Some(m) => {
                z_sd = m.clone().with_branch(BranchTag::Sd);
                z_pfd = m.with_branch(BranchTag::Pfd);
            }
            None => {
                z_sd = next_sd;
                z_pfd = next_pfd;
            }
        }
        manifest.steps.push(StepRecord {
            step: s,
            timestep: t,
            alpha,
            kernel_size: size,
            identity_active: active,
        });
    }
    *cursor = total;
    let final_latent = if config.enable_latent_merge {
        z_pfd.with_branch(BranchTag::Merged)
    } else {
        z_pfd
    };
    let image = pfd.decode(&final_latent)?;
    Ok(Stage2Output {
        final_latent,
        image,
        trace,
    })
}

pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub subject: SubjectInfo,
    pub config: MergeConfig,
    pub sd: &'a dyn DenoiserBackend,
    pub pfd: &'a dyn DenoiserBackend,
    pub encoder: &'a dyn PromptEncoder,
    pub segmentor: &'a dyn HeadSegmentor,
    pub mask_policy: MaskPolicy,
    pub capture: bool,
}

impl GenerateRequest<'_> {
    pub fn with_config(&self, config: MergeConfig) -> GenerateRequest<'_> {
        GenerateRequest {
            prompt: self.prompt,
            subject: self.subject.clone(),
            config,
            sd: self.sd,
            pfd: self.pfd,
            encoder: self.encoder,
            segmentor: self.segmentor,
            mask_policy: self.mask_policy.clone(),
            capture: self.capture,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub image: RgbImage,
    pub final_latent: LatentGrid,
    pub manifest: RunManifest,
    pub layout_image: RgbImage,
    pub head_mask: HeadMask,
    pub z_t: Field,
    pub trace: Vec<StepTrace>,
}

pub fn latent_checksum(values: &Field) -> String {
    sha256_hex(&to_f32le(values.iter()))
}

/// Seeded `z_T` at timestep `T`.
pub fn initial_latent(shape: (usize, usize, usize), seed: u64, total_steps: usize) -> Result<LatentGrid> {
    LatentGrid::new(sample_noise(shape, seed), total_steps, BranchTag::Sd)
}

/// Full two-stage run sharing one seeded `z_T`.
pub fn generate(req: &GenerateRequest<'_>) -> Result<GenerationResult> {
    let config = &req.config;
    config.validate()?;
    let mut manifest = RunManifest::new(
        config.clone(),
        req.prompt,
        req.subject.clone(),
        BackendNames {
            sd: req.sd.spec_string(),
            pfd: req.pfd.spec_string(),
        },
    );
    let params = SchedulerParams::toy(config.total_steps)?;
    let z_t = initial_latent(req.sd.descriptor().latent_shape, config.seed, config.total_steps)?;
    manifest.checksums.insert("z_T".into(), latent_checksum(z_t.values()));

    let cond_sd = req.encoder.encode(req.prompt)?;
    let cond_pfd = req.encoder.personalize(req.prompt, &req.subject)?;
    let stage1 = stage1_layout(req.sd, &cond_sd, &z_t, &params, req.segmentor, &req.mask_policy)?;
    manifest.mask_provenance = Some(stage1.provenance.clone());
    manifest.checksums.insert("layout_image".into(), stage1.image.checksum());
    manifest.checksums.insert("head_mask".into(), stage1.mask.checksum());

    let inputs = Stage2Inputs {
        sd: req.sd,
        pfd: req.pfd,
        cond_sd: &cond_sd,
        cond_pfd: &cond_pfd,
        head_mask: &stage1.mask,
        extra_subjects: &[],
        z_t: &z_t,
        params: &params,
    };
    let out = stage2_fused_generate(&inputs, config, &mut manifest, req.capture)?;
    manifest
        .checksums
        .insert("final_latent".into(), latent_checksum(out.final_latent.values()));
    manifest.checksums.insert("image".into(), out.image.checksum());
    Ok(GenerationResult {
        image: out.image,
        final_latent: out.final_latent,
        manifest,
        layout_image: stage1.image,
        head_mask: stage1.mask,
        z_t: z_t.into_values(),
        trace: out.trace,
    })
}

/// A user mask loaded from disk, tagged for provenance.
pub fn user_mask_from_values(values: Array2<f64>) -> Result<HeadMask> {
    HeadMask::new(values, MaskSource::UserSupplied)
}
