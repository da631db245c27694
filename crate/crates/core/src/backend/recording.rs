use std::sync::Mutex;

use super::{BackendDescriptor, DenoiseOutput, DenoiserBackend, Hooks, ResidualOverride, SchedulerParams};
use crate::attention::ConditioningSequence;
use crate::error::Result;
use crate::image::RgbImage;
use crate::merge::{LatentGrid, ResidualStack};
use crate::tensor::{sha256_hex, to_f32le, Field};

/// One `predict_noise` call as seen by a [`RecordingBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub timestep: usize,
    pub identity_index: Option<usize>,
    pub conditioning_checksum: String,
    pub attention_hooked: bool,
    pub encoder_residuals: ResidualStack,
    /// What the decoder actually consumed, when an override was installed.
    pub decoder_residuals: Option<ResidualStack>,
}

/// Wraps a backend and logs every denoiser call.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<CallRecord>>,
}

impl<B: DenoiserBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().expect("log poisoned").clone()
    }

    pub fn clear(&self) {
        self.log.lock().expect("log poisoned").clear();
    }
}

impl<B: DenoiserBackend> DenoiserBackend for RecordingBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn spec_string(&self) -> String {
        self.inner.spec_string()
    }

    fn predict_noise(
        &self,
        z: &LatentGrid,
        t: usize,
        cond: &ConditioningSequence,
        hooks: &Hooks<'_>,
    ) -> Result<DenoiseOutput> {
        let consumed: Mutex<Option<ResidualStack>> = Mutex::new(None);
        let out = match hooks.residuals {
            Some(ov) => {
                let tap = |own: &ResidualStack| -> Result<ResidualStack> {
                    let r = ov.resolve(own)?;
                    *consumed.lock().expect("tap poisoned") = Some(r.clone());
                    Ok(r)
                };
                let wrapped = Hooks {
                    residuals: Some(ResidualOverride::Transform(&tap)),
                    ..*hooks
                };
                self.inner.predict_noise(z, t, cond, &wrapped)?
            }
            None => self.inner.predict_noise(z, t, cond, hooks)?,
        };
        self.log.lock().expect("log poisoned").push(CallRecord {
            timestep: t,
            identity_index: cond.identity_index(),
            conditioning_checksum: sha256_hex(&to_f32le(cond.tokens().iter())),
            attention_hooked: hooks.attention.is_some(),
            encoder_residuals: out.residuals.clone(),
            decoder_residuals: consumed.into_inner().expect("tap poisoned"),
        });
        Ok(out)
    }

    fn scheduler_step(
        &self,
        z: &LatentGrid,
        noise: &Field,
        t: usize,
        params: &SchedulerParams,
    ) -> Result<LatentGrid> {
        self.inner.scheduler_step(z, noise, t, params)
    }

    fn decode(&self, z0: &LatentGrid) -> Result<RgbImage> {
        self.inner.decode(z0)
    }
}
