use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MergeConfig;
use crate::error::{Error, Result};
use crate::masks::MaskSource;

pub const MANIFEST_SCHEMA: u32 = 1;

pub const INJECTION_CONVENTION: &str =
    "identity token active at step s (s = 0..T-1, timestep T-s) iff s >= injection_step";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectInfo {
    pub class_word: String,
    pub descriptor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendNames {
    pub sd: String,
    pub pfd: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskProvenance {
    pub source: MaskSource,
    /// Segmentor name, or `None` for a user-supplied mask.
    pub segmentor: Option<String>,
    /// True when the segmentor found nothing and the fallback mask was used.
    pub fallback_used: bool,
    pub path: Option<String>,
    pub resolution: (usize, usize),
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub timestep: usize,
    pub alpha: f64,
    pub kernel_size: usize,
    pub identity_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub config: MergeConfig,
    pub prompt: String,
    pub subject: SubjectInfo,
    pub backends: BackendNames,
    pub mask_provenance: Option<MaskProvenance>,
    pub injection_convention: String,
    pub steps: Vec<StepRecord>,
    pub outputs: BTreeMap<String, String>,
    pub checksums: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(config: MergeConfig, prompt: &str, subject: SubjectInfo, backends: BackendNames) -> Self {
        Self {
            schema: MANIFEST_SCHEMA,
            config,
            prompt: prompt.to_string(),
            subject,
            backends,
            mask_provenance: None,
            injection_convention: INJECTION_CONVENTION.to_string(),
            steps: Vec::new(),
            outputs: BTreeMap::new(),
            checksums: BTreeMap::new(),
            failed_step: None,
            timestamp: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(crate::error::invalid!(
                "manifest schema {} is not supported (expected {MANIFEST_SCHEMA})",
                m.schema
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
