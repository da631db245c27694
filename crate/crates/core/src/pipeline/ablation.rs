use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, GenerateRequest, GenerationResult, MergeConfig};
use crate::error::{invalid, Error, Result};
use crate::filters::{FilterMode, KernelSchedule};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleSet {
    pub label: String,
    pub cac: bool,
    pub lm: bool,
    pub rm: bool,
}

impl ToggleSet {
    pub fn new(label: &str, cac: bool, lm: bool, rm: bool) -> Self {
        Self {
            label: label.to_string(),
            cac,
            lm,
            rm,
        }
    }

    pub fn all_on() -> Self {
        Self::new("full", true, true, true)
    }

    pub fn all_off() -> Self {
        Self::new("baseline", false, false, false)
    }

    /// Full method, each mechanism removed in turn, and the bare baseline.
    pub fn grid() -> Vec<Self> {
        vec![
            Self::all_on(),
            Self::new("minus-LM", true, false, true),
            Self::new("minus-RM", true, true, false),
            Self::new("minus-CAC", false, true, true),
            Self::all_off(),
        ]
    }
}

/// Sweep axes; an empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default)]
pub struct AblationAxes {
    pub toggles: Vec<ToggleSet>,
    pub filter_modes: Vec<FilterMode>,
    pub schedules: Vec<KernelSchedule>,
    pub injection_steps: Vec<usize>,
}

impl AblationAxes {
    pub fn is_empty(&self) -> bool {
        self.toggles.is_empty()
            && self.filter_modes.is_empty()
            && self.schedules.is_empty()
            && self.injection_steps.is_empty()
    }

    /// Cartesian product in row-major order (toggles outermost).
    pub fn cells(&self, base: &MergeConfig) -> Vec<(String, MergeConfig)> {
        fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for tog in axis(&self.toggles) {
            for mode in axis(&self.filter_modes) {
                for sched in axis(&self.schedules) {
                    for inj in axis(&self.injection_steps) {
                        let mut c = base.clone();
                        let label = match &tog {
                            Some(t) => {
                                c = c.with_toggles(t.cac, t.lm, t.rm);
                                t.label.clone()
                            }
                            None => toggle_label(&c),
                        };
                        if let Some(m) = mode {
                            c.filter_mode = m;
                        }
                        if let Some(s) = sched {
                            c.kernel_schedule = s;
                        }
                        if let Some(i) = inj {
                            c.injection_step = i;
                        }
                        out.push((label, c));
                    }
                }
            }
        }
        out
    }
}

fn toggle_label(c: &MergeConfig) -> String {
    let on: Vec<&str> = [
        (c.enable_cac, "CAC"),
        (c.enable_latent_merge, "LM"),
        (c.enable_residual_merge, "RM"),
    ]
    .iter()
    .filter(|(b, _)| *b)
    .map(|(_, n)| *n)
    .collect();
    if on.is_empty() {
        "none".into()
    } else {
        on.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub index: usize,
    pub config_hash: String,
    pub toggles: String,
    pub enable_cac: bool,
    pub enable_latent_merge: bool,
    pub enable_residual_merge: bool,
    pub filter_mode: FilterMode,
    pub alpha_schedule: String,
    pub inject_step: usize,
    pub output_checksum: Option<String>,
    pub error: Option<String>,
}

pub struct AblationCell {
    pub config: MergeConfig,
    pub result: std::result::Result<GenerationResult, Error>,
    pub row: AblationRow,
}

/// Runs every cell of the sweep; failing cells are recorded, not fatal.
/// `jobs > 1` runs cells on a thread pool, results stay in sweep order.
pub fn ablation_sweep(req: &GenerateRequest<'_>, axes: &AblationAxes, jobs: usize) -> Result<Vec<AblationCell>> {
    if axes.is_empty() {
        return Err(invalid!("ablation needs at least one sweep axis"));
    }
    let cells = axes.cells(&req.config);
    let run = |(index, (label, config)): (usize, &(String, MergeConfig))| {
        let result = generate(&req.with_config(config.clone()));
        let row = AblationRow {
            index,
            config_hash: config.config_hash(),
            toggles: label.clone(),
            enable_cac: config.enable_cac,
            enable_latent_merge: config.enable_latent_merge,
            enable_residual_merge: config.enable_residual_merge,
            filter_mode: config.filter_mode,
            alpha_schedule: config.kernel_schedule.label(),
            inject_step: config.injection_step,
            output_checksum: result.as_ref().ok().map(|r| r.image.checksum()),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        AblationCell {
            config: config.clone(),
            result,
            row,
        }
    };
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| invalid!("cannot start {jobs} workers: {e}"))?;
        Ok(pool.install(|| cells.par_iter().enumerate().map(run).collect()))
    } else {
        Ok(cells.iter().enumerate().map(run).collect())
    }
}

pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "index,config_hash,toggles,cac,lm,rm,filter_mode,alpha_schedule,inject_step,output_checksum,error\n",
    );
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace('"', "'");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},\"{}\"\n",
            r.index,
            r.config_hash,
            r.toggles,
            r.enable_cac,
            r.enable_latent_merge,
            r.enable_residual_merge,
            r.filter_mode,
            r.alpha_schedule,
            r.inject_step,
            r.output_checksum.as_deref().unwrap_or(""),
            err
        ));
    }
    out
}
