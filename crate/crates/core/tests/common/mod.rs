#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use hoi_fusion::attention::ConditioningSequence;
use hoi_fusion::backend::{SchedulerParams, ToyBackend, ToyBackendSpec, ToyTextEncoder};
use hoi_fusion::masks::{HeadMask, MaskSource};
use hoi_fusion::merge::LatentGrid;
use hoi_fusion::pipeline::{
    initial_latent, rollout, GenerateRequest, LuminanceSegmentor, MaskPolicy, MergeConfig, PersonalizedConditioning,
    PromptEncoder, SubjectInfo,
};
use hoi_fusion::tensor::Field;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const PROMPT: &str = "a man riding a horse";

pub struct Toy {
    pub sd: ToyBackend,
    pub pfd: ToyBackend,
    pub encoder: ToyTextEncoder,
    pub segmentor: LuminanceSegmentor,
}

impl Toy {
    pub fn new() -> Self {
        Self {
            sd: ToyBackend::new(ToyBackendSpec::with_seed(1)).unwrap(),
            pfd: ToyBackend::new(ToyBackendSpec::with_seed(2)).unwrap(),
            encoder: ToyTextEncoder::new(16, 16).unwrap(),
            segmentor: LuminanceSegmentor { threshold: 0.6 },
        }
    }

    pub fn request(&self, config: MergeConfig, mask: Option<HeadMask>) -> GenerateRequest<'_> {
        GenerateRequest {
            prompt: PROMPT,
            subject: subject(),
            config,
            sd: &self.sd,
            pfd: &self.pfd,
            encoder: &self.encoder,
            segmentor: &self.segmentor,
            mask_policy: MaskPolicy {
                user_mask: mask,
                ..MaskPolicy::default()
            },
            capture: false,
        }
    }

    pub fn cond_sd(&self) -> ConditioningSequence {
        self.encoder.encode(PROMPT).unwrap()
    }

    pub fn cond_pfd(&self) -> PersonalizedConditioning {
        PromptEncoder::personalize(&self.encoder, PROMPT, &subject()).unwrap()
    }

    pub fn z_t(&self, config: &MergeConfig) -> LatentGrid {
        initial_latent(self.sd.spec().latent_shape, config.seed, config.total_steps).unwrap()
    }

    /// PFD branch alone, with the identity token scheduled as in `config`.
    pub fn pfd_only(&self, config: &MergeConfig) -> LatentGrid {
        let cond = self.cond_pfd();
        let params = SchedulerParams::toy(config.total_steps).unwrap();
        rollout(&self.pfd, &self.z_t(config), &params, &|s| cond.at_step(s, config.injection_step)).unwrap()
    }

    /// SD branch alone on the plain prompt.
    pub fn sd_only(&self, config: &MergeConfig) -> LatentGrid {
        let cond = self.cond_sd();
        let params = SchedulerParams::toy(config.total_steps).unwrap();
        rollout(&self.sd, &self.z_t(config), &params, &|_| cond.clone()).unwrap()
    }
}

pub fn subject() -> SubjectInfo {
    SubjectInfo {
        class_word: "man".into(),
        descriptor: "subject-0".into(),
    }
}

pub fn user_mask(values: Array2<f64>) -> HeadMask {
    HeadMask::new(values, MaskSource::UserSupplied).unwrap()
}

/// A 64×64 soft blob in the upper-middle of the frame.
pub fn blob_mask() -> HeadMask {
    user_mask(Array2::from_shape_fn((64, 64), |(y, x)| {
        let (dy, dx) = (y as f64 - 18.0, x as f64 - 30.0);
        let d = (dy * dy + dx * dx).sqrt();
        (1.5 - d / 10.0).clamp(0.0, 1.0)
    }))
}

pub fn normal_field(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Field {
    Array3::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

pub fn binary_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

pub fn soft_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random::<f64>(),
    })
}

pub fn bits(f: &Field) -> Vec<u64> {
    f.iter().map(|v| v.to_bits()).collect()
}

fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct (non-separable) 2D Gaussian convolution with mirrored borders,
/// weights built from the 2D density rather than a 1D profile.
pub fn gaussian_conv2d(field: &Field, size: usize) -> Field {
    let sigma = (size as f64 / 6.0).max(0.3);
    let r = (size / 2) as isize;
    let mut w = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            w.push(((-(dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    let (c, h, wd) = field.dim();
    Array3::from_shape_fn((c, h, wd), |(k, y, x)| {
        let mut acc = 0.0;
        let mut i = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = mirror(y as isize + dy, h);
                let xx = mirror(x as isize + dx, wd);
                acc += w[i] / total * field[[k, yy, xx]];
                i += 1;
            }
        }
        acc
    })
}

/// Block-average downsampling by an integer factor.
pub fn block_mean(m: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((h / factor, w / factor), |(y, x)| {
        let mut s = 0.0;
        for i in 0..factor {
            for j in 0..factor {
                s += m[[y * factor + i, x * factor + j]];
            }
        }
        s / (factor * factor) as f64
    })
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hoi-fusion")
}

pub fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin()).args(args).current_dir(cwd).output().expect("spawn hoi-fusion")
}

pub fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}
