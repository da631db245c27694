//! Command-line front end. Usage errors exit with 2, runtime failures with 1.

mod args;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::Parser;
use serde::Deserialize;

use args::{
    AblateArgs, AlphaMode, Cli, Command, CorpusArgs, CorpusSet, EvaluateArgs, GenerateArgs, GridArgs, MergeArgs,
    SegmentorKind, Stage1Args, StackArgs,
};

use crate::backend::{SchedulerParams, ToyBackend, ToyBackendSpec, ToyTextEncoder};
use crate::error::Error;
use crate::evaluation::{
    build_general_prompts, build_hoi_triplets, evaluate, AdapterSpec, EvaluationSet, HoiTriplet, MetricKind,
    MetricReport,
};
use crate::filters::{FilterMode, KernelSchedule, ScheduleMode};
use crate::image::{read_dir_images, tile_grid, RgbImage};
use crate::io::{dump_trace, ArrayContainer};
use crate::masks::{HeadMask, MaskSource};
use crate::pipeline::{
    ablation_sweep, generate, initial_latent, latent_checksum, rows_to_csv, stage1_layout, AblationAxes, AblationRow,
    BackendNames, GenerateRequest, GenerationResult, HeadSegmentor, LuminanceSegmentor, MaskPolicy, MergeConfig,
    NullSegmentor, RunManifest, SubjectInfo, ToggleSet, DEFAULT_STEPS,
};
use crate::tensor::sha256_hex;

pub const ADAPTERS_ENV: &str = "PERSONAHOI_ADAPTERS";

const DEFAULT_SD: &str = "toy:seed=1";
const DEFAULT_PFD: &str = "toy:seed=2";
const CLASS_WORDS: [&str; 5] = ["man", "woman", "person", "boy", "girl"];

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failure(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Stage1Mask(a) => cmd_stage1(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Corpus(a) => cmd_corpus(a),
        Command::Grid(a) => cmd_grid(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    steps: Option<usize>,
    filter_mode: Option<FilterMode>,
    alpha_start: Option<f64>,
    alpha_end: Option<f64>,
    alpha_mode: Option<ScheduleMode>,
    inject_step: Option<usize>,
    enable_cac: Option<bool>,
    enable_latent_merge: Option<bool>,
    enable_residual_merge: Option<bool>,
    backend_sd: Option<String>,
    backend_pfd: Option<String>,
}

impl ConfigFile {
    fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

struct Stack {
    prompt: String,
    config: MergeConfig,
    sd: ToyBackend,
    pfd: ToyBackend,
    encoder: ToyTextEncoder,
    subject: SubjectInfo,
    segmentor: Box<dyn HeadSegmentor>,
    mask_policy: MaskPolicy,
    timestamps: bool,
}

impl Stack {
    fn request(&self, capture: bool) -> GenerateRequest<'_> {
        GenerateRequest {
            prompt: &self.prompt,
            subject: self.subject.clone(),
            config: self.config.clone(),
            sd: &self.sd,
            pfd: &self.pfd,
            encoder: &self.encoder,
            segmentor: self.segmentor.as_ref(),
            mask_policy: self.mask_policy.clone(),
            capture,
        }
    }

    fn backend_names(&self) -> BackendNames {
        BackendNames {
            sd: self.sd.spec().to_string(),
            pfd: self.pfd.spec().to_string(),
        }
    }

    /// Content address of the run inputs.
    fn run_id(&self) -> String {
        let key = serde_json::json!({
            "config": self.config,
            "prompt": self.prompt,
            "subject": self.subject,
            "backends": self.backend_names(),
            "mask": self.mask_policy.user_mask.as_ref().map(HeadMask::checksum),
            "fallback": self.mask_policy.fallback.as_ref().map(HeadMask::checksum),
            "segmentor": self.segmentor.name(),
        });
        sha256_hex(key.to_string().as_bytes())[..16].to_string()
    }
}

fn parse_backend(spec: &str) -> CliResult<ToyBackend> {
    let spec: ToyBackendSpec = spec.parse().map_err(|e: Error| usage(e.to_string()))?;
    ToyBackend::new(spec).map_err(|e| usage(e.to_string()))
}

fn infer_class_word(prompt: &str) -> Option<String> {
    let words = ToyTextEncoder::words(prompt);
    words.into_iter().find(|w| CLASS_WORDS.contains(&w.as_str()))
}

fn absolute(path: &Path) -> String {
    std::fs::canonicalize(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}

fn load_mask(path: &Path) -> CliResult<HeadMask> {
    Ok(HeadMask::load_png(path, MaskSource::UserSupplied).with_context(|| format!("loading mask {}", path.display()))?)
}

fn schedule_from_flags(
    start: Option<f64>,
    end: Option<f64>,
    mode: Option<ScheduleMode>,
    steps: usize,
) -> CliResult<KernelSchedule> {
    let mode = mode.unwrap_or(match (start, end) {
        (Some(a), Some(b)) if a < b => ScheduleMode::LinearIncremental,
        (Some(_), None) => ScheduleMode::Constant,
        _ => ScheduleMode::LinearDecremental,
    });
    let (start, end) = match mode {
        ScheduleMode::Constant => {
            let a = start.or(end).unwrap_or(1.5);
            (a, end.unwrap_or(a))
        }
        _ => (start.unwrap_or(2.5), end.unwrap_or(0.5)),
    };
    KernelSchedule::new(start, end, steps, mode).map_err(|e| usage(e.to_string()))
}

fn resolve_stack(stack: &StackArgs, merge: Option<&MergeArgs>) -> CliResult<Stack> {
    let file = match &stack.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let prompt = stack
        .prompt
        .clone()
        .ok_or_else(|| usage("the following required arguments were not provided: --prompt <PROMPT>"))?;
    let steps = stack.steps.or(file.steps).unwrap_or(DEFAULT_STEPS);
    let mut config = MergeConfig::with_steps(steps);
    config.seed = stack.seed.or(file.seed).unwrap_or(0);
    let alpha_mode = merge.and_then(|m| m.alpha_mode).map(|m| match m {
        AlphaMode::Constant => ScheduleMode::Constant,
        AlphaMode::Decremental => ScheduleMode::LinearDecremental,
        AlphaMode::Incremental => ScheduleMode::LinearIncremental,
    });
    config.kernel_schedule = schedule_from_flags(
        merge.and_then(|m| m.alpha_start).or(file.alpha_start),
        merge.and_then(|m| m.alpha_end).or(file.alpha_end),
        alpha_mode.or(file.alpha_mode),
        steps,
    )?;
    if let Some(fm) = merge.and_then(|m| m.filter_mode.as_deref()) {
        config.filter_mode = fm.parse().map_err(|e: Error| usage(e.to_string()))?;
    } else if let Some(fm) = file.filter_mode {
        config.filter_mode = fm;
    }
    config.injection_step = merge.and_then(|m| m.inject_step).or(file.inject_step).unwrap_or(0);
    config.enable_cac = file.enable_cac.unwrap_or(true) && !merge.is_some_and(|m| m.no_cac);
    config.enable_latent_merge = file.enable_latent_merge.unwrap_or(true) && !merge.is_some_and(|m| m.no_lm);
    config.enable_residual_merge = file.enable_residual_merge.unwrap_or(true) && !merge.is_some_and(|m| m.no_rm);
    config.validate().map_err(|e| usage(e.to_string()))?;

    let sd = parse_backend(stack.backend_sd.as_deref().or(file.backend_sd.as_deref()).unwrap_or(DEFAULT_SD))?;
    let pfd = parse_backend(stack.backend_pfd.as_deref().or(file.backend_pfd.as_deref()).unwrap_or(DEFAULT_PFD))?;
    build_stack(prompt, config, sd, pfd, stack)
}

fn build_stack(prompt: String, config: MergeConfig, sd: ToyBackend, pfd: ToyBackend, stack: &StackArgs) -> CliResult<Stack> {
    let (s, p) = (sd.spec(), pfd.spec());
    if (s.n_tokens, s.token_dim) != (p.n_tokens, p.token_dim) {
        return Err(usage("SD and PFD backends must share token count and dimension"));
    }
    let encoder = ToyTextEncoder::new(s.n_tokens, s.token_dim).map_err(|e| usage(e.to_string()))?;
    let class_word = match &stack.class_word {
        Some(c) => c.clone(),
        None => infer_class_word(&prompt).ok_or_else(|| {
            usage(format!(
                "no class word ({}) in the prompt; pass --class-word",
                CLASS_WORDS.join(", ")
            ))
        })?,
    };
    let segmentor: Box<dyn HeadSegmentor> = match stack.segmentor {
        SegmentorKind::Luminance => Box::new(LuminanceSegmentor {
            threshold: stack.segmentor_threshold,
        }),
        SegmentorKind::Null => Box::new(NullSegmentor),
    };
    let mut mask_policy = MaskPolicy::default();
    if let Some(p) = &stack.mask {
        mask_policy.user_mask = Some(load_mask(p)?);
        mask_policy.user_mask_path = Some(absolute(p));
    }
    if let Some(p) = &stack.mask_fallback {
        mask_policy.fallback = Some(load_mask(p)?);
        mask_policy.user_mask_path = Some(absolute(p));
    }
    Ok(Stack {
        prompt,
        config,
        sd,
        pfd,
        encoder,
        subject: SubjectInfo {
            class_word,
            descriptor: stack.subject.clone(),
        },
        segmentor,
        mask_policy,
        timestamps: stack.timestamps,
    })
}

fn segmentor_from_name(name: Option<&str>) -> CliResult<(SegmentorKind, f64)> {
    match name {
        None => Ok((SegmentorKind::Luminance, 0.6)),
        Some("null") => Ok((SegmentorKind::Null, 0.6)),
        Some(n) => match n.strip_prefix("luminance>=") {
            Some(t) => Ok((
                SegmentorKind::Luminance,
                t.parse().map_err(|_| usage(format!("bad segmentor threshold in {n:?}")))?,
            )),
            None => Err(usage(format!("manifest segmentor {n:?} cannot be rebuilt"))),
        },
    }
}

fn stack_from_manifest(m: &RunManifest, timestamps: bool) -> CliResult<Stack> {
    let prov = m.mask_provenance.as_ref();
    let (segmentor, segmentor_threshold) = segmentor_from_name(prov.and_then(|p| p.segmentor.as_deref()))?;
    let path = prov.and_then(|p| p.path.clone()).map(PathBuf::from);
    let fallback_used = prov.is_some_and(|p| p.fallback_used);
    let user = prov.is_some_and(|p| p.source == MaskSource::UserSupplied && p.segmentor.is_none());
    let args = StackArgs {
        prompt: Some(m.prompt.clone()),
        seed: Some(m.config.seed),
        steps: Some(m.config.total_steps),
        backend_sd: Some(m.backends.sd.clone()),
        backend_pfd: Some(m.backends.pfd.clone()),
        class_word: Some(m.subject.class_word.clone()),
        subject: m.subject.descriptor.clone(),
        mask: if user { path.clone() } else { None },
        mask_fallback: if fallback_used { path } else { None },
        segmentor,
        segmentor_threshold,
        config: None,
        timestamps,
    };
    m.config.validate().map_err(|e| usage(format!("manifest config: {e}")))?;
    build_stack(
        m.prompt.clone(),
        m.config.clone(),
        parse_backend(&m.backends.sd)?,
        parse_backend(&m.backends.pfd)?,
        &args,
    )
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Writes image, layout, mask, latent and manifest for one run.
fn write_run(dir: &Path, id: &str, result: &mut GenerationResult, dump: bool, timestamps: bool) -> CliResult<PathBuf> {
    create_dir(dir)?;
    let mut outputs = BTreeMap::new();
    let mut put = |key: &str, name: String| {
        outputs.insert(key.to_string(), name.clone());
        dir.join(name)
    };
    result.image.save_png(&put("image", format!("{id}.png")))?;
    result.layout_image.save_png(&put("layout_image", format!("{id}.layout.png")))?;
    result.head_mask.save_png(&put("head_mask", format!("{id}.mask.png")))?;
    ArrayContainer::from_latent(&result.final_latent).write(&put("final_latent", format!("{id}.latent.arr")))?;
    if dump {
        let p = put("intermediates", format!("{id}.intermediates"));
        dump_trace(&p, &result.trace)?;
    }
    result.manifest.outputs = outputs;
    if timestamps {
        result.manifest.timestamp = Some(timestamp());
    }
    let manifest_path = dir.join(format!("{id}.manifest.json"));
    result.manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

fn report_abort(err: Error, dir: &Path, id: &str) -> CliError {
    match err {
        Error::NoHeadFound { image } => {
            let path = dir.join(format!("{id}.layout.png"));
            if create_dir(dir).is_ok() && image.save_png(&path).is_ok() {
                return CliError::Failure(anyhow!(
                    "no head region found in the layout image (saved to {}); pass --mask or --mask-fallback",
                    path.display()
                ));
            }
            CliError::Failure(anyhow!("no head region found in the layout image"))
        }
        Error::RunAborted { step, manifest, source } => {
            let path = dir.join(format!("{id}.manifest.json"));
            let saved = create_dir(dir).is_ok() && manifest.save(&path).is_ok();
            CliError::Failure(anyhow!(
                "run aborted at step {step}: {source}{}",
                if saved {
                    format!(" (manifest written to {})", path.display())
                } else {
                    String::new()
                }
            ))
        }
        other => other.into(),
    }
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let (stack, original) = match &a.from_manifest {
        Some(p) => {
            let m = RunManifest::load(p).with_context(|| format!("loading manifest {}", p.display()))?;
            (stack_from_manifest(&m, a.stack.timestamps)?, Some(m))
        }
        None => (resolve_stack(&a.stack, Some(&a.merge))?, None),
    };
    let id = stack.run_id();
    let mut result = generate(&stack.request(a.dump_intermediates)).map_err(|e| report_abort(e, &a.out, &id))?;
    let manifest_path = write_run(&a.out, &id, &mut result, a.dump_intermediates, stack.timestamps)?;
    println!("image {}", a.out.join(&result.manifest.outputs["image"]).display());
    println!("manifest {}", manifest_path.display());
    println!("checksum {}", result.manifest.checksums["image"]);
    if let Some(m) = original {
        let mismatched: Vec<&String> = m
            .checksums
            .iter()
            .filter(|(k, v)| result.manifest.checksums.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        if !mismatched.is_empty() {
            return Err(CliError::Failure(anyhow!("replay checksum mismatch: {mismatched:?}")));
        }
        println!("replay ok ({} checksums match)", m.checksums.len());
    }
    Ok(())
}

fn cmd_stage1(a: Stage1Args) -> CliResult<()> {
    let stack = resolve_stack(&a.stack, None)?;
    let id = stack.run_id();
    let params = SchedulerParams::toy(stack.config.total_steps)?;
    let z_t = initial_latent(stack.sd.spec().latent_shape, stack.config.seed, stack.config.total_steps)?;
    let cond = stack.encoder.encode(&stack.prompt)?;
    let out = stage1_layout(&stack.sd, &cond, &z_t, &params, stack.segmentor.as_ref(), &stack.mask_policy)
        .map_err(|e| report_abort(e, &a.out, &id))?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new(stack.config.clone(), &stack.prompt, stack.subject.clone(), stack.backend_names());
    manifest.checksums.insert("z_T".into(), latent_checksum(z_t.values()));
    manifest.checksums.insert("layout_image".into(), out.image.checksum());
    manifest.checksums.insert("head_mask".into(), out.mask.checksum());
    manifest.mask_provenance = Some(out.provenance);
    let layout = format!("{id}.layout.png");
    let mask = format!("{id}.mask.png");
    out.image.save_png(&a.out.join(&layout))?;
    out.mask.save_png(&a.out.join(&mask))?;
    manifest.outputs.insert("layout_image".into(), layout);
    manifest.outputs.insert("head_mask".into(), mask.clone());
    if stack.timestamps {
        manifest.timestamp = Some(timestamp());
    }
    let mpath = a.out.join(format!("{id}.stage1.json"));
    manifest.save(&mpath)?;
    println!("mask {}", a.out.join(mask).display());
    println!("manifest {}", mpath.display());
    Ok(())
}

fn parse_axes(a: &AblateArgs, steps: usize) -> CliResult<AblationAxes> {
    let mut axes = AblationAxes::default();
    if let Some(fm) = &a.filter_modes {
        axes.filter_modes = if fm == "all" {
            FilterMode::ALL.to_vec()
        } else {
            fm.split(',')
                .map(|s| s.trim().parse().map_err(|e: Error| usage(e.to_string())))
                .collect::<CliResult<_>>()?
        };
    }
    if let Some(t) = &a.toggles {
        let grid = ToggleSet::grid();
        axes.toggles = match t.as_str() {
            "grid" => grid,
            "on-off" => vec![ToggleSet::all_on(), ToggleSet::all_off()],
            list => list
                .split(',')
                .map(|l| {
                    grid.iter()
                        .find(|g| g.label == l.trim())
                        .cloned()
                        .ok_or_else(|| usage(format!("unknown toggle set {l:?}")))
                })
                .collect::<CliResult<_>>()?,
        };
    }
    if let Some(al) = &a.alphas {
        axes.schedules = al
            .split(',')
            .map(|s| {
                let s = s.trim();
                let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| usage(format!("bad alpha {x:?}")));
                match s.split_once("->") {
                    Some((x, y)) => schedule_from_flags(Some(parse(x)?), Some(parse(y)?), None, steps),
                    None => schedule_from_flags(Some(parse(s)?), None, Some(ScheduleMode::Constant), steps),
                }
            })
            .collect::<CliResult<_>>()?;
    }
    if let Some(&bad) = a.inject_steps.iter().find(|&&i| i > steps) {
        return Err(usage(format!("inject step {bad} exceeds --steps {steps}")));
    }
    axes.injection_steps = a.inject_steps.clone();
    if axes.is_empty() {
        return Err(usage(
            "ablate needs at least one axis: --filter-modes, --toggles, --alphas or --inject-steps",
        ));
    }
    Ok(axes)
}

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    let stack = resolve_stack(&a.stack, Some(&a.merge))?;
    let axes = parse_axes(&a, stack.config.total_steps)?;
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let req = stack.request(false);
    let mut cells = ablation_sweep(&req, &axes, a.jobs)?;
    create_dir(&a.out)?;
    let mut failed = 0;
    for cell in &mut cells {
        let dir = a.out.join("cells").join(format!("{:02}-{}", cell.row.index, cell.row.config_hash));
        match &mut cell.result {
            Ok(r) => {
                write_run(&dir, "run", r, false, stack.timestamps)?;
            }
            Err(_) => failed += 1,
        }
    }
    let rows: Vec<AblationRow> = cells.iter().map(|c| c.row.clone()).collect();
    let csv = a.out.join("ablation.csv");
    let json = a.out.join("ablation.json");
    std::fs::write(&csv, rows_to_csv(&rows)).with_context(|| format!("writing {}", csv.display()))?;
    std::fs::write(&json, serde_json::to_string_pretty(&rows).map_err(Error::from)? + "\n")
        .with_context(|| format!("writing {}", json.display()))?;
    println!("{} rows -> {}", rows.len(), csv.display());
    if failed > 0 {
        eprintln!("warning: {failed} cell(s) failed; see the error column");
    }
    Ok(())
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let metrics: Vec<MetricKind> = a
        .mode
        .iter()
        .map(|m| m.parse().map_err(|e: Error| usage(e.to_string())))
        .collect::<CliResult<_>>()?;
    let spec_path = match &a.adapters {
        Some(p) => p.clone(),
        None => std::env::var_os(ADAPTERS_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| usage(format!("pass --adapters or set {ADAPTERS_ENV}")))?,
    };
    let spec = AdapterSpec::load(&spec_path).with_context(|| format!("loading adapters {}", spec_path.display()))?;
    let loaded = read_dir_images(&a.images).with_context(|| format!("reading images from {}", a.images.display()))?;
    if loaded.is_empty() {
        return Err(CliError::Failure(anyhow!("no PNG images in {}", a.images.display())));
    }
    let reference = match &a.reference {
        Some(p) => Some(RgbImage::load(p).with_context(|| format!("loading reference {}", p.display()))?),
        None => None,
    };
    let mut checksums: HashMap<String, String> = loaded.iter().map(|(n, i)| (n.clone(), i.checksum())).collect();
    if let (Some(p), Some(r)) = (&a.reference, &reference) {
        if let Some(name) = p.file_name() {
            checksums.insert(name.to_string_lossy().into_owned(), r.checksum());
        }
    }
    let scratch = std::env::temp_dir().join("hoi-fusion-adapters");
    let adapters = spec.build(&checksums, &scratch)?;
    let (names, images): (Vec<String>, Vec<RgbImage>) = loaded.into_iter().unzip();

    let (prompts, triplets) = match &a.corpus_subject {
        Some(subject) => {
            let t: Vec<HoiTriplet> = build_hoi_triplets(subject)?.into_iter().cycle().take(images.len()).collect();
            (Some(t.iter().map(HoiTriplet::render).collect::<Vec<_>>()), Some(t))
        }
        None => {
            let prompts = a.prompts.as_deref().map(read_lines).transpose()?;
            let triplets = match a.triplets.as_deref() {
                Some(p) => Some(
                    read_lines(p)?
                        .iter()
                        .map(|l| {
                            let parts: Vec<&str> = l.split('\t').collect();
                            match parts[..] {
                                [s, v, o] => Ok(HoiTriplet::new(s, v, o)?),
                                _ => Err(CliError::Failure(anyhow!("triplet line {l:?} is not subject<TAB>verb<TAB>object"))),
                            }
                        })
                        .collect::<CliResult<Vec<_>>>()?,
                ),
                None => None,
            };
            (prompts, triplets)
        }
    };
    let set = EvaluationSet {
        names: &names,
        images: &images,
        prompts: prompts.as_deref(),
        triplets: triplets.as_deref(),
        reference: reference.as_ref(),
    };
    let report = evaluate(&a.method, &set, &metrics, &adapters)?;
    print!("{}", MetricReport::render_table(std::slice::from_ref(&report)));
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn corpus_lines(a: &CorpusArgs) -> CliResult<Vec<String>> {
    Ok(match a.set {
        CorpusSet::Hoi => crate::evaluation::build_hoi_prompts(&a.subject).map_err(|e| usage(e.to_string()))?,
        CorpusSet::General => build_general_prompts(&a.subject)
            .map_err(|e| usage(e.to_string()))?
            .into_iter()
            .flat_map(|(cat, ps)| ps.into_iter().map(move |p| format!("{cat}\t{p}")))
            .collect(),
    })
}

fn cmd_corpus(a: CorpusArgs) -> CliResult<()> {
    for line in corpus_lines(&a)? {
        println!("{line}");
    }
    Ok(())
}

fn cmd_grid(a: GridArgs) -> CliResult<()> {
    if a.cols == 0 {
        return Err(usage("--cols must be at least 1"));
    }
    let loaded = read_dir_images(&a.images).with_context(|| format!("reading images from {}", a.images.display()))?;
    let images: Vec<RgbImage> = loaded.into_iter().map(|(_, i)| i).collect();
    let grid = tile_grid(&images, a.cols)?;
    grid.save_png(&a.out)?;
    println!("{}x{} grid of {} images -> {}", grid.height(), grid.width(), images.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_flag_defaults() {
        let d = schedule_from_flags(None, None, None, 50).unwrap();
        assert_eq!(d, KernelSchedule::decremental_default(50));
        let c = schedule_from_flags(Some(1.5), None, None, 50).unwrap();
        assert_eq!((c.alpha_start, c.alpha_end, c.mode), (1.5, 1.5, ScheduleMode::Constant));
        let i = schedule_from_flags(Some(0.5), Some(2.5), None, 50).unwrap();
        assert_eq!(i.mode, ScheduleMode::LinearIncremental);
        assert!(matches!(
            schedule_from_flags(Some(0.5), Some(2.5), Some(ScheduleMode::LinearDecremental), 50),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn class_word_inference() {
        assert_eq!(infer_class_word("A Woman holding a cat").as_deref(), Some("woman"));
        assert_eq!(infer_class_word("a cat"), None);
    }

    #[test]
    fn segmentor_names_round_trip() {
        let (k, t) = segmentor_from_name(Some(&LuminanceSegmentor { threshold: 0.35 }.name())).unwrap();
        assert_eq!((k, t), (SegmentorKind::Luminance, 0.35));
        assert_eq!(segmentor_from_name(Some("null")).unwrap().0, SegmentorKind::Null);
        assert!(segmentor_from_name(Some("fixed:abc")).is_err());
    }
}
