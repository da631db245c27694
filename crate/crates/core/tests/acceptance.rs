//! Acceptance criteria 1–8. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fail.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use hoi_fusion::attention::{apply_cac, build_cac_mask, AttentionMap};
use hoi_fusion::evaluation::{
    build_general_prompts, build_hoi_prompts, evaluate, ConstantScorer, EvaluationSet, HoiTriplet, MetricKind,
    ScorerAdapters, ScriptedEmbedder, ScriptedScorer, WholeImageDetector,
};
use hoi_fusion::filters::{high_pass, kernel_size_from_mask, low_pass, FilterMode, GaussianKernel, KernelSchedule};
use hoi_fusion::image::RgbImage;
use hoi_fusion::masks::{HeadMask, MaskPyramid, MaskSource};
use hoi_fusion::merge::{latent_merge, residual_merge, BranchTag, LatentGrid, ResidualLayer, ResidualStack};
use hoi_fusion::pipeline::{generate, MergeConfig, RunManifest};
use hoi_fusion::tensor::Field;
use ndarray::{Array2, Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Checks {
    failed: Vec<String>,
    passed: usize,
}

impl Checks {
    fn new() -> Self {
        Self {
            failed: Vec::new(),
            passed: 0,
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(what.into());
        }
    }
}

fn report(n: usize, title: &str, budget: Duration, body: impl FnOnce(&mut Checks)) -> bool {
    let start = Instant::now();
    let mut c = Checks::new();
    body(&mut c);
    let took = start.elapsed();
    c.check(took <= budget, format!("runtime {:.2}s over {:.0}s budget", took.as_secs_f64(), budget.as_secs_f64()));
    let ok = c.failed.is_empty();
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut line = format!(
        "criterion {n} {verdict}: {title} ({} checks passed, {:.2}s)",
        c.passed,
        took.as_secs_f64()
    );
    for f in &c.failed {
        line.push_str(&format!("; failed: {f}"));
    }
    println!("{line}");
    ok
}

fn same_bits(a: &Field, b: &Field) -> bool {
    a.dim() == b.dim() && bits(a) == bits(b)
}

fn criterion_1(c: &mut Checks) {
    let toy = Toy::new();
    let spec = toy.sd.spec();
    c.check(spec.latent_shape == (4, 8, 8), "toy latent is 4x8x8");

    for inject in [0, 20] {
        let mut cfg = MergeConfig::with_steps(50).with_toggles(false, false, false);
        cfg.injection_step = inject;
        let r = generate(&toy.request(cfg.clone(), Some(blob_mask()))).unwrap();
        let reference = toy.pfd_only(&cfg);
        c.check(
            same_bits(r.final_latent.values(), reference.values()),
            format!("(a) toggles off equals PFD-only (inject {inject})"),
        );
        c.check(
            r.image == toy.pfd.decode_image(&reference),
            format!("(a) image equals PFD-only (inject {inject})"),
        );
    }

    let ones = user_mask(Array2::ones((64, 64)));
    for inject in [0, 20] {
        let mut cfg = MergeConfig::with_steps(50).with_toggles(true, true, true);
        cfg.filter_mode = FilterMode::NoFilter;
        cfg.injection_step = inject;
        let r = generate(&toy.request(cfg.clone(), Some(ones.clone()))).unwrap();
        let reference = toy.pfd_only(&cfg);
        c.check(
            same_bits(r.final_latent.values(), reference.values()),
            format!("(b) mask=1 with CAC+LM+RM(no-filter) equals PFD-only (inject {inject})"),
        );
    }

    let zeros = user_mask(Array2::zeros((64, 64)));
    for cac in [false, true] {
        let mut cfg = MergeConfig::with_steps(50).with_toggles(cac, true, true);
        cfg.filter_mode = FilterMode::NoFilter;
        let r = generate(&toy.request(cfg.clone(), Some(zeros.clone()))).unwrap();
        let reference = toy.sd_only(&cfg);
        c.check(
            same_bits(r.final_latent.values(), reference.values()),
            format!("(c) mask=0 with LM+RM(no-filter) equals SD-only (cac {cac})"),
        );
        c.check(
            r.image == toy.sd.decode_image(&reference),
            format!("(c) image equals SD-only decode (cac {cac})"),
        );
    }
}

trait DecodeImage {
    fn decode_image(&self, z: &LatentGrid) -> RgbImage;
}

impl<B: hoi_fusion::backend::DenoiserBackend> DecodeImage for B {
    fn decode_image(&self, z: &LatentGrid) -> RgbImage {
        self.decode(z).unwrap()
    }
}

fn criterion_2(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sizes = [1, 3, 5, 7, 9, 11, 13, 15, 17, 21, 25, 33, 41];
    let (mut worst, mut sum_mismatch, mut elements) = (0.0f64, 0usize, 0usize);
    let mut def_exact = true;
    for i in 0..120 {
        let size = sizes[i % sizes.len()];
        let channels = 1 + i % 3;
        let x = normal_field(&mut rng, (channels, 16, 16));
        let kernel = GaussianKernel::new(size).unwrap();
        let lp = low_pass(&x, &kernel).unwrap();
        let oracle = gaussian_conv2d(&x, size);
        let err = (&lp - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err);

        let hp = high_pass(&x, &kernel).unwrap();
        def_exact &= same_bits(&hp, &(&x - &lp));
        let recon = &hp + &lp;
        sum_mismatch += Zip::from(&recon).and(&x).fold(0, |n, a, b| n + usize::from(a.to_bits() != b.to_bits()));
        elements += x.len();

        let k: f64 = rng.random_range(-50.0..50.0);
        let constant = Array3::from_elem((channels, 16, 16), k);
        c.check(
            same_bits(&low_pass(&constant, &kernel).unwrap(), &constant),
            format!("constant field {k} preserved by size-{size} LP"),
        );
    }
    c.check(worst <= 1e-6, format!("separable LP vs 2D oracle max err {worst:e}"));
    c.check(def_exact, "HP is x - LP bit-for-bit");
    c.check(
        sum_mismatch == 0,
        format!("HP + LP == x exactly ({sum_mismatch} of {elements} elements differ by rounding)"),
    );
}

fn random_attention(rng: &mut ChaCha8Rng, hw: usize, n: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((hw, n), |_| rng.random_range(-3.0..3.0f64).exp());
    for mut row in a.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    a
}

fn criterion_3(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cols_ok, mut zero_ok, mut inside_ok, mut idem_ok) = (true, true, true, true);
    for _ in 0..150 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let n = rng.random_range(2..12);
        let id = rng.random_range(0..n);
        let m = binary_mask(&mut rng, h, w);
        let head = HeadMask::new(m.clone(), MaskSource::Segmentor).unwrap();
        let a = AttentionMap::new(random_attention(&mut rng, h * w, n), (h, w)).unwrap();
        let gate = build_cac_mask(&head, n, id).unwrap();
        let out = apply_cac(&a, &gate).unwrap();
        for p in 0..h * w {
            let inside = m[[p / w, p % w]] == 1.0;
            for k in 0..n {
                let (before, after) = (a.weights()[[p, k]], out.weights()[[p, k]]);
                if k != id {
                    cols_ok &= before.to_bits() == after.to_bits();
                } else if inside {
                    inside_ok &= before.to_bits() == after.to_bits();
                } else {
                    zero_ok &= after == 0.0;
                }
            }
        }
        let twice = apply_cac(&out, &gate).unwrap();
        idem_ok &= twice.weights().iter().zip(out.weights()).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    c.check(cols_ok, "non-identity columns bit-unchanged");
    c.check(zero_ok, "identity column zero outside the head");
    c.check(inside_ok, "identity column unchanged inside the head");
    c.check(idem_ok, "constraint is idempotent");

    let toy = Toy::new();
    let ones = user_mask(Array2::ones((64, 64)));
    for mode in [FilterMode::LowHigh, FilterMode::NoFilter] {
        let mut on = MergeConfig::with_steps(50);
        on.filter_mode = mode;
        let off = on.clone().with_toggles(false, true, true);
        let a = generate(&toy.request(on, Some(ones.clone()))).unwrap();
        let b = generate(&toy.request(off, Some(ones.clone()))).unwrap();
        c.check(
            same_bits(a.final_latent.values(), b.final_latent.values()) && a.image == b.image,
            format!("all-ones mask makes CAC a no-op through the pipeline ({mode})"),
        );
    }
}

fn stack_of(layers: Vec<Field>, branch: BranchTag) -> ResidualStack {
    ResidualStack {
        layers: layers
            .into_iter()
            .enumerate()
            .map(|(index, values)| ResidualLayer { index, values })
            .collect(),
        branch,
    }
}

fn blend_oracle(m: &Array2<f64>, a: &Field, b: &Field) -> Field {
    Array3::from_shape_fn(a.dim(), |(k, y, x)| {
        let w = m[[y, x]];
        w * a[[k, y, x]] + (1.0 - w) * b[[k, y, x]]
    })
}

fn max_diff(a: &Field, b: &Field) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn criterion_4(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ends, mut blend_err) = (true, 0.0f64);
    for _ in 0..100 {
        let shape = (rng.random_range(1..5), rng.random_range(1..9), rng.random_range(1..9));
        let t = rng.random_range(0..50);
        let p = LatentGrid::new(normal_field(&mut rng, shape), t, BranchTag::Pfd).unwrap();
        let s = LatentGrid::new(normal_field(&mut rng, shape), t, BranchTag::Sd).unwrap();
        let res = (shape.1, shape.2);
        let one = HeadMask::filled(res, 1.0, MaskSource::Segmentor).unwrap();
        let zero = HeadMask::filled(res, 0.0, MaskSource::Segmentor).unwrap();
        ends &= same_bits(latent_merge(&p, &s, &one).unwrap().values(), p.values());
        ends &= same_bits(latent_merge(&p, &s, &zero).unwrap().values(), s.values());
        let m = soft_mask(&mut rng, res.0, res.1);
        let merged = latent_merge(&p, &s, &HeadMask::new(m.clone(), MaskSource::Segmentor).unwrap()).unwrap();
        blend_err = blend_err.max(max_diff(merged.values(), &blend_oracle(&m, p.values(), s.values())));
    }
    c.check(ends, "latent merge endpoints are exact");
    c.check(blend_err <= 1e-12, format!("latent merge vs blend oracle max err {blend_err:e}"));

    let mut rm_err = [0.0f64; 3];
    let mut lin_err = 0.0f64;
    let modes = [FilterMode::Replace, FilterMode::NoFilter, FilterMode::LowHigh];
    for i in 0..60 {
        let base = soft_mask(&mut rng, 8, 8);
        let pyramid = MaskPyramid::build(
            HeadMask::new(base.clone(), MaskSource::Segmentor).unwrap(),
            &[(8, 8), (4, 4)],
        )
        .unwrap();
        let masks = [base.clone(), block_mean(&base, 2)];
        let size = [1, 3, 5, 7][i % 4];
        let kernel = GaussianKernel::new(size).unwrap();
        let shapes = [(4, 8, 8), (5, 4, 4)];
        let draw = |rng: &mut ChaCha8Rng, b| stack_of(shapes.iter().map(|&s| normal_field(rng, s)).collect(), b);
        let (p, s) = (draw(&mut rng, BranchTag::Pfd), draw(&mut rng, BranchTag::Sd));
        for (j, mode) in modes.iter().enumerate() {
            let got = residual_merge(&p, &s, &pyramid, &kernel, *mode).unwrap();
            for (l, layer) in got.layers.iter().enumerate() {
                let (pv, sv) = (&p.layers[l].values, &s.layers[l].values);
                let want = match mode {
                    FilterMode::Replace => sv.clone(),
                    FilterMode::NoFilter => blend_oracle(&masks[l], pv, sv),
                    _ => {
                        let hp = pv - &gaussian_conv2d(pv, size);
                        let lp = gaussian_conv2d(sv, size);
                        blend_oracle(&masks[l], &hp, &lp)
                    }
                };
                rm_err[j] = rm_err[j].max(max_diff(&layer.values, &want));
            }
        }

        let (p2, s2) = (draw(&mut rng, BranchTag::Pfd), draw(&mut rng, BranchTag::Sd));
        let zero = stack_of(shapes.iter().map(|&s| Field::zeros(s)).collect(), BranchTag::Sd);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combo = |x: &ResidualStack, y: &ResidualStack| {
            stack_of(
                x.layers.iter().zip(&y.layers).map(|(u, v)| &u.values * a + &v.values * b).collect(),
                x.branch,
            )
        };
        let rm = |x: &ResidualStack, y: &ResidualStack| {
            residual_merge(x, y, &pyramid, &kernel, FilterMode::LowHigh).unwrap()
        };
        let lin_pfd = (rm(&combo(&p, &p2), &zero), rm(&p, &zero), rm(&p2, &zero));
        let lin_sd = (rm(&zero, &combo(&s, &s2)), rm(&zero, &s), rm(&zero, &s2));
        let split = (rm(&p, &s), rm(&p, &zero), rm(&zero, &s));
        for l in 0..shapes.len() {
            let v = |st: &ResidualStack| st.layers[l].values.clone();
            lin_err = lin_err
                .max(max_diff(&v(&lin_pfd.0), &(v(&lin_pfd.1) * a + v(&lin_pfd.2) * b)))
                .max(max_diff(&v(&lin_sd.0), &(v(&lin_sd.1) * a + v(&lin_sd.2) * b)))
                .max(max_diff(&v(&split.0), &(v(&split.1) + v(&split.2))));
        }
    }
    for (j, mode) in modes.iter().enumerate() {
        c.check(rm_err[j] <= 1e-6, format!("residual merge {mode} vs oracle max err {:e}", rm_err[j]));
    }
    c.check(lin_err <= 1e-9, format!("residual merge linearity max err {lin_err:e}"));
}

/// `(area, alpha, size)`: `round(alpha * sqrt(area))`, bumped to odd.
const KERNEL_TABLE: [(f64, f64, usize); 29] = [
    (64.0, 0.5, 5),
    (64.0, 2.5, 21),
    (64.0, 1.0, 9),
    (64.0, 0.0, 1),
    (0.0, 2.5, 1),
    (1.0, 1.0, 1),
    (1.0, 2.5, 3),
    (4.0, 1.0, 3),
    (9.0, 1.0, 3),
    (16.0, 1.5, 7),
    (25.0, 0.5, 3),
    (36.0, 0.5, 3),
    (49.0, 1.0, 7),
    (100.0, 0.5, 5),
    (100.0, 1.2, 13),
    (144.0, 0.25, 3),
    (256.0, 0.5, 9),
    (256.0, 2.5, 41),
    (400.0, 0.5, 11),
    (1024.0, 0.5, 17),
    (4096.0, 0.5, 33),
    (4096.0, 2.5, 161),
    (81.0, 0.1, 1),
    (2.0, 1.0, 1),
    (10.0, 1.0, 3),
    (50.0, 1.0, 7),
    (20.0, 0.5, 3),
    (64.0, 1.75, 15),
    (36.0, 1.25, 9),
];

fn criterion_5(c: &mut Checks) {
    let s = KernelSchedule::decremental_default(50);
    let alphas: Vec<f64> = (0..50).map(|i| s.eval(i).unwrap()).collect();
    c.check(alphas[0] == 2.5, format!("alpha(0) = {}", alphas[0]));
    c.check(alphas[49] == 0.5, format!("alpha(49) = {}", alphas[49]));
    c.check(alphas.windows(2).all(|w| w[1] <= w[0]), "schedule is non-increasing");
    c.check(s.eval(50).is_err(), "step 50 is outside a 50-step schedule");
    for (area, alpha, want) in KERNEL_TABLE {
        let got = kernel_size_from_mask(area, alpha).unwrap();
        c.check(got == want, format!("kernel size for area {area}, alpha {alpha}: {got} != {want}"));
    }
}

fn ablate(dir: &Path, extra: &[&str]) -> Option<String> {
    let out = dir.to_str().unwrap();
    let mut args = vec!["ablate", "--prompt", PROMPT, "--seed", "0", "--out", out];
    args.extend_from_slice(extra);
    let o = run_cli(&args, dir.parent().unwrap());
    if !o.status.success() {
        return None;
    }
    std::fs::read_to_string(dir.join("ablation.csv")).ok()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let Some(i) = header.iter().position(|h| *h == name) else {
        return Vec::new();
    };
    lines.map(|l| l.split(',').nth(i).unwrap_or("").to_string()).collect()
}

fn criterion_6(c: &mut Checks) {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Option<String>> = [
        ("f1", &["--filter-modes", "all"][..]),
        ("f2", &["--filter-modes", "all", "--jobs", "3"][..]),
        ("t1", &["--toggles", "grid"][..]),
        ("t2", &["--toggles", "grid"][..]),
    ]
    .iter()
    .map(|(d, a)| ablate(&tmp.path().join(d), a))
    .collect();
    c.check(runs.iter().all(Option::is_some), "ablate runs succeed");
    let [Some(f1), Some(f2), Some(t1), Some(t2)] = &runs[..] else {
        return;
    };
    c.check(f1.lines().count() == 7, format!("filter sweep has {} rows", f1.lines().count() - 1));
    let modes: Vec<String> = FilterMode::ALL.iter().map(|m| m.to_string()).collect();
    c.check(column(f1, "filter_mode") == modes, "one row per filter mode, in order");
    c.check(f1 == f2, "filter sweep byte-identical across runs and job counts");
    c.check(t1.lines().count() == 6, format!("toggle grid has {} rows", t1.lines().count() - 1));
    let want = [
        ("full", "true", "true", "true"),
        ("minus-LM", "true", "false", "true"),
        ("minus-RM", "true", "true", "false"),
        ("minus-CAC", "false", "true", "true"),
        ("baseline", "false", "false", "false"),
    ];
    let got: Vec<(String, String, String, String)> = (0..5)
        .map(|i| {
            let col = |n| column(t1, n).get(i).cloned().unwrap_or_default();
            (col("toggles"), col("cac"), col("lm"), col("rm"))
        })
        .collect();
    let want: Vec<_> = want
        .iter()
        .map(|(a, b, c, d)| (a.to_string(), b.to_string(), c.to_string(), d.to_string()))
        .collect();
    c.check(got == want, format!("toggle rows {got:?}"));
    c.check(t1 == t2, "toggle grid byte-identical across runs");
    let sums = column(t1, "output_checksum");
    c.check(
        sums.iter().all(|s| s.len() == 64) && sums.iter().collect::<std::collections::BTreeSet<_>>().len() == 5,
        "each toggle row produces a distinct image",
    );
}

fn criterion_7(c: &mut Checks) {
    let imgs: Vec<RgbImage> = (0..3).map(|i| RgbImage::filled(8, 8, 0.2 + 0.3 * i as f64).unwrap()).collect();
    let reference = RgbImage::filled(8, 8, 0.95).unwrap();
    let mut emb = ScriptedEmbedder::new(None).unwrap();
    emb.insert(reference.checksum(), &[1.0, 0.0]).unwrap();
    emb.insert(imgs[0].checksum(), &[1.0, 0.0]).unwrap();
    emb.insert(imgs[1].checksum(), &[0.6, 0.8]).unwrap();
    emb.insert(imgs[2].checksum(), &[0.0, 1.0]).unwrap();
    let scripted = |vals: [f64; 3]| ScriptedScorer {
        by_image: imgs.iter().map(|i| i.checksum()).zip(vals).collect(),
        default: None,
    };
    let adapters = ScorerAdapters {
        face_detector: Box::new(WholeImageDetector),
        face_embedder: Box::new(emb),
        text_image_scorer: Box::new(scripted([0.2, 0.3, 0.25])),
        hoi_detector: Box::new(scripted([0.9, 0.0, 0.45])),
    };
    let names: Vec<String> = (0..3).map(|i| format!("{i}.png")).collect();
    let prompts = build_hoi_prompts("man").unwrap()[..3].to_vec();
    let triplets = vec![
        HoiTriplet::new("man", "surfing with", "surfboard").unwrap(),
        HoiTriplet::new("man", "skateboarding with", "skateboard").unwrap(),
        HoiTriplet::new("man", "jumping with", "skateboard").unwrap(),
    ];
    let set = EvaluationSet {
        names: &names,
        images: &imgs,
        prompts: Some(&prompts),
        triplets: Some(&triplets),
        reference: Some(&reference),
    };
    let all = [MetricKind::Identity, MetricKind::Prompt, MetricKind::Interaction];
    let r = evaluate("mock", &set, &all, &adapters).unwrap();
    let agg = &r.aggregates;
    let close = |got: Option<f64>, want: f64| got.is_some_and(|g| (g - want).abs() <= 1e-9);
    c.check(close(agg.identity_percent, 100.0 * (1.0 + 0.6 + 0.0) / 3.0), format!("identity {:?}", agg.identity_percent));
    c.check(close(agg.prompt_consistency_percent, 100.0 * (0.2 + 0.3 + 0.25) / 3.0), format!("prompt {:?}", agg.prompt_consistency_percent));
    c.check(close(agg.interaction_alignment_percent, 100.0 * (0.9 + 0.0 + 0.45) / 3.0), format!("interaction {:?}", agg.interaction_alignment_percent));
    c.check(r.undetected_interactions == 1, "one undetected interaction");

    let constant = ScorerAdapters {
        face_detector: Box::new(WholeImageDetector),
        face_embedder: Box::new(ScriptedEmbedder::new(Some(&[0.0, 1.0])).unwrap()),
        text_image_scorer: Box::new(ConstantScorer(0.2130)),
        hoi_detector: Box::new(ConstantScorer(0.6)),
    };
    let r = evaluate("const", &set, &all, &constant).unwrap();
    c.check(close(r.aggregates.identity_percent, 100.0), "identical embeddings score 100");
    c.check(close(r.aggregates.prompt_consistency_percent, 21.30), "constant 0.2130 scores 21.30");
    c.check(close(r.aggregates.interaction_alignment_percent, 60.0), "constant 0.6 scores 60");

    for subject in ["man", "woman"] {
        let hoi: String = build_hoi_prompts(subject).unwrap().iter().map(|p| format!("{p}\n")).collect();
        c.check(hoi == golden(&format!("hoi_{subject}.txt")), format!("HOI corpus for {subject} matches golden"));
        c.check(hoi.lines().count() == 30, "30 HOI prompts");
        let general: String = build_general_prompts(subject)
            .unwrap()
            .iter()
            .flat_map(|(cat, ps)| ps.iter().map(move |p| format!("{cat}\t{p}\n")))
            .collect();
        c.check(
            general == golden(&format!("general_{subject}.txt")),
            format!("general corpus for {subject} matches golden"),
        );
        c.check(general.lines().count() == 40, "40 general prompts");
    }
}

fn generate_cli(dir: &Path, args: &[&str]) -> Option<(Vec<u8>, RunManifest)> {
    let mut all = vec!["generate", "--out", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    let o = run_cli(&all, dir.parent().unwrap());
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
        return None;
    }
    let manifest = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.to_string_lossy().ends_with(".manifest.json"))?;
    let m = RunManifest::load(&manifest).ok()?;
    let image = std::fs::read(dir.join(m.outputs.get("image")?)).ok()?;
    Some((image, m))
}

fn criterion_8(c: &mut Checks) {
    let tmp = tempfile::tempdir().unwrap();
    let flags = ["--prompt", PROMPT, "--seed", "7", "--steps", "50"];
    let a = generate_cli(&tmp.path().join("a"), &flags);
    let b = generate_cli(&tmp.path().join("b"), &flags);
    c.check(a.is_some() && b.is_some(), "generate runs succeed");
    let (Some((img_a, man_a)), Some((img_b, man_b))) = (a, b) else {
        return;
    };
    c.check(img_a == img_b, "identical image bytes");
    c.check(man_a.checksums == man_b.checksums, "identical manifest checksums");
    c.check(man_a.to_json().unwrap() == man_b.to_json().unwrap(), "identical manifests");
    c.check(man_a.checksums.len() == 5, format!("{} checksums recorded", man_a.checksums.len()));

    let manifest = std::fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .unwrap();
    let replay = generate_cli(&tmp.path().join("r"), &["--from-manifest", manifest.to_str().unwrap()]);
    c.check(replay.is_some(), "replay succeeds");
    if let Some((img_r, man_r)) = replay {
        c.check(img_r == img_a, "replay reproduces the image bytes");
        c.check(man_r.checksums == man_a.checksums, "replay reproduces every checksum");
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        report(1, "branch equivalence", secs(5), criterion_1),
        report(2, "filter oracle", secs(5), criterion_2),
        report(3, "cross-attention constraint", secs(5), criterion_3),
        report(4, "merge algebra", secs(5), criterion_4),
        report(5, "kernel schedule", secs(1), criterion_5),
        report(6, "ablation structure", secs(30), criterion_6),
        report(7, "metric harness and corpora", secs(2), criterion_7),
        report(8, "end-to-end determinism", secs(10), criterion_8),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
