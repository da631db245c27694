//! Identity preservation, prompt consistency and interaction alignment over
//! sets of generated images, plus the benchmark prompt corpora.

mod adapters;
mod corpus;

pub use adapters::{
    AdapterSlot, AdapterSpec, ConstantScorer, FaceBox, FaceDetector, FaceEmbedder, HoiDetector,
    ProcessAdapter, ScorerAdapters, ScriptedEmbedder, ScriptedFaceDetector, ScriptedScorer,
    TextImageScorer, WholeImageDetector,
};
pub use corpus::{build_general_prompts, build_hoi_prompts, build_hoi_triplets, PromptCategory};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::RgbImage;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// `subject + interaction + object`, rendered `"a {subject} {verb} {object}"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HoiTriplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl HoiTriplet {
    pub fn new(subject: &str, verb: &str, object: &str) -> Result<Self> {
        let t = Self {
            subject: subject.trim().to_string(),
            verb: verb.trim().to_string(),
            object: object.trim().to_string(),
        };
        if t.subject.is_empty() || t.verb.is_empty() || t.object.is_empty() {
            return Err(invalid!("HOI triplet fields must be non-empty: {t:?}"));
        }
        Ok(t)
    }

    pub fn render(&self) -> String {
        format!("a {} {} {}", self.subject, self.verb, self.object)
    }
}

impl fmt::Display for HoiTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Per-image scores in `[0, 1]` and their mean as a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub percent: f64,
    pub per_image: Vec<f64>,
    pub undetected: usize,
}

impl MetricScores {
    fn from_scores(per_image: Vec<f64>, undetected: usize) -> Result<Self> {
        if per_image.is_empty() {
            return Err(invalid!("cannot score an empty image set"));
        }
        let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
        Ok(Self {
            percent: (100.0 * mean).clamp(0.0, 100.0),
            per_image,
            undetected,
        })
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.iter().any(|x| !x.is_finite()) || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::Adapter(format!("face embedding has norm {norm}, expected 1")));
    }
    Ok(())
}

fn check_score(s: f64, what: &str) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::Adapter(format!("{what} returned a non-finite score")));
    }
    Ok(s)
}

/// Embedding of the largest detected face, or `None` when no face is found.
fn largest_face_embedding(image: &RgbImage, adapters: &ScorerAdapters) -> Result<Option<Vec<f64>>> {
    let faces = adapters.face_detector.detect(image)?;
    let Some(face) = faces
        .iter()
        .filter(|b| b.area() > 0)
        .fold(None::<&FaceBox>, |best, b| match best {
            Some(x) if x.area() >= b.area() => Some(x),
            _ => Some(b),
        })
    else {
        return Ok(None);
    };
    let crop = image
        .crop(face.y, face.x, face.h, face.w)
        .map_err(|e| Error::Adapter(format!("face box {face:?} is outside the image: {e}")))?;
    let v = adapters.face_embedder.embed(&crop)?;
    check_unit(&v)?;
    Ok(Some(v))
}

/// Mean cosine similarity between each image's largest face and the
/// reference face. Images without a face score 0; negative similarities are
/// clamped to 0.
pub fn identity_preservation(images: &[RgbImage], reference: &RgbImage, adapters: &ScorerAdapters) -> Result<MetricScores> {
    let reference = largest_face_embedding(reference, adapters)?.ok_or(Error::InvalidReference)?;
    let mut undetected = 0;
    let mut scores = Vec::with_capacity(images.len());
    for img in images {
        match largest_face_embedding(img, adapters)? {
            Some(v) => {
                if v.len() != reference.len() {
                    return Err(Error::Adapter(format!(
                        "embedding dims differ: {} vs {}",
                        v.len(),
                        reference.len()
                    )));
                }
                let cos: f64 = v.iter().zip(&reference).map(|(a, b)| a * b).sum();
                scores.push(cos.clamp(0.0, 1.0));
            }
            None => {
                undetected += 1;
                scores.push(0.0);
            }
        }
    }
    MetricScores::from_scores(scores, undetected)
}

pub fn prompt_consistency(images: &[RgbImage], prompts: &[String], adapters: &ScorerAdapters) -> Result<MetricScores> {
    if images.len() != prompts.len() {
        return Err(invalid!("{} images but {} prompts", images.len(), prompts.len()));
    }
    let mut scores = Vec::with_capacity(images.len());
    for (img, p) in images.iter().zip(prompts) {
        let s = check_score(adapters.text_image_scorer.score(img, p)?, "text-image scorer")?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Adapter(format!("text-image score {s} outside [0, 1]")));
        }
        scores.push(s);
    }
    MetricScores::from_scores(scores, 0)
}

/// HOI detector scores are clamped to `[0, 1]`; a zero counts as undetected.
pub fn interaction_alignment(
    images: &[RgbImage],
    triplets: &[HoiTriplet],
    adapters: &ScorerAdapters,
) -> Result<MetricScores> {
    if images.len() != triplets.len() {
        return Err(invalid!("{} images but {} triplets", images.len(), triplets.len()));
    }
    let mut scores = Vec::with_capacity(images.len());
    for (img, t) in images.iter().zip(triplets) {
        let s = check_score(adapters.hoi_detector.score(img, t)?, "HOI detector")?.clamp(0.0, 1.0);
        scores.push(s);
    }
    let undetected = scores.iter().filter(|&&s| s == 0.0).count();
    MetricScores::from_scores(scores, undetected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Identity,
    Prompt,
    Interaction,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(MetricKind::Identity),
            "prompt" => Ok(MetricKind::Prompt),
            "interaction" => Ok(MetricKind::Interaction),
            _ => Err(invalid!("unknown metric {s:?}; expected identity, prompt or interaction")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub prompt: Option<String>,
    pub identity: Option<f64>,
    pub prompt_consistency: Option<f64>,
    pub interaction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub identity_percent: Option<f64>,
    pub prompt_consistency_percent: Option<f64>,
    pub interaction_alignment_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
    pub undetected_faces: usize,
    pub undetected_interactions: usize,
}

/// Inputs for one evaluation pass; `prompts` and `triplets` are per image.
pub struct EvaluationSet<'a> {
    pub names: &'a [String],
    pub images: &'a [RgbImage],
    pub prompts: Option<&'a [String]>,
    pub triplets: Option<&'a [HoiTriplet]>,
    pub reference: Option<&'a RgbImage>,
}

pub fn evaluate(method: &str, set: &EvaluationSet<'_>, metrics: &[MetricKind], adapters: &ScorerAdapters) -> Result<MetricReport> {
    if set.names.len() != set.images.len() {
        return Err(invalid!("{} names for {} images", set.names.len(), set.images.len()));
    }
    let mut rows: Vec<ReportRow> = set
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| ReportRow {
            image: n.clone(),
            prompt: set
                .prompts
                .and_then(|p| p.get(i).cloned())
                .or_else(|| set.triplets.and_then(|t| t.get(i).map(HoiTriplet::render))),
            identity: None,
            prompt_consistency: None,
            interaction: None,
        })
        .collect();
    let mut report = MetricReport {
        method: method.to_string(),
        rows: Vec::new(),
        aggregates: Aggregates::default(),
        undetected_faces: 0,
        undetected_interactions: 0,
    };
    for kind in metrics {
        match kind {
            MetricKind::Identity => {
                let reference = set
                    .reference
                    .ok_or_else(|| invalid!("identity metric needs a reference image"))?;
                let s = identity_preservation(set.images, reference, adapters)?;
                for (r, v) in rows.iter_mut().zip(&s.per_image) {
                    r.identity = Some(*v);
                }
                report.aggregates.identity_percent = Some(s.percent);
                report.undetected_faces = s.undetected;
            }
            MetricKind::Prompt => {
                let prompts = set
                    .prompts
                    .ok_or_else(|| invalid!("prompt metric needs one prompt per image"))?;
                let s = prompt_consistency(set.images, prompts, adapters)?;
                for (r, v) in rows.iter_mut().zip(&s.per_image) {
                    r.prompt_consistency = Some(*v);
                }
                report.aggregates.prompt_consistency_percent = Some(s.percent);
            }
            MetricKind::Interaction => {
                let triplets = set
                    .triplets
                    .ok_or_else(|| invalid!("interaction metric needs one triplet per image"))?;
                let s = interaction_alignment(set.images, triplets, adapters)?;
                for (r, v) in rows.iter_mut().zip(&s.per_image) {
                    r.interaction = Some(*v);
                }
                report.aggregates.interaction_alignment_percent = Some(s.percent);
                report.undetected_interactions = s.undetected;
            }
        }
    }
    report.rows = rows;
    Ok(report)
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned text table with one row per method.
    pub fn render_table(reports: &[MetricReport]) -> String {
        let header = [
            "Method",
            "Identity Preservation (%)",
            "Prompt Consistency (%)",
            "Interaction Alignment (%)",
        ];
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let body: Vec<[String; 4]> = reports
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    cell(r.aggregates.identity_percent),
                    cell(r.aggregates.prompt_consistency_percent),
                    cell(r.aggregates.interaction_alignment_percent),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = line(&header.map(String::from));
        out.push('\n');
        out.push_str(
            &widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("-|-"),
        );
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}
