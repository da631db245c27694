//! Scorer adapter contracts, scripted mocks, and an out-of-process adapter
//! speaking a JSON-lines protocol.
//!
//! Process protocol: one request object per line on the child's stdin,
//! `{"task": ..., "image_path": ..., "text": ...}` or with `"triplet"` in
//! place of `"text"`; one response object per line on stdout. Scoring tasks
//! answer `{"score": x}`, detection answers `{"boxes": [[x, y, w, h], ...]}`,
//! embedding answers `{"embedding": [...]}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::HoiTriplet;
use crate::error::{invalid, Error, Result};
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl FaceBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn whole(image: &RgbImage) -> Self {
        Self {
            x: 0,
            y: 0,
            w: image.width(),
            h: image.height(),
        }
    }
}

pub trait FaceDetector: Send + Sync {
    fn detect(&self, image: &RgbImage) -> Result<Vec<FaceBox>>;
}

/// Must return unit-norm vectors.
pub trait FaceEmbedder: Send + Sync {
    fn embed(&self, crop: &RgbImage) -> Result<Vec<f64>>;
}

/// Text-image alignment score in `[0, 1]`.
pub trait TextImageScorer: Send + Sync {
    fn score(&self, image: &RgbImage, text: &str) -> Result<f64>;
}

/// Confidence in `[0, 1]` that `triplet` is depicted; 0 when undetected.
pub trait HoiDetector: Send + Sync {
    fn score(&self, image: &RgbImage, triplet: &HoiTriplet) -> Result<f64>;
}

pub struct ScorerAdapters {
    pub face_detector: Box<dyn FaceDetector>,
    pub face_embedder: Box<dyn FaceEmbedder>,
    pub text_image_scorer: Box<dyn TextImageScorer>,
    pub hoi_detector: Box<dyn HoiDetector>,
}

/// One box covering the whole image.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeImageDetector;

impl FaceDetector for WholeImageDetector {
    fn detect(&self, image: &RgbImage) -> Result<Vec<FaceBox>> {
        Ok(vec![FaceBox::whole(image)])
    }
}

/// Boxes keyed by image checksum.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFaceDetector {
    pub by_image: HashMap<String, Vec<FaceBox>>,
    pub default: Vec<FaceBox>,
}

impl FaceDetector for ScriptedFaceDetector {
    fn detect(&self, image: &RgbImage) -> Result<Vec<FaceBox>> {
        Ok(self
            .by_image
            .get(&image.checksum())
            .unwrap_or(&self.default)
            .clone())
    }
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(invalid!("embedding must be finite and non-zero"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Embeddings keyed by crop checksum; vectors are normalized on insertion.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEmbedder {
    by_crop: HashMap<String, Vec<f64>>,
    default: Option<Vec<f64>>,
}

impl ScriptedEmbedder {
    pub fn new(default: Option<&[f64]>) -> Result<Self> {
        Ok(Self {
            by_crop: HashMap::new(),
            default: default.map(normalized).transpose()?,
        })
    }

    pub fn insert(&mut self, crop_checksum: impl Into<String>, v: &[f64]) -> Result<()> {
        self.by_crop.insert(crop_checksum.into(), normalized(v)?);
        Ok(())
    }
}

impl FaceEmbedder for ScriptedEmbedder {
    fn embed(&self, crop: &RgbImage) -> Result<Vec<f64>> {
        self.by_crop
            .get(&crop.checksum())
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| Error::Adapter(format!("no scripted embedding for crop {}", crop.checksum())))
    }
}

/// Same score for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl TextImageScorer for ConstantScorer {
    fn score(&self, _image: &RgbImage, _text: &str) -> Result<f64> {
        Ok(self.0)
    }
}

impl HoiDetector for ConstantScorer {
    fn score(&self, _image: &RgbImage, _triplet: &HoiTriplet) -> Result<f64> {
        Ok(self.0)
    }
}

/// Scores keyed by image checksum.
#[derive(Debug, Clone, Default)]
pub struct ScriptedScorer {
    pub by_image: HashMap<String, f64>,
    pub default: Option<f64>,
}

impl ScriptedScorer {
    fn lookup(&self, image: &RgbImage) -> Result<f64> {
        self.by_image
            .get(&image.checksum())
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::Adapter(format!("no scripted score for image {}", image.checksum())))
    }
}

impl TextImageScorer for ScriptedScorer {
    fn score(&self, image: &RgbImage, _text: &str) -> Result<f64> {
        self.lookup(image)
    }
}

impl HoiDetector for ScriptedScorer {
    fn score(&self, image: &RgbImage, _triplet: &HoiTriplet) -> Result<f64> {
        self.lookup(image)
    }
}

struct ProcessIo {
    _child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A long-lived child process answering JSON-lines requests. Images are
/// written as PNG to `scratch` and passed by path.
pub struct ProcessAdapter {
    command: Vec<String>,
    scratch: PathBuf,
    io: Mutex<Option<ProcessIo>>,
}

#[derive(Debug, Deserialize)]
struct ProcessResponse {
    score: Option<f64>,
    boxes: Option<Vec<[usize; 4]>>,
    embedding: Option<Vec<f64>>,
    error: Option<String>,
}

impl ProcessAdapter {
    pub fn new(command: Vec<String>, scratch: &Path) -> Result<Self> {
        if command.is_empty() {
            return Err(invalid!("process adapter needs a command"));
        }
        Ok(Self {
            command,
            scratch: scratch.to_path_buf(),
            io: Mutex::new(None),
        })
    }

    fn spawn(&self) -> Result<ProcessIo> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Adapter(format!("cannot start {:?}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ProcessIo {
            _child: child,
            stdin,
            stdout,
        })
    }

    fn image_path(&self, image: &RgbImage) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.scratch).map_err(|e| Error::io(&self.scratch, e))?;
        let path = self.scratch.join(format!("{}.png", &image.checksum()[..16]));
        if !path.exists() {
            image.save_png(&path)?;
        }
        Ok(path)
    }

    fn request(&self, request: serde_json::Value) -> Result<ProcessResponse> {
        let mut guard = self.io.lock().map_err(|_| Error::Adapter("adapter poisoned".into()))?;
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let io = guard.as_mut().expect("spawned above");
        let line = serde_json::to_string(&request)? + "\n";
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.flush())
            .map_err(|e| Error::Adapter(format!("adapter write failed: {e}")))?;
        let mut reply = String::new();
        let n = io
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Adapter(format!("adapter read failed: {e}")))?;
        if n == 0 {
            *guard = None;
            return Err(Error::Adapter("adapter process closed its output".into()));
        }
        let resp: ProcessResponse = serde_json::from_str(reply.trim())
            .map_err(|e| Error::Adapter(format!("bad adapter reply {reply:?}: {e}")))?;
        if let Some(err) = resp.error {
            return Err(Error::Adapter(err));
        }
        Ok(resp)
    }

    fn score_request(&self, request: serde_json::Value) -> Result<f64> {
        self.request(request)?
            .score
            .ok_or_else(|| Error::Adapter("adapter reply has no score".into()))
    }
}

impl TextImageScorer for ProcessAdapter {
    fn score(&self, image: &RgbImage, text: &str) -> Result<f64> {
        let path = self.image_path(image)?;
        self.score_request(json!({"task": "text_image", "image_path": path, "text": text}))
    }
}

impl HoiDetector for ProcessAdapter {
    fn score(&self, image: &RgbImage, triplet: &HoiTriplet) -> Result<f64> {
        let path = self.image_path(image)?;
        self.score_request(json!({"task": "hoi", "image_path": path, "triplet": triplet}))
    }
}

impl FaceDetector for ProcessAdapter {
    fn detect(&self, image: &RgbImage) -> Result<Vec<FaceBox>> {
        let path = self.image_path(image)?;
        let boxes = self
            .request(json!({"task": "face_detect", "image_path": path}))?
            .boxes
            .ok_or_else(|| Error::Adapter("adapter reply has no boxes".into()))?;
        Ok(boxes
            .into_iter()
            .map(|[x, y, w, h]| FaceBox { x, y, w, h })
            .collect())
    }
}

impl FaceEmbedder for ProcessAdapter {
    fn embed(&self, crop: &RgbImage) -> Result<Vec<f64>> {
        let path = self.image_path(crop)?;
        self.request(json!({"task": "face_embed", "image_path": path}))?
            .embedding
            .ok_or_else(|| Error::Adapter("adapter reply has no embedding".into()))
    }
}

/// One adapter slot in an adapter-spec JSON file. Scripted tables are keyed by
/// image file name; with the whole-image detector the face crop is the image
/// itself, so embeddings key the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterSlot {
    WholeImage,
    Constant {
        value: f64,
    },
    Scripted {
        #[serde(default)]
        scores: HashMap<String, f64>,
        #[serde(default)]
        boxes: HashMap<String, Vec<FaceBox>>,
        #[serde(default)]
        vectors: HashMap<String, Vec<f64>>,
        #[serde(default)]
        default: Option<serde_json::Value>,
    },
    Process {
        command: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub face_detector: AdapterSlot,
    pub face_embedder: AdapterSlot,
    pub text_image_scorer: AdapterSlot,
    pub hoi_detector: AdapterSlot,
}

impl AdapterSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds adapters; `checksums` maps file names to image checksums.
    /// Entries naming images outside `checksums` are skipped, so one spec can
    /// serve runs over different subsets.
    pub fn build(&self, checksums: &HashMap<String, String>, scratch: &Path) -> Result<ScorerAdapters> {
        let key = |name: &String| checksums.get(name).cloned();
        let slot_name = |s: &AdapterSlot| format!("{s:?}");

        let face_detector: Box<dyn FaceDetector> = match &self.face_detector {
            AdapterSlot::WholeImage => Box::new(WholeImageDetector),
            AdapterSlot::Scripted { boxes, default, .. } => {
                let mut d = ScriptedFaceDetector::default();
                for (name, b) in boxes {
                    if let Some(k) = key(name) {
                        d.by_image.insert(k, b.clone());
                    }
                }
                if let Some(v) = default {
                    d.default = serde_json::from_value(v.clone())?;
                }
                Box::new(d)
            }
            AdapterSlot::Process { command } => Box::new(ProcessAdapter::new(command.clone(), scratch)?),
            other => return Err(invalid!("{} cannot act as a face detector", slot_name(other))),
        };
        let face_embedder: Box<dyn FaceEmbedder> = match &self.face_embedder {
            AdapterSlot::Scripted { vectors, default, .. } => {
                let default: Option<Vec<f64>> = default.clone().map(serde_json::from_value).transpose()?;
                let mut e = ScriptedEmbedder::new(default.as_deref())?;
                for (name, v) in vectors {
                    if let Some(k) = key(name) {
                        e.insert(k, v)?;
                    }
                }
                Box::new(e)
            }
            AdapterSlot::Process { command } => Box::new(ProcessAdapter::new(command.clone(), scratch)?),
            other => return Err(invalid!("{} cannot act as a face embedder", slot_name(other))),
        };
        let scorer = |slot: &AdapterSlot| -> Result<ScorerKind> {
            Ok(match slot {
                AdapterSlot::Constant { value } => ScorerKind::Constant(ConstantScorer(*value)),
                AdapterSlot::Scripted { scores, default, .. } => {
                    let mut s = ScriptedScorer {
                        default: default.clone().map(serde_json::from_value).transpose()?,
                        ..ScriptedScorer::default()
                    };
                    for (name, v) in scores {
                        if let Some(k) = key(name) {
                            s.by_image.insert(k, *v);
                        }
                    }
                    ScorerKind::Scripted(s)
                }
                AdapterSlot::Process { command } => {
                    ScorerKind::Process(ProcessAdapter::new(command.clone(), scratch)?)
                }
                AdapterSlot::WholeImage => return Err(invalid!("whole_image is only a face detector")),
            })
        };
        Ok(ScorerAdapters {
            face_detector,
            face_embedder,
            text_image_scorer: scorer(&self.text_image_scorer)?.into_text(),
            hoi_detector: scorer(&self.hoi_detector)?.into_hoi(),
        })
    }
}

enum ScorerKind {
    Constant(ConstantScorer),
    Scripted(ScriptedScorer),
    Process(ProcessAdapter),
}

impl ScorerKind {
    fn into_text(self) -> Box<dyn TextImageScorer> {
        match self {
            ScorerKind::Constant(s) => Box::new(s),
            ScorerKind::Scripted(s) => Box::new(s),
            ScorerKind::Process(s) => Box::new(s),
        }
    }

    fn into_hoi(self) -> Box<dyn HoiDetector> {
        match self {
            ScorerKind::Constant(s) => Box::new(s),
            ScorerKind::Scripted(s) => Box::new(s),
            ScorerKind::Process(s) => Box::new(s),
        }
    }
}
