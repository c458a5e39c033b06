//! Ground truth, predictions, and the two on-disk formats that carry them:
//! a COCO JSON subset for annotations and a JSON Lines prediction cache.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

/// Axis-aligned box in absolute pixels, `[x, y, w, h]` with a top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// From corner coordinates `(x1, y1)`-`(x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn has_area(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: i64,
    pub file_name: String,
    #[serde(default)]
    pub width: f64,
    #[serde(default)]
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: i64,
    pub image_id: i64,
    pub bbox: BBox,
}

/// Single-class ground truth, ordered by image id then annotation id.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthSet {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub category: String,
    /// Clamped boxes and other non-fatal ingest notes.
    pub warnings: Vec<String>,
}

impl PartialEq for GroundTruthSet {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images
            && self.annotations == other.annotations
            && self.category == other.category
    }
}

#[derive(Deserialize, Serialize)]
struct CocoFile {
    images: Vec<ImageInfo>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize, Serialize)]
struct CocoAnnotation {
    id: i64,
    image_id: i64,
    bbox: [f64; 4],
    #[serde(default = "default_category")]
    category_id: i64,
}

#[derive(Deserialize, Serialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

fn default_category() -> i64 {
    1
}

impl GroundTruthSet {
    pub fn new(images: Vec<ImageInfo>, annotations: Vec<Annotation>, category: impl Into<String>) -> Result<Self> {
        Self::build(images, annotations, category.into(), Path::new("<memory>"))
    }

    fn build(
        mut images: Vec<ImageInfo>,
        mut annotations: Vec<Annotation>,
        category: String,
        path: &Path,
    ) -> Result<Self> {
        images.sort_by_key(|i| i.id);
        if let Some(w) = images.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::parse(path, format!("duplicate image id {}", w[0].id)));
        }
        let mut ann_ids = HashSet::new();
        let mut warnings = Vec::new();
        for ann in &mut annotations {
            if !ann_ids.insert(ann.id) {
                return Err(Error::parse(path, format!("duplicate annotation id {}", ann.id)));
            }
            let Ok(pos) = images.binary_search_by_key(&ann.image_id, |i| i.id) else {
                return Err(Error::DanglingAnnotation {
                    ann_id: ann.id,
                    image_id: ann.image_id,
                });
            };
            if !ann.bbox.has_area() {
                return Err(Error::ZeroAreaBox {
                    ann_id: ann.id,
                    bbox: ann.bbox.to_array(),
                });
            }
            let image = &images[pos];
            if let Some(clamped) = clamp_to_image(ann.bbox, image.width, image.height) {
                if !clamped.has_area() {
                    return Err(Error::ZeroAreaBox {
                        ann_id: ann.id,
                        bbox: ann.bbox.to_array(),
                    });
                }
                let note = format!(
                    "annotation {} clamped from {:?} to {:?} (image {} is {}x{})",
                    ann.id,
                    ann.bbox.to_array(),
                    clamped.to_array(),
                    image.id,
                    image.width,
                    image.height
                );
                warn!("{note}");
                warnings.push(note);
                ann.bbox = clamped;
            }
        }
        annotations.sort_by_key(|a| (a.image_id, a.id));
        Ok(Self {
            images,
            annotations,
            category,
            warnings,
        })
    }

    pub fn from_coco_str(text: &str, path: &Path) -> Result<Self> {
        let file: CocoFile = serde_json::from_str(text).map_err(|e| Error::parse(path, e))?;
        if file.categories.len() > 1 {
            warn!(
                "{}: {} categories present, evaluating all annotations as one class",
                path.display(),
                file.categories.len()
            );
        }
        let category = file.categories.first().map(|c| c.name.clone()).unwrap_or_default();
        let annotations = file
            .annotations
            .into_iter()
            .map(|a| Annotation {
                id: a.id,
                image_id: a.image_id,
                bbox: a.bbox.into(),
            })
            .collect();
        Self::build(file.images, annotations, category, path)
    }

    pub fn to_coco_json(&self) -> String {
        let file = CocoFile {
            images: self.images.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| CocoAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    bbox: a.bbox.to_array(),
                    category_id: 1,
                })
                .collect(),
            categories: vec![CocoCategory {
                id: 1,
                name: self.category.clone(),
            }],
        };
        serde_json::to_string_pretty(&file).expect("coco file serializes")
    }

    pub fn image(&self, id: i64) -> Option<&ImageInfo> {
        self.images
            .binary_search_by_key(&id, |i| i.id)
            .ok()
            .map(|pos| &self.images[pos])
    }

    /// Annotations of one image, in annotation-id order.
    pub fn annotations_for(&self, image_id: i64) -> &[Annotation] {
        let start = self.annotations.partition_point(|a| a.image_id < image_id);
        let end = self.annotations.partition_point(|a| a.image_id <= image_id);
        &self.annotations[start..end]
    }
}

/// Returns the clamped box when `bbox` spills outside a `width`x`height` image.
/// Images without recorded dimensions are never clamped.
fn clamp_to_image(bbox: BBox, width: f64, height: f64) -> Option<BBox> {
    if width <= 0.0 || height <= 0.0 {
        return None;
    }
    let x0 = bbox.x.clamp(0.0, width);
    let y0 = bbox.y.clamp(0.0, height);
    let x1 = (bbox.x + bbox.w).clamp(0.0, width);
    let y1 = (bbox.y + bbox.h).clamp(0.0, height);
    let clamped = BBox::new(x0, y0, x1 - x0, y1 - y0);
    (clamped != bbox).then_some(clamped)
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<GroundTruthSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GroundTruthSet::from_coco_str(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// Predicted boxes keyed by `(image_id, rendered prompt)`.
#[derive(Debug, Clone, Default)]
pub struct DetectionSet {
    entries: BTreeMap<(i64, String), Vec<Detection>>,
    pub warnings: Vec<String>,
}

impl PartialEq for DetectionSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    image_id: i64,
    prompt: String,
    detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces any previous entry for the pair.
    pub fn insert(&mut self, image_id: i64, prompt: impl Into<String>, detections: Vec<Detection>) {
        self.entries.insert((image_id, prompt.into()), detections);
    }

    pub fn get(&self, image_id: i64, prompt: &str) -> Option<&[Detection]> {
        self.entries
            .get(&(image_id, prompt.to_string()))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_prompt(&self, prompt: &str) -> bool {
        self.entries.keys().any(|(_, p)| p == prompt)
    }

    pub fn prompts(&self) -> Vec<&str> {
        let mut prompts: Vec<&str> = self.entries.keys().map(|(_, p)| p.as_str()).collect();
        prompts.sort_unstable();
        prompts.dedup();
        prompts
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &str, &[Detection])> {
        self.entries
            .iter()
            .map(|((id, p), d)| (*id, p.as_str(), d.as_slice()))
    }

    pub fn from_jsonl_str(text: &str, path: &Path) -> Result<Self> {
        let mut set = DetectionSet::new();
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(line)
                .map_err(|e| Error::parse(path, format!("line {lineno}: {e}")))?;
            let mut detections = Vec::with_capacity(parsed.detections.len());
            for det in parsed.detections {
                if !det.score.is_finite() || !(0.0..=1.0).contains(&det.score) {
                    return Err(Error::ScoreOutOfRange {
                        path: path.to_path_buf(),
                        line: lineno,
                        score: det.score,
                    });
                }
                if !det.bbox.has_area() {
                    let note = format!(
                        "{}:{lineno}: dropped degenerate box {:?}",
                        path.display(),
                        det.bbox.to_array()
                    );
                    warn!("{note}");
                    set.warnings.push(note);
                    continue;
                }
                detections.push(det);
            }
            let key = (parsed.image_id, parsed.prompt);
            if set.entries.insert(key.clone(), detections).is_some() {
                let note = format!(
                    "{}:{lineno}: duplicate entry for image {} prompt `{}`, keeping the later line",
                    path.display(),
                    key.0,
                    key.1
                );
                warn!("{note}");
                set.warnings.push(note);
            }
        }
        Ok(set)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ((image_id, prompt), detections) in &self.entries {
            let line = CacheLine {
                image_id: *image_id,
                prompt: prompt.clone(),
                detections: detections.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("cache line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_prediction_cache(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DetectionSet::from_jsonl_str(&text, path)
}
