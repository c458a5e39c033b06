//! Seeded stand-in for a detector.
//!
//! True positives are ground-truth boxes with seeded positional noise. Their
//! scores are `base + sum(bonuses for tokens in the prompt) - jitter`, where
//! the jitter is drawn from `(seed, image, prompt, annotation)`. False
//! positives come from a fixed pool of candidate slots per image; a slot
//! fires when its draw falls under the prompt-dependent rate, so lowering the
//! rate only ever removes false positives. Low-scoring false positives bind
//! to the background slot whenever one is present in the request.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, BackendKind, DetectResponse, ImageRef, WireDetection};
use crate::data::{load_coco, BBox, GroundTruthSet};
use crate::error::{Error, Result};
use crate::eval::iou;

const DEFAULT_WIDTH: f64 = 640.0;
const DEFAULT_HEIGHT: f64 = 480.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDelta {
    pub token: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruePositiveRule {
    pub base_score: f64,
    /// Maximum amount subtracted by the seeded jitter.
    pub jitter: f64,
    /// Positional noise as a fraction of box width/height.
    pub box_noise: f64,
    pub miss_rate: f64,
    pub token_bonuses: Vec<TokenDelta>,
}

impl Default for TruePositiveRule {
    fn default() -> Self {
        Self {
            base_score: 0.5,
            jitter: 0.1,
            box_noise: 0.05,
            miss_rate: 0.0,
            token_bonuses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FalsePositiveRule {
    pub slots_per_image: usize,
    pub rate: f64,
    pub rate_deltas: Vec<TokenDelta>,
    pub score_min: f64,
    pub score_max: f64,
    /// Side length range of generated boxes, in pixels.
    pub size_min: f64,
    pub size_max: f64,
    /// False positives scoring below this go to the background slot when present.
    pub background_below: f64,
}

impl Default for FalsePositiveRule {
    fn default() -> Self {
        Self {
            slots_per_image: 0,
            rate: 0.0,
            rate_deltas: Vec::new(),
            score_min: 0.1,
            score_max: 0.5,
            size_min: 8.0,
            size_max: 32.0,
            background_below: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default = "default_name")]
    pub name: String,
    /// COCO file, relative to the fixture file, supplying the scene.
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub supports_background_class: bool,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub true_positives: TruePositiveRule,
    #[serde(default)]
    pub false_positives: FalsePositiveRule,
}

fn default_name() -> String {
    "mock".into()
}

fn default_concurrency() -> usize {
    4
}

impl MockFixture {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

pub struct MockBackend {
    descriptor: BackendDescriptor,
    fixture: MockFixture,
    gt: GroundTruthSet,
    seed: u64,
}

fn token_sum(rules: &[TokenDelta], prompt: &str) -> f64 {
    rules
        .iter()
        .filter(|r| prompt.contains(r.token.as_str()))
        .map(|r| r.delta)
        .sum()
}

impl MockBackend {
    pub fn new(fixture: MockFixture, gt: GroundTruthSet, seed: u64) -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: fixture.name.clone(),
                kind: BackendKind::Mock,
                supports_background_class: fixture.supports_background_class,
                max_concurrency: fixture.max_concurrency.max(1),
                base_url: None,
            },
            fixture,
            gt,
            seed,
        }
    }

    /// Loads a fixture; its own ground truth, if named, replaces `gt`.
    pub fn open(path: impl AsRef<Path>, gt: &GroundTruthSet, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let fixture = MockFixture::from_path(path)?;
        let scene = match &fixture.ground_truth {
            Some(rel) => load_coco(path.parent().unwrap_or(Path::new(".")).join(rel))?,
            None => gt.clone(),
        };
        Ok(Self::new(fixture, scene, seed))
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    fn rng(&self, tag: &str, image_id: i64, prompt: &str, index: u64) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(image_id.to_le_bytes());
        hasher.update((prompt.len() as u64).to_le_bytes());
        hasher.update(prompt.as_bytes());
        hasher.update(index.to_le_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn detect_one(&self, image_id: i64, prompt: &str, prompt_index: usize, background: Option<usize>) -> Vec<WireDetection> {
        let tp = &self.fixture.true_positives;
        let fp = &self.fixture.false_positives;
        let mut out = Vec::new();

        let bonus = token_sum(&tp.token_bonuses, prompt);
        for ann in self.gt.annotations_for(image_id) {
            let mut placement = self.rng("tp-box", image_id, "", ann.id as u64);
            if placement.gen::<f64>() < tp.miss_rate {
                continue;
            }
            let mut wiggle = |size: f64| (placement.gen::<f64>() * 2.0 - 1.0) * tp.box_noise * size;
            let b = ann.bbox;
            let bbox = BBox::new(b.x + wiggle(b.w), b.y + wiggle(b.h), b.w + wiggle(b.w), b.h + wiggle(b.h));
            let jitter = self.rng("tp-score", image_id, prompt, ann.id as u64).gen::<f64>() * tp.jitter;
            out.push(WireDetection {
                bbox,
                score: (tp.base_score + bonus - jitter).clamp(0.0, 1.0),
                prompt_index,
            });
        }

        let (width, height) = match self.gt.image(image_id) {
            Some(info) if info.width > 0.0 && info.height > 0.0 => (info.width, info.height),
            _ => (DEFAULT_WIDTH, DEFAULT_HEIGHT),
        };
        let rate = (fp.rate + token_sum(&fp.rate_deltas, prompt)).clamp(0.0, 1.0);
        for slot in 0..fp.slots_per_image {
            // slot draws ignore the prompt so that a lower rate yields a subset
            let mut r = self.rng("fp", image_id, "", slot as u64);
            let fire = r.gen::<f64>();
            let score = fp.score_min + r.gen::<f64>() * (fp.score_max - fp.score_min);
            let bbox = self.place_false_positive(&mut r, image_id, width, height);
            if fire >= rate {
                continue;
            }
            let index = match background {
                Some(bg) if score < fp.background_below => bg,
                _ => prompt_index,
            };
            out.push(WireDetection {
                bbox,
                score: score.clamp(0.0, 1.0),
                prompt_index: index,
            });
        }
        out
    }

    fn place_false_positive(&self, r: &mut ChaCha8Rng, image_id: i64, width: f64, height: f64) -> BBox {
        let fp = &self.fixture.false_positives;
        let gts = self.gt.annotations_for(image_id);
        let mut candidate = BBox::new(0.0, 0.0, 1.0, 1.0);
        for _ in 0..16 {
            let w = fp.size_min + r.gen::<f64>() * (fp.size_max - fp.size_min);
            let h = fp.size_min + r.gen::<f64>() * (fp.size_max - fp.size_min);
            let x = r.gen::<f64>() * (width - w).max(0.0);
            let y = r.gen::<f64>() * (height - h).max(0.0);
            candidate = BBox::new(x, y, w.max(1.0), h.max(1.0));
            if gts.iter().all(|g| iou(&g.bbox, &candidate) < 0.1) {
                break;
            }
        }
        candidate
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn detect(&self, image: &ImageRef, prompts: &[String]) -> Result<DetectResponse> {
        if self.gt.image(image.image_id).is_none() {
            return Err(Error::UnknownImage(image.image_id));
        }
        let background = prompts.iter().position(String::is_empty);
        let detections = prompts
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .flat_map(|(i, p)| self.detect_one(image.image_id, p, i, background))
            .collect();
        Ok(DetectResponse { detections })
    }
}
