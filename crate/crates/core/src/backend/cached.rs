use std::path::Path;

use super::{Backend, BackendDescriptor, BackendKind, DetectResponse, ImageRef, WireDetection};
use crate::data::{load_prediction_cache, DetectionSet};
use crate::error::{Error, Result};

/// Serves detections from a prediction cache. Read-only.
#[derive(Debug, Clone)]
pub struct CachedBackend {
    descriptor: BackendDescriptor,
    set: DetectionSet,
}

impl CachedBackend {
    pub fn new(name: impl Into<String>, set: DetectionSet) -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: name.into(),
                kind: BackendKind::Cached,
                supports_background_class: false,
                max_concurrency: std::thread::available_parallelism().map_or(4, |n| n.get()),
                base_url: None,
            },
            set,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let set = load_prediction_cache(path)?;
        let stem = path
            .file_stem()
            .map_or_else(|| "cache".to_string(), |s| s.to_string_lossy().into_owned());
        Ok(Self::new(format!("cached:{stem}"), set))
    }

    pub fn detections(&self) -> &DetectionSet {
        &self.set
    }
}

impl Backend for CachedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn detect(&self, image: &ImageRef, prompts: &[String]) -> Result<DetectResponse> {
        let mut detections = Vec::new();
        for (index, prompt) in prompts.iter().enumerate() {
            let stored = self
                .set
                .get(image.image_id, prompt)
                .ok_or_else(|| Error::MissingPrediction {
                    image_id: image.image_id,
                    prompt: prompt.clone(),
                })?;
            detections.extend(stored.iter().map(|d| WireDetection {
                bbox: d.bbox,
                score: d.score,
                prompt_index: index,
            }));
        }
        Ok(DetectResponse { detections })
    }
}
