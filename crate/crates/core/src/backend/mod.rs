//! Detector backends behind one interface.
//!
//! Three kinds exist: a read-only prediction cache, a remote HTTP adapter,
//! and a seeded mock used for end-to-end runs without any model. The
//! empty-string background class is applied here, before evaluation ever
//! sees a detection.

mod cached;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};

pub use cached::CachedBackend;
pub use mock::{FalsePositiveRule, MockBackend, MockFixture, TokenDelta, TruePositiveRule};
pub use remote::{RemoteBackend, RetryPolicy};

use crate::data::{BBox, Detection, DetectionSet, GroundTruthSet, ImageInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Cached,
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    pub supports_background_class: bool,
    pub max_concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

/// What a backend needs to locate an image: the dataset id for cached and
/// mock backends, the path for remote adapters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub image_id: i64,
    pub path: String,
}

impl ImageRef {
    pub fn from_info(info: &ImageInfo, root: Option<&str>) -> Self {
        let path = match root {
            Some(root) if !root.is_empty() => format!("{}/{}", root.trim_end_matches('/'), info.file_name),
            _ => info.file_name.clone(),
        };
        Self {
            image_id: info.id,
            path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: BBox,
    pub score: f64,
    pub prompt_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

impl DetectResponse {
    /// Checks the response against the request's prompt count.
    pub fn validate(&self, prompt_count: usize) -> Result<()> {
        for det in &self.detections {
            if det.prompt_index >= prompt_count {
                return Err(Error::RemoteSchema(format!(
                    "prompt_index {} with {prompt_count} prompts",
                    det.prompt_index
                )));
            }
            if !det.score.is_finite() || !(0.0..=1.0).contains(&det.score) {
                return Err(Error::RemoteSchema(format!("score {} outside [0, 1]", det.score)));
            }
            if !det.bbox.to_array().iter().all(|v| v.is_finite()) {
                return Err(Error::RemoteSchema(format!("non-finite bbox {:?}", det.bbox.to_array())));
            }
        }
        Ok(())
    }

    /// Detections for prompt `index`, in response order, degenerate boxes dropped.
    pub fn for_prompt(&self, index: usize) -> Vec<Detection> {
        self.detections
            .iter()
            .filter(|d| d.prompt_index == index && d.bbox.has_area())
            .map(|d| Detection {
                bbox: d.bbox,
                score: d.score,
            })
            .collect()
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn detect(&self, image: &ImageRef, prompts: &[String]) -> Result<DetectResponse>;
}

/// Drops detections bound to the appended background slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackgroundFilter {
    background_index: usize,
}

impl BackgroundFilter {
    pub fn background_index(&self) -> usize {
        self.background_index
    }

    pub fn apply(&self, mut response: DetectResponse) -> DetectResponse {
        response
            .detections
            .retain(|d| d.prompt_index != self.background_index);
        response
    }
}

/// Appends the empty-string background class to `prompts`.
pub fn apply_background_class(
    prompts: &[String],
    backend: &BackendDescriptor,
) -> Result<(Vec<String>, BackgroundFilter)> {
    if prompts.is_empty() {
        return Err(Error::InvalidRequest("no prompts".into()));
    }
    if prompts.iter().any(String::is_empty) {
        return Err(Error::InvalidRequest("prompt list already contains an empty prompt".into()));
    }
    if !backend.supports_background_class {
        return Err(Error::BackgroundUnsupported(backend.name.clone()));
    }
    let mut wire = prompts.to_vec();
    wire.push(String::new());
    Ok((
        wire,
        BackgroundFilter {
            background_index: prompts.len(),
        },
    ))
}

/// Runs one request, with the background class when `background` is set
/// and the backend supports it. Unsupported backends get the prompts as-is.
pub fn detect_with_background(
    backend: &dyn Backend,
    image: &ImageRef,
    prompts: &[String],
    background: bool,
) -> Result<DetectResponse> {
    if background {
        match apply_background_class(prompts, backend.descriptor()) {
            Ok((wire, filter)) => {
                let response = backend.detect(image, &wire)?;
                response.validate(wire.len())?;
                return Ok(filter.apply(response));
            }
            Err(Error::BackgroundUnsupported(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let response = backend.detect(image, prompts)?;
    response.validate(prompts.len())?;
    Ok(response)
}

/// Queries every image of `gt` for each prompt and returns the results in
/// prediction-cache form. A cached backend over the output reproduces them.
pub fn record(
    backend: &dyn Backend,
    gt: &GroundTruthSet,
    prompts: &[String],
    background: bool,
    image_root: Option<&str>,
) -> Result<DetectionSet> {
    let mut set = DetectionSet::new();
    for prompt in prompts {
        let single = [prompt.clone()];
        for info in &gt.images {
            let image = ImageRef::from_info(info, image_root);
            let response = detect_with_background(backend, &image, &single, background)?;
            set.insert(info.id, prompt.clone(), response.for_prompt(0));
        }
    }
    Ok(set)
}

/// Parsed `--backend` value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Cached(String),
    Remote(String),
    Mock(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("backend `{s}` must be cached:, remote: or mock:")))?;
        if rest.is_empty() {
            return Err(Error::Config(format!("backend `{s}` has an empty target")));
        }
        match kind {
            "cached" => Ok(BackendSpec::Cached(rest.into())),
            "remote" => Ok(BackendSpec::Remote(rest.into())),
            "mock" => Ok(BackendSpec::Mock(rest.into())),
            other => Err(Error::Config(format!("unknown backend kind `{other}`"))),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(spec: BackendSpec) -> Self {
        spec.to_string()
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Cached(p) => write!(f, "cached:{p}"),
            BackendSpec::Remote(u) => write!(f, "remote:{u}"),
            BackendSpec::Mock(p) => write!(f, "mock:{p}"),
        }
    }
}

impl BackendSpec {
    /// Opens the backend. Mock backends draw their ground truth from the
    /// fixture when it names one, otherwise from `gt`.
    pub fn open(&self, gt: &GroundTruthSet, seed: u64) -> Result<Box<dyn Backend>> {
        Ok(match self {
            BackendSpec::Cached(path) => Box::new(CachedBackend::open(path)?),
            BackendSpec::Remote(url) => Box::new(RemoteBackend::connect(url, RetryPolicy::default())?),
            BackendSpec::Mock(path) => Box::new(MockBackend::open(path, gt, seed)?),
        })
    }
}
