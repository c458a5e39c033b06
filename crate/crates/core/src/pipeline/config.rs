use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;
use crate::error::{Error, Result};
use crate::plan::Phase2Config;
use crate::translate::LlmEndpoint;

/// Everything a run needs. Relative paths in a config file are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub axes: PathBuf,
    pub gt: PathBuf,
    /// Prediction cache; shorthand for `backend = cached:<path>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    #[serde(default = "yes")]
    pub background_class: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "yes")]
    pub emoji_stage: bool,
    #[serde(default = "default_iou")]
    pub iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dets: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub resume: bool,
    /// Dataset used by `calibrate`; defaults to `gt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmEndpoint>,
}

fn yes() -> bool {
    true
}

fn default_top_n() -> usize {
    3
}

fn default_iou() -> f64 {
    0.5
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(axes: impl Into<PathBuf>, gt: impl Into<PathBuf>, backend: BackendSpec) -> Self {
        Self {
            axes: axes.into(),
            gt: gt.into(),
            predictions: None,
            backend: Some(backend),
            background_class: true,
            image_root: None,
            dataset_id: None,
            top_n: default_top_n(),
            emoji_stage: true,
            iou: default_iou(),
            max_dets: None,
            seed: 0,
            out: default_out(),
            resume: false,
            calibration_gt: None,
            llm: None,
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if let Some(dir) = path.parent() {
            config.resolve_relative_to(dir);
        }
        Ok(config)
    }

    fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.axes);
        fix(&mut self.gt);
        fix(&mut self.out);
        if let Some(p) = &mut self.predictions {
            fix(p);
        }
        if let Some(p) = &mut self.calibration_gt {
            fix(p);
        }
        if let Some(LlmEndpoint::Stub { stub_file }) = &mut self.llm {
            fix(stub_file);
        }
        let rebase = |s: &str| {
            if Path::new(s).is_relative() {
                dir.join(s).to_string_lossy().into_owned()
            } else {
                s.to_string()
            }
        };
        self.backend = match self.backend.take() {
            Some(BackendSpec::Cached(p)) => Some(BackendSpec::Cached(rebase(&p))),
            Some(BackendSpec::Mock(p)) => Some(BackendSpec::Mock(rebase(&p))),
            other => other,
        };
    }

    pub fn phase2(&self) -> Result<Phase2Config> {
        Phase2Config::new(self.top_n, self.emoji_stage)
    }

    /// Effective backend, falling back to the prediction cache.
    pub fn backend_spec(&self) -> Result<BackendSpec> {
        match (&self.backend, &self.predictions) {
            (Some(spec), _) => Ok(spec.clone()),
            (None, Some(p)) => Ok(BackendSpec::Cached(p.to_string_lossy().into_owned())),
            (None, None) => Err(Error::Config("no backend or prediction cache configured".into())),
        }
    }

    pub fn dataset_id(&self) -> String {
        self.dataset_id.clone().unwrap_or_else(|| {
            self.gt
                .file_stem()
                .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
        })
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.out.join("ledger.jsonl")
    }

    pub fn validate(&self) -> Result<()> {
        self.phase2()?;
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(Error::Config(format!("iou threshold {} outside (0, 1]", self.iou)));
        }
        if self.max_dets == Some(0) {
            return Err(Error::Config("max_dets must be positive".into()));
        }
        let mut required = vec![&self.axes, &self.gt];
        required.extend(self.predictions.iter());
        required.extend(self.calibration_gt.iter());
        for path in required {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        match self.backend_spec()? {
            BackendSpec::Cached(p) | BackendSpec::Mock(p) if !Path::new(&p).exists() => {
                Err(Error::Config(format!("{p} does not exist")))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"axes": "axes.json", "gt": "gt.json", "backend": "mock:mock.json"}"#).unwrap();
        let config = RunConfig::from_path(&path).unwrap();
        assert_eq!(config.top_n, 3);
        assert_eq!(config.iou, 0.5);
        assert!(config.background_class);
        assert_eq!(config.axes, dir.path().join("axes.json"));
        assert_eq!(
            config.backend,
            Some(BackendSpec::Mock(dir.path().join("mock.json").to_string_lossy().into_owned()))
        );
        assert_eq!(config.dataset_id(), "gt");
    }

    #[test]
    fn zero_top_n_rejected() {
        let mut config = RunConfig::new("a", "b", BackendSpec::Mock("m".into()));
        config.top_n = 0;
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_files_rejected() {
        let config = RunConfig::new("/nonexistent/a.json", "/nonexistent/b.json", BackendSpec::Mock("m".into()));
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }
}
