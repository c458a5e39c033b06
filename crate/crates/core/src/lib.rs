//! Axis-structured prompt search for zero-shot open-vocabulary detectors.
//!
//! Prompts are assembled from eight interpretable axes. A one-factor-at-a-time
//! sweep measures each axis in isolation, then a staged combinatorial search
//! crosses the winners, adds negation clauses to the best few prompts, and
//! tries emoji on the single best one. Every prompt is scored by single-class
//! mAP@0.5 against COCO-style ground truth.

pub mod axis;
pub mod backend;
pub mod data;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod plan;
pub mod translate;

pub use axis::{render_prompt, Axis, AxisName, AxisSet, Level, PromptSpec, RenderedPrompt};
pub use data::{load_coco, load_prediction_cache, BBox, Detection, DetectionSet, GroundTruthSet};
pub use error::{Error, Result};
pub use eval::{average_precision, f1_max_threshold, iou, map_at_50, match_at_iou, EvalOptions, EvalResult};
pub use pipeline::{Pipeline, RunConfig};
