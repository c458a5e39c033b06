//! Single-class detection metrics: IoU, greedy COCO-style matching,
//! 101-point interpolated AP at a fixed IoU threshold, PR and F1 curves,
//! and F1-max confidence threshold selection.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Annotation, BBox, Detection, DetectionSet, GroundTruthSet};
use crate::error::{Error, Result};

/// Recall levels sampled by the interpolated AP.
pub const RECALL_POINTS: usize = 101;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPrediction {
    /// Position of the prediction in its input slice.
    pub index: usize,
    pub score: f64,
    pub is_tp: bool,
    pub matched_ann: Option<i64>,
}

/// Matching outcome for one image. Predictions are in score-descending
/// order with ties kept in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub predictions: Vec<MatchedPrediction>,
    pub fn_count: usize,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.predictions.iter().filter(|p| p.is_tp).count()
    }

    pub fn fp_count(&self) -> usize {
        self.predictions.len() - self.tp_count()
    }
}

fn score_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    // stable: equal scores keep ingestion order
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy matching: each prediction, highest score first, claims the
/// still-unmatched ground truth with the largest IoU at or above `iou_thresh`.
/// Equal IoUs go to the earlier annotation.
pub fn match_at_iou(preds: &[Detection], gts: &[Annotation], iou_thresh: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut predictions = Vec::with_capacity(preds.len());
    for idx in score_order(preds) {
        let pred = &preds[idx];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let overlap = iou(&pred.bbox, &gt.bbox);
            if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        predictions.push(MatchedPrediction {
            index: idx,
            score: pred.score,
            is_tp: best.is_some(),
            matched_ann: best.map(|(g, _)| gts[g].id),
        });
    }
    MatchResult {
        predictions,
        fn_count: taken.iter().filter(|t| !**t).count(),
    }
}

/// All predictions of a dataset, pooled and sorted by score.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatches {
    /// `(score, is_tp)` in score-descending order, ties in ingestion order.
    pub ranked: Vec<(f64, bool)>,
    pub num_gt: usize,
}

impl PooledMatches {
    /// `per_image` must be in ingestion (image) order.
    pub fn from_images<'a>(per_image: impl IntoIterator<Item = &'a MatchResult>, num_gt: usize) -> Self {
        let mut ranked: Vec<(f64, bool)> = per_image
            .into_iter()
            .flat_map(|m| m.predictions.iter().map(|p| (p.score, p.is_tp)))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        Self { ranked, num_gt }
    }

    /// `(tp, fp)` counts after each prediction.
    fn cumulative(&self) -> Vec<(usize, usize)> {
        self.ranked
            .iter()
            .scan((0usize, 0usize), |acc, &(_, tp)| {
                if tp {
                    acc.0 += 1;
                } else {
                    acc.1 += 1;
                }
                Some(*acc)
            })
            .collect()
    }
}

/// 101-point interpolated AP. Returns 1.0 for the degenerate case of no
/// ground truth and no predictions, 0.0 when only one side is empty.
pub fn average_precision(pool: &PooledMatches) -> f64 {
    match (pool.num_gt, pool.ranked.len()) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let cum = pool.cumulative();
    let recall: Vec<f64> = cum.iter().map(|(tp, _)| *tp as f64 / pool.num_gt as f64).collect();
    let mut precision: Vec<f64> = cum.iter().map(|(tp, fp)| *tp as f64 / (tp + fp) as f64).collect();
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total: f64 = (0..RECALL_POINTS)
        .map(|k| {
            let level = k as f64 / (RECALL_POINTS - 1) as f64;
            let pos = recall.partition_point(|r| *r < level);
            precision.get(pos).copied().unwrap_or(0.0)
        })
        .sum();
    total / RECALL_POINTS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Calibration {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when there was nothing to calibrate on; the threshold is then 1.0.
    pub no_detections: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub map_at_50: f64,
    pub iou_threshold: f64,
    pub pr_points: Vec<PrPoint>,
    /// One row per distinct score, highest threshold first.
    pub f1_curve: Vec<F1Point>,
    pub counts: Counts,
    pub num_gt: usize,
    pub num_predictions: usize,
    /// Both ground truth and predictions were empty; AP is defined as 1.
    pub degenerate: bool,
}

impl EvalResult {
    fn from_pool(pool: &PooledMatches, iou_threshold: f64) -> Self {
        let cum = pool.cumulative();
        let recall_of = |tp: usize| if pool.num_gt == 0 { 0.0 } else { tp as f64 / pool.num_gt as f64 };
        let pr_points = cum
            .iter()
            .map(|&(tp, fp)| PrPoint {
                recall: recall_of(tp),
                precision: tp as f64 / (tp + fp) as f64,
            })
            .collect();

        let mut f1_curve = Vec::new();
        for (i, &(score, _)) in pool.ranked.iter().enumerate() {
            let last_of_score = pool.ranked.get(i + 1).is_none_or(|next| next.0 != score);
            if !last_of_score {
                continue;
            }
            let (tp, fp) = cum[i];
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = recall_of(tp);
            f1_curve.push(F1Point {
                threshold: score,
                precision,
                recall,
                f1: f1(precision, recall),
            });
        }

        let (tp, fp) = cum.last().copied().unwrap_or((0, 0));
        Self {
            map_at_50: average_precision(pool),
            iou_threshold,
            pr_points,
            f1_curve,
            counts: Counts {
                tp,
                fp,
                fn_: pool.num_gt - tp,
            },
            num_gt: pool.num_gt,
            num_predictions: pool.ranked.len(),
            degenerate: pool.num_gt == 0 && pool.ranked.is_empty(),
        }
    }

    /// The F1-maximizing row of the curve; ties go to the highest threshold.
    pub fn f1_max(&self) -> F1Calibration {
        let mut best: Option<&F1Point> = None;
        for point in &self.f1_curve {
            if best.is_none_or(|b| point.f1 > b.f1) {
                best = Some(point);
            }
        }
        match best {
            Some(p) => F1Calibration {
                threshold: p.threshold,
                precision: p.precision,
                recall: p.recall,
                f1: p.f1,
                no_detections: false,
            },
            None => F1Calibration {
                threshold: 1.0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                no_detections: true,
            },
        }
    }

    /// CSV with columns `threshold,precision,recall,f1`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f1\n");
        for p in &self.f1_curve {
            out.push_str(&format!("{},{},{},{}\n", p.threshold, p.precision, p.recall, p.f1));
        }
        out
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Per-image cap on predictions (highest scores kept). `None` keeps all.
    pub max_dets: Option<usize>,
    /// Reject prompts that have no entries at all in the detection set.
    pub strict: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            max_dets: None,
            strict: false,
        }
    }
}

/// Per-image matches for `prompt`, in ground-truth image order.
pub fn match_dataset(
    det: &DetectionSet,
    gt: &GroundTruthSet,
    prompt: &str,
    opts: &EvalOptions,
) -> Result<Vec<MatchResult>> {
    if opts.strict && !det.has_prompt(prompt) {
        return Err(Error::UnknownPrompt(prompt.to_string()));
    }
    let known: HashSet<i64> = gt.images.iter().map(|i| i.id).collect();
    if let Some((id, _, _)) = det.iter().find(|(id, p, _)| *p == prompt && !known.contains(id)) {
        return Err(Error::UnknownImage(id));
    }
    Ok(gt
        .images
        .par_iter()
        .map(|image| {
            let preds = det.get(image.id, prompt).unwrap_or(&[]);
            let kept: Vec<Detection> = match opts.max_dets {
                Some(cap) if preds.len() > cap => {
                    score_order(preds).into_iter().take(cap).map(|i| preds[i]).collect()
                }
                _ => preds.to_vec(),
            };
            match_at_iou(&kept, gt.annotations_for(image.id), opts.iou_threshold)
        })
        .collect())
}

/// Single-class mAP (equal to AP) at `opts.iou_threshold`, with curves.
pub fn map_at_50(
    det: &DetectionSet,
    gt: &GroundTruthSet,
    prompt: &str,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let matches = match_dataset(det, gt, prompt, opts)?;
    let pool = PooledMatches::from_images(&matches, gt.annotations.len());
    Ok(EvalResult::from_pool(&pool, opts.iou_threshold))
}

/// Confidence threshold maximizing micro-averaged F1 over the dataset.
pub fn f1_max_threshold(
    det: &DetectionSet,
    gt: &GroundTruthSet,
    prompt: &str,
    opts: &EvalOptions,
) -> Result<F1Calibration> {
    Ok(map_at_50(det, gt, prompt, opts)?.f1_max())
}
