//! Shared helpers for integration tests: fixture paths, random scenes, and a
//! deliberately naive reference evaluator.
#![allow(dead_code)]

use std::path::PathBuf;

use promptaxis::data::{Annotation, ImageInfo};
use promptaxis::{BBox, Detection, DetectionSet, GroundTruthSet};
use rand::Rng;

pub const PROMPT: &str = "a flower";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// One image of a reference scene: ground-truth boxes and predictions, both as
/// `[x, y, w, h]`.
#[derive(Debug, Clone)]
pub struct RefImage {
    pub gts: Vec<[f64; 4]>,
    pub preds: Vec<([f64; 4], f64)>,
}

pub type RefScene = Vec<RefImage>;

/// Small random scene. Predictions are either jittered copies of a ground
/// truth box or free-floating boxes. Scores are drawn from a coarse grid half
/// of the time so that ties occur.
pub fn random_scene(rng: &mut impl Rng) -> RefScene {
    let n_images = rng.gen_range(1..=4);
    let mut total_gt = rng.gen_range(0..=6);
    let mut total_pred = rng.gen_range(0..=8);
    let coarse = rng.gen_bool(0.5);
    let mut scene = Vec::new();
    for i in 0..n_images {
        let last = i + 1 == n_images;
        let g = if last { total_gt } else { rng.gen_range(0..=total_gt) };
        let p = if last { total_pred } else { rng.gen_range(0..=total_pred) };
        total_gt -= g;
        total_pred -= p;
        let gts: Vec<[f64; 4]> = (0..g)
            .map(|_| {
                [
                    rng.gen_range(0.0..80.0),
                    rng.gen_range(0.0..80.0),
                    rng.gen_range(5.0..30.0),
                    rng.gen_range(5.0..30.0),
                ]
            })
            .collect();
        let preds = (0..p)
            .map(|_| {
                let bbox = if !gts.is_empty() && rng.gen_bool(0.6) {
                    let g = gts[rng.gen_range(0..gts.len())];
                    let s = rng.gen_range(0.0..0.4);
                    [
                        g[0] + rng.gen_range(-s..=s) * g[2],
                        g[1] + rng.gen_range(-s..=s) * g[3],
                        g[2] * rng.gen_range(1.0 - s..=1.0 + s),
                        g[3] * rng.gen_range(1.0 - s..=1.0 + s),
                    ]
                } else {
                    [
                        rng.gen_range(0.0..80.0),
                        rng.gen_range(0.0..80.0),
                        rng.gen_range(5.0..30.0),
                        rng.gen_range(5.0..30.0),
                    ]
                };
                let score = if coarse {
                    rng.gen_range(1..=5) as f64 / 5.0
                } else {
                    rng.gen_range(0.0..1.0)
                };
                (bbox, score)
            })
            .collect();
        scene.push(RefImage { gts, preds });
    }
    scene
}

/// Converts a reference scene into engine types. Image ids are 1-based and
/// annotation ids are globally unique.
pub fn to_engine(scene: &RefScene) -> (GroundTruthSet, DetectionSet) {
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut dets = DetectionSet::new();
    let mut next_ann = 1;
    for (i, img) in scene.iter().enumerate() {
        let id = i as i64 + 1;
        images.push(ImageInfo {
            id,
            file_name: format!("img_{id}.png"),
            width: 0.0,
            height: 0.0,
        });
        for g in &img.gts {
            anns.push(Annotation {
                id: next_ann,
                image_id: id,
                bbox: BBox::from(*g),
            });
            next_ann += 1;
        }
        dets.insert(
            id,
            PROMPT,
            img.preds
                .iter()
                .map(|(b, s)| Detection {
                    bbox: BBox::from(*b),
                    score: *s,
                })
                .collect(),
        );
    }
    (GroundTruthSet::new(images, anns, "flower").unwrap(), dets)
}

pub fn oracle_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let (ax2, ay2) = (a[0] + a[2], a[1] + a[3]);
    let (bx2, by2) = (b[0] + b[2], b[1] + b[3]);
    let iw = (ax2.min(bx2) - a[0].max(b[0])).max(0.0);
    let ih = (ay2.min(by2) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Per-prediction TP flags, in the same order as `img.preds`. Predictions are
/// visited from highest to lowest score (earlier index first on ties); each
/// takes the free ground truth with the highest IoU >= `thr`, earliest on ties.
pub fn oracle_flags(img: &RefImage, thr: f64) -> Vec<bool> {
    let mut visit: Vec<usize> = (0..img.preds.len()).collect();
    // insertion sort keeps the tie rule obvious
    for i in 1..visit.len() {
        let mut j = i;
        while j > 0 && img.preds[visit[j]].1 > img.preds[visit[j - 1]].1 {
            visit.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut used = vec![false; img.gts.len()];
    let mut flags = vec![false; img.preds.len()];
    for p in visit {
        let mut pick: Option<usize> = None;
        let mut pick_iou = -1.0;
        for (g, gt) in img.gts.iter().enumerate() {
            let v = oracle_iou(&img.preds[p].0, gt);
            if !used[g] && v >= thr && v > pick_iou {
                pick = Some(g);
                pick_iou = v;
            }
        }
        if let Some(g) = pick {
            used[g] = true;
            flags[p] = true;
        }
    }
    flags
}

/// Reference 101-point AP. All predictions of the scene are ranked by score;
/// ties keep image order, then in-image order. For each recall level r, the
/// interpolated precision is the largest precision at any rank whose recall
/// is at least r (0 if there is none).
pub fn oracle_ap(scene: &RefScene, thr: f64) -> f64 {
    let num_gt: usize = scene.iter().map(|i| i.gts.len()).sum();
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (ii, img) in scene.iter().enumerate() {
        let flags = oracle_flags(img, thr);
        for (pi, (_, s)) in img.preds.iter().enumerate() {
            ranked.push((*s, ii, pi, flags[pi]));
        }
    }
    if num_gt == 0 && ranked.is_empty() {
        return 1.0;
    }
    if num_gt == 0 || ranked.is_empty() {
        return 0.0;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for r in &ranked {
        if r.3 {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let level = k as f64 / 100.0;
        let mut best = 0.0f64;
        for &(rec, prec) in &points {
            if rec >= level && prec > best {
                best = prec;
            }
        }
        sum += best;
    }
    sum / 101.0
}

/// F1 when only predictions scoring at least `threshold` are kept, with the
/// scene re-matched from scratch.
pub fn oracle_f1_at(scene: &RefScene, thr: f64, threshold: f64) -> f64 {
    let num_gt: usize = scene.iter().map(|i| i.gts.len()).sum();
    let (mut tp, mut kept) = (0usize, 0usize);
    for img in scene {
        let filtered = RefImage {
            gts: img.gts.clone(),
            preds: img.preds.iter().copied().filter(|p| p.1 >= threshold).collect(),
        };
        kept += filtered.preds.len();
        tp += oracle_flags(&filtered, thr).iter().filter(|f| **f).count();
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / kept as f64;
    let r = tp as f64 / num_gt as f64;
    2.0 * p * r / (p + r)
}

pub fn candidate_thresholds(scene: &RefScene) -> Vec<f64> {
    let mut scores: Vec<f64> = scene.iter().flat_map(|i| i.preds.iter().map(|p| p.1)).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();
    scores
}
