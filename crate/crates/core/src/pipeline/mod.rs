//! Phase 1 -> Phase 2 orchestration over one (backend, dataset, axes) triple.
//!
//! Every evaluated prompt becomes a row in the append-only ledger. Stages
//! run their trials concurrently up to the backend's concurrency limit, but
//! rows are appended in plan order by a single writer, so the ledger does
//! not depend on scheduling.

mod config;
pub mod ledger;
pub mod report;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

pub use config::RunConfig;
pub use ledger::{Phase, Status, TrialRecord};

use crate::axis::{render_prompt, AxisName, AxisSet, PromptSpec};
use crate::backend::{record, Backend};
use crate::data::{load_coco, GroundTruthSet};
use crate::error::{Error, Result};
use crate::eval::{map_at_50, EvalOptions, EvalResult, F1Calibration};
use crate::plan::{
    expand_emoji, expand_negation, generate_ofat, generate_phase2_base, rank, Anchors, ScoreBook, Sweep,
};
use ledger::{LedgerWriter, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy)]
struct StageItem {
    spec: PromptSpec,
    phase: Phase,
    sweep: Option<Sweep>,
    axis: Option<AxisName>,
}

#[derive(Debug, Clone)]
pub struct Phase1Outcome {
    pub records: Vec<TrialRecord>,
    pub baseline_map: f64,
    pub best: TrialRecord,
}

#[derive(Debug, Clone)]
pub struct Phase2Outcome {
    pub anchors: Anchors,
    pub records: Vec<TrialRecord>,
    /// Best Phase-2 trial.
    pub best: Option<TrialRecord>,
    /// Best trial over Phase 1 and Phase 2 together.
    pub overall_best: Option<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub prompt: String,
    pub backend: String,
    pub dataset_id: String,
    pub config_hash: String,
    pub calibration: F1Calibration,
}

/// Highest-scoring ok record; equal scores go to the smaller fingerprint.
pub fn select_best<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> Option<&'a TrialRecord> {
    records
        .into_iter()
        .filter(|r| r.is_ok())
        .min_by(|a, b| {
            b.map_at_50
                .partial_cmp(&a.map_at_50)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.fingerprint.cmp(&b.fingerprint))
        })
}

pub struct Pipeline {
    config: RunConfig,
    axes: AxisSet,
    gt: GroundTruthSet,
    backend: Box<dyn Backend>,
    use_background: bool,
    opts: EvalOptions,
    dataset_id: String,
    config_hash: String,
    ledger: LedgerWriter,
    workers: rayon::ThreadPool,
}

impl Pipeline {
    /// Validates the config, loads axes and ground truth, and opens the backend.
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let axes = AxisSet::from_path(&config.axes)?;
        let gt = load_coco(&config.gt)?;
        let backend = config.backend_spec()?.open(&gt, config.seed)?;
        Self::from_parts(config, axes, gt, backend)
    }

    pub fn from_parts(
        config: RunConfig,
        axes: AxisSet,
        gt: GroundTruthSet,
        backend: Box<dyn Backend>,
    ) -> Result<Self> {
        config.phase2()?;
        let descriptor = backend.descriptor().clone();
        let use_background = config.background_class && descriptor.supports_background_class;
        if config.background_class && !descriptor.supports_background_class {
            warn!(
                "backend `{}` has no background class support; prompts are sent unchanged",
                descriptor.name
            );
        }
        let opts = EvalOptions {
            iou_threshold: config.iou,
            max_dets: config.max_dets,
            strict: false,
        };
        let dataset_id = config.dataset_id();
        let config_hash = {
            let material = serde_json::json!({
                "axes": axes.to_json_string(),
                "gt": gt.to_coco_json(),
                "dataset_id": dataset_id,
                "backend": descriptor.name,
                "backend_kind": descriptor.kind,
                "background_class": use_background,
                "iou": config.iou,
                "max_dets": config.max_dets,
                "seed": config.seed,
                "image_root": config.image_root,
            });
            ledger::hex(&Sha256::digest(material.to_string().as_bytes()))[..16].to_string()
        };
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(descriptor.max_concurrency.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let ledger = LedgerWriter::open(config.ledger_path())?;
        Ok(Self {
            config,
            axes,
            gt,
            backend,
            use_background,
            opts,
            dataset_id,
            config_hash,
            ledger,
            workers,
        })
    }

    pub fn axes(&self) -> &AxisSet {
        &self.axes
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn backend_name(&self) -> &str {
        &self.backend.descriptor().name
    }

    pub fn uses_background_class(&self) -> bool {
        self.use_background
    }

    /// Every ledger row, including rows from earlier runs.
    pub fn ledger(&self) -> &[TrialRecord] {
        self.ledger.records()
    }

    fn evaluate_on(&self, gt: &GroundTruthSet, prompt: &str) -> Result<EvalResult> {
        let dets = record(
            self.backend.as_ref(),
            gt,
            &[prompt.to_string()],
            self.use_background,
            self.config.image_root.as_deref(),
        )?;
        map_at_50(&dets, gt, prompt, &self.opts)
    }

    /// mAP and curves for a single prompt on the run's dataset.
    pub fn evaluate_prompt(&self, prompt: &str) -> Result<EvalResult> {
        self.evaluate_on(&self.gt, prompt)
    }

    /// Latest row of this configuration for `(phase, fingerprint)`.
    fn latest(&self, phase: Phase) -> HashMap<String, TrialRecord> {
        let mut latest = HashMap::new();
        for r in self.ledger.records() {
            if r.config_hash == self.config_hash && r.phase == phase {
                latest.insert(r.fingerprint.clone(), r.clone());
            }
        }
        latest
    }

    fn run_stage(&mut self, items: &[StageItem], baseline: Option<f64>) -> Result<Vec<TrialRecord>> {
        let rendered = items
            .iter()
            .map(|item| render_prompt(&item.spec, &self.axes).map(|r| r.text))
            .collect::<Result<Vec<_>>>()?;

        let mut reuse: HashMap<usize, TrialRecord> = HashMap::new();
        if self.config.resume {
            let mut by_phase: HashMap<Phase, HashMap<String, TrialRecord>> = HashMap::new();
            for (i, item) in items.iter().enumerate() {
                let latest = by_phase.entry(item.phase).or_insert_with(|| self.latest(item.phase));
                if let Some(r) = latest.get(&item.spec.fingerprint()).filter(|r| r.is_ok()) {
                    reuse.insert(i, r.clone());
                }
            }
        }

        let pending: Vec<usize> = (0..items.len()).filter(|i| !reuse.contains_key(i)).collect();
        let results: Vec<Result<EvalResult>> = {
            let this = &*self;
            self.workers.install(|| {
                use rayon::prelude::*;
                pending
                    .par_iter()
                    .map(|&i| this.evaluate_prompt(&rendered[i]))
                    .collect()
            })
        };

        let mut fresh: HashMap<usize, Result<EvalResult>> = pending.into_iter().zip(results).collect();
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if let Some(r) = reuse.remove(&i) {
                out.push(r);
                continue;
            }
            let result = fresh.remove(&i).expect("every pending item was evaluated");
            let record = self.make_record(item, &rendered[i], &result, baseline);
            let curve = result.as_ref().ok().map(|r| r.f1_curve.as_slice());
            self.ledger.append(&record, curve)?;
            if let Err(e) = &result {
                warn!("trial `{}` failed: {e}", rendered[i]);
            }
            out.push(record);
        }
        Ok(out)
    }

    fn make_record(
        &mut self,
        item: &StageItem,
        prompt: &str,
        result: &Result<EvalResult>,
        baseline: Option<f64>,
    ) -> TrialRecord {
        let level_label = item
            .axis
            .map(|a| self.axes.axis(a).label(item.spec.level(a)));
        let (map, f1, counts, status, error) = match result {
            Ok(r) => (Some(r.map_at_50), Some(r.f1_max()), Some(r.counts), Status::Ok, None),
            Err(e) => (None, None, None, Status::Failed, Some(e.to_string())),
        };
        TrialRecord {
            schema_version: SCHEMA_VERSION,
            trial_id: self.ledger.next_trial_id(),
            phase: item.phase,
            sweep_label: item.sweep.map(|s| s.to_string()),
            axis_label: match item.phase {
                Phase::Phase1 => Some(item.axis.map_or("baseline", AxisName::as_str).to_string()),
                _ => item.axis.map(|a| a.to_string()),
            },
            level_label,
            fingerprint: item.spec.fingerprint(),
            prompt: prompt.to_string(),
            backend: self.backend.descriptor().name.clone(),
            dataset_id: self.dataset_id.clone(),
            map_at_50: map,
            delta_vs_baseline: match (map, baseline) {
                (Some(m), Some(b)) => Some(m - b),
                (Some(_), None) => Some(0.0),
                _ => None,
            },
            f1_threshold: f1,
            counts,
            status,
            error,
            config_hash: self.config_hash.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }

    /// Evaluates the 1 + sum(|values|) one-factor-at-a-time prompts, baseline first.
    pub fn run_phase1(&mut self) -> Result<Phase1Outcome> {
        let plan = generate_ofat(&self.axes);
        let items: Vec<StageItem> = plan
            .entries
            .iter()
            .map(|e| StageItem {
                spec: e.spec,
                phase: Phase::Phase1,
                sweep: None,
                axis: e.axis,
            })
            .collect();

        let (baseline_item, rest) = items.split_first().expect("plan always holds the baseline");
        let baseline = self.run_stage(std::slice::from_ref(baseline_item), None)?.remove(0);
        let baseline_map = match baseline.score() {
            Some(m) => m,
            None => {
                return Err(Error::BaselineFailed(format!(
                    "`{}`: {}",
                    baseline.prompt,
                    baseline.error.as_deref().unwrap_or("unknown error")
                )))
            }
        };
        info!("phase 1 baseline `{}` mAP@0.5 = {baseline_map:.4}", baseline.prompt);

        let mut records = vec![baseline];
        records.extend(self.run_stage(rest, Some(baseline_map))?);
        let best = select_best(&records).expect("baseline is ok").clone();
        Ok(Phase1Outcome {
            records,
            baseline_map,
            best,
        })
    }

    fn phase1_segment(&self) -> Result<(ScoreBook, f64)> {
        let latest = self.latest(Phase::Phase1);
        let baseline = latest
            .get(&PromptSpec::baseline().fingerprint())
            .and_then(TrialRecord::score)
            .ok_or_else(|| {
                Error::Config(format!(
                    "no successful phase 1 baseline for configuration {} in {}",
                    self.config_hash,
                    self.ledger.path().display()
                ))
            })?;
        let mut book = ScoreBook::new();
        for r in latest.values() {
            let spec = PromptSpec::from_fingerprint(&r.fingerprint)?;
            match r.score() {
                Some(s) => book.insert(spec, s),
                None => book.mark_failed(spec),
            }
        }
        Ok((book, baseline))
    }

    /// Base sweeps, then negation on the top-N base prompts, then emoji on the
    /// single best of base and negation.
    pub fn run_phase2(&mut self) -> Result<Phase2Outcome> {
        let config = self.config.phase2()?;
        let (scores, baseline) = self.phase1_segment()?;
        let plan = generate_phase2_base(&self.axes, &scores, config)?;

        let base_items: Vec<StageItem> = plan
            .base
            .iter()
            .map(|(spec, sweep)| StageItem {
                spec: *spec,
                phase: Phase::Phase2Base,
                sweep: Some(*sweep),
                axis: None,
            })
            .collect();
        let mut records = self.run_stage(&base_items, Some(baseline))?;

        let ranked_base = rank(&ok_scores(&records)?);
        let top: Vec<PromptSpec> = ranked_base.iter().map(|(s, _)| *s).collect();
        let negation_items: Vec<StageItem> = expand_negation(&top, &self.axes, config.top_n_for_negation)?
            .into_iter()
            .map(|spec| StageItem {
                spec,
                phase: Phase::Phase2Negation,
                sweep: None,
                axis: Some(AxisName::Negation),
            })
            .collect();
        records.extend(self.run_stage(&negation_items, Some(baseline))?);

        if config.include_emoji_stage {
            let ranked = rank(&ok_scores(&records)?);
            if let Some((best, _)) = ranked.first() {
                let emoji_items: Vec<StageItem> = expand_emoji(best, &self.axes)?
                    .into_iter()
                    .map(|spec| StageItem {
                        spec,
                        phase: Phase::Phase2Emoji,
                        sweep: None,
                        axis: Some(AxisName::Emoji),
                    })
                    .collect();
                records.extend(self.run_stage(&emoji_items, Some(baseline))?);
            }
        }

        let best = select_best(&records).cloned();
        if let Some(b) = &best {
            info!(
                "phase 2 best `{}` mAP@0.5 = {:.4} (delta {:+.4})",
                b.prompt,
                b.map_at_50.unwrap_or_default(),
                b.delta_vs_baseline.unwrap_or_default()
            );
        }
        let phase1 = self.latest(Phase::Phase1);
        let overall_best = select_best(phase1.values().chain(&records)).cloned();
        Ok(Phase2Outcome {
            anchors: plan.anchors,
            records,
            best,
            overall_best,
        })
    }

    pub fn run(&mut self) -> Result<(Phase1Outcome, Phase2Outcome)> {
        let p1 = self.run_phase1()?;
        let p2 = self.run_phase2()?;
        Ok((p1, p2))
    }

    /// F1-maximizing confidence threshold for `prompt` on the calibration dataset.
    pub fn calibrate(&self, prompt: &str) -> Result<CalibrationRecord> {
        let (gt, dataset_id) = match &self.config.calibration_gt {
            Some(path) => (
                load_coco(path)?,
                path.file_stem()
                    .map_or_else(|| "calibration".into(), |s| s.to_string_lossy().into_owned()),
            ),
            None => (self.gt.clone(), self.dataset_id.clone()),
        };
        let result = self.evaluate_on(&gt, prompt)?;
        let calibration = result.f1_max();
        if calibration.no_detections {
            warn!("no detections for `{prompt}`; threshold defaults to 1.0");
        }
        Ok(CalibrationRecord {
            prompt: prompt.to_string(),
            backend: self.backend.descriptor().name.clone(),
            dataset_id,
            config_hash: self.config_hash.clone(),
            calibration,
        })
    }
}

fn ok_scores(records: &[TrialRecord]) -> Result<Vec<(PromptSpec, f64)>> {
    records
        .iter()
        .filter_map(|r| r.score().map(|s| (r, s)))
        .map(|(r, s)| Ok((PromptSpec::from_fingerprint(&r.fingerprint)?, s)))
        .collect()
}
