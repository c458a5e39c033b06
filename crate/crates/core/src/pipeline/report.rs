//! Tables, curves, and charts derived from one or more ledgers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ledger::{CurveRecord, Phase, TrialRecord};
use super::select_best;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDeltaRow {
    pub backend: String,
    pub dataset_id: String,
    pub axis: String,
    pub level: String,
    pub prompt: String,
    pub map_at_50: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPrompt {
    pub prompt: String,
    pub map_at_50: f64,
    pub delta: f64,
    pub trial_id: u64,
}

/// Side-by-side summary for one (backend, dataset) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPromptRow {
    pub backend: String,
    pub dataset_id: String,
    pub baseline_prompt: Option<String>,
    pub baseline_map: Option<f64>,
    pub phase1: Option<BestPrompt>,
    pub phase2: Option<BestPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub backend: String,
    pub dataset_id: String,
    pub phase: Phase,
    pub prompt: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub name: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub axis_deltas: Vec<AxisDeltaRow>,
    pub best_prompts: Vec<BestPromptRow>,
    pub failures: Vec<FailureRow>,
    #[serde(skip)]
    pub curves: Vec<CurveExport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Keeps the latest row per (config, phase, fingerprint), in ledger order.
fn latest_rows(records: &[TrialRecord]) -> Vec<&TrialRecord> {
    let mut index: BTreeMap<(&str, Phase, &str), usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        index.insert((r.config_hash.as_str(), r.phase, r.fingerprint.as_str()), i);
    }
    let mut keep: Vec<usize> = index.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| &records[i]).collect()
}

fn best_of<'a>(rows: impl IntoIterator<Item = &'a TrialRecord>) -> Option<BestPrompt> {
    select_best(rows).map(|r| BestPrompt {
        prompt: r.prompt.clone(),
        map_at_50: r.map_at_50.unwrap_or_default(),
        delta: r.delta_vs_baseline.unwrap_or_default(),
        trial_id: r.trial_id,
    })
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Builds the report. `curves` may be empty, in which case no curve CSVs are produced.
pub fn report(records: &[TrialRecord], curves: &[CurveRecord]) -> Result<ReportBundle> {
    if records.is_empty() {
        return Err(Error::EmptyLedger("no trial records".into()));
    }
    let rows = latest_rows(records);

    let mut groups: BTreeMap<(String, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.backend.clone(), r.dataset_id.clone()))
            .or_default()
            .push(r);
    }

    let mut axis_deltas = Vec::new();
    let mut best_prompts = Vec::new();
    let mut exports = Vec::new();
    for ((backend, dataset_id), group) in &groups {
        for r in group.iter().filter(|r| r.phase == Phase::Phase1 && r.is_ok()) {
            let axis = r.axis_label.clone().unwrap_or_default();
            if axis == "baseline" {
                continue;
            }
            axis_deltas.push(AxisDeltaRow {
                backend: backend.clone(),
                dataset_id: dataset_id.clone(),
                axis,
                level: r.level_label.clone().unwrap_or_default(),
                prompt: r.prompt.clone(),
                map_at_50: r.map_at_50.unwrap_or_default(),
                delta: r.delta_vs_baseline.unwrap_or_default(),
            });
        }

        let baseline = group
            .iter()
            .find(|r| r.phase == Phase::Phase1 && r.axis_label.as_deref() == Some("baseline") && r.is_ok());
        let phase1 = best_of(group.iter().copied().filter(|r| r.phase == Phase::Phase1));
        let phase2 = best_of(group.iter().copied().filter(|r| r.phase.is_phase2()));

        for (label, best) in [("phase1", &phase1), ("phase2", &phase2)] {
            let Some(best) = best else { continue };
            let trial = group.iter().find(|r| r.trial_id == best.trial_id).expect("best row in group");
            if let Some(curve) = curves
                .iter()
                .find(|c| c.trial_id == trial.trial_id && c.config_hash == trial.config_hash)
            {
                let mut csv = String::from("threshold,precision,recall,f1\n");
                for p in &curve.f1_curve {
                    let _ = writeln!(csv, "{},{},{},{}", p.threshold, p.precision, p.recall, p.f1);
                }
                exports.push(CurveExport {
                    name: format!("{}_{}_{label}", slug(backend), slug(dataset_id)),
                    csv,
                });
            }
        }

        best_prompts.push(BestPromptRow {
            backend: backend.clone(),
            dataset_id: dataset_id.clone(),
            baseline_prompt: baseline.map(|b| b.prompt.clone()),
            baseline_map: baseline.and_then(|b| b.map_at_50),
            phase1,
            phase2,
        });
    }

    let failures = rows
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| FailureRow {
            backend: r.backend.clone(),
            dataset_id: r.dataset_id.clone(),
            phase: r.phase,
            prompt: r.prompt.clone(),
            error: r.error.clone().unwrap_or_default(),
        })
        .collect();

    Ok(ReportBundle {
        axis_deltas,
        best_prompts,
        failures,
        curves: exports,
    })
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer
        .write_record(header)
        .map_err(|e| Error::Config(e.to_string()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl ReportBundle {
    pub fn axis_deltas_csv(&self) -> Result<String> {
        to_csv(
            &self.axis_deltas,
            &["backend", "dataset_id", "axis", "level", "prompt", "map_at_50", "delta"],
        )
    }

    pub fn best_prompts_csv(&self) -> Result<String> {
        let flat = self.best_prompts.iter().map(|r| {
            (
                &r.backend,
                &r.dataset_id,
                r.baseline_prompt.as_deref().unwrap_or(""),
                r.baseline_map,
                r.phase1.as_ref().map(|b| b.prompt.as_str()).unwrap_or(""),
                r.phase1.as_ref().map(|b| b.map_at_50),
                r.phase1.as_ref().map(|b| b.delta),
                r.phase2.as_ref().map(|b| b.prompt.as_str()).unwrap_or(""),
                r.phase2.as_ref().map(|b| b.map_at_50),
                r.phase2.as_ref().map(|b| b.delta),
            )
        });
        to_csv(
            flat,
            &[
                "backend",
                "dataset_id",
                "baseline_prompt",
                "baseline_map",
                "phase1_prompt",
                "phase1_map",
                "phase1_delta",
                "phase2_prompt",
                "phase2_map",
                "phase2_delta",
            ],
        )
    }

    pub fn failures_csv(&self) -> Result<String> {
        let flat = self
            .failures
            .iter()
            .map(|f| (&f.backend, &f.dataset_id, f.phase.as_str(), &f.prompt, &f.error));
        to_csv(flat, &["backend", "dataset_id", "phase", "prompt", "error"])
    }

    /// One bar chart of Phase-1 deltas per (backend, dataset), bars grouped by axis.
    pub fn axis_delta_svgs(&self) -> Vec<(String, String)> {
        let mut groups: BTreeMap<(&str, &str), Vec<&AxisDeltaRow>> = BTreeMap::new();
        for row in &self.axis_deltas {
            groups
                .entry((row.backend.as_str(), row.dataset_id.as_str()))
                .or_default()
                .push(row);
        }
        groups
            .into_iter()
            .map(|((backend, dataset), rows)| {
                (
                    format!("axis_deltas_{}_{}.svg", slug(backend), slug(dataset)),
                    delta_bar_chart(&format!("{backend} / {dataset}"), &rows),
                )
            })
            .collect()
    }

    pub fn write(&self, dir: &Path, format: ReportFormat) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<(String, String)> = Vec::new();
        match format {
            ReportFormat::Json => files.push((
                "report.json".into(),
                serde_json::to_string_pretty(self).expect("report serializes"),
            )),
            ReportFormat::Csv => {
                files.push(("axis_deltas.csv".into(), self.axis_deltas_csv()?));
                files.push(("best_prompts.csv".into(), self.best_prompts_csv()?));
                files.push(("failures.csv".into(), self.failures_csv()?));
                for curve in &self.curves {
                    files.push((format!("curve_{}.csv", curve.name), curve.csv.clone()));
                }
            }
            ReportFormat::Svg => files.extend(self.axis_delta_svgs()),
        }
        let mut written = Vec::new();
        for (name, content) in files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn delta_bar_chart(title: &str, rows: &[&AxisDeltaRow]) -> String {
    const BAR: f64 = 16.0;
    const GAP: f64 = 4.0;
    const AXIS_GAP: f64 = 14.0;
    const PLOT_H: f64 = 240.0;
    const TOP: f64 = 40.0;
    const LEFT: f64 = 56.0;

    let max_abs = rows
        .iter()
        .map(|r| r.delta.abs())
        .fold(0.0_f64, f64::max)
        .max(1e-3);
    let zero_y = TOP + PLOT_H / 2.0;
    let scale = (PLOT_H / 2.0) / max_abs;

    let mut bars = String::new();
    let mut x = LEFT;
    let mut previous_axis: Option<&str> = None;
    for row in rows {
        if previous_axis.is_some_and(|a| a != row.axis) {
            x += AXIS_GAP;
        }
        if previous_axis != Some(row.axis.as_str()) {
            let _ = writeln!(
                bars,
                r#"<text x="{x:.1}" y="{:.1}" font-size="11" font-weight="bold">{}</text>"#,
                TOP + PLOT_H + 16.0,
                escape(&row.axis)
            );
        }
        previous_axis = Some(row.axis.as_str());
        let h = row.delta.abs() * scale;
        let y = if row.delta >= 0.0 { zero_y - h } else { zero_y };
        let fill = if row.delta >= 0.0 { "#3a7d44" } else { "#b23a48" };
        let _ = writeln!(
            bars,
            r#"<rect x="{x:.1}" y="{y:.2}" width="{BAR}" height="{h:.2}" fill="{fill}"><title>{}: {:+.4}</title></rect>"#,
            escape(&row.prompt),
            row.delta
        );
        let _ = writeln!(
            bars,
            r#"<text transform="translate({:.1},{:.1}) rotate(60)" font-size="9">{}</text>"#,
            x + BAR / 2.0,
            TOP + PLOT_H + 24.0,
            escape(&row.level)
        );
        x += BAR + GAP;
    }
    let width = x + LEFT;
    let height = TOP + PLOT_H + 140.0;
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">
<rect width="100%" height="100%" fill="white"/>
<text x="{LEFT}" y="20" font-size="14">{title} - change in mAP@0.5 vs baseline</text>
<line x1="{LEFT}" y1="{zero_y:.1}" x2="{:.1}" y2="{zero_y:.1}" stroke="#333" stroke-dasharray="4 3"/>
<text x="4" y="{:.1}" font-size="10">{max_abs:+.3}</text>
<text x="4" y="{:.1}" font-size="10">0</text>
<text x="4" y="{:.1}" font-size="10">{:+.3}</text>
{bars}</svg>
"##,
        x,
        TOP + 4.0,
        zero_y + 4.0,
        TOP + PLOT_H,
        -max_abs,
        title = escape(title),
    )
}
