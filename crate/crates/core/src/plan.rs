//! Phase-1 one-factor-at-a-time plans and the staged Phase-2 combinatorial plan.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::axis::{render_prompt, AxisName, AxisSet, Level, PromptSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase1Entry {
    pub spec: PromptSpec,
    /// The single perturbed axis, `None` for the baseline.
    pub axis: Option<AxisName>,
}

impl Phase1Entry {
    pub fn label(&self) -> &'static str {
        self.axis.map_or("baseline", AxisName::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase1Plan {
    pub entries: Vec<Phase1Entry>,
}

impl Phase1Plan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Baseline first, then each axis in slot order with its values in config order.
pub fn generate_ofat(axes: &AxisSet) -> Phase1Plan {
    let mut entries = vec![Phase1Entry {
        spec: PromptSpec::baseline(),
        axis: None,
    }];
    for (name, axis) in axes.iter() {
        entries.extend((0..axis.values.len()).map(|i| Phase1Entry {
            spec: PromptSpec::baseline().with(name, Level::Value(i)),
            axis: Some(name),
        }));
    }
    Phase1Plan { entries }
}

/// Scores gathered for evaluated specs. Failed trials are remembered so they
/// can be skipped without being mistaken for missing ones.
#[derive(Debug, Clone, Default)]
pub struct ScoreBook {
    ok: HashMap<PromptSpec, f64>,
    failed: HashSet<PromptSpec>,
}

impl ScoreBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spec: PromptSpec, score: f64) {
        self.failed.remove(&spec);
        self.ok.insert(spec, score);
    }

    pub fn mark_failed(&mut self, spec: PromptSpec) {
        if !self.ok.contains_key(&spec) {
            self.failed.insert(spec);
        }
    }

    pub fn score(&self, spec: &PromptSpec) -> Option<f64> {
        self.ok.get(spec).copied()
    }

    pub fn is_failed(&self, spec: &PromptSpec) -> bool {
        self.failed.contains(spec)
    }
}

impl FromIterator<(PromptSpec, f64)> for ScoreBook {
    fn from_iter<I: IntoIterator<Item = (PromptSpec, f64)>>(iter: I) -> Self {
        let mut book = ScoreBook::new();
        for (spec, score) in iter {
            book.insert(spec, score);
        }
        book
    }
}

/// Best level of `axis` among its OFAT specs. Ties prefer the baseline, then
/// the lowest value index. Failed specs are skipped.
pub fn best_level(scores: &ScoreBook, axes: &AxisSet, axis: AxisName) -> Result<Level> {
    let mut best: Option<(Level, f64)> = None;
    for level in axes.axis(axis).levels() {
        let spec = PromptSpec::baseline().with(axis, level);
        let score = match scores.score(&spec) {
            Some(s) => s,
            None if scores.is_failed(&spec) => continue,
            None => {
                return Err(Error::MissingScore {
                    axis: axis.to_string(),
                    prompt: render_prompt(&spec, axes)
                        .map(|r| r.text)
                        .unwrap_or_else(|_| spec.fingerprint()),
                })
            }
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((level, score));
        }
    }
    best.map(|(l, _)| l).ok_or_else(|| Error::MissingScore {
        axis: axis.to_string(),
        prompt: "every level failed".to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    ColorXSize,
    GrammarXColor,
    Anatomy,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::ColorXSize => "color_x_size",
            Sweep::GrammarXColor => "grammar_x_color",
            Sweep::Anatomy => "anatomy",
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub top_n_for_negation: usize,
    pub include_emoji_stage: bool,
}

impl Phase2Config {
    pub fn new(top_n_for_negation: usize, include_emoji_stage: bool) -> Result<Self> {
        if top_n_for_negation == 0 {
            return Err(Error::Config("top-N for negation must be at least 1".into()));
        }
        Ok(Self {
            top_n_for_negation,
            include_emoji_stage,
        })
    }
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            top_n_for_negation: 3,
            include_emoji_stage: true,
        }
    }
}

/// Phase-1 winners that anchor the base sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchors {
    pub grammar: Level,
    pub taxonomy: Level,
    pub color: Level,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Plan {
    pub anchors: Anchors,
    pub base: Vec<(PromptSpec, Sweep)>,
    pub config: Phase2Config,
}

/// Builds the three base sweeps from Phase-1 scores.
pub fn generate_phase2_base(
    axes: &AxisSet,
    phase1_scores: &ScoreBook,
    config: Phase2Config,
) -> Result<Phase2Plan> {
    let anchors = Anchors {
        grammar: best_level(phase1_scores, axes, AxisName::Grammar)?,
        taxonomy: best_level(phase1_scores, axes, AxisName::Taxonomy)?,
        color: best_level(phase1_scores, axes, AxisName::Color)?,
    };
    let colors = axes.axis(AxisName::Color).values.len();
    let sizes = axes.axis(AxisName::Size).values.len();
    let anatomies = axes.axis(AxisName::Anatomy).values.len();
    let anchored = PromptSpec::baseline().with(AxisName::Taxonomy, anchors.taxonomy);

    let mut candidates = Vec::new();
    for c in 0..colors {
        for s in 0..sizes {
            let spec = anchored
                .with(AxisName::Grammar, anchors.grammar)
                .with(AxisName::Color, Level::Value(c))
                .with(AxisName::Size, Level::Value(s));
            candidates.push((spec, Sweep::ColorXSize));
        }
    }
    for g in axes.axis(AxisName::Grammar).levels().filter(|g| *g != anchors.grammar) {
        for c in 0..colors {
            let spec = anchored
                .with(AxisName::Grammar, g)
                .with(AxisName::Color, Level::Value(c));
            candidates.push((spec, Sweep::GrammarXColor));
        }
    }
    for a in 0..anatomies {
        let spec = anchored
            .with(AxisName::Grammar, anchors.grammar)
            .with(AxisName::Color, anchors.color)
            .with(AxisName::Anatomy, Level::Value(a));
        candidates.push((spec, Sweep::Anatomy));
    }

    let mut seen = HashSet::new();
    let base = candidates
        .into_iter()
        .filter(|(spec, _)| seen.insert(*spec))
        .collect();
    Ok(Phase2Plan {
        anchors,
        base,
        config,
    })
}

/// Descending by score; equal scores ordered by fingerprint.
pub fn rank(results: &[(PromptSpec, f64)]) -> Vec<(PromptSpec, f64)> {
    let mut ranked = results.to_vec();
    ranked.sort_by(|(sa, a), (sb, b)| {
        b.partial_cmp(a)
            .unwrap_or(Ordering::Equal)
            .then_with(|| sa.fingerprint().cmp(&sb.fingerprint()))
    });
    ranked
}

/// One negation variant per negation value for each of the first `top_n` ranked specs.
pub fn expand_negation(ranked: &[PromptSpec], axes: &AxisSet, top_n: usize) -> Result<Vec<PromptSpec>> {
    let head = &ranked[..top_n.min(ranked.len())];
    if let Some(spec) = head.iter().find(|s| s.level(AxisName::Negation) != Level::Baseline) {
        return Err(Error::PlanPrecondition(format!(
            "spec {} already carries a negation",
            spec.fingerprint()
        )));
    }
    let negations = axes.axis(AxisName::Negation).values.len();
    Ok(head
        .iter()
        .flat_map(|spec| (0..negations).map(move |n| spec.with(AxisName::Negation, Level::Value(n))))
        .collect())
}

/// One variant per emoji value attached to the single best spec.
pub fn expand_emoji(best: &PromptSpec, axes: &AxisSet) -> Result<Vec<PromptSpec>> {
    if best.level(AxisName::Emoji) != Level::Baseline {
        return Err(Error::PlanPrecondition(format!(
            "spec {} already carries an emoji",
            best.fingerprint()
        )));
    }
    Ok((0..axes.axis(AxisName::Emoji).values.len())
        .map(|e| best.with(AxisName::Emoji, Level::Value(e)))
        .collect())
}

/// One line of a plan dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLine {
    pub phase: String,
    pub label: String,
    pub spec: PromptSpec,
    pub prompt: String,
}

pub fn phase1_lines(plan: &Phase1Plan, axes: &AxisSet) -> Result<Vec<PlanLine>> {
    plan.entries
        .iter()
        .map(|e| {
            Ok(PlanLine {
                phase: "phase1".into(),
                label: e.label().into(),
                spec: e.spec,
                prompt: render_prompt(&e.spec, axes)?.text,
            })
        })
        .collect()
}

pub fn phase2_base_lines(plan: &Phase2Plan, axes: &AxisSet) -> Result<Vec<PlanLine>> {
    plan.base
        .iter()
        .map(|(spec, sweep)| {
            Ok(PlanLine {
                phase: "phase2_base".into(),
                label: sweep.to_string(),
                spec: *spec,
                prompt: render_prompt(spec, axes)?.text,
            })
        })
        .collect()
}

pub fn write_plan_jsonl<W: Write>(lines: &[PlanLine], mut out: W) -> std::io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::axis::Axis;

    fn phase1_scores(axes: &AxisSet, f: impl Fn(&PromptSpec) -> f64) -> ScoreBook {
        generate_ofat(axes).entries.iter().map(|e| (e.spec, f(&e.spec))).collect()
    }

    fn empty_axes_with(extra: &[(AxisName, Axis)]) -> AxisSet {
        let mut map: BTreeMap<AxisName, Axis> = AxisName::ALL
            .into_iter()
            .map(|a| (a, Axis::new("", Vec::<String>::new())))
            .collect();
        map.insert(AxisName::Taxonomy, Axis::new("flower", Vec::<String>::new()));
        for (name, axis) in extra {
            map.insert(*name, axis.clone());
        }
        AxisSet::new("t", map).unwrap()
    }

    #[test]
    fn ofat_on_bundled_axes_has_forty_entries() {
        let axes = AxisSet::cowpea_flower();
        let plan = generate_ofat(&axes);
        assert_eq!(plan.len(), 40);
        assert_eq!(plan.entries[0].label(), "baseline");
        assert_eq!(plan.entries[1].axis, Some(AxisName::Grammar));
        assert_eq!(plan.entries.last().unwrap().axis, Some(AxisName::Emoji));
    }

    #[test]
    fn ofat_with_no_values_is_baseline_only() {
        assert_eq!(generate_ofat(&empty_axes_with(&[])).len(), 1);
        let axes = empty_axes_with(&[(AxisName::Size, Axis::new("", ["big", "small"]))]);
        assert_eq!(generate_ofat(&axes).len(), 3);
    }

    #[test]
    fn best_level_argmax_and_ties() {
        let axes = AxisSet::cowpea_flower();
        let color = [0.10, 0.30, 0.20, 0.05, 0.01];
        let book = phase1_scores(&axes, |s| match s.level(AxisName::Color) {
            Level::Baseline => color[0],
            Level::Value(i) => color[i + 1],
        });
        assert_eq!(best_level(&book, &axes, AxisName::Color).unwrap(), Level::Value(0));
        assert_eq!(axes.axis(AxisName::Color).values[0], "yellow");

        let tied = phase1_scores(&axes, |_| 0.4);
        assert_eq!(best_level(&tied, &axes, AxisName::Color).unwrap(), Level::Baseline);

        let base_best = phase1_scores(&axes, |s| if *s == PromptSpec::baseline() { 0.9 } else { 0.1 });
        assert_eq!(best_level(&base_best, &axes, AxisName::Grammar).unwrap(), Level::Baseline);
    }

    #[test]
    fn best_level_tie_among_values_prefers_lowest_index() {
        let axes = AxisSet::cowpea_flower();
        let book = phase1_scores(&axes, |s| match s.level(AxisName::Size) {
            Level::Value(1) | Level::Value(2) => 0.5,
            _ => 0.1,
        });
        assert_eq!(best_level(&book, &axes, AxisName::Size).unwrap(), Level::Value(1));
    }

    #[test]
    fn best_level_missing_and_failed() {
        let axes = AxisSet::cowpea_flower();
        let mut book = phase1_scores(&axes, |_| 0.2);
        let yellow = PromptSpec::baseline().with(AxisName::Color, Level::Value(0));
        let mut partial = ScoreBook::new();
        partial.insert(PromptSpec::baseline(), 0.2);
        assert!(matches!(
            best_level(&partial, &axes, AxisName::Color),
            Err(Error::MissingScore { .. })
        ));

        // a failed trial never wins, even if it scored before being marked
        book.ok.remove(&yellow);
        book.mark_failed(yellow);
        book.insert(PromptSpec::baseline().with(AxisName::Color, Level::Value(1)), 0.3);
        assert_eq!(best_level(&book, &axes, AxisName::Color).unwrap(), Level::Value(1));
    }

    #[test]
    fn phase2_base_counts_for_bundled_axes() {
        let axes = AxisSet::cowpea_flower();
        let book = phase1_scores(&axes, |s| {
            if s.level(AxisName::Taxonomy) == Level::Value(1) {
                0.3
            } else {
                0.1
            }
        });
        let plan = generate_phase2_base(&axes, &book, Phase2Config::default()).unwrap();
        let count = |w: Sweep| plan.base.iter().filter(|(_, s)| *s == w).count();
        assert_eq!(count(Sweep::ColorXSize), 12);
        assert_eq!(count(Sweep::GrammarXColor), 20);
        assert_eq!(count(Sweep::Anatomy), 4);
        assert_eq!(plan.base.len(), 36);
        assert_eq!(plan.anchors.taxonomy, Level::Value(1));
        assert_eq!(plan.anchors.grammar, Level::Baseline);
    }

    #[test]
    fn phase2_anchor_rules_hold() {
        let axes = AxisSet::cowpea_flower();
        // grammar "a single" and color "cream" win Phase 1
        let book = phase1_scores(&axes, |s| match (s.level(AxisName::Grammar), s.level(AxisName::Color)) {
            (Level::Value(0), _) => 0.5,
            (_, Level::Value(2)) => 0.4,
            _ => 0.1,
        });
        let plan = generate_phase2_base(&axes, &book, Phase2Config::default()).unwrap();
        for (spec, sweep) in &plan.base {
            assert_eq!(spec.level(AxisName::Phenology), Level::Baseline);
            assert_eq!(spec.level(AxisName::Negation), Level::Baseline);
            assert_eq!(spec.level(AxisName::Emoji), Level::Baseline);
            match sweep {
                Sweep::ColorXSize => assert_eq!(spec.level(AxisName::Grammar), Level::Value(0)),
                Sweep::GrammarXColor => assert_ne!(spec.level(AxisName::Grammar), Level::Value(0)),
                Sweep::Anatomy => {
                    assert_eq!(spec.level(AxisName::Grammar), Level::Value(0));
                    assert_eq!(spec.level(AxisName::Color), Level::Value(2));
                }
            }
        }
        // the baseline grammar "a" participates in sweep 2 when it is not the anchor
        assert!(plan
            .base
            .iter()
            .any(|(s, w)| *w == Sweep::GrammarXColor && s.level(AxisName::Grammar) == Level::Baseline));
    }

    #[test]
    fn baseline_grammar_anchor_crosses_other_five() {
        let axes = AxisSet::cowpea_flower();
        let book = phase1_scores(&axes, |_| 0.1);
        let plan = generate_phase2_base(&axes, &book, Phase2Config::default()).unwrap();
        let grammars: HashSet<Level> = plan
            .base
            .iter()
            .filter(|(_, w)| *w == Sweep::GrammarXColor)
            .map(|(s, _)| s.level(AxisName::Grammar))
            .collect();
        assert_eq!(grammars.len(), 5);
        assert!(!grammars.contains(&Level::Baseline));
    }

    #[test]
    fn no_colors_leaves_only_anatomy_sweep() {
        let axes = empty_axes_with(&[
            (AxisName::Size, Axis::new("", ["large"])),
            (AxisName::Grammar, Axis::new("a", ["one"])),
            (AxisName::Anatomy, Axis::new("", ["with petals", "corolla"])),
        ]);
        let book = phase1_scores(&axes, |_| 0.1);
        let plan = generate_phase2_base(&axes, &book, Phase2Config::default()).unwrap();
        assert!(plan.base.iter().all(|(_, w)| *w == Sweep::Anatomy));
        assert_eq!(plan.base.len(), 2);
    }

    #[test]
    fn negation_expansion_clamps_and_checks() {
        let axes = AxisSet::cowpea_flower();
        let base: Vec<PromptSpec> = (0..4)
            .map(|c| PromptSpec::baseline().with(AxisName::Color, Level::Value(c)))
            .collect();
        assert_eq!(expand_negation(&base, &axes, 3).unwrap().len(), 15);
        assert_eq!(expand_negation(&base[..2], &axes, 3).unwrap().len(), 10);
        let tainted = [base[0].with(AxisName::Negation, Level::Value(0))];
        assert!(matches!(
            expand_negation(&tainted, &axes, 3),
            Err(Error::PlanPrecondition(_))
        ));
    }

    #[test]
    fn emoji_expansion() {
        let axes = AxisSet::cowpea_flower();
        let best = PromptSpec::baseline().with(AxisName::Negation, Level::Value(2));
        let variants = expand_emoji(&best, &axes).unwrap();
        assert_eq!(variants.len(), 6);
        let text = render_prompt(&variants[4], &axes).unwrap().text;
        assert_eq!(text, "a flower, not a leaf \u{1F490}");
        assert!(expand_emoji(&PromptSpec::baseline(), &empty_axes_with(&[]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rank_breaks_ties_by_fingerprint() {
        let a = PromptSpec::baseline().with(AxisName::Color, Level::Value(1));
        let b = PromptSpec::baseline().with(AxisName::Color, Level::Value(0));
        let c = PromptSpec::baseline();
        let ranked = rank(&[(a, 0.5), (b, 0.5), (c, 0.7)]);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![c, b, a]);
    }

    #[test]
    fn plan_jsonl_lines() {
        let axes = AxisSet::cowpea_flower();
        let lines = phase1_lines(&generate_ofat(&axes), &axes).unwrap();
        let mut buf = Vec::new();
        write_plan_jsonl(&lines, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 40);
        let first: PlanLine = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.prompt, "a flower");
        assert_eq!(first.label, "baseline");
    }
}
