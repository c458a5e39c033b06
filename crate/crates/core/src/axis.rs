//! Prompt axes, level assignments and the slot-ordered prompt template.
//!
//! A prompt is assembled from eight slots, always in the order
//! `grammar size color taxonomy anatomy phenology, negation emoji`.
//! Every axis carries a baseline (possibly empty) and an ordered list of
//! alternative values. A [`PromptSpec`] picks one level per axis.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight prompt axes, declared in template slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    Grammar,
    Size,
    Color,
    Taxonomy,
    Anatomy,
    Phenology,
    Negation,
    Emoji,
}

impl AxisName {
    /// All axes in slot order.
    pub const ALL: [AxisName; 8] = [
        AxisName::Grammar,
        AxisName::Size,
        AxisName::Color,
        AxisName::Taxonomy,
        AxisName::Anatomy,
        AxisName::Phenology,
        AxisName::Negation,
        AxisName::Emoji,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::Grammar => "grammar",
            AxisName::Size => "size",
            AxisName::Color => "color",
            AxisName::Taxonomy => "taxonomy",
            AxisName::Anatomy => "anatomy",
            AxisName::Phenology => "phenology",
            AxisName::Negation => "negation",
            AxisName::Emoji => "emoji",
        }
    }

    /// Position in the slot template.
    pub fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AxisName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AxisName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidAxes(format!("unknown axis `{s}`")))
    }
}

/// One axis: a baseline level plus alternative values.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Axis {
    pub baseline: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(baseline: impl Into<String>, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            baseline: baseline.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    /// Text contributed by `level`, or `None` if the value index is out of range.
    pub fn text(&self, level: Level) -> Option<&str> {
        match level {
            Level::Baseline => Some(&self.baseline),
            Level::Value(i) => self.values.get(i).map(String::as_str),
        }
    }

    /// Baseline first, then every value in config order.
    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        std::iter::once(Level::Baseline).chain((0..self.values.len()).map(Level::Value))
    }

    /// Human-readable label for a level; empty levels are spelled out.
    pub fn label(&self, level: Level) -> String {
        match (level, self.text(level)) {
            (_, None) => format!("{level}?"),
            (Level::Baseline, Some("")) => "none".to_string(),
            (Level::Value(_), Some("")) => "<empty>".to_string(),
            (_, Some(t)) => t.to_string(),
        }
    }
}

/// Assignment of a single axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Level {
    #[default]
    Baseline,
    Value(usize),
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Baseline => f.write_str("base"),
            Level::Value(i) => write!(f, "{i:03}"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "base" {
            return Ok(Level::Baseline);
        }
        s.parse::<usize>()
            .map(Level::Value)
            .map_err(|_| Error::InvalidSpec(format!("bad level `{s}`")))
    }
}

/// The full axis catalogue for one target object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisSet {
    target: String,
    axes: [Axis; 8],
}

#[derive(Serialize, Deserialize)]
struct AxisDocument {
    target: String,
    axes: BTreeMap<String, Axis>,
}

impl AxisSet {
    pub fn new(target: impl Into<String>, axes: BTreeMap<AxisName, Axis>) -> Result<Self> {
        let mut doc_axes = BTreeMap::new();
        for (name, axis) in axes {
            doc_axes.insert(name.as_str().to_string(), axis);
        }
        Self::from_document(AxisDocument {
            target: target.into(),
            axes: doc_axes,
        })
        .map_err(|errs| Error::InvalidAxes(errs.join("; ")))
    }

    fn from_document(doc: AxisDocument) -> std::result::Result<Self, Vec<String>> {
        let mut errors = Vec::new();
        for key in doc.axes.keys() {
            if key.parse::<AxisName>().is_err() {
                errors.push(format!("unknown axis `{key}`"));
            }
        }
        let mut axes: [Axis; 8] = Default::default();
        for name in AxisName::ALL {
            match doc.axes.get(name.as_str()) {
                None => errors.push(format!("missing axis `{name}`")),
                Some(axis) => {
                    let mut seen = std::collections::HashSet::new();
                    for text in std::iter::once(&axis.baseline).chain(&axis.values) {
                        if !seen.insert(text.as_str()) {
                            errors.push(format!("axis `{name}` repeats level `{text}`"));
                        }
                    }
                    axes[name.slot()] = axis.clone();
                }
            }
        }
        if axes[AxisName::Taxonomy.slot()].baseline.trim().is_empty() {
            errors.push("taxonomy baseline must be non-empty".to_string());
        }
        if errors.is_empty() {
            Ok(Self {
                target: doc.target,
                axes,
            })
        } else {
            Err(errors)
        }
    }

    /// Parse and validate an axis document, collecting every problem found.
    pub fn validate_json(text: &str) -> std::result::Result<Self, Vec<String>> {
        let doc: AxisDocument = serde_json::from_str(text).map_err(|e| vec![e.to_string()])?;
        Self::from_document(doc)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::validate_json(text).map_err(|errs| Error::InvalidAxes(errs.join("; ")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::validate_json(&text).map_err(|errs| Error::parse(path, errs.join("; ")))
    }

    pub fn to_json_string(&self) -> String {
        let doc = AxisDocument {
            target: self.target.clone(),
            axes: AxisName::ALL
                .into_iter()
                .map(|n| (n.as_str().to_string(), self.axes[n.slot()].clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("axis document serializes")
    }

    /// Cowpea flower axes used throughout the original benchmark.
    pub fn cowpea_flower() -> Self {
        Self::from_json_str(include_str!("../fixtures/cowpea_flower_axes.json"))
            .expect("bundled axis file is valid")
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn axis(&self, name: AxisName) -> &Axis {
        &self.axes[name.slot()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (AxisName, &Axis)> {
        AxisName::ALL.into_iter().map(move |n| (n, &self.axes[n.slot()]))
    }

    /// Number of non-baseline values summed over all axes.
    pub fn perturbation_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).sum()
    }
}

/// One level per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PromptSpec {
    levels: [Level; 8],
}

impl PromptSpec {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn level(&self, axis: AxisName) -> Level {
        self.levels[axis.slot()]
    }

    pub fn set(&mut self, axis: AxisName, level: Level) {
        self.levels[axis.slot()] = level;
    }

    #[must_use]
    pub fn with(mut self, axis: AxisName, level: Level) -> Self {
        self.set(axis, level);
        self
    }

    /// Axes whose level differs from baseline.
    pub fn perturbed_axes(&self) -> Vec<AxisName> {
        AxisName::ALL
            .into_iter()
            .filter(|a| self.level(*a) != Level::Baseline)
            .collect()
    }

    pub fn validate(&self, axes: &AxisSet) -> Result<()> {
        for (name, axis) in axes.iter() {
            if let Level::Value(i) = self.level(name) {
                if i >= axis.values.len() {
                    return Err(Error::InvalidSpec(format!(
                        "axis `{name}` has {} values, index {i} requested",
                        axis.values.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical serialization used as the dedup and ranking tie-break key.
    pub fn fingerprint(&self) -> String {
        AxisName::ALL
            .iter()
            .map(|a| format!("{}={}", a, self.level(*a)))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_fingerprint(fp: &str) -> Result<Self> {
        let mut spec = PromptSpec::baseline();
        let mut seen = 0usize;
        for part in fp.split(',') {
            let (name, level) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("bad fingerprint `{fp}`")))?;
            spec.set(name.parse()?, level.parse()?);
            seen += 1;
        }
        if seen != AxisName::ALL.len() || spec.fingerprint() != fp {
            return Err(Error::InvalidSpec(format!("bad fingerprint `{fp}`")));
        }
        Ok(spec)
    }
}

impl Serialize for PromptSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.fingerprint())
    }
}

impl<'de> Deserialize<'de> for PromptSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PromptSpec::from_fingerprint(&s).map_err(serde::de::Error::custom)
    }
}

/// A spec rendered against its axis set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub spec: PromptSpec,
    pub fingerprint: String,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Render `spec` into prompt text.
///
/// Slots up to phenology are space-joined; a non-empty negation is attached
/// with `", "`; a non-empty emoji is appended after a single space.
pub fn render_prompt(spec: &PromptSpec, axes: &AxisSet) -> Result<RenderedPrompt> {
    spec.validate(axes)?;
    let slot = |name: AxisName| {
        normalize_ws(axes.axis(name).text(spec.level(name)).unwrap_or_default())
    };

    let mut text = AxisName::ALL[..AxisName::Negation.slot()]
        .iter()
        .map(|a| slot(*a))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");

    let negation = slot(AxisName::Negation);
    if !negation.is_empty() {
        if !text.is_empty() {
            text.push_str(", ");
        }
        text.push_str(&negation);
    }
    let emoji = slot(AxisName::Emoji);
    if !emoji.is_empty() {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&emoji);
    }

    if text.is_empty() {
        return Err(Error::EmptyRender);
    }
    Ok(RenderedPrompt {
        text,
        spec: *spec,
        fingerprint: spec.fingerprint(),
    })
}
