use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use promptaxis::axis::{Axis, AxisName, AxisSet, Level, PromptSpec};
use promptaxis::plan::{expand_emoji, expand_negation, generate_ofat, generate_phase2_base, rank, Phase2Config, ScoreBook};
use promptaxis::render_prompt;

/// Random axis set: each axis gets 0..=5 distinct values and an optional
/// baseline; taxonomy always has a noun baseline.
fn axis_set() -> impl Strategy<Value = AxisSet> {
    (
        proptest::collection::vec(0usize..=5, 8),
        proptest::collection::vec(any::<bool>(), 8),
    )
        .prop_map(|(counts, has_base)| {
            let mut map = BTreeMap::new();
            for (k, name) in AxisName::ALL.into_iter().enumerate() {
                let tag = name.as_str();
                let baseline = match name {
                    AxisName::Taxonomy => "thing".to_string(),
                    _ if has_base[k] => format!("{tag}base"),
                    _ => String::new(),
                };
                let values: Vec<String> = (0..counts[k])
                    .map(|i| match name {
                        AxisName::Negation => format!("not a {tag}{i}"),
                        _ => format!("{tag}{i}"),
                    })
                    .collect();
                map.insert(name, Axis::new(baseline, values));
            }
            AxisSet::new("thing", map).unwrap()
        })
}

fn seeded_scores(axes: &AxisSet, seed: u64) -> ScoreBook {
    generate_ofat(axes)
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            // cheap deterministic hash, coarse so that ties happen
            let h = (seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            (e.spec, (h >> 60) as f64 / 16.0)
        })
        .collect()
}

proptest! {
    #[test]
    fn ofat_size_and_shape(axes in axis_set()) {
        let plan = generate_ofat(&axes);
        let values: usize = AxisName::ALL.iter().map(|a| axes.axis(*a).values.len()).sum();
        prop_assert_eq!(plan.len(), 1 + values);
        prop_assert_eq!(plan.entries[0].spec, PromptSpec::baseline());
        let unique: HashSet<_> = plan.entries.iter().map(|e| e.spec).collect();
        prop_assert_eq!(unique.len(), plan.len());
        for e in &plan.entries[1..] {
            prop_assert_eq!(e.spec.perturbed_axes(), vec![e.axis.unwrap()]);
        }
    }

    #[test]
    fn rendering_is_deterministic_and_emoji_is_a_suffix(axes in axis_set()) {
        for e in generate_ofat(&axes).entries {
            let a = render_prompt(&e.spec, &axes).unwrap();
            let b = render_prompt(&e.spec, &axes).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(!a.text.contains("  "));
            prop_assert_eq!(a.text.trim(), a.text.as_str());
            if let Level::Value(i) = e.spec.level(AxisName::Emoji) {
                let emoji = &axes.axis(AxisName::Emoji).values[i];
                let suffix = format!(" {}", emoji);
                prop_assert!(a.text.ends_with(&suffix));
            }
            prop_assert_eq!(PromptSpec::from_fingerprint(&a.fingerprint).unwrap(), e.spec);
        }
    }

    #[test]
    fn phase2_counts(axes in axis_set(), seed in any::<u64>(), top_n in 1usize..5) {
        let scores = seeded_scores(&axes, seed);
        let config = Phase2Config::new(top_n, true).unwrap();
        let plan = generate_phase2_base(&axes, &scores, config).unwrap();
        let n = |a: AxisName| axes.axis(a).values.len();
        let upper = n(AxisName::Color) * n(AxisName::Size)
            + n(AxisName::Grammar) * n(AxisName::Color)
            + n(AxisName::Anatomy);
        prop_assert!(plan.base.len() <= upper);
        let unique: HashSet<_> = plan.base.iter().map(|(s, _)| *s).collect();
        prop_assert_eq!(unique.len(), plan.base.len());
        for (spec, _) in &plan.base {
            prop_assert_eq!(spec.level(AxisName::Taxonomy), plan.anchors.taxonomy);
            prop_assert_eq!(spec.level(AxisName::Negation), Level::Baseline);
            prop_assert_eq!(spec.level(AxisName::Emoji), Level::Baseline);
        }

        let results: Vec<(PromptSpec, f64)> = plan.base.iter().enumerate().map(|(i, (s, _))| (*s, (i % 3) as f64)).collect();
        let ranked: Vec<PromptSpec> = rank(&results).into_iter().map(|(s, _)| s).collect();
        let negs = expand_negation(&ranked, &axes, top_n).unwrap();
        prop_assert_eq!(negs.len(), top_n.min(ranked.len()) * n(AxisName::Negation));
        if let Some(best) = ranked.first() {
            prop_assert_eq!(expand_emoji(best, &axes).unwrap().len(), n(AxisName::Emoji));
        }
    }

    #[test]
    fn ranking_is_a_total_order(scores in proptest::collection::vec(0u8..4, 1..20)) {
        let axes = AxisSet::cowpea_flower();
        let specs: Vec<PromptSpec> = generate_ofat(&axes).entries.iter().map(|e| e.spec).collect();
        let results: Vec<(PromptSpec, f64)> = scores.iter().enumerate().map(|(i, s)| (specs[i], *s as f64)).collect();
        let mut shuffled = results.clone();
        shuffled.reverse();
        prop_assert_eq!(rank(&results), rank(&shuffled));
    }
}

#[test]
fn best_level_skips_failed_trials() {
    let axes = AxisSet::cowpea_flower();
    let plan = generate_ofat(&axes);
    let white = PromptSpec::baseline().with(AxisName::Color, Level::Value(1));
    let mut scores = ScoreBook::new();
    for e in plan.entries.iter().filter(|e| e.spec != white) {
        let yellow = e.spec.level(AxisName::Color) == Level::Value(0);
        scores.insert(e.spec, if yellow { 0.9 } else { 0.1 });
    }
    // a failed trial must not be mistaken for a missing one
    assert!(generate_phase2_base(&axes, &scores, Phase2Config::default()).is_err());
    scores.mark_failed(white);
    let p2 = generate_phase2_base(&axes, &scores, Phase2Config::default()).unwrap();
    assert_eq!(p2.anchors.color, Level::Value(0));
    assert_eq!(p2.anchors.grammar, Level::Baseline);
}
