mod common;

use std::path::Path;

use common::*;
use proptest::prelude::*;
use promptaxis::{load_coco, load_prediction_cache, map_at_50, DetectionSet, EvalOptions, GroundTruthSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coco_round_trip(seed in any::<u64>()) {
        let (gt, _) = to_engine(&random_scene(&mut ChaCha8Rng::seed_from_u64(seed)));
        let again = GroundTruthSet::from_coco_str(&gt.to_coco_json(), Path::new("mem")).unwrap();
        prop_assert_eq!(gt, again);
    }

    #[test]
    fn cache_round_trip_and_line_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
        let (gt, dets) = to_engine(&scene);
        let text = dets.to_jsonl();
        let again = DetectionSet::from_jsonl_str(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(&dets, &again);

        let mut lines: Vec<&str> = text.lines().collect();
        lines.shuffle(&mut rng);
        let shuffled = DetectionSet::from_jsonl_str(&lines.join("\n"), Path::new("mem")).unwrap();
        prop_assert_eq!(&dets, &shuffled);
        let a = map_at_50(&dets, &gt, PROMPT, &EvalOptions::default()).unwrap();
        let b = map_at_50(&shuffled, &gt, PROMPT, &EvalOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn annotation_order_is_irrelevant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gt, dets) = to_engine(&random_scene(&mut rng));
        let mut doc: serde_json::Value = serde_json::from_str(&gt.to_coco_json()).unwrap();
        doc["annotations"].as_array_mut().unwrap().shuffle(&mut rng);
        doc["images"].as_array_mut().unwrap().shuffle(&mut rng);
        let shuffled = GroundTruthSet::from_coco_str(&doc.to_string(), Path::new("mem")).unwrap();
        prop_assert_eq!(&gt, &shuffled);
        let a = map_at_50(&dets, &gt, PROMPT, &EvalOptions::default()).unwrap().map_at_50;
        let b = map_at_50(&dets, &shuffled, PROMPT, &EvalOptions::default()).unwrap().map_at_50;
        prop_assert_eq!(a, b);
    }
}

#[test]
fn bundled_scene_loads() {
    let gt = load_coco(fixture("scene_flowers.json")).unwrap();
    assert_eq!(gt.images.len(), 12);
    assert!(gt.warnings.is_empty());
    assert_eq!(gt.category, "flower");
}

#[test]
fn cache_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    std::fs::write(
        &path,
        "{\"image_id\":1,\"prompt\":\"a flower\",\"detections\":[{\"bbox\":[0,0,5,5],\"score\":0.5}]}\n\
         {\"image_id\":1,\"prompt\":\"a flower\",\"detections\":[{\"bbox\":[0,0,5,5],\"score\":1.5}]}\n",
    )
    .unwrap();
    match load_prediction_cache(&path) {
        Err(promptaxis::Error::ScoreOutOfRange { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected ScoreOutOfRange, got {other:?}"),
    }

    std::fs::write(
        &path,
        "{\"image_id\":1,\"prompt\":\"a flower\",\"detections\":[{\"bbox\":[0,0,0,5],\"score\":0.5},{\"bbox\":[0,0,5,5],\"score\":0.4}]}\n",
    )
    .unwrap();
    let set = load_prediction_cache(&path).unwrap();
    assert_eq!(set.get(1, "a flower").unwrap().len(), 1);
    assert_eq!(set.warnings.len(), 1);
}

#[test]
fn coco_validation_errors() {
    let dangling = r#"{"images":[{"id":1,"file_name":"a","width":10,"height":10}],
        "annotations":[{"id":1,"image_id":2,"bbox":[0,0,1,1]}],"categories":[{"id":1,"name":"flower"}]}"#;
    assert!(matches!(
        GroundTruthSet::from_coco_str(dangling, Path::new("x")),
        Err(promptaxis::Error::DanglingAnnotation { ann_id: 1, image_id: 2 })
    ));
    let zero = r#"{"images":[{"id":1,"file_name":"a","width":10,"height":10}],
        "annotations":[{"id":1,"image_id":1,"bbox":[0,0,0,1]}],"categories":[{"id":1,"name":"flower"}]}"#;
    assert!(matches!(
        GroundTruthSet::from_coco_str(zero, Path::new("x")),
        Err(promptaxis::Error::ZeroAreaBox { ann_id: 1, .. })
    ));
    let clamp = r#"{"images":[{"id":1,"file_name":"a","width":10,"height":10}],
        "annotations":[{"id":1,"image_id":1,"bbox":[5,5,10,10]}],"categories":[{"id":1,"name":"flower"}]}"#;
    let gt = GroundTruthSet::from_coco_str(clamp, Path::new("x")).unwrap();
    assert_eq!(gt.annotations[0].bbox.to_array(), [5.0, 5.0, 5.0, 5.0]);
    assert_eq!(gt.warnings.len(), 1);
}
