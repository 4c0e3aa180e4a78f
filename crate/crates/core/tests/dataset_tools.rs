use efk_core::dataset::{
    build_split, filter_small_boxes, parse_annotations, parse_split_metadata, serialize_annotations, warp_box,
    DatasetError, GroundTruthBox, Homography, ParseOptions, DEFAULT_MIN_DIAG,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: &GroundTruthBox, b: &GroundTruthBox) -> bool {
    [(a.x, b.x), (a.y, b.y), (a.w, b.w), (a.h, b.h)].iter().all(|(u, v)| (u - v).abs() < 1e-9)
        && a.frame_id == b.frame_id
        && a.class_name == b.class_name
}

#[test]
fn diagonal_filter_boundary() {
    let boxes = vec![
        GroundTruthBox::new("s/1", 0.0, 0.0, 18.0, 24.0, "car"),
        GroundTruthBox::new("s/1", 0.0, 0.0, 20.0, 20.0, "car"),
    ];
    let kept = filter_small_boxes(&boxes, DEFAULT_MIN_DIAG);
    assert_eq!(kept, vec![boxes[0].clone()]);
}

#[test]
fn identity_and_translation_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let target = (640.0, 480.0);
    for _ in 0..100 {
        let b = GroundTruthBox::new(
            "s/1",
            rng.gen_range(0.0..500.0),
            rng.gen_range(0.0..400.0),
            rng.gen_range(1.0..100.0),
            rng.gen_range(1.0..60.0),
            "car",
        );
        let inside = GroundTruthBox { w: b.w.min(target.0 - b.x), h: b.h.min(target.1 - b.y), ..b.clone() };
        let same = warp_box(&Homography::identity(), &inside, target).unwrap().unwrap();
        assert!(close(&same, &inside));

        let (tx, ty) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let shifted = warp_box(&Homography::translation(tx, ty), &inside, (1e6, 1e6)).unwrap();
        if inside.x + tx >= 0.0 && inside.y + ty >= 0.0 {
            let moved = GroundTruthBox { x: inside.x + tx, y: inside.y + ty, ..inside.clone() };
            assert!(close(&shifted.unwrap(), &moved));
        }
    }
}

#[test]
fn warp_matches_projected_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..200 {
        let m = [
            1.0 + rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-0.1..0.1),
            1.0 + rng.gen_range(-0.1..0.1),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-1e-4..1e-4),
            rng.gen_range(-1e-4..1e-4),
            1.0,
        ];
        let h = Homography::from_row_major(m).unwrap();
        let b = GroundTruthBox::new("s/1", rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0), 40.0, 30.0, "car");
        let big = (1e6, 1e6);
        let got = warp_box(&h, &b, big).unwrap().unwrap();
        let (x0, y0, x1, y1) = efk_oracles::warped_hull(&m, (b.x, b.y, b.w, b.h));
        assert!((got.x - x0.max(0.0)).abs() < 1e-9);
        assert!((got.y - y0.max(0.0)).abs() < 1e-9);
        assert!((got.x + got.w - x1).abs() < 1e-9);
        assert!((got.y + got.h - y1).abs() < 1e-9);
    }
}

#[test]
fn warp_outside_target_is_dropped() {
    let b = GroundTruthBox::new("s/1", 10.0, 10.0, 5.0, 5.0, "car");
    assert_eq!(warp_box(&Homography::translation(-100.0, 0.0), &b, (64.0, 64.0)).unwrap(), None);
}

#[test]
fn singular_homography_is_rejected() {
    assert!(matches!(
        Homography::from_row_major([1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]),
        Err(DatasetError::Homography(_))
    ));
}

#[test]
fn annotation_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let boxes: Vec<GroundTruthBox> = (0..200)
        .map(|i| {
            GroundTruthBox::new(
                format!("seq{}/{:06}", i % 7, i),
                rng.gen_range(0.0..640.0),
                rng.gen_range(0.0..480.0),
                rng.gen_range(0.5..200.0),
                rng.gen_range(0.5..200.0),
                ["car", "pedestrian", "truck"][i % 3],
            )
        })
        .collect();
    let text = serialize_annotations(&boxes);
    let parsed = parse_annotations(&text, &ParseOptions::default()).unwrap();
    assert_eq!(parsed.boxes, boxes);
    assert_eq!(serialize_annotations(&parsed.boxes), text);
}

#[test]
fn bad_record_reports_its_line() {
    let text = "{\"frame\":\"a/1\",\"x\":0,\"y\":0,\"w\":3,\"h\":4,\"class\":\"car\"}\n\n{\"frame\":\"a/2\",\"x\":0}\n";
    match parse_annotations(text, &ParseOptions::default()) {
        Err(DatasetError::Record { line: 3, .. }) => {}
        other => panic!("{other:?}"),
    }
    let lenient = ParseOptions { strict: false, ..ParseOptions::default() };
    let parsed = parse_annotations(text, &lenient).unwrap();
    assert_eq!(parsed.boxes.len(), 1);
    assert_eq!(parsed.warnings[0].line, 3);
}

#[test]
fn splits_filter_by_lighting_and_class() {
    let meta = parse_split_metadata(r#"{"zurich_a": {"time": "day"}, "zurich_b": {"time": "night"}}"#).unwrap();
    let boxes = vec![
        GroundTruthBox::new("zurich_a/1", 0.0, 0.0, 30.0, 30.0, "car"),
        GroundTruthBox::new("zurich_a/1", 0.0, 0.0, 30.0, 30.0, "truck"),
        GroundTruthBox::new("zurich_a/2", 0.0, 0.0, 30.0, 30.0, "bus"),
        GroundTruthBox::new("zurich_b/1", 0.0, 0.0, 30.0, 30.0, "pedestrian"),
    ];
    let day = build_split(&boxes, &meta, &"daytime/balanced".parse().unwrap()).unwrap();
    assert_eq!(day.frames, vec!["zurich_a/1", "zurich_a/2"]);
    assert_eq!(day.boxes, vec![boxes[0].clone()]);
    let night = build_split(&boxes, &meta, &"nighttime/imbalanced".parse().unwrap()).unwrap();
    assert_eq!(night.boxes, vec![boxes[3].clone()]);
    let all = build_split(&boxes, &Default::default(), &"all/imbalanced".parse().unwrap()).unwrap();
    assert_eq!(all.boxes.len(), 4);
    assert!(matches!(
        build_split(&boxes, &Default::default(), &"daytime".parse().unwrap()),
        Err(DatasetError::UnknownSequence { .. })
    ));
}
