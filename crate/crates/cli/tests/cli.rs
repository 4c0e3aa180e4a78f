use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use efk_core::event::{decode_evt1, encode_evt1, Event, EventWindow, Polarity};
use efk_core::fusion::{random_features, Modality};
use efk_core::represent::polarity_integration;
use efk_core::Tensor;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn efk(dir: &Path, args: &[&str]) -> Output {
    efk_with_threads(dir, args, None)
}

fn efk_with_threads(dir: &Path, args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_efk"));
    cmd.current_dir(dir).args(args);
    match threads {
        Some(n) => cmd.env("EFK_THREADS", n.to_string()),
        None => cmd.env_remove("EFK_THREADS"),
    };
    cmd.output().expect("efk runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn failed_with(out: &Output, code: &str) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.starts_with(&format!("error[{code}]")), "stderr: {err}");
    err
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn scene(dir: &TempDir) -> PathBuf {
    ok(&efk(dir.path(), &["simulate", "--out", "bar.evt1", "--target", "bar.png"]));
    dir.path().join("bar.evt1")
}

#[test]
fn convert_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    scene(&dir);
    ok(&efk(dir.path(), &["convert", "bar.evt1", "--out", "bar.csv"]));
    ok(&efk(dir.path(), &["convert", "bar.csv", "--width", "32", "--height", "24", "--out", "back.evt1"]));
    assert_eq!(sha(&dir.path().join("bar.evt1")), sha(&dir.path().join("back.evt1")));
}

#[test]
fn empty_input_converts_to_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "x,y,t_us,p\n").unwrap();
    ok(&efk(dir.path(), &["convert", "empty.csv", "--width", "4", "--height", "3", "--out", "e.evt1"]));
    let w = decode_evt1(&std::fs::read(dir.path().join("e.evt1")).unwrap()).unwrap();
    assert!(w.is_empty());
    assert_eq!((w.width(), w.height()), (4, 3));
}

#[test]
fn csv_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "x,y,t_us,p\n0,0,5,1\n1,1,x,1\n").unwrap();
    let out = efk(dir.path(), &["convert", "bad.csv", "--width", "4", "--height", "4", "--out", "o.evt1"]);
    let err = failed_with(&out, "E_CODEC");
    assert!(err.contains("bad.csv") && err.contains("line 3"), "{err}");
}

#[test]
fn single_event_gives_one_hot_frame() {
    let dir = tempfile::tempdir().unwrap();
    let w = EventWindow::from_events(vec![Event::new(2, 1, 500, Polarity::Positive)], 4, 3).unwrap();
    std::fs::write(dir.path().join("one.evt1"), encode_evt1(&w).unwrap()).unwrap();
    ok(&efk(dir.path(), &["represent", "one.evt1", "--out", "f.tnsr", "--png", "f.png"]));
    let t = Tensor::load(dir.path().join("f.tnsr")).unwrap();
    assert_eq!(t.shape(), &[2, 3, 4]);
    let hot: Vec<usize> = t.data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    assert_eq!(hot, vec![4 + 2]);
    assert_eq!(t.data()[6], 1.0);
}

#[test]
fn voxel_output_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = scene(&dir);
    ok(&efk(dir.path(), &["represent", "bar.evt1", "--kind", "voxel", "--out", "v.tnsr"]));
    let window = decode_evt1(&std::fs::read(path).unwrap()).unwrap();
    let want = polarity_integration(&window, 10).unwrap().data;
    assert_eq!(Tensor::load(dir.path().join("v.tnsr")).unwrap(), want);
}

#[test]
fn sif_zero_iterations_and_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    scene(&dir);
    ok(&efk(dir.path(), &["represent", "bar.evt1", "--out", "f.tnsr"]));
    ok(&efk(dir.path(), &["sif", "bar.evt1", "--target", "bar.png", "--iterations", "0", "--out", "s0.tnsr"]));
    let f = Tensor::load(dir.path().join("f.tnsr")).unwrap();
    let s0 = Tensor::load(dir.path().join("s0.tnsr")).unwrap();
    let plane = f.shape()[1] * f.shape()[2];
    let init: Vec<f32> = (0..plane).map(|i| f.data()[i].max(f.data()[plane + i])).collect();
    assert_eq!(s0.data(), init.as_slice());

    let trace = ok(&efk(dir.path(), &["sif", "bar.evt1", "--target", "bar.png", "--out", "s.tnsr"]));
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iteration,cc_term,tv_term,total"));
    let totals: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(totals.len(), 201);
    assert!(totals.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn sif_rejects_mismatched_target() {
    let dir = tempfile::tempdir().unwrap();
    scene(&dir);
    Tensor::zeros(&[5, 5]).save(dir.path().join("small.tnsr")).unwrap();
    let out = efk(dir.path(), &["sif", "bar.evt1", "--target", "small.tnsr", "--out", "s.tnsr"]);
    failed_with(&out, "E_SHAPE");
}

#[test]
fn zero_output_projection_reproduces_rgb() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = random_features(8, 5, 6, Modality::Rgb, 3);
    random_features(8, 5, 6, Modality::Event, 4).data.save(dir.path().join("e.tnsr")).unwrap();
    rgb.data.save(dir.path().join("r.tnsr")).unwrap();
    let report = ok(&efk(
        dir.path(),
        &["afcm-demo", "--rgb", "r.tnsr", "--event", "e.tnsr", "--zero-out", "--out", "fused.tnsr"],
    ));
    assert_eq!(Tensor::load(dir.path().join("fused.tnsr")).unwrap(), rgb.data);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["within_tolerance"], true);
    assert_eq!(v["max_residual"], 0.0);
}

#[test]
fn missing_weight_is_named() {
    let dir = tempfile::tempdir().unwrap();
    ok(&efk(dir.path(), &["afcm-demo", "--save-weights", "w", "--out", "a.tnsr"]));
    std::fs::remove_file(dir.path().join("w/erm.weight.tnsr")).unwrap();
    let err = failed_with(&efk(dir.path(), &["afcm-demo", "--weights", "w", "--out", "b.tnsr"]), "E_WEIGHT_MISSING");
    assert!(err.contains("erm.weight"), "{err}");
}

const GTS: &str = "\
{\"frame\":\"day_seq/1\",\"x\":0,\"y\":0,\"w\":40,\"h\":40,\"class\":\"car\"}
{\"frame\":\"day_seq/1\",\"x\":100,\"y\":100,\"w\":40,\"h\":40,\"class\":\"car\"}
{\"frame\":\"day_seq/2\",\"x\":0,\"y\":0,\"w\":50,\"h\":50,\"class\":\"truck\"}
{\"frame\":\"day_seq/2\",\"x\":0,\"y\":0,\"w\":10,\"h\":10,\"class\":\"car\"}
";

const DETS: &str = "\
{\"frame\":\"day_seq/1\",\"x\":0,\"y\":0,\"w\":40,\"h\":40,\"class\":\"car\",\"score\":0.9}
{\"frame\":\"day_seq/1\",\"x\":300,\"y\":300,\"w\":40,\"h\":40,\"class\":\"car\",\"score\":0.8}
{\"frame\":\"day_seq/2\",\"x\":0,\"y\":0,\"w\":50,\"h\":50,\"class\":\"truck\",\"score\":0.7}
";

fn eval_fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gts.jsonl"), GTS).unwrap();
    std::fs::write(dir.path().join("dets.jsonl"), DETS).unwrap();
    std::fs::write(dir.path().join("meta.json"), r#"{"day_seq": {"time": "day"}}"#).unwrap();
    dir
}

fn metrics(dir: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["eval", "--dets", "dets.jsonl", "--gts", "gts.jsonl"];
    args.extend_from_slice(extra);
    serde_json::from_str(&ok(&efk(dir, &args))).unwrap()
}

#[test]
fn eval_reproduces_hand_fixture() {
    let dir = eval_fixture();
    // the 10x10 car is filtered out; car has one hit then one miss over two boxes
    let all_points = metrics(dir.path(), &["--interp", "all-points"]);
    assert_eq!(all_points["per_class"]["car"]["ap50"], 0.5);
    assert_eq!(all_points["per_class"]["truck"]["ap50"], 1.0);
    let coco = metrics(dir.path(), &[]);
    assert_eq!(coco["per_class"]["car"]["ap50"].as_f64().unwrap(), 51.0 / 101.0);
}

#[test]
fn balanced_split_drops_other_classes() {
    let dir = eval_fixture();
    let m = metrics(dir.path(), &["--split", "daytime/balanced", "--metadata", "meta.json"]);
    let classes: Vec<&String> = m["per_class"].as_object().unwrap().keys().collect();
    assert_eq!(classes, vec!["car"]);
}

#[test]
fn perfect_detections_score_one() {
    let dir = eval_fixture();
    std::fs::write(
        dir.path().join("dets.jsonl"),
        GTS.lines()
            .map(|l| l.replace('}', ",\"score\":1.0}"))
            .collect::<Vec<_>>()
            .join("\n"),
    )
    .unwrap();
    let m = metrics(dir.path(), &["--min-diag", "0"]);
    assert_eq!(m["map50"], 1.0);
    assert_eq!(m["map5095"], 1.0);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    scene(&dir);
    std::fs::write(dir.path().join("cfg.json"), r#"{"slices": 4}"#).unwrap();
    ok(&efk(dir.path(), &["--config", "cfg.json", "represent", "bar.evt1", "--kind", "voxel", "--out", "a.tnsr"]));
    assert_eq!(Tensor::load(dir.path().join("a.tnsr")).unwrap().shape()[0], 4);
    ok(&efk(
        dir.path(),
        &["represent", "bar.evt1", "--kind", "voxel", "--out", "b.tnsr", "--config", "cfg.json", "--slices", "6"],
    ));
    assert_eq!(Tensor::load(dir.path().join("b.tnsr")).unwrap().shape()[0], 6);
    std::fs::write(dir.path().join("bad.json"), r#"{"omega": 4}"#).unwrap();
    failed_with(&efk(dir.path(), &["--config", "bad.json", "represent", "bar.evt1", "--out", "c.tnsr"]), "E_CONFIG");
}

#[test]
fn annotate_warps_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("a.jsonl"),
        "{\"frame\":\"s/1\",\"x\":10,\"y\":10,\"w\":18,\"h\":24,\"class\":\"car\"}\n\
         {\"frame\":\"s/1\",\"x\":10,\"y\":10,\"w\":20,\"h\":20,\"class\":\"car\"}\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("h.txt"), "1 0 5\n0 1 -3\n0 0 1\n").unwrap();
    let out = ok(&efk(dir.path(), &["annotate", "a.jsonl", "--homography", "h.txt", "--target-size", "640x480"]));
    assert_eq!(out, "{\"frame\":\"s/1\",\"x\":15.0,\"y\":7.0,\"w\":18.0,\"h\":24.0,\"class\":\"car\"}\n");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    scene(&dir);
    let runs: [(&[&str], &str); 3] = [
        (&["represent", "bar.evt1", "--kind", "voxel", "--out", "OUT"], "OUT"),
        (&["sif", "bar.evt1", "--target", "bar.png", "--iterations", "20", "--out", "OUT"], "OUT"),
        (&["afcm-demo", "--stage", "conv", "--seed", "5", "--out", "OUT"], "OUT"),
    ];
    for (args, _) in runs {
        let mut hashes = Vec::new();
        for threads in [1, 4] {
            let name = format!("out_{threads}.bin");
            let args: Vec<&str> = args.iter().map(|a| if *a == "OUT" { name.as_str() } else { a }).collect();
            let stdout = ok(&efk_with_threads(dir.path(), &args, Some(threads)));
            hashes.push((sha(&dir.path().join(&name)), stdout));
        }
        assert_eq!(hashes[0], hashes[1], "{args:?}");
    }
}
