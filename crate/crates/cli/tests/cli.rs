use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motseg::autoencoder::{encode_model, load_model, save_model};
use motseg::config::PipelineConfig;
use motseg::ingest::list_frame_files;
use motseg::pipeline::{self, DiskSequence};
use motseg::voxelgrid::VoxelCoord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn motseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, preset: &str, frames: usize) -> PathBuf {
    let n = frames.to_string();
    ok(&motseg(&["synth", "--preset", preset, "--out", s(dir), "--frames", &n]));
    dir.join("motseg.cfg")
}

/// Small settings so a full run takes seconds.
fn small_flags(out: &Path) -> Vec<String> {
    [
        ("--data.output", s(out)),
        ("--grid.r", "1"),
        ("--grid.w", "8"),
        ("--model.e", "4"),
        ("--model.conv", "8,8,8"),
        ("--model.fc_hidden", "16"),
        ("--train.batch", "64"),
        ("--train.lr", "1e-3"),
        ("--train.max_samples", "2000"),
        ("--train.log_every", "5"),
        ("--gmm.k", "4"),
        ("--gmm.first_n_frames", "3"),
    ]
    .iter()
    .flat_map(|(k, v)| [k.to_string(), v.to_string()])
    .collect()
}

fn with(cmd: &[&str], extra: &[String]) -> Vec<String> {
    cmd.iter().map(|s| s.to_string()).chain(extra.iter().cloned()).collect()
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    motseg(&refs)
}

#[test]
fn synth_writes_one_file_per_frame_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(ok(&motseg(&["synth", "--preset", "mixed-intersection", "--out", s(a.path())])).trim(), "200");
    ok(&motseg(&["synth", "--preset", "mixed-intersection", "--out", s(b.path())]));
    let fa = list_frame_files(&a.path().join("velodyne")).unwrap();
    let fb = list_frame_files(&b.path().join("velodyne")).unwrap();
    assert_eq!(fa.len(), 200);
    assert_eq!(std::fs::read_dir(a.path().join("labels")).unwrap().count(), 200);
    for (x, y) in fa.iter().zip(&fb).step_by(37) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let la = std::fs::read(a.path().join("labels/000123.label")).unwrap();
    let lb = std::fs::read(b.path().join("labels/000123.label")).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn synth_lists_presets_and_rejects_unknown() {
    let list = ok(&motseg(&["synth", "--list"]));
    assert!(list.contains("crossing-pedestrians") && list.contains("passing-car"));
    let dir = tempfile::tempdir().unwrap();
    let out = motseg(&["synth", "--preset", "nope", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_frames_dir_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    let out = motseg(&["train", "--data.frames", s(&missing), "--data.output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does not exist") && err.contains("nothing-here"), "{err}");
}

#[test]
fn zero_frames_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("velodyne");
    std::fs::create_dir(&empty).unwrap();
    let out = motseg(&["segment", "--data.frames", s(&empty), "--data.output", s(dir.path())]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "grid.w = 3\n").unwrap();
    assert_eq!(motseg(&["train", "--config", s(&cfg)]).status.code(), Some(2));
    std::fs::write(&cfg, "grid.q = 3\n").unwrap();
    let out = motseg(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(motseg(&["train", "--gmm.threshold", "0"]).status.code(), Some(2));
}

#[test]
fn help_documents_every_key() {
    let help = ok(&motseg(&["segment", "--help"]));
    for (key, _) in motseg::config::KEYS {
        assert!(help.contains(&format!("--{key}")), "{key}");
    }
}

#[test]
fn train_segment_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = synth(&dir.path().join("scene"), "crossing-pedestrians", 24);
    let out = dir.path().join("run");
    let flags = small_flags(&out);
    let base = ["--config", s(&cfg_path)];

    ok(&run(&with(&[&["train"], &base[..]].concat(), &flags)));
    let loss: Vec<f64> = std::fs::read_to_string(out.join("loss.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(loss.len() > 2 && loss.last() < loss.first(), "{loss:?}");

    // load → save → load is the identity
    let model = load_model(&out.join("model.mae")).unwrap();
    let again = dir.path().join("again.mae");
    save_model(&again, &model).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(out.join("model.mae")).unwrap());
    assert_eq!(encode_model(&load_model(&again).unwrap()), encode_model(&model));

    let stdout = ok(&run(&with(&[&["segment", "--fit-gmm", "--export-points"], &base[..]].concat(), &flags)));
    assert!(stdout.starts_with("mIoU "), "{stdout}");
    assert!(out.join("gmm.mgmm").exists() && out.join("results.csv").exists());
    assert_eq!(std::fs::read_dir(out.join("labels")).unwrap().count(), 24);

    // per-frame voxel counts equal the occupied count after ground removal
    let mut cfg = PipelineConfig::load(&cfg_path).unwrap();
    cfg.grid.radius = 1;
    cfg.grid.window = 8;
    let seq = DiskSequence::open(&cfg.data).unwrap();
    let frames = pipeline::prepare(&seq, &cfg).unwrap();
    let preds = pipeline::read_predictions_csv(&out.join("predictions.csv")).unwrap();
    for f in &frames {
        assert_eq!(preds[&f.frame_index].len(), f.voxels.len());
    }

    // eval on the exported predictions agrees with segment
    let eval_out = ok(&run(&with(&[&["eval"], &base[..]].concat(), &flags)));
    assert_eq!(eval_out, stdout);

    // segmenting again with the saved mixture reproduces the predictions
    let first = std::fs::read(out.join("predictions.csv")).unwrap();
    let gmm = out.join("gmm.mgmm");
    ok(&run(&with(&[&["segment", "--gmm", s(&gmm)], &base[..]].concat(), &flags)));
    assert_eq!(std::fs::read(out.join("predictions.csv")).unwrap(), first);
}

#[test]
fn segment_rejects_mismatched_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = synth(&dir.path().join("scene"), "passing-car", 12);
    let out = dir.path().join("run");
    let flags = small_flags(&out);
    ok(&run(&with(&["train", "--config", s(&cfg_path)], &flags)));
    let mut wrong = flags.clone();
    wrong.extend(["--grid.r".to_string(), "2".to_string()]);
    let res = run(&with(&["segment", "--config", s(&cfg_path)], &wrong));
    assert_eq!(res.status.code(), Some(2));
}

fn write_predictions(path: &Path, rows: &BTreeMap<usize, Vec<(VoxelCoord, bool)>>) {
    let mut text = String::from("ix,iy,iz,t,label\n");
    for (t, r) in rows {
        for (v, m) in r {
            text.push_str(&format!("{},{},{},{t},{}\n", v.ix, v.iy, v.iz, *m as u8));
        }
    }
    std::fs::write(path, text).unwrap();
}

fn miou(stdout: &str) -> f64 {
    stdout.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn eval_matches_library_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = synth(&dir.path().join("scene"), "crossing-pedestrians", 10);
    let out = dir.path().join("run");
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    let frames = pipeline::prepare(&DiskSequence::open(&cfg.data).unwrap(), &cfg).unwrap();
    let pred_path = dir.path().join("p.csv");
    let args = |p: &Path| {
        vec![
            "eval".to_string(),
            "--config".into(),
            s(&cfg_path).into(),
            "--data.output".into(),
            s(&out).into(),
            "--predictions".into(),
            s(p).into(),
        ]
    };

    // predictions equal to the lifted labels
    let truth: BTreeMap<_, _> = frames
        .iter()
        .map(|f| (f.frame_index, f.voxels.iter().copied().zip(f.truth.clone().unwrap()).collect()))
        .collect();
    write_predictions(&pred_path, &truth);
    assert_eq!(miou(&ok(&run(&args(&pred_path)))), 1.0);

    // random masks
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let random: BTreeMap<_, _> = frames
        .iter()
        .map(|f| (f.frame_index, f.voxels.iter().map(|&v| (v, rng.random_bool(0.05))).collect::<Vec<_>>()))
        .collect();
    write_predictions(&pred_path, &random);
    let want = pipeline::evaluate_predictions(&frames, &random).unwrap().miou;
    assert!((miou(&ok(&run(&args(&pred_path)))) - want).abs() < 1e-6);

    // a predicted voxel that is not occupied is a data error
    let mut bogus = BTreeMap::new();
    bogus.insert(0, vec![(VoxelCoord::new(9999, 0, 0), true)]);
    write_predictions(&pred_path, &bogus);
    assert_eq!(run(&args(&pred_path)).status.code(), Some(3));
}

#[test]
fn empty_prediction_on_fully_moving_scene_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    // only movers: every labeled point is moving
    let mut spec = motseg::synthetic::preset("passing-car").unwrap();
    spec.statics.clear();
    spec.frames = 5;
    let scene = motseg::synthetic::Scene::new(spec).unwrap();
    std::fs::create_dir_all(&scene_dir).unwrap();
    motseg::synthetic::write_scene(&scene, &scene_dir, Default::default()).unwrap();
    let pred = dir.path().join("p.csv");
    std::fs::write(&pred, "ix,iy,iz,t,label\n").unwrap();
    let stdout = ok(&motseg(&[
        "eval",
        "--data.frames",
        s(&scene_dir.join("velodyne")),
        "--data.labels",
        s(&scene_dir.join("labels")),
        "--data.moving_labels",
        "1",
        "--data.output",
        s(&dir.path().join("run")),
        "--predictions",
        s(&pred),
    ]));
    assert_eq!(miou(&stdout), 0.0);
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "crossing-pedestrians", 16);
    let out = dir.path().join("sweep");
    let mut args = with(&["sweep"], &small_flags(&out));
    args.extend(
        [
            ("--data.moving_labels", "1"),
            ("--sweep.r", "0,1"),
            ("--sweep.e", "4"),
            ("--sweep.k", "3"),
            ("--sweep.w", "8"),
            ("--sweep.scenes", s(&scene)),
        ]
        .iter()
        .flat_map(|(k, v)| [k.to_string(), v.to_string()]),
    );
    let stdout = ok(&run(&args));
    assert!(stdout.starts_with("axis,value,mean,std,cells"));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].starts_with("r,e,k,w,"));
    assert!(lines[1].starts_with("0,4,3,8,") && lines[2].starts_with("1,4,3,8,"));
    assert!(lines[1].ends_with(','), "cell failed: {}", lines[1]);
}
