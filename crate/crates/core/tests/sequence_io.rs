//! Scenes written to disk and read back through the pipeline match the
//! in-memory scene.

use motseg::clustering::{decode_gmm, encode_gmm, fit_gmm, map_clusters, GmmOptions};
use motseg::config::PipelineConfig;
use motseg::ingest::{load_point_frame, write_raw_labels, MovingClasses, PointLabels};
use motseg::mots::{extract_sequence, read_cache_file, MotsCacheWriter};
use motseg::par::Exec;
use motseg::pipeline::{self, DiskSequence, FrameSource};
use motseg::synthetic::{preset, write_scene, Scene};

fn scene(frames: usize) -> Scene {
    let mut s = preset("crossing-pedestrians").unwrap();
    s.frames = frames;
    Scene::new(s).unwrap()
}

fn disk_config(dir: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.data.frames = Some(dir.join("velodyne"));
    cfg.data.labels = Some(dir.join("labels"));
    cfg.data.moving_labels = vec![1];
    cfg.grid.radius = 1;
    cfg.grid.window = 8;
    cfg
}

#[test]
fn disk_and_memory_prepare_identically() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(12);
    write_scene(&sc, dir.path(), Exec::default()).unwrap();
    let cfg = disk_config(dir.path());
    let disk = DiskSequence::open(&cfg.data).unwrap();
    assert_eq!(disk.len(), 12);
    let a = pipeline::prepare(&disk, &cfg).unwrap();
    let b = pipeline::prepare(&sc, &cfg).unwrap();
    // f32 storage can move a point across a voxel boundary; nearly all agree
    for (x, y) in a.iter().zip(&b) {
        let same = x.voxels.iter().filter(|v| y.voxels.binary_search(v).is_ok()).count();
        assert!(same as f64 >= 0.995 * y.voxels.len() as f64);
        assert!(x.truth.is_some());
    }
}

#[test]
fn identity_poses_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(&scene(4), dir.path(), Exec::default()).unwrap();
    let poses = dir.path().join("poses.txt");
    std::fs::write(&poses, "1 0 0 0 0 1 0 0 0 0 1 0\n".repeat(4)).unwrap();
    let mut cfg = disk_config(dir.path());
    let plain = DiskSequence::open(&cfg.data).unwrap();
    cfg.data.poses = Some(poses.clone());
    let posed = DiskSequence::open(&cfg.data).unwrap();
    for t in 0..4 {
        assert_eq!(plain.load(t).unwrap().0.points, posed.load(t).unwrap().0.points);
    }
    std::fs::write(&poses, "1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
    assert!(DiskSequence::open(&cfg.data).is_err());
}

#[test]
fn mislabeled_frame_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_scene(&scene(3), dir.path(), Exec::default()).unwrap();
    write_raw_labels(&dir.path().join("labels/000001.label"), &[0, 1, 0]).unwrap();
    let cfg = disk_config(dir.path());
    let seq = DiskSequence::open(&cfg.data).unwrap();
    assert!(matches!(pipeline::prepare(&seq, &cfg), Err(motseg::Error::Data(_))));
}

#[test]
fn feature_cache_round_trips_a_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = disk_config(dir.path());
    let frames = pipeline::prepare(&scene(10), &cfg).unwrap();
    let stream = extract_sequence(frames.iter().map(|f| Ok(f.voxels.clone())), &cfg.grid).unwrap();
    let path = dir.path().join("f.mots");
    let mut writer = MotsCacheWriter::new(std::fs::File::create(&path).unwrap(), cfg.grid.channels(), 8).unwrap();
    let mut all = Vec::new();
    for batch in stream {
        for f in batch.unwrap().features {
            writer.push(&f).unwrap();
            all.push(f);
        }
    }
    writer.finish().unwrap();
    let (c, w, back) = read_cache_file(&path).unwrap();
    assert_eq!((c, w), (27, 8));
    assert_eq!(back, all);
}

#[test]
fn mixture_file_keeps_mapping() {
    let samples: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 4) as f64, (i % 7) as f64 * 0.1]).collect();
    let m = fit_gmm(&samples, 3, 1, &GmmOptions::default()).unwrap();
    let assignments: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let mask: Vec<bool> = (0..10).map(|i| i % 3 == 1).collect();
    let mapping = map_clusters(&assignments, &mask, 3, 0.15).unwrap();
    let (m2, map2) = decode_gmm(&encode_gmm(&m, Some(&mapping))).unwrap();
    assert_eq!(map2.unwrap().moving, mapping.moving);
    assert_eq!(m2.k, 3);
    // stored as f32
    for (a, b) in m.means.iter().zip(&m2.means) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }
}

#[test]
fn raw_kitti_style_labels_are_masked() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(1);
    write_scene(&sc, dir.path(), Exec::default()).unwrap();
    // instance id in the upper 16 bits
    let n = load_point_frame(&dir.path().join("velodyne/000000.bin"), 0).unwrap().len();
    let raw: Vec<u32> = (0..n as u32).map(|i| if i % 2 == 0 { (7 << 16) | 252 } else { 40 }).collect();
    write_raw_labels(&dir.path().join("labels/000000.label"), &raw).unwrap();
    let mut cfg = disk_config(dir.path());
    cfg.data.moving_labels = MovingClasses::default().values().collect();
    let seq = DiskSequence::open(&cfg.data).unwrap();
    let (_, labels) = seq.load(0).unwrap();
    let labels: PointLabels = labels.unwrap();
    assert!(labels.moving.iter().enumerate().all(|(i, &m)| m == (i % 2 == 0)));
}
