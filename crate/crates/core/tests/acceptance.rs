//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use motseg::autoencoder::{encode_model, AeArchitecture, AeParameters};
use motseg::clustering::{assign_all, encode_gmm, fit_gmm, GmmOptions};
use motseg::config::PipelineConfig;
use motseg::evaluation::{frame_iou, sweep, SweepGrid};
use motseg::mots::{extract_sequence, MotsFeature};
use motseg::par::Exec;
use motseg::pipeline::{self, RunOutput};
use motseg::synthetic::{preset, Scene, SceneSpec};
use motseg::voxelgrid::{GridConfig, VoxelCoord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Dense reference: full 4D occupancy array and direct indexing.
fn dense_mots(video: &[Vec<VoxelCoord>], dims: [i32; 3], t: usize, r: i32, w: usize) -> Vec<(VoxelCoord, Vec<Vec<u8>>)> {
    let idx = |v: VoxelCoord| ((v.ix * dims[1] + v.iy) * dims[2] + v.iz) as usize;
    let n = (dims[0] * dims[1] * dims[2]) as usize;
    let mut occ = vec![vec![0u8; n]; video.len()];
    for (f, vox) in video.iter().enumerate() {
        for &v in vox {
            occ[f][idx(v)] = 1;
        }
    }
    let inside = |v: VoxelCoord| v.ix >= 0 && v.iy >= 0 && v.iz >= 0 && v.ix < dims[0] && v.iy < dims[1] && v.iz < dims[2];
    let mut centers: Vec<VoxelCoord> = video[t].clone();
    centers.sort();
    centers.dedup();
    centers
        .into_iter()
        .map(|c| {
            let mut rows = Vec::new();
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        let v = VoxelCoord::new(c.ix + dx, c.iy + dy, c.iz + dz);
                        let row = (0..w)
                            .map(|j| {
                                let tt = t as i64 - (w as i64 - 1) + j as i64;
                                if tt < 0 || !inside(v) {
                                    0
                                } else {
                                    occ[tt as usize][idx(v)]
                                }
                            })
                            .collect();
                        rows.push(row);
                    }
                }
            }
            (c, rows)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut videos = 0;
    for _ in 0..120 {
        let dims = [0; 3].map(|_| rng.random_range(3..=16));
        let frames = rng.random_range(1..=40);
        let r = rng.random_range(0..=2);
        let w = [8, 15, 20][rng.random_range(0..3)];
        let density = rng.random_range(0.01..0.4);
        let video: Vec<Vec<VoxelCoord>> = (0..frames)
            .map(|_| {
                let mut v = Vec::new();
                for x in 0..dims[0] {
                    for y in 0..dims[1] {
                        for z in 0..dims[2] {
                            if rng.random_bool(density) {
                                v.push(VoxelCoord::new(x, y, z));
                            }
                        }
                    }
                }
                v
            })
            .collect();
        let cfg = GridConfig::new(0.2, w, r as usize).map_err(|e| e.to_string())?;
        let stream = extract_sequence(video.iter().cloned().map(Ok), &cfg).map_err(|e| e.to_string())?;
        for (t, batch) in stream.enumerate() {
            let batch = batch.map_err(|e| e.to_string())?;
            let want = dense_mots(&video, dims, t, r, w);
            if batch.len() != want.len() {
                return Err(format!("video {videos} frame {t}: {} features, dense {}", batch.len(), want.len()));
            }
            for (f, (c, rows)) in batch.features.iter().zip(&want) {
                let got: Vec<Vec<u8>> = (0..f.channels()).map(|ch| f.row_vec(ch)).collect();
                if f.center != *c || &got != rows || f.frame_index != t {
                    return Err(format!("video {videos} frame {t}: mismatch at {c:?}"));
                }
            }
        }
        videos += 1;
    }
    let took = start.elapsed();
    check(
        videos >= 100 && took < Duration::from_secs(60),
        format!("{videos} random videos bit-identical to the dense oracle in {took:.1?}"),
    )
}

fn criterion_2() -> Outcome {
    let c1 = GridConfig::new(0.2, 15, 1).map_err(|e| e.to_string())?.channels();
    let c2 = GridConfig::new(0.2, 15, 2).map_err(|e| e.to_string())?.channels();
    let a1 = AeArchitecture::for_radius(1, 15, 32).channels;
    let a2 = AeArchitecture::for_radius(2, 15, 32).channels;
    check(
        (c1, c2, a1, a2) == (27, 125, 27, 125),
        format!("channels r=1: {c1}, r=2: {c2}"),
    )
}

fn random_feature(rng: &mut ChaCha8Rng, channels: usize, w: usize) -> MotsFeature {
    MotsFeature {
        rows: (0..channels).map(|_| rng.random::<u64>() & ((1u64 << w) - 1)).collect(),
        window: w,
        center: VoxelCoord::default(),
        frame_index: 0,
    }
}

/// Worst relative error over all parameters, or `None` when a ±h step
/// flips a ReLU and the finite difference straddles a kink.
fn gradient_error(p: &mut AeParameters, batch: &[MotsFeature], h: f64) -> Option<f64> {
    let (grad, _) = p.batch_gradients(Exec::Sequential, batch, 1.0).ok()?;
    let pattern = p.relu_pattern(batch);
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p.values[i];
        p.values[i] = orig + h;
        let up = p.batch_loss(batch).ok()?;
        let smooth = p.relu_pattern(batch) == pattern;
        p.values[i] = orig - h;
        let down = p.batch_loss(batch).ok()?;
        let smooth = smooth && p.relu_pattern(batch) == pattern;
        p.values[i] = orig;
        if !smooth {
            return None;
        }
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8));
    }
    Some(worst)
}

fn criterion_3() -> Outcome {
    let mut arch = AeArchitecture::for_radius(1, 8, 4);
    arch.conv = [8, 8, 8];
    arch.fc_hidden = 16;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut p = AeParameters::init(arch, seed).map_err(|e| e.to_string())?;
        for l in p.layers().to_vec() {
            for v in &mut p.values[l.bias.clone()] {
                *v = rng.random_range(-0.05..0.05);
            }
        }
        let batch: Vec<MotsFeature> = (0..2).map(|_| random_feature(&mut rng, 27, 8)).collect();
        if let Some(worst) = gradient_error(&mut p, &batch, 1e-4) {
            return check(
                worst <= 1e-3,
                format!("C=27 w=8 e=4, {} parameters, worst relative error {worst:.2e} (seed {seed})", p.len()),
            );
        }
    }
    Err("no test point without ReLU kinks found".into())
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = GmmOptions::default();
    for d in 0..20 {
        let dim = rng.random_range(1..6);
        let n = rng.random_range(50..400);
        let k = rng.random_range(1..6);
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..dim).map(|_| rng.random_range(-1.0..1.0) + (i % 3) as f64).collect())
            .collect();
        let m = fit_gmm(&samples, k, d, &opts).map_err(|e| e.to_string())?;
        for (i, pair) in m.log_likelihood.windows(2).enumerate() {
            if m.reseeded_at.contains(&(i + 1)) {
                continue;
            }
            if pair[1] < pair[0] - 1e-9 {
                return Err(format!("dataset {d}: log-likelihood fell at iteration {} ({} -> {})", i + 1, pair[0], pair[1]));
            }
        }
    }
    // centers 3σ from the midpoint on either side
    let sigma = 0.5;
    let centers = [[-1.5, 0.0], [1.5, 0.0]];
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    for i in 0..2000 {
        let c = centers[i % 2];
        samples.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
        truth.push(i % 2);
    }
    let m = fit_gmm(&samples, 2, 7, &opts).map_err(|e| e.to_string())?;
    let a = assign_all(&m, &samples, Exec::default()).map_err(|e| e.to_string())?;
    let same = a.iter().zip(&truth).filter(|(x, y)| x == y).count();
    let acc = same.max(samples.len() - same) as f64 / samples.len() as f64;
    let flip = same < samples.len() / 2;
    let err = (0..2)
        .map(|j| {
            let c = centers[if flip { 1 - j } else { j }];
            let mu = m.mean(j);
            ((mu[0] - c[0]).powi(2) + (mu[1] - c[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    check(
        acc >= 0.99 && err <= 0.1,
        format!("log-likelihood monotone on 20 datasets; two blobs: accuracy {acc:.4}, worst mean error {err:.3}"),
    )
}

fn criterion_5() -> Outcome {
    let v = |i| VoxelCoord::new(i, 0, 0);
    let u: Vec<_> = (0..6).map(v).collect();
    let a = frame_iou(&[v(1), v(2)], &[v(1), v(2)], &u, 0).map_err(|e| e.to_string())?.iou;
    let b = frame_iou(&[v(1)], &[v(3)], &u, 0).map_err(|e| e.to_string())?.iou;
    let c = frame_iou(&[v(1), v(2)], &[v(2), v(3)], &u, 0).map_err(|e| e.to_string())?.iou;
    check(
        a == 1.0 && b == 0.0 && (c - 1.0 / 3.0).abs() < 1e-12,
        format!("identical {a}, disjoint {b}, one of three {c:.6}"),
    )
}

/// Desk-scale training settings shared by the end-to-end runs.
fn desk_config(r: usize, w: usize, e: usize, k: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.grid.resolution = 0.2;
    cfg.grid.radius = r;
    cfg.grid.window = w;
    cfg.model.code = e;
    cfg.gmm.k = k;
    cfg.train.batch_size = 256;
    cfg.train.learning_rate = 1e-3;
    cfg.train.epochs = 4;
    cfg.train.max_samples = 40_000;
    cfg.train.log_every = 50;
    cfg
}

fn criterion_6() -> Outcome {
    let spec = preset("mixed-intersection").ok_or("missing preset")?;
    let frames = spec.frames;
    let scene = Scene::new(spec).map_err(|e| e.to_string())?;
    let cfg = desk_config(2, 15, 32, 20);
    let start = Instant::now();
    let prepared = pipeline::prepare(&scene, &cfg).map_err(|e| e.to_string())?;
    let report = pipeline::train_model(&prepared, &cfg).map_err(|e| e.to_string())?;
    let train_time = start.elapsed();
    let fit = pipeline::fit_clusters(&report.params, &prepared, &cfg).map_err(|e| e.to_string())?;
    let pred = pipeline::segment_sequence(&report.params, &fit.model, &fit.mapping, &prepared, &cfg).map_err(|e| e.to_string())?;
    let eval = pipeline::evaluate(&prepared, &pred).map_err(|e| e.to_string())?.ok_or("no labels")?;
    let mapped = fit.mapping.moving.len();
    check(
        frames == 200 && eval.miou >= 0.70 && (1..=4).contains(&mapped) && train_time <= Duration::from_secs(30 * 60),
        format!(
            "{frames} frames: mIoU {:.4}, {mapped} clusters mapped moving {:?}, training {train_time:.0?}, total {:.0?}",
            eval.miou,
            fit.mapping.moving,
            start.elapsed()
        ),
    )
}

fn short(name: &str, frames: usize) -> Result<SceneSpec, String> {
    let mut s = preset(name).ok_or("missing preset")?;
    s.frames = frames;
    Ok(s)
}

fn criterion_7() -> Outcome {
    let scenes = [
        Scene::new(short("crossing-pedestrians", 60)?).map_err(|e| e.to_string())?,
        Scene::new(short("passing-car", 60)?).map_err(|e| e.to_string())?,
    ];
    let names: Vec<String> = scenes.iter().map(|s| s.spec().name.clone()).collect();
    let grid = SweepGrid {
        radius: vec![0, 2],
        code: vec![16],
        clusters: vec![10],
        window: vec![15],
    };
    let table = sweep(&grid, &names, |cell| {
        let mut cfg = desk_config(cell.radius, cell.window, cell.code, cell.clusters);
        cfg.train.max_samples = 15_000;
        cfg.train.epochs = 3;
        scenes
            .iter()
            .map(|s| Ok(pipeline::run(s, &cfg)?.eval.map_or(f64::NAN, |e| e.miou)))
            .collect()
    })
    .map_err(|e| e.to_string())?;
    let mean = |r: usize| table.rows.iter().find(|row| row.cell.radius == r && row.ok()).map(|row| row.mean);
    match (mean(0), mean(2)) {
        (Some(m0), Some(m2)) => check(m2 >= m0, format!("mean mIoU r=2 {m2:.4} vs r=0 {m0:.4} over {names:?}")),
        _ => Err(format!("sweep cell failed: {:?}", table.rows.iter().map(|r| &r.error).collect::<Vec<_>>())),
    }
}

fn exported(run: &RunOutput) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("predictions.csv");
    pipeline::write_predictions_csv(&path, &run.frames, &run.predictions).map_err(|e| e.to_string())?;
    Ok((
        encode_model(&run.report.params),
        encode_gmm(&run.clusters.model, Some(&run.clusters.mapping)),
        std::fs::read(&path).map_err(|e| e.to_string())?,
    ))
}

fn criterion_8() -> Outcome {
    let scene = Scene::new(short("crossing-pedestrians", 40)?).map_err(|e| e.to_string())?;
    let mut cfg = desk_config(1, 10, 8, 5);
    cfg.train.max_samples = 4000;
    cfg.train.epochs = 2;
    let a = exported(&pipeline::run(&scene, &cfg).map_err(|e| e.to_string())?)?;
    let b = exported(&pipeline::run(&scene, &cfg).map_err(|e| e.to_string())?)?;
    cfg.exec = Exec::Sequential;
    let c = exported(&pipeline::run(&scene, &cfg).map_err(|e| e.to_string())?)?;
    let sizes: BTreeSet<_> = [a.0.len(), a.1.len(), a.2.len()].into();
    check(
        a == b && a == c,
        format!("model, mixture and prediction bytes identical across runs and execution modes (sizes {sizes:?})"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 sparse MOTS equals dense oracle", criterion_1),
        ("2 channel counts", criterion_2),
        ("3 autoencoder gradient check", criterion_3),
        ("4 EM monotonicity and blob recovery", criterion_4),
        ("5 frame IoU on hand-built masks", criterion_5),
        ("6 end-to-end mixed-intersection", criterion_6),
        ("7 radius ablation direction", criterion_7),
        ("8 determinism", criterion_8),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
