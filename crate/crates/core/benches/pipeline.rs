//! Sequential vs parallel execution of the hot loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use motseg::autoencoder::{AeArchitecture, AeParameters};
use motseg::clustering::{assign_all, fit_gmm, GmmOptions};
use motseg::mots::{extract_frame_with, neighbor_offsets, MotsFeature};
use motseg::par::Exec;
use motseg::synthetic::{preset, Scene};
use motseg::voxelgrid::{voxelize, SparseFrameState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

/// Occupancy state after 15 frames of the mixed scene.
fn warm_state() -> SparseFrameState {
    let scene = Scene::new(preset("mixed-intersection").unwrap()).unwrap();
    let mut state = SparseFrameState::new(15).unwrap();
    for t in 0..15 {
        let (frame, _) = scene.frame(t).unwrap();
        let (kept, _) = motseg::ingest::remove_ground(&frame, -1.0);
        state.advance(&voxelize(&kept, 0.2).voxels);
    }
    state
}

fn bench_mots(c: &mut Criterion) {
    let state = warm_state();
    let offsets = neighbor_offsets(2).unwrap();
    let mut g = c.benchmark_group("mots_extract_r2");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(extract_frame_with(exec, &state, &offsets)))
        });
    }
    g.finish();
}

fn features(n: usize) -> Vec<MotsFeature> {
    let state = warm_state();
    let offsets = neighbor_offsets(2).unwrap();
    extract_frame_with(Exec::Sequential, &state, &offsets)
        .features
        .into_iter()
        .take(n)
        .collect()
}

fn bench_autoencoder(c: &mut Criterion) {
    let params = AeParameters::init(AeArchitecture::for_radius(2, 15, 32), 0).unwrap();
    let batch = features(256);
    let mut g = c.benchmark_group("autoencoder_r2_batch256");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("gradients", name), |b| {
            b.iter(|| black_box(params.batch_gradients(exec, &batch, 1.0).unwrap()))
        });
        g.bench_function(BenchmarkId::new("encode", name), |b| {
            b.iter(|| black_box(params.encode_batch(exec, &batch).unwrap()))
        });
    }
    g.finish();
}

fn bench_gmm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<Vec<f64>> = (0..20_000)
        .map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let opts = GmmOptions {
        max_iter: 3,
        ..GmmOptions::default()
    };
    let model = fit_gmm(&samples, 20, 0, &opts).unwrap();
    let mut g = c.benchmark_group("gmm_e32_k20_n20000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("assign", name), |b| {
            b.iter(|| black_box(assign_all(&model, &samples, exec).unwrap()))
        });
        let o = GmmOptions { exec, ..opts.clone() };
        g.bench_function(BenchmarkId::new("fit_3_iter", name), |b| {
            b.iter(|| black_box(fit_gmm(&samples, 20, 0, &o).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_mots, bench_autoencoder, bench_gmm);
criterion_main!(benches);
