//! Codes of a trained autoencoder separate static from moving neighborhoods.

use motseg::autoencoder::{train, AeArchitecture, TrainConfig};
use motseg::mots::{neighbor_offsets, MotsFeature};
use motseg::par::Exec;
use motseg::voxelgrid::VoxelCoord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 10;

fn feature(rows: Vec<u64>) -> MotsFeature {
    MotsFeature {
        rows,
        window: W,
        center: VoxelCoord::default(),
        frame_index: 0,
    }
}

/// Random occupied neighbors, each constant over the window.
fn static_sample(rng: &mut ChaCha8Rng) -> MotsFeature {
    let offsets = neighbor_offsets(1).unwrap();
    let full = (1u64 << W) - 1;
    let rows = offsets
        .as_slice()
        .iter()
        .map(|&d| if d == (0, 0, 0) || rng.random_bool(0.3) { full } else { 0 })
        .collect();
    feature(rows)
}

/// A slab crossing the neighborhood along x or y: the occupied offsets
/// shift by one every `period` frames, a diagonal band over time.
fn moving_sample(rng: &mut ChaCha8Rng) -> MotsFeature {
    let offsets = neighbor_offsets(1).unwrap();
    let axis = rng.random_range(0..2);
    let sign = if rng.random_bool(0.5) { 1 } else { -1 };
    let period = rng.random_range(1..=3);
    // position is 0 (the center) at the newest step
    let rows = offsets
        .as_slice()
        .iter()
        .map(|&(dx, dy, _)| {
            let along = if axis == 0 { dx } else { dy };
            let mut bits = 0u64;
            for age in 0..W as i32 {
                if along == -sign * (age / period) {
                    bits |= 1 << age;
                }
            }
            bits
        })
        .collect();
    feature(rows)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn static_and_moving_codes_are_centroid_separable() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let make = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<MotsFeature>, Vec<bool>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let moving = i % 2 == 1;
            xs.push(if moving { moving_sample(rng) } else { static_sample(rng) });
            ys.push(moving);
        }
        (xs, ys)
    };
    let (train_x, train_y) = make(&mut rng, 2000);
    let (test_x, test_y) = make(&mut rng, 1000);
    let mut arch = AeArchitecture::for_radius(1, W, 8);
    arch.fc_hidden = 32;
    let cfg = TrainConfig {
        batch_size: 64,
        learning_rate: 1e-3,
        epochs: 6,
        seed: 2,
        log_every: 50,
        exec: Exec::default(),
    };
    let report = train(&train_x, arch, &cfg).unwrap();
    let p = &report.params;
    let codes = |xs: &[MotsFeature]| -> Vec<Vec<f64>> { p.encode_batch(Exec::default(), xs).unwrap().into_iter().map(|e| e.code).collect() };
    let train_z = codes(&train_x);
    let mut centroid = [vec![0.0; 8], vec![0.0; 8]];
    let mut count = [0.0; 2];
    for (z, &y) in train_z.iter().zip(&train_y) {
        count[y as usize] += 1.0;
        for (c, v) in centroid[y as usize].iter_mut().zip(z) {
            *c += v;
        }
    }
    for k in 0..2 {
        centroid[k].iter_mut().for_each(|c| *c /= count[k]);
    }
    let test_z = codes(&test_x);
    let correct = test_z
        .iter()
        .zip(&test_y)
        .filter(|(z, &y)| (dist2(z, &centroid[1]) < dist2(z, &centroid[0])) == y)
        .count();
    let acc = correct as f64 / test_z.len() as f64;
    assert!(acc >= 0.95, "held-out centroid accuracy {acc}");
}
