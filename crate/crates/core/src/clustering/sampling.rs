use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `(frame, index)` pairs of a uniform sample without replacement from the
/// pooled items of the first `first_n_frames` frames. Returns every item
/// when fewer than `target` are available. Output is sorted.
pub fn sample_indices(frame_sizes: &[usize], first_n_frames: usize, target: usize, seed: u64) -> Vec<(usize, usize)> {
    let frames = &frame_sizes[..first_n_frames.min(frame_sizes.len())];
    let available: usize = frames.iter().sum();
    let mut picks: Vec<usize> = if available <= target {
        (0..available).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, available, target).into_vec()
    };
    picks.sort_unstable();
    let mut out = Vec::with_capacity(picks.len());
    let (mut frame, mut base) = (0, 0);
    for p in picks {
        while p >= base + frames[frame] {
            base += frames[frame];
            frame += 1;
        }
        out.push((frame, p - base));
    }
    out
}

/// Uniform sample of the embeddings of the first `first_n_frames` frames.
pub fn sample_for_fit<T: Clone>(per_frame: &[Vec<T>], first_n_frames: usize, target: usize, seed: u64) -> Vec<T> {
    let sizes: Vec<usize> = per_frame.iter().map(Vec::len).collect();
    sample_indices(&sizes, first_n_frames, target, seed)
        .into_iter()
        .map(|(f, i)| per_frame[f][i].clone())
        .collect()
}
