use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::par::{self, Exec};

const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub var_floor: f64,
    pub exec: Exec,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iter: 100,
            tol: 1e-4,
            var_floor: 1e-6,
            exec: Exec::default(),
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    /// Row-major `k × dim`.
    pub means: Vec<f64>,
    /// Row-major `k × dim`, every entry at least `var_floor`.
    pub variances: Vec<f64>,
    pub var_floor: f64,
    pub fitted: bool,
    pub seed: u64,
    /// Mean log-likelihood evaluated at the start of every EM iteration.
    pub log_likelihood: Vec<f64>,
    /// Iterations after which a degenerate component was re-seeded.
    pub reseeded_at: Vec<usize>,
    pub converged: bool,
}

impl GmmModel {
    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn variance(&self, j: usize) -> &[f64] {
        &self.variances[j * self.dim..(j + 1) * self.dim]
    }

    /// Per-component `log π_j + log N(x | μ_j, σ²_j)`.
    fn component_log_densities(&self, pre: &Precomputed, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let mu = self.mean(j);
            let iv = &pre.inv_var[j * self.dim..(j + 1) * self.dim];
            let mut q = 0.0;
            for d in 0..self.dim {
                let diff = x[d] - mu[d];
                q += diff * diff * iv[d];
            }
            *o = pre.log_const[j] - 0.5 * q;
        }
    }

    fn precompute(&self) -> Precomputed {
        let mut log_const = Vec::with_capacity(self.k);
        for j in 0..self.k {
            let log_det: f64 = self.variance(j).iter().map(|v| (2.0 * PI * v).ln()).sum();
            log_const.push(self.weights[j].ln() - 0.5 * log_det);
        }
        Precomputed {
            log_const,
            inv_var: self.variances.iter().map(|v| 1.0 / v).collect(),
        }
    }
}

struct Precomputed {
    log_const: Vec<f64>,
    inv_var: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<usize> {
    let dim = samples
        .first()
        .map(|s| s.as_ref().len())
        .ok_or_else(|| Error::Argument("no samples".into()))?;
    if dim == 0 {
        return Err(Error::Argument("zero-dimensional samples".into()));
    }
    for s in samples {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(Error::shape(dim, s.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
    }
    Ok(dim)
}

/// Indices of the k-means++ seeding: first uniform, then proportional to
/// the squared distance to the nearest chosen center.
pub fn kmeans_pp_indices<S: AsRef<[f64]>>(samples: &[S], k: usize, seed: u64) -> Vec<usize> {
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = samples
        .iter()
        .map(|s| sq_dist(s.as_ref(), samples[chosen[0]].as_ref()))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            // rounding can leave `pick` on a zero-distance tail sample
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&d| d > 0.0).unwrap();
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        let c = samples[next].as_ref();
        for (d, s) in nearest.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s.as_ref(), c));
        }
    }
    chosen
}

struct ChunkStats {
    resp: Vec<f64>,
    mass: Vec<f64>,
    sums: Vec<f64>,
    ll: f64,
}

fn e_step<S: AsRef<[f64]> + Sync>(model: &GmmModel, samples: &[S], exec: Exec) -> Vec<ChunkStats> {
    let pre = model.precompute();
    let (k, dim) = (model.k, model.dim);
    par::map_chunks(exec, samples, CHUNK, |chunk| {
        let mut st = ChunkStats {
            resp: vec![0.0; chunk.len() * k],
            mass: vec![0.0; k],
            sums: vec![0.0; k * dim],
            ll: 0.0,
        };
        for (s, r) in chunk.iter().zip(st.resp.chunks_exact_mut(k)) {
            let x = s.as_ref();
            model.component_log_densities(&pre, x, r);
            let lse = log_sum_exp(r);
            st.ll += lse;
            for (j, rj) in r.iter_mut().enumerate() {
                *rj = (*rj - lse).exp();
                st.mass[j] += *rj;
                let row = &mut st.sums[j * dim..(j + 1) * dim];
                for d in 0..dim {
                    row[d] += *rj * x[d];
                }
            }
        }
        st
    })
}

/// Mean log-likelihood of `samples` under `model`.
pub fn log_likelihood<S: AsRef<[f64]> + Sync>(model: &GmmModel, samples: &[S]) -> f64 {
    let stats = e_step(model, samples, Exec::default());
    stats.iter().map(|s| s.ll).sum::<f64>() / samples.len() as f64
}

fn global_variance<S: AsRef<[f64]>>(samples: &[S], dim: usize, floor: f64) -> Vec<f64> {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for d in 0..dim {
            let diff = s.as_ref()[d] - mean[d];
            var[d] += diff * diff;
        }
    }
    var.iter().map(|v| (v / n).max(floor)).collect()
}

/// Fits a `k`-component diagonal mixture by EM from a k-means++ start.
pub fn fit_gmm<S: AsRef<[f64]> + Sync>(samples: &[S], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmModel> {
    check_samples(samples)?;
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    let mut distinct: FxHashSet<Vec<u64>> = FxHashSet::default();
    for s in samples {
        distinct.insert(s.as_ref().iter().map(|v| v.to_bits()).collect());
        if distinct.len() >= k {
            break;
        }
    }
    if distinct.len() < k {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the {} distinct samples",
            distinct.len()
        )));
    }
    let centers: Vec<Vec<f64>> = kmeans_pp_indices(samples, k, seed)
        .into_iter()
        .map(|i| samples[i].as_ref().to_vec())
        .collect();
    fit_gmm_from_means(samples, &centers, seed, opts)
}

/// EM from explicit initial means, uniform weights and the pooled per-dimension variance.
pub fn fit_gmm_from_means<S: AsRef<[f64]> + Sync>(
    samples: &[S],
    initial_means: &[Vec<f64>],
    seed: u64,
    opts: &GmmOptions,
) -> Result<GmmModel> {
    let dim = check_samples(samples)?;
    let k = initial_means.len();
    if k == 0 || initial_means.iter().any(|m| m.len() != dim) {
        return Err(Error::Argument(format!("need 1+ initial means of length {dim}")));
    }
    if opts.var_floor.is_nan() || opts.var_floor <= 0.0 {
        return Err(Error::Argument("variance floor must be positive".into()));
    }
    let n = samples.len();
    let global_var = global_variance(samples, dim, opts.var_floor);
    let mut model = GmmModel {
        k,
        dim,
        weights: vec![1.0 / k as f64; k],
        means: initial_means.concat(),
        variances: (0..k).flat_map(|_| global_var.iter().copied()).collect(),
        var_floor: opts.var_floor,
        fitted: false,
        seed,
        log_likelihood: Vec::new(),
        reseeded_at: Vec::new(),
        converged: false,
    };

    let mut prev: Option<f64> = None;
    for it in 0..opts.max_iter {
        let stats = e_step(&model, samples, opts.exec);
        let ll = stats.iter().map(|s| s.ll).sum::<f64>() / n as f64;
        model.log_likelihood.push(ll);
        if let Some(p) = prev {
            if ll - p < opts.tol {
                model.converged = true;
                break;
            }
        }
        prev = Some(ll);
        m_step(&mut model, samples, &stats, opts, it);
    }
    model.fitted = true;
    Ok(model)
}

fn m_step<S: AsRef<[f64]> + Sync>(model: &mut GmmModel, samples: &[S], stats: &[ChunkStats], opts: &GmmOptions, it: usize) {
    let (k, dim, n) = (model.k, model.dim, samples.len());
    let mut mass = vec![0.0; k];
    let mut sums = vec![0.0; k * dim];
    for st in stats {
        for j in 0..k {
            mass[j] += st.mass[j];
        }
        for (a, b) in sums.iter_mut().zip(&st.sums) {
            *a += b;
        }
    }
    let degenerate: Vec<usize> = (0..k).filter(|&j| mass[j] <= f64::EPSILON * n as f64).collect();
    for j in 0..k {
        if mass[j] > 0.0 {
            for d in 0..dim {
                model.means[j * dim + d] = sums[j * dim + d] / mass[j];
            }
        }
    }
    // second pass for variances around the updated means
    let means = &model.means;
    let chunk_sq = par::map_range(opts.exec, stats.len(), |c| {
        let chunk = &samples[c * CHUNK..((c + 1) * CHUNK).min(n)];
        let resp = &stats[c].resp;
        let mut sq = vec![0.0; k * dim];
        for (s, r) in chunk.iter().zip(resp.chunks_exact(k)) {
            let x = s.as_ref();
            for j in 0..k {
                let mu = &means[j * dim..(j + 1) * dim];
                let row = &mut sq[j * dim..(j + 1) * dim];
                for d in 0..dim {
                    let diff = x[d] - mu[d];
                    row[d] += r[j] * diff * diff;
                }
            }
        }
        sq
    });
    let mut sq = vec![0.0; k * dim];
    for part in chunk_sq {
        for (a, b) in sq.iter_mut().zip(&part) {
            *a += b;
        }
    }
    for j in 0..k {
        if mass[j] > 0.0 {
            for d in 0..dim {
                model.variances[j * dim + d] = (sq[j * dim + d] / mass[j]).max(opts.var_floor);
            }
        }
    }
    let total: f64 = mass.iter().sum();
    for j in 0..k {
        model.weights[j] = mass[j] / total;
    }

    if !degenerate.is_empty() {
        let global_var = global_variance(samples, dim, opts.var_floor);
        for &j in &degenerate {
            let far = farthest_sample(model, samples, j);
            model.means[j * dim..(j + 1) * dim].copy_from_slice(samples[far].as_ref());
            model.variances[j * dim..(j + 1) * dim].copy_from_slice(&global_var);
            model.weights[j] = 1.0 / n as f64;
            log::warn!("GMM component {j} lost its mass at iteration {it}; re-seeded from sample {far}");
        }
        let s: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= s);
        model.reseeded_at.push(it);
    }
}

/// Sample with the largest squared distance to its nearest mean, ignoring `skip`.
fn farthest_sample<S: AsRef<[f64]>>(model: &GmmModel, samples: &[S], skip: usize) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in samples.iter().enumerate() {
        let d = (0..model.k)
            .filter(|&j| j != skip)
            .map(|j| sq_dist(s.as_ref(), model.mean(j)))
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Most responsible component (lowest id on ties) and the responsibilities.
pub fn assign(model: &GmmModel, z: &[f64]) -> Result<(usize, Vec<f64>)> {
    if z.len() != model.dim {
        return Err(Error::shape(model.dim, z.len()));
    }
    let pre = model.precompute();
    let mut r = vec![0.0; model.k];
    model.component_log_densities(&pre, z, &mut r);
    let lse = log_sum_exp(&r);
    let mut best = 0;
    for j in 1..model.k {
        if r[j] > r[best] {
            best = j;
        }
    }
    r.iter_mut().for_each(|v| *v = (*v - lse).exp());
    Ok((best, r))
}

/// Component index for each sample, in order.
pub fn assign_all<S: AsRef<[f64]> + Sync>(model: &GmmModel, samples: &[S], exec: Exec) -> Result<Vec<usize>> {
    let pre = model.precompute();
    let out = par::map_chunks(exec, samples, CHUNK, |chunk| {
        let mut r = vec![0.0; model.k];
        chunk
            .iter()
            .map(|s| {
                let z = s.as_ref();
                if z.len() != model.dim {
                    return Err(Error::shape(model.dim, z.len()));
                }
                model.component_log_densities(&pre, z, &mut r);
                let mut best = 0;
                for j in 1..model.k {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                Ok(best)
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut all = Vec::with_capacity(samples.len());
    for c in out {
        all.extend(c?);
    }
    Ok(all)
}
