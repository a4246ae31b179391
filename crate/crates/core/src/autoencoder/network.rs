use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::arch::{AeArchitecture, LayerKind, LayerSpec, ENCODER_LAYERS};
use super::kernels::{self, Dims};
use crate::error::{Error, Result};
use crate::mots::MotsFeature;
use crate::par::{self, Exec};
use crate::voxelgrid::VoxelCoord;

/// Samples per gradient work unit. Fixed so that the reduction order does
/// not depend on the number of worker threads.
pub const GRAD_CHUNK: usize = 16;

/// Autoencoder weights and biases stored as one flat vector in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct AeParameters {
    arch: AeArchitecture,
    layers: Vec<LayerSpec>,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Encoder output for one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub code: Vec<f64>,
    pub center: VoxelCoord,
    pub frame_index: usize,
}

/// Per-thread scratch buffers for one forward/backward pass.
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    rows: Vec<bool>,
}

impl Workspace {
    pub fn new(params: &AeParameters) -> Self {
        let mut acts = vec![vec![0.0; params.arch.input_len()]];
        acts.extend(params.layers.iter().map(|l| vec![0.0; l.output_size()]));
        let grads = acts.clone();
        Workspace {
            acts,
            grads,
            rows: Vec::new(),
        }
    }

    pub fn reconstruction(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn code(&self) -> &[f64] {
        &self.acts[ENCODER_LAYERS]
    }
}

impl AeParameters {
    /// Uniform `±1/√fan_in` weights and zero biases, fully determined by `seed`.
    pub fn init(arch: AeArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let mut values = vec![0.0; layers.last().unwrap().bias.end];
        for (li, l) in layers.iter().enumerate() {
            // one stream per layer so widths of one layer never shift another's draws
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(li as u64);
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("positive bound");
            for v in &mut values[l.weight.clone()] {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(AeParameters {
            arch,
            layers,
            values,
            seed,
        })
    }

    pub fn from_values(arch: AeArchitecture, values: Vec<f64>, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let want = layers.last().unwrap().bias.end;
        if values.len() != want {
            return Err(Error::shape(format!("{want} parameters"), values.len()));
        }
        Ok(AeParameters {
            arch,
            layers,
            values,
            seed,
        })
    }

    pub fn arch(&self) -> &AeArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Name of the first layer holding a non-finite parameter.
    pub fn first_non_finite_layer(&self) -> Option<&'static str> {
        self.layers
            .iter()
            .find(|l| {
                self.values[l.weight.start..l.bias.end]
                    .iter()
                    .any(|v| !v.is_finite())
            })
            .map(|l| l.name)
    }

    fn check_feature(&self, x: &MotsFeature) -> Result<()> {
        if x.channels() != self.arch.channels || x.window != self.arch.window {
            return Err(Error::shape(
                format!("{}x{}", self.arch.channels, self.arch.window),
                format!("{}x{}", x.channels(), x.window),
            ));
        }
        Ok(())
    }

    fn run_layers(&self, ws: &mut Workspace, range: std::ops::Range<usize>) {
        for li in range {
            let l = &self.layers[li];
            let (head, tail) = ws.acts.split_at_mut(li + 1);
            let x = &head[li];
            let y = &mut tail[0];
            let w = &self.values[l.weight.clone()];
            let b = &self.values[l.bias.clone()];
            let d = Dims {
                cin: l.cin,
                cout: l.cout,
                len_in: l.len_in,
            };
            match l.kind {
                LayerKind::Conv => {
                    kernels::nonzero_rows(x, l.len_in, &mut ws.rows);
                    kernels::conv_forward(&d, w, b, x, &ws.rows, y);
                }
                LayerKind::ConvTranspose => {
                    kernels::nonzero_rows(x, l.len_in, &mut ws.rows);
                    kernels::convt_forward(&d, w, b, x, &ws.rows, y);
                }
                LayerKind::Linear => kernels::linear_forward(&d, w, b, x, y),
            }
            if l.relu {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
    }

    /// Full forward pass; the reconstruction is left in the workspace.
    pub fn forward_dense(&self, x: &[f64], ws: &mut Workspace) -> Result<()> {
        if x.len() != self.arch.input_len() {
            return Err(Error::shape(self.arch.input_len(), x.len()));
        }
        ws.acts[0].copy_from_slice(x);
        self.run_layers(ws, 0..self.layers.len());
        Ok(())
    }

    fn forward_feature(&self, x: &MotsFeature, ws: &mut Workspace) {
        x.fill_dense(&mut ws.acts[0]);
        self.run_layers(ws, 0..self.layers.len());
    }

    pub fn encode_with(&self, x: &MotsFeature, ws: &mut Workspace) -> Result<Embedding> {
        self.check_feature(x)?;
        x.fill_dense(&mut ws.acts[0]);
        self.run_layers(ws, 0..ENCODER_LAYERS);
        Ok(Embedding {
            code: ws.code().to_vec(),
            center: x.center,
            frame_index: x.frame_index,
        })
    }

    pub fn encode(&self, x: &MotsFeature) -> Result<Embedding> {
        self.encode_with(x, &mut Workspace::new(self))
    }

    /// Encodes a slice of features, preserving order.
    pub fn encode_batch(&self, exec: Exec, features: &[MotsFeature]) -> Result<Vec<Embedding>> {
        let chunks = par::map_chunks(exec, features, 256, |chunk| {
            let mut ws = Workspace::new(self);
            chunk
                .iter()
                .map(|f| self.encode_with(f, &mut ws))
                .collect::<Result<Vec<_>>>()
        });
        let mut out = Vec::with_capacity(features.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Reconstructs a row-major `C×w` matrix from a code vector.
    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.arch.code {
            return Err(Error::shape(self.arch.code, code.len()));
        }
        let mut ws = Workspace::new(self);
        ws.acts[ENCODER_LAYERS].copy_from_slice(code);
        self.run_layers(&mut ws, ENCODER_LAYERS..self.layers.len());
        Ok(ws.reconstruction().to_vec())
    }

    /// Backpropagates `ws.grads[last]` (gradient w.r.t. the reconstruction)
    /// and accumulates into `grad`.
    fn backward(&self, ws: &mut Workspace, grad: &mut [f64]) {
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let (gh, gt) = ws.grads.split_at_mut(li + 1);
            let dy = &mut gt[0];
            if l.relu {
                for (g, a) in dy.iter_mut().zip(&ws.acts[li + 1]) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let x = &ws.acts[li];
            let dx = if li > 0 {
                let dx = &mut gh[li];
                dx.fill(0.0);
                Some(dx.as_mut_slice())
            } else {
                None
            };
            let w = &self.values[l.weight.clone()];
            let (gw, gb) = grad[l.weight.start..l.bias.end].split_at_mut(l.weight.len());
            let d = Dims {
                cin: l.cin,
                cout: l.cout,
                len_in: l.len_in,
            };
            match l.kind {
                LayerKind::Conv => {
                    kernels::nonzero_rows(x, l.len_in, &mut ws.rows);
                    kernels::conv_backward(&d, w, x, &ws.rows, dy, gw, gb, dx);
                }
                LayerKind::ConvTranspose => {
                    kernels::nonzero_rows(x, l.len_in, &mut ws.rows);
                    kernels::convt_backward(&d, w, x, &ws.rows, dy, gw, gb, dx);
                }
                LayerKind::Linear => kernels::linear_backward(&d, w, x, dy, gw, gb, dx),
            }
        }
    }

    /// Adds `scale · ∂MSE(x, x̂)/∂θ` for one dense sample into `grad`;
    /// returns the sample's MSE.
    pub fn accumulate_dense(&self, x: &[f64], scale: f64, ws: &mut Workspace, grad: &mut [f64]) -> Result<f64> {
        self.forward_dense(x, ws)?;
        Ok(self.accumulate_after_forward(scale, ws, grad))
    }

    fn accumulate_after_forward(&self, scale: f64, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        let n = self.arch.input_len() as f64;
        let last = self.layers.len();
        let mut sq = 0.0;
        for ((g, xh), x) in ws.grads[last].iter_mut().zip(&ws.acts[last]).zip(&ws.acts[0]) {
            let diff = xh - x;
            sq += diff * diff;
            *g = 2.0 * scale * diff / n;
        }
        self.backward(ws, grad);
        sq / n
    }

    /// Gradient of `loss_scale · mean_b MSE(x_b, x̂_b)` over the minibatch,
    /// together with the unscaled mean loss.
    pub fn batch_gradients(&self, exec: Exec, batch: &[MotsFeature], loss_scale: f64) -> Result<(Vec<f64>, f64)> {
        if batch.is_empty() {
            return Err(Error::Argument("empty minibatch".into()));
        }
        for f in batch {
            self.check_feature(f)?;
        }
        let scale = loss_scale / batch.len() as f64;
        let partials = par::map_chunks(exec, batch, GRAD_CHUNK, |chunk| {
            let mut ws = Workspace::new(self);
            let mut grad = vec![0.0; self.values.len()];
            let mut loss = 0.0;
            for f in chunk {
                self.forward_feature(f, &mut ws);
                loss += self.accumulate_after_forward(scale, &mut ws, &mut grad);
            }
            (grad, loss)
        });
        let mut iter = partials.into_iter();
        let (mut grad, mut loss) = iter.next().unwrap();
        for (g, l) in iter {
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            loss += l;
        }
        Ok((grad, loss / batch.len() as f64))
    }

    /// Mean reconstruction loss over a batch.
    pub fn batch_loss(&self, batch: &[MotsFeature]) -> Result<f64> {
        let mut ws = Workspace::new(self);
        let mut total = 0.0;
        for f in batch {
            self.check_feature(f)?;
            self.forward_feature(f, &mut ws);
            total += mse(&ws.acts[0], ws.reconstruction());
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// On/off state of every ReLU unit over `batch`. Finite-difference checks
    /// are only meaningful where this pattern is constant.
    pub fn relu_pattern(&self, batch: &[MotsFeature]) -> Vec<bool> {
        let mut ws = Workspace::new(self);
        let mut pattern = Vec::new();
        for f in batch {
            self.forward_feature(f, &mut ws);
            for (li, l) in self.layers.iter().enumerate() {
                if l.relu {
                    pattern.extend(ws.acts[li + 1].iter().map(|&v| v > 0.0));
                }
            }
        }
        pattern
    }

    /// Name of the first layer whose output becomes non-finite on `batch`.
    pub fn first_non_finite_activation(&self, batch: &[MotsFeature]) -> Option<&'static str> {
        let mut ws = Workspace::new(self);
        for f in batch {
            if self.check_feature(f).is_err() {
                continue;
            }
            self.forward_feature(f, &mut ws);
            for (li, l) in self.layers.iter().enumerate() {
                if ws.acts[li + 1].iter().any(|v| !v.is_finite()) {
                    return Some(l.name);
                }
            }
        }
        None
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean squared error between a feature and its reconstruction.
pub fn loss(x: &MotsFeature, reconstruction: &[f64]) -> Result<f64> {
    let n = x.channels() * x.window;
    if reconstruction.len() != n {
        return Err(Error::shape(n, reconstruction.len()));
    }
    Ok(mse(&x.to_dense(), reconstruction))
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.code
    }
}
