use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::arch::AeArchitecture;
use super::network::AeParameters;
use crate::error::{Error, Result};
use crate::mots::{MotsBatch, MotsFeature};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Steps per loss-curve entry.
    pub log_every: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            learning_rate: 1e-4,
            epochs: 2,
            seed: 0,
            log_every: 10,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: AeParameters,
    /// `(step, mean loss over the preceding interval)`.
    pub loss_curve: Vec<(usize, f64)>,
    pub steps: usize,
}

/// Trains from scratch on pooled batches.
pub fn train_batches<I>(batches: I, arch: AeArchitecture, cfg: &TrainConfig) -> Result<TrainReport>
where
    I: IntoIterator<Item = MotsBatch>,
{
    let features: Vec<MotsFeature> = batches.into_iter().flat_map(|b| b.features).collect();
    train(&features, arch, cfg)
}

pub fn train(features: &[MotsFeature], arch: AeArchitecture, cfg: &TrainConfig) -> Result<TrainReport> {
    let params = AeParameters::init(arch, cfg.seed)?;
    train_from(params, features, cfg)
}

/// Continues training `params`. Minibatches come from one shuffle per epoch.
pub fn train_from(mut params: AeParameters, features: &[MotsFeature], cfg: &TrainConfig) -> Result<TrainReport> {
    if features.is_empty() {
        return Err(Error::Argument("no training features".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Argument("batch size and epochs must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::Argument(format!("bad learning rate {}", cfg.learning_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut curve = Vec::new();
    let (mut acc, mut acc_n, mut step) = (0.0, 0usize, 0usize);
    let log_every = cfg.log_every.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| features[i].clone()));
            let (grad, loss) = params.batch_gradients(cfg.exec, &batch, 1.0)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let layer = params
                    .first_non_finite_activation(&batch)
                    .or_else(|| params.first_non_finite_layer())
                    .unwrap_or("gradient");
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at step {step} (epoch {epoch}), first at layer {layer}"
                )));
            }
            adam.update(&mut params.values, &grad);
            if let Some(layer) = params.first_non_finite_layer() {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after step {step}, first at layer {layer}"
                )));
            }
            step += 1;
            acc += loss;
            acc_n += 1;
            if step % log_every == 0 {
                curve.push((step, acc / acc_n as f64));
                log::debug!("step {step} loss {:.6}", acc / acc_n as f64);
                acc = 0.0;
                acc_n = 0;
            }
        }
        log::info!("epoch {} done after {step} steps", epoch + 1);
    }
    if acc_n > 0 {
        curve.push((step, acc / acc_n as f64));
    }
    Ok(TrainReport {
        params,
        loss_curve: curve,
        steps: step,
    })
}

/// Writes a loss curve as `step loss` lines.
pub fn format_loss_curve(curve: &[(usize, f64)]) -> String {
    curve.iter().map(|(s, l)| format!("{s} {l:.9}\n")).collect()
}
