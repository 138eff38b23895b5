//! Teacher-forced cross-entropy training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::Parameters;
use super::transformer::{Dropout, Example};
use super::{ModelConfig, ModelError, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Data-parallel gradient computation. Faster on many cores; the
    /// reduction order, and so the low bits of the result, is not fixed.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 4,
            epochs: 15,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: None,
            max_steps: None,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    /// Applies one update unless it would make a parameter non-finite.
    fn step(&mut self, params: &mut ModelParams, grad: &[f64], cfg: &TrainConfig) -> bool {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let mut delta = Vec::with_capacity(grad.len());
        for (i, &g) in grad.iter().enumerate() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            delta.push(cfg.learning_rate * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + cfg.epsilon));
        }
        let mut i = 0;
        let mut finite = true;
        params.visit("", &mut |_, values, _| {
            for p in values {
                finite &= (p - delta[i]).is_finite();
                i += 1;
            }
        });
        if !finite {
            return false;
        }
        let mut i = 0;
        params.visit_mut("", &mut |_, values, _| {
            for p in values.iter_mut() {
                *p -= delta[i];
                i += 1;
            }
        });
        true
    }
}

fn example_seed(seed: u64, step: usize, index: usize) -> u64 {
    seed ^ ((step as u64) << 24) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains a fresh model. Validation loss is computed after every epoch and
/// the best epoch's parameters are returned.
pub fn train(
    train_set: &[Example],
    valid_set: &[Example],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let mut params = ModelParams::init(model)?;
    for ex in train_set.iter().chain(valid_set) {
        params.check_example(ex)?;
    }
    let count = model.parameter_count();
    let mut adam = Adam {
        m: vec![0.0; count],
        v: vec![0.0; count],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut steps = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let tokens: usize = batch.iter().map(|&i| train_set[i].target.len() + 1).sum();
            let scale = 1.0 / tokens as f64;
            let (loss, grad) = if cfg.parallel {
                let seed = model.seed;
                batch
                    .par_iter()
                    .map(|&i| {
                        let mut g = ModelParams::zeros(model);
                        let mut r = ChaCha8Rng::seed_from_u64(example_seed(seed, steps, i));
                        let mut drop = Dropout {
                            rate: model.dropout,
                            rng: Some(&mut r),
                        };
                        let (l, _) = params.example_loss(&train_set[i], Some(&mut g), scale, &mut drop);
                        (l, g)
                    })
                    .reduce_with(|(la, mut ga), (lb, gb)| {
                        ga.add_scaled(&gb, 1.0);
                        (la + lb, ga)
                    })
                    .expect("non-empty batch")
            } else {
                let mut g = ModelParams::zeros(model);
                let mut l = 0.0;
                for &i in batch {
                    let mut drop = Dropout {
                        rate: model.dropout,
                        rng: Some(&mut rng),
                    };
                    l += params.example_loss(&train_set[i], Some(&mut g), scale, &mut drop).0;
                }
                (l, g)
            };
            let mut flat = grad.flatten();
            if let Some(clip) = cfg.grad_clip {
                let norm = flat.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    flat.iter_mut().for_each(|g| *g *= clip / norm);
                }
            }
            if !loss.is_finite() || !adam.step(&mut params, &flat, cfg) {
                return Err(ModelError::TrainingDiverged {
                    epoch,
                    step: steps,
                    last_finite: Box::new(params),
                });
            }
            steps += 1;
            epoch_loss += loss;
            epoch_tokens += tokens;
        }
        if epoch_tokens == 0 {
            break 'epochs;
        }
        let train_loss = epoch_loss / epoch_tokens as f64;
        let valid_loss = if valid_set.is_empty() {
            train_loss
        } else {
            params.mean_loss(valid_set)
        };
        log::info!("epoch {epoch}: train loss {train_loss:.4}, valid loss {valid_loss:.4}, {steps} steps");
        history.push(EpochStats {
            epoch,
            steps,
            train_loss,
            valid_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| valid_loss < *b) {
            best = Some((valid_loss, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.unwrap_or((f64::NAN, 0, params));
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
    })
}
