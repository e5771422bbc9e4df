use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::combined_loss_grad;
use super::model::{Params, RankerModel};
use super::rank::argsort;
use crate::error::{Error, Result};
use crate::eval::precision_at_n;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// τ.
    pub margin: f64,
    /// Weight of the triplet term.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Soft-rank temperature.
    pub temperature: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Ablation: feed zero progression signals.
    pub zero_progression: bool,
    /// When set, a checkpoint is written after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            alpha: 0.9,
            learning_rate: 2e-5,
            batch_size: 32,
            epochs: 5,
            temperature: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            zero_progression: false,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::invalid("learning_rate must be non-negative"));
        }
        Ok(())
    }
}

/// One training turn with precomputed embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    /// N × n_d candidate-context embeddings.
    pub candidates: Array2<f64>,
    /// n_T × n_d state embeddings, ordered by aspect id.
    pub states: Array2<f64>,
    /// Pseudo-label positions, 1 = best.
    pub labels: Vec<usize>,
    /// Candidate relevance (aspect ∈ gold aspects), for Precision@n.
    pub relevant: Vec<bool>,
}

impl TrainExample {
    fn validate(&self) -> Result<()> {
        let n = self.candidates.nrows();
        if n == 0 || self.labels.len() != n || self.relevant.len() != n {
            return Err(Error::invalid("example labels do not match its candidates"));
        }
        let mut sorted = self.labels.clone();
        sorted.sort_unstable();
        if sorted != (1..=n).collect::<Vec<_>>() {
            return Err(Error::invalid("labels must be a permutation of 1..=N"));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Params,
    v: Params,
    step: i32,
}

impl AdamW {
    pub fn new(like: &Params) -> Self {
        let mut zero = like.clone();
        zero.slices_mut().into_iter().for_each(|s| s.fill(0.0));
        Self {
            m: zero.clone(),
            v: zero,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let grads: Vec<&[f64]> = grads.named().into_iter().map(|(_, _, d)| d).collect();
        let iter = params
            .slices_mut()
            .into_iter()
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
            .zip(grads);
        for (((p, m), v), g) in iter {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p[i]);
            }
        }
    }
}

/// Mean combined loss over `batch` and its gradient.
pub fn batch_loss_grad(
    model: &RankerModel,
    centroids: &[ArrayView2<f64>],
    batch: &[&TrainExample],
    cfg: &TrainConfig,
) -> Result<(f64, Params)> {
    let mut grads = Params::zeros(&model.config);
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let cache = model.forward(
            centroids,
            ex.states.view(),
            ex.candidates.view(),
            cfg.zero_progression,
        )?;
        let (loss, g) = combined_loss_grad(
            &cache.scores,
            &ex.labels,
            cfg.alpha,
            cfg.margin,
            cfg.temperature,
        );
        total += loss * scale;
        let g: Vec<f64> = g.into_iter().map(|x| x * scale).collect();
        model.backward(
            &cache,
            &g,
            centroids,
            ex.states.view(),
            ex.candidates.view(),
            &mut grads,
        );
    }
    Ok((total, grads))
}

/// Mean Precision@n of the model's ranking over `examples`.
pub fn evaluate_precision(
    model: &RankerModel,
    centroids: &[ArrayView2<f64>],
    examples: &[TrainExample],
    n: usize,
    zero_progression: bool,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let cache = model.forward(
            centroids,
            ex.states.view(),
            ex.candidates.view(),
            zero_progression,
        )?;
        let order = argsort(&cache.scores);
        total += precision_at_n(&order, |i| ex.relevant[i], n);
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_p3: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The epoch checkpoint with the best validation Precision@3.
    pub model: RankerModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Trains the ranker end to end with AdamW. Validation Precision@3 picks
/// the returned checkpoint; with no validation set the last epoch wins.
pub fn train_ranker(
    init: RankerModel,
    centroids: &[ArrayView2<f64>],
    train: &[TrainExample],
    val: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus("training set"));
    }
    for ex in train.iter().chain(val) {
        ex.validate()?;
    }
    let mut model = init;
    let mut opt = AdamW::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, RankerModel)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = match batch_loss_grad(&model, centroids, &batch, cfg) {
                Err(Error::NumericOverflow(_)) => (f64::NAN, Params::zeros(&model.config)),
                other => other?,
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    last_good: Box::new(model),
                });
            }
            let last_good = model.clone();
            opt.step(&mut model.params, &grads, cfg);
            if !model.params.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        let val_p3 = if val.is_empty() {
            f64::NAN
        } else {
            evaluate_precision(&model, centroids, val, 3, cfg.zero_progression)?
        };
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_p3,
        };
        tracing::info!(epoch, loss = stats.train_loss, val_p3, "epoch done");
        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            crate::corpus::save_checkpoint(
                &path,
                &model,
                &crate::corpus::CheckpointMeta {
                    epoch,
                    val_p3: if val_p3.is_nan() { None } else { Some(val_p3) },
                    corpus_hash: None,
                },
            )?;
        }
        history.push(stats);
        let better = match &best {
            None => true,
            Some((b, _, _)) => val.is_empty() || val_p3 > *b,
        };
        if better {
            best = Some((val_p3, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.unwrap_or((f64::NAN, 0, model));
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        history,
    })
}
