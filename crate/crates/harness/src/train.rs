//! Optimisation loops and evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use usersod_core::{rng, Need, SceneRecord, TrainingSample};
use usersod_metrics::{MetricsAccumulator, MetricsReport};
use usersod_model::{total_loss, LossReport, Mode, ModelConfig, UserSal, Vocabulary, ESM_PREFIX, SME_PREFIX};
use usersod_tensor::{Adam, Gradients, Graph};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch (0-based) from which the rate is multiplied by `lr_decay_factor`.
    /// Unset means 60, or 75% of `epochs` for shorter runs.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    /// Draw this many samples per epoch instead of the whole set.
    pub samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-4,
            lr_decay_epoch: None,
            lr_decay_factor: 0.1,
            samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(HarnessError::Config {
                what: "train config",
                reason: reason.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be positive");
        }
        if self.samples_per_epoch == Some(0) {
            return bad("samples_per_epoch must be at least 1");
        }
        Ok(())
    }

    pub fn decay_epoch(&self) -> usize {
        self.lr_decay_epoch.unwrap_or(if self.epochs >= 60 {
            60
        } else {
            (self.epochs * 3).div_ceil(4)
        })
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch() {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        loss: LossReport,
    },
    Epoch(EpochRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the step losses in this epoch.
    pub train_loss: f64,
    pub heldout: Option<MetricsReport>,
}

/// JSON-lines sink for [`LogEntry`] values.
pub struct TrainLog {
    out: Box<dyn Write>,
}

impl TrainLog {
    pub fn new(out: impl Write + 'static) -> Self {
        TrainLog { out: Box::new(out) }
    }

    pub fn sink() -> Self {
        Self::new(std::io::sink())
    }

    pub fn write(&mut self, entry: &LogEntry) -> Result<()> {
        let line = serde_json::to_string(entry).expect("log entries serialise");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|source| HarnessError::Io {
                path: "<training log>".into(),
                source,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let levels = reports.iter().map(|r| r.al_per_level.len()).max().unwrap_or(0);
    let mut al = vec![0.0; levels];
    for r in reports {
        for (a, v) in al.iter_mut().zip(&r.al_per_level) {
            *a += v / n;
        }
    }
    LossReport {
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        al_per_level: al,
        total: reports.iter().map(|r| r.total).sum::<f64>() / n,
    }
}

fn params_finite(model: &UserSal<f32>) -> bool {
    model
        .params()
        .iter()
        .all(|(_, p)| !p.trainable || p.value.data().iter().all(|v| v.is_finite()))
}

fn frozen_prefixes(config: &ModelConfig) -> Vec<&'static str> {
    let mut out = vec![SME_PREFIX];
    if config.freeze_esm {
        out.push(ESM_PREFIX);
    }
    out
}

/// Minimise the total loss over `samples` with Adam.
///
/// Every optimiser step writes one [`LogEntry::Step`]; every epoch ends with an
/// [`LogEntry::Epoch`] carrying metrics on `heldout`. On a non-finite loss,
/// gradient or updated parameter the run stops and the model keeps its last
/// good parameters.
pub fn train_model(
    model: &mut UserSal<f32>,
    samples: &[TrainingSample],
    heldout: &[TrainingSample],
    config: &TrainConfig,
    log: &mut TrainLog,
) -> Result<TrainSummary> {
    config.validate()?;
    if samples.is_empty() {
        return Err(HarnessError::Config {
            what: "training set",
            reason: "no samples".into(),
        });
    }
    let frozen: Vec<(&'static str, String)> = frozen_prefixes(model.config())
        .into_iter()
        .map(|p| (p, model.param_hash(p)))
        .collect();
    let levels = model.config().levels;
    let mut adam = Adam::<f32>::default();
    let mut summary = TrainSummary {
        steps: 0,
        epochs: Vec::new(),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut r = rng::stream(config.seed, &[rng::label_id("sample-order"), epoch as u64]);
        order.shuffle(&mut r);
        let take = config.samples_per_epoch.unwrap_or(order.len()).min(order.len());
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0;
        for batch in order[..take].chunks(config.batch_size) {
            let step = summary.steps;
            let mut grads = Gradients::new(model.params().len());
            let mut reports = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                let mut g = Graph::new();
                let (terms, _) = total_loss(&mut g, model, &s.image, &s.need, &s.gt)?;
                let report = terms.report(&g, levels);
                if !report.total.is_finite() {
                    return Err(HarnessError::Diverged {
                        epoch,
                        step,
                        quantity: "loss",
                    });
                }
                grads.merge(g.backward(terms.total));
                reports.push(report);
            }
            grads.scale(1.0 / batch.len() as f32);
            if !grads.is_finite() {
                return Err(HarnessError::Diverged {
                    epoch,
                    step,
                    quantity: "gradient",
                });
            }
            let last_good = model.params().clone();
            adam.step(model.params_mut(), &grads, lr);
            if !params_finite(model) {
                *model.params_mut() = last_good;
                return Err(HarnessError::Diverged {
                    epoch,
                    step,
                    quantity: "parameter",
                });
            }
            let loss = mean_report(&reports);
            epoch_total += loss.total;
            epoch_steps += 1;
            log.write(&LogEntry::Step { epoch, step, lr, loss })?;
            summary.steps += 1;
        }
        let heldout_report = if heldout.is_empty() {
            None
        } else {
            Some(evaluate(model, heldout)?)
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: epoch_total / epoch_steps as f64,
            heldout: heldout_report,
        };
        log.write(&LogEntry::Epoch(record.clone()))?;
        summary.epochs.push(record);
    }
    for (prefix, before) in frozen {
        if model.param_hash(prefix) != before {
            return Err(HarnessError::FrozenDrift { prefix });
        }
    }
    Ok(summary)
}

/// Mean metrics of the model's predictions over `samples`.
pub fn evaluate(model: &UserSal<f32>, samples: &[TrainingSample]) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    for s in samples {
        let pred = model.predict(&s.image, &s.need)?;
        acc.add(&pred, &s.gt)?;
    }
    Ok(acc.report()?)
}

/// The `(image, conventional ground truth)` pair of every scene.
pub fn conventional_samples(scenes: &[SceneRecord]) -> Vec<TrainingSample> {
    scenes
        .iter()
        .map(|s| TrainingSample {
            scene_id: s.scene_id,
            image: s.image.clone(),
            need: Need::Zero,
            gt: s.gt_b.clone(),
        })
        .collect()
}

/// Vocabulary over every command text in `samples`.
pub fn build_vocabulary(samples: &[TrainingSample]) -> Vocabulary {
    Vocabulary::build(samples.iter().filter_map(|s| s.need.text()))
}

/// Configuration of the command-free network that later serves as the frozen backbone.
pub fn esm_config(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        mode: Mode::Base,
        freeze_esm: false,
        ..config.clone()
    }
}

/// Train a command-free saliency network on conventional pairs with the MSE loss only.
pub fn pretrain_esm(
    model_config: &ModelConfig,
    samples: &[TrainingSample],
    heldout: &[TrainingSample],
    config: &TrainConfig,
    log: &mut TrainLog,
) -> Result<(UserSal<f32>, Result<TrainSummary>)> {
    let cfg = esm_config(model_config);
    let mut model = UserSal::<f32>::new(cfg, Vocabulary::build(std::iter::empty()), config.seed)?;
    let outcome = train_model(&mut model, samples, heldout, config, log);
    Ok((model, outcome))
}

/// A fresh model of `model_config` whose saliency network is taken from `esm`.
pub fn init_from_esm(
    model_config: &ModelConfig,
    vocab: Vocabulary,
    esm: &UserSal<f32>,
    seed: u64,
) -> Result<UserSal<f32>> {
    let mut model = UserSal::<f32>::new(model_config.clone(), vocab, seed)?;
    model.load_esm(esm)?;
    Ok(model)
}
