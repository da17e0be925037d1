//! Mini-batch training with Adam and best-on-validation model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use waydcm_core::choice::{fit_mnl, ChoiceObservation, FitOptions, FitReport};
use waydcm_core::FeatureRow;
use waydcm_nn::{LossWeights, Model, SceneInput, Tape, Tensor};

use crate::adam::{Adam, AdamConfig};
use crate::data::split_indices;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub val_fraction: f64,
    /// Seeds the split and the per-epoch shuffles.
    pub seed: u64,
    pub weights: LossWeights,
    /// Decode the labeled goal during training even when it is not among the
    /// top-scored ones.
    pub teacher_forcing: bool,
    /// Initialize β from the plain logit fit on the training split.
    pub warm_start_beta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            seed: 0,
            weights: LossWeights::default(),
            teacher_forcing: true,
            warm_start_beta: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("train.val_fraction must be in [0, 1)".into()));
        }
        if !(self.adam.learning_rate.is_finite() && self.adam.learning_rate > 0.0) {
            return Err(Error::Config("train.adam.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_reg: f64,
    pub l_score: f64,
    pub l_cls: f64,
    pub total: f64,
    pub val_total: f64,
}

pub const LOG_HEADER: &str = "epoch,l_reg,l_score,l_cls,total,val_total";

pub fn write_log_csv(log: &[EpochLog], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in log {
        writeln!(w, "{},{},{},{},{},{}", r.epoch, r.l_reg, r.l_score, r.l_cls, r.total, r.val_total)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub warm_start: Option<FitReport>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    reg: f64,
    score: f64,
    cls: f64,
    total: f64,
}

fn scene_loss(model: &Model, tape: &mut Tape, input: &SceneInput, cfg: &TrainConfig, force: bool) -> (Sums, waydcm_nn::Var) {
    tape.clear();
    let goal = if force { input.label } else { None };
    let fwd = model.forward(tape, input, goal);
    let l = model.losses(tape, &fwd, input, &cfg.weights);
    let s = Sums {
        reg: tape.value(l.l_reg).item(),
        score: tape.value(l.l_score).item(),
        cls: l.l_cls.map_or(0.0, |c| tape.value(c).item()),
        total: tape.value(l.total).item(),
    };
    (s, l.total)
}

/// Mean total loss without teacher forcing.
pub fn validation_loss(model: &Model, inputs: &[SceneInput], idx: &[usize], cfg: &TrainConfig) -> f64 {
    let mut tape = Tape::new();
    let sum: f64 = idx.iter().map(|&i| scene_loss(model, &mut tape, &inputs[i], cfg, false).0.total).sum();
    sum / idx.len().max(1) as f64
}

fn warm_start(model: &mut Model, inputs: &[SceneInput], idx: &[usize]) -> Result<Option<FitReport>> {
    let Some(set) = model.feature_set() else {
        return Ok(None);
    };
    if idx.iter().all(|&i| inputs[i].label.is_none()) {
        return Ok(None);
    }
    let observations: Vec<ChoiceObservation> = idx
        .iter()
        .filter_map(|&i| {
            let x = &inputs[i];
            let features = (0..x.features.rows)
                .map(|k| FeatureRow(std::array::from_fn(|c| x.features.at(k, c))))
                .collect();
            x.label.map(|choice| ChoiceObservation { features, choice })
        })
        .collect();
    let report = fit_mnl(&observations, set, &model.beta(), &FitOptions::default())?;
    model.set_beta(&report.beta);
    Ok(Some(report))
}

/// Trains `model` on `inputs`, holding out a seeded validation split, and
/// returns the parameters of the best validation epoch. With no training
/// scenes every epoch is empty and the weights are returned unchanged.
pub fn train(mut model: Model, inputs: &[SceneInput], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_indices(inputs.len(), cfg.val_fraction, cfg.seed);
    let warm = if cfg.warm_start_beta {
        warm_start(&mut model, inputs, &train_idx)?
    } else {
        None
    };
    let eval_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };

    let mut adam = Adam::new(cfg.adam, &model.params.values);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx.clone();
    let mut tape = Tape::new();
    let mut grads: Vec<Tensor> = model.params.zeros_like();
    let mut best = (f64::INFINITY, 0, model.params.values.clone());
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = Sums::default();
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (s, root) = scene_loss(&model, &mut tape, &inputs[i], cfg, cfg.teacher_forcing);
                if !s.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        message: format!("non-finite loss {} on scene {i}", s.total),
                    });
                }
                tape.backward(root, w, &mut grads);
                sums.reg += s.reg;
                sums.score += s.score;
                sums.cls += s.cls;
                sums.total += s.total;
            }
            if let Some(name) = model.params.names.iter().zip(&grads).find(|(_, g)| !g.is_finite()).map(|(n, _)| n) {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    message: format!("non-finite gradient for {name}"),
                });
            }
            adam.step(&mut model.params.values, &grads);
        }
        let n = order.len().max(1) as f64;
        let val_total = validation_loss(&model, inputs, eval_idx, cfg);
        if !val_total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                message: format!("non-finite validation loss {val_total}"),
            });
        }
        let row = EpochLog {
            epoch,
            l_reg: sums.reg / n,
            l_score: sums.score / n,
            l_cls: sums.cls / n,
            total: sums.total / n,
            val_total,
        };
        log::info!(
            "{} epoch {epoch}: total {:.4} (reg {:.4}, score {:.4}, cls {:.4}), val {:.4}",
            model.variant,
            row.total,
            row.l_reg,
            row.l_score,
            row.l_cls,
            val_total
        );
        log.push(row);
        if val_total < best.0 {
            best = (val_total, epoch, model.params.values.clone());
        }
    }
    model.params.values = best.2;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.1,
        warm_start: warm,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
