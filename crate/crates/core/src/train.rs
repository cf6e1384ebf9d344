//! Adam, early stopping and the per-sample training loop shared by every
//! model.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::bce;
use crate::error::{NsktError, Result};
use crate::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Samples whose gradients are summed before one optimiser step.
    pub accumulate: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 300,
            patience: 7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            accumulate: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.max_epochs >= 1
            && self.patience >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.accumulate >= 1;
        if ok {
            Ok(())
        } else {
            Err(NsktError::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Adam {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update to every trainable parameter.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.0.iter().enumerate() {
            let p = params.by_index_mut(i);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.values[k] -= self.lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Tracks the best validation loss; stops after `patience` epochs without
/// strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stalled: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stalled: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stalled = 0;
            Progress::Improved
        } else {
            self.stalled += 1;
            if self.stalled >= self.patience {
                Progress::Stop
            } else {
                Progress::Stalled
            }
        }
    }
}

/// A model family that can be trained by [`train`].
pub trait Learner: Sync {
    /// Per-student precomputed input (a grounded graph, an encoded sequence).
    type Prepared: Send + Sync;

    fn student(prepared: &Self::Prepared) -> u32;

    fn labels(prepared: &Self::Prepared) -> Vec<bool>;

    /// Mean BCE over the sample's queries; gradients are added to `grads`.
    fn loss_and_grad(&self, params: &ParamStore, prepared: &Self::Prepared, grads: &mut Gradients) -> Result<f64>;

    /// Query probabilities in query order.
    fn predict(&self, params: &ParamStore, prepared: &Self::Prepared) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub optimizer: Adam,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn write_history(history: &[EpochRecord], comments: &[String], mut out: impl Write) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}

/// Mean per-query BCE pooled over all samples.
pub fn mean_query_loss<L: Learner>(learner: &L, params: &ParamStore, samples: &[L::Prepared]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let probs = learner.predict(params, s)?;
        for (p, y) in probs.iter().zip(L::labels(s)) {
            total += bce(*p, y);
            count += 1;
        }
    }
    if count == 0 {
        return Err(NsktError::EmptyInput("no queries to evaluate".into()));
    }
    Ok(total / count as f64)
}

/// Trains from `init`, one optimiser step per `accumulate` samples, and
/// returns the parameters of the epoch with the best validation loss.
pub fn train<L: Learner>(
    learner: &L,
    init: ParamStore,
    train_set: &[L::Prepared],
    val_set: &[L::Prepared],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NsktError::EmptyInput("training and validation splits must be nonempty".into()));
    }
    let mut params = init;
    let mut adam = Adam::new(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (params.clone(), adam.clone());
    let mut history = Vec::new();
    let mut grads = params.zero_grads();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut pending = 0;
        grads.zero();
        for &i in &order {
            let sample = &train_set[i];
            let loss = learner.loss_and_grad(&params, sample, &mut grads)?;
            if !loss.is_finite() {
                return Err(NsktError::NonFiniteLoss {
                    student: L::student(sample) as usize,
                    epoch,
                });
            }
            total += loss;
            pending += 1;
            if pending == cfg.accumulate {
                adam.update(&mut params, &grads);
                grads.zero();
                pending = 0;
            }
        }
        if pending > 0 {
            adam.update(&mut params, &grads);
            grads.zero();
        }
        let val_loss = mean_query_loss(learner, &params, val_set)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            Progress::Improved => best = (params.clone(), adam.clone()),
            Progress::Stalled => {}
            Progress::Stop => break,
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        optimizer: best.1,
        history,
        best_epoch: stopper.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Param;
    use proptest::prelude::*;

    fn scalar(v: f64) -> ParamStore {
        ParamStore::from_params(vec![Param {
            name: "x".into(),
            rows: 1,
            cols: 1,
            trainable: true,
            values: vec![v],
        }])
    }

    #[test]
    fn early_stopping_contract() {
        let mut s = EarlyStopping::new(7);
        let losses = [1.0, 0.9, 0.91, 0.95, 0.92, 0.93, 0.94, 0.96, 0.97];
        let mut stopped = None;
        for (i, l) in losses.iter().enumerate() {
            if s.observe(i + 1, *l) == Progress::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(9));
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(&p, &cfg);
        adam.update(&mut p, &Gradients(vec![vec![1.0]]));
        assert!((p.by_index(0).values[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = scalar(0.3);
        let mut adam = Adam::new(&p, &TrainConfig::default());
        for _ in 0..5 {
            adam.update(&mut p, &Gradients(vec![vec![0.0]]));
        }
        assert_eq!(p.by_index(0).values[0], 0.3);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = scalar(0.3);
        p.by_index_mut(0).trainable = false;
        let mut adam = Adam::new(&p, &TrainConfig::default());
        adam.update(&mut p, &Gradients(vec![vec![2.0]]));
        assert_eq!(p.by_index(0).values[0], 0.3);
    }

    proptest! {
        #[test]
        fn adam_descends_a_quadratic(
            start in proptest::collection::vec(-5.0f64..5.0, 1..6),
            scale in proptest::collection::vec(0.5f64..3.0, 6),
        ) {
            let n = start.len();
            let mut p = ParamStore::from_params(vec![Param {
                name: "x".into(), rows: n, cols: 1, trainable: true, values: start.clone(),
            }]);
            prop_assume!(start.iter().all(|v| v.abs() > 0.2));
            let loss = |p: &ParamStore| -> f64 {
                p.by_index(0).values.iter().zip(&scale).map(|(x, a)| a * x * x).sum()
            };
            let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
            let mut adam = Adam::new(&p, &cfg);
            let mut prev = loss(&p);
            for _ in 0..10 {
                let g: Vec<f64> = p.by_index(0).values.iter().zip(&scale).map(|(x, a)| 2.0 * a * x).collect();
                adam.update(&mut p, &Gradients(vec![g]));
                let now = loss(&p);
                prop_assert!(now < prev);
                prev = now;
            }
        }
    }
}
