use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::data::{DataSpec, Dataset};
use super::models::{init_params, ModelSpec};
use crate::autodiff::{forward_loss, loss_and_gradient, FlatParams, Graph, ParamLayout};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 256,
            epochs: 1,
            seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch size and checkpoint cadence must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub params: FlatParams,
    /// Loss at `params` on the mini-batch identified by `epoch`/`batch_index`.
    pub loss: f64,
    pub epoch: usize,
    pub batch_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub model: Option<ModelSpec>,
    pub optimizer: OptimizerConfig,
    pub data: Option<DataSpec>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn layout(&self) -> Option<&Arc<ParamLayout>> {
        self.snapshots.first().map(|s| s.params.layout())
    }

    pub fn validate(&self) -> Result<()> {
        let Some(layout) = self.layout() else {
            return Err(Error::Config("empty trajectory".into()));
        };
        for w in self.snapshots.windows(2) {
            if w[1].iteration <= w[0].iteration {
                return Err(Error::Config(format!(
                    "iteration {} follows {}",
                    w[1].iteration, w[0].iteration
                )));
            }
        }
        for s in &self.snapshots {
            s.params.ensure_layout(layout)?;
        }
        Ok(())
    }
}

/// Trains from the seeded He-style initialization; see [`train_sgd_from`].
pub fn train_sgd(graph: &Graph, dataset: &Dataset, cfg: &OptimizerConfig) -> Result<Trajectory> {
    let init = init_params(graph.layout(), cfg.seed);
    train_sgd_from(graph, dataset, cfg, init)
}

/// Heavy-ball SGD: `u ← μ·u + g; θ ← θ − lr·u`, with `u₀ = 0`.
///
/// Snapshots are taken at iteration 0, every `checkpoint_every` iterations and
/// after the last iteration. A snapshot's loss is measured on the mini-batch of
/// the step that produced it (the first batch for iteration 0). A non-finite
/// loss or gradient aborts with [`Error::Diverged`] carrying the snapshots
/// recorded so far.
pub fn train_sgd_from(graph: &Graph, dataset: &Dataset, cfg: &OptimizerConfig, init: FlatParams) -> Result<Trajectory> {
    cfg.validate()?;
    init.ensure_layout(graph.layout())?;
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let epochs: Vec<Vec<Vec<usize>>> = (0..cfg.epochs)
        .map(|e| dataset.epoch_batches(cfg.seed, e as u64, cfg.batch_size))
        .collect();
    let total: usize = epochs.iter().map(Vec::len).sum();

    let mut traj = Trajectory {
        snapshots: Vec::new(),
        model: None,
        optimizer: cfg.clone(),
        data: None,
    };
    let mut theta = init;
    let mut velocity = vec![0.0; theta.len()];

    let first = match epochs.first().and_then(|e| e.first()) {
        Some(idx) => dataset.batch(idx)?,
        None => dataset.batch(&[0])?,
    };
    let diverged = |iteration: usize, traj: Trajectory| Error::Diverged {
        iteration,
        partial: Box::new(traj),
    };
    match forward_loss(graph, &theta, &first) {
        Ok(loss) if loss.is_finite() => traj.snapshots.push(Snapshot {
            iteration: 0,
            params: theta.clone(),
            loss,
            epoch: 0,
            batch_index: 0,
        }),
        Ok(_) | Err(Error::Numeric { .. }) => return Err(diverged(0, traj)),
        Err(e) => return Err(e),
    }

    let mut iteration = 0;
    for (epoch, batches) in epochs.iter().enumerate() {
        for (batch_index, idx) in batches.iter().enumerate() {
            iteration += 1;
            let batch = dataset.batch(idx)?;
            let grad = match loss_and_gradient(graph, &theta, &batch) {
                Ok((loss, g)) if loss.is_finite() && g.values().iter().all(|v| v.is_finite()) => g,
                Ok(_) | Err(Error::Numeric { .. }) => return Err(diverged(iteration, traj)),
                Err(e) => return Err(e),
            };
            for ((u, g), t) in velocity.iter_mut().zip(grad.values()).zip(theta.values_mut()) {
                *u = cfg.momentum * *u + g;
                *t -= cfg.learning_rate * *u;
            }
            if iteration % cfg.checkpoint_every == 0 || iteration == total {
                let loss = match forward_loss(graph, &theta, &batch) {
                    Ok(l) if l.is_finite() => l,
                    Ok(_) | Err(Error::Numeric { .. }) => return Err(diverged(iteration, traj)),
                    Err(e) => return Err(e),
                };
                traj.snapshots.push(Snapshot {
                    iteration,
                    params: theta.clone(),
                    loss,
                    epoch,
                    batch_index,
                });
            }
        }
    }
    Ok(traj)
}
