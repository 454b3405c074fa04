use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Batch, Targets};
use crate::seed;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes { ids: Vec<u32>, num_classes: usize },
    Values { dim: usize, values: Vec<f64> },
}

/// In-memory samples with a deterministic, seeded batch order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    inputs: Vec<f64>,
    labels: Labels,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, inputs: Vec<f64>, labels: Labels) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || !inputs.len().is_multiple_of(per) {
            return Err(Error::Shape(format!(
                "{} input values do not tile sample shape {sample_shape:?}",
                inputs.len()
            )));
        }
        let n = inputs.len() / per;
        match &labels {
            Labels::Classes { ids, num_classes } => {
                if ids.len() != n {
                    return Err(Error::Shape(format!("{n} samples but {} labels", ids.len())));
                }
                if let Some(bad) = ids.iter().find(|&&y| y as usize >= *num_classes) {
                    return Err(Error::Shape(format!("label {bad} outside [0, {num_classes})")));
                }
            }
            Labels::Values { dim, values } => {
                if values.len() != n * dim {
                    return Err(Error::Shape(format!(
                        "{n} samples need {} targets, got {}",
                        n * dim,
                        values.len()
                    )));
                }
            }
        }
        Ok(Self {
            sample_shape,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.sample_size()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_size(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Classes { num_classes, .. } => Some(*num_classes),
            Labels::Values { .. } => None,
        }
    }

    /// Reinterprets every sample with a new shape of equal size.
    pub fn with_sample_shape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.sample_size() {
            return Err(Error::Shape(format!(
                "cannot view samples of {:?} as {shape:?}",
                self.sample_shape
            )));
        }
        self.sample_shape = shape.to_vec();
        Ok(self)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        match &self.labels {
            Labels::Classes { ids, num_classes } => {
                let mut h = vec![0; *num_classes];
                for &y in ids {
                    h[y as usize] += 1;
                }
                h
            }
            Labels::Values { .. } => Vec::new(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let per = self.sample_size();
        let mut x = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            x.extend_from_slice(&self.inputs[i * per..(i + 1) * per]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let targets = match &self.labels {
            Labels::Classes { ids, .. } => Targets::Classes(indices.iter().map(|&i| ids[i] as usize).collect()),
            Labels::Values { dim, values } => {
                let mut t = Vec::with_capacity(indices.len() * dim);
                for &i in indices {
                    t.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                Targets::Values(Tensor::new(vec![indices.len(), *dim], t)?)
            }
        };
        Batch::new(Tensor::new(shape, x)?, targets)
    }

    /// Sample order for `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, "epoch", epoch)));
        order
    }

    /// Index lists of the mini-batches of one epoch; the last may be short.
    pub fn epoch_batches(&self, seed: u64, epoch: u64, batch_size: usize) -> Vec<Vec<usize>> {
        self.epoch_order(seed, epoch)
            .chunks(batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// The first `⌈fraction·n⌉` samples of a seeded shuffle, cut into
    /// batches of at most `batch_size` in order.
    pub fn subset_batches(&self, fraction: f64, seed: u64, batch_size: usize) -> Result<Vec<Batch>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {fraction} outside (0, 1]")));
        }
        let take = ((fraction * self.len() as f64).ceil() as usize).clamp(1, self.len());
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, "subset", 0)));
        order.truncate(take);
        order.chunks(batch_size.max(1)).map(|idx| self.batch(idx)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
    /// Distance between class means in units of the within-class σ = 1.
    pub separation: f64,
    /// Repeat a random pattern of this length across each class mean instead
    /// of using axis-aligned means; row-major images of a width divisible by
    /// the period then show a class-specific texture at every location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
}

/// Where a dataset comes from; stored in manifests so runs can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    File { path: PathBuf },
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Synthetic(s) => make_synthetic_with(s),
            DataSpec::File { path } => super::io::load_dataset(path),
        }
    }
}

/// Gaussian class blobs with unit within-class σ and mean separation 6σ.
pub fn make_synthetic(num_classes: usize, dim: usize, samples: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(&SyntheticSpec {
        num_classes,
        dim,
        samples,
        seed,
        separation: 6.0,
        period: None,
    })
}

/// Sample `i` belongs to class `i mod C`, drawn from `N(μ_k, I)`.
///
/// With a `period`, `μ_k` tiles a random pattern and has norm
/// `separation/√2`. Otherwise, when `dim ≥ C`, the means sit on scaled
/// coordinate axes spaced `dim / C` apart so every pair is exactly
/// `separation` apart; when `dim < C` they are random points on a sphere of
/// radius `separation/√2`.
pub fn make_synthetic_with(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        num_classes: c,
        dim,
        samples,
        seed,
        separation,
        period,
    } = *spec;
    if period == Some(0) {
        return Err(Error::Config("pattern period must be ≥ 1".into()));
    }
    if c == 0 || dim == 0 || samples < c {
        return Err(Error::Config(format!(
            "synthetic data needs samples ({samples}) >= classes ({c}) >= 1 and dim >= 1"
        )));
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let mut rng = seed::rng(seed::derive(seed, "synthetic", 0));
    let means: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            if let Some(t) = period {
                let p: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
                let m: Vec<f64> = (0..dim).map(|i| p[i % t]).collect();
                let n = crate::linalg::norm(&m).max(1e-12);
                m.into_iter().map(|v| v * radius / n).collect()
            } else if dim >= c {
                let mut m = vec![0.0; dim];
                m[k * (dim / c)] = radius;
                m
            } else {
                let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = crate::linalg::norm(&g).max(1e-12);
                g.into_iter().map(|v| v * radius / n).collect()
            }
        })
        .collect();
    let mut inputs = Vec::with_capacity(samples * dim);
    let mut ids = Vec::with_capacity(samples);
    for i in 0..samples {
        let k = i % c;
        for mu in &means[k] {
            let z: f64 = StandardNormal.sample(&mut rng);
            inputs.push(mu + z);
        }
        ids.push(k as u32);
    }
    Dataset::new(vec![dim], inputs, Labels::Classes { ids, num_classes: c })
}
