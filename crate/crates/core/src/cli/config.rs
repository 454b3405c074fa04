use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bench::BenchTask;
use crate::directions::Degenerate;
use crate::modelzoo::{Activation, DataSpec, LenetConfig, ModelSpec, OptimizerConfig, SyntheticSpec};
use crate::spectral::{ProbeKind, Sigma, SlqConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirKind {
    #[default]
    Pca,
    Random,
    Eigen,
    User,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectionSettings {
    pub kind: DirKind,
    /// Subtract the mean difference before PCA.
    pub centered: bool,
    /// Skip filter-wise normalization.
    pub raw: bool,
    pub degenerate: Degenerate,
    /// Two checkpoint-format files for `kind = user`.
    pub files: Vec<PathBuf>,
}

impl Default for DirectionSettings {
    fn default() -> Self {
        Self {
            kind: DirKind::Pca,
            centered: false,
            raw: false,
            degenerate: Degenerate::Error,
            files: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    pub n: usize,
    pub border: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { n: 20, border: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumSettings {
    pub k: usize,
    pub m: usize,
    pub sigma: Sigma,
    pub grid_points: usize,
    pub probe_kind: ProbeKind,
    pub every_checkpoint: bool,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self {
            k: 10,
            m: 80,
            sigma: Sigma::Auto,
            grid_points: 1000,
            probe_kind: ProbeKind::Gaussian,
            every_checkpoint: false,
        }
    }
}

impl SpectrumSettings {
    pub fn slq(&self, seed: u64) -> SlqConfig {
        SlqConfig {
            probes: self.k,
            steps: self.m,
            sigma: self.sigma,
            grid_points: self.grid_points,
            seed,
            probe_kind: self.probe_kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpolationSettings {
    pub points: usize,
    pub spectra: bool,
}

impl Default for InterpolationSettings {
    fn default() -> Self {
        Self {
            points: 20,
            spectra: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub task: BenchTask,
    pub worker_counts: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            task: BenchTask::SlqIteration,
            worker_counts: vec![1, 2, 4],
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    pub traj: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub operator_file: Option<PathBuf>,
}

/// Everything a command needs. Flags override a `--config` JSON file, which
/// overrides these defaults. Serialized into every output; the worker count
/// and output directory are reported separately because they must not change
/// the payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    /// `None`: taken from the trajectory manifest, else the default model.
    pub model: Option<ModelSpec>,
    pub data: Option<DataSpec>,
    pub optimizer: OptimizerConfig,
    pub directions: DirectionSettings,
    pub grid: GridSettings,
    pub spectrum: SpectrumSettings,
    pub interpolation: InterpolationSettings,
    pub bench: BenchSettings,
    /// Fraction of the training set used for landscape losses and Hessians.
    pub fraction: f64,
    pub seed: u64,
    pub inputs: Inputs,
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            model: None,
            data: None,
            // The synthetic task needs a smaller batch and larger step than
            // the library defaults to learn within one epoch.
            optimizer: OptimizerConfig {
                learning_rate: 0.01,
                batch_size: 32,
                ..OptimizerConfig::default()
            },
            directions: DirectionSettings::default(),
            grid: GridSettings::default(),
            spectrum: SpectrumSettings::default(),
            interpolation: InterpolationSettings::default(),
            bench: BenchSettings::default(),
            fraction: 0.2,
            seed: 0,
            inputs: Inputs::default(),
            workers: 1,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} outside (0, 1]", self.fraction)));
        }
        if self.grid.n < 2 {
            return Err(Error::Config(format!("grid needs N ≥ 2, got {}", self.grid.n)));
        }
        if self.grid.border.is_nan() || self.grid.border < 0.0 {
            return Err(Error::Config(format!("border {} must be ≥ 0", self.grid.border)));
        }
        if self.spectrum.k == 0 || self.spectrum.m == 0 {
            return Err(Error::Config("spectrum needs k ≥ 1 and m ≥ 1".into()));
        }
        if let Sigma::Fixed(s) = self.spectrum.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma {s} must be positive")));
            }
        }
        if self.interpolation.points < 2 {
            return Err(Error::Config("interpolation needs at least 2 points".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Tanh LeNet-style model on 8×8 single-channel inputs with 10 classes.
pub fn default_model() -> ModelSpec {
    let mut c = LenetConfig::new(8, &[4, 8], 10);
    c.activation = Activation::Tanh;
    ModelSpec::LenetMini(c)
}

/// Ten Gaussian classes with period-4 mean patterns, sized for `model`'s input.
pub fn default_data(model: &ModelSpec) -> DataSpec {
    DataSpec::Synthetic(SyntheticSpec {
        num_classes: 10,
        dim: model.input_shape().iter().product(),
        samples: 2560,
        seed: 0,
        separation: 24.0,
        period: Some(4),
    })
}

pub fn parse_sigma(s: &str) -> std::result::Result<Sigma, String> {
    if s == "auto" {
        return Ok(Sigma::Auto);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(Sigma::Fixed)
        .ok_or_else(|| format!("expected `auto` or a positive number, got `{s}`"))
}

pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}
