//! Command-line front end: `train`, `landscape`, `spectrum`, `interpolate`
//! and `bench`.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing input (also clap usage
//! errors), 3 rank-deficient PCA, 4 degenerate directions, 5 layout mismatch.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, ModelContext};
pub use config::{
    default_data, default_model, parse_list, parse_sigma, BenchSettings, DirKind, DirectionSettings, GridSettings,
    Inputs, InterpolationSettings, RunConfig, SpectrumSettings,
};
pub use output::{sha256_file, Envelope, TOOL_NAME};

use crate::bench::BenchTask;
use crate::directions::Degenerate;
use crate::modelzoo::{Activation, DataSpec, LenetConfig, ModelSpec, SyntheticSpec};
use crate::spectral::Sigma;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "losslens",
    version,
    about = "Loss landscapes and Hessian spectra of small networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with SGD and momentum, writing a checkpointed trajectory.
    Train(CommonArgs),
    /// Loss grid on a direction plane through the last snapshot.
    Landscape(CommonArgs),
    /// Hessian eigenvalue density by stochastic Lanczos quadrature.
    Spectrum(CommonArgs),
    /// Losses (and spectra) on the segment between two checkpoints.
    Interpolate(CommonArgs),
    /// Scaling measurement over worker counts with an Amdahl fit.
    Bench(CommonArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::Train(a) => ("train", a),
            Command::Landscape(a) => ("landscape", a),
            Command::Spectrum(a) => ("spectrum", a),
            Command::Interpolate(a) => ("interpolate", a),
            Command::Bench(a) => ("bench", a),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Mlp,
    LenetMini,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Tanh,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirsArg {
    Pca,
    Random,
    Eigen,
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Grid,
    SlqIteration,
    SlqData,
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Comma-separated MLP layer sizes, input first.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Input height and width for lenet-mini.
    #[arg(long)]
    pub hw: Option<usize>,
    /// Comma-separated conv channel counts for lenet-mini.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub batchnorm: bool,
    /// Hidden activation; lenet-mini defaults to tanh, mlp to relu.
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// `synth` or `file:PATH`.
    #[arg(long)]
    pub data: Option<String>,
    /// Sample count for synthetic data.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Class-mean pattern period for synthetic data.
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub save_every: Option<usize>,
    #[arg(long, value_enum)]
    pub dirs: Option<DirsArg>,
    /// Two checkpoint-format direction files for `--dirs user`.
    #[arg(long, value_delimiter = ',')]
    pub dir_files: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub centered: bool,
    /// Use the directions without filter-wise normalization.
    #[arg(long)]
    pub raw_dirs: bool,
    /// Leave zero direction groups at zero instead of failing.
    #[arg(long)]
    pub zero_degenerate: bool,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub border: Option<f64>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// `auto` or a positive kernel width.
    #[arg(long, value_parser = parse_sigma)]
    pub sigma: Option<Sigma>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub every_checkpoint: bool,
    #[arg(long)]
    pub points: Option<usize>,
    /// Also estimate a spectrum at every interpolation point.
    #[arg(long)]
    pub spectra: bool,
    /// Worker count, or a comma-separated list for `bench`.
    #[arg(long, value_delimiter = ',')]
    pub workers: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub traj: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Symmetric matrix as a JSON array of rows, used instead of a model Hessian.
    #[arg(long)]
    pub operator_file: Option<PathBuf>,
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, command: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::Missing(path.clone()));
                }
                serde_json::from_str(&std::fs::read_to_string(path)?)?
            }
            None => RunConfig::default(),
        };
        cfg.command = command.to_string();
        if let Some(model) = self.model {
            cfg.model = Some(self.model_spec(model));
        }
        let synth_flags =
            self.samples.is_some() || self.data_seed.is_some() || self.period.is_some() || self.separation.is_some();
        if let Some(data) = &self.data {
            cfg.data = Some(self.data_spec(data, &cfg)?);
        } else if let Some(DataSpec::Synthetic(s)) = &mut cfg.data {
            self.apply_synth(s);
        } else if synth_flags && cfg.data.is_none() {
            cfg.data = Some(self.data_spec("synth", &cfg)?);
        }
        let o = &mut cfg.optimizer;
        set(&mut o.learning_rate, self.lr);
        set(&mut o.momentum, self.momentum);
        set(&mut o.batch_size, self.batch_size);
        set(&mut o.epochs, self.epochs);
        set(&mut o.checkpoint_every, self.save_every);
        if let Some(d) = self.dirs {
            cfg.directions.kind = match d {
                DirsArg::Pca => DirKind::Pca,
                DirsArg::Random => DirKind::Random,
                DirsArg::Eigen => DirKind::Eigen,
                DirsArg::User => DirKind::User,
            };
        }
        set(&mut cfg.directions.files, self.dir_files.clone());
        cfg.directions.centered |= self.centered;
        cfg.directions.raw |= self.raw_dirs;
        if self.zero_degenerate {
            cfg.directions.degenerate = Degenerate::Zero;
        }
        set(&mut cfg.grid.n, self.grid);
        set(&mut cfg.grid.border, self.border);
        set(&mut cfg.fraction, self.fraction);
        set(&mut cfg.spectrum.k, self.k);
        set(&mut cfg.spectrum.m, self.m);
        set(&mut cfg.spectrum.sigma, self.sigma);
        set(&mut cfg.spectrum.grid_points, self.grid_points);
        cfg.spectrum.every_checkpoint |= self.every_checkpoint;
        set(&mut cfg.interpolation.points, self.points);
        cfg.interpolation.spectra |= self.spectra;
        set(&mut cfg.bench.repeats, self.repeats);
        if let Some(t) = self.task {
            cfg.bench.task = match t {
                TaskArg::Grid => BenchTask::Grid,
                TaskArg::SlqIteration => BenchTask::SlqIteration,
                TaskArg::SlqData => BenchTask::SlqData,
            };
        }
        if let Some(w) = &self.workers {
            if command == "bench" {
                cfg.bench.worker_counts = w.clone();
            } else if w.len() == 1 {
                cfg.workers = w[0];
            } else {
                return Err(Error::Config("--workers takes a single count here".into()));
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.optimizer.seed = s;
        }
        let i = &mut cfg.inputs;
        set(&mut i.traj, self.traj.clone().map(Some));
        set(&mut i.checkpoint, self.checkpoint.clone().map(Some));
        set(&mut i.operator_file, self.operator_file.clone().map(Some));
        set(&mut i.a, self.a.clone().map(Some));
        set(&mut i.b, self.b.clone().map(Some));
        set(&mut cfg.out, self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }

    fn model_spec(&self, model: ModelArg) -> ModelSpec {
        let classes = self.classes.unwrap_or(10);
        match model {
            ModelArg::Mlp => {
                let mut layers = self.layers.clone().unwrap_or_else(|| vec![64, 16, classes]);
                if self.classes.is_some() {
                    if let Some(last) = layers.last_mut() {
                        *last = classes;
                    }
                }
                ModelSpec::Mlp {
                    layers,
                    activation: self.activation.map_or(Activation::Relu, Into::into),
                    loss: Default::default(),
                }
            }
            ModelArg::LenetMini => {
                let mut c = LenetConfig::new(
                    self.hw.unwrap_or(8),
                    &self.channels.clone().unwrap_or_else(|| vec![4, 8]),
                    classes,
                );
                set(&mut c.hidden, self.hidden);
                c.batchnorm = self.batchnorm;
                c.activation = self.activation.map_or(Activation::Tanh, Into::into);
                ModelSpec::LenetMini(c)
            }
        }
    }

    fn data_spec(&self, data: &str, cfg: &RunConfig) -> Result<DataSpec> {
        if let Some(path) = data.strip_prefix("file:") {
            return Ok(DataSpec::File { path: path.into() });
        }
        if data != "synth" {
            return Err(Error::Config(format!(
                "--data expects `synth` or `file:PATH`, got `{data}`"
            )));
        }
        let model = cfg.model.clone().unwrap_or_else(default_model);
        let DataSpec::Synthetic(mut s) = default_data(&model) else {
            unreachable!("default data is synthetic")
        };
        s.num_classes = match &model {
            ModelSpec::Mlp { layers, .. } => layers.last().copied().unwrap_or(10),
            ModelSpec::LenetMini(c) => c.num_classes,
        };
        self.apply_synth(&mut s);
        Ok(DataSpec::Synthetic(s))
    }

    fn apply_synth(&self, s: &mut SyntheticSpec) {
        set(&mut s.samples, self.samples);
        set(&mut s.seed, self.data_seed);
        set(&mut s.separation, self.separation);
        if self.period.is_some() {
            s.period = self.period;
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Maps an error to the documented process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Missing(_) => 2,
        Error::RankDeficient { .. } => 3,
        Error::DegenerateDirection { .. } | Error::NearParallel { .. } => 4,
        Error::Layout(_) => 5,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, args) = cli.command.parts();
    match args.resolve(name).and_then(|cfg| run(&cfg)) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
