//! Model builders, datasets, the SGD-with-momentum trainer and the on-disk
//! formats for checkpoints, datasets and trajectories.

mod data;
pub mod io;
mod models;
mod train;

pub use crate::autodiff::{Batch, Targets};
pub use data::{make_synthetic, make_synthetic_with, DataSpec, Dataset, Labels, SyntheticSpec};
pub use models::{
    build_lenet, build_lenet_mini, build_mlp, build_mlp_with_loss, init_params, Activation, LenetConfig, LossKind,
    ModelSpec,
};
pub use train::{train_sgd, train_sgd_from, OptimizerConfig, Snapshot, Trajectory};
