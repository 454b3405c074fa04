use serde::{Deserialize, Serialize};

use crate::autodiff::{FlatParams, Graph, GraphBuilder, NodeId, ParamKind, ParamLayout};
use crate::seed;
use crate::{Error, Result};
use rand::Rng;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LenetConfig {
    pub input_hw: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub num_classes: usize,
    pub kernel: usize,
    /// Inserts an inference-style batch-norm after the first convolution.
    pub batchnorm: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl LenetConfig {
    pub fn new(input_hw: usize, channels: &[usize], num_classes: usize) -> Self {
        Self {
            input_hw,
            in_channels: 1,
            channels: channels.to_vec(),
            hidden: 16,
            num_classes,
            kernel: 2,
            batchnorm: false,
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp {
        layers: Vec<usize>,
        activation: Activation,
        #[serde(default)]
        loss: LossKind,
    },
    LenetMini(LenetConfig),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            ModelSpec::Mlp {
                layers,
                activation,
                loss,
            } => build_mlp_with_loss(layers, *activation, *loss),
            ModelSpec::LenetMini(cfg) => build_lenet(cfg),
        }
    }

    /// Per-sample input shape the model expects.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ModelSpec::Mlp { layers, .. } => vec![layers.first().copied().unwrap_or(0)],
            ModelSpec::LenetMini(c) => vec![c.in_channels, c.input_hw, c.input_hw],
        }
    }
}

pub fn build_mlp(layer_sizes: &[usize], activation: Activation) -> Result<Graph> {
    build_mlp_with_loss(layer_sizes, activation, LossKind::CrossEntropy)
}

pub fn build_mlp_with_loss(layer_sizes: &[usize], activation: Activation, loss: LossKind) -> Result<Graph> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "an MLP needs at least two positive layer sizes, got {layer_sizes:?}"
        )));
    }
    let mut b = GraphBuilder::new(&layer_sizes[..1]);
    let mut h = b.input();
    let last = layer_sizes.len() - 1;
    for (i, &width) in layer_sizes[1..].iter().enumerate() {
        h = b.dense(&format!("fc{}", i + 1), h, width)?;
        if i + 1 < last {
            h = activate(&mut b, h, activation)?;
        }
    }
    let out = match loss {
        LossKind::CrossEntropy => b.softmax_cross_entropy(h)?,
        LossKind::Mse => b.mse(h)?,
    };
    b.finish(out)
}

fn activate(b: &mut GraphBuilder, h: NodeId, a: Activation) -> Result<NodeId> {
    match a {
        Activation::Relu => b.relu(h),
        Activation::Tanh => b.tanh(h),
    }
}

/// conv–pool blocks (one per entry of `channels`) followed by two dense layers.
pub fn build_lenet_mini(input_hw: usize, channels: &[usize], num_classes: usize) -> Result<Graph> {
    build_lenet(&LenetConfig::new(input_hw, channels, num_classes))
}

pub fn build_lenet(cfg: &LenetConfig) -> Result<Graph> {
    if cfg.input_hw < 8 {
        return Err(Error::Config(format!("input size {} below 8", cfg.input_hw)));
    }
    if cfg.channels.is_empty() || cfg.num_classes < 2 || cfg.kernel == 0 {
        return Err(Error::Config("lenet needs channels, a kernel and ≥2 classes".into()));
    }
    let mut side = cfg.input_hw;
    for _ in &cfg.channels {
        if side <= cfg.kernel {
            return Err(Error::Config(format!(
                "feature maps shrink below 1x1 for input {} and kernel {}",
                cfg.input_hw, cfg.kernel
            )));
        }
        side = (side - cfg.kernel).div_ceil(2);
    }
    let mut b = GraphBuilder::new(&[cfg.in_channels, cfg.input_hw, cfg.input_hw]);
    let mut h = b.input();
    for (i, &c) in cfg.channels.iter().enumerate() {
        h = b.conv(&format!("conv{}", i + 1), h, c, cfg.kernel)?;
        if i == 0 && cfg.batchnorm {
            h = b.batch_norm("bn1", h)?;
        }
        h = activate(&mut b, h, cfg.activation)?;
        h = b.max_pool2(h)?;
    }
    h = b.flatten(h)?;
    h = b.dense("fc1", h, cfg.hidden)?;
    h = activate(&mut b, h, cfg.activation)?;
    h = b.dense("fc2", h, cfg.num_classes)?;
    let loss = b.softmax_cross_entropy(h)?;
    b.finish(loss)
}

/// Uniform He-style initialization: filter/row groups draw from
/// `U(±√(6/fan_in))` with `fan_in` the group size, biases and batch-norm
/// shifts start at 0, batch-norm scales at 1.
pub fn init_params(layout: &Arc<ParamLayout>, seed: u64) -> FlatParams {
    let mut rng = seed::rng(seed::derive(seed, "init", 0));
    let mut values = vec![0.0; layout.total_count()];
    for g in layout.groups() {
        let slot = &mut values[g.range()];
        match g.kind {
            ParamKind::ConvFilter | ParamKind::FcRow => {
                let a = (6.0 / g.count as f64).sqrt();
                for v in slot {
                    *v = rng.random_range(-a..a);
                }
            }
            ParamKind::Bias => {}
            ParamKind::Batchnorm => {
                if g.name.ends_with(".scale") {
                    slot.fill(1.0);
                }
            }
        }
    }
    FlatParams::new(layout.clone(), values).expect("layout-sized init")
}
