use std::sync::Arc;

use super::layout::{ParamGroup, ParamKind, ParamLayout};
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Batch inputs `[B, ...input_shape]`.
    Input,
    /// A contiguous slice of the flat parameter vector.
    Param {
        offset: usize,
    },
    /// `x[B, in] · w[out, in]ᵀ`
    MatMul {
        x: NodeId,
        w: NodeId,
    },
    /// Valid padding, stride 1; `x[B, C, H, W]`, `w[O, C, K, K]`.
    Conv2d {
        x: NodeId,
        w: NodeId,
    },
    MaxPool2 {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    /// Adds `b[C]` along axis 1.
    BiasAdd {
        x: NodeId,
        b: NodeId,
    },
    /// Inference-style: fixed statistics, learned per-channel scale and shift.
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    Flatten {
        x: NodeId,
    },
    /// Mean over the batch of `logsumexp(z) - z[label]`.
    SoftmaxCrossEntropy {
        logits: NodeId,
    },
    /// Mean over all entries of `(pred - target)²`.
    Mse {
        pred: NodeId,
    },
    /// `½ xᵀ A x` with symmetric `A` stored row-major.
    QuadraticForm {
        x: NodeId,
        matrix: Vec<f64>,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::BiasAdd { .. } => "bias_add",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Flatten { .. } => "flatten",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Mse { .. } => "mse",
            Op::QuadraticForm { .. } => "quadratic_form",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param { .. } => vec![],
            Op::MatMul { x, w } | Op::Conv2d { x, w } => vec![*x, *w],
            Op::BiasAdd { x, b } => vec![*x, *b],
            Op::BatchNorm { x, scale, shift, .. } => vec![*x, *scale, *shift],
            Op::MaxPool2 { x } | Op::Relu { x } | Op::Tanh { x } | Op::Flatten { x } | Op::QuadraticForm { x, .. } => {
                vec![*x]
            }
            Op::SoftmaxCrossEntropy { logits } => vec![*logits],
            Op::Mse { pred } => vec![*pred],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: Op,
    /// Per-sample shape for batched nodes, full shape otherwise.
    pub shape: Vec<usize>,
    pub batched: bool,
}

/// Static computation graph ending in a scalar loss. Immutable once built.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    output: NodeId,
    layout: Arc<ParamLayout>,
    input_shape: Vec<usize>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_count()
    }
}

/// Incremental graph construction with shape inference.
///
/// Every parameter tensor registers its groups in the layout as it is
/// created, so the layout order follows construction order.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    groups: Vec<ParamGroup>,
    offset: usize,
    input_shape: Vec<usize>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            nodes: Vec::new(),
            groups: Vec::new(),
            offset: 0,
            input_shape: input_shape.to_vec(),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, batched: bool) -> NodeId {
        self.nodes.push(Node { op, shape, batched });
        self.nodes.len() - 1
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown node {id}")))
    }

    fn batched(&self, id: NodeId, what: &str) -> Result<Vec<usize>> {
        let n = self.node(id)?;
        if !n.batched {
            return Err(Error::Shape(format!("{what} expects a batched operand")));
        }
        Ok(n.shape.clone())
    }

    pub fn input(&mut self) -> NodeId {
        let shape = self.input_shape.clone();
        self.push(Op::Input, shape, true)
    }

    /// Registers a parameter tensor. Filter kinds split the leading axis
    /// into one group per filter (conv) or output row (dense).
    pub fn param(&mut self, name: &str, kind: ParamKind, shape: &[usize]) -> Result<NodeId> {
        let total: usize = shape.iter().product();
        if total == 0 {
            return Err(Error::Config(format!("parameter `{name}` is empty")));
        }
        let start = self.offset;
        if kind.is_filter() {
            let per: usize = shape[1..].iter().product();
            for j in 0..shape[0] {
                self.groups.push(ParamGroup {
                    name: format!("{name}[{j}]"),
                    offset: start + j * per,
                    count: per,
                    kind,
                    filter_shape: shape[1..].to_vec(),
                });
            }
        } else {
            self.groups.push(ParamGroup {
                name: name.to_string(),
                offset: start,
                count: total,
                kind,
                filter_shape: shape.to_vec(),
            });
        }
        self.offset += total;
        Ok(self.push(Op::Param { offset: start }, shape.to_vec(), false))
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "matmul")?;
        let ws = self.node(w)?.shape.clone();
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] {
            return Err(Error::Shape(format!("matmul of {xs:?} with weight {ws:?}")));
        }
        Ok(self.push(Op::MatMul { x, w }, vec![ws[0]], true))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "conv2d")?;
        let ws = self.node(w)?.shape.clone();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(Error::Shape(format!("conv2d of {xs:?} with kernel {ws:?}")));
        }
        let (k_h, k_w) = (ws[2], ws[3]);
        if k_h > xs[1] || k_w > xs[2] {
            return Err(Error::Config(format!(
                "kernel {k_h}x{k_w} larger than feature map {}x{}",
                xs[1], xs[2]
            )));
        }
        let shape = vec![ws[0], xs[1] - k_h + 1, xs[2] - k_w + 1];
        Ok(self.push(Op::Conv2d { x, w }, shape, true))
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "maxpool2")?;
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(Error::Config(format!("cannot 2x2-pool feature map {xs:?}")));
        }
        let shape = vec![xs[0], xs[1] / 2, xs[2] / 2];
        Ok(self.push(Op::MaxPool2 { x }, shape, true))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "relu")?;
        Ok(self.push(Op::Relu { x }, xs, true))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "tanh")?;
        Ok(self.push(Op::Tanh { x }, xs, true))
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "bias_add")?;
        let bs = self.node(b)?.shape.clone();
        if bs.len() != 1 || xs.first() != Some(&bs[0]) {
            return Err(Error::Shape(format!("bias {bs:?} for activations {xs:?}")));
        }
        Ok(self.push(Op::BiasAdd { x, b }, xs, true))
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "batchnorm")?;
        let c = xs[0];
        let scale = self.param(&format!("{name}.scale"), ParamKind::Batchnorm, &[c])?;
        let shift = self.param(&format!("{name}.shift"), ParamKind::Batchnorm, &[c])?;
        let op = Op::BatchNorm {
            x,
            scale,
            shift,
            mean: vec![0.0; c],
            var: vec![1.0; c],
            eps: 1e-5,
        };
        Ok(self.push(op, xs, true))
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.batched(x, "flatten")?;
        Ok(self.push(Op::Flatten { x }, vec![xs.iter().product()], true))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId) -> Result<NodeId> {
        let xs = self.batched(logits, "softmax_cross_entropy")?;
        if xs.len() != 1 {
            return Err(Error::Shape(format!("logits must be [C], got {xs:?}")));
        }
        Ok(self.push(Op::SoftmaxCrossEntropy { logits }, vec![], false))
    }

    pub fn mse(&mut self, pred: NodeId) -> Result<NodeId> {
        let xs = self.batched(pred, "mse")?;
        if xs.len() != 1 {
            return Err(Error::Shape(format!("predictions must be [K], got {xs:?}")));
        }
        Ok(self.push(Op::Mse { pred }, vec![], false))
    }

    /// `½ xᵀ A x`; `matrix` must be symmetric (checked to 1e-12 relative).
    pub fn quadratic_form(&mut self, x: NodeId, matrix: Vec<f64>) -> Result<NodeId> {
        let n: usize = self.node(x)?.shape.iter().product();
        if self.node(x)?.batched || matrix.len() != n * n {
            return Err(Error::Shape(format!(
                "quadratic form needs an unbatched operand and a {n}x{n} matrix"
            )));
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (matrix[i * n + j] - matrix[j * n + i]).abs() > 1e-12 * scale {
                    return Err(Error::Config("quadratic form matrix is not symmetric".into()));
                }
            }
        }
        Ok(self.push(Op::QuadraticForm { x, matrix }, vec![], false))
    }

    /// Dense layer `x·Wᵀ + b` with one `fc_row` group per output neuron.
    pub fn dense(&mut self, name: &str, x: NodeId, out: usize) -> Result<NodeId> {
        let xs = self.batched(x, "dense")?;
        let w = self.param(&format!("{name}.weight"), ParamKind::FcRow, &[out, xs[0]])?;
        let b = self.param(&format!("{name}.bias"), ParamKind::Bias, &[out])?;
        let y = self.matmul(x, w)?;
        self.bias_add(y, b)
    }

    /// Convolution plus bias with one `conv_filter` group per output channel.
    pub fn conv(&mut self, name: &str, x: NodeId, out: usize, kernel: usize) -> Result<NodeId> {
        let xs = self.batched(x, "conv")?;
        if xs.len() != 3 {
            return Err(Error::Shape(format!("conv input must be [C,H,W], got {xs:?}")));
        }
        let w = self.param(
            &format!("{name}.weight"),
            ParamKind::ConvFilter,
            &[out, xs[0], kernel, kernel],
        )?;
        let b = self.param(&format!("{name}.bias"), ParamKind::Bias, &[out])?;
        let y = self.conv2d(x, w)?;
        self.bias_add(y, b)
    }

    pub fn finish(self, output: NodeId) -> Result<Graph> {
        let out = self
            .nodes
            .get(output)
            .ok_or_else(|| Error::Config(format!("unknown output node {output}")))?;
        if out.batched || !out.shape.is_empty() {
            return Err(Error::Shape("graph output must be a scalar loss".into()));
        }
        Ok(Graph {
            nodes: self.nodes,
            output,
            layout: Arc::new(ParamLayout::new(self.groups)?),
            input_shape: self.input_shape,
        })
    }
}
