//! Forward and reverse sweeps over a [`Graph`], generic over the scalar type.

use super::graph::{Graph, Op};
use super::{Batch, Targets};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub(crate) fn forward<S: Scalar>(graph: &Graph, params: &[S], batch: &Batch) -> Result<Vec<Tensor<S>>> {
    let mut vals: Vec<Tensor<S>> = Vec::with_capacity(graph.nodes().len());
    let b = batch.len();
    for (id, node) in graph.nodes().iter().enumerate() {
        let out = match &node.op {
            Op::Input => {
                let shape = batch.inputs.shape();
                if shape.len() != node.shape.len() + 1 || shape[1..] != node.shape[..] {
                    return Err(Error::Shape(format!(
                        "batch inputs {shape:?} do not match model input {:?}",
                        node.shape
                    )));
                }
                batch.inputs.map(S::from_f64)
            }
            Op::Param { offset } => {
                let n: usize = node.shape.iter().product();
                Tensor::new(node.shape.clone(), params[*offset..*offset + n].to_vec())?
            }
            Op::MatMul { x, w } => matmul(&vals[*x], &vals[*w]),
            Op::Conv2d { x, w } => conv2d(&vals[*x], &vals[*w]),
            Op::MaxPool2 { x } => max_pool2(&vals[*x]).0,
            Op::Relu { x } => vals[*x].map(|v| if v.re() > 0.0 { v } else { S::zero() }),
            Op::Tanh { x } => vals[*x].map(S::tanh),
            Op::BiasAdd { x, b } => bias_add(&vals[*x], &vals[*b]),
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                var,
                eps,
            } => batch_norm(&vals[*x], &vals[*scale], &vals[*shift], mean, var, *eps),
            Op::Flatten { x } => {
                let t = vals[*x].clone();
                let rest = t.len() / b;
                t.reshaped(vec![b, rest])
            }
            Op::SoftmaxCrossEntropy { logits } => Tensor::scalar(softmax_ce(&vals[*logits], targets_classes(batch)?)?),
            Op::Mse { pred } => Tensor::scalar(mse(&vals[*pred], targets_values(batch)?)?),
            Op::QuadraticForm { x, matrix } => {
                let xv = vals[*x].values();
                let ax = sym_apply(matrix, xv);
                let mut acc = S::zero();
                for (a, v) in ax.iter().zip(xv) {
                    acc += *a * *v;
                }
                Tensor::scalar(acc.scale(0.5))
            }
        };
        if out.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: id,
                op: node.op.name(),
            });
        }
        vals.push(out);
    }
    Ok(vals)
}

/// Reverse sweep from the scalar output; returns the flat parameter gradient.
pub(crate) fn backward<S: Scalar>(graph: &Graph, vals: &[Tensor<S>], batch: &Batch) -> Result<Vec<S>> {
    let nodes = graph.nodes();
    let mut grad = vec![S::zero(); graph.param_count()];
    let mut adj: Vec<Option<Tensor<S>>> = vec![None; nodes.len()];
    adj[graph.output()] = Some(Tensor::scalar(S::from_f64(1.0)));

    for id in (0..nodes.len()).rev() {
        let Some(dy) = adj[id].take() else { continue };
        match &nodes[id].op {
            Op::Input => {}
            Op::Param { offset } => {
                for (g, d) in grad[*offset..].iter_mut().zip(dy.values()) {
                    *g += *d;
                }
            }
            Op::MatMul { x, w } => {
                let (dx, dw) = matmul_back(&vals[*x], &vals[*w], &dy);
                accumulate(&mut adj, *x, dx);
                accumulate(&mut adj, *w, dw);
            }
            Op::Conv2d { x, w } => {
                let (dx, dw) = conv2d_back(&vals[*x], &vals[*w], &dy);
                accumulate(&mut adj, *x, dx);
                accumulate(&mut adj, *w, dw);
            }
            Op::MaxPool2 { x } => {
                let (_, arg) = max_pool2(&vals[*x]);
                let mut dx = Tensor::zeros(vals[*x].shape().to_vec());
                for (o, &src) in arg.iter().enumerate() {
                    dx.values_mut()[src] += dy.values()[o];
                }
                accumulate(&mut adj, *x, dx);
            }
            Op::Relu { x } => {
                // Derivative taken as 0 at the kink, second derivative 0 everywhere.
                let xv = vals[*x].values();
                let mut dx = dy;
                for (d, v) in dx.values_mut().iter_mut().zip(xv) {
                    if v.re() <= 0.0 {
                        *d = S::zero();
                    }
                }
                accumulate(&mut adj, *x, dx);
            }
            Op::Tanh { x } => {
                let yv = vals[id].values();
                let mut dx = dy;
                for (d, y) in dx.values_mut().iter_mut().zip(yv) {
                    *d = *d * (S::from_f64(1.0) - *y * *y);
                }
                accumulate(&mut adj, *x, dx);
            }
            Op::BiasAdd { x, b } => {
                let c = vals[*b].len();
                let inner = inner_size(dy.shape());
                let mut db = Tensor::zeros(vec![c]);
                for (i, d) in dy.values().iter().enumerate() {
                    db.values_mut()[(i / inner) % c] += *d;
                }
                accumulate(&mut adj, *x, dy);
                accumulate(&mut adj, *b, db);
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                var,
                eps,
            } => {
                let xv = vals[*x].values();
                let sc = vals[*scale].values();
                let c = sc.len();
                let inner = inner_size(dy.shape());
                let mut dx = Tensor::zeros(dy.shape().to_vec());
                let mut dscale = Tensor::zeros(vec![c]);
                let mut dshift = Tensor::zeros(vec![c]);
                for (i, d) in dy.values().iter().enumerate() {
                    let ch = (i / inner) % c;
                    let inv = 1.0 / (var[ch] + eps).sqrt();
                    dx.values_mut()[i] = (*d * sc[ch]).scale(inv);
                    dscale.values_mut()[ch] += (*d * (xv[i] - S::from_f64(mean[ch]))).scale(inv);
                    dshift.values_mut()[ch] += *d;
                }
                accumulate(&mut adj, *x, dx);
                accumulate(&mut adj, *scale, dscale);
                accumulate(&mut adj, *shift, dshift);
            }
            Op::Flatten { x } => {
                let shape = vals[*x].shape().to_vec();
                accumulate(&mut adj, *x, dy.reshaped(shape));
            }
            Op::SoftmaxCrossEntropy { logits } => {
                let dl = dy.values()[0];
                let dz = softmax_ce_back(&vals[*logits], targets_classes(batch)?, dl);
                accumulate(&mut adj, *logits, dz);
            }
            Op::Mse { pred } => {
                let dl = dy.values()[0];
                let p = &vals[*pred];
                let t = targets_values(batch)?.values();
                let k = 2.0 / p.len() as f64;
                let mut dp = Tensor::zeros(p.shape().to_vec());
                for ((d, pv), tv) in dp.values_mut().iter_mut().zip(p.values()).zip(t) {
                    *d = dl * (*pv - S::from_f64(*tv)).scale(k);
                }
                accumulate(&mut adj, *pred, dp);
            }
            Op::QuadraticForm { x, matrix } => {
                let dl = dy.values()[0];
                let ax = sym_apply(matrix, vals[*x].values());
                let dx = Tensor::new(vals[*x].shape().to_vec(), ax.into_iter().map(|a| dl * a).collect())?;
                accumulate(&mut adj, *x, dx);
            }
        }
    }
    Ok(grad)
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], id: usize, d: Tensor<S>) {
    match &mut adj[id] {
        Some(acc) => {
            for (a, v) in acc.values_mut().iter_mut().zip(d.values()) {
                *a += *v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Product of all axes after the channel axis (axis 1).
fn inner_size(shape: &[usize]) -> usize {
    shape[2..].iter().product()
}

fn sym_apply<S: Scalar>(matrix: &[f64], x: &[S]) -> Vec<S> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let row = &matrix[i * n..(i + 1) * n];
            let mut acc = S::zero();
            for (a, v) in row.iter().zip(x) {
                acc += v.scale(*a);
            }
            acc
        })
        .collect()
}

fn targets_classes(batch: &Batch) -> Result<&[usize]> {
    match &batch.targets {
        Targets::Classes(c) => Ok(c),
        Targets::Values(_) => Err(Error::Shape("cross-entropy loss needs class labels".into())),
    }
}

fn targets_values(batch: &Batch) -> Result<&Tensor<f64>> {
    match &batch.targets {
        Targets::Values(v) => Ok(v),
        Targets::Classes(_) => Err(Error::Shape("MSE loss needs regression targets".into())),
    }
}

fn matmul<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    let (b, k) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let (xv, wv) = (x.values(), w.values());
    let mut y = Vec::with_capacity(b * o);
    for r in 0..b {
        let xr = &xv[r * k..(r + 1) * k];
        for c in 0..o {
            let wr = &wv[c * k..(c + 1) * k];
            let mut acc = S::zero();
            for i in 0..k {
                acc += xr[i] * wr[i];
            }
            y.push(acc);
        }
    }
    Tensor::new(vec![b, o], y).expect("matmul shape")
}

fn matmul_back<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let (b, k) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let (xv, wv, dv) = (x.values(), w.values(), dy.values());
    let mut dx = Tensor::zeros(vec![b, k]);
    let mut dw = Tensor::zeros(vec![o, k]);
    {
        let dxv = dx.values_mut();
        for r in 0..b {
            for c in 0..o {
                let g = dv[r * o + c];
                let wr = &wv[c * k..(c + 1) * k];
                for i in 0..k {
                    dxv[r * k + i] += g * wr[i];
                }
            }
        }
    }
    {
        let dwv = dw.values_mut();
        for r in 0..b {
            let xr = &xv[r * k..(r + 1) * k];
            for c in 0..o {
                let g = dv[r * o + c];
                for i in 0..k {
                    dwv[c * k + i] += g * xr[i];
                }
            }
        }
    }
    (dx, dw)
}

fn conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    let [b, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let (xv, wv) = (x.values(), w.values());
    let mut y = vec![S::zero(); b * o * oh * ow];
    for n in 0..b {
        for f in 0..o {
            let out = &mut y[(n * o + f) * oh * ow..(n * o + f + 1) * oh * ow];
            for ch in 0..c {
                let xin = &xv[(n * c + ch) * h * wd..(n * c + ch + 1) * h * wd];
                let ker = &wv[(f * c + ch) * kh * kw..(f * c + ch + 1) * kh * kw];
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = S::zero();
                        for p in 0..kh {
                            let row = &xin[(i + p) * wd + j..(i + p) * wd + j + kw];
                            let krow = &ker[p * kw..(p + 1) * kw];
                            for q in 0..kw {
                                acc += row[q] * krow[q];
                            }
                        }
                        out[i * ow + j] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, o, oh, ow], y).expect("conv shape")
}

fn conv2d_back<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let [b, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let (xv, wv, dv) = (x.values(), w.values(), dy.values());
    let mut dx = vec![S::zero(); xv.len()];
    let mut dw = vec![S::zero(); wv.len()];
    for n in 0..b {
        for f in 0..o {
            let g = &dv[(n * o + f) * oh * ow..(n * o + f + 1) * oh * ow];
            for ch in 0..c {
                let xbase = (n * c + ch) * h * wd;
                let kbase = (f * c + ch) * kh * kw;
                for i in 0..oh {
                    for j in 0..ow {
                        let gij = g[i * ow + j];
                        for p in 0..kh {
                            for q in 0..kw {
                                let xi = xbase + (i + p) * wd + j + q;
                                let ki = kbase + p * kw + q;
                                dx[xi] += gij * wv[ki];
                                dw[ki] += gij * xv[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("conv dx"),
        Tensor::new(w.shape().to_vec(), dw).expect("conv dw"),
    )
}

/// 2×2 max pooling (floor on odd sizes); also returns the flat source index
/// of each output, chosen on primal values with the first maximum winning.
fn max_pool2<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<usize>) {
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (oh, ow) = (h / 2, w / 2);
    let xv = x.values();
    let mut y = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if xv[idx].re() > xv[best].re() {
                        best = idx;
                    }
                }
                y.push(xv[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::new(vec![b, c, oh, ow], y).expect("pool shape"), arg)
}

fn bias_add<S: Scalar>(x: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let c = b.len();
    let inner = inner_size(x.shape());
    let bv = b.values();
    let mut y = x.clone();
    for (i, v) in y.values_mut().iter_mut().enumerate() {
        *v += bv[(i / inner) % c];
    }
    y
}

fn batch_norm<S: Scalar>(
    x: &Tensor<S>,
    scale: &Tensor<S>,
    shift: &Tensor<S>,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Tensor<S> {
    let c = scale.len();
    let inner = inner_size(x.shape());
    let (sc, sh) = (scale.values(), shift.values());
    let mut y = x.clone();
    for (i, v) in y.values_mut().iter_mut().enumerate() {
        let ch = (i / inner) % c;
        let inv = 1.0 / (var[ch] + eps).sqrt();
        *v = (*v - S::from_f64(mean[ch])).scale(inv) * sc[ch] + sh[ch];
    }
    y
}

fn log_softmax_row<S: Scalar>(row: &[S]) -> (S, Vec<S>) {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.re()));
    let shift = S::from_f64(m);
    let exps: Vec<S> = row.iter().map(|&z| (z - shift).exp()).collect();
    let mut sum = S::zero();
    for e in &exps {
        sum += *e;
    }
    (shift + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

fn softmax_ce<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<S> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut total = S::zero();
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Shape(format!("label {y} out of range for {c} classes")));
        }
        let row = &logits.values()[r * c..(r + 1) * c];
        let (lse, _) = log_softmax_row(row);
        total += lse - row[y];
    }
    Ok(total.scale(1.0 / b as f64))
}

fn softmax_ce_back<S: Scalar>(logits: &Tensor<S>, labels: &[usize], dl: S) -> Tensor<S> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let inv_b = 1.0 / b as f64;
    let mut dz = Vec::with_capacity(b * c);
    for (r, &y) in labels.iter().enumerate() {
        let (_, p) = log_softmax_row(&logits.values()[r * c..(r + 1) * c]);
        for (j, pj) in p.into_iter().enumerate() {
            let g = if j == y { pj - S::from_f64(1.0) } else { pj };
            dz.push((dl * g).scale(inv_b));
        }
    }
    Tensor::new(vec![b, c], dz).expect("logit grad shape")
}

fn mse<S: Scalar>(pred: &Tensor<S>, target: &Tensor<f64>) -> Result<S> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut acc = S::zero();
    for (p, t) in pred.values().iter().zip(target.values()) {
        let d = *p - S::from_f64(*t);
        acc += d * d;
    }
    Ok(acc.scale(1.0 / pred.len() as f64))
}
