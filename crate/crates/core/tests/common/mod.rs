#![allow(dead_code)]

use losslens::autodiff::{gradient, Batch, FlatParams, Graph, Targets};
use losslens::modelzoo::{init_params, make_synthetic, Dataset};
use losslens::seed;
use losslens::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_vec(n: usize, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn uniform_vec(n: usize, s: u64, a: f64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

/// Random symmetric matrix, row-major.
pub fn random_symmetric(n: usize, s: u64) -> Vec<f64> {
    let g = gaussian_vec(n * n, s);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (g[i * n + j] + g[j * n + i]);
        }
    }
    a
}

pub fn class_batch(dim: usize, labels: &[usize], s: u64) -> Batch {
    let x = gaussian_vec(labels.len() * dim, s);
    Batch::new(
        Tensor::new(vec![labels.len(), dim], x).unwrap(),
        Targets::Classes(labels.to_vec()),
    )
    .unwrap()
}

/// First `n` samples of a seeded synthetic set, shaped for `graph`.
pub fn synthetic_batch(graph: &Graph, classes: usize, n: usize, s: u64) -> Batch {
    let shape = graph.input_shape().to_vec();
    let dim: usize = shape.iter().product();
    let ds: Dataset = make_synthetic(classes, dim, n, s)
        .unwrap()
        .with_sample_shape(&shape)
        .unwrap();
    ds.batch(&(0..n).collect::<Vec<_>>()).unwrap()
}

/// Init with small random biases so no unit sits exactly on a kink.
pub fn generic_params(graph: &Graph, s: u64) -> FlatParams {
    let mut p = init_params(graph.layout(), s);
    let noise = uniform_vec(p.len(), s ^ 0x5eed, 0.1);
    for (v, e) in p.values_mut().iter_mut().zip(noise) {
        *v += e;
    }
    p
}

/// Central finite differences of the gradient, column by column.
pub fn fd_hessian(graph: &Graph, params: &FlatParams, batch: &Batch, h: f64) -> Vec<f64> {
    let n = params.len();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        let mut plus = params.clone();
        plus.values_mut()[j] += h;
        let mut minus = params.clone();
        minus.values_mut()[j] -= h;
        let gp = gradient(graph, &plus, batch).unwrap();
        let gm = gradient(graph, &minus, batch).unwrap();
        for i in 0..n {
            out[i * n + j] = (gp.values()[i] - gm.values()[i]) / (2.0 * h);
        }
    }
    out
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    frobenius(&d) / frobenius(b)
}
