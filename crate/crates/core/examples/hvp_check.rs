//! Hessian-vector products against finite differences of the gradient.

use losslens::autodiff::{self, Batch, Direction, Targets};
use losslens::modelzoo::{build_mlp, init_params, Activation};
use losslens::tensor::Tensor;
use losslens::{linalg::norm, seed};
use rand_distr::{Distribution, StandardNormal};

fn main() -> losslens::Result<()> {
    let graph = build_mlp(&[4, 8, 3], Activation::Tanh)?;
    let params = init_params(graph.layout(), 1);
    let mut rng = seed::rng(2);
    let x: Vec<f64> = (0..16 * 4).map(|_| StandardNormal.sample(&mut rng)).collect();
    let batch = Batch::new(
        Tensor::new(vec![16, 4], x)?,
        Targets::Classes((0..16).map(|i| i % 3).collect()),
    )?;
    let v: Vec<f64> = (0..graph.param_count())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let v = Direction::new(graph.layout().clone(), v)?;

    let hv = autodiff::hvp(&graph, &params, &batch, &v)?;
    println!("{} parameters, ‖Hv‖ = {:.6}", graph.param_count(), norm(hv.values()));
    for h in [1e-2, 1e-4, 1e-6] {
        let plus = autodiff::gradient(&graph, &params.displaced(&[(h, &v)])?, &batch)?;
        let minus = autodiff::gradient(&graph, &params.displaced(&[(-h, &v)])?, &batch)?;
        let diff: Vec<f64> = hv
            .values()
            .iter()
            .zip(plus.values().iter().zip(minus.values()))
            .map(|(e, (p, m))| e - (p - m) / (2.0 * h))
            .collect();
        println!("h = {h:.0e}: relative error {:.2e}", norm(&diff) / norm(hv.values()));
    }
    Ok(())
}
