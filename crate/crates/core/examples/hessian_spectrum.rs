//! Spectral density of a trained model's Hessian by stochastic Lanczos
//! quadrature, printed as a log-scale histogram.

use losslens::cli::{ModelContext, RunConfig};
use losslens::modelzoo::train_sgd;
use losslens::spectral::{slq_spectrum, trapezoid, HessianOperator, SlqConfig};

fn main() -> losslens::Result<()> {
    let cfg = RunConfig {
        fraction: 0.1,
        ..RunConfig::default()
    };
    let ctx = ModelContext::resolve(&cfg, None)?;
    let traj = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer)?;
    let batches = ctx.analysis_batches(&cfg)?;
    let op = HessianOperator::new(&ctx.graph, &traj.last().expect("snapshots").params, &batches, 1)?;

    let est = slq_spectrum(&op, &SlqConfig::default())?;
    let nodes = est.probes.iter().flat_map(|p| p.nodes.iter().copied());
    let (lo, hi) = nodes.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    println!(
        "Ritz values in [{lo:.4}, {hi:.4}], σ = {:.2e}, mass {:.4}",
        est.sigma,
        trapezoid(&est.grid, &est.density)
    );

    let bins = 24;
    let per = est.grid.len() / bins;
    for b in 0..bins {
        let r = b * per..((b + 1) * per).min(est.grid.len());
        let peak = est.density[r.clone()].iter().copied().fold(0.0, f64::max);
        let bar = ((peak.max(1e-8).log10() + 8.0) * 4.0).max(0.0) as usize;
        println!("{:9.3} {:>9.2e} {}", est.grid[r.start], peak, "#".repeat(bar));
    }
    Ok(())
}
