//! Top Hessian eigenvectors of a trained model by Lanczos, with residuals.

use losslens::cli::{ModelContext, RunConfig};
use losslens::directions::eigen_directions;
use losslens::modelzoo::train_sgd;
use losslens::spectral::HessianOperator;

fn main() -> losslens::Result<()> {
    let cfg = RunConfig {
        fraction: 0.1,
        ..RunConfig::default()
    };
    let ctx = ModelContext::resolve(&cfg, None)?;
    let traj = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer)?;
    let theta = &traj.last().expect("snapshots").params;
    let batches = ctx.analysis_batches(&cfg)?;
    let op = HessianOperator::new(&ctx.graph, theta, &batches, 1)?;
    println!(
        "Hessian of {} parameters over {} samples",
        ctx.graph.param_count(),
        op.samples()
    );

    let mut pending = false;
    for m in [20, 40, 80] {
        let pairs = eigen_directions(&op, ctx.graph.layout(), 3, m, 0)?;
        let row: Vec<String> = pairs
            .iter()
            .map(|p| {
                format!(
                    "{:9.4} (res {:.1e}{})",
                    p.eigenvalue,
                    p.residual,
                    if p.converged { "" } else { "*" }
                )
            })
            .collect();
        println!("m = {m:>2}: {}", row.join("  "));
        pending |= pairs.iter().any(|p| !p.converged);
    }
    if pending {
        println!("* not yet converged");
    }
    Ok(())
}
