//! Loss and curvature along the segment between two independently trained
//! minima.

use losslens::cli::{ModelContext, RunConfig};
use losslens::landscape::{interpolate_minima, ModelLoss};
use losslens::modelzoo::train_sgd;
use losslens::spectral::{slq_spectrum, HessianOperator, SlqConfig};

fn main() -> losslens::Result<()> {
    let cfg = RunConfig {
        fraction: 0.1,
        ..RunConfig::default()
    };
    let ctx = ModelContext::resolve(&cfg, None)?;
    let ends: Vec<_> = [1, 2]
        .into_iter()
        .map(|s| {
            let mut opt = cfg.optimizer.clone();
            opt.seed = s;
            let traj = train_sgd(&ctx.graph, &ctx.data, &opt)?;
            Ok(traj.last().expect("snapshots").params.clone())
        })
        .collect::<losslens::Result<_>>()?;

    let batches = ctx.analysis_batches(&cfg)?;
    let loss = ModelLoss::new(&ctx.graph, batches.clone())?;
    let slq = SlqConfig {
        probes: 4,
        steps: 30,
        ..SlqConfig::default()
    };
    let spectrum = |theta: &_| slq_spectrum(&HessianOperator::new(&ctx.graph, theta, &batches, 1)?, &slq);
    let res = interpolate_minima(&loss, &ends[0], &ends[1], 11, Some(&spectrum))?;

    println!("{:>6} {:>8} {:>10}", "λ", "loss", "top Ritz");
    for p in &res.points {
        let top = p
            .spectrum
            .iter()
            .flat_map(|s| s.probes.iter().flat_map(|q| q.nodes.iter().copied()))
            .fold(f64::NEG_INFINITY, f64::max);
        println!("{:6.2} {:8.4} {:10.4}", p.lambda, p.loss, top);
    }
    Ok(())
}
