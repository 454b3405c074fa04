//! Strong-scaling measurement and Amdahl fit, first on an artificial
//! workload with a known serial part, then on the landscape grid.

use std::time::Duration;

use losslens::bench::{amdahl_fit, measure, speedup_with_error, BenchTask, ModelWorkload};
use losslens::cli::{ModelContext, RunConfig};
use losslens::modelzoo::train_sgd;
use losslens::parallel::map_indexed;
use losslens::spectral::SlqConfig;

fn report(name: &str, run: &losslens::bench::ScalingRun) -> losslens::Result<()> {
    let pts = speedup_with_error(run)?;
    for q in &pts {
        println!("{name:>8}  p = {}  S = {:.2} ± {:.2}", q.p, q.s, q.sigma);
    }
    let fit = amdahl_fit(&pts)?;
    println!("{name:>8}  parallel fraction {:.3} ± {:.3}", fit.f, fit.f_std);
    Ok(())
}

fn main() -> losslens::Result<()> {
    let counts = [1, 2, 4];
    // 40 ms serial plus 8 × 40 ms of independent waits: f = 8/9
    let run = measure(BenchTask::Custom, &counts, 3, |p| {
        std::thread::sleep(Duration::from_millis(40));
        map_indexed(8, p, |_| std::thread::sleep(Duration::from_millis(40)));
        Ok(())
    })?;
    report("sleeps", &run)?;

    let cfg = RunConfig {
        fraction: 0.1,
        ..RunConfig::default()
    };
    let ctx = ModelContext::resolve(&cfg, None)?;
    let traj = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer)?;
    let w = ModelWorkload::new(
        ctx.graph.clone(),
        traj.last().expect("snapshots").params.clone(),
        ctx.analysis_batches(&cfg)?,
        12,
        SlqConfig::default(),
    )?;
    let run = measure(BenchTask::Grid, &counts, 2, |p| w.run(BenchTask::Grid, p).map(drop))?;
    report("grid", &run)?;
    println!(
        "{} hardware threads available",
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    Ok(())
}
