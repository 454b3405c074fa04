//! Probe-parallel and data-parallel SLQ give the same answer for any
//! number of workers.

use std::time::Instant;

use losslens::cli::{ModelContext, RunConfig};
use losslens::directions::random_direction;
use losslens::modelzoo::train_sgd;
use losslens::spectral::{data_parallel_hvp, iteration_parallel_slq, HessianOperator, SlqConfig};

fn main() -> losslens::Result<()> {
    let cfg = RunConfig {
        fraction: 0.1,
        ..RunConfig::default()
    };
    let ctx = ModelContext::resolve(&cfg, None)?;
    let traj = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer)?;
    let theta = &traj.last().expect("snapshots").params;
    let batches = ctx.analysis_batches(&cfg)?;
    let slq = SlqConfig {
        probes: 8,
        steps: 40,
        ..SlqConfig::default()
    };
    println!(
        "{} hardware threads",
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );

    let mut reference = None;
    for workers in [1, 2, 4] {
        // probes split across workers
        let op = HessianOperator::new(&ctx.graph, theta, &batches, 1)?;
        let t = Instant::now();
        let a = iteration_parallel_slq(&op, &slq, workers)?;
        let ta = t.elapsed().as_secs_f64();
        // batches split across workers inside every Hessian-vector product
        let op = HessianOperator::new(&ctx.graph, theta, &batches, workers)?;
        let t = Instant::now();
        let b = iteration_parallel_slq(&op, &slq, 1)?;
        let tb = t.elapsed().as_secs_f64();
        let json = serde_json::to_string(&a)?;
        let same = *reference.get_or_insert_with(|| json.clone()) == json && a == b;
        println!("workers {workers}: probe-parallel {ta:.2}s, data-parallel {tb:.2}s, identical to 1 worker: {same}");
    }

    let v = random_direction(ctx.graph.layout(), 7);
    let one = data_parallel_hvp(&ctx.graph, theta, &batches, &v, 1)?;
    let three = data_parallel_hvp(&ctx.graph, theta, &batches, &v, 3)?;
    println!("single Hv with 1 and 3 workers bit-identical: {}", one == three);
    Ok(())
}
