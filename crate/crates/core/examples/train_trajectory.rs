//! Trains the default model and writes its checkpoint trajectory.
//!
//! `cargo run --release --example train_trajectory [out_dir]`

use losslens::cli::{ModelContext, RunConfig};
use losslens::modelzoo::{io, train_sgd};

fn main() -> losslens::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("losslens-trajectory"), Into::into);
    let cfg = RunConfig::default();
    let ctx = ModelContext::resolve(&cfg, None)?;
    println!(
        "{} parameters, {} samples, batch {}, lr {}",
        ctx.graph.param_count(),
        ctx.data.len(),
        cfg.optimizer.batch_size,
        cfg.optimizer.learning_rate
    );
    let traj = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer)?;
    for s in traj.snapshots.iter().step_by(10) {
        println!("iter {:>4}  batch loss {:.4}", s.iteration, s.loss);
    }
    io::save_trajectory(&out, &traj, serde_json::json!({ "example": "train_trajectory" }))?;
    println!("{} snapshots written to {}", traj.len(), out.display());
    Ok(())
}
