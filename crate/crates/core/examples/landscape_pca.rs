//! Loss surface on the PCA plane of a training trajectory, drawn as text.

use losslens::cli::{ModelContext, RunConfig};
use losslens::directions::{pca_directions, PcaOptions};
use losslens::landscape::{evaluate_grid, GridSpec, ModelLoss};
use losslens::modelzoo::train_sgd;

const SHADES: &[u8] = b" .:-=+*#%@";

fn main() -> losslens::Result<()> {
    let cfg = RunConfig::default();
    let ctx = ModelContext::resolve(&cfg, None)?;
    let traj = train_sgd(&ctx.graph, &ctx.data, &cfg.optimizer)?;
    let center = &traj.last().expect("snapshots").params;

    let dirs = pca_directions(&traj, PcaOptions::default())?.normalize(center)?;
    let loss = ModelLoss::new(&ctx.graph, ctx.analysis_batches(&cfg)?)?;
    let grid = evaluate_grid(
        &loss,
        &traj,
        &dirs,
        &GridSpec {
            n: 24,
            ..GridSpec::default()
        },
    )?;

    let (lo, hi) = grid
        .z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &z| (a.min(z), b.max(z)));
    let mut canvas: Vec<Vec<u8>> = (0..grid.n)
        .map(|j| {
            (0..grid.n)
                .map(|i| {
                    let t = (grid.z_at(i, j) - lo) / (hi - lo);
                    SHADES[((t * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1)]
                })
                .collect()
        })
        .collect();
    let cell = |v: f64, r: [f64; 2]| ((v - r[0]) / (r[1] - r[0]) * (grid.n - 1) as f64).round() as usize;
    for p in &grid.path {
        let (i, j) = (cell(p.alpha, grid.x_range), cell(p.beta, grid.y_range));
        if i < grid.n && j < grid.n {
            canvas[j][i] = b'o';
        }
    }
    for row in canvas.iter().rev() {
        println!("{}", String::from_utf8_lossy(row));
    }
    println!("loss {lo:.3} (blank) to {hi:.3} (@); o marks the projected trajectory");
    let worst = grid.path.iter().map(|p| p.residual).fold(0.0, f64::max);
    println!("largest projection residual {worst:.3}");
    Ok(())
}
