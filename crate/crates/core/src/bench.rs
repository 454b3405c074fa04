//! Strong-scaling measurements: wall-clock times over worker counts, speedup
//! with propagated uncertainty and an Amdahl's-law fit.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Batch, FlatParams, Graph};
use crate::directions::{random_direction, DirectionPair, Provenance};
use crate::landscape::{evaluate_grid, GridSpec, ModelLoss};
use crate::modelzoo::{OptimizerConfig, Snapshot, Trajectory};
use crate::spectral::{iteration_parallel_slq, slq_spectrum, HessianOperator, SlqConfig};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchTask {
    Grid,
    SlqIteration,
    SlqData,
    /// Anything supplied by the caller.
    Custom,
}

impl std::str::FromStr for BenchTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "slq-iteration" => Ok(Self::SlqIteration),
            "slq-data" => Ok(Self::SlqData),
            other => Err(Error::Config(format!("unknown bench task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRun {
    pub task: BenchTask,
    pub worker_counts: Vec<usize>,
    pub repeats: usize,
    /// Seconds, one row per worker count.
    pub times: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalingRun {
    fn push(&mut self, p: usize, row: Vec<f64>) {
        let (mean, std) = mean_std(&row);
        self.worker_counts.push(p);
        self.times.push(row);
        self.means.push(mean);
        self.stds.push(std);
    }
}

/// Mean and sample standard deviation (`n − 1` denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times `run(p)` `repeats` times for every `p` in `worker_counts`, after one
/// untimed warm-up call per count.
///
/// A failing call aborts the measurement; the error carries every row
/// completed so far.
pub fn measure<F>(task: BenchTask, worker_counts: &[usize], repeats: usize, mut run: F) -> Result<ScalingRun>
where
    F: FnMut(usize) -> Result<()>,
{
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(Error::Config("worker counts must be non-empty and ≥ 1".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be ≥ 1".into()));
    }
    let mut out = ScalingRun {
        task,
        worker_counts: Vec::new(),
        repeats,
        times: Vec::new(),
        means: Vec::new(),
        stds: Vec::new(),
    };
    for &p in worker_counts {
        let mut row = Vec::with_capacity(repeats);
        let mut timed = |first: bool| -> Result<()> {
            let t = Instant::now();
            run(p)?;
            if !first {
                row.push(t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
            }
            Ok(())
        };
        let res = (0..=repeats).try_for_each(|r| timed(r == 0));
        if let Err(e) = res {
            return Err(Error::BenchAborted {
                workers: p,
                message: e.to_string(),
                partial: Box::new(out),
            });
        }
        log::info!("{} workers: {:?}", p, row);
        out.push(p, row);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupPoint {
    pub p: usize,
    pub s: f64,
    pub sigma: f64,
}

/// `S = T₁/T_p` and
/// `σ_S = √((σ₁/T_p)² + (T₁·σ_p/T_p²)²)`.
pub fn speedup_point(t1: f64, sigma1: f64, tp: f64, sigma_p: f64) -> (f64, f64) {
    let s = t1 / tp;
    let sigma = ((sigma1 / tp).powi(2) + (t1 * sigma_p / (tp * tp)).powi(2)).sqrt();
    (s, sigma)
}

/// Speedup of every measured count relative to the single-worker row.
///
/// Time uncertainties are standard errors of the mean, so `σ_S` shrinks as
/// repeats grow.
pub fn speedup_with_error(run: &ScalingRun) -> Result<Vec<SpeedupPoint>> {
    if run.repeats < 2 {
        return Err(Error::Config("speedup errors need repeats ≥ 2".into()));
    }
    let base = run
        .worker_counts
        .iter()
        .position(|&p| p == 1)
        .ok_or_else(|| Error::Config("scaling run has no single-worker row".into()))?;
    let sem = |k: usize| run.stds[k] / (run.times[k].len() as f64).sqrt();
    Ok(run
        .worker_counts
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let (s, sigma) = speedup_point(run.means[base], sem(base), run.means[k], sem(k));
            SpeedupPoint { p, s, sigma }
        })
        .collect())
}

/// `S = 1/((1−f) + f/p)`.
pub fn amdahl_speedup(f: f64, p: f64) -> f64 {
    1.0 / ((1.0 - f) + f / p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmdahlFit {
    pub f: f64,
    pub f_std: f64,
    /// Objective value at the optimum (χ², or the plain sum of squares when
    /// the fit fell back to unweighted).
    pub residual: f64,
    pub weighted: bool,
}

/// Fits the parallel fraction `f ∈ [0, 1]` by golden-section search on
/// `Σ((S(p; f) − Sₒ)/σ)²`.
///
/// Any zero or non-finite `σ` switches to an unweighted fit. `f_std` comes
/// from the Gauss-Newton curvature of the objective at the optimum.
pub fn amdahl_fit(points: &[SpeedupPoint]) -> Result<AmdahlFit> {
    let mut ps: Vec<usize> = points.iter().map(|q| q.p).collect();
    ps.sort_unstable();
    ps.dedup();
    if ps.len() < 2 {
        return Err(Error::Config(
            "Amdahl fit needs at least two distinct worker counts".into(),
        ));
    }
    let weighted = points.iter().all(|q| q.sigma > 0.0 && q.sigma.is_finite());
    let w = |q: &SpeedupPoint| if weighted { q.sigma.powi(-2) } else { 1.0 };
    let objective = |f: f64| -> f64 {
        points
            .iter()
            .map(|q| w(q) * (amdahl_speedup(f, q.p as f64) - q.s).powi(2))
            .sum()
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let mut f = 0.5 * (a + b);
    for edge in [0.0, 1.0] {
        if objective(edge) <= objective(f) {
            f = edge;
        }
    }
    let residual = objective(f);

    let info: f64 = points
        .iter()
        .map(|q| {
            let s = amdahl_speedup(f, q.p as f64);
            let j = s * s * (1.0 - 1.0 / q.p as f64);
            w(q) * j * j
        })
        .sum();
    let scale = if weighted {
        1.0
    } else {
        residual / (points.len().saturating_sub(1).max(1)) as f64
    };
    let f_std = if info > 0.0 {
        (scale / info).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(AmdahlFit {
        f,
        f_std,
        residual,
        weighted,
    })
}

/// A fixed model problem for the three benchmark tasks: the loss grid
/// around `params` on a filter-normalized random plane, and SLQ on the
/// Hessian over `batches` with probes or batches split across workers.
pub struct ModelWorkload {
    pub graph: Graph,
    pub batches: Vec<Batch>,
    pub dirs: DirectionPair,
    pub traj: Trajectory,
    pub grid_n: usize,
    pub slq: SlqConfig,
}

impl ModelWorkload {
    pub fn new(graph: Graph, params: FlatParams, batches: Vec<Batch>, grid_n: usize, slq: SlqConfig) -> Result<Self> {
        params.ensure_layout(graph.layout())?;
        let layout = graph.layout();
        let dirs = DirectionPair::new(
            random_direction(layout, seed::derive(slq.seed, "plane", 0)),
            random_direction(layout, seed::derive(slq.seed, "plane", 1)),
            Provenance::Random,
        )?
        .normalize(&params)?;
        let traj = Trajectory {
            snapshots: vec![Snapshot {
                iteration: 0,
                params,
                loss: f64::NAN,
                epoch: 0,
                batch_index: 0,
            }],
            model: None,
            optimizer: OptimizerConfig::default(),
            data: None,
        };
        Ok(Self {
            graph,
            batches,
            dirs,
            traj,
            grid_n,
            slq,
        })
    }

    pub fn params(&self) -> &FlatParams {
        &self.traj.snapshots[0].params
    }

    /// Runs `task` once on `workers` workers and returns its result as JSON.
    pub fn run(&self, task: BenchTask, workers: usize) -> Result<String> {
        let params = self.params();
        let json = match task {
            BenchTask::Grid => {
                let loss = ModelLoss::new(&self.graph, self.batches.clone())?;
                let spec = GridSpec {
                    n: self.grid_n,
                    border: 0.4,
                    workers,
                };
                serde_json::to_string(&evaluate_grid(&loss, &self.traj, &self.dirs, &spec)?.z)?
            }
            BenchTask::SlqIteration => {
                let op = HessianOperator::new(&self.graph, params, &self.batches, 1)?;
                serde_json::to_string(&iteration_parallel_slq(&op, &self.slq, workers)?)?
            }
            BenchTask::SlqData => {
                let op = HessianOperator::new(&self.graph, params, &self.batches, workers)?;
                serde_json::to_string(&slq_spectrum(&op, &self.slq)?)?
            }
            BenchTask::Custom => return Err(Error::Config("custom tasks have no model workload".into())),
        };
        Ok(json)
    }
}

/// `p,S,sigma_S` rows.
pub fn speedup_csv(points: &[SpeedupPoint]) -> String {
    let mut out = String::from("p,S,sigma_S\n");
    for q in points {
        let _ = writeln!(out, "{},{},{}", q.p, q.s, q.sigma);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(f: f64, ps: &[usize]) -> Vec<SpeedupPoint> {
        ps.iter()
            .map(|&p| SpeedupPoint {
                p,
                s: amdahl_speedup(f, p as f64),
                sigma: 0.01,
            })
            .collect()
    }

    #[test]
    fn first_order_error_propagation() {
        let (s, sigma) = speedup_point(10.0, 0.1, 2.5, 0.05);
        assert_eq!(s, 4.0);
        let want = ((0.1f64 / 2.5).powi(2) + (10.0 * 0.05 / 6.25f64).powi(2)).sqrt();
        assert!((sigma - want).abs() < 1e-15);
        assert!((sigma - 0.0894).abs() < 1e-4);
        let (s, sigma) = speedup_point(3.0, 0.2, 3.0, 0.2);
        assert_eq!(s, 1.0);
        assert!((sigma - 2f64.sqrt() * 0.2 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fit_extremes() {
        assert_eq!(amdahl_fit(&ideal(1.0, &[1, 2, 4, 8])).unwrap().f, 1.0);
        assert_eq!(amdahl_fit(&ideal(0.0, &[1, 2, 4, 8])).unwrap().f, 0.0);
    }

    #[test]
    fn noiseless_round_trip() {
        for f in [0.0, 0.25, 0.37, 0.5, 0.9, 0.955, 1.0] {
            let fit = amdahl_fit(&ideal(f, &[1, 2, 4, 8])).unwrap();
            assert!((fit.f - f).abs() < 1e-6, "{f}: {}", fit.f);
        }
    }

    #[test]
    fn zero_sigma_falls_back_to_unweighted() {
        let mut pts = ideal(0.5, &[1, 2, 4]);
        pts[0].sigma = 0.0;
        let fit = amdahl_fit(&pts).unwrap();
        assert!(!fit.weighted);
        assert!((fit.f - 0.5).abs() < 1e-6);
    }

    #[test]
    fn single_count_rejected() {
        assert!(amdahl_fit(&ideal(0.5, &[4, 4])).is_err());
    }

    #[test]
    fn measure_collects_rows_and_partial_data() {
        let run = measure(BenchTask::Custom, &[1, 2], 3, |_| Ok(())).unwrap();
        assert_eq!(run.times.len(), 2);
        assert!(run.times.iter().all(|r| r.len() == 3 && r.iter().all(|&t| t > 0.0)));
        let pts = speedup_with_error(&run).unwrap();
        assert_eq!(pts[0].s, 1.0);

        let err = measure(BenchTask::Custom, &[1, 2], 2, |p| {
            if p == 2 {
                Err(Error::Config("boom".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        match err {
            Error::BenchAborted { workers, partial, .. } => {
                assert_eq!(workers, 2);
                assert_eq!(partial.worker_counts, vec![1]);
            }
            other => panic!("{other:?}"),
        }
    }
}
