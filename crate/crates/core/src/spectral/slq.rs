use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{lanczos, SymOperator};
use crate::linalg::norm;
use crate::parallel::map_indexed;
use crate::{seed, Error, Result};

/// Padding of the support beyond the extreme nodes, in kernel widths.
pub const SUPPORT_PAD_SIGMAS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    /// `0.01·(max node − min node)` over all probes, floored at `1e-6`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlqConfig {
    /// Number of random probes `k`.
    pub probes: usize,
    /// Lanczos steps per probe `m`.
    pub steps: usize,
    pub sigma: Sigma,
    pub grid_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub probe_kind: ProbeKind,
}

impl Default for SlqConfig {
    fn default() -> Self {
        Self {
            probes: 10,
            steps: 80,
            sigma: Sigma::Auto,
            grid_points: 1000,
            seed: 0,
            probe_kind: ProbeKind::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub seed: u64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub probes: Vec<ProbeResult>,
    pub sigma: f64,
    pub support: [f64; 2],
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<ProbeFailure>,
}

/// Gaussian kernel `exp(−(t−λ)²/2σ²) / (σ√2π)`.
#[inline]
pub fn gaussian_kernel(lambda: f64, t: f64, sigma: f64) -> f64 {
    let z = (t - lambda) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Smoothed density at `t`: probe-average of `Σ ωᵢ f(lᵢ, t, σ²)`.
pub fn density_eval(est: &SpectrumEstimate, t: f64) -> f64 {
    smoothed_density(&est.probes, est.sigma, t)
}

fn smoothed_density(probes: &[ProbeResult], sigma: f64, t: f64) -> f64 {
    if probes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for p in probes {
        let mut inner = 0.0;
        for (l, w) in p.nodes.iter().zip(&p.weights) {
            inner += w * gaussian_kernel(*l, t, sigma);
        }
        total += inner;
    }
    total / probes.len() as f64
}

/// Seed of probe `index`: `hash(seed, "probe", index)`.
pub fn probe_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, "probe", index as u64)
}

/// Unit-norm random start vector.
pub fn probe_vector(kind: ProbeKind, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let v: Vec<f64> = match kind {
        ProbeKind::Gaussian => (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
        ProbeKind::Rademacher => (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    };
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// One probe: Lanczos from a seeded start vector, then the quadrature rule of `T`.
pub fn run_probe(op: &dyn SymOperator, steps: usize, kind: ProbeKind, seed: u64) -> Result<ProbeResult> {
    let v0 = probe_vector(kind, op.dim(), seed);
    let run = lanczos(op, &v0, steps)?;
    let (nodes, weights) = run.tridiagonal.quadrature()?;
    Ok(ProbeResult { seed, nodes, weights })
}

/// Sequential stochastic Lanczos quadrature.
pub fn slq_spectrum(op: &dyn SymOperator, cfg: &SlqConfig) -> Result<SpectrumEstimate> {
    iteration_parallel_slq(op, cfg, 1)
}

/// Probe-parallel stochastic Lanczos quadrature.
///
/// The `k` probes are split into contiguous, balanced blocks, one per worker.
/// Probe `i` always uses seed `hash(seed, "probe", i)` and results are gathered
/// in probe order, so the estimate does not depend on `workers`. Failed probes
/// are recorded and excluded from the average.
pub fn iteration_parallel_slq(op: &dyn SymOperator, cfg: &SlqConfig, workers: usize) -> Result<SpectrumEstimate> {
    if cfg.probes == 0 || cfg.steps == 0 {
        return Err(Error::Config("SLQ needs k ≥ 1 and m ≥ 1".into()));
    }
    if cfg.grid_points < 2 {
        return Err(Error::Config("SLQ density grid needs at least 2 points".into()));
    }
    let results = map_indexed(cfg.probes, workers, |i| {
        let s = probe_seed(cfg.seed, i);
        (s, run_probe(op, cfg.steps, cfg.probe_kind, s))
    });
    let mut probes = Vec::with_capacity(cfg.probes);
    let mut failures = Vec::new();
    for (index, (seed, r)) in results.into_iter().enumerate() {
        match r {
            Ok(p) => probes.push(p),
            Err(e) => {
                log::warn!("SLQ probe {index} failed: {e}");
                failures.push(ProbeFailure {
                    index,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if probes.is_empty() {
        return Err(Error::AllProbesFailed(cfg.probes));
    }
    Ok(assemble(probes, failures, cfg.sigma, cfg.grid_points))
}

/// Builds the density on a uniform grid over `[min l − 4σ, max l + 4σ]`.
pub fn assemble(
    probes: Vec<ProbeResult>,
    failures: Vec<ProbeFailure>,
    sigma: Sigma,
    grid_points: usize,
) -> SpectrumEstimate {
    let (lo, hi) = probes
        .iter()
        .flat_map(|p| p.nodes.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &l| (a.min(l), b.max(l)));
    let sigma = match sigma {
        Sigma::Auto => (0.01 * (hi - lo)).max(1e-6),
        Sigma::Fixed(s) => s,
    };
    let a = lo - SUPPORT_PAD_SIGMAS * sigma;
    let b = hi + SUPPORT_PAD_SIGMAS * sigma;
    let grid = uniform_grid(a, b, grid_points);
    let density = grid.iter().map(|&t| smoothed_density(&probes, sigma, t)).collect();
    SpectrumEstimate {
        probes,
        sigma,
        support: [a, b],
        grid,
        density,
        failures,
    }
}

pub fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    let step = (b - a) / (points - 1) as f64;
    (0..points)
        .map(|j| if j + 1 == points { b } else { a + j as f64 * step })
        .collect()
}

/// Trapezoid rule over a (possibly non-uniform) grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// `∫|f − g|` by the trapezoid rule on a shared grid.
pub fn l1_distance(grid: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let diff: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a - b).abs()).collect();
    trapezoid(grid, &diff)
}
