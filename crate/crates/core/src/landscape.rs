//! Loss surfaces on a plane `θₙ + xφ₁ + yφ₂`, trajectory projection onto the
//! plane, and straight-line interpolation between two minima.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{forward_loss, Batch, FlatParams, Graph};
use crate::directions::{DirectionPair, Provenance};
use crate::modelzoo::{Dataset, Trajectory};
use crate::parallel::map_indexed;
use crate::spectral::SpectrumEstimate;
use crate::{Error, Result};

/// A scalar loss over parameter vectors, callable from several workers.
pub trait PlaneLoss: Sync {
    fn loss(&self, params: &FlatParams) -> Result<f64>;
}

impl<F> PlaneLoss for F
where
    F: Fn(&FlatParams) -> Result<f64> + Sync,
{
    fn loss(&self, params: &FlatParams) -> Result<f64> {
        self(params)
    }
}

/// Sample-weighted mean loss of a model over a fixed list of batches.
pub struct ModelLoss<'a> {
    graph: &'a Graph,
    batches: Vec<Batch>,
    samples: usize,
}

impl<'a> ModelLoss<'a> {
    pub fn new(graph: &'a Graph, batches: Vec<Batch>) -> Result<Self> {
        let samples = batches.iter().map(Batch::len).sum();
        if samples == 0 {
            return Err(Error::Config("loss needs at least one sample".into()));
        }
        Ok(Self {
            graph,
            batches,
            samples,
        })
    }

    /// Loss over the deterministic `fraction` subset of `data`.
    pub fn subset(graph: &'a Graph, data: &Dataset, fraction: f64, seed: u64, batch_size: usize) -> Result<Self> {
        Self::new(graph, data.subset_batches(fraction, seed, batch_size)?)
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn samples(&self) -> usize {
        self.samples
    }
}

impl PlaneLoss for ModelLoss<'_> {
    fn loss(&self, params: &FlatParams) -> Result<f64> {
        let mut total = 0.0;
        for b in &self.batches {
            total += b.len() as f64 / self.samples as f64 * forward_loss(self.graph, params, b)?;
        }
        Ok(total)
    }
}

/// Wraps a loss and counts its evaluations.
pub struct CountingLoss<L> {
    inner: L,
    calls: AtomicUsize,
}

impl<L: PlaneLoss> CountingLoss<L> {
    pub fn new(inner: L) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<L: PlaneLoss> PlaneLoss for CountingLoss<L> {
    fn loss(&self, params: &FlatParams) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.loss(params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub alpha: f64,
    pub beta: f64,
    /// `‖αφ₁ + βφ₂ − (θᵢ − θₙ)‖`.
    pub residual: f64,
}

/// Least-squares plane coordinates of every snapshot relative to the last.
pub fn project_trajectory(traj: &Trajectory, dirs: &DirectionPair) -> Result<Vec<ProjectedPoint>> {
    let snaps: Vec<&FlatParams> = traj.snapshots.iter().map(|s| &s.params).collect();
    let center = *snaps.last().ok_or_else(|| Error::Config("empty trajectory".into()))?;
    project_points(&snaps, center, dirs)
}

/// Solves `αφ₁ + βφ₂ ≈ θᵢ − center` through the 2×2 normal equations.
pub fn project_points(
    points: &[&FlatParams],
    center: &FlatParams,
    dirs: &DirectionPair,
) -> Result<Vec<ProjectedPoint>> {
    let (p1, p2) = (&dirs.phi1, &dirs.phi2);
    p1.ensure_layout(center.layout())?;
    p2.ensure_layout(center.layout())?;
    let g11 = p1.dot(p1);
    let g12 = p1.dot(p2);
    let g22 = p2.dot(p2);
    let det = g11 * g22 - g12 * g12;
    if det.is_nan() || det.abs() < 1e-12 * g11 * g22 || g11 == 0.0 || g22 == 0.0 {
        return Err(Error::NearParallel { det });
    }
    points
        .iter()
        .map(|theta| {
            let d = theta.difference(center)?;
            let r1 = p1.dot(&d);
            let r2 = p2.dot(&d);
            let alpha = (g22 * r1 - g12 * r2) / det;
            let beta = (g11 * r2 - g12 * r1) / det;
            let residual = d
                .values()
                .iter()
                .zip(p1.values().iter().zip(p2.values()))
                .map(|(di, (a, b))| (alpha * a + beta * b - di).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(ProjectedPoint { alpha, beta, residual })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per axis.
    pub n: usize,
    /// Extra margin on each side as a fraction of the trajectory span.
    pub border: f64,
    pub workers: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 20,
            border: 0.4,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirsMeta {
    pub provenance: Provenance,
    pub normalized: bool,
    pub phi1_norm: f64,
    pub phi2_norm: f64,
    pub cosine: f64,
}

impl DirsMeta {
    pub fn of(dirs: &DirectionPair) -> Self {
        let n1 = dirs.phi1.norm();
        let n2 = dirs.phi2.norm();
        Self {
            provenance: dirs.provenance,
            normalized: dirs.normalized,
            phi1_norm: n1,
            phi2_norm: n2,
            cosine: dirs.phi1.dot(&dirs.phi2) / (n1 * n2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub alpha: f64,
    pub beta: f64,
    /// Loss at the projected point `θₙ + αφ₁ + βφ₂`.
    #[serde(serialize_with = "nan_as_null", deserialize_with = "null_as_nan")]
    pub z: f64,
    #[serde(rename = "iter")]
    pub iteration: usize,
    /// Loss recorded for the snapshot itself during training.
    #[serde(serialize_with = "nan_as_null", deserialize_with = "null_as_nan")]
    pub true_loss: f64,
    pub residual: f64,
}

/// Losses on an `n×n` grid; `z[i*n + j]` sits at `(x_i, y_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub dirs_meta: DirsMeta,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(serialize_with = "nans_as_null", deserialize_with = "nulls_as_nan")]
    pub z: Vec<f64>,
    pub path: Vec<PathPoint>,
    pub nan_cells: usize,
}

impl LandscapeGrid {
    pub fn x(&self, i: usize) -> f64 {
        axis(self.x_range, self.n, i)
    }

    pub fn y(&self, j: usize) -> f64 {
        axis(self.y_range, self.n, j)
    }

    pub fn z_at(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.n + j]
    }

    /// `x,y,z` rows for external plotters; NaN cells are written as `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z\n");
        for i in 0..self.n {
            for j in 0..self.n {
                let _ = writeln!(out, "{},{},{}", self.x(i), self.y(j), self.z_at(i, j));
            }
        }
        out
    }
}

fn axis(range: [f64; 2], n: usize, i: usize) -> f64 {
    if i + 1 == n {
        range[1]
    } else {
        range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
    }
}

fn padded_range(values: impl Iterator<Item = f64>, border: f64) -> [f64; 2] {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if span > 0.0 {
        [lo - border * span, hi + border * span]
    } else {
        // a trajectory that does not move along this axis
        let half = 1.0 + border;
        [lo - half, lo + half]
    }
}

fn loss_at(loss: &dyn PlaneLoss, center: &FlatParams, dirs: &DirectionPair, x: f64, y: f64) -> f64 {
    center
        .displaced(&[(x, &dirs.phi1), (y, &dirs.phi2)])
        .and_then(|p| loss.loss(&p))
        .ok()
        .filter(|z| z.is_finite())
        .unwrap_or(f64::NAN)
}

/// The `n×n` cell losses of [`evaluate_grid`] for given axis ranges, without
/// the trajectory; `z[i*n + j]` sits at `(x_i, y_j)`.
pub fn plane_losses(
    loss: &dyn PlaneLoss,
    center: &FlatParams,
    dirs: &DirectionPair,
    x_range: [f64; 2],
    y_range: [f64; 2],
    n: usize,
    workers: usize,
) -> Vec<f64> {
    map_indexed(n * n, workers, |c| {
        loss_at(loss, center, dirs, axis(x_range, n, c / n), axis(y_range, n, c % n))
    })
}

/// Evaluates `loss` on the plane through the last snapshot of `traj`.
///
/// Ranges cover the projected trajectory plus `border·span` on each side.
/// Cells are split into contiguous row-major chunks, one per worker, and
/// gathered in cell order. A cell whose loss fails or is not finite becomes
/// NaN; the grid is never aborted for it.
pub fn evaluate_grid(
    loss: &dyn PlaneLoss,
    traj: &Trajectory,
    dirs: &DirectionPair,
    spec: &GridSpec,
) -> Result<LandscapeGrid> {
    if spec.n < 2 {
        return Err(Error::Config(format!("grid needs N ≥ 2, got {}", spec.n)));
    }
    if !(spec.border >= 0.0 && spec.border.is_finite()) {
        return Err(Error::Config(format!("border {} must be ≥ 0", spec.border)));
    }
    let center = &traj
        .last()
        .ok_or_else(|| Error::Config("empty trajectory".into()))?
        .params;
    let projected = project_trajectory(traj, dirs)?;
    let x_range = padded_range(projected.iter().map(|p| p.alpha), spec.border);
    let y_range = padded_range(projected.iter().map(|p| p.beta), spec.border);
    let n = spec.n;
    let z = plane_losses(loss, center, dirs, x_range, y_range, n, spec.workers);
    let path_z = map_indexed(projected.len(), spec.workers, |k| {
        loss_at(loss, center, dirs, projected[k].alpha, projected[k].beta)
    });
    let nan_cells = z.iter().filter(|v| v.is_nan()).count();
    if nan_cells > 0 {
        log::warn!("{nan_cells} of {} grid cells are NaN", n * n);
    }
    let path = traj
        .snapshots
        .iter()
        .zip(projected)
        .zip(path_z)
        .map(|((s, p), z)| PathPoint {
            alpha: p.alpha,
            beta: p.beta,
            z,
            iteration: s.iteration,
            true_loss: s.loss,
            residual: p.residual,
        })
        .collect();
    Ok(LandscapeGrid {
        dirs_meta: DirsMeta::of(dirs),
        x_range,
        y_range,
        n,
        z,
        path,
        nan_cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationPoint {
    pub lambda: f64,
    #[serde(serialize_with = "nan_as_null", deserialize_with = "null_as_nan")]
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationResult {
    pub points: Vec<InterpolationPoint>,
}

/// `(1−λ)·a + λ·b`.
pub fn interpolate(a: &FlatParams, b: &FlatParams, lambda: f64) -> Result<FlatParams> {
    b.ensure_layout(a.layout())?;
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
        .collect();
    FlatParams::new(a.layout().clone(), values)
}

/// Per-point spectrum estimator for [`interpolate_minima`].
pub type PointSpectrum<'a> = &'a (dyn Fn(&FlatParams) -> Result<SpectrumEstimate> + Sync);

/// Loss (and optionally a spectrum) at `points` evenly spaced `λ ∈ [0, 1]`
/// on the segment from `a` to `b`.
pub fn interpolate_minima(
    loss: &dyn PlaneLoss,
    a: &FlatParams,
    b: &FlatParams,
    points: usize,
    spectrum: Option<PointSpectrum<'_>>,
) -> Result<InterpolationResult> {
    b.ensure_layout(a.layout())?;
    if points < 2 {
        return Err(Error::Config(format!("interpolation needs ≥ 2 points, got {points}")));
    }
    let points = (0..points)
        .map(|k| {
            let lambda = axis([0.0, 1.0], points, k);
            let theta = interpolate(a, b, lambda)?;
            Ok(InterpolationPoint {
                lambda,
                loss: loss.loss(&theta)?,
                spectrum: spectrum.map(|f| f(&theta)).transpose()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(InterpolationResult { points })
}

fn nan_as_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn null_as_nan<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nans_as_null<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
}

fn nulls_as_nan<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?
        .into_iter()
        .map(|x| x.unwrap_or(f64::NAN))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Direction, ParamGroup, ParamKind, ParamLayout};
    use crate::modelzoo::{OptimizerConfig, Snapshot};
    use std::sync::Arc;

    fn layout(n: usize) -> Arc<ParamLayout> {
        Arc::new(
            ParamLayout::new(vec![ParamGroup {
                name: "w".into(),
                offset: 0,
                count: n,
                kind: ParamKind::FcRow,
                filter_shape: vec![n],
            }])
            .unwrap(),
        )
    }

    fn traj(points: &[Vec<f64>]) -> Trajectory {
        let l = layout(points[0].len());
        Trajectory {
            snapshots: points
                .iter()
                .enumerate()
                .map(|(i, v)| Snapshot {
                    iteration: i,
                    params: FlatParams::new(l.clone(), v.clone()).unwrap(),
                    loss: 0.0,
                    epoch: 0,
                    batch_index: i,
                })
                .collect(),
            model: None,
            optimizer: OptimizerConfig::default(),
            data: None,
        }
    }

    fn axes(n: usize) -> DirectionPair {
        let l = layout(n);
        let mut e1 = vec![0.0; n];
        let mut e2 = vec![0.0; n];
        e1[0] = 1.0;
        e2[1] = 1.0;
        DirectionPair::new(
            Direction::new(l.clone(), e1).unwrap(),
            Direction::new(l, e2).unwrap(),
            Provenance::User,
        )
        .unwrap()
    }

    #[test]
    fn projects_onto_axes() {
        let t = traj(&[vec![2.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]]);
        let p = project_trajectory(&t, &axes(3)).unwrap();
        assert_eq!((p[0].alpha, p[0].beta), (1.0, -1.0));
        assert_eq!((p[1].alpha, p[1].beta, p[1].residual), (0.0, 0.0, 0.0));
    }

    #[test]
    fn parallel_directions_rejected() {
        let l = layout(2);
        let d = Direction::new(l.clone(), vec![1.0, 1.0]).unwrap();
        let pair = DirectionPair::new(d.clone(), d.scaled(2.0), Provenance::User).unwrap();
        let t = traj(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(project_trajectory(&t, &pair), Err(Error::NearParallel { .. })));
    }

    #[test]
    fn two_by_two_grid_counts_evaluations() {
        let t = traj(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![0.5, 0.5]]);
        let f = |p: &FlatParams| -> Result<f64> { Ok(p.values().iter().map(|v| v * v).sum()) };
        let counted = CountingLoss::new(f);
        let spec = GridSpec {
            n: 2,
            border: 0.0,
            workers: 2,
        };
        let g = evaluate_grid(&counted, &t, &axes(2), &spec).unwrap();
        assert_eq!(g.z.len(), 4);
        assert_eq!(counted.calls(), 4 + 3);
        assert_eq!(g.x_range, [-0.5, 0.5]);
        assert_eq!(g.y_range, [-0.5, 1.5]);
    }

    #[test]
    fn failing_cells_become_nan() {
        let t = traj(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        let f = |p: &FlatParams| -> Result<f64> {
            if p.values()[0] > 0.5 {
                Err(Error::Numeric { node: 0, op: "test" })
            } else {
                Ok(1.0)
            }
        };
        let g = evaluate_grid(
            &f,
            &t,
            &axes(2),
            &GridSpec {
                n: 3,
                border: 0.0,
                workers: 1,
            },
        )
        .unwrap();
        assert_eq!(g.nan_cells, 3);
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("null"));
        let back: LandscapeGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back.z.iter().filter(|v| v.is_nan()).count(), 3);
    }

    #[test]
    fn interpolation_endpoints_exact() {
        let l = layout(3);
        let a = FlatParams::new(l.clone(), vec![0.1, -3.0, 7.5]).unwrap();
        let b = FlatParams::new(l, vec![2.0, 0.3, -1.0]).unwrap();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let mid = interpolate(&a, &b, 0.5).unwrap();
        assert_eq!(mid.values(), &[1.05, -1.35, 3.25]);
        let f = |p: &FlatParams| -> Result<f64> { Ok(p.values()[0]) };
        let r = interpolate_minima(&f, &a, &b, 20, None).unwrap();
        assert_eq!(r.points.len(), 20);
        assert_eq!(r.points[0].lambda, 0.0);
        assert_eq!(r.points[19].lambda, 1.0);
        assert!(r.points.windows(2).all(|w| w[0].lambda < w[1].lambda));
    }
}
