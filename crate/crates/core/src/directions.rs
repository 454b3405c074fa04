//! Plane directions in weight space: seeded Gaussian, PCA of a trajectory and
//! top Hessian eigenvectors, plus filter-wise normalization.

use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Direction, FlatParams, ParamKind, ParamLayout};
use crate::linalg::{dot, fix_sign, norm, symmetric_eigen, DenseMatrix};
use crate::modelzoo::Trajectory;
use crate::spectral::{lanczos, probe_vector, ProbeKind, SymOperator};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random,
    Pca,
    Eigen,
    User,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionPair {
    pub phi1: Direction,
    pub phi2: Direction,
    pub provenance: Provenance,
    pub normalized: bool,
}

impl DirectionPair {
    pub fn new(phi1: Direction, phi2: Direction, provenance: Provenance) -> Result<Self> {
        phi2.ensure_layout(phi1.layout())?;
        Ok(Self {
            phi1,
            phi2,
            provenance,
            normalized: false,
        })
    }

    /// Filter-normalizes both directions against `theta`.
    pub fn normalize(self, theta: &FlatParams) -> Result<Self> {
        self.normalize_with(theta, Degenerate::Error)
    }

    pub fn normalize_with(self, theta: &FlatParams, policy: Degenerate) -> Result<Self> {
        Ok(Self {
            phi1: filter_normalize_with(&self.phi1, theta, policy)?,
            phi2: filter_normalize_with(&self.phi2, theta, policy)?,
            normalized: true,
            ..self
        })
    }
}

/// What to do with a zero direction group against a nonzero parameter group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    #[default]
    Error,
    /// Leave the group at zero and log a warning. Dead ReLU units in a PCA
    /// direction hit this.
    Zero,
}

/// I.i.d. standard normal entries, a pure function of `seed`.
pub fn random_direction(layout: &Arc<ParamLayout>, seed: u64) -> Direction {
    let mut rng = seed::rng(seed::derive(seed, "direction", 0));
    let values = (0..layout.total_count())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Direction::new(layout.clone(), values).expect("layout-sized direction")
}

/// Rescales every filter, dense row and bias group of `d` to the Frobenius
/// norm of the matching group of `theta`; batch-norm groups become zero.
///
/// A group whose `theta` norm is zero maps to zero. A zero-norm direction
/// group against a nonzero parameter group is an error.
pub fn filter_normalize(d: &Direction, theta: &FlatParams) -> Result<Direction> {
    filter_normalize_with(d, theta, Degenerate::Error)
}

pub fn filter_normalize_with(d: &Direction, theta: &FlatParams, policy: Degenerate) -> Result<Direction> {
    d.ensure_layout(theta.layout())?;
    let mut out = d.values().to_vec();
    for g in theta.layout().groups() {
        let r = g.range();
        if g.kind == ParamKind::Batchnorm {
            out[r].fill(0.0);
            continue;
        }
        let t_norm = norm(&theta.values()[r.clone()]);
        let d_norm = norm(&out[r.clone()]);
        if t_norm == 0.0 {
            out[r].fill(0.0);
        } else if d_norm == 0.0 {
            if policy == Degenerate::Error {
                return Err(Error::DegenerateDirection { group: g.name.clone() });
            }
            log::warn!("direction group {} is zero; left at zero", g.name);
        } else {
            let s = t_norm / d_norm;
            for v in &mut out[r] {
                *v *= s;
            }
        }
    }
    Direction::new(theta.layout().clone(), out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// Subtract the mean difference vector before the decomposition.
    pub centered: bool,
}

/// Top two principal directions of the differences `θᵢ − θₙ`.
pub fn pca_directions(traj: &Trajectory, opts: PcaOptions) -> Result<DirectionPair> {
    let snaps: Vec<&FlatParams> = traj.snapshots.iter().map(|s| &s.params).collect();
    pca_directions_from(&snaps, opts)
}

/// Works on the `(n−1)×(n−1)` Gram matrix `DᵀD` of the difference columns
/// `D = [θ₁−θₙ, …, θₙ₋₁−θₙ]`; the left singular vectors are recovered as
/// `D·u / ‖D·u‖`, so no `N×N` matrix is ever formed. Output vectors are
/// unit-norm with their largest-magnitude entry positive.
pub fn pca_directions_from(snapshots: &[&FlatParams], opts: PcaOptions) -> Result<DirectionPair> {
    if snapshots.len() < 3 {
        return Err(Error::Config(format!(
            "PCA needs at least 3 snapshots, got {}",
            snapshots.len()
        )));
    }
    let last = snapshots[snapshots.len() - 1];
    let layout = last.layout().clone();
    let mut cols: Vec<Vec<f64>> = snapshots[..snapshots.len() - 1]
        .iter()
        .map(|s| s.difference(last).map(Direction::into_values))
        .collect::<Result<_>>()?;
    if opts.centered {
        let k = cols.len() as f64;
        let mut mean = vec![0.0; layout.total_count()];
        for c in &cols {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v / k;
            }
        }
        for c in &mut cols {
            for (v, m) in c.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }
    let k = cols.len();
    let mut gram = DenseMatrix::zeros(k);
    for i in 0..k {
        for j in 0..=i {
            let g = dot(&cols[i], &cols[j]);
            gram.set(i, j, g);
            gram.set(j, i, g);
        }
    }
    let eig = symmetric_eigen(&gram)?;
    let top = eig.values[k - 1];
    let rank = eig.values.iter().filter(|&&l| top > 0.0 && l > 1e-13 * top).count();
    if rank < 2 {
        return Err(Error::RankDeficient { rank });
    }
    let lift = |u: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; layout.total_count()];
        for (c, col) in u.iter().zip(&cols) {
            crate::linalg::axpy(*c, col, &mut v);
        }
        let n = norm(&v);
        let mut v: Vec<f64> = v.into_iter().map(|x| x / n).collect();
        fix_sign(&mut v);
        v
    };
    let phi1 = Direction::new(layout.clone(), lift(eig.vector(k - 1)))?;
    let phi2 = Direction::new(layout.clone(), lift(eig.vector(k - 2)))?;
    DirectionPair::new(phi1, phi2, Provenance::Pca)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub direction: Direction,
    pub eigenvalue: f64,
    /// `‖H·v − λ·v‖` for the unit vector `v`.
    pub residual: f64,
    pub converged: bool,
}

/// Relative residual below which a Ritz pair counts as converged.
pub const RITZ_TOL: f64 = 1e-4;

/// Ritz vectors for the `count` algebraically largest eigenvalues of `op`
/// from one Lanczos run of `m` steps started at a seeded Gaussian vector.
///
/// Each returned vector is unit-norm, sign-fixed, and carries its residual
/// (one extra operator application per vector). If Lanczos breaks down with
/// fewer than `count` Ritz pairs, [`Error::PartialEigen`] carries those found.
pub fn eigen_directions(
    op: &dyn SymOperator,
    layout: &Arc<ParamLayout>,
    count: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if n != layout.total_count() {
        return Err(Error::Layout(format!(
            "operator of dimension {n} for layout of {}",
            layout.total_count()
        )));
    }
    if count == 0 || count > m || m > n {
        return Err(Error::Config(format!(
            "eigen directions need 1 ≤ count ({count}) ≤ m ({m}) ≤ N ({n})"
        )));
    }
    let v0 = probe_vector(ProbeKind::Gaussian, n, seed::derive(seed, "eigen", 0));
    let run = lanczos(op, &v0, m)?;
    let ritz = run.ritz_pairs()?;
    let available = ritz.len().min(count);
    let mut pairs = Vec::with_capacity(available);
    for (lambda, mut y) in ritz.into_iter().rev().take(available) {
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        fix_sign(&mut y);
        let hy = op.apply(&y)?;
        let residual = norm(&hy.iter().zip(&y).map(|(h, v)| h - lambda * v).collect::<Vec<_>>());
        pairs.push(EigenPair {
            direction: Direction::new(layout.clone(), y)?,
            eigenvalue: lambda,
            residual,
            converged: residual <= RITZ_TOL * lambda.abs(),
        });
    }
    if available < count {
        let converged = pairs.iter().filter(|p| p.converged).count();
        return Err(Error::PartialEigen {
            steps: run.tridiagonal.actual_steps,
            converged,
            requested: count,
            pairs,
        });
    }
    Ok(pairs)
}

/// Plane spanned by the top two Ritz vectors.
pub fn eigen_pair(op: &dyn SymOperator, layout: &Arc<ParamLayout>, m: usize, seed: u64) -> Result<DirectionPair> {
    let mut pairs = eigen_directions(op, layout, 2, m, seed)?;
    let p2 = pairs.pop().expect("two pairs");
    let p1 = pairs.pop().expect("two pairs");
    DirectionPair::new(p1.direction, p2.direction, Provenance::Eigen)
}

/// Writes a direction in the checkpoint format, with its layout sidecar.
pub fn save_direction(path: &Path, d: &Direction) -> Result<()> {
    crate::modelzoo::io::save_params(path, &FlatParams::from(d.clone()))
}

/// Reads a user-supplied direction stored in the checkpoint format.
pub fn load_direction(path: &Path) -> Result<Direction> {
    crate::modelzoo::io::load_params(path).map(Direction::from)
}
