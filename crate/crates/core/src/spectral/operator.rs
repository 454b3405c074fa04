use crate::autodiff::{hvp_raw, Batch, Direction, FlatParams, Graph};
use crate::linalg::DenseMatrix;
use crate::parallel::{map_indexed, pairwise_sum};
use crate::{Error, Result};

/// A symmetric linear map accessed only through products.
///
/// `apply` may be called concurrently from several workers.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

impl SymOperator for DenseMatrix {
    fn dim(&self) -> usize {
        DenseMatrix::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v)?;
        Ok(self.matvec(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalOperator(pub Vec<f64>);

impl SymOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.0.len(), v)?;
        Ok(self.0.iter().zip(v).map(|(d, x)| d * x).collect())
    }
}

fn check_dim(n: usize, v: &[f64]) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "vector of {} for operator of dimension {n}",
            v.len()
        )))
    }
}

/// Hessian of the sample-weighted mean loss over `batches`, applied with
/// data-parallel Hessian-vector products.
pub struct HessianOperator<'a> {
    graph: &'a Graph,
    params: &'a FlatParams,
    batches: &'a [Batch],
    workers: usize,
}

impl<'a> HessianOperator<'a> {
    pub fn new(graph: &'a Graph, params: &'a FlatParams, batches: &'a [Batch], workers: usize) -> Result<Self> {
        params.ensure_layout(graph.layout())?;
        if batches.is_empty() {
            return Err(Error::Config("Hessian operator needs at least one batch".into()));
        }
        Ok(Self {
            graph,
            params,
            batches,
            workers: workers.max(1),
        })
    }

    pub fn samples(&self) -> usize {
        self.batches.iter().map(Batch::len).sum()
    }
}

impl SymOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v)?;
        batched_hvp(self.graph, self.params.values(), self.batches, v, self.workers)
    }
}

fn batched_hvp(graph: &Graph, params: &[f64], batches: &[Batch], v: &[f64], workers: usize) -> Result<Vec<f64>> {
    let total: usize = batches.iter().map(Batch::len).sum();
    let parts = map_indexed(batches.len(), workers, |i| {
        let weight = batches[i].len() as f64 / total as f64;
        hvp_raw(graph, params, &batches[i], v).map(|hv| hv.into_iter().map(|x| weight * x).collect::<Vec<f64>>())
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    pairwise_sum(parts).ok_or_else(|| Error::Config("no batches".into()))
}

/// Full-data Hessian-vector product over a fixed batch partition.
///
/// Each worker handles a contiguous block of batches; every batch result is
/// weighted by its share of the samples and the results are combined with a
/// fixed pairwise tree in batch order, so the output is bit-identical for any
/// `workers`. A worker that receives no batches contributes nothing.
pub fn data_parallel_hvp(
    graph: &Graph,
    params: &FlatParams,
    batches: &[Batch],
    v: &Direction,
    workers: usize,
) -> Result<FlatParams> {
    params.ensure_layout(graph.layout())?;
    v.ensure_layout(graph.layout())?;
    if batches.is_empty() {
        return Err(Error::Config("data-parallel hvp needs at least one batch".into()));
    }
    let hv = batched_hvp(graph, params.values(), batches, v.values(), workers.max(1))?;
    FlatParams::new(graph.layout().clone(), hv)
}
