//! Matrix-free symmetric operators, Lanczos with full reorthogonalization and
//! stochastic Lanczos quadrature (SLQ) for spectral densities.
//!
//! Two parallel schemes compose here: [`data_parallel_hvp`] splits one
//! Hessian-vector product over data batches, [`iteration_parallel_slq`]
//! splits the independent probes over workers.

mod lanczos;
mod operator;
mod slq;

pub use lanczos::{lanczos, LanczosRun, TridiagonalMatrix, BREAKDOWN_TOL};
pub use operator::{data_parallel_hvp, DiagonalOperator, HessianOperator, SymOperator};
pub use slq::{
    assemble, density_eval, gaussian_kernel, iteration_parallel_slq, l1_distance, probe_seed, probe_vector, run_probe,
    slq_spectrum, trapezoid, uniform_grid, ProbeFailure, ProbeKind, ProbeResult, Sigma, SlqConfig, SpectrumEstimate,
    SUPPORT_PAD_SIGMAS,
};
