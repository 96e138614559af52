//! # otkit
//!
//! Optimal transport between discrete measures on boxes in R^d, from the
//! unregularized problem through entropic regularization to kernel
//! discrepancies.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | weighted point clouds, KL, total variation, grid sampling, text IO |
//! | [`kernels`] | kernel and cost zoo with Lipschitz metadata, anchor shift for order-1 cpd kernels |
//! | [`discrepancy`] | kernel discrepancy (MMD), witness function, spectral form on the 1-torus |
//! | [`exact_ot`] | closed-form 1D W1 and an exact transportation simplex |
//! | [`sinkhorn`] | log-domain Sinkhorn with oscillation-norm stopping, limit potentials |
//! | [`divergence`] | debiased Sinkhorn divergence, its large-ε limit, ε sweeps |
//! | [`dither`] | approximation of a measure by equal-weight atoms |
//!
//! The Sinkhorn divergence
//!
//! ```text
//! S_ε(μ,ν) = OT_ε(μ,ν) − ½ OT_ε(μ,μ) − ½ OT_ε(ν,ν)
//! ```
//!
//! interpolates between the Kantorovich cost (ε → 0) and, for c = −K,
//! half the squared kernel discrepancy (ε → ∞).
//!
//! ```rust
//! use otkit::prelude::*;
//!
//! let mu = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
//! let nu = DiscreteMeasure::new(1, vec![0.1, 0.9], vec![0.5, 0.5]).unwrap();
//! let w1 = otkit::exact_ot::wasserstein1_1d(&mu, &nu).unwrap();
//! assert!((w1 - 0.1).abs() < 1e-12);
//! ```

pub mod discrepancy;
pub mod dither;
pub mod divergence;
mod error;
pub mod exact_ot;
pub mod kernels;
pub mod measures;
pub mod sinkhorn;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::discrepancy::{discrepancy, witness_eval, DiscrepancyResult, SpectralKernel};
    pub use crate::dither::{DitherConfig, DitherState};
    pub use crate::divergence::{sinkhorn_divergence, DivergenceResult};
    pub use crate::exact_ot::{exact_ot, ExactOTResult};
    pub use crate::kernels::{CostSpec, Kernel, KernelSpec, KernelVariant};
    pub use crate::measures::{BoundingBox, DiscreteMeasure, PointSet};
    pub use crate::sinkhorn::{solve, SinkhornConfig, SinkhornSolution};
    pub use crate::{Error, Result};
}
