//! Nonparametric goodness-of-fit testing for covariate-driven intensity
//! models of inhomogeneous Poisson point processes.
//!
//! The null model states that the first-order intensity depends on space
//! only through a covariate raster, `λ(x) = ρ(Z(x))`. The crate compares a
//! purely spatial kernel estimate of the relative density `λ₀ = λ / m` with
//! a covariate-based estimate via an integrated squared distance, then
//! calibrates that distance with a smooth Poisson bootstrap.
//!
//! Module layout:
//!
//! - [`geometry`]: observation window, covariate raster, quadrature mesh and
//!   the spatial distribution of the covariate.
//! - [`kernels`]: kernel families, bandwidths and rule-of-thumb selectors.
//! - [`estimators`]: spatial and covariate-based relative density surfaces.
//! - [`goftest`]: the statistic, bootstrap calibration, the normal
//!   approximation and an independent U-statistic evaluation of the statistic.
//! - [`simulate`]: Poisson sampling, perturbation bands and power studies.
//! - [`io`]: ESRI ASCII grids and point-pattern CSV files.
//! - [`rng`]: keyed counter-based random streams.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod geometry;
pub mod goftest;
pub mod io;
pub mod kernels;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use estimators::{EdgeCorrection, IntensitySurface, RelativeDensitySurface};
pub use geometry::{
    CovariateGrid, Domain, Mask, Mesh, MeshResolution, ObservationWindow, PointPattern, RasterGeometry, Rect,
    SpatialCovariateDistribution,
};

pub use goftest::{AsymptoticApprox, TestConfig, TestResult};
pub use kernels::{Bandwidth1D, BandwidthMatrix, Kernel1D, Kernel2D};
pub use simulate::{BandKind, PerturbationBand, SyntheticModel};
