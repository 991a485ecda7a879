//! Multiscale topology optimization of Voronoi cellular structures driven by
//! a neural surrogate of the homogenized micro-structure stiffness.
//!
//! Offline: [`dataset`] samples 3x3 neighborhoods of cell sites,
//! [`voronoi`] rasterizes them, [`homogenize`] computes the effective
//! elasticity matrix and [`surrogate`] learns its Cholesky factor.
//! Online: [`optimize`] drives per-element Voronoi parameters through the
//! surrogate and the macro model in [`fea`], with end-to-end gradients;
//! [`verify`] re-homogenizes the result.

pub mod adam;
pub mod catalog;
pub mod dataset;
pub mod error;
pub mod fea;
pub mod homogenize;
pub mod io;
pub mod optimize;
pub mod quad;
pub mod sparse;
pub mod surrogate;
pub mod verify;
pub mod voronoi;

pub use dataset::{CholeskyFactor, Dataset, GenConfig, Sample, SamplingRanges};
pub use error::{Error, Result};
pub use fea::{BoundaryConditions, MacroMesh, Problem, SolveResult};
pub use homogenize::{BaseMaterial, ElasticityMatrix, Homogenized, Homogenizer};
pub use optimize::{ConvergenceLog, DesignState, OptConfig, ParamBounds};
pub use surrogate::{MlpModel, Prediction, TrainConfig};
pub use verify::VerificationReport;
pub use voronoi::{CellParams, DensityField, MicrostructureSpec, Site};
