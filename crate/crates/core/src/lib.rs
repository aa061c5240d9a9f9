//! Open-set recognition for random forests.
//!
//! The pipeline trains a closed-set CART forest, extracts RF-GAP proximities
//! from its bootstrap and terminal-node bookkeeping, distills them into a
//! diagonal Mahalanobis metric by maximizing Gaussian-process evidence over
//! pairwise distance features, and finally rejects test points whose
//! K-nearest-neighbor distance ratio falls in a generalized-Pareto tail.
//!
//! Modules map onto the stages:
//!
//! - [`dataset`]: loading, standardization, open-set splits, Gaussian mixtures
//! - [`forest`]: CART random forest, OOB votes, grid-search cross-validation
//! - [`proximity`]: RF-GAP proximities and their symmetrization
//! - [`metric`]: GP evidence, its gradient, and the fitted diagonal transform
//! - [`osr`]: KOSNN with a GPD tail, the decision rule, and the OSNN baseline
//! - [`eval`]: open-set confusion matrices, metrics and decision grids
//! - [`pipeline`]: experiment configuration, model bundles and reproduction runs

pub mod dataset;
pub mod error;
pub mod eval;
pub mod forest;
pub mod metric;
pub mod osr;
pub mod pipeline;
pub mod proximity;
pub(crate) mod seed;

pub use dataset::{ClassId, Dataset, OpenSetSplit, StandardizationParams};
pub use error::{Error, Result};
pub use forest::{Forest, ForestConfig};
pub use metric::MetricModel;
pub use osr::{OpenSetClassifier, OsnnBaseline};
pub use proximity::ProximityMatrix;
