//! Graph-diffusion label propagation for semi-supervised learning.
//!
//! A kNN affinity graph over example descriptors carries the known labels to
//! the unlabeled examples by solving a sparse linear system with conjugate
//! gradient. The resulting pseudo-labels, weighted by their entropy-based
//! certainty and by inverse class population, train a classifier whose
//! descriptors in turn rebuild the graph for the next epoch.
//!
//! Module map:
//! - [`dataset`]: examples, labeled split, label matrix, two-moons generator
//! - [`io`]: embedding and label file formats
//! - [`graph`]: sparse matrices, exact kNN, affinity and normalization
//! - [`diffusion`]: CG and dense solvers, pseudo-labels, weights
//! - [`encoding`]: fixed Gaussian landmark features
//! - [`model`]: differentiable classifier, losses, SGD, checkpoints
//! - [`pipeline`]: the two-phase training loop and its reports

pub mod dataset;
pub mod diffusion;
pub mod encoding;
mod error;
pub mod graph;
pub mod io;
pub mod model;
pub mod pipeline;

pub use dataset::{build_label_matrix, Dataset, GroundTruth, LabelMatrix};
pub use diffusion::{propagate, DiffusionConfig, DiffusionOutput};
pub use error::{Error, Result};
pub use graph::{GraphConfig, SparseMatrix};
pub use model::{Model, TrainConfig};
pub use pipeline::{run_lpdssl, EpochReport, PipelineConfig};

