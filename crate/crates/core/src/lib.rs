//! Unsupervised heat-map learning for the planar Euclidean TSP.
//!
//! The pipeline: generate or load instances ([`instances`]), encode them into
//! a column-stochastic soft assignment ([`encoder`]), turn that into a heat
//! map and a sparse candidate set ([`heatmap`]), train the encoder on the
//! surrogate loss ([`training`]), and run candidate-restricted local search
//! ([`search`]). Exact and heuristic reference solvers live in [`oracle`];
//! phase-transition hardness in [`hardness`].

pub mod encoder;
pub mod error;
pub mod hardness;
pub mod heatmap;
pub mod instances;
pub mod local;
pub mod oracle;
pub mod search;
pub mod tour;
pub mod training;

pub use error::{Error, Result};
pub use instances::{DistanceMatrix, DistributionKind, Family, TspInstance};
pub use tour::Tour;
