//! Node label prediction in attributed networks.
//!
//! Per-node features are augmented with latent community vectors learned by a
//! sigmoid-link factorization of the adjacency matrix, then fed to an
//! L2-regularized logistic regression. The crate covers the whole path:
//! graph ingestion and k-core extraction ([`graph`]), the link model
//! ([`linkmf`]), design-matrix assembly ([`features`]), the classifier
//! ([`classify`]), evaluation curves and metrics ([`eval`]), a planted
//! partition benchmark ([`synth`]) and end-to-end orchestration
//! ([`pipeline`]).

pub mod classify;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod linkmf;
pub mod pipeline;
pub mod synth;
mod util;

pub use error::{Error, Result};
pub use graph::Graph;
pub use linkmf::LinkModel;
