//! Sigmoid-link latent factor model of the adjacency matrix.
//!
//! A pair `(i, j)` links with probability `σ(α + β_i + β_j + U_i · V_j)`.
//! The model is fitted by minimizing a class-balanced cross-entropy over a
//! sample of ordered pairs with an L2 penalty, using full-batch gradient
//! descent with backtracking. `(k, γ)` is chosen by link prediction accuracy
//! on held-out pairs.

mod model;
mod objective;
mod sampling;
mod train;

pub use model::{link_probability, LinkModel};
pub use objective::{cost, cost_and_gradients, gradients, CostWeights, Gradients};
pub use sampling::{sample_pairs, Pair, PairSample, PairSplits, SampleRole};
pub use train::{
    fit_link_model, fit_link_model_traced, link_prediction_accuracy, select_hyperparameters,
    DescentOptions, FitTrace, GammaUnit, GridScore, Selection, DEFAULT_GAMMA_GRID, DEFAULT_K_GRID,
};
