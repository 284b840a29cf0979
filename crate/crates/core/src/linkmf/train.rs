use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::LinkModel;
use super::objective::{cost_and_gradients_unchecked, cost_unchecked, CostWeights, Gradients};
use super::sampling::{PairSample, PairSplits};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::util::{logit, rng};

/// Full-batch gradient descent with a backtracking step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentOptions {
    pub initial_step: f64,
    /// Step multiplier after an accepted step.
    pub grow: f64,
    /// Step multiplier after a rejected step.
    pub shrink: f64,
    /// Stop once an accepted step improves the cost by less than this
    /// fraction.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_backtracks: usize,
    /// Half-width of the uniform initialization of `U` and `V`.
    pub init_scale: f64,
    pub seed: u64,
    /// Divide each parameter's gradient by the number of training pairs it
    /// enters, relative to the per-edge weight. Without this the stiff
    /// global bias caps the step far below what the factors need and the
    /// tolerance test fires before they leave their initialization.
    pub precondition: bool,
    pub gamma_unit: GammaUnit,
}

/// Unit of the L2 strength passed to training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaUnit {
    /// `γ` enters the cost as given.
    Absolute,
    /// `γ` is multiplied by the non-edge weight `1/(2ζ)`, which puts the
    /// per-pair penalty on the scale of the per-pair data term whatever the
    /// graph size.
    #[default]
    NonEdgeWeight,
}

impl GammaUnit {
    /// The `γ` that enters the cost for the given graph-wide weights.
    pub fn effective(self, gamma: f64, zeta: usize) -> f64 {
        match self {
            GammaUnit::Absolute => gamma,
            GammaUnit::NonEdgeWeight => gamma / (2.0 * zeta as f64),
        }
    }
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            grow: 1.1,
            shrink: 0.5,
            tolerance: 1e-6,
            max_iterations: 2000,
            max_backtracks: 60,
            init_scale: 0.01,
            seed: 0,
            precondition: true,
            gamma_unit: GammaUnit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Training cost after initialization and after every accepted step.
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Relative cost change attributed to summation rounding.
const ROUNDING: f64 = 1e-12;

pub fn fit_link_model(
    g: &Graph,
    k: usize,
    gamma: f64,
    train: &PairSample,
    opts: &DescentOptions,
) -> Result<LinkModel> {
    fit_link_model_traced(g, k, gamma, train, opts).map(|(m, _)| m)
}

pub fn fit_link_model_traced(
    g: &Graph,
    k: usize,
    gamma: f64,
    train: &PairSample,
    opts: &DescentOptions,
) -> Result<(LinkModel, FitTrace)> {
    if k == 0 {
        return Err(Error::InvalidInput("latent dimension k must be >= 1".into()));
    }
    let mut weights = CostWeights::from_graph(g, gamma)?;
    weights.gamma = opts.gamma_unit.effective(gamma, weights.zeta);
    let n = g.node_count();
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training sample".into()));
    }
    if let Some(p) = train.pairs().iter().find(|p| p.i >= n || p.j >= n || p.i == p.j) {
        return Err(Error::InvalidInput(format!(
            "training pair ({}, {}) is not an off-diagonal entry of a {n}-node graph",
            p.i, p.j
        )));
    }

    let base_rate = train.fraction_edges().clamp(1e-6, 1.0 - 1e-6);
    let mut model = LinkModel::random(n, k, opts.init_scale, logit(base_rate), &mut rng(opts.seed));
    let (mut cost, mut grad) = cost_and_gradients_unchecked(&model, train, &weights);
    if !cost.is_finite() {
        return Err(Error::Numerical(format!("initial cost is {cost}")));
    }

    let mut trace = FitTrace {
        costs: vec![cost],
        iterations: 0,
        converged: false,
    };
    let mut step = opts.initial_step;
    let scale = opts.precondition.then(|| Scaling::new(train, n, weights.omega as f64));

    'outer: for iteration in 0..opts.max_iterations {
        trace.iterations = iteration + 1;
        if grad.squared_norm() == 0.0 {
            trace.converged = true;
            break;
        }
        let mut stalled = true;
        for _ in 0..=opts.max_backtracks {
            let trial = match &scale {
                Some(sc) => descend(&model, &sc.apply(&grad), step),
                None => descend(&model, &grad, step),
            };
            let trial_cost = cost_unchecked(&trial, train, &weights);
            if trial_cost.is_finite() && trial_cost < cost {
                let improvement = (cost - trial_cost) / cost.abs().max(f64::MIN_POSITIVE);
                model = trial;
                let (c, g) = cost_and_gradients_unchecked(&model, train, &weights);
                cost = c;
                grad = g;
                trace.costs.push(cost);
                step *= opts.grow;
                if improvement < opts.tolerance {
                    trace.converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            // A cost equal up to rounding means the step fell below
            // floating-point resolution, not that the iterate is diverging.
            if !(trial_cost.is_finite() && trial_cost - cost <= ROUNDING * cost.abs()) {
                stalled = false;
            }
            step *= opts.shrink;
        }
        if stalled {
            trace.converged = true;
            break;
        }
        return Err(Error::Divergence {
            iteration,
            last_model: Box::new(model),
        });
    }

    if !model.is_finite() {
        return Err(Error::Numerical("non-finite link model parameters".into()));
    }
    debug!(
        "link model k={k} gamma={gamma}: cost {:.6e} after {} iterations (converged: {})",
        cost, trace.iterations, trace.converged
    );
    Ok((model, trace))
}

/// Diagonal preconditioner: `2ω` over the number of training pairs that
/// touch each parameter.
struct Scaling {
    row: Vec<f64>,
    col: Vec<f64>,
    node: Vec<f64>,
    all: f64,
}

impl Scaling {
    fn new(train: &PairSample, n: usize, omega: f64) -> Self {
        let mut row = vec![0.0f64; n];
        let mut col = vec![0.0f64; n];
        for p in train.pairs() {
            row[p.i] += 1.0;
            col[p.j] += 1.0;
        }
        let node = row.iter().zip(&col).map(|(a, b)| 2.0 * omega / (a + b).max(1.0)).collect();
        let inv = |c: Vec<f64>| c.into_iter().map(|x| 2.0 * omega / x.max(1.0)).collect();
        Self {
            row: inv(row),
            col: inv(col),
            node,
            all: 2.0 * omega / train.len() as f64,
        }
    }

    fn apply(&self, g: &Gradients) -> Gradients {
        let mut out = g.clone();
        for (mut r, &f) in out.u.rows_mut().into_iter().zip(&self.row) {
            r *= f;
        }
        for (mut r, &f) in out.v.rows_mut().into_iter().zip(&self.col) {
            r *= f;
        }
        for (b, &f) in out.beta.iter_mut().zip(&self.node) {
            *b *= f;
        }
        out.alpha *= self.all;
        out
    }
}

fn descend(m: &LinkModel, g: &Gradients, step: f64) -> LinkModel {
    let mut next = m.clone();
    next.u.scaled_add(-step, &g.u);
    next.v.scaled_add(-step, &g.v);
    next.beta.scaled_add(-step, &g.beta);
    next.alpha -= step * g.alpha;
    next
}

/// Fraction of pairs where `σ(H) >= 0.5` agrees with the label.
pub fn link_prediction_accuracy(m: &LinkModel, sample: &PairSample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("accuracy over an empty pair sample".into()));
    }
    let mut correct = 0usize;
    for p in sample.pairs() {
        m.check_index(p.i)?;
        m.check_index(p.j)?;
        // σ(H) >= 0.5 exactly when H >= 0
        let predicted = m.logit(p.i, p.j) >= 0.0;
        if predicted == p.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / sample.len() as f64)
}

pub const DEFAULT_K_GRID: [usize; 6] = [5, 6, 7, 8, 9, 10];
pub const DEFAULT_GAMMA_GRID: [f64; 7] = [0.0, 0.01, 0.04, 0.16, 0.64, 2.56, 10.24];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridScore {
    pub k: usize,
    pub gamma: f64,
    /// `None` when training failed at this point.
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub k: usize,
    pub gamma: f64,
    pub model: LinkModel,
    pub validation_accuracy: f64,
    pub grid: Vec<GridScore>,
}

/// Trains one model per `(k, γ)` and keeps the one with the best link
/// prediction accuracy on the validation pairs. Ties go to the smaller `k`,
/// then the smaller `γ`.
pub fn select_hyperparameters(
    g: &Graph,
    splits: &PairSplits,
    k_grid: &[usize],
    gamma_grid: &[f64],
    opts: &DescentOptions,
) -> Result<Selection> {
    if k_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidInput("hyperparameter grids must be non-empty".into()));
    }
    let mut points: Vec<(usize, f64)> = k_grid
        .iter()
        .flat_map(|&k| gamma_grid.iter().map(move |&gamma| (k, gamma)))
        .collect();
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();

    let results: Vec<_> = points
        .par_iter()
        .map(|&(k, gamma)| {
            fit_link_model(g, k, gamma, &splits.train, opts).and_then(|m| {
                let acc = link_prediction_accuracy(&m, &splits.validation)?;
                Ok((m, acc))
            })
        })
        .collect();

    let mut grid = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64, LinkModel, f64)> = None;
    let mut last_error = None;
    for (&(k, gamma), result) in points.iter().zip(results) {
        match result {
            Ok((model, acc)) => {
                grid.push(GridScore {
                    k,
                    gamma,
                    validation_accuracy: Some(acc),
                });
                if best.as_ref().is_none_or(|b| acc > b.3) {
                    best = Some((k, gamma, model, acc));
                }
            }
            Err(e) => {
                debug!("grid point k={k} gamma={gamma} failed: {e}");
                grid.push(GridScore {
                    k,
                    gamma,
                    validation_accuracy: None,
                });
                last_error = Some(e);
            }
        }
    }
    match best {
        Some((k, gamma, model, validation_accuracy)) => Ok(Selection {
            k,
            gamma,
            model,
            validation_accuracy,
            grid,
        }),
        None => Err(last_error.expect("non-empty grid")),
    }
}
