//! Row splitting and L2-regularized logistic regression with λ chosen by
//! balanced classification rate on a validation split.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::confusion;
use crate::util::{log_sigmoid, rng, sigmoid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `ids` with `seed` and cuts at `⌊train·n⌋` and
/// `⌊(train + validation)·n⌋`.
pub fn split_rows(ids: &[usize], train: f64, validation: f64, seed: u64) -> Result<RowSplit> {
    if ids.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "need at least 5 labelled rows to split, got {}",
            ids.len()
        )));
    }
    if !(train > 0.0 && validation >= 0.0 && train + validation < 1.0) {
        return Err(Error::InvalidInput(format!(
            "invalid split ratios train={train} validation={validation}"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng(seed));
    let n = shuffled.len() as f64;
    let a = (train * n).floor() as usize;
    let b = ((train + validation) * n).floor() as usize;
    Ok(RowSplit {
        train: shuffled[..a].to_vec(),
        validation: shuffled[a..b].to_vec(),
        test: shuffled[b..].to_vec(),
    })
}

/// Default split of 60 / 20 / 20.
pub fn split_rows_default(ids: &[usize], seed: u64) -> Result<RowSplit> {
    split_rows(ids, 0.6, 0.2, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub threshold: f64,
    /// Provenance label of each weight's column.
    #[serde(default)]
    pub columns: Vec<String>,
}

impl ClassifierModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// How the optimizer starts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Init {
    #[default]
    Zeros,
    /// Coefficients drawn uniformly from `[-1, 1]`.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Curvature pairs kept by the quasi-Newton direction.
    pub memory: usize,
    pub init: Init,
    pub threshold: f64,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            relative_tolerance: 1e-8,
            gradient_tolerance: 1e-6,
            memory: 10,
            init: Init::Zeros,
            threshold: 0.5,
        }
    }
}

/// Mean negative log-likelihood plus `λ‖w‖²`; parameter 0 is the intercept
/// and is not penalized.
struct Objective<'x, 'y> {
    x: ArrayView2<'x, f64>,
    y: &'y [bool],
    lambda: f64,
}

impl Objective<'_, '_> {
    fn value_and_gradient(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        let n = self.x.nrows() as f64;
        let b = theta[0];
        let w = theta.slice(ndarray::s![1..]);
        let z = self.x.dot(&w) + b;
        let mut loss = 0.0;
        let mut resid = Array1::<f64>::zeros(z.len());
        for ((zi, &yi), r) in z.iter().zip(self.y).zip(resid.iter_mut()) {
            loss -= if yi { log_sigmoid(*zi) } else { log_sigmoid(-zi) };
            *r = sigmoid(*zi) - if yi { 1.0 } else { 0.0 };
        }
        let mut grad = Array1::<f64>::zeros(theta.len());
        grad[0] = resid.sum() / n;
        let gw = self.x.t().dot(&resid) / n + &w * (2.0 * self.lambda);
        grad.slice_mut(ndarray::s![1..]).assign(&gw);
        (loss / n + self.lambda * w.dot(&w), grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Objective after every accepted step, starting at the initial point.
    pub objective: Vec<f64>,
    pub converged: bool,
}

pub fn fit_logreg(x: ArrayView2<f64>, y: &[bool], lambda: f64, opts: &LogRegOptions) -> Result<ClassifierModel> {
    fit_logreg_traced(x, y, lambda, opts).map(|(m, _)| m)
}

/// Minimizes the penalized mean negative log-likelihood with limited-memory
/// quasi-Newton directions and a backtracking (Armijo) line search.
pub fn fit_logreg_traced(
    x: ArrayView2<f64>,
    y: &[bool],
    lambda: f64,
    opts: &LogRegOptions,
) -> Result<(ClassifierModel, FitReport)> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if lambda == 0.0 && (positives == 0 || positives == y.len()) {
        return Err(Error::Numerical(
            "single-class labels with lambda = 0: the objective is unbounded".into(),
        ));
    }
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::InvalidInput(format!("threshold must lie in (0, 1), got {}", opts.threshold)));
    }

    let d = x.ncols();
    let objective = Objective { x, y, lambda };
    let mut theta = match opts.init {
        Init::Zeros => Array1::zeros(d + 1),
        Init::Random(seed) => {
            let mut r = rng(seed);
            Array1::from_shape_fn(d + 1, |_| r.gen_range(-1.0..=1.0))
        }
    };
    let (mut f, mut g) = objective.value_and_gradient(&theta);
    let mut report = FitReport {
        objective: vec![f],
        converged: false,
    };
    let mut history: VecDeque<(Array1<f64>, Array1<f64>, f64)> = VecDeque::new();

    for _ in 0..opts.max_iterations {
        if norm(&g) < opts.gradient_tolerance {
            report.converged = true;
            break;
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            history.clear();
            dir = -&g;
            slope = g.dot(&dir);
        }
        let mut step = if history.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &theta + &(&dir * step);
            let (fc, gc) = objective.value_and_gradient(&candidate);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            // no further decrease is representable
            report.converged = true;
            break;
        };
        let s_vec = &next - &theta;
        let y_vec = &g_next - &g;
        let sy = s_vec.dot(&y_vec);
        if sy > 1e-12 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s_vec, y_vec, 1.0 / sy));
        }
        let change = (f - f_next).abs() / f.abs().max(1e-300);
        theta = next;
        f = f_next;
        g = g_next;
        report.objective.push(f);
        if change < opts.relative_tolerance {
            report.converged = true;
            break;
        }
    }

    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite classifier weights".into()));
    }
    Ok((
        ClassifierModel {
            weights: theta.slice(ndarray::s![1..]).to_vec(),
            intercept: theta[0],
            lambda,
            threshold: opts.threshold,
            columns: Vec::new(),
        },
        report,
    ))
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn two_loop(g: &Array1<f64>, history: &VecDeque<(Array1<f64>, Array1<f64>, f64)>) -> Array1<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.scaled_add(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.scaled_add(a - b, s);
    }
    -q
}

/// Confidences `σ(b + x·w)` and labels `confidence >= threshold`.
pub fn predict(m: &ClassifierModel, x: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<bool>)> {
    if x.ncols() != m.weights.len() {
        return Err(Error::Shape(format!(
            "design has {} columns, model has {} weights",
            x.ncols(),
            m.weights.len()
        )));
    }
    let w = ArrayView1::from(&m.weights);
    let conf: Vec<f64> = x.dot(&w).iter().map(|z| sigmoid(z + m.intercept)).collect();
    let labels = conf.iter().map(|&c| c >= m.threshold).collect();
    Ok((conf, labels))
}

/// `{0} ∪ {0.01 · 2^i : i = 0..=10}`.
pub fn default_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=10).map(|i| 0.01 * f64::from(1u32 << i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub validation_bcr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub model: ClassifierModel,
    pub validation_bcr: f64,
    pub scores: Vec<LambdaScore>,
}

/// Balanced classification rate; a rate with an empty class counts as 0.
pub fn balanced_rate(y: &[bool], predicted: &[bool]) -> Result<f64> {
    let c = confusion(y, predicted)?;
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(0.5 * (rate(c.tp, c.tp + c.fn_) + rate(c.tn, c.tn + c.fp)))
}

/// Fits one classifier per λ on the training rows of `x` and keeps the one
/// with the highest BCR on the validation rows; ties go to the smaller λ.
pub fn select_lambda(
    x: &Array2<f64>,
    y: &[bool],
    split: &RowSplit,
    lambda_grid: &[f64],
    opts: &LogRegOptions,
) -> Result<LambdaSelection> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid must be non-empty".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    let x_train = x.select(Axis(0), &split.train);
    let y_train: Vec<bool> = split.train.iter().map(|&r| y[r]).collect();
    let x_val = x.select(Axis(0), &split.validation);
    let y_val: Vec<bool> = split.validation.iter().map(|&r| y[r]).collect();

    let mut grid = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let results: Vec<Result<(ClassifierModel, f64)>> = grid
        .par_iter()
        .map(|&lambda| {
            let model = fit_logreg(x_train.view(), &y_train, lambda, opts)?;
            let bcr = if y_val.is_empty() {
                0.0
            } else {
                let (_, predicted) = predict(&model, x_val.view())?;
                balanced_rate(&y_val, &predicted)?
            };
            Ok((model, bcr))
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(ClassifierModel, f64)> = None;
    let mut last_error = None;
    for (&lambda, result) in grid.iter().zip(results) {
        match result {
            Ok((model, bcr)) => {
                scores.push(LambdaScore {
                    lambda,
                    validation_bcr: Some(bcr),
                });
                if best.as_ref().is_none_or(|b| bcr > b.1) {
                    best = Some((model, bcr));
                }
            }
            Err(e) => {
                scores.push(LambdaScore {
                    lambda,
                    validation_bcr: None,
                });
                last_error = Some(e);
            }
        }
    }
    match best {
        Some((model, validation_bcr)) => Ok(LambdaSelection {
            lambda: model.lambda,
            model,
            validation_bcr,
            scores,
        }),
        None => Err(last_error.expect("non-empty grid")),
    }
}
