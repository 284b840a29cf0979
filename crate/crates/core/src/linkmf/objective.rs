use ndarray::{Array1, Array2, CowArray, Ix1, Ix2};

use super::model::LinkModel;
use super::sampling::PairSample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::util::{log_sigmoid, sigmoid};

/// Class-balancing constants of the cost and the L2 strength.
///
/// `omega` and `zeta` count the ordered one- and zero-entries of the whole
/// off-diagonal adjacency matrix, not of whatever sample is being scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub omega: usize,
    pub zeta: usize,
    pub gamma: f64,
}

impl CostWeights {
    pub fn new(omega: usize, zeta: usize, gamma: f64) -> Result<Self> {
        if omega == 0 || zeta == 0 {
            return Err(Error::InvalidInput(format!(
                "cost weights need at least one edge and one non-edge (omega={omega}, zeta={zeta})"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { omega, zeta, gamma })
    }

    /// `omega = 2m`, `zeta = n(n-1) - 2m`; the diagonal is excluded.
    pub fn from_graph(g: &Graph, gamma: f64) -> Result<Self> {
        let n = g.node_count();
        let omega = 2 * g.edge_count();
        let zeta = (n * n.saturating_sub(1)).saturating_sub(omega);
        Self::new(omega, zeta, gamma)
    }

    #[inline]
    fn edge_weight(&self) -> f64 {
        1.0 / (2.0 * self.omega as f64)
    }

    #[inline]
    fn non_edge_weight(&self) -> f64 {
        1.0 / (2.0 * self.zeta as f64)
    }

    /// Derivative of the data term with respect to `H` for one pair:
    /// `σ(H)/(2ζ) - A (σ(H)/(2ζ) + 1/(2ω) · 1/(1+e^H))`, which reduces to
    /// `-σ(-H)/(2ω)` on edges and `σ(H)/(2ζ)` on non-edges.
    #[inline]
    fn residual(&self, h: f64, label: bool) -> f64 {
        if label {
            -self.edge_weight() * sigmoid(-h)
        } else {
            self.non_edge_weight() * sigmoid(h)
        }
    }
}

/// Partial derivatives of the cost with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub beta: Array1<f64>,
    pub alpha: f64,
}

impl Gradients {
    pub fn squared_norm(&self) -> f64 {
        self.u.iter().chain(self.v.iter()).chain(self.beta.iter()).map(|x| x * x).sum::<f64>()
            + self.alpha * self.alpha
    }
}

fn check(m: &LinkModel, sample: &PairSample) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("cost over an empty pair sample".into()));
    }
    let n = m.node_count();
    for p in sample.pairs() {
        if p.i >= n || p.j >= n {
            return Err(Error::NodeOutOfRange {
                node: p.i.max(p.j),
                nodes: n,
            });
        }
    }
    Ok(())
}

/// Row-major copies of the parameters (borrowed when already contiguous)
/// plus each node's share of the ridge term.
struct Flat<'m> {
    u: CowArray<'m, f64, Ix2>,
    v: CowArray<'m, f64, Ix2>,
    beta: CowArray<'m, f64, Ix1>,
    k: usize,
}

impl<'m> Flat<'m> {
    fn new(m: &'m LinkModel) -> Self {
        Self {
            u: m.u.as_standard_layout(),
            v: m.v.as_standard_layout(),
            beta: m.beta.as_standard_layout(),
            k: m.k(),
        }
    }

    fn slices(&self) -> (&[f64], &[f64], &[f64]) {
        let contiguous = "standard layout is contiguous";
        (
            self.u.as_slice().expect(contiguous),
            self.v.as_slice().expect(contiguous),
            self.beta.as_slice().expect(contiguous),
        )
    }

    /// `(‖U_i‖² + β_i², ‖V_i‖² + β_i²)` for every node.
    fn ridge(&self) -> (Vec<f64>, Vec<f64>) {
        let (u, v, beta) = self.slices();
        let sq = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
        let k = self.k.max(1);
        let rows: Vec<f64> = u.chunks(k).zip(beta).map(|(r, b)| sq(r) + b * b).collect();
        let cols: Vec<f64> = v.chunks(k).zip(beta).map(|(r, b)| sq(r) + b * b).collect();
        (rows, cols)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted cross-entropy over the sampled pairs plus, per pair,
/// `γ(‖U_i‖² + ‖V_j‖² + β_i² + β_j²)`.
pub fn cost(m: &LinkModel, sample: &PairSample, w: &CostWeights) -> Result<f64> {
    check(m, sample)?;
    Ok(cost_unchecked(m, sample, w))
}

pub(crate) fn cost_unchecked(m: &LinkModel, sample: &PairSample, w: &CostWeights) -> f64 {
    let (we, wn) = (w.edge_weight(), w.non_edge_weight());
    let flat = Flat::new(m);
    let (u, v, beta) = flat.slices();
    let k = flat.k;
    let ridge = (w.gamma > 0.0).then(|| flat.ridge());
    let mut total = 0.0;
    for p in sample.pairs() {
        let (i, j) = (p.i, p.j);
        let h = m.alpha + beta[i] + beta[j] + dot(&u[i * k..(i + 1) * k], &v[j * k..(j + 1) * k]);
        total += if p.label {
            -we * log_sigmoid(h)
        } else {
            -wn * log_sigmoid(-h)
        };
        if let Some((rows, cols)) = &ridge {
            total += w.gamma * (rows[i] + cols[j]);
        }
    }
    total
}

/// Analytic gradient of [`cost`]. A pair `(i, j)` feeds `U_i`, `V_j`,
/// `α`, and both `β_i` and `β_j`, so every `β` collects the terms where
/// its node is the row index and those where it is the column index.
pub fn gradients(m: &LinkModel, sample: &PairSample, w: &CostWeights) -> Result<Gradients> {
    check(m, sample)?;
    Ok(cost_and_gradients_unchecked(m, sample, w).1)
}

pub(crate) fn cost_and_gradients_unchecked(
    m: &LinkModel,
    sample: &PairSample,
    w: &CostWeights,
) -> (f64, Gradients) {
    let (n, k) = m.u.dim();
    let flat = Flat::new(m);
    let (u, v, beta) = flat.slices();
    let ridge = (w.gamma > 0.0).then(|| flat.ridge());
    let mut gu = vec![0.0; n * k];
    let mut gv = vec![0.0; n * k];
    let mut gb = vec![0.0; n];
    let mut ga = 0.0;
    let (we, wn) = (w.edge_weight(), w.non_edge_weight());
    let mut total = 0.0;

    for p in sample.pairs() {
        let (i, j) = (p.i, p.j);
        let (ui, vj) = (&u[i * k..(i + 1) * k], &v[j * k..(j + 1) * k]);
        let h = m.alpha + beta[i] + beta[j] + dot(ui, vj);
        total += if p.label {
            -we * log_sigmoid(h)
        } else {
            -wn * log_sigmoid(-h)
        };
        let r = w.residual(h, p.label);
        for (g, &x) in gu[i * k..(i + 1) * k].iter_mut().zip(vj) {
            *g += r * x;
        }
        for (g, &x) in gv[j * k..(j + 1) * k].iter_mut().zip(ui) {
            *g += r * x;
        }
        gb[i] += r;
        gb[j] += r;
        ga += r;
        if let Some((rows, cols)) = &ridge {
            total += w.gamma * (rows[i] + cols[j]);
        }
    }

    // The ridge gradient of a parameter is 2γ times its value once per pair
    // it appears in, so it is added in bulk from the pair counts.
    if w.gamma > 0.0 {
        let gamma2 = 2.0 * w.gamma;
        let mut row_count = vec![0.0; n];
        let mut col_count = vec![0.0; n];
        for p in sample.pairs() {
            row_count[p.i] += 1.0;
            col_count[p.j] += 1.0;
        }
        for i in 0..n {
            let (cr, cc) = (row_count[i], col_count[i]);
            for c in 0..k {
                gu[i * k + c] += gamma2 * cr * u[i * k + c];
                gv[i * k + c] += gamma2 * cc * v[i * k + c];
            }
            gb[i] += gamma2 * (cr + cc) * beta[i];
        }
    }

    let grads = Gradients {
        u: Array2::from_shape_vec((n, k), gu).expect("n*k gradient entries"),
        v: Array2::from_shape_vec((n, k), gv).expect("n*k gradient entries"),
        beta: Array1::from_vec(gb),
        alpha: ga,
    };
    (total, grads)
}

/// Cost and gradient in one pass over the sample.
pub fn cost_and_gradients(
    m: &LinkModel,
    sample: &PairSample,
    w: &CostWeights,
) -> Result<(f64, Gradients)> {
    check(m, sample)?;
    Ok(cost_and_gradients_unchecked(m, sample, w))
}
