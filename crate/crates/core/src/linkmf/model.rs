use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sigmoid;

/// Parameters of the sigmoid-link factorization
/// `P(A_ij = 1) = σ(α + β_i + β_j + U_i · V_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub beta: Array1<f64>,
    pub alpha: f64,
}

impl LinkModel {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            u: Array2::zeros((n, k)),
            v: Array2::zeros((n, k)),
            beta: Array1::zeros(n),
            alpha: 0.0,
        }
    }

    /// Factor entries i.i.d. uniform in `[-scale, scale]`, zero biases.
    pub fn random<R: Rng>(n: usize, k: usize, scale: f64, alpha: f64, rng: &mut R) -> Self {
        let mut draw = |_: (usize, usize)| {
            if scale > 0.0 {
                rng.gen_range(-scale..=scale)
            } else {
                0.0
            }
        };
        let u = Array2::from_shape_fn((n, k), &mut draw);
        let v = Array2::from_shape_fn((n, k), &mut draw);
        Self {
            u,
            v,
            beta: Array1::zeros(n),
            alpha,
        }
    }

    pub fn node_count(&self) -> usize {
        self.beta.len()
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    /// Pre-activation `H_ij = α + β_i + β_j + U_i · V_j`.
    #[inline]
    pub fn logit(&self, i: usize, j: usize) -> f64 {
        self.alpha + self.beta[i] + self.beta[j] + self.u.row(i).dot(&self.v.row(j))
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node: i,
                nodes: self.node_count(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite()
            && self.beta.iter().all(|x| x.is_finite())
            && self.u.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.beta.len();
        if self.u.dim() != self.v.dim() || self.u.nrows() != n {
            return Err(Error::Shape(format!(
                "U {:?}, V {:?}, beta {}",
                self.u.dim(),
                self.v.dim(),
                n
            )));
        }
        Ok(())
    }

    /// Serializes with the original node ids so the factors can be joined
    /// back to source data.
    pub fn to_json(&self, ids: &[String]) -> Result<String> {
        let file = LinkModelFile {
            k: self.k(),
            alpha: self.alpha,
            beta: self.beta.to_vec(),
            u: rows(&self.u),
            v: rows(&self.v),
            id_map: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (i.to_string(), id.clone()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Inverse of [`to_json`](Self::to_json); returns the model and ids in
    /// internal-id order.
    pub fn from_json(text: &str) -> Result<(Self, Vec<String>)> {
        let file: LinkModelFile = serde_json::from_str(text)?;
        let n = file.beta.len();
        let to_matrix = |rows: &[Vec<f64>], name: &str| -> Result<Array2<f64>> {
            if rows.len() != n || rows.iter().any(|r| r.len() != file.k) {
                return Err(Error::Shape(format!("{name} is not {n}x{}", file.k)));
            }
            Ok(Array2::from_shape_fn((n, file.k), |(i, c)| rows[i][c]))
        };
        let model = LinkModel {
            u: to_matrix(&file.u, "U")?,
            v: to_matrix(&file.v, "V")?,
            beta: Array1::from(file.beta.clone()),
            alpha: file.alpha,
        };
        model.check_shapes()?;
        let mut ids = vec![String::new(); n];
        for (key, id) in file.id_map {
            let i: usize = key
                .parse()
                .map_err(|_| Error::InvalidInput(format!("id_map key {key:?} is not an index")))?;
            *ids.get_mut(i).ok_or(Error::NodeOutOfRange { node: i, nodes: n })? = id;
        }
        Ok((model, ids))
    }

    pub fn save(&self, ids: &[String], path: &Path) -> Result<()> {
        fs::write(path, self.to_json(ids)? + "\n").map_err(|e| Error::io(path, e))
    }
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Serialize, Deserialize)]
struct LinkModelFile {
    k: usize,
    alpha: f64,
    beta: Vec<f64>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    id_map: BTreeMap<String, String>,
}

/// Largest double strictly below 1.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Probability that `i` links to `j`, kept strictly inside (0, 1).
pub fn link_probability(m: &LinkModel, i: usize, j: usize) -> Result<f64> {
    m.check_index(i)?;
    m.check_index(j)?;
    if i == j {
        return Err(Error::InvalidInput(format!(
            "link probability of self-pair ({i}, {i})"
        )));
    }
    Ok(sigmoid(m.logit(i, j)).clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP))
}
