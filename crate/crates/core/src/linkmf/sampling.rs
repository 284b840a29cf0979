use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Train,
    Validation,
    Test,
}

/// Labelled ordered node pairs drawn from the off-diagonal adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pairs: Vec<Pair>,
    role: SampleRole,
}

impl PairSample {
    pub fn new(pairs: Vec<Pair>, role: SampleRole) -> Self {
        Self { pairs, role }
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn role(&self) -> SampleRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }

    pub fn non_edge_count(&self) -> usize {
        self.len() - self.edge_count()
    }

    pub fn fraction_edges(&self) -> f64 {
        self.edge_count() as f64 / self.len() as f64
    }

    /// `i,j,label` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("i,j,label\n");
        for p in &self.pairs {
            out.push_str(&format!("{},{},{}\n", p.i, p.j, u8::from(p.label)));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Train, validation and test pair samples for the link model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSplits {
    pub train: PairSample,
    pub validation: PairSample,
    pub test: PairSample,
}

/// Draws the three disjoint pair samples over ordered pairs, with `ω = 2m`
/// ordered edge entries:
///
/// * train: `ω/2` edge entries and `ω` non-edges,
/// * validation: `⌊ω/4⌋` edge entries and `ω/2` non-edges,
/// * test: the remaining edge entries and `ω/2` further non-edges.
///
/// Everything is drawn without replacement and depends only on `seed`.
pub fn sample_pairs(g: &Graph, seed: u64) -> Result<PairSplits> {
    let n = g.node_count();
    let omega = 2 * g.edge_count();
    if omega < 4 {
        return Err(Error::InvalidInput(format!(
            "pair sampling needs at least 2 undirected edges, graph has {}",
            g.edge_count()
        )));
    }
    let zeta = n * (n - 1) - omega;
    let half = omega / 2;
    let needed = 2 * omega;
    if zeta < needed {
        return Err(Error::InsufficientNonEdges {
            needed,
            available: zeta,
        });
    }

    let mut rng = rng(seed);

    let mut edges: Vec<(usize, usize)> = g.edges().flat_map(|(u, v)| [(u, v), (v, u)]).collect();
    edges.sort_unstable();
    edges.shuffle(&mut rng);

    let non_edges = draw_non_edges(g, needed, zeta, &mut rng);

    let n_train = half;
    let n_val = omega / 4;
    let build = |e: &[(usize, usize)], ne: &[(usize, usize)], role| {
        let pairs = e
            .iter()
            .map(|&(i, j)| Pair { i, j, label: true })
            .chain(ne.iter().map(|&(i, j)| Pair { i, j, label: false }))
            .collect();
        PairSample::new(pairs, role)
    };

    Ok(PairSplits {
        train: build(&edges[..n_train], &non_edges[..omega], SampleRole::Train),
        validation: build(
            &edges[n_train..n_train + n_val],
            &non_edges[omega..omega + half],
            SampleRole::Validation,
        ),
        test: build(
            &edges[n_train + n_val..],
            &non_edges[omega + half..],
            SampleRole::Test,
        ),
    })
}

/// `count` distinct ordered non-edges in random order.
fn draw_non_edges<R: Rng>(g: &Graph, count: usize, available: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let n = g.node_count();
    // Rejection sampling is cheap while non-edges are plentiful; otherwise
    // enumerate and shuffle.
    if count * 4 <= available && n > 1 {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j && !g.has_edge(i, j) && seen.insert((i, j)) {
                out.push((i, j));
            }
        }
        out
    } else {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && !g.has_edge(i, j))
            .collect();
        let (picked, _) = all.partial_shuffle(rng, count);
        picked.to_vec()
    }
}
