//! Undirected simple graphs: ingestion, k-core extraction and the descriptive
//! statistics reported for a network (node/edge counts, density,
//! transitivity, components, degrees).

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph over contiguous node ids `0..n`.
///
/// Adjacency lists are sorted and free of duplicates and self-loops. Each
/// internal id keeps the identifier it had in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    edge_count: usize,
    original_ids: Vec<String>,
}

/// Counts of lines that did not become edges while loading an edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
    pub unreciprocated_dropped: usize,
}

impl Graph {
    /// Builds a graph from arbitrary pairs. Self-loops are dropped and
    /// repeated pairs (in either orientation) collapse to one edge.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let ids = (0..node_count).map(|i| i.to_string()).collect();
        Self::with_ids(ids, edges)
    }

    pub fn with_ids<I>(original_ids: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let n = original_ids.len();
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            for node in [u, v] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, nodes: n });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut twice = 0;
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            twice += list.len();
        }
        Ok(Self {
            adj,
            edge_count: twice / 2,
            original_ids,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn original_ids(&self) -> &[String] {
        &self.original_ids
    }

    pub fn original_id(&self, v: usize) -> &str {
        &self.original_ids[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> Result<usize> {
        self.adj
            .get(v)
            .map(Vec::len)
            .ok_or(Error::NodeOutOfRange {
                node: v,
                nodes: self.node_count(),
            })
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.adj.len() && self.adj[u].binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Subgraph induced by `keep` (old ids, any order). Returns the subgraph
    /// and the map from new ids to old ids, which follows ascending old id.
    pub fn induced(&self, keep: &[usize]) -> (Graph, Vec<usize>) {
        let mut old_ids: Vec<usize> = keep.to_vec();
        old_ids.sort_unstable();
        old_ids.dedup();
        let mut new_of = vec![usize::MAX; self.node_count()];
        for (new, &old) in old_ids.iter().enumerate() {
            new_of[old] = new;
        }
        let adj = old_ids
            .iter()
            .map(|&old| {
                self.adj[old]
                    .iter()
                    .filter_map(|&w| (new_of[w] != usize::MAX).then_some(new_of[w]))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        let edge_count = adj.iter().map(Vec::len).sum::<usize>() / 2;
        let original_ids = old_ids
            .iter()
            .map(|&old| self.original_ids[old].clone())
            .collect();
        (
            Graph {
                adj,
                edge_count,
                original_ids,
            },
            old_ids,
        )
    }

    /// Writes one `u v` line per edge using the original ids.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (u, v) in self.edges() {
            out.push_str(&self.original_ids[u]);
            out.push(' ');
            out.push_str(&self.original_ids[v]);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a whitespace-separated edge list. `#` lines and blank lines are
/// skipped; ids are assigned densely in first-seen order.
///
/// With `symmetrize` set, a line `a b` yields the undirected edge `{a, b}`
/// whichever direction it was listed in. Without it the file is read as a
/// directed graph and only reciprocated pairs (`a b` and `b a` both present)
/// become edges.
pub fn load_edge_list(path: &Path, symmetrize: bool) -> Result<(Graph, LoadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, symmetrize).map_err(|(line, msg)| match line {
        0 => Error::EmptyGraph(format!("{} ({msg})", path.display())),
        _ => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        },
    })
}

/// Line 0 in the error denotes an empty result rather than a syntax error.
fn parse_edge_list(
    text: &str,
    symmetrize: bool,
) -> std::result::Result<(Graph, LoadReport), (usize, String)> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut report = LoadReport::default();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let (a, b) = match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err((
                    lineno + 1,
                    format!("expected two whitespace-separated ids, got {line:?}"),
                ))
            }
        };
        report.lines += 1;
        let mut intern = |s: &str| -> usize {
            if let Some(&i) = index.get(s) {
                return i;
            }
            ids.push(s.to_owned());
            index.insert(s.to_owned(), ids.len() - 1);
            ids.len() - 1
        };
        let u = intern(a);
        let v = intern(b);
        if u == v {
            report.self_loops_dropped += 1;
            continue;
        }
        if directed.insert((u, v)) {
            order.push((u, v));
        } else {
            report.duplicates_dropped += 1;
        }
    }

    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(order.len());
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for &(u, v) in &order {
        let key = (u.min(v), u.max(v));
        let reciprocated = directed.contains(&(v, u));
        if !symmetrize && !reciprocated {
            report.unreciprocated_dropped += 1;
            continue;
        }
        if seen.insert(key) {
            edges.push(key);
        } else if symmetrize {
            report.duplicates_dropped += 1;
        }
    }

    if edges.is_empty() {
        return Err((0, "no edges after removing self-loops".into()));
    }
    let graph = Graph::with_ids(ids, edges).map_err(|e| (0, e.to_string()))?;
    Ok((graph, report))
}

/// Maximal subgraph in which every vertex has degree at least `k`, taken over
/// all components at once. Returns the core and its new-to-old id map; the
/// core may be empty.
pub fn k_core(g: &Graph, k: usize) -> (Graph, Vec<usize>) {
    let n = g.node_count();
    let mut degree = g.degrees();
    let mut removed = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| degree[v] < k).collect();
    for &v in &queue {
        removed[v] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if removed[w] {
                continue;
            }
            degree[w] -= 1;
            if degree[w] < k {
                removed[w] = true;
                queue.push_back(w);
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&v| !removed[v]).collect();
    g.induced(&keep)
}

/// Descriptive statistics of an undirected graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub nodes: usize,
    pub edges: usize,
    /// `m / (n (n - 1))`.
    pub density: f64,
    /// Global transitivity: `3 * triangles / connected triples`.
    pub transitivity: f64,
    pub components: usize,
    pub max_degree: usize,
    /// `2m / n`.
    pub avg_degree: f64,
}

pub fn network_stats(g: &Graph) -> Result<StatsRecord> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::EmptyGraph("statistics need at least one node".into()));
    }
    let m = g.edge_count();
    let degrees = g.degrees();

    let (density, transitivity) = if n == 1 {
        (0.0, 0.0)
    } else {
        let triples: u64 = degrees
            .iter()
            .map(|&d| (d as u64) * (d as u64).saturating_sub(1) / 2)
            .sum();
        let triangles = count_triangles(g);
        let t = if triples == 0 {
            0.0
        } else {
            3.0 * triangles as f64 / triples as f64
        };
        (m as f64 / (n as f64 * (n - 1) as f64), t)
    };

    Ok(StatsRecord {
        nodes: n,
        edges: m,
        density,
        transitivity,
        components: component_count(g),
        max_degree: degrees.iter().copied().max().unwrap_or(0),
        avg_degree: 2.0 * m as f64 / n as f64,
    })
}

fn count_triangles(g: &Graph) -> u64 {
    // Each triangle u < v < w is counted once from its smallest edge.
    let mut total = 0u64;
    for (u, v) in g.edges() {
        let (a, b) = (g.neighbors(u), g.neighbors(v));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    if a[i] > v {
                        total += 1;
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    total
}

fn component_count(g: &Graph) -> usize {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in g.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

pub fn write_stats(stats: &StatsRecord, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, stats)?;
    writeln!(file).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle_with_pendant() -> Graph {
        Graph::from_edges(4, [(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap()
    }

    fn complete(n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect()
    }

    #[test]
    fn symmetrized_pair_is_one_edge() {
        let (g, report) = parse_edge_list("a b\nb a\n", true).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(report.duplicates_dropped, 1);
        assert_eq!(g.original_ids(), ["a", "b"]);
    }

    #[test]
    fn self_loop_only_file_is_empty() {
        let err = parse_edge_list("a a\n", true).unwrap_err();
        assert_eq!(err.0, 0);
    }

    #[test]
    fn triangle_file() {
        let (g, _) = parse_edge_list("# comment\nx y\ny z\n\nz x\n", true).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (3, 3));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_edge_list("a b\nc\n", true).unwrap_err();
        assert_eq!(err.0, 2);
        let err = parse_edge_list("a b c\n", true).unwrap_err();
        assert_eq!(err.0, 1);
    }

    #[test]
    fn unsymmetrized_keeps_reciprocated_pairs_only() {
        let (g, report) = parse_edge_list("a b\nb a\nb c\n", false).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
        assert_eq!(report.unreciprocated_dropped, 1);
    }

    #[test]
    fn degrees() {
        let star = Graph::from_edges(3, [(0, 1), (0, 2)]).unwrap();
        assert_eq!(star.degree(0).unwrap(), 2);
        let isolated = Graph::from_edges(3, [(0, 1)]).unwrap();
        assert_eq!(isolated.degree(2).unwrap(), 0);
        let k5 = Graph::from_edges(5, complete(5)).unwrap();
        assert!((0..5).all(|v| k5.degree(v).unwrap() == 4));
        assert!(matches!(
            k5.degree(5),
            Err(Error::NodeOutOfRange { node: 5, nodes: 5 })
        ));
    }

    #[test]
    fn k_core_peels_pendant() {
        let (core, map) = k_core(&triangle_with_pendant(), 2);
        assert_eq!(core.node_count(), 3);
        assert_eq!(core.edge_count(), 3);
        assert_eq!(map, vec![0, 1, 2]);
    }

    #[test]
    fn k_core_of_path_is_empty() {
        let path = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let (core, map) = k_core(&path, 2);
        assert_eq!(core.node_count(), 0);
        assert!(map.is_empty());
    }

    #[test]
    fn k_core_keeps_k5_from_disjoint_union() {
        let mut edges = complete(5);
        edges.extend([(5, 6), (6, 7)]);
        let g = Graph::from_edges(8, edges).unwrap();
        let (core, map) = k_core(&g, 4);
        assert_eq!(map, vec![0, 1, 2, 3, 4]);
        assert_eq!(core.edge_count(), 10);
    }

    #[test]
    fn k_core_zero_is_identity() {
        let g = Graph::from_edges(5, [(0, 1), (3, 4)]).unwrap();
        let (core, map) = k_core(&g, 0);
        assert_eq!(core, g);
        assert_eq!(map, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn stats_of_triangle_and_path() {
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = network_stats(&tri).unwrap();
        assert_eq!(s.transitivity, 1.0);
        assert_eq!(s.components, 1);
        assert_eq!(s.density, 0.5);

        let path = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(network_stats(&path).unwrap().transitivity, 0.0);
    }

    #[test]
    fn stats_single_node() {
        let g = Graph::from_edges(1, []).unwrap();
        let s = network_stats(&g).unwrap();
        assert_eq!((s.density, s.transitivity, s.components), (0.0, 0.0, 1));
    }

    #[test]
    fn stats_counts_components_and_max_degree() {
        let g = triangle_with_pendant();
        let mut edges: Vec<_> = g.edges().collect();
        edges.push((5, 6));
        let g = Graph::from_edges(7, edges).unwrap();
        let s = network_stats(&g).unwrap();
        assert_eq!(s.components, 3);
        assert_eq!(s.max_degree, 3);
        // 1 triangle, triples: deg 2,2,3,1,0,1,1 -> 1+1+3 = 5
        assert!((s.transitivity - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn induced_subgraph_relabels() {
        let g = triangle_with_pendant();
        let (sub, map) = g.induced(&[3, 2]);
        assert_eq!(map, vec![2, 3]);
        assert_eq!(sub.edge_count(), 1);
        assert_eq!(sub.original_ids(), ["2", "3"]);
    }
}
