//! Node features and the design matrices handed to the classifier:
//! features alone (`F`), features plus neighbor averages (`N`), and latent
//! factors plus features (`X = [U | V | F]`).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linkmf::LinkModel;

/// Dense per-node attributes, rows in graph node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub values: Array2<f64>,
    pub column_names: Vec<String>,
    /// `true` where the cell was observed; imputed cells are `false`.
    pub observed: Array2<bool>,
}

impl NodeFeatures {
    /// Fully observed features.
    pub fn new(values: Array2<f64>, column_names: Vec<String>) -> Result<Self> {
        if values.ncols() != column_names.len() {
            return Err(Error::Shape(format!(
                "{} feature columns but {} names",
                values.ncols(),
                column_names.len()
            )));
        }
        let observed = Array2::from_elem(values.dim(), true);
        Ok(Self {
            values,
            column_names,
            observed,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Rows reordered so that row `new` is old row `map[new]`.
    pub fn select_rows(&self, map: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), map),
            column_names: self.column_names.clone(),
            observed: self.observed.select(Axis(0), map),
        }
    }

    /// CSV with an `id` column followed by the feature columns.
    pub fn write_csv(&self, ids: &[String], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["id".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in ids.iter().zip(self.values.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

pub(crate) fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

/// Reads a feature CSV and aligns its rows to `graph`'s nodes through their
/// original ids. Rows for ids outside the graph are ignored. Missing cells
/// (empty or `NA`) are imputed with the observed column mean, or 0 when a
/// column has no observed value among the graph's nodes.
pub fn load_features(path: &Path, id_column: &str, graph: &Graph) -> Result<NodeFeatures> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let headers = reader.headers()?.clone();
    let id_at = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("id column {id_column:?} not in header"),
        })?;
    let column_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != id_at)
        .map(|(_, h)| h.to_string())
        .collect();
    let f = column_names.len();

    let node_of: HashMap<&str, usize> = graph
        .original_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = graph.node_count();
    let mut values = Array2::<f64>::zeros((n, f));
    let mut observed = Array2::from_elem((n, f), false);
    let mut seen = vec![false; n];

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let Some(&node) = node_of.get(record.get(id_at).unwrap_or("")) else {
            continue;
        };
        seen[node] = true;
        let mut col = 0;
        for (c, cell) in record.iter().enumerate() {
            if c == id_at {
                continue;
            }
            if !is_missing(cell) {
                let x: f64 = cell.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("column {:?}: non-numeric value {cell:?}", column_names[col]),
                })?;
                if !x.is_finite() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("column {:?}: non-finite value {cell:?}", column_names[col]),
                    });
                }
                values[[node, col]] = x;
                observed[[node, col]] = true;
            }
            col += 1;
        }
    }

    let missing: Vec<String> = (0..n)
        .filter(|&v| !seen[v])
        .map(|v| graph.original_id(v).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds {
            path: path.to_path_buf(),
            ids: missing,
        });
    }

    impute_column_means(&mut values, &observed);
    Ok(NodeFeatures {
        values,
        column_names,
        observed,
    })
}

fn impute_column_means(values: &mut Array2<f64>, observed: &Array2<bool>) {
    for c in 0..values.ncols() {
        let (sum, count) = values
            .column(c)
            .iter()
            .zip(observed.column(c))
            .filter(|(_, &o)| o)
            .fold((0.0, 0usize), |(s, k), (&x, _)| (s + x, k + 1));
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        for (x, &o) in values.column_mut(c).iter_mut().zip(observed.column(c)) {
            if !o {
                *x = mean;
            }
        }
    }
}

/// Row `i` is the mean of the feature rows of `i`'s neighbors; isolated
/// nodes get a zero row.
pub fn neighbor_average(features: &NodeFeatures, g: &Graph) -> Result<Array2<f64>> {
    if features.rows() != g.node_count() {
        return Err(Error::Shape(format!(
            "{} feature rows for a {}-node graph",
            features.rows(),
            g.node_count()
        )));
    }
    let mut out = Array2::<f64>::zeros(features.values.dim());
    for (v, mut row) in out.rows_mut().into_iter().enumerate() {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        for &w in nbrs {
            row += &features.values.row(w);
        }
        row /= nbrs.len() as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignMode {
    /// Features only.
    F,
    /// Features and neighbor-averaged features.
    N,
    /// Latent factors `U`, `V` and features.
    X,
}

impl DesignMode {
    pub const ALL: [DesignMode; 3] = [DesignMode::F, DesignMode::N, DesignMode::X];
}

impl fmt::Display for DesignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignMode::F => "F",
            DesignMode::N => "N",
            DesignMode::X => "X",
        })
    }
}

impl FromStr for DesignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F" | "f" => Ok(DesignMode::F),
            "N" | "n" => Ok(DesignMode::N),
            "X" | "x" => Ok(DesignMode::X),
            other => Err(Error::Config(format!("unknown design mode {other:?} (expected F, N or X)"))),
        }
    }
}

/// Where a design-matrix column came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnTag {
    Feature(String),
    NeighborAvg(String),
    LatentU(usize),
    LatentV(usize),
}

impl fmt::Display for ColumnTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnTag::Feature(name) => write!(f, "feature:{name}"),
            ColumnTag::NeighborAvg(name) => write!(f, "neighbor_avg:{name}"),
            ColumnTag::LatentU(c) => write!(f, "latent_u:{c}"),
            ColumnTag::LatentV(c) => write!(f, "latent_v:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: Array2<f64>,
    pub mode: DesignMode,
    pub columns: Vec<ColumnTag>,
}

impl DesignMatrix {
    pub fn column_labels(&self) -> Vec<String> {
        self.columns.iter().map(ToString::to_string).collect()
    }
}

/// Concatenates the blocks for `mode` column-wise, keeping graph row order.
pub fn assemble_design(
    mode: DesignMode,
    features: &NodeFeatures,
    g: &Graph,
    model: Option<&LinkModel>,
) -> Result<DesignMatrix> {
    let n = features.rows();
    if g.node_count() != n {
        return Err(Error::Shape(format!(
            "{n} feature rows for a {}-node graph",
            g.node_count()
        )));
    }
    let feature_tags = features.column_names.iter().cloned().map(ColumnTag::Feature);
    match mode {
        DesignMode::F => Ok(DesignMatrix {
            values: features.values.clone(),
            mode,
            columns: feature_tags.collect(),
        }),
        DesignMode::N => {
            let avg = neighbor_average(features, g)?;
            let values = concatenate![Axis(1), features.values, avg];
            let columns = feature_tags
                .chain(features.column_names.iter().cloned().map(ColumnTag::NeighborAvg))
                .collect();
            Ok(DesignMatrix {
                values,
                mode,
                columns,
            })
        }
        DesignMode::X => {
            let model = model
                .ok_or_else(|| Error::InvalidInput("mode X needs a fitted link model".into()))?;
            if model.node_count() != n {
                return Err(Error::Shape(format!(
                    "link model covers {} nodes, features have {n} rows",
                    model.node_count()
                )));
            }
            let k = model.k();
            let values = concatenate![Axis(1), model.u, model.v, features.values];
            let columns = (0..k)
                .map(ColumnTag::LatentU)
                .chain((0..k).map(ColumnTag::LatentV))
                .chain(feature_tags)
                .collect();
            Ok(DesignMatrix {
                values,
                mode,
                columns,
            })
        }
    }
}

/// Per-column shift and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 1 for constant columns.
    pub scale: Vec<f64>,
}

impl ColumnStats {
    /// Fits on the given rows of `values`.
    pub fn fit(values: &Array2<f64>, rows: &[usize]) -> Self {
        let sub = values.select(Axis(0), rows);
        let m = rows.len().max(1) as f64;
        let mut mean = Vec::with_capacity(values.ncols());
        let mut scale = Vec::with_capacity(values.ncols());
        for col in sub.columns() {
            let mu = col.sum() / m;
            let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, values: &Array2<f64>) -> Result<Array2<f64>> {
        if values.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardization fitted on {} columns, applied to {}",
                self.mean.len(),
                values.ncols()
            )));
        }
        let mut out = values.clone();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[c], self.scale[c]);
            col.mapv_inplace(|x| (x - mu) / sd);
        }
        Ok(out)
    }
}

/// Standardizes every column to mean 0 and unit population standard
/// deviation. Statistics come from `stats` when given, otherwise they are
/// fitted on `fit_rows` (all rows when `None`).
pub fn standardize(
    design: &DesignMatrix,
    fit_rows: Option<&[usize]>,
    stats: Option<&ColumnStats>,
) -> Result<(DesignMatrix, ColumnStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let all: Vec<usize>;
            let rows = match fit_rows {
                Some(r) => r,
                None => {
                    all = (0..design.values.nrows()).collect();
                    &all
                }
            };
            ColumnStats::fit(&design.values, rows)
        }
    };
    let values = stats.apply(&design.values)?;
    Ok((
        DesignMatrix {
            values,
            mode: design.mode,
            columns: design.columns.clone(),
        },
        stats,
    ))
}

/// Feature block of an assembled design, for consistency checks.
pub fn feature_block(design: &DesignMatrix) -> Array2<f64> {
    let idx: Vec<usize> = design
        .columns
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t, ColumnTag::Feature(_)))
        .map(|(i, _)| i)
        .collect();
    match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) if b + 1 - a == idx.len() => design.values.slice(s![.., a..=b]).to_owned(),
        _ => design.values.select(Axis(1), &idx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::fs;

    fn path3() -> Graph {
        Graph::with_ids(
            vec!["a".into(), "b".into(), "c".into()],
            [(0, 1), (1, 2)],
        )
        .unwrap()
    }

    #[test]
    fn loads_rows_in_graph_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "x,id,y\n1,c,10\n2,a,20\n3,b,30\n4,zz,40\n").unwrap();
        let f = load_features(&p, "id", &path3()).unwrap();
        assert_eq!(f.column_names, ["x", "y"]);
        assert_eq!(f.values, array![[2.0, 20.0], [3.0, 30.0], [1.0, 10.0]]);
    }

    #[test]
    fn missing_node_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "id,x\na,1\nc,2\n").unwrap();
        match load_features(&p, "id", &path3()) {
            Err(Error::MissingIds { ids, .. }) => assert_eq!(ids, ["b"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_cells_take_column_mean() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "id,x\na,1\nb,NA\nc,3\n").unwrap();
        let f = load_features(&p, "id", &path3()).unwrap();
        assert_eq!(f.values.column(0).to_vec(), vec![1.0, 2.0, 3.0]);
        assert!(!f.observed[[1, 0]]);
        fs::write(&p, "id,x\na,1\nb,\nc,3\n").unwrap();
        assert_eq!(load_features(&p, "id", &path3()).unwrap().values[[1, 0]], 2.0);
    }

    #[test]
    fn non_numeric_cell_reports_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "id,x\na,1\nb,oops\nc,3\n").unwrap();
        match load_features(&p, "id", &path3()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("\"x\""));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn neighbor_average_cases() {
        // node 2 has neighbors 0 = [1,0] and 1 = [0,1]; node 3 is isolated
        let g = Graph::from_edges(4, [(0, 2), (1, 2)]).unwrap();
        let f = NodeFeatures::new(
            array![[1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [7.0, 7.0]],
            vec!["p".into(), "q".into()],
        )
        .unwrap();
        let avg = neighbor_average(&f, &g).unwrap();
        assert_eq!(avg.row(2).to_vec(), vec![0.5, 0.5]);
        assert_eq!(avg.row(3).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn neighbor_average_of_constant_on_regular_graph() {
        let g = Graph::from_edges(6, (0..6).map(|i| (i, (i + 1) % 6))).unwrap();
        let f = NodeFeatures::new(Array2::from_elem((6, 1), 2.5), vec!["c".into()]).unwrap();
        assert!(neighbor_average(&f, &g).unwrap().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn design_widths() {
        let g = path3();
        let f = NodeFeatures::new(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], vec!["a".into(), "b".into()]).unwrap();
        let d_f = assemble_design(DesignMode::F, &f, &g, None).unwrap();
        assert_eq!(d_f.values, f.values);
        let d_n = assemble_design(DesignMode::N, &f, &g, None).unwrap();
        assert_eq!(d_n.values.ncols(), 4);
        assert_eq!(d_n.columns[3], ColumnTag::NeighborAvg("b".into()));
        let m = LinkModel::zeros(3, 4);
        let d_x = assemble_design(DesignMode::X, &f, &g, Some(&m)).unwrap();
        assert_eq!(d_x.values.ncols(), 4 + 4 + 2);
        assert_eq!(d_x.columns[0].to_string(), "latent_u:0");
        assert_eq!(d_x.columns[4].to_string(), "latent_v:0");
        assert_eq!(feature_block(&d_x), f.values);
        assert!(assemble_design(DesignMode::X, &f, &g, None).is_err());
        assert!(assemble_design(DesignMode::X, &f, &g, Some(&LinkModel::zeros(4, 1))).is_err());
    }

    #[test]
    fn x_width_for_reported_dimensions() {
        // k = 9 factors on 587 nodes with 3570 features
        let g = Graph::from_edges(587, [(0, 1)]).unwrap();
        let f = NodeFeatures::new(Array2::zeros((587, 3570)), (0..3570).map(|c| c.to_string()).collect()).unwrap();
        let d = assemble_design(DesignMode::X, &f, &g, Some(&LinkModel::zeros(587, 9))).unwrap();
        assert_eq!(d.values.ncols(), 3588);
    }

    #[test]
    fn standardize_cases() {
        let design = DesignMatrix {
            values: array![[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]],
            mode: DesignMode::F,
            columns: vec![ColumnTag::Feature("a".into()), ColumnTag::Feature("c".into())],
        };
        let (out, stats) = standardize(&design, None, None).unwrap();
        // population std of [1,2,3] is sqrt(2/3)
        let z = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((out.values[[0, 0]] + z).abs() < 1e-12 && (z - 1.2247).abs() < 1e-4);
        assert_eq!(out.values[[1, 0]], 0.0);
        assert!(out.values.column(1).iter().all(|&x| x == 0.0));

        let (again, _) = standardize(&design, None, Some(&stats)).unwrap();
        assert_eq!(again.values, out.values);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("X".parse::<DesignMode>().unwrap(), DesignMode::X);
        assert!("Q".parse::<DesignMode>().is_err());
    }
}
