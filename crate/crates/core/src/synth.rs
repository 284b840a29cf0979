//! Planted-partition benchmark with known ground truth.
//!
//! Nodes are split into blocks; pairs link with a block-dependent
//! probability shifted on the logit scale by per-node biases. Labels follow
//! block parity with random flips, and features carry a tunable share of
//! label signal. Comparing the three design modes on such data shows when
//! latent community factors help.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{metrics_table, EvalReport};
use crate::features::{DesignMode, NodeFeatures};
use crate::graph::{network_stats, Graph, StatsRecord};
use crate::pipeline::{self, LinkSummary, ModelSettings};
use crate::util::{derive_seed, logit, rng, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Per-node logit biases are uniform in `[-spread, spread]`.
    #[serde(default)]
    pub degree_bias_spread: f64,
    pub label_flip_rate: f64,
    /// Share of feature columns that carry the label.
    pub feature_informative_frac: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to every feature.
    #[serde(default = "unit")]
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("p_in", self.p_in)?;
        prob("p_out", self.p_out)?;
        prob("label_flip_rate", self.label_flip_rate)?;
        prob("feature_informative_frac", self.feature_informative_frac)?;
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::InvalidInput("block sizes must all be >= 1".into()));
        }
        if !(self.degree_bias_spread >= 0.0 && self.degree_bias_spread.is_finite()) {
            return Err(Error::InvalidInput("degree_bias_spread must be >= 0".into()));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::InvalidInput("feature_noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// Block index of every node; blocks are contiguous id ranges.
    pub fn blocks(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
            .collect()
    }

    /// Expected degree of a node with zero bias in a block of `size`.
    fn expected_degree(&self, size: usize) -> f64 {
        let n = self.node_count();
        (size - 1) as f64 * self.p_in + (n - size) as f64 * self.p_out
    }
}

// sub-seed streams
const GRAPH_STREAM: u64 = 11;
const LABEL_STREAM: u64 = 12;
const FEATURE_STREAM: u64 = 13;

#[derive(Debug, Clone)]
pub struct SbmGraph {
    pub graph: Graph,
    pub blocks: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Samples every unordered pair independently with probability
/// `σ(logit(p) + b_u + b_v)`, `p` being `p_in` within a block and `p_out`
/// across blocks.
pub fn generate_sbm(spec: &SbmSpec) -> Result<SbmGraph> {
    spec.validate()?;
    let n = spec.node_count();
    let blocks = spec.blocks();
    let mut r = rng(derive_seed(spec.seed, GRAPH_STREAM));
    let spread = spec.degree_bias_spread;
    let bias: Vec<f64> = (0..n)
        .map(|_| if spread > 0.0 { r.gen_range(-spread..=spread) } else { 0.0 })
        .collect();
    let (logit_in, logit_out) = (logit(spec.p_in), logit(spec.p_out));

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let same = blocks[u] == blocks[v];
            let p = if spread == 0.0 {
                if same {
                    spec.p_in
                } else {
                    spec.p_out
                }
            } else {
                sigmoid(if same { logit_in } else { logit_out } + bias[u] + bias[v])
            };
            if r.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut warnings = Vec::new();
    for (b, &size) in spec.block_sizes.iter().enumerate() {
        let expected = spec.expected_degree(size);
        if expected < 1.0 {
            let msg = format!("block {b}: expected degree {expected:.3} is below 1");
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(SbmGraph {
        graph: Graph::from_edges(n, edges)?,
        blocks,
        warnings,
    })
}

/// Block parity (odd blocks positive), each label flipped independently with
/// probability `flip_rate`.
pub fn generate_labels(blocks: &[usize], flip_rate: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::InvalidInput(format!("flip rate must lie in [0, 1], got {flip_rate}")));
    }
    let mut r = rng(derive_seed(seed, LABEL_STREAM));
    Ok(blocks
        .iter()
        .map(|&b| {
            let parity = b % 2 == 1;
            if r.gen::<f64>() < flip_rate {
                !parity
            } else {
                parity
            }
        })
        .collect())
}

/// The first `round(frac · dim)` columns are `label + noise`, the rest pure
/// noise, with Gaussian noise of standard deviation `feature_noise`.
pub fn generate_features(spec: &SbmSpec, labels: &[bool]) -> Result<NodeFeatures> {
    spec.validate()?;
    if labels.len() != spec.node_count() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            spec.node_count()
        )));
    }
    let dim = spec.feature_dim;
    let informative = (spec.feature_informative_frac * dim as f64).round() as usize;
    let mut r = rng(derive_seed(spec.seed, FEATURE_STREAM));
    let values = Array2::from_shape_fn((labels.len(), dim), |(i, c)| {
        let noise: f64 = r.sample(StandardNormal);
        let signal = if c < informative && labels[i] { 1.0 } else { 0.0 };
        signal + spec.feature_noise * noise
    });
    let names = (0..dim)
        .map(|c| {
            if c < informative {
                format!("signal_{c}")
            } else {
                format!("noise_{c}")
            }
        })
        .collect();
    NodeFeatures::new(values, names)
}

/// A generated instance: graph, blocks, labels and features.
#[derive(Debug, Clone)]
pub struct SbmInstance {
    pub graph: Graph,
    pub blocks: Vec<usize>,
    pub labels: Vec<bool>,
    pub features: NodeFeatures,
    pub warnings: Vec<String>,
}

pub fn generate_instance(spec: &SbmSpec) -> Result<SbmInstance> {
    let SbmGraph {
        graph,
        blocks,
        warnings,
    } = generate_sbm(spec)?;
    let labels = generate_labels(&blocks, spec.label_flip_rate, spec.seed)?;
    let features = generate_features(spec, &labels)?;
    Ok(SbmInstance {
        graph,
        blocks,
        labels,
        features,
        warnings,
    })
}

impl SbmInstance {
    /// Writes `edges.txt`, `features.csv` and `labels.csv` in the formats the
    /// ingestion path reads.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.graph.write_edge_list(&dir.join("edges.txt"))?;
        self.features
            .write_csv(self.graph.original_ids(), &dir.join("features.csv"))?;
        let mut out = String::from("id,label\n");
        for (id, &l) in self.graph.original_ids().iter().zip(&self.labels) {
            out.push_str(&format!("{id},{}\n", u8::from(l)));
        }
        let path = dir.join("labels.csv");
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub spec: SbmSpec,
    pub stats: StatsRecord,
    pub warnings: Vec<String>,
    pub link: Option<LinkSummary>,
    pub reports: Vec<EvalReport>,
    pub table: String,
}

impl BenchmarkReport {
    pub fn report(&self, mode: DesignMode) -> Option<&EvalReport> {
        let name = mode.to_string();
        self.reports.iter().find(|r| r.mode == name)
    }

    pub fn accuracy(&self, mode: DesignMode) -> Option<f64> {
        self.report(mode).map(|r| r.metrics.accuracy)
    }
}

impl BenchmarkReport {
    /// Writes `benchmark.json`, `table.txt` and one `<mode>_` prefixed report
    /// set per mode; returns the file names.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        for (name, text) in [
            ("benchmark.json", serde_json::to_string_pretty(self)? + "\n"),
            ("table.txt", self.table.clone()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(name.to_string());
        }
        for report in &self.reports {
            written.extend(report.write(dir, &format!("{}_", report.mode))?);
        }
        Ok(written)
    }
}

/// Benchmark configuration file: an `[sbm]` table plus optional `[model]`
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub sbm: SbmSpec,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default = "default_bench_dir")]
    pub out_dir: PathBuf,
}

fn default_bench_dir() -> PathBuf {
    PathBuf::from("bench")
}

impl BenchmarkConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{}: {e}", path.display()));
        let config: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| bad(&e))?
        } else {
            toml::from_str(&text).map_err(|e| bad(&e))?
        };
        config.sbm.validate()?;
        config.model.validate()?;
        Ok(config)
    }
}

/// Runs modes F, N and X on one generated instance with a single shared row
/// split and reports them side by side.
pub fn run_benchmark(spec: &SbmSpec, settings: &ModelSettings) -> Result<BenchmarkReport> {
    let instance = generate_instance(spec)?;
    let stats = network_stats(&instance.graph)?;
    let outcomes = pipeline::compare_modes(
        &instance.graph,
        &instance.features,
        &instance.labels,
        &DesignMode::ALL,
        settings,
        spec.seed,
    )?;
    let table = {
        let rows: Vec<(String, &crate::eval::MetricsRecord)> = outcomes
            .reports
            .iter()
            .map(|r| (r.mode.clone(), &r.metrics))
            .collect();
        let refs: Vec<(&str, &crate::eval::MetricsRecord)> =
            rows.iter().map(|(m, r)| (m.as_str(), *r)).collect();
        metrics_table(&refs)
    };
    Ok(BenchmarkReport {
        spec: spec.clone(),
        stats,
        warnings: instance.warnings,
        link: outcomes.link,
        reports: outcomes.reports,
        table,
    })
}
