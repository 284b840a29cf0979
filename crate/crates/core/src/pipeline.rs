//! End-to-end orchestration: ingestion, label pruning, k-core, link model,
//! design assembly, classification and evaluation, with every artifact
//! written as JSON or CSV next to a run manifest.
//!
//! One global seed fans out to fixed per-stage sub-seeds, so identical
//! configurations produce byte-identical artifacts. Relative paths in a
//! configuration are resolved against the working directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    default_lambda_grid, predict, select_lambda, split_rows_default, ClassifierModel, LambdaScore,
    LambdaSelection, LogRegOptions, RowSplit,
};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::features::{
    assemble_design, csv_io, is_missing, load_features, standardize, ColumnStats, DesignMode,
    NodeFeatures,
};
use crate::graph::{k_core, load_edge_list, network_stats, write_stats, Graph, StatsRecord};
use crate::linkmf::{
    link_prediction_accuracy, sample_pairs, select_hyperparameters, DescentOptions, GridScore,
    LinkModel, PairSplits, DEFAULT_GAMMA_GRID, DEFAULT_K_GRID,
};
use crate::util::derive_seed;

const SPLIT_STREAM: u64 = 1;
const PAIR_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Hyperparameter grids and optimizer settings shared by the pipeline and
/// the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub k_grid: Vec<usize>,
    pub gamma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// Standardize design columns with statistics from the training rows.
    pub standardize: bool,
    pub threshold: f64,
    pub percentile_step: u32,
    /// `seed` is ignored here; initialization uses a sub-seed of the run seed.
    pub descent: DescentOptions,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            k_grid: DEFAULT_K_GRID.to_vec(),
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            lambda_grid: default_lambda_grid(),
            standardize: true,
            threshold: 0.5,
            percentile_step: 5,
            descent: DescentOptions::default(),
        }
    }
}

impl ModelSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() || self.gamma_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::Config("k_grid, gamma_grid and lambda_grid must be non-empty".into()));
        }
        if self.k_grid.contains(&0) {
            return Err(Error::Config("k_grid entries must be >= 1".into()));
        }
        let bad = |v: &f64| !(v.is_finite() && *v >= 0.0);
        if self.gamma_grid.iter().any(bad) || self.lambda_grid.iter().any(bad) {
            return Err(Error::Config("gamma and lambda values must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(1..=100).contains(&self.percentile_step) {
            return Err(Error::Config("percentile_step must lie in 1..=100".into()));
        }
        Ok(())
    }

    fn logreg_options(&self) -> LogRegOptions {
        LogRegOptions {
            threshold: self.threshold,
            ..LogRegOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub edges: PathBuf,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Id column shared by the feature and label tables.
    #[serde(default = "default_id_column")]
    pub id_column: String,
    /// Treat each listed pair as undirected. When false only reciprocated
    /// pairs become edges.
    #[serde(default = "default_true")]
    pub symmetrize: bool,
    /// k-core order applied after label pruning; 0 keeps the whole graph.
    #[serde(default)]
    pub k_core_k: usize,
    #[serde(default = "default_mode")]
    pub mode: DesignMode,
    /// A label column to binarize, or `auto` to take the most frequent value
    /// of `target_column` as the positive class.
    #[serde(default = "default_target")]
    pub target: String,
    /// Column used by `target = "auto"`; defaults to the first non-id column.
    #[serde(default)]
    pub target_column: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSettings,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_id_column() -> String {
    "id".into()
}
fn default_true() -> bool {
    true
}
fn default_mode() -> DesignMode {
    DesignMode::X
}
fn default_target() -> String {
    "label".into()
}

impl PipelineConfig {
    /// A configuration with defaults everywhere except the edge list.
    pub fn new(edges: impl Into<PathBuf>) -> Self {
        Self {
            edges: edges.into(),
            features: None,
            labels: None,
            out_dir: default_out_dir(),
            id_column: default_id_column(),
            symmetrize: true,
            k_core_k: 0,
            mode: DesignMode::X,
            target: default_target(),
            target_column: None,
            seed: 0,
            model: ModelSettings::default(),
        }
    }

    /// Reads a TOML configuration, or a JSON one. A run manifest is accepted
    /// too, in which case its embedded configuration is used.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{}: {e}", path.display()));
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config: Self = if is_json {
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| bad(&e))?
        } else {
            toml::from_str(&text).map_err(|e| bad(&e))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.target.trim().is_empty() {
            return Err(Error::Config("target must name a column or be \"auto\"".into()));
        }
        Ok(())
    }

    pub fn target_rule(&self) -> TargetRule {
        if self.target.eq_ignore_ascii_case("auto") {
            TargetRule::MostFrequent(self.target_column.clone())
        } else {
            TargetRule::Column(self.target.clone())
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

/// Raw label table: one row per id, cells kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub path: PathBuf,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    /// `cells[r][c]` is row `r`, column `columns[c]`.
    pub cells: Vec<Vec<String>>,
}

pub fn load_label_table(path: &Path, id_column: &str) -> Result<LabelTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let headers = reader.headers()?.clone();
    let id_at = headers.iter().position(|h| h == id_column).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("id column {id_column:?} not in header"),
    })?;
    let columns = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != id_at)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(id_at).unwrap_or_default().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: r + 2,
                msg: format!("duplicate id {id:?}"),
            });
        }
        ids.push(id);
        cells.push(
            record
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != id_at)
                .map(|(_, v)| v.to_string())
                .collect(),
        );
    }
    Ok(LabelTable {
        path: path.to_path_buf(),
        columns,
        ids,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRule {
    /// Binarize the named column.
    Column(String),
    /// The most frequent value of the column (first non-id column when
    /// `None`) is the positive class; ties go to the lexicographically
    /// smaller value.
    MostFrequent(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSelection {
    pub column: String,
    /// Set for the most-frequent rule.
    pub positive_value: Option<String>,
    /// Ids with an observed target, in table order.
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    /// Ids dropped for a missing target.
    pub pruned: Vec<String>,
}

fn binarize(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        other => other.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v != 0.0),
    }
}

pub fn select_target(table: &LabelTable, rule: &TargetRule) -> Result<TargetSelection> {
    let column = match rule {
        TargetRule::Column(c) => c.clone(),
        TargetRule::MostFrequent(Some(c)) => c.clone(),
        TargetRule::MostFrequent(None) => table.columns.first().cloned().ok_or_else(|| {
            Error::InvalidInput(format!("{}: label table has no columns", table.path.display()))
        })?,
    };
    let at = table.columns.iter().position(|c| *c == column).ok_or_else(|| Error::Parse {
        path: table.path.clone(),
        line: 1,
        msg: format!("target column {column:?} not in header"),
    })?;
    let observed: Vec<(usize, &str)> = table
        .cells
        .iter()
        .enumerate()
        .filter_map(|(r, row)| {
            let cell = row.get(at).map_or("", String::as_str);
            (!is_missing(cell)).then_some((r, cell))
        })
        .collect();
    if observed.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: target column {column:?} has no observed values",
            table.path.display()
        )));
    }

    let (positive_value, labels) = match rule {
        TargetRule::Column(_) => {
            let labels = observed
                .iter()
                .map(|&(r, cell)| {
                    binarize(cell).ok_or_else(|| Error::Parse {
                        path: table.path.clone(),
                        line: r + 2,
                        msg: format!("cannot read {cell:?} as a binary label"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (None, labels)
        }
        TargetRule::MostFrequent(_) => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &(_, cell) in &observed {
                *counts.entry(cell).or_default() += 1;
            }
            // ascending iteration plus a strict comparison keeps the smaller value on ties
            let mut best: (&str, usize) = ("", 0);
            for (&value, &count) in &counts {
                if count > best.1 {
                    best = (value, count);
                }
            }
            let labels = observed.iter().map(|&(_, cell)| cell == best.0).collect();
            (Some(best.0.to_string()), labels)
        }
    };

    let kept: HashSet<usize> = observed.iter().map(|&(r, _)| r).collect();
    Ok(TargetSelection {
        column,
        positive_value,
        ids: observed.iter().map(|&(r, _)| table.ids[r].clone()).collect(),
        labels,
        pruned: (0..table.ids.len())
            .filter(|r| !kept.contains(r))
            .map(|r| table.ids[r].clone())
            .collect(),
    })
}

/// Restricts `g` to nodes whose original id has a label and returns the
/// labels in the order of the induced graph's nodes.
pub fn prune_to_labeled(g: &Graph, target: &TargetSelection) -> (Graph, Vec<bool>) {
    let label_of: HashMap<&str, bool> = target
        .ids
        .iter()
        .map(String::as_str)
        .zip(target.labels.iter().copied())
        .collect();
    let keep: Vec<usize> = (0..g.node_count())
        .filter(|&v| label_of.contains_key(g.original_id(v)))
        .collect();
    let (pruned, _) = g.induced(&keep);
    let labels = pruned.original_ids().iter().map(|id| label_of[id.as_str()]).collect();
    (pruned, labels)
}

/// Graph after loading, label pruning and k-core extraction, with labels
/// aligned to its nodes when a label table was given.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: Graph,
    pub target: Option<TargetSelection>,
    pub labels: Option<Vec<bool>>,
}

pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    let (mut graph, report) = load_edge_list(&config.edges, config.symmetrize)?;
    info!(
        "loaded {} nodes, {} edges ({} self-loops, {} duplicates, {} unreciprocated dropped)",
        graph.node_count(),
        graph.edge_count(),
        report.self_loops_dropped,
        report.duplicates_dropped,
        report.unreciprocated_dropped
    );
    let mut target = None;
    let mut labels = None;
    if let Some(path) = &config.labels {
        let table = load_label_table(path, &config.id_column)?;
        let selection = select_target(&table, &config.target_rule())?;
        let (pruned, aligned) = prune_to_labeled(&graph, &selection);
        info!(
            "target {:?}: {} labelled ids, graph pruned to {} nodes",
            selection.column,
            selection.ids.len(),
            pruned.node_count()
        );
        graph = pruned;
        labels = Some(aligned);
        target = Some(selection);
    }
    if config.k_core_k > 0 {
        let (core, map) = k_core(&graph, config.k_core_k);
        info!("{}-core keeps {} of {} nodes", config.k_core_k, core.node_count(), graph.node_count());
        labels = labels.map(|l| map.iter().map(|&old| l[old]).collect());
        graph = core;
    }
    if graph.node_count() == 0 {
        return Err(Error::EmptyGraph(format!(
            "no nodes left after pruning and {}-core extraction",
            config.k_core_k
        )));
    }
    Ok(Prepared {
        graph,
        target,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSummary {
    pub k: usize,
    pub gamma: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub test_pairs: usize,
    pub grid: Vec<GridScore>,
}

#[derive(Debug, Clone)]
pub struct Factorization {
    pub model: LinkModel,
    pub splits: PairSplits,
    pub summary: LinkSummary,
}

/// Samples pair splits and selects the link model over the configured grid.
pub fn factorize(g: &Graph, settings: &ModelSettings, seed: u64) -> Result<Factorization> {
    let splits = sample_pairs(g, derive_seed(seed, PAIR_STREAM))?;
    let opts = DescentOptions {
        seed: derive_seed(seed, INIT_STREAM),
        ..settings.descent.clone()
    };
    let sel = select_hyperparameters(g, &splits, &settings.k_grid, &settings.gamma_grid, &opts)?;
    let test_accuracy = link_prediction_accuracy(&sel.model, &splits.test)?;
    info!(
        "link model k={} gamma={} validation accuracy {:.4}, test accuracy {:.4}",
        sel.k, sel.gamma, sel.validation_accuracy, test_accuracy
    );
    let summary = LinkSummary {
        k: sel.k,
        gamma: sel.gamma,
        validation_accuracy: sel.validation_accuracy,
        test_accuracy,
        train_pairs: splits.train.len(),
        validation_pairs: splits.validation.len(),
        test_pairs: splits.test.len(),
        grid: sel.grid,
    };
    Ok(Factorization {
        model: sel.model,
        splits,
        summary,
    })
}

/// Row split shared by all modes of one run.
pub fn split_for(n: usize, seed: u64) -> Result<RowSplit> {
    let ids: Vec<usize> = (0..n).collect();
    split_rows_default(&ids, derive_seed(seed, SPLIT_STREAM))
}

/// A fitted classifier for one design mode with its predictions on every row.
#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub mode: DesignMode,
    pub standardization: Option<ColumnStats>,
    pub model: ClassifierModel,
    pub validation_bcr: f64,
    pub lambda_scores: Vec<LambdaScore>,
    pub confidence: Vec<f64>,
    pub predicted: Vec<bool>,
}

#[derive(Serialize)]
struct ClassifierArtifact<'a> {
    mode: String,
    model: &'a ClassifierModel,
    validation_bcr: f64,
    lambda_scores: &'a [LambdaScore],
    standardization: &'a Option<ColumnStats>,
}

impl ModeOutcome {
    pub fn to_json(&self) -> Result<String> {
        let artifact = ClassifierArtifact {
            mode: self.mode.to_string(),
            model: &self.model,
            validation_bcr: self.validation_bcr,
            lambda_scores: &self.lambda_scores,
            standardization: &self.standardization,
        };
        Ok(serde_json::to_string_pretty(&artifact)? + "\n")
    }

    /// Evaluation on the test rows of `split`.
    pub fn report(&self, g: &Graph, labels: &[bool], split: &RowSplit, percentile_step: u32) -> Result<EvalReport> {
        let pick = |rows: &[usize]| -> Vec<bool> { rows.iter().map(|&r| labels[r]).collect() };
        let y = pick(&split.test);
        let predicted: Vec<bool> = split.test.iter().map(|&r| self.predicted[r]).collect();
        let conf: Vec<f64> = split.test.iter().map(|&r| self.confidence[r]).collect();
        let degrees = split.test.iter().map(|&r| g.degree(r)).collect::<Result<Vec<_>>>()?;
        EvalReport::build(&self.mode.to_string(), &degrees, &y, &predicted, &conf, percentile_step)
    }

    /// `id,degree,split,label,confidence,predicted` for every row.
    pub fn predictions_csv(&self, g: &Graph, labels: &[bool], split: &RowSplit) -> String {
        let mut role = vec![""; labels.len()];
        for (rows, name) in [(&split.train, "train"), (&split.validation, "validation"), (&split.test, "test")] {
            for &r in rows {
                role[r] = name;
            }
        }
        let mut out = String::from("id,degree,split,label,confidence,predicted\n");
        for r in 0..labels.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                g.original_id(r),
                g.neighbors(r).len(),
                role[r],
                u8::from(labels[r]),
                self.confidence[r],
                u8::from(self.predicted[r])
            )
            .unwrap();
        }
        out
    }
}

/// Assembles the design for `mode`, selects λ on the validation rows and
/// predicts every row.
pub fn classify_mode(
    mode: DesignMode,
    features: &NodeFeatures,
    g: &Graph,
    link: Option<&LinkModel>,
    labels: &[bool],
    split: &RowSplit,
    settings: &ModelSettings,
) -> Result<ModeOutcome> {
    if labels.len() != g.node_count() {
        return Err(Error::Shape(format!(
            "{} labels for a {}-node graph",
            labels.len(),
            g.node_count()
        )));
    }
    let design = assemble_design(mode, features, g, link)?;
    let (design, standardization) = if settings.standardize {
        let (d, s) = standardize(&design, Some(&split.train), None)?;
        (d, Some(s))
    } else {
        (design, None)
    };
    let LambdaSelection {
        mut model,
        validation_bcr,
        scores,
        ..
    } = select_lambda(&design.values, labels, split, &settings.lambda_grid, &settings.logreg_options())?;
    model.columns = design.column_labels();
    let (confidence, predicted) = predict(&model, design.values.view())?;
    info!("mode {mode}: lambda {} validation BCR {validation_bcr:.4}", model.lambda);
    Ok(ModeOutcome {
        mode,
        standardization,
        model,
        validation_bcr,
        lambda_scores: scores,
        confidence,
        predicted,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub split: RowSplit,
    pub factorization: Option<Factorization>,
    pub link: Option<LinkSummary>,
    pub outcomes: Vec<ModeOutcome>,
    pub reports: Vec<EvalReport>,
}

/// Fits and evaluates several modes on one shared row split. The link model
/// is fitted once, and only when some mode needs it.
pub fn compare_modes(
    g: &Graph,
    features: &NodeFeatures,
    labels: &[bool],
    modes: &[DesignMode],
    settings: &ModelSettings,
    seed: u64,
) -> Result<Comparison> {
    settings.validate()?;
    let split = split_for(g.node_count(), seed)?;
    let factorization = if modes.contains(&DesignMode::X) {
        Some(factorize(g, settings, seed)?)
    } else {
        None
    };
    let link_model = factorization.as_ref().map(|f| &f.model);
    let mut outcomes = Vec::with_capacity(modes.len());
    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        let outcome = classify_mode(mode, features, g, link_model, labels, &split, settings)?;
        reports.push(outcome.report(g, labels, &split, settings.percentile_step)?);
        outcomes.push(outcome);
    }
    Ok(Comparison {
        split,
        link: factorization.as_ref().map(|f| f.summary.clone()),
        factorization,
        outcomes,
        reports,
    })
}

/// How far a run goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Stats,
    Kcore,
    Factorize,
    Train,
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub command: Command,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub stages: Vec<String>,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub stats: StatsRecord,
    pub link: Option<LinkSummary>,
    pub report: Option<EvalReport>,
}

struct Recorder<'a> {
    config: &'a PipelineConfig,
    command: Command,
    stages: Vec<String>,
    artifacts: Vec<String>,
}

impl Recorder<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn stage(&mut self, name: &str) {
        self.stages.push(name.to_string());
    }

    fn manifest(&self, error: Option<&Error>) -> Result<Manifest> {
        Ok(Manifest {
            status: if error.is_some() {
                RunStatus::Partial
            } else {
                RunStatus::Complete
            },
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config_hash: self.config.hash()?,
            config: self.config.clone(),
            stages: self.stages.clone(),
            artifacts: self.artifacts.clone(),
            error: error.map(ToString::to_string),
        })
    }

    fn steps(&mut self) -> Result<(StatsRecord, Option<LinkSummary>, Option<EvalReport>)> {
        let config = self.config;
        let needs_labels = self.command >= Command::Train;
        if needs_labels && config.labels.is_none() {
            return Err(Error::Config(format!("{:?} needs a labels file", self.command)));
        }
        let prepared = prepare(config)?;
        let g = &prepared.graph;
        if let Some(target) = &prepared.target {
            self.write("target.json", &(serde_json::to_string_pretty(target)? + "\n"))?;
        }
        self.stage("prepare");

        let stats = network_stats(g)?;
        write_stats(&stats, &self.path("stats.json"))?;
        self.artifacts.push("stats.json".into());
        self.stage("stats");
        match self.command {
            Command::Stats => return Ok((stats, None, None)),
            Command::Kcore => {
                g.write_edge_list(&self.path("graph.txt"))?;
                self.artifacts.push("graph.txt".into());
                return Ok((stats, None, None));
            }
            _ => {}
        }

        let factorization = if self.command == Command::Factorize || config.mode == DesignMode::X {
            let f = factorize(g, &config.model, config.seed)?;
            f.model.save(g.original_ids(), &self.path("link_model.json"))?;
            self.artifacts.push("link_model.json".into());
            for (sample, name) in [
                (&f.splits.train, "pairs_train.csv"),
                (&f.splits.validation, "pairs_validation.csv"),
                (&f.splits.test, "pairs_test.csv"),
            ] {
                sample.write_csv(&self.path(name))?;
                self.artifacts.push(name.into());
            }
            self.write("link_selection.json", &(serde_json::to_string_pretty(&f.summary)? + "\n"))?;
            self.stage("factorize");
            Some(f)
        } else {
            None
        };
        let link = factorization.as_ref().map(|f| f.summary.clone());
        if self.command == Command::Factorize {
            return Ok((stats, link, None));
        }

        let labels = prepared.labels.as_deref().expect("labels are loaded for training");
        let features = match &config.features {
            Some(path) => load_features(path, &config.id_column, g)?,
            None => NodeFeatures::new(Array2::zeros((g.node_count(), 0)), Vec::new())?,
        };
        let split = split_for(g.node_count(), config.seed)?;
        let outcome = classify_mode(
            config.mode,
            &features,
            g,
            factorization.as_ref().map(|f| &f.model),
            labels,
            &split,
            &config.model,
        )?;
        self.write("classifier.json", &outcome.to_json()?)?;
        self.write("predictions.csv", &outcome.predictions_csv(g, labels, &split))?;
        self.stage("train");
        if self.command == Command::Train {
            return Ok((stats, link, None));
        }

        let report = outcome.report(g, labels, &split, config.model.percentile_step)?;
        let written = report.write(&config.out_dir, "eval_")?;
        self.artifacts.extend(written);
        self.stage("evaluate");
        Ok((stats, link, Some(report)))
    }
}

/// Runs `command` and writes its artifacts plus `manifest.json` into the
/// output directory. On failure the manifest is still written, marked
/// partial and naming the error.
pub fn execute(config: &PipelineConfig, command: Command) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut rec = Recorder {
        config,
        command,
        stages: Vec::new(),
        artifacts: Vec::new(),
    };
    let outcome = rec.steps();
    let manifest = rec.manifest(outcome.as_ref().err())?;
    let path = rec.path(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    let (stats, link, report) = outcome?;
    Ok(RunSummary {
        manifest,
        stats,
        link,
        report,
    })
}

/// The full pipeline through evaluation.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    execute(config, Command::Run)
}

/// Rebuilds an evaluation report from a predictions file written by the
/// pipeline. Only rows marked `test` are scored when a `split` column exists.
pub fn evaluate_predictions(path: &Path, mode: &str, percentile_step: u32) -> Result<EvalReport> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    };
    let (degree_at, label_at, conf_at, pred_at) =
        (col("degree")?, col("label")?, col("confidence")?, col("predicted")?);
    let split_at = headers.iter().position(|h| h == "split");

    let mut degrees = Vec::new();
    let mut y = Vec::new();
    let mut conf = Vec::new();
    let mut predicted = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if split_at.is_some_and(|c| record.get(c) != Some("test")) {
            continue;
        }
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line: r + 2,
            msg: format!("unreadable {what}"),
        };
        let cell = |c: usize| record.get(c).unwrap_or_default();
        degrees.push(cell(degree_at).parse::<usize>().map_err(|_| bad("degree"))?);
        y.push(binarize(cell(label_at)).ok_or_else(|| bad("label"))?);
        conf.push(cell(conf_at).parse::<f64>().map_err(|_| bad("confidence"))?);
        predicted.push(binarize(cell(pred_at)).ok_or_else(|| bad("prediction"))?);
    }
    if y.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no rows to evaluate", path.display())));
    }
    EvalReport::build(mode, &degrees, &y, &predicted, &conf, percentile_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &str)]) -> LabelTable {
        LabelTable {
            path: PathBuf::from("labels.csv"),
            columns: vec!["town".into()],
            ids: rows.iter().map(|r| r.0.to_string()).collect(),
            cells: rows.iter().map(|r| vec![r.1.to_string()]).collect(),
        }
    }

    #[test]
    fn most_frequent_value_wins() {
        let mut rows = vec![];
        for i in 0..5 {
            rows.push((format!("a{i}"), "A"));
        }
        for i in 0..3 {
            rows.push((format!("b{i}"), "B"));
        }
        let rows: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let s = select_target(&table(&rows), &TargetRule::MostFrequent(None)).unwrap();
        assert_eq!(s.positive_value.as_deref(), Some("A"));
        assert_eq!(s.labels.iter().filter(|&&l| l).count(), 5);
    }

    #[test]
    fn tie_goes_to_smaller_value() {
        let t = table(&[("1", "Zed"), ("2", "Amy"), ("3", "Zed"), ("4", "Amy")]);
        let s = select_target(&t, &TargetRule::MostFrequent(None)).unwrap();
        assert_eq!(s.positive_value.as_deref(), Some("Amy"));
    }

    #[test]
    fn missing_targets_pruned_and_graph_reinduced() {
        let cells = ["1", "", "0", "NA", "1", "0", "", "1", "1", "0"];
        let rows: Vec<(String, &str)> = cells.iter().enumerate().map(|(i, c)| (i.to_string(), *c)).collect();
        let rows: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let s = select_target(&table(&rows), &TargetRule::Column("town".into())).unwrap();
        assert_eq!(s.ids.len(), 7);
        assert_eq!(s.pruned, vec!["1", "3", "6"]);

        let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let ring: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        let g = Graph::with_ids(ids, ring).unwrap();
        let (pruned, labels) = prune_to_labeled(&g, &s);
        assert_eq!(pruned.node_count(), 7);
        assert_eq!(labels, vec![true, false, true, false, true, true, false]);
        // the ring loses the edges touching 1, 3 and 6
        assert_eq!(pruned.edge_count(), 4);
    }

    #[test]
    fn all_missing_target_errors() {
        let t = table(&[("1", ""), ("2", "NA")]);
        assert!(select_target(&t, &TargetRule::Column("town".into())).is_err());
        assert!(select_target(&t, &TargetRule::MostFrequent(None)).is_err());
    }

    #[test]
    fn unreadable_binary_label_names_line() {
        let t = table(&[("1", "1"), ("2", "maybe")]);
        match select_target(&t, &TargetRule::Column("town".into())) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binarize_cells() {
        assert_eq!(binarize("Yes"), Some(true));
        assert_eq!(binarize("0"), Some(false));
        assert_eq!(binarize("2.5"), Some(true));
        assert_eq!(binarize("x"), None);
    }

    #[test]
    fn config_defaults_and_hash() {
        let c: PipelineConfig = toml::from_str("edges = \"e.txt\"\n[model]\nk_grid = [2]\n").unwrap();
        assert_eq!(c.mode, DesignMode::X);
        assert_eq!(c.model.k_grid, vec![2]);
        assert_eq!(c.model.gamma_grid, DEFAULT_GAMMA_GRID.to_vec());
        assert_eq!(c.hash().unwrap(), c.clone().hash().unwrap());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.hash().unwrap(), d.hash().unwrap());
        assert!(toml::from_str::<PipelineConfig>("edges = \"e\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let mut c = PipelineConfig::new("e.txt");
        c.model.lambda_grid.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
