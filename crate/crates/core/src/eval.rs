//! Evaluation of binary predictions: global metrics, the confidence-ranked
//! precision/recall curve, accuracy among the most confident predictions,
//! and per-degree breakdowns with standard errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(y: &[bool], predicted: &[bool]) -> Result<Confusion> {
    if y.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} predictions",
            y.len(),
            predicted.len()
        )));
    }
    let mut c = Confusion::default();
    for (&truth, &guess) in y.iter().zip(predicted) {
        match (truth, guess) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub rmse: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub bcr: f64,
    /// `-Σ [y ln ỹ + (1 - y) ln(1 - ỹ)]`; lower is better.
    pub neg_log_likelihood: f64,
    pub pct_pred_positive: f64,
    pub pct_actual_positive: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(y: &[bool], conf: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InvalidInput("no predictions to evaluate".into()));
    }
    if y.len() != conf.len() {
        return Err(Error::Shape(format!("{} labels but {} confidences", y.len(), conf.len())));
    }
    if let Some(c) = conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidInput(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// Global metrics. Precision, recall and F1 are 0 when their denominators
/// vanish.
pub fn global_metrics(y: &[bool], predicted: &[bool], conf: &[f64]) -> Result<MetricsRecord> {
    check_lengths(y, conf)?;
    let c = confusion(y, predicted)?;
    let n = y.len() as f64;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let sq: f64 = y
        .iter()
        .zip(conf)
        .map(|(&t, &p)| (p - f64::from(u8::from(t))).powi(2))
        .sum();
    let nll: f64 = -y
        .iter()
        .zip(conf)
        .map(|(&t, &p)| if t { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>();
    Ok(MetricsRecord {
        accuracy: (c.tp + c.tn) as f64 / n,
        rmse: (sq / n).sqrt(),
        precision,
        recall,
        f1,
        bcr: 0.5 * (recall + ratio(c.tn, c.tn + c.fp)),
        neg_log_likelihood: nll,
        pct_pred_positive: (c.tp + c.fp) as f64 / n,
        pct_actual_positive: (c.tp + c.fn_) as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Pr,
    AccuracyAtPercentile,
    PerDegreeAccuracy,
    PerDegreePerplexity,
}

/// A plot-ready series. `err` carries one standard error per point for the
/// per-degree kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub kind: CurveKind,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err: Option<Vec<f64>>,
}

impl CurveSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,err\n");
        for (i, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
            match &self.err {
                Some(e) => writeln!(out, "{x},{y},{}", e[i]).unwrap(),
                None => writeln!(out, "{x},{y},").unwrap(),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Indices sorted by decreasing `|ỹ - 0.5|`, ties by index.
pub fn confidence_order(conf: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = (conf[a] - 0.5).abs();
        let cb = (conf[b] - 0.5).abs();
        cb.total_cmp(&ca).then(a.cmp(&b))
    });
    order
}

/// Precision and recall of the `r` most confident predictions, `r = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Trapezoidal area over recall, starting from recall 0 at the first
    /// prefix's precision.
    pub area: f64,
}

impl PrCurve {
    /// Recall on x and precision on y. Recall is non-decreasing but repeats
    /// wherever a prefix adds no true positive.
    pub fn series(&self) -> CurveSeries {
        CurveSeries {
            kind: CurveKind::Pr,
            x: self.recall.clone(),
            y: self.precision.clone(),
            err: None,
        }
    }
}

/// Predictions are positive when `ỹ >= 0.5`. Recall within a prefix is
/// relative to all positive instances, so the last point reproduces the
/// global precision and recall.
pub fn pr_curve(y: &[bool], conf: &[f64]) -> Result<PrCurve> {
    check_lengths(y, conf)?;
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 {
        return Err(Error::InvalidInput("precision/recall curve needs a positive instance".into()));
    }
    let order = confidence_order(conf);
    let (mut tp, mut predicted_pos) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(y.len());
    let mut recall = Vec::with_capacity(y.len());
    for &i in &order {
        if conf[i] >= 0.5 {
            predicted_pos += 1;
            if y[i] {
                tp += 1;
            }
        }
        precision.push(ratio(tp, predicted_pos));
        recall.push(ratio(tp, positives));
    }
    let mut area = 0.0;
    let (mut prev_r, mut prev_p) = (0.0, precision[0]);
    for (&r, &p) in recall.iter().zip(&precision) {
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Ok(PrCurve {
        precision,
        recall,
        area,
    })
}

/// Accuracy of the top `p` percent most confident predictions for
/// `p = step, 2·step, …, 100`. A prefix holds `⌈p·n/100⌉` predictions (at
/// least one).
pub fn accuracy_at_percentile(y: &[bool], conf: &[f64], predicted: &[bool], step: u32) -> Result<CurveSeries> {
    check_lengths(y, conf)?;
    if predicted.len() != y.len() {
        return Err(Error::Shape(format!("{} labels but {} predictions", y.len(), predicted.len())));
    }
    if step == 0 || step > 100 {
        return Err(Error::InvalidInput(format!("percentile step must be in 1..=100, got {step}")));
    }
    let order = confidence_order(conf);
    let mut correct_prefix = Vec::with_capacity(y.len() + 1);
    correct_prefix.push(0usize);
    for &i in &order {
        let last = *correct_prefix.last().unwrap();
        correct_prefix.push(last + usize::from(y[i] == predicted[i]));
    }
    let n = y.len();
    let mut percentiles: Vec<u32> = (1..=100 / step).map(|i| i * step).collect();
    if percentiles.last() != Some(&100) {
        percentiles.push(100);
    }
    let mut xs = Vec::with_capacity(percentiles.len());
    let mut ys = Vec::with_capacity(percentiles.len());
    for p in percentiles {
        let count = ((p as usize * n).div_ceil(100)).clamp(1, n);
        xs.push(f64::from(p));
        ys.push(correct_prefix[count] as f64 / count as f64);
    }
    Ok(CurveSeries {
        kind: CurveKind::AccuracyAtPercentile,
        x: xs,
        y: ys,
        err: None,
    })
}

/// Groups `values[i]` (belonging to graph node `nodes[i]`) by node degree and
/// reports each group's mean with standard error `s / √size`, where `s` is
/// the sample standard deviation; singleton groups get error 0.
pub fn per_degree_series(nodes: &[usize], values: &[f64], g: &Graph, kind: CurveKind) -> Result<CurveSeries> {
    let degrees = nodes.iter().map(|&v| g.degree(v)).collect::<Result<Vec<_>>>()?;
    per_degree_series_by(&degrees, values, kind)
}

/// [`per_degree_series`] with the degree of each value given directly.
pub fn per_degree_series_by(degrees: &[usize], values: &[f64], kind: CurveKind) -> Result<CurveSeries> {
    if degrees.len() != values.len() {
        return Err(Error::Shape(format!("{} degrees but {} values", degrees.len(), values.len())));
    }
    if !matches!(kind, CurveKind::PerDegreeAccuracy | CurveKind::PerDegreePerplexity) {
        return Err(Error::InvalidInput(format!("{kind:?} is not a per-degree series")));
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&d, &val) in degrees.iter().zip(values) {
        groups.entry(d).or_default().push(val);
    }
    let mut x = Vec::with_capacity(groups.len());
    let mut y = Vec::with_capacity(groups.len());
    let mut err = Vec::with_capacity(groups.len());
    for (degree, vals) in groups {
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let se = if vals.len() < 2 {
            0.0
        } else {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        };
        x.push(degree as f64);
        y.push(mean);
        err.push(se);
    }
    Ok(CurveSeries {
        kind,
        x,
        y,
        err: Some(err),
    })
}

pub const LOG_LIKELIHOOD_NOTE: &str =
    "neg_log_likelihood is the negative log-likelihood of the test labels (lower is better)";

/// Everything reported for one model on its test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub test_rows: usize,
    pub metrics: MetricsRecord,
    pub note: String,
    pub pr_area: f64,
    pub pr: CurveSeries,
    pub accuracy_at_percentile: CurveSeries,
    pub per_degree_accuracy: CurveSeries,
    pub per_degree_perplexity: CurveSeries,
}

impl EvalReport {
    pub fn build(
        mode: &str,
        degrees: &[usize],
        y: &[bool],
        predicted: &[bool],
        conf: &[f64],
        percentile_step: u32,
    ) -> Result<Self> {
        let metrics = global_metrics(y, predicted, conf)?;
        let pr = pr_curve(y, conf)?;
        let correct: Vec<f64> = y
            .iter()
            .zip(predicted)
            .map(|(a, b)| f64::from(u8::from(a == b)))
            .collect();
        let perplexity: Vec<f64> = y
            .iter()
            .zip(conf)
            .map(|(&t, &p)| (p - f64::from(u8::from(t))).abs())
            .collect();
        Ok(Self {
            mode: mode.to_string(),
            test_rows: y.len(),
            metrics,
            note: LOG_LIKELIHOOD_NOTE.to_string(),
            pr_area: pr.area,
            pr: pr.series(),
            accuracy_at_percentile: accuracy_at_percentile(y, conf, predicted, percentile_step)?,
            per_degree_accuracy: per_degree_series_by(degrees, &correct, CurveKind::PerDegreeAccuracy)?,
            per_degree_perplexity: per_degree_series_by(degrees, &perplexity, CurveKind::PerDegreePerplexity)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `<prefix>report.json` and one `<prefix><curve>.csv` per curve.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<Vec<String>> {
        let mut written = Vec::new();
        let report = format!("{prefix}report.json");
        let path = dir.join(&report);
        fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        written.push(report);
        for (name, curve) in [
            ("pr", &self.pr),
            ("accuracy_at_percentile", &self.accuracy_at_percentile),
            ("per_degree_accuracy", &self.per_degree_accuracy),
            ("per_degree_perplexity", &self.per_degree_perplexity),
        ] {
            let file = format!("{prefix}{name}.csv");
            curve.write_csv(&dir.join(&file))?;
            written.push(file);
        }
        Ok(written)
    }
}

#[derive(Clone, Copy)]
enum Better {
    Higher,
    Lower,
    Neither,
}

/// Aligned metrics table with one column per model; `*` marks the best
/// value in each row where better is defined.
pub fn metrics_table(models: &[(&str, &MetricsRecord)]) -> String {
    let rows: [(&str, Better, fn(&MetricsRecord) -> f64); 9] = [
        ("accuracy", Better::Higher, |m| m.accuracy),
        ("neg log likelihood", Better::Lower, |m| m.neg_log_likelihood),
        ("precision", Better::Higher, |m| m.precision),
        ("recall", Better::Higher, |m| m.recall),
        ("F1", Better::Higher, |m| m.f1),
        ("BCR", Better::Higher, |m| m.bcr),
        ("RMSE", Better::Lower, |m| m.rmse),
        ("% predicted positive", Better::Neither, |m| m.pct_pred_positive),
        ("% actually positive", Better::Neither, |m| m.pct_actual_positive),
    ];
    let label_width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let col_width = models.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(9) + 1;

    let mut out = String::new();
    write!(out, "{:label_width$}", "").unwrap();
    for (name, _) in models {
        write!(out, "  {name:>col_width$}").unwrap();
    }
    out.push('\n');
    for (label, better, get) in rows {
        let values: Vec<f64> = models.iter().map(|(_, m)| get(m)).collect();
        let best = match better {
            Better::Higher => values.iter().copied().reduce(f64::max),
            Better::Lower => values.iter().copied().reduce(f64::min),
            Better::Neither => None,
        };
        write!(out, "{label:label_width$}").unwrap();
        for v in values {
            let mark = if models.len() > 1 && best == Some(v) { "*" } else { " " };
            let cell = format!("{v:.4}{mark}");
            write!(out, "  {cell:>col_width$}").unwrap();
        }
        out.push('\n');
    }
    out
}
