//! Linear mixtures of checkpoint predictions fitted by least squares, plus
//! the uniform-average and best-single-model baselines.

mod ols;

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::train::predict_dataset;

/// Rows required per fitted column.
pub const ROWS_PER_COLUMN: usize = 10;

/// `N x k` matrix of per-model probabilities with aligned labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    rows: usize,
    cols: usize,
    /// Row-major.
    values: Vec<f64>,
    labels: Vec<u8>,
    sample_ids: Vec<String>,
    model_ids: Vec<String>,
}

impl PredictionMatrix {
    pub fn new(values: Vec<f64>, labels: Vec<u8>, sample_ids: Vec<String>, model_ids: Vec<String>) -> Result<Self> {
        let (rows, cols) = (labels.len(), model_ids.len());
        if rows == 0 || cols == 0 {
            return Err(Error::arg("prediction matrix needs at least one sample and one model"));
        }
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values do not fill a {rows} x {cols} matrix",
                values.len()
            )));
        }
        if sample_ids.len() != rows {
            return Err(Error::shape("one sample id per row required"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite prediction at row {}, column {}",
                i / cols,
                i % cols
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::arg("labels must be 0 or 1"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            labels,
            sample_ids,
            model_ids,
        })
    }

    /// Builds a matrix from a `rows x cols` nested vector, naming models
    /// `model_1..` and samples by index.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged prediction rows"));
        }
        let values = rows.concat();
        let sample_ids = (0..rows.len()).map(|i| i.to_string()).collect();
        let model_ids = (1..=cols).map(|j| format!("model_{j}")).collect();
        Self::new(values, labels, sample_ids, model_ids)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.values[i * self.cols + j]).collect()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.labels.iter().map(|&y| y as f64)
    }

    /// CSV with header `sample_id,label,model_1,...`; nine significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,label");
        for j in 1..=self.cols {
            let _ = write!(out, ",model_{j}");
        }
        out.push('\n');
        for i in 0..self.rows {
            let _ = write!(out, "{},{}", self.sample_ids[i], self.labels[i]);
            for v in self.row(i) {
                let _ = write!(out, ",{v:.8e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let bad = |e: csv::Error| Error::Format(format!("prediction matrix CSV: {e}"));
        let header = reader.headers().map_err(bad)?.clone();
        if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "label" {
            return Err(Error::Format(
                "prediction matrix CSV must start with `sample_id,label,model_1`".into(),
            ));
        }
        let model_ids: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let (mut values, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(bad)?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number `{s}` in prediction matrix")))
            };
            ids.push(rec[0].to_string());
            labels.push(num(&rec[1])? as u8);
            for s in rec.iter().skip(2) {
                values.push(num(s)?);
            }
        }
        Self::new(values, labels, ids, model_ids)
    }
}

/// Scores every sample with every model in inference mode. Models run in
/// parallel; columns keep the order of `models`.
pub fn build_prediction_matrix(models: &[(String, &ModelState<f32>)], dataset: &Dataset) -> Result<PredictionMatrix> {
    if models.is_empty() {
        return Err(Error::arg("no checkpoints to build a prediction matrix from"));
    }
    if dataset.is_empty() {
        return Err(Error::arg("cannot build a prediction matrix on an empty dataset"));
    }
    let columns = models
        .par_iter()
        .map(|(_, m)| predict_dataset(m, dataset))
        .collect::<Result<Vec<_>>>()?;
    let (n, k) = (dataset.len(), models.len());
    let mut values = vec![0.0; n * k];
    for (j, col) in columns.iter().enumerate() {
        for (i, &p) in col.iter().enumerate() {
            values[i * k + j] = p as f64;
        }
    }
    PredictionMatrix::new(
        values,
        dataset.labels().to_vec(),
        dataset.ids().to_vec(),
        models.iter().map(|(id, _)| id.clone()).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsOptions {
    /// Ridge term used only when the plain normal equations are singular or
    /// ill-conditioned.
    pub ridge: f64,
    pub intercept: bool,
    /// Decision threshold on the weighted sum.
    pub threshold: f64,
    pub max_condition: f64,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-8,
            intercept: false,
            threshold: 0.5,
            max_condition: 1e12,
        }
    }
}

impl OlsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::config("ensemble.ridge", "must be a nonnegative number"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::config("ensemble.threshold", "must be finite"));
        }
        if !(self.max_condition >= 1.0) {
            return Err(Error::config("ensemble.max_condition", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitDiagnostics {
    pub rss: f64,
    pub condition_estimate: f64,
    /// Ridge actually added to the normal equations; zero for a plain fit.
    pub ridge: f64,
}

impl FitDiagnostics {
    pub fn ridge_applied(&self) -> bool {
        self.ridge > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleWeights {
    pub model_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: Option<f64>,
    pub threshold: f64,
    pub fitted_on: String,
    pub diagnostics: FitDiagnostics,
}

impl EnsembleWeights {
    /// Uniform `1/k` weights with threshold 0.5.
    pub fn uniform(model_ids: Vec<String>) -> Self {
        let k = model_ids.len();
        Self {
            weights: vec![1.0 / k as f64; k],
            model_ids,
            intercept: None,
            threshold: 0.5,
            fitted_on: "uniform".into(),
            diagnostics: FitDiagnostics {
                rss: f64::NAN,
                condition_estimate: f64::NAN,
                ridge: 0.0,
            },
        }
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        let s: f64 = row.iter().zip(&self.weights).map(|(f, w)| f * w).sum();
        s + self.intercept.unwrap_or(0.0)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fitted_on={}", self.fitted_on);
        let _ = writeln!(out, "model_ids={}", self.model_ids.join(","));
        let w: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        let _ = writeln!(out, "weights={}", w.join(","));
        if let Some(b) = self.intercept {
            let _ = writeln!(out, "intercept={b:?}");
        }
        let _ = writeln!(out, "threshold={:?}", self.threshold);
        let d = &self.diagnostics;
        let _ = writeln!(out, "rss={:?}", d.rss);
        let _ = writeln!(out, "condition_estimate={:?}", d.condition_estimate);
        let _ = writeln!(out, "ridge={:?}", d.ridge);
        let _ = writeln!(out, "ridge_applied={}", d.ridge_applied());
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("weights document: {m}"));
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` for {k}")));
        let (mut fitted_on, mut ids, mut weights, mut intercept, mut threshold) = (None, None, None, None, None);
        let (mut rss, mut cond, mut ridge) = (f64::NAN, f64::NAN, 0.0);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line `{line}` is not key=value")))?;
            match k {
                "fitted_on" => fitted_on = Some(v.to_string()),
                "model_ids" => ids = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
                "weights" => weights = Some(v.split(',').map(|s| num(k, s)).collect::<Result<Vec<_>>>()?),
                "intercept" => intercept = Some(num(k, v)?),
                "threshold" => threshold = Some(num(k, v)?),
                "rss" => rss = num(k, v)?,
                "condition_estimate" => cond = num(k, v)?,
                "ridge" => ridge = num(k, v)?,
                "ridge_applied" => {}
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        let model_ids = ids.ok_or_else(|| bad("missing model_ids".into()))?;
        let weights = weights.ok_or_else(|| bad("missing weights".into()))?;
        if model_ids.len() != weights.len() {
            return Err(bad(format!(
                "{} model ids but {} weights",
                model_ids.len(),
                weights.len()
            )));
        }
        Ok(Self {
            model_ids,
            weights,
            intercept,
            threshold: threshold.ok_or_else(|| bad("missing threshold".into()))?,
            fitted_on: fitted_on.unwrap_or_default(),
            diagnostics: FitDiagnostics {
                rss,
                condition_estimate: cond,
                ridge,
            },
        })
    }
}

/// Minimizes `‖Y − F W‖²` (optionally with an intercept column).
pub fn ols_fit(pm: &PredictionMatrix, options: &OlsOptions, fitted_on: &str) -> Result<EnsembleWeights> {
    options.validate()?;
    let k = pm.cols;
    let dim = k + usize::from(options.intercept);
    if pm.rows < ROWS_PER_COLUMN * dim {
        return Err(Error::arg(format!(
            "least squares needs at least {} rows for {dim} columns, got {}",
            ROWS_PER_COLUMN * dim,
            pm.rows
        )));
    }
    let mut gram = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut x = vec![1.0; dim];
    for (i, y) in pm.targets().enumerate() {
        x[..k].copy_from_slice(pm.row(i));
        for a in 0..dim {
            rhs[a] += x[a] * y;
            for b in 0..=a {
                gram[a * dim + b] += x[a] * x[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[b * dim + a] = gram[a * dim + b];
        }
    }
    let sol = ols::solve_normal(&gram, &rhs, dim, options.ridge, options.max_condition)?;
    let mut weights = sol.x;
    let intercept = options.intercept.then(|| weights.pop().unwrap_or(0.0));
    let mut fitted = EnsembleWeights {
        model_ids: pm.model_ids.clone(),
        weights,
        intercept,
        threshold: options.threshold,
        fitted_on: fitted_on.to_string(),
        diagnostics: FitDiagnostics {
            rss: 0.0,
            condition_estimate: sol.condition,
            ridge: sol.ridge,
        },
    };
    fitted.diagnostics.rss = sse(pm, &fitted)?;
    Ok(fitted)
}

fn check_cols(pm: &PredictionMatrix, w: &EnsembleWeights) -> Result<()> {
    if w.weights.len() != pm.cols {
        return Err(Error::shape(format!(
            "weights have {} entries, prediction matrix has {} columns",
            w.weights.len(),
            pm.cols
        )));
    }
    Ok(())
}

/// Weighted sums `Σ fᵢwᵢ` (plus intercept) per row.
pub fn mixture_scores(pm: &PredictionMatrix, w: &EnsembleWeights) -> Result<Vec<f64>> {
    check_cols(pm, w)?;
    Ok((0..pm.rows).map(|i| w.score(pm.row(i))).collect())
}

/// Residual sum of squares against the labels.
pub fn sse(pm: &PredictionMatrix, w: &EnsembleWeights) -> Result<f64> {
    Ok(mixture_scores(pm, w)?
        .iter()
        .zip(pm.targets())
        .map(|(s, y)| (y - s).powi(2))
        .sum())
}

/// Class 1 iff the weighted sum strictly exceeds the threshold.
pub fn mixture_predict(pm: &PredictionMatrix, w: &EnsembleWeights) -> Result<Vec<u8>> {
    Ok(mixture_scores(pm, w)?
        .into_iter()
        .map(|s| u8::from(s > w.threshold))
        .collect())
}

/// Class 1 iff the mean prediction is at least one half.
pub fn average_sum_predict(pm: &PredictionMatrix) -> Vec<u8> {
    (0..pm.rows)
        .map(|i| {
            let mean = pm.row(i).iter().sum::<f64>() / pm.cols as f64;
            u8::from(mean >= 0.5)
        })
        .collect()
}

/// Thresholds one column with the `p >= 0.5` rule.
pub fn single_predict(pm: &PredictionMatrix, column: usize) -> Result<Vec<u8>> {
    if column >= pm.cols {
        return Err(Error::arg(format!("column {column} out of range")));
    }
    Ok(pm.column(column).into_iter().map(|p| u8::from(p >= 0.5)).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.confusion;
        write!(
            f,
            "accuracy {:.4} (TP {} TN {} FP {} FN {})",
            self.accuracy, c.tp, c.tn, c.fp, c.fn_
        )
    }
}

pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<Evaluation> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(Evaluation {
        accuracy: (c.tp + c.tn) as f64 / labels.len() as f64,
        confusion: c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Mixture,
    AverageSum,
    Single,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mixture, Method::AverageSum, Method::Single];

    pub fn label(self) -> &'static str {
        match self {
            Method::Mixture => "CNN-Mixture",
            Method::AverageSum => "Average Sum",
            Method::Single => "Single CNN",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: Method,
    pub validation: Evaluation,
    pub testing: Evaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub weights: EnsembleWeights,
    pub rows: Vec<ComparisonRow>,
    /// Column used for the single-model baseline.
    pub best_column: usize,
    pub mixture_sse: f64,
    pub average_sse: f64,
    /// Pearson correlation between fitted weights and per-model validation
    /// accuracy; `None` when undefined.
    pub weight_accuracy_correlation: Option<f64>,
}

impl Comparison {
    pub fn row(&self, method: Method) -> &ComparisonRow {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .expect("all methods present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,validation,testing\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6}",
                r.method.label(),
                r.validation.accuracy,
                r.testing.accuracy
            );
        }
        out
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Fits mixture weights on `validation` only, then scores all three methods
/// on both splits. The single baseline is the column with the highest
/// validation accuracy, ties going to the later column.
pub fn compare_models(
    validation: &PredictionMatrix,
    testing: &PredictionMatrix,
    options: &OlsOptions,
) -> Result<Comparison> {
    if validation.model_ids != testing.model_ids {
        return Err(Error::arg("validation and test matrices come from different models"));
    }
    let weights = ols_fit(validation, options, "validation")?;
    let column_acc: Vec<f64> = (0..validation.cols)
        .map(|j| evaluate(&single_predict(validation, j)?, &validation.labels).map(|e| e.accuracy))
        .collect::<Result<_>>()?;
    let best_column = (0..validation.cols)
        .rev()
        .max_by(|&a, &b| column_acc[a].total_cmp(&column_acc[b]).then(a.cmp(&b)))
        .unwrap_or(0);

    let score = |pm: &PredictionMatrix, m: Method| -> Result<Evaluation> {
        let preds = match m {
            Method::Mixture => mixture_predict(pm, &weights)?,
            Method::AverageSum => average_sum_predict(pm),
            Method::Single => single_predict(pm, best_column)?,
        };
        evaluate(&preds, &pm.labels)
    };
    let rows = Method::ALL
        .iter()
        .map(|&m| {
            Ok(ComparisonRow {
                method: m,
                validation: score(validation, m)?,
                testing: score(testing, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let average_sse = sse(validation, &EnsembleWeights::uniform(validation.model_ids.clone()))?;
    Ok(Comparison {
        mixture_sse: weights.diagnostics.rss,
        average_sse,
        weight_accuracy_correlation: pearson(&weights.weights, &column_acc),
        best_column,
        weights,
        rows,
    })
}

#[cfg(test)]
mod tests;
