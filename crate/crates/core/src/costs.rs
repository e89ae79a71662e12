//! Probability-weighted confusion scores and the asymmetric misclassification cost.
//!
//! Rows of a [`ScoreMatrix`] are ground-truth classes and columns are
//! predictions; each cell accumulates the occurrence probabilities of the
//! observations that fall into it. Classes are ordered from least to most
//! severe, so cells below the diagonal are underestimations and cells above
//! it are conservative predictions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Penalty multiplier applied to predictions of classes absent from training.
pub const ABSENT_CLASS_OMEGA: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("class error: {0}")]
    ClassError(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("score matrix has zero total mass")]
    EmptyReport,
    #[error("score matrix format: {0}")]
    Format(String),
}

/// Class labels ordered by severity, with training-presence flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    classes: Vec<String>,
    present: Vec<bool>,
}

impl ClassCatalog {
    pub fn new(classes: Vec<String>, present: Vec<bool>) -> Result<Self, CostError> {
        if classes.len() < 2 {
            return Err(CostError::ClassError(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        if present.len() != classes.len() {
            return Err(CostError::ClassError("presence flags do not match classes".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(CostError::ClassError(format!("duplicate class `{c}`")));
            }
            if c.is_empty() || c.contains(',') {
                return Err(CostError::ClassError(format!("invalid class label `{c}`")));
            }
        }
        Ok(Self { classes, present })
    }

    /// Catalog where every class counts as present.
    pub fn all_present(classes: Vec<String>) -> Result<Self, CostError> {
        let n = classes.len();
        Self::new(classes, vec![true; n])
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Same classes with presence recomputed from observed class indices.
    pub fn with_presence_from(&self, observed: &[usize]) -> Self {
        let mut present = vec![false; self.len()];
        for &i in observed {
            if i < present.len() {
                present[i] = true;
            }
        }
        Self {
            classes: self.classes.clone(),
            present,
        }
    }
}

/// `S[i][j] = Σ_r P_r · [truth_r = i ∧ pred_r = j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    scores: Vec<Vec<f64>>,
    catalog: ClassCatalog,
}

impl ScoreMatrix {
    pub fn zeros(catalog: ClassCatalog) -> Self {
        let p = catalog.len();
        Self {
            scores: vec![vec![0.0; p]; p],
            catalog,
        }
    }

    pub fn from_rows(catalog: ClassCatalog, scores: Vec<Vec<f64>>) -> Result<Self, CostError> {
        let p = catalog.len();
        if scores.len() != p || scores.iter().any(|r| r.len() != p) {
            return Err(CostError::Format(format!(
                "expected a {p}×{p} matrix for classes {:?}",
                catalog.classes()
            )));
        }
        if scores.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CostError::Format("scores must be finite and nonnegative".into()));
        }
        Ok(Self { scores, catalog })
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn get(&self, truth: usize, pred: usize) -> f64 {
        self.scores[truth][pred]
    }

    pub fn dim(&self) -> usize {
        self.catalog.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.scores.iter().flatten().sum()
    }

    pub fn diagonal_mass(&self) -> f64 {
        (0..self.dim()).map(|i| self.scores[i][i]).sum()
    }

    /// Mass below the diagonal (prediction less severe than truth).
    pub fn underestimation_mass(&self) -> f64 {
        let p = self.dim();
        (0..p).flat_map(|m| (0..m).map(move |n| (m, n))).map(|(m, n)| self.scores[m][n]).sum()
    }

    /// Mass above the diagonal (prediction more severe than truth).
    pub fn conservative_mass(&self) -> f64 {
        let p = self.dim();
        (0..p)
            .flat_map(|m| (m + 1..p).map(move |n| (m, n)))
            .map(|(m, n)| self.scores[m][n])
            .sum()
    }

    /// Add the observations of one fold.
    pub fn accumulate(
        &mut self,
        truths: &[usize],
        preds: &[usize],
        probs: &[f64],
    ) -> Result<(), CostError> {
        if truths.len() != preds.len() || truths.len() != probs.len() {
            return Err(CostError::ClassError(format!(
                "{} truths, {} predictions, {} probabilities",
                truths.len(),
                preds.len(),
                probs.len()
            )));
        }
        let p = self.dim();
        for ((&t, &q), &pr) in truths.iter().zip(preds).zip(probs) {
            if t >= p || q >= p {
                return Err(CostError::ClassError(format!(
                    "class index ({t}, {q}) outside catalog of {p} classes"
                )));
            }
            if !(pr > 0.0 && pr.is_finite()) {
                return Err(CostError::ClassError(format!("probability must be positive, got {pr}")));
            }
            self.scores[t][q] += pr;
        }
        Ok(())
    }

    /// Elementwise sum of two matrices over the same catalog.
    pub fn merged(&self, other: &ScoreMatrix) -> Result<ScoreMatrix, CostError> {
        if self.catalog.classes() != other.catalog.classes() {
            return Err(CostError::ClassError("catalogs differ".into()));
        }
        let scores = self
            .scores
            .iter()
            .zip(&other.scores)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            scores,
            catalog: self.catalog.clone(),
        })
    }

    /// CSV with a `truth` column followed by one column per predicted class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for c in self.catalog.classes() {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, row) in self.catalog.classes().iter().zip(&self.scores) {
            out.push_str(label);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parse the [`to_csv`](Self::to_csv) layout; lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self, CostError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| CostError::Format("empty input".into()))?;
        let mut cols = header.split(',').map(str::trim);
        cols.next();
        let classes: Vec<String> = cols.map(String::from).collect();
        let catalog = ClassCatalog::all_present(classes.clone())?;
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut cells = line.split(',').map(str::trim);
            let label = cells.next().unwrap_or_default();
            let values = cells
                .map(|c| {
                    c.parse::<f64>().map_err(|_| {
                        CostError::Format(format!("row {}: `{c}` is not a number", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != classes.len() {
                return Err(CostError::Format(format!(
                    "row `{label}` has {} values but the header names {} classes (matrix must be square)",
                    values.len(),
                    classes.len()
                )));
            }
            if rows.len() < classes.len() && label != classes[rows.len()] {
                return Err(CostError::Format(format!(
                    "row {} is labeled `{label}`, expected `{}`",
                    rows.len() + 1,
                    classes[rows.len()]
                )));
            }
            rows.push(values);
        }
        if rows.len() != classes.len() {
            return Err(CostError::Format(format!(
                "{} rows for {} classes (matrix must be square)",
                rows.len(),
                classes.len()
            )));
        }
        Self::from_rows(catalog, rows)
    }
}

/// Build the score matrix of a set of predictions.
pub fn score_matrix(
    truths: &[usize],
    preds: &[usize],
    probs: &[f64],
    catalog: &ClassCatalog,
) -> Result<ScoreMatrix, CostError> {
    let mut s = ScoreMatrix::zeros(catalog.clone());
    s.accumulate(truths, preds, probs)?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Reward on correct predictions.
    pub w1: f64,
    /// Penalty on underestimation.
    pub w2: f64,
    /// Penalty on conservative predictions.
    pub w3: f64,
}

impl CostWeights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self, CostError> {
        let w = Self { w1, w2, w3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.w1 > 0.0 && self.w1.is_finite()) {
            return Err(CostError::InvalidWeights(format!("w1 must be positive, got {}", self.w1)));
        }
        for (name, v) in [("w2", self.w2), ("w3", self.w3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CostError::InvalidWeights(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether underestimation is penalized more than conservatism.
    pub fn favors_conservative(&self) -> bool {
        self.w2 > self.w3
    }
}

/// Misclassification penalties `λ_mn` and per-predicted-class multipliers `Ω_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

impl PenaltyConfig {
    /// `λ_mn = |m − n|²`, `Ω_n = 1` for classes present in training and
    /// [`ABSENT_CLASS_OMEGA`] otherwise.
    pub fn for_catalog(catalog: &ClassCatalog) -> Self {
        let omega = catalog
            .present()
            .iter()
            .map(|&p| if p { 1.0 } else { ABSENT_CLASS_OMEGA })
            .collect();
        Self {
            lambda: squared_distance(catalog.len()),
            omega,
        }
    }

    /// `λ_mn = |m − n|²` with `Ω ≡ 1`.
    pub fn uniform(p: usize) -> Self {
        Self {
            lambda: squared_distance(p),
            omega: vec![1.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let p = self.omega.len();
        if self.lambda.len() != p || self.lambda.iter().any(|r| r.len() != p) {
            return Err(CostError::ClassError("λ must be p×p with p = len(Ω)".into()));
        }
        if self.omega.iter().any(|o| !(*o >= 1.0)) {
            return Err(CostError::ClassError("Ω entries must be ≥ 1".into()));
        }
        if self.lambda.iter().flatten().any(|l| !(*l >= 0.0)) {
            return Err(CostError::ClassError("λ entries must be ≥ 0".into()));
        }
        Ok(())
    }
}

fn squared_distance(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|m| (0..p).map(|n| ((m as f64) - (n as f64)).powi(2)).collect())
        .collect()
}

/// `C = −w₁ Σ S_mm + w₂ Σ_{m>n} Ω_n λ_mn S_mn + w₃ Σ_{m<n} Ω_n λ_mn S_mn`.
pub fn cost(s: &ScoreMatrix, w: &CostWeights, pen: &PenaltyConfig) -> Result<f64, CostError> {
    pen.validate()?;
    let p = s.dim();
    if pen.dim() != p {
        return Err(CostError::ClassError(format!(
            "penalty config has {} classes, score matrix has {p}",
            pen.dim()
        )));
    }
    let mut under = 0.0;
    let mut conservative = 0.0;
    for m in 0..p {
        for n in 0..p {
            let term = pen.omega[n] * pen.lambda[m][n] * s.get(m, n);
            if m > n {
                under += term;
            } else if m < n {
                conservative += term;
            }
        }
    }
    Ok(-w.w1 * s.diagonal_mass() + w.w2 * under + w.w3 * conservative)
}

/// Raw scores, row-normalized percentages and global accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub classes: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// `cell / row sum × 100`; rows without mass are all zero.
    pub row_percent: Vec<Vec<f64>>,
    /// `Σ diag / total`, as a fraction.
    pub global_accuracy: f64,
    pub total_mass: f64,
    pub underestimation_mass: f64,
    pub conservative_mass: f64,
    /// Underestimation mass does not exceed conservative mass.
    pub conservative_dominates: bool,
}

pub fn report(s: &ScoreMatrix) -> Result<ConfusionReport, CostError> {
    let total = s.total_mass();
    if !(total > 0.0) {
        return Err(CostError::EmptyReport);
    }
    let row_percent = s
        .rows()
        .iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            row.iter()
                .map(|v| if sum > 0.0 { v / sum * 100.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let under = s.underestimation_mass();
    let cons = s.conservative_mass();
    Ok(ConfusionReport {
        classes: s.catalog().classes().to_vec(),
        scores: s.rows().to_vec(),
        row_percent,
        global_accuracy: s.diagonal_mass() / total,
        total_mass: total,
        underestimation_mass: under,
        conservative_mass: cons,
        conservative_dominates: under <= cons,
    })
}

impl ConfusionReport {
    /// Global accuracy as a percentage.
    pub fn ga_percent(&self) -> f64 {
        self.global_accuracy * 100.0
    }

    /// Aligned text table: raw score and row percentage per cell, GA footer.
    pub fn render_table(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .scores
            .iter()
            .zip(&self.row_percent)
            .map(|(row, pct)| {
                row.iter()
                    .zip(pct)
                    .map(|(v, q)| format!("{} {:.1}%", format_score(*v), q))
                    .collect()
            })
            .collect();
        let label_w = self
            .classes
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("truth \\ pred".len());
        let col_w = cells
            .iter()
            .flatten()
            .map(String::len)
            .chain(self.classes.iter().map(String::len))
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "truth \\ pred");
        for c in &self.classes {
            let _ = write!(out, "  {c:>col_w$}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&cells) {
            let _ = write!(out, "{c:<label_w$}");
            for cell in row {
                let _ = write!(out, "  {cell:>col_w$}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "GA = {:.1}%  (total mass {}, underestimation {}, conservative {})",
            self.ga_percent(),
            format_score(self.total_mass),
            format_score(self.underestimation_mass),
            format_score(self.conservative_mass),
        );
        out
    }
}

fn format_score(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 {
        format!("{v:.2}")
    } else {
        format!("{v:.3e}")
    }
}
