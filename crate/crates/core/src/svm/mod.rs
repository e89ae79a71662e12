//! Probability-weighted soft-margin SVM with an RBF kernel.
//!
//! The primal penalizes slack of damaged observations by `θ₁θ₂B_r` and of
//! undamaged observations by `θ₂B_r`, where `B_r` is the observation's
//! occurrence weight normalized to mean one. The dual is a box-constrained QP
//! with per-sample upper bounds, solved by [`smo`].

pub mod smo;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use smo::{SmoConfig, SolveStats};

/// Version written into model documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("SMO did not converge after {iterations} pair updates (gap {gap:e} > tolerance {tolerance:e})")]
    NonConvergence {
        iterations: u64,
        gap: f64,
        tolerance: f64,
    },
    #[error("model document: {0}")]
    ParseError(String),
}

/// Binary damage state of a building or story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "N")]
    Undamaged,
    #[serde(rename = "D")]
    Damaged,
}

impl Label {
    /// `+1` for damaged, `−1` for undamaged.
    pub fn sign(self) -> f64 {
        match self {
            Label::Damaged => 1.0,
            Label::Undamaged => -1.0,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Label::Damaged => 'D',
            Label::Undamaged => 'N',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'D' => Some(Label::Damaged),
            'N' => Some(Label::Undamaged),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperParams {
    /// Extra emphasis on the damaged class.
    pub theta1: f64,
    /// Global penalty scale.
    pub theta2: f64,
    /// RBF width.
    pub theta3: f64,
}

impl SvmHyperParams {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Result<Self, SvmError> {
        let hp = Self {
            theta1,
            theta2,
            theta3,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2), ("theta3", self.theta3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SvmError::InvalidHyperParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Training observations with labels and mean-one occurrence weights.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    features: Vec<Vec<f64>>,
    labels: Vec<Label>,
    weights: Vec<f64>,
}

impl TrainingSet {
    /// Weights `B_r = P_r · n / Σ P` from occurrence probabilities.
    pub fn from_probabilities(
        features: Vec<Vec<f64>>,
        labels: Vec<Label>,
        probabilities: &[f64],
    ) -> Result<Self, SvmError> {
        if probabilities.len() != features.len() {
            return Err(SvmError::InvalidInput(format!(
                "{} probabilities for {} observations",
                probabilities.len(),
                features.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(SvmError::InvalidInput(format!("probability must be positive, got {p}")));
        }
        let total: f64 = probabilities.iter().sum();
        let n = probabilities.len() as f64;
        let weights = probabilities.iter().map(|p| p * n / total).collect();
        Self::new(features, labels, weights)
    }

    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<Label>,
        weights: Vec<f64>,
    ) -> Result<Self, SvmError> {
        if features.is_empty() {
            return Err(SvmError::InvalidInput("empty training set".into()));
        }
        if labels.len() != features.len() || weights.len() != features.len() {
            return Err(SvmError::InvalidInput(format!(
                "{} feature rows, {} labels, {} weights",
                features.len(),
                labels.len(),
                weights.len()
            )));
        }
        let d = features[0].len();
        for (r, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(SvmError::DimensionError {
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(SvmError::InvalidInput(format!("non-finite feature in row {r}")));
            }
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(SvmError::InvalidInput("weights must be positive and finite".into()));
        }
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        if (mean - 1.0).abs() > 1e-9 {
            return Err(SvmError::InvalidInput(format!("weights must have mean 1, got {mean}")));
        }
        Ok(Self {
            features,
            labels,
            weights,
        })
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }
}

/// Per-feature z-score statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation per column; constant columns keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for row in rows {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; d];
        for row in rows {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, m) in scales.iter_mut().zip(&means) {
            let sd = (*s / n).sqrt();
            *s = if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 };
        }
        Self { means, scales }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionError {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

pub(crate) fn rbf_kernel_unchecked(x: &[f64], x2: &[f64], theta3: f64) -> f64 {
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-theta3 * d2).exp()
}

/// `exp(−θ₃‖x − x2‖²)`.
pub fn rbf_kernel(x: &[f64], x2: &[f64], theta3: f64) -> Result<f64, SvmError> {
    if x.len() != x2.len() {
        return Err(SvmError::DimensionError {
            expected: x.len(),
            got: x2.len(),
        });
    }
    Ok(rbf_kernel_unchecked(x, x2, theta3))
}

/// Upper bounds `C_r`: `θ₁θ₂B_r` for damaged rows, `θ₂B_r` otherwise.
pub fn sample_box_bounds(labels: &[Label], weights: &[f64], hp: &SvmHyperParams) -> Vec<f64> {
    labels
        .iter()
        .zip(weights)
        .map(|(l, b)| match l {
            Label::Damaged => hp.theta1 * hp.theta2 * b,
            Label::Undamaged => hp.theta2 * b,
        })
        .collect()
}

/// A trained classifier.
///
/// When the training data held a single class the model is constant and
/// carries no support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct SvmModel {
    theta3: f64,
    bias: f64,
    standardization: Standardization,
    support_vectors: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
    constant_class: Option<Label>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u32,
    theta3: f64,
    bias: f64,
    standardization: Standardization,
    support_vectors: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constant_class: Option<Label>,
}

impl From<SvmModel> for ModelDocument {
    fn from(m: SvmModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            theta3: m.theta3,
            bias: m.bias,
            standardization: m.standardization,
            support_vectors: m.support_vectors,
            coefficients: m.coefficients,
            constant_class: m.constant_class,
        }
    }
}

impl TryFrom<ModelDocument> for SvmModel {
    type Error = String;
    fn try_from(doc: ModelDocument) -> Result<Self, Self::Error> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {} (this build reads version {})",
                doc.format_version, MODEL_FORMAT_VERSION
            ));
        }
        let d = doc.standardization.means.len();
        if doc.standardization.scales.len() != d {
            return Err("standardization means/scales length differ".into());
        }
        if doc.support_vectors.len() != doc.coefficients.len() {
            return Err(format!(
                "{} support vectors but {} coefficients",
                doc.support_vectors.len(),
                doc.coefficients.len()
            ));
        }
        if doc.support_vectors.iter().any(|sv| sv.len() != d) {
            return Err("support vector length differs from standardization".into());
        }
        if !(doc.theta3 > 0.0) {
            return Err(format!("theta3 must be positive, got {}", doc.theta3));
        }
        Ok(Self {
            theta3: doc.theta3,
            bias: doc.bias,
            standardization: doc.standardization,
            support_vectors: doc.support_vectors,
            coefficients: doc.coefficients,
            constant_class: doc.constant_class,
        })
    }
}

impl SvmModel {
    pub fn constant(class: Label, standardization: Standardization, theta3: f64) -> Self {
        Self {
            theta3,
            bias: 0.0,
            standardization,
            support_vectors: Vec::new(),
            coefficients: Vec::new(),
            constant_class: Some(class),
        }
    }

    pub fn theta3(&self) -> f64 {
        self.theta3
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support_vectors
    }

    /// `α_r · y_r` per support vector.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn constant_class(&self) -> Option<Label> {
        self.constant_class
    }

    pub fn dim(&self) -> usize {
        self.standardization.dim()
    }

    /// `Σ coef_r K(x_std, sv_r) + β₀`; ±∞ for a constant model.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, SvmError> {
        let xs = self.standardization.apply(x)?;
        if let Some(class) = self.constant_class {
            return Ok(class.sign() * f64::INFINITY);
        }
        let expansion: f64 = self
            .support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * rbf_kernel_unchecked(&xs, sv, self.theta3))
            .sum();
        Ok(expansion + self.bias)
    }

    /// Damaged iff the decision value is strictly positive.
    pub fn predict(&self, x: &[f64]) -> Result<Label, SvmError> {
        if let Some(class) = self.constant_class {
            self.standardization.apply(x)?;
            return Ok(class);
        }
        Ok(label_from_decision(self.decision_value(x)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SvmError> {
        serde_json::from_str(s).map_err(|e| SvmError::ParseError(e.to_string()))
    }
}

/// Sign rule with ties going to undamaged.
pub fn label_from_decision(v: f64) -> Label {
    if v > 0.0 {
        Label::Damaged
    } else {
        Label::Undamaged
    }
}

/// Trained model plus solver diagnostics and training-time decision values.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: SvmModel,
    pub stats: SolveStats,
    /// Decision values of the training rows computed inside the solver.
    pub train_decisions: Vec<f64>,
    /// Final multipliers for every training row.
    pub alpha: Vec<f64>,
}

pub fn train(data: &TrainingSet, hp: &SvmHyperParams) -> Result<SvmModel, SvmError> {
    Ok(train_detailed(data, hp, &SmoConfig::default())?.model)
}

pub fn train_detailed(
    data: &TrainingSet,
    hp: &SvmHyperParams,
    config: &SmoConfig,
) -> Result<TrainOutput, SvmError> {
    hp.validate()?;
    let bounds = sample_box_bounds(data.labels(), data.weights(), hp);
    train_with_bounds(data.features(), data.labels(), &bounds, hp.theta3, config)
}

/// Train against explicit per-sample upper bounds.
pub fn train_with_bounds(
    features: &[Vec<f64>],
    labels: &[Label],
    bounds: &[f64],
    theta3: f64,
    config: &SmoConfig,
) -> Result<TrainOutput, SvmError> {
    if features.is_empty() {
        return Err(SvmError::InvalidInput("empty training set".into()));
    }
    if labels.len() != features.len() || bounds.len() != features.len() {
        return Err(SvmError::InvalidInput("features, labels and bounds differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SvmError::InvalidInput("non-finite feature".into()));
    }
    let standardization = Standardization::fit(features);
    let xs = features
        .iter()
        .map(|r| standardization.apply(r))
        .collect::<Result<Vec<_>, _>>()?;

    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        let n = features.len();
        let sign = first.sign() * f64::INFINITY;
        return Ok(TrainOutput {
            model: SvmModel::constant(first, standardization, theta3),
            stats: SolveStats {
                iterations: 0,
                dual_objective: 0.0,
                gap: 0.0,
            },
            train_decisions: vec![sign; n],
            alpha: vec![0.0; n],
        });
    }

    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let mut solver = smo::Solver::new(&xs, &y, bounds, theta3, *config);
    let stats = solver.solve()?;
    let rho = solver.rho();
    let expansion = solver.kernel_expansion();
    let alpha = solver.alpha().to_vec();

    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for (t, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(xs[t].clone());
            coefficients.push(a * y[t]);
        }
    }
    Ok(TrainOutput {
        model: SvmModel {
            theta3,
            bias: -rho,
            standardization,
            support_vectors,
            coefficients,
            constant_class: None,
        },
        stats,
        train_decisions: expansion.iter().map(|e| e - rho).collect(),
        alpha,
    })
}
