//! Damage existence and damage location models built from the SVM, cost and
//! tuner modules.
//!
//! Both models are tuned jointly over their SVM hyperparameters and the
//! intensity exponents, so training works on raw sensor channels and
//! re-featurizes every candidate point.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{cost, ABSENT_CLASS_OMEGA, report, ClassCatalog, ConfusionReport, CostError, CostWeights, PenaltyConfig, ScoreMatrix};
use crate::signals::{ChannelPairSet, EtaSet, FeatureVector, SignalError, ETA_MAX, ETA_MIN};
use crate::simulator::Event;
use crate::svm::{train_detailed, Label, SmoConfig, SvmError, SvmHyperParams, SvmModel, TrainingSet};
use crate::tuner::{
    cv_objective, kfold_split, optimize, CvOutcome, CvSetup, Dim, Evaluation, FoldModel, SearchSpace, TuneResult,
    TunerConfig, TunerError,
};

#[derive(Debug, Error)]
pub enum DiagnoseError {
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Per-story damage letters, story 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternLabel(Vec<Label>);

impl PatternLabel {
    pub fn new(stories: Vec<Label>) -> Self {
        Self(stories)
    }

    pub fn stories(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn damaged_count(&self) -> usize {
        self.0.iter().filter(|l| **l == Label::Damaged).count()
    }

    /// Letters read as a binary number with story 1 most significant.
    fn binary_value(&self) -> u64 {
        self.0
            .iter()
            .fold(0, |acc, l| (acc << 1) | u64::from(*l == Label::Damaged))
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.0 {
            write!(f, "{}", l.letter())?;
        }
        Ok(())
    }
}

impl FromStr for PatternLabel {
    type Err = DiagnoseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(DiagnoseError::Layout("empty damage pattern".into()));
        }
        s.chars()
            .map(|c| Label::from_letter(c).ok_or_else(|| DiagnoseError::Layout(format!("bad damage letter `{c}` in `{s}`"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

/// All `2^S` patterns ordered by damaged-story count, then by binary value.
pub fn severity_order(stories: usize) -> Vec<PatternLabel> {
    assert!((1..=16).contains(&stories), "story count must be in 1..=16");
    let mut all: Vec<PatternLabel> = (0..1u64 << stories)
        .map(|bits| {
            PatternLabel(
                (0..stories)
                    .map(|i| {
                        if bits >> (stories - 1 - i) & 1 == 1 {
                            Label::Damaged
                        } else {
                            Label::Undamaged
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    all.sort_by_key(|p| (p.damaged_count(), p.binary_value()));
    all
}

/// Severity-ordered catalog; `present` patterns are those seen in training.
pub fn pattern_catalog(stories: usize, present: &[PatternLabel]) -> Result<ClassCatalog, CostError> {
    let order = severity_order(stories);
    let flags = order.iter().map(|p| present.contains(p)).collect();
    ClassCatalog::new(order.iter().map(ToString::to_string).collect(), flags)
}

fn existence_catalog() -> ClassCatalog {
    ClassCatalog::all_present(vec!["N".into(), "D".into()]).expect("static catalog")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Existence,
    Location,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Existence => "existence",
            Mode::Location => "location",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Holdout,
    PooledCv,
}

/// Search bounds `[lower, upper]`; the θ dims are log-scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBounds {
    pub theta1: [f64; 2],
    pub theta2: [f64; 2],
    pub theta3: [f64; 2],
    pub eta: [f64; 2],
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            theta1: [1.0, 100.0],
            theta2: [1e-2, 1e3],
            theta3: [1e-4, 1e2],
            eta: [ETA_MIN, ETA_MAX],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub weights: CostWeights,
    pub tuner: TunerConfig,
    /// Number of intensity exponents `k`.
    pub eta_count: usize,
    pub holdout_fraction: f64,
    pub report: ReportSource,
    #[serde(default)]
    pub bounds: SearchBounds,
    /// Pair-update cap of each SVM solve.
    pub smo_max_iterations: u64,
    /// Penalty multiplier on predictions of patterns absent from training.
    #[serde(default = "default_absent_omega")]
    pub absent_omega: f64,
}

fn default_absent_omega() -> f64 {
    ABSENT_CLASS_OMEGA
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights {
                w1: 12.0,
                w2: 5.0,
                w3: 0.05,
            },
            tuner: TunerConfig::default(),
            eta_count: 3,
            holdout_fraction: 0.2,
            report: ReportSource::Holdout,
            bounds: SearchBounds::default(),
            smo_max_iterations: 2_000_000,
            absent_omega: ABSENT_CLASS_OMEGA,
        }
    }
}

impl DiagnoseConfig {
    pub fn validate(&self) -> Result<(), DiagnoseError> {
        self.weights.validate()?;
        self.tuner.validate()?;
        if self.eta_count == 0 {
            return Err(DiagnoseError::InvalidConfig("eta_count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(DiagnoseError::InvalidConfig(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.report == ReportSource::Holdout && self.holdout_fraction == 0.0 {
            return Err(DiagnoseError::InvalidConfig("holdout report needs holdout_fraction > 0".into()));
        }
        let b = &self.bounds;
        let eta_ok = ETA_MIN <= b.eta[0] && b.eta[0] < b.eta[1] && b.eta[1] <= ETA_MAX;
        if !eta_ok {
            return Err(DiagnoseError::InvalidConfig(format!(
                "eta bounds must lie in [{ETA_MIN}, {ETA_MAX}]"
            )));
        }
        if b.theta1[0] < 1.0 {
            return Err(DiagnoseError::InvalidConfig("theta1 lower bound must be at least 1".into()));
        }
        if !(self.absent_omega >= 1.0 && self.absent_omega.is_finite()) {
            return Err(DiagnoseError::InvalidConfig(format!(
                "absent_omega must be finite and at least 1, got {}",
                self.absent_omega
            )));
        }
        if self.smo_max_iterations == 0 {
            return Err(DiagnoseError::InvalidConfig("smo_max_iterations must be positive".into()));
        }
        Ok(())
    }

    fn smo(&self) -> SmoConfig {
        SmoConfig {
            max_iterations: self.smo_max_iterations,
            ..SmoConfig::default()
        }
    }

    /// Search space for `mode` on a building with `stories` stories.
    pub fn search_space(&self, mode: Mode, stories: usize) -> Result<SearchSpace, DiagnoseError> {
        let b = &self.bounds;
        let members = match mode {
            Mode::Existence => 1,
            Mode::Location => stories,
        };
        let mut dims = Vec::new();
        for s in 0..members {
            let suffix = if mode == Mode::Location { format!("_{}", s + 1) } else { String::new() };
            dims.push(Dim::log10(format!("theta1{suffix}"), b.theta1[0], b.theta1[1]));
            dims.push(Dim::log10(format!("theta2{suffix}"), b.theta2[0], b.theta2[1]));
            dims.push(Dim::log10(format!("theta3{suffix}"), b.theta3[0], b.theta3[1]));
        }
        let first_eta = dims.len();
        for i in 0..self.eta_count {
            dims.push(Dim::linear(format!("eta_{}", i + 1), b.eta[0], b.eta[1]));
        }
        let n = dims.len();
        let space = SearchSpace::new(dims)?;
        Ok(if self.eta_count > 1 {
            space.with_sorted_group(first_eta..n)?
        } else {
            space
        })
    }
}

/// Decode a search-space point into per-member hyperparameters and exponents.
pub fn decode_point(point: &[f64], members: usize) -> Result<(Vec<SvmHyperParams>, EtaSet), DiagnoseError> {
    if point.len() <= 3 * members {
        return Err(DiagnoseError::Layout(format!(
            "point has {} coordinates for {members} members",
            point.len()
        )));
    }
    let hps = (0..members)
        .map(|s| SvmHyperParams::new(point[3 * s], point[3 * s + 1], point[3 * s + 2]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut etas = point[3 * members..].to_vec();
    etas.sort_by(f64::total_cmp);
    // Sorted coordinates can tie after clamping; spread exact duplicates.
    for i in 1..etas.len() {
        if etas[i] <= etas[i - 1] {
            etas[i] = etas[i - 1] + 1e-9;
        }
    }
    Ok((hps, EtaSet::new(etas)?))
}

/// Labeled events with raw channels for re-featurization.
#[derive(Debug, Clone)]
pub struct LabeledEvents<'a> {
    pub events: &'a [Event],
    pub pairs: &'a ChannelPairSet,
}

impl LabeledEvents<'_> {
    pub fn stories(&self) -> usize {
        self.events.first().map_or(0, |e| e.labels.stories.len())
    }

    pub fn features(&self, idx: &[usize], etas: &EtaSet) -> Result<Vec<Vec<f64>>, SignalError> {
        idx.par_iter()
            .map(|&i| self.events[i].features(self.pairs, etas).map(FeatureVector::into_values))
            .collect()
    }

    fn pattern(&self, i: usize) -> PatternLabel {
        PatternLabel(self.events[i].labels.stories.clone())
    }
}

/// Member labels of one event for the given mode.
fn member_labels(e: &Event, mode: Mode) -> Vec<Label> {
    match mode {
        Mode::Existence => vec![e.labels.building],
        Mode::Location => e.labels.stories.clone(),
    }
}

/// Catalog class index of a list of member labels.
fn class_index(labels: &[Label], mode: Mode, catalog: &ClassCatalog) -> usize {
    match mode {
        Mode::Existence => usize::from(labels[0] == Label::Damaged),
        Mode::Location => catalog
            .index_of(&PatternLabel(labels.to_vec()).to_string())
            .expect("pattern catalog covers every pattern"),
    }
}

/// One member SVM per label column trained on the given rows.
fn fit_members(
    features: &[Vec<f64>],
    labels: &[Vec<Label>],
    probs: &[f64],
    hps: &[SvmHyperParams],
    smo: &SmoConfig,
) -> Result<Vec<SvmModel>, SvmError> {
    (0..hps.len())
        .into_par_iter()
        .map(|m| {
            let data = TrainingSet::from_probabilities(
                features.to_vec(),
                labels.iter().map(|l| l[m]).collect(),
                probs,
            )?;
            Ok(train_detailed(&data, &hps[m], smo)?.model)
        })
        .collect()
}

/// CV fold model at one fixed feature matrix.
struct MemberFolds<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [Vec<Label>],
    probs: &'a [f64],
    mode: Mode,
    catalog: &'a ClassCatalog,
    smo: SmoConfig,
}

impl FoldModel for MemberFolds<'_> {
    type Error = SvmError;

    fn fit_predict(&self, point: &[f64], train: &[usize], test: &[usize]) -> Result<Vec<usize>, SvmError> {
        let members = self.labels[0].len();
        let (hps, _) = decode_point(point, members).map_err(|e| SvmError::InvalidInput(e.to_string()))?;
        let pick = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| self.features[i].clone()).collect() };
        let models = fit_members(
            &pick(train),
            &train.iter().map(|&i| self.labels[i].clone()).collect::<Vec<_>>(),
            &train.iter().map(|&i| self.probs[i]).collect::<Vec<_>>(),
            &hps,
            &self.smo,
        )?;
        test.iter()
            .map(|&i| {
                let pred = models
                    .iter()
                    .map(|m| m.predict(&self.features[i]))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(class_index(&pred, self.mode, self.catalog))
            })
            .collect()
    }
}

/// The tuning objective of one model on a fixed set of training events.
#[derive(Debug, Clone)]
pub struct TuningProblem<'a> {
    data: LabeledEvents<'a>,
    rows: Vec<usize>,
    mode: Mode,
    catalog: ClassCatalog,
    setup: CvSetup,
    smo: SmoConfig,
}

impl<'a> TuningProblem<'a> {
    /// Cross-validation over `rows` of `data`, folds stratified by class.
    pub fn new(data: LabeledEvents<'a>, rows: Vec<usize>, mode: Mode, config: &DiagnoseConfig) -> Result<Self, DiagnoseError> {
        config.validate()?;
        let labels: Vec<Vec<Label>> = rows.iter().map(|&i| member_labels(&data.events[i], mode)).collect();
        let catalog = match mode {
            Mode::Existence => existence_catalog(),
            Mode::Location => {
                let seen: Vec<PatternLabel> = rows.iter().map(|&i| data.pattern(i)).collect();
                pattern_catalog(data.stories(), &seen)?
            }
        };
        let truths: Vec<usize> = labels.iter().map(|l| class_index(l, mode, &catalog)).collect();
        let distinct = truths.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(DiagnoseError::DegenerateDataset(format!(
                "training rows contain a single {} class",
                if mode == Mode::Existence { "damage" } else { "pattern" }
            )));
        }
        let folds = kfold_split(rows.len(), config.tuner.folds, &truths, config.tuner.seed)?;
        let penalty = match mode {
            Mode::Existence => PenaltyConfig::uniform(2),
            Mode::Location => {
                let mut pen = PenaltyConfig::for_catalog(&catalog);
                for (o, present) in pen.omega.iter_mut().zip(catalog.present()) {
                    if !present {
                        *o = config.absent_omega;
                    }
                }
                pen
            }
        };
        let probs = rows.iter().map(|&i| data.events[i].probability).collect();
        Ok(Self {
            data,
            rows,
            mode,
            setup: CvSetup {
                folds,
                truths,
                probs,
                catalog: catalog.clone(),
                weights: config.weights,
                penalty,
            },
            catalog,
            smo: config.smo(),
        })
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn penalty(&self) -> &PenaltyConfig {
        &self.setup.penalty
    }

    fn members(&self) -> usize {
        match self.mode {
            Mode::Existence => 1,
            Mode::Location => self.data.stories(),
        }
    }

    /// Pooled cross-validated cost at `point`.
    pub fn evaluate(&self, point: &[f64]) -> Result<CvOutcome, DiagnoseError> {
        let (_, etas) = decode_point(point, self.members())?;
        let features = self.data.features(&self.rows, &etas)?;
        let labels: Vec<Vec<Label>> = self
            .rows
            .iter()
            .map(|&i| member_labels(&self.data.events[i], self.mode))
            .collect();
        let model = MemberFolds {
            features: &features,
            labels: &labels,
            probs: &self.setup.probs,
            mode: self.mode,
            catalog: &self.catalog,
            smo: self.smo,
        };
        Ok(cv_objective(&model, point, &self.setup)?)
    }
}

/// Stratified split into (train, held-out) index lists, both ascending.
pub fn holdout_split(strata: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_4B1D);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let take = (fraction * members.len() as f64).round() as usize;
        let take = take.min(members.len().saturating_sub(1));
        test.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Single SVM predicting whether the building is damaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceModel {
    pub svm: SvmModel,
    pub hyperparams: SvmHyperParams,
    pub etas: EtaSet,
    pub pairs: ChannelPairSet,
}

/// One SVM per story over a shared feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationModel {
    pub members: Vec<SvmModel>,
    pub hyperparams: Vec<SvmHyperParams>,
    pub etas: EtaSet,
    pub pairs: ChannelPairSet,
    pub catalog: ClassCatalog,
}

fn check_layout(features: &FeatureVector, etas: &EtaSet, pairs: &ChannelPairSet) -> Result<(), DiagnoseError> {
    if features.etas().len() != etas.len() {
        return Err(DiagnoseError::Layout(format!(
            "features use k = {} exponents, model expects k = {}",
            features.etas().len(),
            etas.len()
        )));
    }
    if features.etas() != etas || features.pairs() != pairs {
        return Err(DiagnoseError::Layout("feature exponents or channel pairs differ from the model".into()));
    }
    Ok(())
}

impl ExistenceModel {
    pub fn predict(&self, features: &FeatureVector) -> Result<Label, DiagnoseError> {
        check_layout(features, &self.etas, &self.pairs)?;
        Ok(self.svm.predict(features.values())?)
    }
}

impl LocationModel {
    pub fn stories(&self) -> usize {
        self.members.len()
    }
}

/// Letterwise composition of the member predictions, story 1 first.
pub fn predict_pattern(model: &LocationModel, features: &FeatureVector) -> Result<PatternLabel, DiagnoseError> {
    check_layout(features, &model.etas, &model.pairs)?;
    predict_pattern_values(model, features.values())
}

/// Like [`predict_pattern`] for a raw feature row already in the model layout.
pub fn predict_pattern_values(model: &LocationModel, values: &[f64]) -> Result<PatternLabel, DiagnoseError> {
    Ok(PatternLabel(
        model
            .members
            .iter()
            .map(|m| m.predict(values))
            .collect::<Result<Vec<_>, _>>()?,
    ))
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum DiagnosisModel {
    Existence(ExistenceModel),
    Location(LocationModel),
}

impl DiagnosisModel {
    pub fn mode(&self) -> Mode {
        match self {
            DiagnosisModel::Existence(_) => Mode::Existence,
            DiagnosisModel::Location(_) => Mode::Location,
        }
    }

    pub fn etas(&self) -> &EtaSet {
        match self {
            DiagnosisModel::Existence(m) => &m.etas,
            DiagnosisModel::Location(m) => &m.etas,
        }
    }

    pub fn pairs(&self) -> &ChannelPairSet {
        match self {
            DiagnosisModel::Existence(m) => &m.pairs,
            DiagnosisModel::Location(m) => &m.pairs,
        }
    }

    pub fn catalog(&self) -> ClassCatalog {
        match self {
            DiagnosisModel::Existence(_) => existence_catalog(),
            DiagnosisModel::Location(m) => m.catalog.clone(),
        }
    }

    /// Class label of one feature row in the model layout.
    pub fn predict_values(&self, values: &[f64]) -> Result<String, DiagnoseError> {
        match self {
            DiagnosisModel::Existence(m) => Ok(m.svm.predict(values)?.letter().to_string()),
            DiagnosisModel::Location(m) => Ok(predict_pattern_values(m, values)?.to_string()),
        }
    }

    /// Ground-truth class label of an event.
    pub fn truth_label(&self, e: &Event) -> String {
        match self {
            DiagnosisModel::Existence(_) => e.labels.building.letter().to_string(),
            DiagnosisModel::Location(_) => PatternLabel(e.labels.stories.clone()).to_string(),
        }
    }
}

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Where a bundle came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

/// Serialized form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    pub mode: Mode,
    pub eta_set: EtaSet,
    pub pair_set: ChannelPairSet,
    pub catalog: ClassCatalog,
    pub hyperparameters: Vec<SvmHyperParams>,
    pub members: Vec<SvmModel>,
    pub provenance: Provenance,
}

impl ModelBundle {
    pub fn new(model: &DiagnosisModel, provenance: Provenance) -> Self {
        let (hyperparameters, members) = match model {
            DiagnosisModel::Existence(m) => (vec![m.hyperparams], vec![m.svm.clone()]),
            DiagnosisModel::Location(m) => (m.hyperparams.clone(), m.members.clone()),
        };
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            mode: model.mode(),
            eta_set: model.etas().clone(),
            pair_set: model.pairs().clone(),
            catalog: model.catalog(),
            hyperparameters,
            members,
            provenance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DiagnoseError> {
        let b: Self = serde_json::from_str(text).map_err(|e| DiagnoseError::Layout(format!("model bundle: {e}")))?;
        if b.format_version != BUNDLE_FORMAT_VERSION {
            return Err(DiagnoseError::Layout(format!(
                "unsupported bundle format version {}",
                b.format_version
            )));
        }
        Ok(b)
    }

    /// Rebuild the model, checking member count and feature layout.
    pub fn into_model(self) -> Result<DiagnosisModel, DiagnoseError> {
        let expected = crate::signals::feature_len(self.eta_set.len(), self.pair_set.len());
        if let Some(m) = self.members.iter().find(|m| m.dim() != expected) {
            return Err(DiagnoseError::Layout(format!(
                "member expects {} features, layout has {expected}",
                m.dim()
            )));
        }
        if self.hyperparameters.len() != self.members.len() {
            return Err(DiagnoseError::Layout("hyperparameter and member counts differ".into()));
        }
        match self.mode {
            Mode::Existence => {
                if self.members.len() != 1 {
                    return Err(DiagnoseError::Layout(format!(
                        "existence bundle needs 1 member, has {}",
                        self.members.len()
                    )));
                }
                Ok(DiagnosisModel::Existence(ExistenceModel {
                    svm: self.members.into_iter().next().expect("one member"),
                    hyperparams: self.hyperparameters[0],
                    etas: self.eta_set,
                    pairs: self.pair_set,
                }))
            }
            Mode::Location => {
                let s = self.members.len();
                if s == 0 || s > 16 || self.catalog.classes() != severity_order(s).iter().map(ToString::to_string).collect::<Vec<_>>() {
                    return Err(DiagnoseError::Layout(format!(
                        "location bundle with {s} members needs the {}-pattern severity catalog",
                        1usize << s.min(16)
                    )));
                }
                Ok(DiagnosisModel::Location(LocationModel {
                    members: self.members,
                    hyperparams: self.hyperparameters,
                    etas: self.eta_set,
                    pairs: self.pair_set,
                    catalog: self.catalog,
                }))
            }
        }
    }
}

/// Score predictions on `rows` of `data` (all rows when `None`).
pub fn evaluate(
    model: &DiagnosisModel,
    data: &LabeledEvents<'_>,
    rows: Option<&[usize]>,
) -> Result<(ScoreMatrix, ConfusionReport), DiagnoseError> {
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..data.events.len()).collect();
            &all
        }
    };
    if data.pairs != model.pairs() {
        return Err(DiagnoseError::Layout("dataset channel pairs differ from the model".into()));
    }
    let features = data.features(rows, model.etas())?;
    let catalog = model.catalog();
    let mut truths = Vec::with_capacity(rows.len());
    let mut preds = Vec::with_capacity(rows.len());
    for (&i, x) in rows.iter().zip(&features) {
        let idx = |label: String| {
            catalog
                .index_of(&label)
                .ok_or_else(|| DiagnoseError::Layout(format!("class `{label}` not in the model catalog")))
        };
        truths.push(idx(model.truth_label(&data.events[i]))?);
        preds.push(idx(model.predict_values(x)?)?);
    }
    let probs: Vec<f64> = rows.iter().map(|&i| data.events[i].probability).collect();
    let mut s = ScoreMatrix::zeros(catalog);
    s.accumulate(&truths, &preds, &probs)?;
    let r = report(&s)?;
    Ok((s, r))
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: DiagnosisModel,
    pub space: SearchSpace,
    pub tuning: TuneResult,
    /// Pooled CV result at the incumbent.
    pub incumbent_cv: CvOutcome,
    pub train_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
    /// Score matrix and report from the configured source.
    pub scores: ScoreMatrix,
    pub report: ConfusionReport,
    /// Cost of `scores` under the tuning weights and penalties.
    pub report_cost: f64,
}

/// Tune, retrain at the incumbent on the training rows, and report.
pub fn train(data: &LabeledEvents<'_>, mode: Mode, config: &DiagnoseConfig) -> Result<TrainingOutcome, DiagnoseError> {
    config.validate()?;
    let stories = data.stories();
    if data.events.is_empty() || stories == 0 {
        return Err(DiagnoseError::DegenerateDataset("no events".into()));
    }
    if data.events.iter().any(|e| e.labels.stories.len() != stories) {
        return Err(DiagnoseError::Layout("events disagree on the story count".into()));
    }
    let strata: Vec<usize> = match mode {
        Mode::Existence => data
            .events
            .iter()
            .map(|e| usize::from(e.labels.building == Label::Damaged))
            .collect(),
        Mode::Location => {
            let order = severity_order(stories);
            data.events
                .iter()
                .map(|e| {
                    let p = PatternLabel(e.labels.stories.clone());
                    order.iter().position(|q| *q == p).expect("complete catalog")
                })
                .collect()
        }
    };
    if strata.iter().all(|&s| s == strata[0]) {
        return Err(DiagnoseError::DegenerateDataset(match mode {
            Mode::Existence => "every event has the same damage label".into(),
            Mode::Location => "every event has the same damage pattern".into(),
        }));
    }
    let (train_rows, holdout_rows) = if config.holdout_fraction > 0.0 {
        holdout_split(&strata, config.holdout_fraction, config.tuner.seed)
    } else {
        ((0..strata.len()).collect(), Vec::new())
    };

    let problem = TuningProblem::new(data.clone(), train_rows.clone(), mode, config)?;
    let space = config.search_space(mode, stories)?;
    let tuning = optimize(
        |p: &[f64]| {
            problem.evaluate(p).map(|o| Evaluation {
                objective: o.cost,
                fold_costs: o.fold_costs,
            })
        },
        &space,
        &config.tuner,
    )?;
    let point = tuning.best_trial().point.clone();
    let incumbent_cv = problem.evaluate(&point)?;

    let members = match mode {
        Mode::Existence => 1,
        Mode::Location => stories,
    };
    let (hps, etas) = decode_point(&point, members)?;
    let features = data.features(&train_rows, &etas)?;
    let labels: Vec<Vec<Label>> = train_rows.iter().map(|&i| member_labels(&data.events[i], mode)).collect();
    let probs: Vec<f64> = train_rows.iter().map(|&i| data.events[i].probability).collect();
    let svms = fit_members(&features, &labels, &probs, &hps, &config.smo())?;
    let model = match mode {
        Mode::Existence => DiagnosisModel::Existence(ExistenceModel {
            svm: svms.into_iter().next().expect("one member"),
            hyperparams: hps[0],
            etas,
            pairs: data.pairs.clone(),
        }),
        Mode::Location => DiagnosisModel::Location(LocationModel {
            members: svms,
            hyperparams: hps,
            etas,
            pairs: data.pairs.clone(),
            catalog: problem.catalog().clone(),
        }),
    };

    let (scores, rep) = match config.report {
        ReportSource::Holdout => evaluate(&model, data, Some(&holdout_rows))?,
        ReportSource::PooledCv => {
            let s = incumbent_cv.pooled.clone();
            let r = report(&s)?;
            (s, r)
        }
    };
    let report_cost = cost(&scores, &config.weights, problem.penalty())?;
    Ok(TrainingOutcome {
        model,
        space,
        tuning,
        incumbent_cv,
        train_rows,
        holdout_rows,
        scores,
        report: rep,
        report_cost,
    })
}

pub fn train_existence(data: &LabeledEvents<'_>, config: &DiagnoseConfig) -> Result<TrainingOutcome, DiagnoseError> {
    train(data, Mode::Existence, config)
}

pub fn train_location(data: &LabeledEvents<'_>, config: &DiagnoseConfig) -> Result<TrainingOutcome, DiagnoseError> {
    train(data, Mode::Location, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: &[PatternLabel]) -> Vec<String> {
        p.iter().map(ToString::to_string).collect()
    }

    #[test]
    fn severity_orders() {
        assert_eq!(names(&severity_order(1)), ["N", "D"]);
        assert_eq!(names(&severity_order(2)), ["NN", "ND", "DN", "DD"]);
        let three = names(&severity_order(3));
        assert_eq!(three.len(), 8);
        assert_eq!(three[0], "NNN");
        assert_eq!(three[7], "DDD");
        let pos = |s: &str| three.iter().position(|x| x == s).unwrap();
        assert!(pos("DNN") < pos("DDN"));
        assert_eq!(three, ["NNN", "NND", "NDN", "DNN", "NDD", "DND", "DDN", "DDD"]);
    }

    #[test]
    fn pattern_round_trip() {
        let p: PatternLabel = "DDN".parse().unwrap();
        assert_eq!(p.stories(), [Label::Damaged, Label::Damaged, Label::Undamaged]);
        assert_eq!(p.to_string(), "DDN");
        assert!("DXN".parse::<PatternLabel>().is_err());
        assert!("".parse::<PatternLabel>().is_err());
    }

    #[test]
    fn absent_patterns_get_large_omega() {
        let present: Vec<PatternLabel> = ["NNN", "DNN", "DDN", "DDD"].iter().map(|s| s.parse().unwrap()).collect();
        let cat = pattern_catalog(3, &present).unwrap();
        let pen = PenaltyConfig::for_catalog(&cat);
        for (c, o) in cat.classes().iter().zip(&pen.omega) {
            let expected = if present.iter().any(|p| p.to_string() == *c) { 1.0 } else { 100.0 };
            assert_eq!(*o, expected, "{c}");
        }
        assert_eq!(pen.omega.iter().filter(|o| **o == 100.0).count(), 4);
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let strata: Vec<usize> = (0..100).map(|i| usize::from(i % 5 == 0)).collect();
        let (train, test) = holdout_split(&strata, 0.2, 3);
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(test.iter().filter(|&&i| strata[i] == 1).count(), 4);
        assert_eq!(test.iter().filter(|&&i| strata[i] == 0).count(), 16);
        assert!(test.iter().all(|i| !train.contains(i)));
        assert_eq!(holdout_split(&strata, 0.2, 3), (train, test));
    }

    #[test]
    fn decode_sorts_and_separates_exponents() {
        let (hps, etas) = decode_point(&[2.0, 3.0, 0.5, 1.5, 1.5, 0.7], 1).unwrap();
        assert_eq!(hps[0].theta1, 2.0);
        assert_eq!(etas.values()[0], 0.7);
        assert!(etas.values()[2] > etas.values()[1]);
        assert!(decode_point(&[1.0, 1.0, 1.0], 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DiagnoseConfig::default().validate().is_ok());
        let c = DiagnoseConfig {
            holdout_fraction: 0.0,
            ..DiagnoseConfig::default()
        };
        assert!(c.validate().is_err());
        let space = DiagnoseConfig::default().search_space(Mode::Location, 3).unwrap();
        assert_eq!(space.len(), 12);
        assert_eq!(space.sorted_groups, vec![9..12]);
    }
}
