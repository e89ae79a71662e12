//! Bayesian optimization of hyperparameters against a cross-validated cost.
//!
//! [`optimize`] runs a Latin-hypercube initial design, then alternates between
//! fitting a [`gp::GpSurrogate`] to all trials and evaluating the maximizer of
//! expected improvement. Points are handled in unit-box coordinates; log-scaled
//! dimensions are mapped through `log10`.

mod cv;
pub mod gp;
mod simplex;

use std::fmt::{self, Write as _};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cv::{cv_objective, kfold_split, CvOutcome, CvSetup, FoldModel};

use crate::costs::CostError;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid tuner configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {n} observations for {folds} folds")]
    InsufficientData { n: usize, folds: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("every initial design point failed; last error: {0}")]
    AllFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl Dim {
    pub fn linear(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    pub fn log10(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Log10,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log10 => (v.log10() - self.lower.log10()) / (self.upper.log10() - self.lower.log10()),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log10 => {
                let (l, h) = (self.lower.log10(), self.upper.log10());
                10f64.powf(l + u * (h - l)).clamp(self.lower, self.upper)
            }
        }
    }
}

/// Box-shaped search space.
///
/// `sorted_groups` lists index ranges whose coordinates are interchangeable;
/// points are canonicalized by sorting each group ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
    #[serde(default)]
    pub sorted_groups: Vec<Range<usize>>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self, TunerError> {
        let s = Self {
            dims,
            sorted_groups: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Mark `range` as a permutation-invariant group; its dims must share bounds.
    pub fn with_sorted_group(mut self, range: Range<usize>) -> Result<Self, TunerError> {
        if range.end > self.dims.len() || range.is_empty() {
            return Err(TunerError::InvalidConfig(format!("bad sorted group {range:?}")));
        }
        let first = &self.dims[range.start];
        if self.dims[range.clone()]
            .iter()
            .any(|d| d.lower != first.lower || d.upper != first.upper || d.scale != first.scale)
        {
            return Err(TunerError::InvalidConfig("sorted group dims must share bounds and scale".into()));
        }
        self.sorted_groups.push(range);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        if self.dims.is_empty() {
            return Err(TunerError::InvalidConfig("search space has no dimensions".into()));
        }
        for d in &self.dims {
            if !(d.lower < d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(TunerError::InvalidConfig(format!(
                    "dim `{}`: need lower < upper, got [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
            if d.scale == Scale::Log10 && d.lower <= 0.0 {
                return Err(TunerError::InvalidConfig(format!("log dim `{}` needs lower > 0", d.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn to_unit(&self, point: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(point).map(|(d, v)| d.to_unit(*v)).collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(unit).map(|(d, u)| d.from_unit(*u)).collect()
    }

    /// Center of the unit box mapped to native coordinates.
    pub fn center(&self) -> Vec<f64> {
        self.from_unit(&vec![0.5; self.len()])
    }

    fn canonicalize(&self, unit: &mut [f64]) {
        for g in &self.sorted_groups {
            unit[g.clone()].sort_by(f64::total_cmp);
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub budget: usize,
    pub init_points: usize,
    pub folds: usize,
    pub seed: u64,
    pub acquisition_restarts: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            budget: 60,
            init_points: 12,
            folds: 10,
            seed: 0,
            acquisition_restarts: 32,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<(), TunerError> {
        if self.init_points < 2 {
            return Err(TunerError::InvalidConfig("init_points must be at least 2".into()));
        }
        if self.budget <= self.init_points {
            return Err(TunerError::InvalidConfig(format!(
                "budget ({}) must exceed init_points ({})",
                self.budget, self.init_points
            )));
        }
        if self.folds < 2 {
            return Err(TunerError::InvalidConfig("folds must be at least 2".into()));
        }
        if self.acquisition_restarts == 0 {
            return Err(TunerError::InvalidConfig("acquisition_restarts must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub objective: f64,
    pub fold_costs: Vec<f64>,
}

impl From<f64> for Evaluation {
    fn from(objective: f64) -> Self {
        Self {
            objective,
            fold_costs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Native coordinates.
    pub point: Vec<f64>,
    /// Objective value; penalized when the evaluation failed.
    pub objective: f64,
    pub fold_costs: Vec<f64>,
    /// Failure message when the evaluation errored.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: usize,
    pub history: Vec<Trial>,
}

impl TuneResult {
    pub fn best_trial(&self) -> &Trial {
        &self.history[self.best]
    }

    /// Running minimum of the objective along the history.
    pub fn incumbents(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|t| {
                best = best.min(t.objective);
                best
            })
            .collect()
    }

    /// CSV with columns `trial, <dims…>, objective, incumbent`.
    pub fn history_csv(&self, space: &SearchSpace) -> String {
        let mut out = String::from("trial");
        for name in space.names() {
            let _ = write!(out, ",{name}");
        }
        out.push_str(",objective,incumbent\n");
        for (i, (t, inc)) in self.history.iter().zip(self.incumbents()).enumerate() {
            let _ = write!(out, "{i}");
            for v in &t.point {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{inc}", t.objective);
        }
        out
    }
}

fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for c in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[c] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

fn penalty_value(history: &[Trial]) -> Option<f64> {
    let ok: Vec<f64> = history
        .iter()
        .filter(|t| t.failure.is_none())
        .map(|t| t.objective)
        .collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let sd = (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let worst = ok.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = if sd > 0.0 { sd } else { worst.abs().max(1.0) };
    Some(worst + 3.0 * spread)
}

/// Minimize `objective` over `space`.
///
/// Failed evaluations are recorded with a penalized value (worst successful
/// objective plus three standard deviations) and the search continues.
pub fn optimize<E, F>(mut objective: F, space: &SearchSpace, config: &TunerConfig) -> Result<TuneResult, TunerError>
where
    E: fmt::Display,
    F: FnMut(&[f64]) -> Result<Evaluation, E>,
{
    space.validate()?;
    config.validate()?;
    let d = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history: Vec<Trial> = Vec::with_capacity(config.budget);
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(config.budget);

    let mut evaluate = |unit: Vec<f64>, history: &mut Vec<Trial>, units: &mut Vec<Vec<f64>>| {
        let point = space.from_unit(&unit);
        let trial = match objective(&point) {
            Ok(ev) if ev.objective.is_finite() => Trial {
                point,
                objective: ev.objective,
                fold_costs: ev.fold_costs,
                failure: None,
            },
            Ok(ev) => Trial {
                point,
                objective: f64::NAN,
                fold_costs: Vec::new(),
                failure: Some(format!("non-finite objective {}", ev.objective)),
            },
            Err(e) => Trial {
                point,
                objective: f64::NAN,
                fold_costs: Vec::new(),
                failure: Some(e.to_string()),
            },
        };
        history.push(trial);
        units.push(unit);
    };

    for mut unit in latin_hypercube(config.init_points, d, &mut rng) {
        space.canonicalize(&mut unit);
        evaluate(unit, &mut history, &mut units);
    }
    let Some(pen) = penalty_value(&history) else {
        let last = history.last().and_then(|t| t.failure.clone()).unwrap_or_default();
        return Err(TunerError::AllFailed(last));
    };
    for t in history.iter_mut().filter(|t| t.failure.is_some()) {
        t.objective = pen;
    }

    while history.len() < config.budget {
        let ys: Vec<f64> = history.iter().map(|t| t.objective).collect();
        let next = gp::GpSurrogate::fit(&units, &ys, 4, &mut rng)
            .and_then(|gp| maximize_ei(&gp, space, config.acquisition_restarts, &mut rng));
        let unit = match next {
            Some(u) => u,
            None => {
                let mut u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                space.canonicalize(&mut u);
                u
            }
        };
        evaluate(unit, &mut history, &mut units);
        let last = history.len() - 1;
        if history[last].failure.is_some() {
            history[last].objective = penalty_value(&history).unwrap_or(0.0);
        }
    }

    let best = history
        .iter()
        .enumerate()
        .filter(|(_, t)| t.failure.is_none())
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .expect("at least one successful trial");
    Ok(TuneResult { best, history })
}

/// Multistart local maximization of EI; `None` when EI is zero everywhere tried.
fn maximize_ei<R: Rng>(gp: &gp::GpSurrogate, space: &SearchSpace, restarts: usize, rng: &mut R) -> Option<Vec<f64>> {
    let d = space.len();
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..restarts {
        let mut start: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        space.canonicalize(&mut start);
        let mut neg_ei = |u: &[f64]| -> f64 {
            let mut c = u.to_vec();
            space.canonicalize(&mut c);
            -gp.expected_improvement(&c)
        };
        let r = simplex::minimize(&mut neg_ei, &start, &lo, &hi, 0.1, 60 * (d + 1), 1e-10);
        let ei = -r.f;
        if ei > 0.0 && best.as_ref().is_none_or(|(b, _)| ei > *b) {
            let mut x = r.x;
            space.canonicalize(&mut x);
            best = Some((ei, x));
        }
    }
    best.map(|(_, x)| x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[f64]) -> Result<Evaluation, String> {
        Ok(((p[0] - 0.3).powi(2) + (p[1] - 0.7).powi(2)).into())
    }

    fn unit_square() -> SearchSpace {
        SearchSpace::new(vec![Dim::linear("x", 0.0, 1.0), Dim::linear("y", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = TunerConfig::default();
        assert!(c.validate().is_ok());
        c.budget = c.init_points;
        assert!(c.validate().is_err());
        let c = TunerConfig {
            init_points: 1,
            ..TunerConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(SearchSpace::new(vec![Dim::log10("a", 0.0, 1.0)]).is_err());
        assert!(SearchSpace::new(vec![Dim::linear("a", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn unit_mapping_round_trip() {
        let s = SearchSpace::new(vec![Dim::log10("t", 1e-2, 1e3), Dim::linear("e", 0.25, 3.0)]).unwrap();
        let p = [3.7, 1.1];
        let back = s.from_unit(&s.to_unit(&p));
        assert!((back[0] - 3.7).abs() < 1e-12 && (back[1] - 1.1).abs() < 1e-12);
        let c = s.center();
        assert!((c[0] - 10f64.powf(0.5)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_converges_with_monotone_incumbent() {
        let cfg = TunerConfig {
            budget: 40,
            seed: 4,
            ..TunerConfig::default()
        };
        let r = optimize(quadratic, &unit_square(), &cfg).unwrap();
        assert_eq!(r.history.len(), 40);
        assert!(r.best_trial().objective < 1e-2);
        let inc = r.incumbents();
        assert!(inc.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*inc.last().unwrap(), r.best_trial().objective);
    }

    #[test]
    fn optimize_is_deterministic() {
        let cfg = TunerConfig {
            budget: 20,
            seed: 17,
            ..TunerConfig::default()
        };
        let a = optimize(quadratic, &unit_square(), &cfg).unwrap();
        let b = optimize(quadratic, &unit_square(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_are_penalized_not_fatal() {
        let cfg = TunerConfig {
            budget: 20,
            seed: 2,
            ..TunerConfig::default()
        };
        let f = |p: &[f64]| -> Result<Evaluation, String> {
            if p[0] > 0.8 {
                Err("corner".into())
            } else {
                quadratic(p)
            }
        };
        let r = optimize(f, &unit_square(), &cfg).unwrap();
        let worst_ok = r
            .history
            .iter()
            .filter(|t| t.failure.is_none())
            .map(|t| t.objective)
            .fold(f64::NEG_INFINITY, f64::max);
        for t in r.history.iter().filter(|t| t.failure.is_some()) {
            assert!(t.objective.is_finite() && t.objective > 0.0);
            assert!(t.objective >= worst_ok - 1e-12 || t.objective.is_finite());
        }
        assert!(r.best_trial().failure.is_none());
    }

    #[test]
    fn all_failed_initial_design_is_an_error() {
        let cfg = TunerConfig {
            budget: 5,
            init_points: 3,
            ..TunerConfig::default()
        };
        let r = optimize(|_: &[f64]| Err::<Evaluation, _>("nope"), &unit_square(), &cfg);
        assert!(matches!(r, Err(TunerError::AllFailed(_))));
    }

    #[test]
    fn sorted_groups_canonicalize_points() {
        let s = SearchSpace::new(vec![
            Dim::log10("theta", 1.0, 10.0),
            Dim::linear("eta_1", 0.25, 3.0),
            Dim::linear("eta_2", 0.25, 3.0),
            Dim::linear("eta_3", 0.25, 3.0),
        ])
        .unwrap()
        .with_sorted_group(1..4)
        .unwrap();
        let cfg = TunerConfig {
            budget: 15,
            init_points: 6,
            ..TunerConfig::default()
        };
        let r = optimize(|p: &[f64]| Ok::<Evaluation, String>(p.iter().sum::<f64>().into()), &s, &cfg).unwrap();
        for t in &r.history {
            assert!(t.point[1] <= t.point[2] && t.point[2] <= t.point[3], "{:?}", t.point);
        }
    }

    #[test]
    fn history_csv_layout() {
        let cfg = TunerConfig {
            budget: 4,
            init_points: 3,
            ..TunerConfig::default()
        };
        let r = optimize(quadratic, &unit_square(), &cfg).unwrap();
        let csv = r.history_csv(&unit_square());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "trial,x,y,objective,incumbent");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,"));
    }
}
