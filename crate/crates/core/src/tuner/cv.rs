//! Stratified folds and the pooled cross-validated cost.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TunerError;
use crate::costs::{cost, ClassCatalog, CostWeights, PenaltyConfig, ScoreMatrix};

/// Split `0..n` into `k` folds, keeping each stratum spread evenly.
///
/// Strata are visited in ascending label order; indices within a stratum are
/// shuffled with `seed` and dealt round-robin, continuing the fold cursor
/// across strata so fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, strata: &[usize], seed: u64) -> Result<Vec<Vec<usize>>, TunerError> {
    if k < 2 {
        return Err(TunerError::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(TunerError::InsufficientData { n, folds: k });
    }
    if strata.len() != n {
        return Err(TunerError::InvalidConfig(format!(
            "{} strata labels for {n} observations",
            strata.len()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[cursor % k].push(i);
            cursor += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// A family of classifiers indexed by a search-space point.
pub trait FoldModel: Sync {
    type Error: std::error::Error + Send + Sync + 'static;

    /// Train on `train` at `point` and return predicted class indices for `test`.
    fn fit_predict(&self, point: &[f64], train: &[usize], test: &[usize]) -> Result<Vec<usize>, Self::Error>;
}

/// Fixed inputs of a cross-validated cost evaluation.
#[derive(Debug, Clone)]
pub struct CvSetup {
    pub folds: Vec<Vec<usize>>,
    /// Ground-truth class index per observation.
    pub truths: Vec<usize>,
    /// Occurrence probability per observation.
    pub probs: Vec<f64>,
    pub catalog: ClassCatalog,
    pub weights: CostWeights,
    pub penalty: PenaltyConfig,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    /// Cost of the pooled score matrix.
    pub cost: f64,
    pub pooled: ScoreMatrix,
    pub fold_scores: Vec<ScoreMatrix>,
    pub fold_costs: Vec<f64>,
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Train on each fold complement, score on the fold, and pool one score
/// matrix over all folds. Folds run in parallel and are reduced in order.
pub fn cv_objective<M: FoldModel>(model: &M, point: &[f64], setup: &CvSetup) -> Result<CvOutcome, TunerError> {
    let n = setup.truths.len();
    let per_fold: Vec<Result<ScoreMatrix, TunerError>> = setup
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let train = complement(n, test);
            let preds = model.fit_predict(point, &train, test).map_err(|e| TunerError::Fold {
                fold: f,
                source: Box::new(e),
            })?;
            let truths: Vec<usize> = test.iter().map(|&i| setup.truths[i]).collect();
            let probs: Vec<f64> = test.iter().map(|&i| setup.probs[i]).collect();
            let mut s = ScoreMatrix::zeros(setup.catalog.clone());
            s.accumulate(&truths, &preds, &probs)?;
            Ok(s)
        })
        .collect();

    let mut pooled = ScoreMatrix::zeros(setup.catalog.clone());
    let mut fold_scores = Vec::with_capacity(per_fold.len());
    let mut fold_costs = Vec::with_capacity(per_fold.len());
    for s in per_fold {
        let s = s?;
        fold_costs.push(cost(&s, &setup.weights, &setup.penalty)?);
        pooled = pooled.merged(&s)?;
        fold_scores.push(s);
    }
    Ok(CvOutcome {
        cost: cost(&pooled, &setup.weights, &setup.penalty)?,
        pooled,
        fold_scores,
        fold_costs,
    })
}
