//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use seisdiag::costs::CostWeights;
use seisdiag::diagnose::{DiagnoseConfig, ReportSource, SearchBounds};
use seisdiag::signals::{ChannelPairSet, EtaSet};
use seisdiag::simulator::{BuildingSpec, GroundMotionSpec, HazardScenario};
use seisdiag::tuner::TunerConfig;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub building: BuildingSpec,
    #[serde(default)]
    pub ground_motion: GroundMotionSpec,
    pub hazard: HazardConfig,
    pub features: FeatureConfig,
    pub costs: CostWeights,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub tuner: TunerSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub paths: PathsSection,
}

/// Scale factors given as a list or as an evenly spaced range; probabilities
/// given explicitly or as an exponential decay `exp(−s / s0)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardConfig {
    pub scales: Option<Vec<f64>>,
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
    pub scale_count: Option<usize>,
    pub probabilities: Option<Vec<f64>>,
    pub s0: Option<f64>,
    pub records_per_scale: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// Compact `top:bottom;…` list; consecutive stories when omitted.
    pub pairs: Option<String>,
    /// Exponents used for the dataset file; their count is `k`.
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub absent_class_omega: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            absent_class_omega: seisdiag::costs::ABSENT_CLASS_OMEGA,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerSection {
    pub budget: usize,
    pub init_points: usize,
    pub folds: usize,
    pub acquisition_restarts: usize,
}

impl Default for TunerSection {
    fn default() -> Self {
        let t = TunerConfig::default();
        Self {
            budget: t.budget,
            init_points: t.init_points,
            folds: t.folds,
            acquisition_restarts: t.acquisition_restarts,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub holdout_fraction: f64,
    pub report: ReportSource,
    pub smo_max_iterations: u64,
    pub bounds: SearchBounds,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = DiagnoseConfig::default();
        Self {
            holdout_fraction: d.holdout_fraction,
            report: d.report,
            smo_max_iterations: d.smo_max_iterations,
            bounds: d.bounds,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

/// Parsed configuration plus the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        if let Some(s) = seed_override {
            config.seed = s;
        }
        config.validate()?;
        Ok(Self {
            config,
            hash: sha256_hex(text.as_bytes()),
        })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.building.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.ground_motion
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.hazard()?;
        self.etas()?;
        let pairs = self.pairs()?;
        let stories = self.building.stories();
        let known = |id: &str| {
            id == seisdiag::signals::GROUND
                || (1..=stories).any(|i| seisdiag::signals::floor_channel(i) == id)
        };
        if let Some(p) = pairs.pairs().iter().find(|p| !known(&p.top) || !known(&p.bottom)) {
            return Err(CliError::Validation(format!(
                "channel pair {}:{} names a channel the building does not have",
                p.top, p.bottom
            )));
        }
        self.diagnose_config().validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn hazard(&self) -> Result<HazardScenario, CliError> {
        let h = &self.hazard;
        let v = |m: &str| CliError::Validation(format!("hazard: {m}"));
        let scales = match (&h.scales, h.scale_min, h.scale_max, h.scale_count) {
            (Some(s), None, None, None) => s.clone(),
            (None, Some(lo), Some(hi), Some(n)) => {
                if n < 2 || !(lo < hi) {
                    return Err(v("need scale_count ≥ 2 and scale_min < scale_max"));
                }
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
            _ => return Err(v("give either `scales` or all of `scale_min`, `scale_max`, `scale_count`")),
        };
        let out = match (&h.probabilities, h.s0) {
            (Some(p), None) => HazardScenario::new(scales, p.clone(), h.records_per_scale),
            (None, Some(s0)) => HazardScenario::exponential(scales, s0, h.records_per_scale),
            _ => return Err(v("give exactly one of `probabilities` or `s0`")),
        };
        out.map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn etas(&self) -> Result<EtaSet, CliError> {
        EtaSet::new(self.features.eta.clone()).map_err(|e| CliError::Validation(format!("features.eta: {e}")))
    }

    pub fn pairs(&self) -> Result<ChannelPairSet, CliError> {
        match &self.features.pairs {
            Some(s) => ChannelPairSet::from_compact(s).map_err(|e| CliError::Validation(format!("features.pairs: {e}"))),
            None => Ok(ChannelPairSet::consecutive(self.building.stories())),
        }
    }

    pub fn diagnose_config(&self) -> DiagnoseConfig {
        DiagnoseConfig {
            weights: self.costs,
            tuner: TunerConfig {
                budget: self.tuner.budget,
                init_points: self.tuner.init_points,
                folds: self.tuner.folds,
                seed: self.seed,
                acquisition_restarts: self.tuner.acquisition_restarts,
            },
            eta_count: self.features.eta.len(),
            holdout_fraction: self.training.holdout_fraction,
            report: self.training.report,
            bounds: self.training.bounds.clone(),
            smo_max_iterations: self.training.smo_max_iterations,
            absent_omega: self.penalty.absent_class_omega,
        }
    }
}
