//! Cumulative-intensity features from multi-channel acceleration records.
//!
//! The intensity of a record is `I = ∫ |a(t)|^η dt` over its duration, evaluated
//! with the trapezoidal rule on the sampled grid. Ratios of intensities between
//! the top and bottom sensor of a story are insensitive to the amplitude of a
//! linear response, so together with the ground intensity they make a compact,
//! duration-independent damage indicator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound for an intensity exponent.
pub const ETA_MIN: f64 = 0.25;
/// Upper bound for an intensity exponent.
pub const ETA_MAX: f64 = 3.0;
/// Relative threshold under which a denominator channel is considered silent.
pub const DEGENERATE_REL: f64 = 1e-12;

/// Channel id of the ground-level sensor.
pub const GROUND: &str = "ground";

/// Channel id of the sensor on floor `i` (1-based).
pub fn floor_channel(i: usize) -> String {
    format!("floor_{i}")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid signal on channel `{channel}`: {reason}")]
    InvalidSignal { channel: String, reason: String },
    #[error("exponent {0} outside [{ETA_MIN}, {ETA_MAX}]")]
    InvalidEta(f64),
    #[error("invalid exponent set: {0}")]
    InvalidEtaSet(String),
    #[error("invalid channel pairs: {0}")]
    InvalidPairs(String),
    #[error("channel `{top}` / `{bottom}` mismatch: {reason}")]
    ChannelMismatch {
        top: String,
        bottom: String,
        reason: String,
    },
    #[error("degenerate denominator on channel `{channel}` (I = {intensity:e}, threshold {threshold:e})")]
    DegenerateDenominator {
        channel: String,
        intensity: f64,
        threshold: f64,
    },
    #[error("channel `{0}` not found in record set")]
    MissingChannel(String),
}

/// A uniformly sampled acceleration time series for one sensor channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelRecord {
    channel_id: String,
    dt: f64,
    samples: Vec<f64>,
}

impl AccelRecord {
    pub fn new(
        channel_id: impl Into<String>,
        dt: f64,
        samples: Vec<f64>,
    ) -> Result<Self, SignalError> {
        let channel_id = channel_id.into();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SignalError::InvalidSignal {
                channel: channel_id,
                reason: format!("time step must be positive and finite, got {dt}"),
            });
        }
        if samples.len() < 2 {
            return Err(SignalError::InvalidSignal {
                channel: channel_id,
                reason: format!("need at least 2 samples, got {}", samples.len()),
            });
        }
        Ok(Self {
            channel_id,
            dt,
            samples,
        })
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Record duration `dt × (len − 1)`.
    pub fn duration(&self) -> f64 {
        self.dt * (self.samples.len() - 1) as f64
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }

    /// Same channel multiplied elementwise by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            channel_id: self.channel_id.clone(),
            dt: self.dt,
            samples: self.samples.iter().map(|a| a * c).collect(),
        }
    }

    pub fn with_channel_id(mut self, id: impl Into<String>) -> Self {
        self.channel_id = id.into();
        self
    }
}

/// Ordered exponents `η_1 < … < η_k`, each within `[ETA_MIN, ETA_MAX]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EtaSet(Vec<f64>);

impl EtaSet {
    pub fn new(values: Vec<f64>) -> Result<Self, SignalError> {
        if values.is_empty() {
            return Err(SignalError::InvalidEtaSet("at least one exponent is required".into()));
        }
        for &v in &values {
            check_eta(v)?;
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SignalError::InvalidEtaSet(format!(
                "exponents must be strictly ascending: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    /// `k` exponents evenly spaced over `[lo, hi]` (just `lo` when `k == 1`).
    pub fn evenly_spaced(k: usize, lo: f64, hi: f64) -> Result<Self, SignalError> {
        if k == 1 {
            return Self::new(vec![lo]);
        }
        let step = (hi - lo) / (k - 1) as f64;
        Self::new((0..k).map(|i| lo + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for EtaSet {
    type Error = SignalError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EtaSet> for Vec<f64> {
    fn from(e: EtaSet) -> Self {
        e.0
    }
}

/// A (top, bottom) sensor pair whose intensity ratio forms one `R` feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPair {
    pub top: String,
    pub bottom: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChannelPair>", into = "Vec<ChannelPair>")]
pub struct ChannelPairSet(Vec<ChannelPair>);

impl ChannelPairSet {
    pub fn new(pairs: Vec<ChannelPair>) -> Result<Self, SignalError> {
        if let Some(p) = pairs.iter().find(|p| p.top == p.bottom) {
            return Err(SignalError::InvalidPairs(format!(
                "pair uses channel `{}` as both top and bottom",
                p.top
            )));
        }
        Ok(Self(pairs))
    }

    /// Story pairs `(floor_i, floor_{i−1})` for `i = 1..=stories`, with the
    /// ground channel below the first story.
    pub fn consecutive(stories: usize) -> Self {
        let pairs = (1..=stories)
            .map(|i| ChannelPair {
                top: floor_channel(i),
                bottom: if i == 1 {
                    GROUND.to_string()
                } else {
                    floor_channel(i - 1)
                },
            })
            .collect();
        Self(pairs)
    }

    pub fn pairs(&self) -> &[ChannelPair] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Compact `top:bottom;top:bottom` form used in file headers.
    pub fn to_compact(&self) -> String {
        self.0
            .iter()
            .map(|p| format!("{}:{}", p.top, p.bottom))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn from_compact(s: &str) -> Result<Self, SignalError> {
        if s.trim().is_empty() {
            return Self::new(Vec::new());
        }
        let pairs = s
            .split(';')
            .map(|tok| {
                let (top, bottom) = tok
                    .split_once(':')
                    .ok_or_else(|| SignalError::InvalidPairs(format!("bad pair token `{tok}`")))?;
                Ok(ChannelPair {
                    top: top.trim().to_string(),
                    bottom: bottom.trim().to_string(),
                })
            })
            .collect::<Result<Vec<_>, SignalError>>()?;
        Self::new(pairs)
    }
}

impl TryFrom<Vec<ChannelPair>> for ChannelPairSet {
    type Error = SignalError;
    fn try_from(v: Vec<ChannelPair>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ChannelPairSet> for Vec<ChannelPair> {
    fn from(p: ChannelPairSet) -> Self {
        p.0
    }
}

/// Stacked feature vector `[x^η1 … x^ηk]` with `x^η = [I_g^η, R_1^η, …, R_j^η]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    etas: EtaSet,
    pairs: ChannelPairSet,
}

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn etas(&self) -> &EtaSet {
        &self.etas
    }

    pub fn pairs(&self) -> &ChannelPairSet {
        &self.pairs
    }

    /// The block `x^ηi` for the i-th exponent.
    pub fn block(&self, i: usize) -> &[f64] {
        let w = 1 + self.pairs.len();
        &self.values[i * w..(i + 1) * w]
    }
}

/// Number of features for `k` exponents and `j` channel pairs.
pub fn feature_len(k: usize, j: usize) -> usize {
    k * (1 + j)
}

fn check_eta(eta: f64) -> Result<(), SignalError> {
    if !(ETA_MIN..=ETA_MAX).contains(&eta) {
        return Err(SignalError::InvalidEta(eta));
    }
    Ok(())
}

#[inline]
fn abs_pow(a: f64, eta: f64) -> f64 {
    let m = a.abs();
    if m == 0.0 {
        0.0
    } else {
        m.powf(eta)
    }
}

/// Trapezoidal approximation of `∫₀^{t_e} |a(t)|^η dt`.
pub fn cumulative_intensity(record: &AccelRecord, eta: f64) -> Result<f64, SignalError> {
    check_eta(eta)?;
    let s = record.samples();
    if let Some(pos) = s.iter().position(|a| !a.is_finite()) {
        return Err(SignalError::InvalidSignal {
            channel: record.channel_id.clone(),
            reason: format!("non-finite sample at index {pos}"),
        });
    }
    let n = s.len();
    let interior: f64 = s[1..n - 1].iter().map(|&a| abs_pow(a, eta)).sum();
    let ends = 0.5 * (abs_pow(s[0], eta) + abs_pow(s[n - 1], eta));
    Ok(record.dt * (interior + ends))
}

fn check_aligned(top: &AccelRecord, bottom: &AccelRecord) -> Result<(), SignalError> {
    let mismatch = |reason: String| SignalError::ChannelMismatch {
        top: top.channel_id.clone(),
        bottom: bottom.channel_id.clone(),
        reason,
    };
    if top.dt != bottom.dt {
        return Err(mismatch(format!("dt {} vs {}", top.dt, bottom.dt)));
    }
    if top.len() != bottom.len() {
        return Err(mismatch(format!("length {} vs {}", top.len(), bottom.len())));
    }
    Ok(())
}

/// Intensity of `top` divided by intensity of `bottom`.
pub fn intensity_ratio(
    top: &AccelRecord,
    bottom: &AccelRecord,
    eta: f64,
) -> Result<f64, SignalError> {
    check_aligned(top, bottom)?;
    let num = cumulative_intensity(top, eta)?;
    let den = cumulative_intensity(bottom, eta)?;
    let threshold = DEGENERATE_REL * abs_pow(bottom.peak_abs(), eta) * bottom.duration();
    if den <= 0.0 || den < threshold {
        return Err(SignalError::DegenerateDenominator {
            channel: bottom.channel_id.clone(),
            intensity: den,
            threshold,
        });
    }
    Ok(num / den)
}

/// Build the stacked feature vector for one event.
///
/// `floors` may contain any records; pairs are resolved by channel id against
/// `ground` and `floors`.
pub fn assemble_features(
    ground: &AccelRecord,
    floors: &[AccelRecord],
    pairs: &ChannelPairSet,
    etas: &EtaSet,
) -> Result<FeatureVector, SignalError> {
    let lookup = |id: &str| -> Result<&AccelRecord, SignalError> {
        if ground.channel_id == id {
            return Ok(ground);
        }
        floors
            .iter()
            .find(|r| r.channel_id == id)
            .ok_or_else(|| SignalError::MissingChannel(id.to_string()))
    };
    let resolved = pairs
        .pairs()
        .iter()
        .map(|p| Ok((lookup(&p.top)?, lookup(&p.bottom)?)))
        .collect::<Result<Vec<_>, SignalError>>()?;
    for (top, bottom) in &resolved {
        check_aligned(top, ground)?;
        check_aligned(bottom, ground)?;
    }

    let mut values = Vec::with_capacity(feature_len(etas.len(), pairs.len()));
    for &eta in etas.values() {
        values.push(cumulative_intensity(ground, eta)?);
        for (top, bottom) in &resolved {
            values.push(intensity_ratio(top, bottom, eta)?);
        }
    }
    Ok(FeatureVector {
        values,
        etas: etas.clone(),
        pairs: pairs.clone(),
    })
}
