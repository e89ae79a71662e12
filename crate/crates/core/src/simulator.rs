//! Synthetic labeled data: Kanai–Tajimi ground motions driving a nonlinear
//! shear building integrated with Newmark's average-acceleration method.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{assemble_features, floor_channel, AccelRecord, ChannelPairSet, EtaSet, FeatureVector, SignalError, GROUND};
use crate::svm::Label;

/// Peak drift ratio above which a story is labeled damaged.
pub const DAMAGE_DRIFT: f64 = 0.005;
/// Drift ratio flagged as collapse.
pub const COLLAPSE_DRIFT: f64 = 0.20;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid building: {0}")]
    InvalidBuilding(String),
    #[error("invalid ground motion spec: {0}")]
    InvalidGroundMotion(String),
    #[error("invalid hazard scenario: {0}")]
    InvalidHazard(String),
    #[error("Newton iteration did not converge at step {step} (residual {residual:.3e})")]
    IntegrationFailure { step: usize, residual: f64 },
    #[error("scale {scale_index}, record {record_index}: {source}")]
    Record {
        scale_index: usize,
        record_index: usize,
        #[source]
        source: Box<SimulatorError>,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn default_post_yield() -> f64 {
    0.05
}

fn default_damping() -> f64 {
    0.05
}

/// Planar shear building, story 1 at the bottom.
///
/// A yield drift of `f64::INFINITY` keeps that story elastic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingSpec {
    pub masses: Vec<f64>,
    pub stiffnesses: Vec<f64>,
    pub yield_drifts: Vec<f64>,
    pub heights: Vec<f64>,
    #[serde(default = "default_post_yield")]
    pub post_yield_ratio: f64,
    #[serde(default = "default_damping")]
    pub damping_ratio: f64,
}

impl BuildingSpec {
    /// Building with identical stories.
    pub fn uniform(stories: usize, mass: f64, stiffness: f64, yield_drift: f64, height: f64) -> Self {
        Self {
            masses: vec![mass; stories],
            stiffnesses: vec![stiffness; stories],
            yield_drifts: vec![yield_drift; stories],
            heights: vec![height; stories],
            post_yield_ratio: default_post_yield(),
            damping_ratio: default_damping(),
        }
    }

    pub fn stories(&self) -> usize {
        self.masses.len()
    }

    /// Same building with every story elastic.
    pub fn linear(&self) -> Self {
        Self {
            yield_drifts: vec![f64::INFINITY; self.stories()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let s = self.masses.len();
        let bad = |m: String| Err(SimulatorError::InvalidBuilding(m));
        if s == 0 {
            return bad("at least one story is required".into());
        }
        for (name, v) in [
            ("stiffnesses", &self.stiffnesses),
            ("yield_drifts", &self.yield_drifts),
            ("heights", &self.heights),
        ] {
            if v.len() != s {
                return bad(format!("{name} has {} entries for {s} stories", v.len()));
            }
        }
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.masses) || !positive(&self.stiffnesses) || !positive(&self.heights) {
            return bad("masses, stiffnesses and heights must be positive and finite".into());
        }
        if !self.yield_drifts.iter().all(|x| *x > 0.0) {
            return bad("yield drifts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.post_yield_ratio) {
            return bad(format!("post-yield ratio must be in [0, 1), got {}", self.post_yield_ratio));
        }
        if !(0.0..1.0).contains(&self.damping_ratio) {
            return bad(format!("damping ratio must be in [0, 1), got {}", self.damping_ratio));
        }
        Ok(())
    }

    /// Initial lateral stiffness matrix.
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        let s = self.stories();
        let mut k = DMatrix::zeros(s, s);
        for i in 0..s {
            k[(i, i)] += self.stiffnesses[i];
            if i + 1 < s {
                let kn = self.stiffnesses[i + 1];
                k[(i, i)] += kn;
                k[(i, i + 1)] -= kn;
                k[(i + 1, i)] -= kn;
            }
        }
        k
    }

    /// Circular natural frequencies of the initial stiffness, ascending.
    pub fn natural_frequencies(&self) -> Vec<f64> {
        let k = self.stiffness_matrix();
        let inv_sqrt: Vec<f64> = self.masses.iter().map(|m| 1.0 / m.sqrt()).collect();
        let a = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| inv_sqrt[i] * k[(i, j)] * inv_sqrt[j]);
        let mut w: Vec<f64> = SymmetricEigen::new(a)
            .eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        w.sort_by(f64::total_cmp);
        w
    }

    pub fn natural_periods(&self) -> Vec<f64> {
        self.natural_frequencies()
            .iter()
            .map(|w| 2.0 * std::f64::consts::PI / w)
            .collect()
    }

    /// Rayleigh coefficients `(a0, a1)` with `C = a0 M + a1 K`, matching the
    /// damping ratio on modes 1 and 2 (mode 1 twice for a single story).
    pub fn rayleigh_coefficients(&self) -> (f64, f64) {
        let w = self.natural_frequencies();
        let w1 = w[0];
        let w2 = w.get(1).copied().unwrap_or(w1);
        let z = self.damping_ratio;
        (2.0 * z * w1 * w2 / (w1 + w2), 2.0 * z / (w1 + w2))
    }
}

/// Kanai–Tajimi filtered white noise with a trapezoid-exponential envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundMotionSpec {
    /// Filter frequency (rad/s).
    pub omega_g: f64,
    pub zeta_g: f64,
    /// Two-sided spectral intensity of the white noise (m²/s³).
    pub intensity: f64,
    pub duration: f64,
    pub dt: f64,
    pub ramp_time: f64,
    pub strong_time: f64,
    pub decay_rate: f64,
}

impl Default for GroundMotionSpec {
    fn default() -> Self {
        Self {
            omega_g: 15.6,
            zeta_g: 0.6,
            intensity: 0.01,
            duration: 20.0,
            dt: 0.01,
            ramp_time: 2.0,
            strong_time: 6.0,
            decay_rate: 0.5,
        }
    }
}

impl GroundMotionSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::InvalidGroundMotion(m.into()));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.dt) {
            return bad("dt must be positive");
        }
        if !pos(self.omega_g) || !pos(self.zeta_g) {
            return bad("omega_g and zeta_g must be positive");
        }
        if !pos(self.intensity) {
            return bad("intensity must be positive");
        }
        if !(self.ramp_time >= 0.0 && self.strong_time >= 0.0 && self.decay_rate >= 0.0) {
            return bad("envelope parameters must be non-negative");
        }
        if !(self.duration >= self.ramp_time + self.strong_time) || !self.duration.is_finite() {
            return bad("duration must cover ramp and strong-motion phases");
        }
        if self.steps() < 1 {
            return bad("duration must span at least one time step");
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn envelope(&self, t: f64) -> f64 {
        if t < self.ramp_time {
            (t / self.ramp_time).powi(2)
        } else if t <= self.ramp_time + self.strong_time {
            1.0
        } else {
            (-self.decay_rate * (t - self.ramp_time - self.strong_time)).exp()
        }
    }
}

/// Synthesize one ground acceleration record (m/s²), deterministic in `seed`.
pub fn generate_ground_motion(spec: &GroundMotionSpec, scale: f64, seed: u64) -> Result<AccelRecord, SimulatorError> {
    spec.validate()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(SimulatorError::InvalidGroundMotion(format!("scale must be positive, got {scale}")));
    }
    let n = spec.steps() + 1;
    let dt = spec.dt;
    let (w, z) = (spec.omega_g, spec.zeta_g);
    let sigma = (2.0 * std::f64::consts::PI * spec.intensity / dt).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Filter state (x, v) with x'' + 2ζω x' + ω² x = −noise, held over each step.
    let deriv = |x: f64, v: f64, f: f64| (v, -f - 2.0 * z * w * v - w * w * x);
    let (mut x, mut v) = (0.0f64, 0.0f64);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        samples.push(spec.envelope(t) * (-2.0 * z * w * v - w * w * x));
        let noise: f64 = StandardNormal.sample(&mut rng);
        let f = sigma * noise;
        let (k1x, k1v) = deriv(x, v, f);
        let (k2x, k2v) = deriv(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v, f);
        let (k3x, k3v) = deriv(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v, f);
        let (k4x, k4v) = deriv(x + dt * k3x, v + dt * k3v, f);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    for a in &mut samples {
        *a *= scale;
    }
    Ok(AccelRecord::new(GROUND, dt, samples)?)
}

/// Bilinear kinematic-hardening spring in force–drift space.
#[derive(Debug, Clone, Copy)]
struct Spring {
    k: f64,
    fy: f64,
    h: f64,
    plastic: f64,
    back: f64,
}

impl Spring {
    fn new(k: f64, fy: f64, alpha: f64) -> Self {
        Self {
            k,
            fy,
            h: alpha * k / (1.0 - alpha),
            plastic: 0.0,
            back: 0.0,
        }
    }

    /// Force, tangent, and updated state for a trial drift.
    fn trial(&self, drift: f64) -> (f64, f64, Spring) {
        let f_tr = self.k * (drift - self.plastic);
        let xi = f_tr - self.back;
        let phi = xi.abs() - self.fy;
        if phi <= 0.0 {
            return (f_tr, self.k, *self);
        }
        let dg = phi / (self.k + self.h);
        let sgn = xi.signum();
        let next = Spring {
            plastic: self.plastic + dg * sgn,
            back: self.back + self.h * dg * sgn,
            ..*self
        };
        (f_tr - self.k * dg * sgn, self.k * self.h / (self.k + self.h), next)
    }
}

/// Solve a tridiagonal system in place (Thomas algorithm).
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = if n > 1 { upper[0] / d } else { 0.0 };
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - lower[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / d;
        }
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Full time histories of one analysis, relative to the ground.
#[derive(Debug, Clone)]
pub struct ResponseHistory {
    pub dt: f64,
    /// Ground acceleration per step.
    pub ground: Vec<f64>,
    /// Floor displacements per step.
    pub displacement: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    /// Relative floor accelerations per step.
    pub acceleration: Vec<Vec<f64>>,
    /// Story shear forces per step.
    pub story_force: Vec<Vec<f64>>,
}

impl ResponseHistory {
    /// Story drift (not ratio) of `story` at `step`.
    pub fn drift(&self, step: usize, story: usize) -> f64 {
        let u = &self.displacement[step];
        u[story] - if story == 0 { 0.0 } else { u[story - 1] }
    }
}

/// Integrate the building under ground acceleration `gm`.
pub fn simulate_history(building: &BuildingSpec, gm: &AccelRecord) -> Result<ResponseHistory, SimulatorError> {
    building.validate()?;
    let s = building.stories();
    let dt = gm.dt();
    let ag = gm.samples();
    let m = &building.masses;
    let (a0, a1) = building.rayleigh_coefficients();
    let mut springs: Vec<Spring> = (0..s)
        .map(|i| {
            let k = building.stiffnesses[i];
            let fy = k * building.yield_drifts[i] * building.heights[i];
            Spring::new(k, fy, building.post_yield_ratio)
        })
        .collect();
    let finite_fy = springs.iter().map(|sp| sp.fy).filter(|f| f.is_finite()).fold(0.0, f64::max);
    let ref_force = if finite_fy > 0.0 {
        finite_fy
    } else {
        // Elastic building: force at the damage drift.
        (0..s)
            .map(|i| building.stiffnesses[i] * building.heights[i] * DAMAGE_DRIFT)
            .fold(0.0, f64::max)
    };
    let tol = NEWTON_TOL * ref_force;

    // Initial-stiffness damping, tridiagonal.
    let k0 = &building.stiffnesses;
    let c_diag: Vec<f64> = (0..s)
        .map(|i| a0 * m[i] + a1 * (k0[i] + k0.get(i + 1).copied().unwrap_or(0.0)))
        .collect();
    let c_off: Vec<f64> = (0..s.saturating_sub(1)).map(|i| -a1 * k0[i + 1]).collect();
    let c_mul = |v: &[f64]| -> Vec<f64> {
        (0..s)
            .map(|i| {
                let mut r = c_diag[i] * v[i];
                if i > 0 {
                    r += c_off[i - 1] * v[i - 1];
                }
                if i + 1 < s {
                    r += c_off[i] * v[i + 1];
                }
                r
            })
            .collect()
    };

    let (gamma, beta) = (0.5, 0.25);
    let c_u = gamma / (beta * dt);
    let m_u = 1.0 / (beta * dt * dt);

    let n = ag.len();
    let mut u = vec![0.0; s];
    let mut v = vec![0.0; s];
    let mut a: Vec<f64> = vec![-ag[0]; s];
    let mut hist = ResponseHistory {
        dt,
        ground: ag.to_vec(),
        displacement: Vec::with_capacity(n),
        velocity: Vec::with_capacity(n),
        acceleration: Vec::with_capacity(n),
        story_force: Vec::with_capacity(n),
    };
    hist.displacement.push(u.clone());
    hist.velocity.push(v.clone());
    hist.acceleration.push(a.clone());
    hist.story_force.push(vec![0.0; s]);

    let mut forces = vec![0.0; s];
    let mut tangents = vec![0.0; s];
    let mut trial_springs = springs.clone();
    for step in 1..n {
        let p: Vec<f64> = m.iter().map(|mi| -mi * ag[step]).collect();
        let mut un = u.clone();
        let mut converged = false;
        let mut residual_norm = f64::INFINITY;
        for iter in 0..NEWTON_MAX_ITER {
            for i in 0..s {
                let drift = un[i] - if i == 0 { 0.0 } else { un[i - 1] };
                let (f, kt, next) = springs[i].trial(drift);
                forces[i] = f;
                tangents[i] = kt;
                trial_springs[i] = next;
            }
            let vn: Vec<f64> = (0..s)
                .map(|i| c_u * (un[i] - u[i]) + (1.0 - gamma / beta) * v[i] + dt * (1.0 - gamma / (2.0 * beta)) * a[i])
                .collect();
            let an: Vec<f64> = (0..s)
                .map(|i| m_u * (un[i] - u[i]) - v[i] / (beta * dt) - (1.0 / (2.0 * beta) - 1.0) * a[i])
                .collect();
            let cv = c_mul(&vn);
            let mut r: Vec<f64> = (0..s)
                .map(|i| {
                    let fs = forces[i] - forces.get(i + 1).copied().unwrap_or(0.0);
                    p[i] - m[i] * an[i] - cv[i] - fs
                })
                .collect();
            residual_norm = r.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if iter > 0 && residual_norm <= tol {
                converged = true;
                break;
            }
            let diag: Vec<f64> = (0..s)
                .map(|i| tangents[i] + tangents.get(i + 1).copied().unwrap_or(0.0) + c_u * c_diag[i] + m_u * m[i])
                .collect();
            let off: Vec<f64> = (0..s.saturating_sub(1)).map(|i| -tangents[i + 1] + c_u * c_off[i]).collect();
            solve_tridiagonal(&off, &diag, &off, &mut r);
            for i in 0..s {
                un[i] += r[i];
            }
        }
        if !converged {
            return Err(SimulatorError::IntegrationFailure {
                step,
                residual: residual_norm,
            });
        }
        let vn: Vec<f64> = (0..s)
            .map(|i| c_u * (un[i] - u[i]) + (1.0 - gamma / beta) * v[i] + dt * (1.0 - gamma / (2.0 * beta)) * a[i])
            .collect();
        let an: Vec<f64> = (0..s)
            .map(|i| m_u * (un[i] - u[i]) - v[i] / (beta * dt) - (1.0 / (2.0 * beta) - 1.0) * a[i])
            .collect();
        springs.clone_from(&trial_springs);
        u = un;
        v = vn;
        a = an;
        hist.displacement.push(u.clone());
        hist.velocity.push(v.clone());
        hist.acceleration.push(a.clone());
        hist.story_force.push(forces.clone());
    }
    Ok(hist)
}

/// Sensor channels and peak drifts of one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Ground channel followed by absolute accelerations of floors 1..S.
    pub channels: Vec<AccelRecord>,
    pub peak_drift_ratios: Vec<f64>,
    /// Some story exceeded the collapse drift ratio.
    pub collapse: bool,
}

impl SimulationResult {
    pub fn ground(&self) -> &AccelRecord {
        &self.channels[0]
    }

    pub fn floors(&self) -> &[AccelRecord] {
        &self.channels[1..]
    }
}

pub fn simulate(building: &BuildingSpec, gm: &AccelRecord) -> Result<SimulationResult, SimulatorError> {
    let h = simulate_history(building, gm)?;
    let s = building.stories();
    let mut peaks = vec![0.0f64; s];
    for step in 0..h.displacement.len() {
        for (i, pk) in peaks.iter_mut().enumerate() {
            *pk = pk.max(h.drift(step, i).abs() / building.heights[i]);
        }
    }
    let mut channels = Vec::with_capacity(s + 1);
    channels.push(gm.clone().with_channel_id(GROUND));
    for i in 0..s {
        let abs: Vec<f64> = h.acceleration.iter().zip(&h.ground).map(|(a, g)| a[i] + g).collect();
        channels.push(AccelRecord::new(floor_channel(i + 1), h.dt, abs)?);
    }
    Ok(SimulationResult {
        channels,
        collapse: peaks.iter().any(|d| *d > COLLAPSE_DRIFT),
        peak_drift_ratios: peaks,
    })
}

/// Per-story and building damage labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DamageLabels {
    pub stories: Vec<Label>,
    pub building: Label,
}

/// A story is damaged iff its peak drift ratio strictly exceeds `threshold`.
pub fn label(peak_drift_ratios: &[f64], threshold: f64) -> DamageLabels {
    let stories: Vec<Label> = peak_drift_ratios
        .iter()
        .map(|d| if *d > threshold { Label::Damaged } else { Label::Undamaged })
        .collect();
    let building = if stories.contains(&Label::Damaged) {
        Label::Damaged
    } else {
        Label::Undamaged
    };
    DamageLabels { stories, building }
}

/// Scale factors with occurrence probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardScenario {
    pub scales: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub records_per_scale: usize,
}

impl HazardScenario {
    pub fn new(scales: Vec<f64>, probabilities: Vec<f64>, records_per_scale: usize) -> Result<Self, SimulatorError> {
        let h = Self {
            scales,
            probabilities,
            records_per_scale,
        };
        h.validate()?;
        Ok(h)
    }

    /// Probabilities proportional to `exp(−s / s0)`.
    pub fn exponential(scales: Vec<f64>, s0: f64, records_per_scale: usize) -> Result<Self, SimulatorError> {
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(SimulatorError::InvalidHazard(format!("s0 must be positive, got {s0}")));
        }
        let raw: Vec<f64> = scales.iter().map(|s| (-s / s0).exp()).collect();
        let total: f64 = raw.iter().sum();
        Self::new(scales, raw.iter().map(|p| p / total).collect(), records_per_scale)
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: String| Err(SimulatorError::InvalidHazard(m));
        if self.scales.is_empty() {
            return bad("no scale factors".into());
        }
        if self.scales.len() != self.probabilities.len() {
            return bad(format!(
                "{} scales but {} probabilities",
                self.scales.len(),
                self.probabilities.len()
            ));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scale factors must be positive and strictly ascending".into());
        }
        if self.probabilities.iter().any(|p| !(*p > 0.0)) {
            return bad("probabilities must be positive".into());
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("probabilities sum to {total}, expected 1"));
        }
        if self.records_per_scale == 0 {
            return bad("records_per_scale must be positive".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scales.len() * self.records_per_scale
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of record `record_index` at scale `scale_index`.
pub fn record_seed(seed: u64, scale_index: usize, record_index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ scale_index as u64) ^ record_index as u64)
}

/// One simulated, labeled observation with its raw sensor channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub record_id: String,
    pub scale_factor: f64,
    pub probability: f64,
    /// Ground channel followed by floors 1..S.
    pub channels: Vec<AccelRecord>,
    pub peak_drift_ratios: Vec<f64>,
    pub labels: DamageLabels,
    pub collapse: bool,
}

impl Event {
    pub fn features(&self, pairs: &ChannelPairSet, etas: &EtaSet) -> Result<FeatureVector, SignalError> {
        assemble_features(&self.channels[0], &self.channels[1..], pairs, etas)
    }
}

/// Record that could not be simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRecord {
    pub scale_index: usize,
    pub record_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub events: Vec<Event>,
    pub dropped: Vec<DroppedRecord>,
}

/// Simulate every (scale, record) pair of the hazard scenario.
///
/// Records run in parallel and are returned in (scale, record) order.
/// Occurrence probabilities are `p_i / n_rec`, renormalized over the
/// surviving records when some fail.
pub fn build_dataset(
    building: &BuildingSpec,
    gm: &GroundMotionSpec,
    hazard: &HazardScenario,
    seed: u64,
) -> Result<SimulatedDataset, SimulatorError> {
    building.validate()?;
    gm.validate()?;
    hazard.validate()?;
    let n_rec = hazard.records_per_scale;
    let jobs: Vec<(usize, usize)> = (0..hazard.scales.len())
        .flat_map(|i| (0..n_rec).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<Event, DroppedRecord>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let scale = hazard.scales[i];
            let run = || -> Result<SimulationResult, SimulatorError> {
                let record = generate_ground_motion(gm, scale, record_seed(seed, i, r))?;
                simulate(building, &record)
            };
            match run() {
                Ok(sim) => Ok(Event {
                    record_id: format!("s{i:02}_r{r:03}"),
                    scale_factor: scale,
                    probability: hazard.probabilities[i] / n_rec as f64,
                    labels: label(&sim.peak_drift_ratios, DAMAGE_DRIFT),
                    peak_drift_ratios: sim.peak_drift_ratios,
                    collapse: sim.collapse,
                    channels: sim.channels,
                }),
                Err(e) => Err(DroppedRecord {
                    scale_index: i,
                    record_index: r,
                    reason: SimulatorError::Record {
                        scale_index: i,
                        record_index: r,
                        source: Box::new(e),
                    }
                    .to_string(),
                }),
            }
        })
        .collect();
    let mut events = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r {
            Ok(e) => events.push(e),
            Err(d) => dropped.push(d),
        }
    }
    if !dropped.is_empty() {
        let mass: f64 = events.iter().map(|e| e.probability).sum();
        for e in &mut events {
            e.probability /= mass;
        }
    }
    Ok(SimulatedDataset { events, dropped })
}
