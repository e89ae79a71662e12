//! Gaussian-process surrogate with a Matérn 5/2 ARD kernel.
//!
//! Inputs live in the unit box; targets are standardized before fitting. The
//! signal variance is profiled out of the marginal likelihood, and the
//! per-dimension length scales plus the noise term are fitted by multistart
//! Nelder–Mead on the profiled negative log likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::function::erf::erfc;

use super::simplex;

/// Smallest noise term (relative to the signal variance).
pub const MIN_JITTER: f64 = 1e-8;
const MAX_NOISE: f64 = 1e-1;
const MIN_LENGTH: f64 = 1e-2;
const MAX_LENGTH: f64 = 1e1;

fn matern52(r: f64) -> f64 {
    let s5r = 5f64.sqrt() * r;
    (1.0 + s5r + 5.0 * r * r / 3.0) * (-s5r).exp()
}

fn scaled_distance(a: &[f64], b: &[f64], lengths: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lengths)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn correlation(x: &[Vec<f64>], lengths: &[f64], noise: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = matern52(scaled_distance(&x[i], &x[j], lengths));
        if i == j {
            k + noise
        } else {
            k
        }
    })
}

/// Profiled negative log marginal likelihood and its Cholesky factor.
fn profiled_nll(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    lengths: &[f64],
    noise: f64,
) -> Option<(f64, Cholesky<f64, Dyn>)> {
    let n = x.len() as f64;
    let chol = Cholesky::new(correlation(x, lengths, noise))?;
    let alpha = chol.solve(y);
    let quad = y.dot(&alpha);
    let sigma2 = (quad / n).max(1e-300);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let nll = 0.5 * n * sigma2.ln() + 0.5 * log_det;
    nll.is_finite().then_some((nll, chol))
}

/// Weights of the posterior mean, refined against the jitter-free kernel so
/// that the mean reproduces observed targets to within the jitter.
fn refine_interpolant(chol: &Cholesky<f64, Dyn>, k0: &DMatrix<f64>, y: &DVector<f64>, noise: f64) -> DVector<f64> {
    let mut alpha = chol.solve(y);
    for _ in 0..50 {
        let r = y - k0 * &alpha;
        if r.amax() <= 0.1 * noise {
            break;
        }
        alpha += chol.solve(&r);
    }
    alpha
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengths: Vec<f64>,
    noise: f64,
    signal_var: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    best_std: f64,
}

/// Posterior mean and standard deviation in standardized target units.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mean: f64,
    pub std: f64,
}

impl GpSurrogate {
    /// Fit to unit-box inputs `x` and raw targets `y`.
    pub fn fit<R: Rng>(x: &[Vec<f64>], y: &[f64], restarts: usize, rng: &mut R) -> Option<Self> {
        let d = x.first()?.len();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_scale = if sd > 1e-12 * y_mean.abs().max(1e-300) && sd > 0.0 { sd } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));

        // Parameters: log10 length per dim, then log10 noise.
        let lo: Vec<f64> = std::iter::repeat_n(MIN_LENGTH.log10(), d)
            .chain(std::iter::once(MIN_JITTER.log10()))
            .collect();
        let hi: Vec<f64> = std::iter::repeat_n(MAX_LENGTH.log10(), d)
            .chain(std::iter::once(MAX_NOISE.log10()))
            .collect();
        let mut objective = |p: &[f64]| -> f64 {
            let lengths: Vec<f64> = p[..d].iter().map(|v| 10f64.powf(*v)).collect();
            let noise = 10f64.powf(p[d]);
            profiled_nll(x, &ys, &lengths, noise).map_or(f64::INFINITY, |(v, _)| v)
        };

        let mut starts: Vec<Vec<f64>> = vec![
            std::iter::repeat_n(0.3f64.log10(), d).chain(std::iter::once(-6.0)).collect(),
            std::iter::repeat_n(0.0, d).chain(std::iter::once(-8.0)).collect(),
        ];
        for _ in 0..restarts.saturating_sub(2) {
            starts.push(lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect());
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for s in &starts {
            let r = simplex::minimize(&mut objective, s, &lo, &hi, 0.15, 120 * (d + 1), 1e-8);
            if r.f.is_finite() && best.as_ref().is_none_or(|(f, _)| r.f < *f) {
                best = Some((r.f, r.x));
            }
        }
        let (_, p) = best?;
        let lengths: Vec<f64> = p[..d].iter().map(|v| 10f64.powf(*v)).collect();
        let mut noise = 10f64.powf(p[d]).max(MIN_JITTER);
        // Escalate the jitter until the factorization succeeds.
        let mut fitted = profiled_nll(x, &ys, &lengths, noise);
        while fitted.is_none() && noise < MAX_NOISE {
            noise *= 10.0;
            fitted = profiled_nll(x, &ys, &lengths, noise);
        }
        let (_, chol) = fitted?;
        let alpha = refine_interpolant(&chol, &correlation(x, &lengths, 0.0), &ys, noise);
        let signal_var = (ys.dot(&chol.solve(&ys)) / n).max(1e-300);
        let best_std = ys.iter().copied().fold(f64::INFINITY, f64::min);
        Some(Self {
            x: x.to_vec(),
            y_mean,
            y_scale,
            lengths,
            noise,
            signal_var,
            chol,
            alpha,
            best_std,
        })
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.lengths
    }

    /// Standardize a raw target value.
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn predict(&self, point: &[f64]) -> Posterior {
        let k = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| matern52(scaled_distance(point, xi, &self.lengths))),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = self.signal_var * (1.0 - k.dot(&v)).max(0.0);
        Posterior {
            mean,
            std: var.sqrt(),
        }
    }

    /// Expected improvement below the best observed target.
    ///
    /// Points whose posterior variance is within ten times the noise floor
    /// of an observation are treated as already resolved and score zero.
    pub fn expected_improvement(&self, point: &[f64]) -> f64 {
        let post = self.predict(point);
        let floor = 10.0 * self.noise * self.signal_var;
        if post.std * post.std <= floor {
            return 0.0;
        }
        let improvement = self.best_std - post.mean;
        let z = improvement / post.std;
        let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (improvement * cdf + post.std * pdf).max(0.0)
    }
}
