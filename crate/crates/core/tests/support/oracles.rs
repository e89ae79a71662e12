//! Brute-force and slow-but-simple reference implementations.
//!
//! Nothing here calls into the library's solvers; the only shared pieces are
//! plain data types.

#![allow(dead_code)]

/// Dense RBF Gram matrix.
pub fn gram(x: &[Vec<f64>], theta3: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| {
            x.iter()
                .map(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                    (-theta3 * d2).exp()
                })
                .collect()
        })
        .collect()
}

/// Euclidean projection onto `{0 ≤ α ≤ c, yᵀα = 0}` by bisection on the
/// equality multiplier.
pub fn project(v: &[f64], y: &[f64], c: &[f64]) -> Vec<f64> {
    let at = |nu: f64| -> (Vec<f64>, f64) {
        let a: Vec<f64> = v
            .iter()
            .zip(y)
            .zip(c)
            .map(|((vi, yi), ci)| (vi + nu * yi).clamp(0.0, *ci))
            .collect();
        let s = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
        (a, s)
    };
    let span = v.iter().fold(0.0_f64, |m, x| m.max(x.abs())) + c.iter().fold(0.0_f64, |m, x| m.max(*x)) + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * span {
            break;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Dual objective `Σα − ½ αᵀQα`.
pub fn dual_objective(alpha: &[f64], y: &[f64], k: &[Vec<f64>]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub bias: f64,
    pub iterations: usize,
}

/// Projected gradient ascent on the SVM dual.
///
/// Uses a `1/L` step (L = trace bound on the Hessian norm) with Nesterov
/// momentum and gradient-based restarts, stopping when an iteration moves
/// the multipliers by less than 1e−15 or after `max_iter` iterations.
pub fn qp_dual(x: &[Vec<f64>], y: &[f64], c: &[f64], theta3: f64, max_iter: usize) -> QpSolution {
    let n = x.len();
    let k = gram(x, theta3);
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect())
        .collect();
    // Frobenius norm bounds the spectral norm.
    let lip = q.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q[i][j] * a[j]).sum::<f64>())
            .collect()
    };
    let mut alpha = project(&vec![0.0; n], y, c);
    let mut prev = alpha.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        let z: Vec<f64> = alpha.iter().zip(&prev).map(|(a, p)| a + mom * (a - p)).collect();
        let g = grad(&z);
        let next = project(
            &z.iter().zip(&g).map(|(zi, gi)| zi + step * gi).collect::<Vec<_>>(),
            y,
            c,
        );
        // Restart momentum when the step points against the gradient.
        let restart: f64 = g.iter().zip(next.iter().zip(&alpha)).map(|(gi, (n1, a))| gi * (n1 - a)).sum();
        let moved = next.iter().zip(&alpha).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        prev = std::mem::replace(&mut alpha, next);
        t = if restart < 0.0 { 1.0 } else { t_next };
        if moved < 1e-15 && it > 10 {
            break;
        }
    }
    let objective = dual_objective(&alpha, y, &k);

    // Bias from free multipliers; midpoint of the feasible interval otherwise.
    let f: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| alpha[j] * y[j] * k[i][j]).sum())
        .collect();
    let eps = 1e-8;
    let free: Vec<usize> = (0..n)
        .filter(|&i| alpha[i] > eps * c[i] && alpha[i] < c[i] * (1.0 - eps))
        .collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&i| y[i] - f[i]).sum::<f64>() / free.len() as f64
    } else {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..n {
            let b = y[i] - f[i];
            let at_zero = alpha[i] <= eps * c[i];
            // α = 0 needs y(f+b) ≥ 1, α = C needs y(f+b) ≤ 1.
            if (y[i] > 0.0) == at_zero {
                lo = lo.max(b);
            } else {
                hi = hi.min(b);
            }
        }
        0.5 * (lo + hi)
    };
    QpSolution { alpha, objective, bias, iterations }
}

/// Decision value of a kernel expansion on raw (already standardized) inputs.
pub fn expansion_decision(
    x_train: &[Vec<f64>],
    y: &[f64],
    alpha: &[f64],
    bias: f64,
    theta3: f64,
    probe: &[f64],
) -> f64 {
    x_train
        .iter()
        .zip(y)
        .zip(alpha)
        .map(|((xt, yt), at)| {
            let d2: f64 = xt.iter().zip(probe).map(|(u, v)| (u - v) * (u - v)).sum();
            at * yt * (-theta3 * d2).exp()
        })
        .sum::<f64>()
        + bias
}

/// Naive score matrix: loops over every cell and every observation.
pub fn naive_scores(truths: &[usize], preds: &[usize], probs: &[f64], p: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            for r in 0..truths.len() {
                if truths[r] == i && preds[r] == j {
                    s[i][j] += probs[r];
                }
            }
        }
    }
    s
}

/// Dense grid minimum of a function on the unit square.
pub fn grid_min_2d(f: impl Fn(f64, f64) -> f64, resolution: f64) -> f64 {
    let steps = (1.0 / resolution).round() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            best = best.min(f(i as f64 * resolution, j as f64 * resolution));
        }
    }
    best
}
