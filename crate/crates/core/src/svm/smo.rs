//! Sequential minimal optimization for the weighted C-SVM dual
//!
//! Minimizes `f(α) = ½ αᵀQα − eᵀα` with `Q_ij = y_i y_j K(x_i, x_j)`,
//! subject to `0 ≤ α_r ≤ C_r` and `yᵀα = 0`. Working pairs are chosen by the
//! maximal-violating-pair rule.

use std::collections::VecDeque;

use super::{rbf_kernel_unchecked, SvmError};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoConfig {
    /// Stop once the maximal violating-pair gap is at most this value.
    pub tolerance: f64,
    /// Cap on pair updates.
    pub max_iterations: u64,
    /// Kernel row cache budget in bytes.
    pub cache_bytes: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 10_000_000,
            cache_bytes: 256 << 20,
        }
    }
}

/// Convergence diagnostics of one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: u64,
    /// Dual objective `Σα − ½αᵀQα` at termination.
    pub dual_objective: f64,
    /// Maximal violating-pair gap at termination.
    pub gap: f64,
}

/// LRU cache of kernel rows `K(x_i, ·)`.
struct KernelCache<'a> {
    x: &'a [Vec<f64>],
    theta3: f64,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], theta3: f64, cache_bytes: usize) -> Self {
        let n = x.len();
        let row_bytes = (n * std::mem::size_of::<f64>()).max(1);
        let capacity = (cache_bytes / row_bytes).clamp(2, n.max(2));
        Self {
            x,
            theta3,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            if let Some(pos) = self.order.iter().position(|&r| r == i) {
                self.order.remove(pos);
            }
            self.order.push_back(i);
            return;
        }
        if self.order.len() >= self.capacity {
            if let Some(evict) = self.order.pop_front() {
                self.rows[evict] = None;
            }
        }
        let xi = &self.x[i];
        let row = self
            .x
            .iter()
            .map(|xj| rbf_kernel_unchecked(xi, xj, self.theta3))
            .collect();
        self.rows[i] = Some(row);
        self.order.push_back(i);
    }

    /// Both rows, with `i` and `j` guaranteed resident.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        (
            self.rows[i].as_deref().expect("row i cached"),
            self.rows[j].as_deref().expect("row j cached"),
        )
    }
}

pub(crate) struct Solver<'a> {
    y: &'a [f64],
    c: &'a [f64],
    alpha: Vec<f64>,
    grad: Vec<f64>,
    cache: KernelCache<'a>,
    config: SmoConfig,
    iterations: u64,
}

impl<'a> Solver<'a> {
    pub(crate) fn new(
        x: &'a [Vec<f64>],
        y: &'a [f64],
        c: &'a [f64],
        theta3: f64,
        config: SmoConfig,
    ) -> Self {
        let n = x.len();
        Self {
            y,
            c,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
            cache: KernelCache::new(x, theta3, config.cache_bytes),
            config,
            iterations: 0,
        }
    }

    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] < self.c[t]
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c[t]
        }
    }

    /// Maximal violating pair `(i, j, gap)`; `None` when either set is empty.
    pub(crate) fn select_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best_up = (usize::MAX, f64::NEG_INFINITY);
        let mut best_low = (usize::MAX, f64::INFINITY);
        for t in 0..self.alpha.len() {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) && v > best_up.1 {
                best_up = (t, v);
            }
            if self.in_low(t) && v < best_low.1 {
                best_low = (t, v);
            }
        }
        if best_up.0 == usize::MAX || best_low.0 == usize::MAX {
            return None;
        }
        Some((best_up.0, best_low.0, best_up.1 - best_low.1))
    }

    pub(crate) fn dual_objective(&self) -> f64 {
        0.5 * self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a * (1.0 - g))
            .sum::<f64>()
    }

    /// Analytic two-variable update on `(i, j)`.
    pub(crate) fn update_pair(&mut self, i: usize, j: usize) {
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ci, cj) = (self.c[i], self.c[j]);
        let (ki, kj) = self.cache.pair(i, j);
        let kij = ki[j];
        let (old_ai, old_aj) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_ai, old_aj);
        let (gi, gj) = (self.grad[i], self.grad[j]);

        let mut quad = ki[i] + kj[j] - 2.0 * kij;
        if quad <= 0.0 {
            quad = TAU;
        }
        if yi != yj {
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        let dai = ai - old_ai;
        let daj = aj - old_aj;
        for t in 0..self.grad.len() {
            let yt = self.y[t];
            self.grad[t] += yt * (yi * ki[t] * dai + yj * kj[t] * daj);
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        self.iterations += 1;
    }

    pub(crate) fn solve(&mut self) -> Result<SolveStats, SvmError> {
        loop {
            let gap = match self.select_pair() {
                Some((i, j, gap)) if gap > self.config.tolerance => {
                    if self.iterations >= self.config.max_iterations {
                        return Err(SvmError::NonConvergence {
                            iterations: self.iterations,
                            gap,
                            tolerance: self.config.tolerance,
                        });
                    }
                    self.update_pair(i, j);
                    continue;
                }
                Some((_, _, gap)) => gap,
                None => 0.0,
            };
            return Ok(SolveStats {
                iterations: self.iterations,
                dual_objective: self.dual_objective(),
                gap,
            });
        }
    }

    pub(crate) fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Training-time decision values without bias: `Σ_s α_s y_s K(x_t, x_s)`.
    pub(crate) fn kernel_expansion(&self) -> Vec<f64> {
        self.grad
            .iter()
            .zip(self.y)
            .map(|(g, y)| y * (g + 1.0))
            .collect()
    }

    /// Offset `ρ` such that the decision function is `Σ α y K − ρ`.
    pub(crate) fn rho(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for t in 0..self.alpha.len() {
            let yg = self.y[t] * self.grad[t];
            let at_upper = self.alpha[t] >= self.c[t];
            let at_lower = self.alpha[t] <= 0.0;
            if at_upper {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if at_lower {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        if free > 0 {
            free_sum / free as f64
        } else {
            0.5 * (ub + lb)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| if v[0] + 0.5 * v[1] + rng.random_range(-0.7..0.7) > 0.0 { 1.0 } else { -1.0 })
            .collect();
        let c = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
        (x, y, c)
    }

    #[test]
    fn dual_objective_is_monotone() {
        for seed in 0..5 {
            let (x, y, c) = random_problem(seed, 40);
            let mut s = Solver::new(&x, &y, &c, 0.7, SmoConfig::default());
            let mut last = s.dual_objective();
            while let Some((i, j, gap)) = s.select_pair() {
                if gap <= 1e-6 {
                    break;
                }
                s.update_pair(i, j);
                let d = s.dual_objective();
                assert!(d >= last - 1e-12, "objective decreased {last} -> {d}");
                last = d;
            }
        }
    }

    #[test]
    fn box_and_equality_hold_every_iteration() {
        let (x, y, c) = random_problem(11, 35);
        let mut s = Solver::new(&x, &y, &c, 1.3, SmoConfig::default());
        while let Some((i, j, gap)) = s.select_pair() {
            if gap <= 1e-3 {
                break;
            }
            s.update_pair(i, j);
            for (a, ct) in s.alpha().iter().zip(&c) {
                assert!(*a >= 0.0 && *a <= *ct);
            }
            let eq: f64 = s.alpha().iter().zip(&y).map(|(a, yy)| a * yy).sum();
            assert!(eq.abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_cache_matches_full_cache() {
        let (x, y, c) = random_problem(3, 30);
        let full = {
            let mut s = Solver::new(&x, &y, &c, 0.5, SmoConfig::default());
            s.solve().unwrap();
            s.alpha().to_vec()
        };
        let cfg = SmoConfig {
            cache_bytes: 1,
            ..SmoConfig::default()
        };
        let mut s = Solver::new(&x, &y, &c, 0.5, cfg);
        s.solve().unwrap();
        assert_eq!(s.alpha(), full.as_slice());
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let (x, y, c) = random_problem(5, 30);
        let cfg = SmoConfig {
            max_iterations: 2,
            tolerance: 1e-9,
            ..SmoConfig::default()
        };
        let mut s = Solver::new(&x, &y, &c, 0.5, cfg);
        match s.solve() {
            Err(SvmError::NonConvergence { iterations, gap, .. }) => {
                assert_eq!(iterations, 2);
                assert!(gap > 1e-9);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
