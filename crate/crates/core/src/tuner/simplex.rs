//! Box-bounded Nelder–Mead minimizer.

pub(crate) struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
}

/// Minimize `f` starting from `x0`, keeping every vertex inside `[lo, hi]`
/// by clamping.
pub(crate) fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    initial_step: f64,
    max_evals: usize,
    ftol: f64,
) -> SimplexResult {
    let d = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
            *v = v.clamp(*l, *h);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    clamp(&mut start);
    simplex.push(start.clone());
    for i in 0..d {
        let mut v = start.clone();
        let span = hi[i] - lo[i];
        let step = initial_step * span;
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if (values[d] - values[0]).abs() <= ftol * (values[0].abs() + ftol) {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|c| simplex[..d].iter().map(|v| v[c]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clamp(&mut p);
            p
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
        } else {
            let (xc, fc) = if fr < values[d] {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < values[d].min(fr) {
                simplex[d] = xc;
                values[d] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=d {
                    let mut v: Vec<f64> = best
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    clamp(&mut v);
                    values[i] = eval(&v, &mut evals);
                    simplex[i] = v;
                }
            }
        }
    }

    let best = (0..=d)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    SimplexResult {
        x: simplex[best].clone(),
        f: values[best],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(&mut f, &[-1.0, 1.5], &[-2.0, -2.0], &[2.0, 2.0], 0.1, 5000, 1e-14);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let mut f = |x: &[f64]| x[0] + x[1];
        let r = minimize(&mut f, &[0.5, 0.5], &[0.0, 0.2], &[1.0, 1.0], 0.2, 2000, 1e-12);
        assert!(r.x[0] >= 0.0 && r.x[1] >= 0.2);
        assert!((r.f - 0.2).abs() < 1e-6);
    }
}
