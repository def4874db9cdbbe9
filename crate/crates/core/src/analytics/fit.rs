//! Least-squares fit of `y = 2·σ(a + b·x) − 1` by Levenberg–Marquardt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_FIT_POINTS: usize = 10;
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub coefficient: f64,
    /// 1 − SSR/SST on the fitted scale, clamped to [0,1].
    pub r_squared: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub ssr: f64,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        scaled_sigmoid(self.intercept + self.coefficient * x)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {MIN_FIT_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite input at point {0}")]
    NonFinite(usize),
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e}); best a={:.4} b={:.4}", best.intercept, best.coefficient)]
    NoConvergence { best: FitResult, iterations: usize, gradient_norm: f64 },
}

/// `2·σ(z) − 1`, written as `tanh(z/2)` for accuracy near zero.
pub fn scaled_sigmoid(z: f64) -> f64 {
    (z / 2.0).tanh()
}

fn ssr(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - scaled_sigmoid(a + b * x)).powi(2)).sum()
}

/// Fits from `a = b = 0` so results depend only on the data.
pub fn fit_scaled_sigmoid(xs: &[f64], ys: &[f64]) -> Result<FitResult, FitError> {
    let n = xs.len().min(ys.len());
    if n < MIN_FIT_POINTS {
        return Err(FitError::TooFewPoints(n));
    }
    let (xs, ys) = (&xs[..n], &ys[..n]);
    if let Some(i) = (0..n).find(|&i| !xs[i].is_finite() || !ys[i].is_finite()) {
        return Err(FitError::NonFinite(i));
    }

    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut cost = ssr(xs, ys, a, b);
    let mut lambda = 1e-3;
    let mut gradient_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // normal equations for the residual r = y − f
        let (mut jtj00, mut jtj01, mut jtj11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let f = scaled_sigmoid(a + b * x);
            let d = 0.5 * (1.0 - f * f);
            let r = y - f;
            jtj00 += d * d;
            jtj01 += d * d * x;
            jtj11 += d * d * x * x;
            g0 += d * r;
            g1 += d * r * x;
        }
        gradient_norm = g0.abs().max(g1.abs());
        if gradient_norm < 1e-13 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let m00 = jtj00 + lambda * jtj00.max(1e-12);
            let m11 = jtj11 + lambda * jtj11.max(1e-12);
            let det = m00 * m11 - jtj01 * jtj01;
            if det.abs() > 0.0 && det.is_finite() {
                let da = (m11 * g0 - jtj01 * g1) / det;
                let db = (m00 * g1 - jtj01 * g0) / det;
                let trial = ssr(xs, ys, a + da, b + db);
                if trial.is_finite() && trial <= cost {
                    let improvement = cost - trial;
                    a += da;
                    b += db;
                    cost = trial;
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    let step = da.abs().max(db.abs());
                    if improvement <= 1e-15 * (1.0 + cost) && step <= 1e-10 * (1.0 + a.abs().max(b.abs())) {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            // no step improves the cost: a stationary point up to rounding
            converged = converged || gradient_norm < 1e-6 * (1.0 + cost);
            break;
        }
    }

    let mean = ys.iter().sum::<f64>() / n as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { (1.0 - cost / sst).clamp(0.0, 1.0) } else { 0.0 };
    let result = FitResult { intercept: a, coefficient: b, r_squared, n_points: n, iterations, ssr: cost };
    if converged {
        Ok(result)
    } else {
        Err(FitError::NoConvergence { best: result, iterations, gradient_norm })
    }
}
