//! Small dense BFGS minimizer for fixed-size problems.

use nalgebra::{SMatrix, SVector};

pub(crate) struct Evaluation<const D: usize> {
    pub value: f64,
    pub gradient: SVector<f64, D>,
    /// Problem-specific stationarity measure compared against the tolerance.
    pub stationarity: f64,
}

pub(crate) struct Outcome<const D: usize> {
    pub x: SVector<f64, D>,
    pub value: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference Hessian of an analytic gradient.
pub(crate) fn fd_hessian<const D: usize>(
    eval: &impl Fn(&SVector<f64, D>) -> Evaluation<D>,
    x: &SVector<f64, D>,
) -> SMatrix<f64, D, D> {
    let mut h = SMatrix::<f64, D, D>::zeros();
    for j in 0..D {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut hi = *x;
        let mut lo = *x;
        hi[j] += step;
        lo[j] -= step;
        let col = (eval(&hi).gradient - eval(&lo).gradient) / (2.0 * step);
        h.set_column(j, &col);
    }
    (h + h.transpose()) * 0.5
}

fn initial_inverse<const D: usize>(h: SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    if h.iter().all(|v| v.is_finite()) {
        if let Some(chol) = h.cholesky() {
            return chol.inverse();
        }
        // Indefinite start: add a growing diagonal shift until it factors.
        let scale = h.amax().max(1e-8);
        let mut shift = 1e-6 * scale;
        for _ in 0..40 {
            let shifted = h + SMatrix::<f64, D, D>::identity() * shift;
            if let Some(chol) = shifted.cholesky() {
                return chol.inverse();
            }
            shift *= 4.0;
        }
    }
    SMatrix::identity()
}

/// Minimizes with BFGS and Armijo backtracking, starting from the inverse
/// of a finite-difference Hessian.
pub(crate) fn bfgs<const D: usize>(
    eval: impl Fn(&SVector<f64, D>) -> Evaluation<D>,
    x0: SVector<f64, D>,
    tolerance: f64,
    max_iterations: usize,
) -> Outcome<D> {
    let mut x = x0;
    let mut current = eval(&x);
    let mut inv = initial_inverse(fd_hessian(&eval, &x));
    let mut iterations = 0;
    let mut refreshed = false;

    while iterations < max_iterations {
        if current.stationarity < tolerance {
            return Outcome {
                x,
                value: current.value,
                stationarity: current.stationarity,
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let g = current.gradient;
        let mut dir = -(inv * g);
        if dir.dot(&g) >= 0.0 {
            inv = initial_inverse(fd_hessian(&eval, &x));
            dir = -(inv * g);
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = x + dir * step;
            let next = eval(&trial);
            if next.value.is_finite() {
                let armijo =
                    next.value < current.value && next.value <= current.value + 1e-4 * step * slope;
                // Close to the optimum the decrease drops below the rounding
                // of the objective; accept long steps that still shrink the
                // gradient.
                let flat = step >= 1e-3
                    && (next.value - current.value).abs() <= 1e-13 * current.value.abs().max(1.0)
                    && next.stationarity < current.stationarity;
                if armijo || flat {
                    accepted = Some((trial, next));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            // No descent along the quasi-Newton direction; retry once from a
            // fresh curvature estimate before giving up.
            if refreshed {
                break;
            }
            refreshed = true;
            inv = initial_inverse(fd_hessian(&eval, &x));
            continue;
        };
        refreshed = false;
        let s = trial - x;
        let y = next.gradient - g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = SMatrix::<f64, D, D>::identity();
            let left = eye - s * y.transpose() * rho;
            inv = left * inv * left.transpose() + s * s.transpose() * rho;
        }
        x = trial;
        current = next;
    }
    Outcome {
        x,
        value: current.value,
        stationarity: current.stationarity,
        iterations,
        converged: current.stationarity < tolerance,
    }
}
