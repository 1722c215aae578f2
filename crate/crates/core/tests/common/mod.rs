//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use mwradar::mle::{misspecified_loglik, score_term};
use mwradar::{ComplexSample, Hypothesis, Observation, ParamVector};
use nalgebra::{Matrix5, Vector5};

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `exp(-z) I0(z)` from the trapezoid rule on `(1/pi) int_0^pi exp(z (cos t - 1)) dt`,
/// which converges geometrically for this periodic integrand.
pub fn bessel_i0_scaled(z: f64) -> f64 {
    let n = 200 + (40.0 * z.sqrt()) as usize;
    let h = PI / n as f64;
    let mut sum = 0.5 * (1.0 + (-2.0 * z).exp());
    for k in 1..n {
        sum += (z * ((k as f64 * h).cos() - 1.0)).exp();
    }
    sum * h / PI
}

/// `Q1(a, b) = int_b^inf x exp(-(x^2 + a^2)/2) I0(a x) dx` by composite
/// Gauss-Legendre quadrature of the noncentral chi density.
pub fn marcum_q1_quadrature(a: f64, b: f64) -> f64 {
    let nodes = gauss_legendre(20);
    let upper = a.max(b) + 14.0;
    let panels = ((upper - b) / 0.5).ceil().max(1.0) as usize;
    let width = (upper - b) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = b + p as f64 * width;
        for &(t, w) in &nodes {
            let x = lo + 0.5 * width * (t + 1.0);
            let f = x * (-(x - a) * (x - a) / 2.0).exp() * bessel_i0_scaled(a * x);
            total += 0.5 * width * w * f;
        }
    }
    total
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn chi2_2dof_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x / 2.0).exp()
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Standard error of a sample median from the order-statistic confidence
/// band `[n/2 - sqrt(n), n/2 + sqrt(n)]`, which spans about four standard errors.
pub fn median_std_error(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let half = n.sqrt();
    let lo = ((n / 2.0 - half).floor().max(0.0)) as usize;
    let hi = ((n / 2.0 + half).ceil() as usize).min(s.len() - 1);
    (s[hi] - s[lo]) / 4.0
}

/// Central-difference gradient of the log-likelihood.
pub fn loglik_gradient_fd(theta: &ParamVector, obs: &Observation, step: f64) -> Vector5<f64> {
    let mut g = Vector5::zeros();
    for k in 0..5 {
        let mut hi = theta.0;
        let mut lo = theta.0;
        hi[k] += step;
        lo[k] -= step;
        let f_hi = misspecified_loglik(&ParamVector::new(hi), obs).unwrap();
        let f_lo = misspecified_loglik(&ParamVector::new(lo), obs).unwrap();
        g[k] = (f_hi - f_lo) / (2.0 * step);
    }
    g
}

/// Central-difference Jacobian of the per-sample score `s_n` in `theta`.
pub fn score_jacobian_fd(
    theta: &ParamVector,
    obs: &Observation,
    n: usize,
    step: f64,
) -> Matrix5<f64> {
    let mut j = Matrix5::zeros();
    for k in 0..5 {
        let mut hi = theta.0;
        let mut lo = theta.0;
        hi[k] += step;
        lo[k] -= step;
        let s_hi = score_term(&ParamVector::new(hi), obs, n).unwrap();
        let s_lo = score_term(&ParamVector::new(lo), obs, n).unwrap();
        j.set_column(k, &((s_hi - s_lo) / (2.0 * step)));
    }
    j
}

/// Observation from raw samples with a placeholder truth.
pub fn raw_observation(samples: Vec<ComplexSample>, steering: Vec<ComplexSample>) -> Observation {
    Observation::from_parts(
        samples,
        steering,
        ParamVector::new([0.0, 0.0, 0.0, 0.0, 1.0]),
        Hypothesis::H0,
    )
    .unwrap()
}

/// Monte Carlo average of the finite-difference score Jacobian for sample
/// `n` (0 or 1) of a two-sample record, with `x_n` drawn from the assumed
/// law given `x_prev`. Returns `(average, standard error, closed form)`.
pub fn hessian_oracle(
    theta: &ParamVector,
    x_prev: ComplexSample,
    steering: &[ComplexSample],
    n: usize,
    draws: usize,
    rng: &mut mwradar::RngStream,
) -> (Matrix5<f64>, Matrix5<f64>, Matrix5<f64>) {
    use rand_distr::{Distribution, StandardNormal};
    let v = steering[..2].to_vec();
    let (mean, var) = if n == 0 {
        (theta.alpha() * v[0], theta.marginal_variance())
    } else {
        (
            theta.alpha() * (v[1] - theta.rho() * v[0]) + theta.rho() * x_prev,
            theta.sigma2(),
        )
    };
    let base = raw_observation(vec![x_prev, ComplexSample::new(0.0, 0.0)], v.clone());
    let expected = mwradar::mle::hessian_term(theta, &base, n).unwrap();
    let mut sum = Matrix5::zeros();
    let mut sum_sq = Matrix5::zeros();
    for _ in 0..draws {
        let g: f64 = StandardNormal.sample(rng);
        let h: f64 = StandardNormal.sample(rng);
        let x = mean + ComplexSample::new(g, h) * (var / 2.0).sqrt();
        let samples = if n == 0 {
            vec![x, x_prev]
        } else {
            vec![x_prev, x]
        };
        let j = score_jacobian_fd(theta, &raw_observation(samples, v.clone()), n, 1e-6);
        sum += j;
        sum_sq += j.component_mul(&j);
    }
    let d = draws as f64;
    let avg = sum / d;
    let se = (sum_sq / d - avg.component_mul(&avg)).map(|v| (v.max(0.0) / d).sqrt());
    (avg, se, expected)
}

/// Largest `|average - expected|` in units of `3 se + 1e-6 (1 + |expected|)`.
/// Values at most 1 pass.
pub fn hessian_oracle_ratio(avg: &Matrix5<f64>, se: &Matrix5<f64>, expected: &Matrix5<f64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..5 {
        for c in 0..5 {
            let allowed = 3.0 * se[(r, c)] + 1e-6 * (1.0 + expected[(r, c)].abs());
            worst = worst.max((avg[(r, c)] - expected[(r, c)]).abs() / allowed);
        }
    }
    worst
}

/// Uniformly random interior parameter point.
pub fn random_theta(rng: &mut mwradar::RngStream) -> ParamVector {
    use rand::Rng;
    let r = rng.random_range(0.0..0.9);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    ParamVector::new([
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        r * phase.cos(),
        r * phase.sin(),
        rng.random_range(0.3..3.0),
    ])
}
