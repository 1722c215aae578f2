//! Misspecified Gaussian likelihood of the AR(1)-plus-target model, its
//! closed-form score vectors and conditional Hessians, and the misspecified
//! maximum-likelihood (MML) estimator.
//!
//! Parameters are ordered `theta = [alpha_re, alpha_im, rho_re, rho_im, sigma2]`.
//! The assumed density factors as
//!
//! ```text
//! f(x; theta) = g(x_1 | mu_1, s) * prod_{n>=2} g(x_n | mu_n, sigma2)
//! g(x | mu, s) = exp(-|x - mu|^2 / s) / (pi s)
//! mu_1 = alpha v_1
//! mu_n = alpha (v_n - rho v_{n-1}) + rho x_{n-1}
//! s    = sigma2 / (1 - |rho|^2)
//! ```

use std::f64::consts::PI;

use nalgebra::{Matrix5, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::ComplexSample;
use crate::optim::{self, Evaluation};
use crate::signal::Observation;

/// The five real model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub [f64; 5]);

impl ParamVector {
    pub fn new(theta: [f64; 5]) -> Self {
        ParamVector(theta)
    }

    pub fn from_parts(alpha: ComplexSample, rho: ComplexSample, sigma2: f64) -> Self {
        ParamVector([alpha.re, alpha.im, rho.re, rho.im, sigma2])
    }

    pub fn alpha_re(&self) -> f64 {
        self.0[0]
    }

    pub fn alpha_im(&self) -> f64 {
        self.0[1]
    }

    pub fn alpha(&self) -> ComplexSample {
        ComplexSample::new(self.0[0], self.0[1])
    }

    pub fn rho(&self) -> ComplexSample {
        ComplexSample::new(self.0[2], self.0[3])
    }

    pub fn sigma2(&self) -> f64 {
        self.0[4]
    }

    /// Marginal variance `s = sigma2 / (1 - rho_re^2 - rho_im^2)` of the first sample.
    pub fn marginal_variance(&self) -> f64 {
        self.sigma2() / (1.0 - self.rho().norm_sqr())
    }

    pub fn as_vector(&self) -> Vector5<f64> {
        Vector5::from(self.0)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        ParamVector([v[0], v[1], v[2], v[3], v[4]])
    }

    /// The null-hypothesis point `[0, 0, rho, sigma2]`.
    pub fn null_projection(&self) -> Self {
        ParamVector([0.0, 0.0, self.0[2], self.0[3], self.0[4]])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(domain("parameter vector has a non-finite entry", f64::NAN));
        }
        let r2 = self.rho().norm_sqr();
        if r2 >= 1.0 {
            return Err(domain("assumed model needs rho_re^2 + rho_im^2 < 1", r2));
        }
        if self.sigma2() <= 0.0 {
            return Err(domain(
                "assumed innovation power must be > 0",
                self.sigma2(),
            ));
        }
        Ok(())
    }
}

/// Residuals, conditional means and first-sample variance at a parameter point.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace {
    pub residuals: Vec<ComplexSample>,
    pub means: Vec<ComplexSample>,
    pub marginal_variance: f64,
}

impl LikelihoodWorkspace {
    pub fn new(theta: &ParamVector, obs: &Observation) -> Result<Self> {
        check_inputs(theta, obs, 2)?;
        let (x, v) = (&obs.samples, &obs.steering);
        let (alpha, rho) = (theta.alpha(), theta.rho());
        let means: Vec<ComplexSample> = (0..x.len())
            .map(|n| {
                if n == 0 {
                    alpha * v[0]
                } else {
                    alpha * (v[n] - rho * v[n - 1]) + rho * x[n - 1]
                }
            })
            .collect();
        let residuals = x.iter().zip(&means).map(|(x, mu)| x - mu).collect();
        Ok(LikelihoodWorkspace {
            residuals,
            means,
            marginal_variance: theta.marginal_variance(),
        })
    }
}

fn check_inputs(theta: &ParamVector, obs: &Observation, needed: usize) -> Result<()> {
    theta.validate()?;
    if obs.len() < needed {
        return Err(Error::UnsupportedSize {
            needed,
            got: obs.len(),
        });
    }
    Ok(())
}

/// `ln f(x; theta)` of the misspecified Gaussian AR(1) model.
pub fn misspecified_loglik(theta: &ParamVector, obs: &Observation) -> Result<f64> {
    let ws = LikelihoodWorkspace::new(theta, obs)?;
    let s = ws.marginal_variance;
    let sigma2 = theta.sigma2();
    let head = -(PI * s).ln() - ws.residuals[0].norm_sqr() / s;
    let tail: f64 = ws.residuals[1..].iter().map(|e| e.norm_sqr()).sum();
    Ok(head - (obs.len() - 1) as f64 * (PI * sigma2).ln() - tail / sigma2)
}

/// Per-sample quantities shared by the score and the conditional Hessian.
#[derive(Debug, Clone, Copy)]
struct Term {
    residual: ComplexSample,
    grad_mean_re: Vector5<f64>,
    grad_mean_im: Vector5<f64>,
    variance: f64,
    grad_variance: Vector5<f64>,
}

impl Term {
    fn score(&self) -> Vector5<f64> {
        let e = self.residual;
        let var = self.variance;
        (self.grad_mean_re * e.re + self.grad_mean_im * e.im) * (2.0 / var)
            + self.grad_variance * ((e.norm_sqr() / var - 1.0) / var)
    }

    fn hessian(&self) -> Matrix5<f64> {
        let var = self.variance;
        -(self.grad_mean_re * self.grad_mean_re.transpose()
            + self.grad_mean_im * self.grad_mean_im.transpose())
            * (2.0 / var)
            - self.grad_variance * self.grad_variance.transpose() / (var * var)
    }
}

fn term(theta: &ParamVector, obs: &Observation, n: usize) -> Term {
    let t = &theta.0;
    let (x, v) = (&obs.samples, &obs.steering);
    if n == 0 {
        let r2 = t[2] * t[2] + t[3] * t[3];
        let d = 1.0 - r2;
        let s = t[4] / d;
        let mu = theta.alpha() * v[0];
        return Term {
            residual: x[0] - mu,
            grad_mean_re: Vector5::new(v[0].re, -v[0].im, 0.0, 0.0, 0.0),
            grad_mean_im: Vector5::new(v[0].im, v[0].re, 0.0, 0.0, 0.0),
            variance: s,
            grad_variance: Vector5::new(
                0.0,
                0.0,
                2.0 * t[2] * t[4] / (d * d),
                2.0 * t[3] * t[4] / (d * d),
                1.0 / d,
            ),
        };
    }
    let (vn, vp, xp) = (v[n], v[n - 1], x[n - 1]);
    let mu = theta.alpha() * (vn - theta.rho() * vp) + theta.rho() * xp;
    Term {
        residual: x[n] - mu,
        grad_mean_re: Vector5::new(
            vn.re + vp.im * t[3] - vp.re * t[2],
            -vn.im + vp.im * t[2] + vp.re * t[3],
            xp.re + vp.im * t[1] - vp.re * t[0],
            -xp.im + vp.im * t[0] + vp.re * t[1],
            0.0,
        ),
        grad_mean_im: Vector5::new(
            vn.im - vp.im * t[2] - vp.re * t[3],
            vn.re + vp.im * t[3] - vp.re * t[2],
            xp.im - vp.im * t[0] - vp.re * t[1],
            xp.re + vp.im * t[1] - vp.re * t[0],
            0.0,
        ),
        variance: t[4],
        grad_variance: Vector5::new(0.0, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Score vectors `s_n(theta)`, `n = 1..N` (index 0 is the first sample).
pub fn score(theta: &ParamVector, obs: &Observation) -> Result<Vec<Vector5<f64>>> {
    check_inputs(theta, obs, 2)?;
    Ok((0..obs.len())
        .map(|n| term(theta, obs, n).score())
        .collect())
}

/// Conditional Hessians `H_n(theta) = E[grad^T s_n | x_{n-1}]` in closed form.
pub fn conditional_hessian(theta: &ParamVector, obs: &Observation) -> Result<Vec<Matrix5<f64>>> {
    check_inputs(theta, obs, 2)?;
    Ok((0..obs.len())
        .map(|n| term(theta, obs, n).hessian())
        .collect())
}

/// Score of a single sample. `n` is zero-based.
pub fn score_term(theta: &ParamVector, obs: &Observation, n: usize) -> Result<Vector5<f64>> {
    check_inputs(theta, obs, (n + 1).max(2))?;
    Ok(term(theta, obs, n).score())
}

/// Conditional Hessian of a single sample. `n` is zero-based.
pub fn hessian_term(theta: &ParamVector, obs: &Observation, n: usize) -> Result<Matrix5<f64>> {
    check_inputs(theta, obs, (n + 1).max(2))?;
    Ok(term(theta, obs, n).hessian())
}

/// `(1/N) sum H_n` and `(1/N) sum s_n s_n^T`, accumulated in one pass.
pub(crate) fn average_hessian_and_outer(
    theta: &ParamVector,
    obs: &Observation,
) -> Result<(Matrix5<f64>, Matrix5<f64>)> {
    check_inputs(theta, obs, 2)?;
    let mut a = Matrix5::zeros();
    let mut b = Matrix5::zeros();
    for n in 0..obs.len() {
        let t = term(theta, obs, n);
        a += t.hessian();
        let s = t.score();
        b += s * s.transpose();
    }
    let n = obs.len() as f64;
    Ok((a / n, b / n))
}

/// Sums over `n >= 2` that make the log-likelihood and its gradient O(1)
/// per evaluation. `x`, `y` denote `x_n`, `x_{n-1}` and `v`, `w` denote
/// `v_n`, `v_{n-1}`.
#[derive(Debug, Clone, Copy)]
struct SufficientStats {
    n: usize,
    x1: ComplexSample,
    v1: ComplexSample,
    sxx: f64,
    syy: f64,
    svv: f64,
    sww: f64,
    sxy: ComplexSample,
    svw: ComplexSample,
    sxv: ComplexSample,
    sxw: ComplexSample,
    syv: ComplexSample,
    syw: ComplexSample,
}

impl SufficientStats {
    fn new(x: &[ComplexSample], v: &[ComplexSample]) -> Self {
        let zero = ComplexSample::new(0.0, 0.0);
        let mut st = SufficientStats {
            n: x.len(),
            x1: x[0],
            v1: v[0],
            sxx: 0.0,
            syy: 0.0,
            svv: 0.0,
            sww: 0.0,
            sxy: zero,
            svw: zero,
            sxv: zero,
            sxw: zero,
            syv: zero,
            syw: zero,
        };
        for n in 1..x.len() {
            let (xn, yn, vn, wn) = (x[n], x[n - 1], v[n], v[n - 1]);
            st.sxx += xn.norm_sqr();
            st.syy += yn.norm_sqr();
            st.svv += vn.norm_sqr();
            st.sww += wn.norm_sqr();
            st.sxy += xn * yn.conj();
            st.svw += vn * wn.conj();
            st.sxv += xn * vn.conj();
            st.sxw += xn * wn.conj();
            st.syv += yn * vn.conj();
            st.syw += yn * wn.conj();
        }
        st
    }

    /// Conditional least-squares `alpha` for fixed `rho`.
    fn alpha_given_rho(&self, r: ComplexSample) -> ComplexSample {
        let num = self.sxv - r.conj() * self.sxw - r * self.syv + r.norm_sqr() * self.syw;
        let den = self.svv - 2.0 * (r.conj() * self.svw).re + r.norm_sqr() * self.sww;
        num / den
    }

    /// `(sum e_n conj(e_{n-1}), sum |e_{n-1}|^2)` with `e_n = x_n - alpha v_n`.
    fn lagged_residual_moments(&self, a: ComplexSample) -> (ComplexSample, f64) {
        let cross = self.sxy - a.conj() * self.sxw - a * self.syv.conj() + a.norm_sqr() * self.svw;
        let lagged = self.syy - 2.0 * (a.conj() * self.syw).re + a.norm_sqr() * self.sww;
        (cross, lagged)
    }

    /// `sum_{n>=2} |x_n - mu_n|^2`.
    fn conditional_rss(&self, a: ComplexSample, r: ComplexSample) -> f64 {
        let current = self.sxx - 2.0 * (a.conj() * self.sxv).re + a.norm_sqr() * self.svv;
        let (cross, lagged) = self.lagged_residual_moments(a);
        current - 2.0 * (r.conj() * cross).re + r.norm_sqr() * lagged
    }

    /// Log-likelihood and its gradient in `theta`.
    fn loglik_and_gradient(&self, theta: &[f64; 5]) -> (f64, Vector5<f64>) {
        let a = ComplexSample::new(theta[0], theta[1]);
        let r = ComplexSample::new(theta[2], theta[3]);
        let sigma2 = theta[4];
        let n = self.n as f64;
        let d = 1.0 - r.norm_sqr();
        let e1 = self.x1 - a * self.v1;
        let rss = self.conditional_rss(a, r);
        let weighted = d * e1.norm_sqr() + rss;
        let value = -n * PI.ln() - n * sigma2.ln() + d.ln() - weighted / sigma2;

        // sum eps_n conj(z_n), z_n = v_n - rho v_{n-1}
        let eps_z = (self.sxv - a * self.svv)
            - r.conj() * (self.sxw - a * self.svw)
            - r * (self.syv - a * self.svw.conj())
            + r.norm_sqr() * (self.syw - a * self.sww);
        let (cross, lagged) = self.lagged_residual_moments(a);
        let eps_lag = cross - r * lagged;

        let grad_a = e1 * self.v1.conj() * (2.0 * d / sigma2) + eps_z * (2.0 / sigma2);
        let grad_r = r * (2.0 * e1.norm_sqr() / sigma2 - 2.0 / d) + eps_lag * (2.0 / sigma2);
        let grad_s = -n / sigma2 + weighted / (sigma2 * sigma2);
        (
            value,
            Vector5::new(grad_a.re, grad_a.im, grad_r.re, grad_r.im, grad_s),
        )
    }
}

/// Options for [`mml_estimate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub max_iterations: usize,
    /// Stop when `||sum_n s_n|| < gradient_tolerance * N` (on power-normalized data).
    pub gradient_tolerance: f64,
    /// Eight additional perturbed starts; the best objective wins.
    pub multistart: bool,
    /// Hard bound on `|rho_hat|`.
    pub rho_cap: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            multistart: false,
            rho_cap: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// `||sum_n s_n(theta_hat)||` on power-normalized data.
    pub gradient_norm: f64,
    pub converged: bool,
    /// `|rho_hat|` ended within a relative `1e-4` of the cap.
    pub rho_cap_active: bool,
    pub loglik: f64,
    pub starts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub theta: ParamVector,
    pub report: ConvergenceReport,
}

/// MML estimate with default options.
pub fn mml_estimate(obs: &Observation, init: Option<ParamVector>) -> Result<Estimate> {
    mml_estimate_with(obs, init, &EstimatorOptions::default())
}

pub const MIN_ESTIMATION_LEN: usize = 10;

/// Maximizes the full misspecified log-likelihood.
///
/// The data are first scaled to unit mean power (the estimator is scale
/// equivariant). A conditional least-squares warm start alternates the
/// closed-form `alpha | rho` and `rho | alpha` solutions, then BFGS refines
/// all five parameters through the unconstrained map
/// `rho = cap * tanh(|q|) q / |q|`, `sigma2 = exp(w)`.
pub fn mml_estimate_with(
    obs: &Observation,
    init: Option<ParamVector>,
    options: &EstimatorOptions,
) -> Result<Estimate> {
    let n = obs.len();
    if n < MIN_ESTIMATION_LEN {
        return Err(Error::UnsupportedSize {
            needed: MIN_ESTIMATION_LEN,
            got: n,
        });
    }
    if obs.steering.len() != n {
        return Err(Error::UnsupportedSize {
            needed: n,
            got: obs.steering.len(),
        });
    }
    let first = obs.samples[0];
    if obs.samples.iter().all(|z| *z == first) {
        return Err(Error::Estimation("all samples are identical".into()));
    }
    let power = obs.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    if !power.is_finite() {
        return Err(domain("observation contains a non-finite sample", power));
    }
    let scale = power.sqrt();
    let normalized: Vec<ComplexSample> = obs.samples.iter().map(|z| z / scale).collect();
    let stats = SufficientStats::new(&normalized, &obs.steering);
    let cap = options.rho_cap;

    let mut starts = vec![match init {
        Some(theta) => {
            theta.validate()?;
            let mut t = theta.0;
            t[0] /= scale;
            t[1] /= scale;
            t[4] /= power;
            t
        }
        None => warm_start(&stats, cap)?,
    }];
    if options.multistart {
        let base = ComplexSample::new(starts[0][2], starts[0][3]);
        for k in 0..8 {
            let offset = ComplexSample::from_polar(0.25, k as f64 * PI / 4.0);
            let mut r = base + offset;
            if r.norm() > 0.9 * cap {
                r *= 0.9 * cap / r.norm();
            }
            let a = stats.alpha_given_rho(r);
            let sigma2 = initial_sigma2(&stats, a, r)?;
            starts.push([a.re, a.im, r.re, r.im, sigma2]);
        }
    }

    let eval = |phi: &Vector5<f64>| evaluate(&stats, phi, cap);
    let mut best: Option<(optim::Outcome<5>, ParamVector)> = None;
    for start in &starts {
        let phi0 = to_unconstrained(start, cap);
        let out = optim::bfgs(
            eval,
            phi0,
            options.gradient_tolerance,
            options.max_iterations,
        );
        let theta = ParamVector::new(from_unconstrained(&out.x, cap));
        let better = match &best {
            None => true,
            Some((b, _)) => out.value < b.value,
        };
        if better {
            best = Some((out, theta));
        }
    }
    let (out, theta_n) = best.expect("at least one start");
    if !out.value.is_finite() {
        return Err(Error::Estimation("log-likelihood diverged".into()));
    }
    let t = theta_n.0;
    let theta = ParamVector::new([t[0] * scale, t[1] * scale, t[2], t[3], t[4] * power]);
    let rho_abs = theta.rho().norm();
    Ok(Estimate {
        theta,
        report: ConvergenceReport {
            iterations: out.iterations,
            gradient_norm: out.stationarity * n as f64,
            converged: out.converged,
            rho_cap_active: rho_abs >= cap * (1.0 - 1e-4),
            loglik: -out.value * n as f64 - n as f64 * power.ln(),
            starts: starts.len(),
        },
    })
}

fn initial_sigma2(stats: &SufficientStats, a: ComplexSample, r: ComplexSample) -> Result<f64> {
    let sigma2 = stats.conditional_rss(a, r) / (stats.n - 1) as f64;
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(sigma2.max(1e-300))
    } else if sigma2.is_finite() {
        // Rounding can push an exact fit slightly negative.
        Ok(1e-14)
    } else {
        Err(Error::Estimation(
            "warm start produced a non-finite residual power".into(),
        ))
    }
}

fn warm_start(stats: &SufficientStats, cap: f64) -> Result<[f64; 5]> {
    let bound = 0.95 * cap;
    let mut r = ComplexSample::new(0.0, 0.0);
    let mut a = stats.alpha_given_rho(r);
    for _ in 0..100 {
        let (cross, lagged) = stats.lagged_residual_moments(a);
        let mut r_next = if lagged > 0.0 { cross / lagged } else { r };
        if r_next.norm() > bound {
            r_next *= bound / r_next.norm();
        }
        let a_next = stats.alpha_given_rho(r_next);
        let change = (r_next - r).norm() + (a_next - a).norm();
        r = r_next;
        a = a_next;
        if change < 1e-12 {
            break;
        }
    }
    if !(a.re.is_finite() && a.im.is_finite() && r.re.is_finite() && r.im.is_finite()) {
        return Err(Error::Estimation("warm start diverged".into()));
    }
    let sigma2 = initial_sigma2(stats, a, r)?;
    Ok([a.re, a.im, r.re, r.im, sigma2])
}

// tanh(t)/t and its derivative over t, with series near zero.
fn radial_factor(t: f64) -> (f64, f64) {
    if t < 1e-4 {
        let t2 = t * t;
        (1.0 - t2 / 3.0, -2.0 / 3.0 + 8.0 * t2 / 15.0)
    } else {
        let th = t.tanh();
        let sech2 = 1.0 - th * th;
        (th / t, (t * sech2 - th) / (t * t * t))
    }
}

fn from_unconstrained(phi: &Vector5<f64>, cap: f64) -> [f64; 5] {
    let q = Vector2::new(phi[2], phi[3]);
    let (h, _) = radial_factor(q.norm());
    [phi[0], phi[1], cap * h * q[0], cap * h * q[1], phi[4].exp()]
}

fn to_unconstrained(theta: &[f64; 5], cap: f64) -> Vector5<f64> {
    let r = ComplexSample::new(theta[2], theta[3]);
    let rad = (r.norm() / cap).min(1.0 - 1e-12);
    let q = if rad > 0.0 {
        r * (rad.atanh() / r.norm())
    } else {
        ComplexSample::new(0.0, 0.0)
    };
    Vector5::new(theta[0], theta[1], q.re, q.im, theta[4].ln())
}

fn evaluate(stats: &SufficientStats, phi: &Vector5<f64>, cap: f64) -> Evaluation<5> {
    let theta = from_unconstrained(phi, cap);
    let (value, g) = stats.loglik_and_gradient(&theta);
    let n = stats.n as f64;
    let q = Vector2::new(phi[2], phi[3]);
    let (h, dh_over_t) = radial_factor(q.norm());
    let g_r = Vector2::new(g[2], g[3]);
    // d rho / d q = cap (h I + (h'/t) q q^T), symmetric.
    let g_q = (g_r * h + q * (dh_over_t * q.dot(&g_r))) * cap;
    let grad_phi = Vector5::new(g[0], g[1], g_q[0], g_q[1], g[4] * theta[4]);
    Evaluation {
        value: -value / n,
        gradient: -grad_phi / n,
        stationarity: g.norm() / n,
    }
}
