//! Sandwich covariance, the misspecified Wald statistic and its asymptotic
//! operating characteristics.

use nalgebra::{Matrix2, Matrix5, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mle::{self, ConvergenceReport, Estimate, EstimatorOptions, ParamVector};
use crate::numerics::{marcum_q1, threshold_from_pfa, ComplexSample, RngStream};
use crate::signal::{
    synthesize_with_steering, AlphaPhase, ClutterSpec, Hypothesis, Observation, TargetSpec,
};

/// `A_N` beyond this condition number is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Plug-in estimates `A_N`, `B_N` and `C_N = A_N^-1 B_N A_N^-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichMatrices {
    pub a: Matrix5<f64>,
    pub b: Matrix5<f64>,
    pub c: Matrix5<f64>,
    pub at_theta: ParamVector,
    /// Spectral condition number of `A_N`.
    pub condition: f64,
}

impl SandwichMatrices {
    /// Assembles `C` from already averaged `A` and `B`.
    pub fn from_parts(a: Matrix5<f64>, b: Matrix5<f64>, at_theta: ParamVector) -> Result<Self> {
        let a = symmetrize(a);
        let b = symmetrize(b);
        let eig = a.symmetric_eigen().eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), l| {
            (lo.min(l.abs()), hi.max(l.abs()))
        });
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition.is_finite() && condition <= CONDITION_LIMIT) {
            return Err(Error::Singular {
                which: "A_N",
                condition,
            });
        }
        // A_N is negative definite at interior points, so -A_N takes a
        // Cholesky factor; LU covers indefinite cases.
        let c = match (-a).cholesky() {
            Some(chol) => {
                let left = chol.solve(&b);
                chol.solve(&left.transpose())
            }
            None => {
                let lu = a.lu();
                let left = lu.solve(&b).ok_or(Error::Singular {
                    which: "A_N",
                    condition,
                })?;
                lu.solve(&left.transpose()).ok_or(Error::Singular {
                    which: "A_N",
                    condition,
                })?
            }
        };
        Ok(SandwichMatrices {
            a,
            b,
            c: symmetrize(c),
            at_theta,
            condition,
        })
    }

    /// Top-left `2 x 2` block `J C J^T`.
    pub fn alpha_block(&self) -> Matrix2<f64> {
        self.c.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

fn symmetrize(m: Matrix5<f64>) -> Matrix5<f64> {
    (m + m.transpose()) * 0.5
}

/// `A_N(theta)`, `B_N(theta)` and `C_N(theta)` from the closed-form scores
/// and conditional Hessians.
pub fn sandwich(theta: &ParamVector, obs: &Observation) -> Result<SandwichMatrices> {
    if obs.len() < mle::MIN_ESTIMATION_LEN {
        return Err(Error::UnsupportedSize {
            needed: mle::MIN_ESTIMATION_LEN,
            got: obs.len(),
        });
    }
    let (a, b) = mle::average_hessian_and_outer(theta, obs)?;
    SandwichMatrices::from_parts(a, b, *theta)
}

/// Result of solving the `2 x 2` quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub value: f64,
    pub condition: f64,
    /// The block was near-singular and was inverted on its dominant eigenspace.
    pub pseudo_solve: bool,
}

/// `alpha^T M^-1 alpha` for a symmetric `2 x 2` block.
pub fn alpha_quadratic_form(block: &Matrix2<f64>, alpha: &Vector2<f64>) -> Result<QuadraticForm> {
    let block = (block + block.transpose()) * 0.5;
    let eig = block.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(Error::Singular {
            which: "J C_N J^T",
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let condition = hi / lo;
    if condition > CONDITION_LIMIT {
        let mut value = 0.0;
        for k in 0..2 {
            let l = eig.eigenvalues[k];
            if l > hi / CONDITION_LIMIT {
                let proj = eig.eigenvectors.column(k).dot(alpha);
                value += proj * proj / l;
            }
        }
        return Ok(QuadraticForm {
            value,
            condition,
            pseudo_solve: true,
        });
    }
    let chol = block.cholesky().ok_or(Error::Singular {
        which: "J C_N J^T",
        condition,
    })?;
    let value = alpha.dot(&chol.solve(alpha)).max(0.0);
    Ok(QuadraticForm {
        value,
        condition,
        pseudo_solve: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub condition_a: f64,
    pub condition_block: f64,
    pub pseudo_solve: bool,
    pub convergence: ConvergenceReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOutcome {
    /// `Lambda_MW`.
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Hypothesis,
    pub theta_hat: ParamVector,
    pub diagnostics: Diagnostics,
}

/// How the detection threshold is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `-2 ln pfa`.
    Pfa(f64),
    Explicit(f64),
}

impl Threshold {
    pub fn value(&self) -> Result<f64> {
        match *self {
            Threshold::Pfa(p) => threshold_from_pfa(p),
            Threshold::Explicit(t) if t.is_finite() && t >= 0.0 => Ok(t),
            Threshold::Explicit(t) => Err(domain("threshold must be finite and >= 0", t)),
        }
    }
}

/// `Lambda_MW = N alpha_hat^T (J C_N(theta_hat) J^T)^-1 alpha_hat` and the
/// threshold decision.
pub fn wald_statistic(obs: &Observation, threshold: Threshold) -> Result<DetectionOutcome> {
    wald_statistic_with(obs, threshold, &EstimatorOptions::default())
}

pub fn wald_statistic_with(
    obs: &Observation,
    threshold: Threshold,
    options: &EstimatorOptions,
) -> Result<DetectionOutcome> {
    let threshold = threshold.value()?;
    let estimate = mle::mml_estimate_with(obs, None, options)?;
    wald_from_estimate(obs, &estimate, threshold)
}

/// Wald statistic at a given estimate. Fails if the estimate did not converge.
pub fn wald_from_estimate(
    obs: &Observation,
    estimate: &Estimate,
    threshold: f64,
) -> Result<DetectionOutcome> {
    if !estimate.report.converged {
        return Err(Error::NotConverged {
            iterations: estimate.report.iterations,
            gradient_norm: estimate.report.gradient_norm,
        });
    }
    let theta = estimate.theta;
    let matrices = sandwich(&theta, obs)?;
    let alpha = Vector2::new(theta.alpha_re(), theta.alpha_im());
    let form = alpha_quadratic_form(&matrices.alpha_block(), &alpha)?;
    let statistic = obs.len() as f64 * form.value;
    Ok(DetectionOutcome {
        statistic,
        threshold,
        decision: if statistic > threshold {
            Hypothesis::H1
        } else {
            Hypothesis::H0
        },
        theta_hat: theta,
        diagnostics: Diagnostics {
            condition_a: matrices.condition,
            condition_block: form.condition,
            pseudo_solve: form.pseudo_solve,
            convergence: estimate.report,
        },
    })
}

/// `delta = N alpha^T M^-1 alpha` for a given `J C J^T` block.
pub fn noncentrality(alpha: ComplexSample, block: &Matrix2<f64>, n: usize) -> Result<f64> {
    let form = alpha_quadratic_form(block, &Vector2::new(alpha.re, alpha.im))?;
    Ok(n as f64 * form.value)
}

/// `delta` averaged over a uniform target phase: `N |alpha|^2 tr(M^-1) / 2`.
pub fn phase_averaged_noncentrality(alpha_abs: f64, block: &Matrix2<f64>, n: usize) -> Result<f64> {
    let along_re = alpha_quadratic_form(block, &Vector2::new(alpha_abs, 0.0))?.value;
    let along_im = alpha_quadratic_form(block, &Vector2::new(0.0, alpha_abs))?.value;
    Ok(n as f64 * 0.5 * (along_re + along_im))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncentralityEstimate {
    pub delta: f64,
    pub std_error: f64,
    pub realizations: usize,
    pub block: [[f64; 2]; 2],
}

/// Estimates `delta` with `C` evaluated at the true null point
/// `[0, 0, rho, sigma2]`.
///
/// `A` and `B` are averaged over `realizations` independent `H0` records of
/// length `steering.len()` before forming `C`. The standard error comes from
/// the spread of per-record `delta` values. With a random target phase the
/// quadratic form is averaged over the phase.
pub fn estimate_noncentrality(
    steering: &[ComplexSample],
    clutter: &ClutterSpec,
    target: &TargetSpec,
    realizations: usize,
    seed: u64,
) -> Result<NoncentralityEstimate> {
    if realizations == 0 {
        return Err(domain("need at least one realization", 0.0));
    }
    let n = steering.len();
    let amplitude = target.amplitude(clutter);
    let delta_of = |block: &Matrix2<f64>| -> Result<f64> {
        if amplitude == 0.0 {
            return Ok(0.0);
        }
        match target.phase {
            AlphaPhase::Random => phase_averaged_noncentrality(amplitude, block, n),
            AlphaPhase::Fixed(p) => {
                noncentrality(ComplexSample::from_polar(amplitude, p), block, n)
            }
        }
    };
    let null_point = ParamVector::from_parts(
        ComplexSample::new(0.0, 0.0),
        clutter.rho,
        clutter.law.sigma2(),
    );
    let mut a_sum = Matrix5::zeros();
    let mut b_sum = Matrix5::zeros();
    let mut per_record = Vec::with_capacity(realizations);
    for r in 0..realizations {
        let mut rng = RngStream::new(seed, r as u64);
        let obs = synthesize_with_steering(steering, clutter, Hypothesis::H0, target, &mut rng)?;
        let (a, b) = mle::average_hessian_and_outer(&null_point, &obs)?;
        a_sum += a;
        b_sum += b;
        let single = SandwichMatrices::from_parts(a, b, null_point)?;
        per_record.push(delta_of(&single.alpha_block())?);
    }
    let count = realizations as f64;
    let averaged = SandwichMatrices::from_parts(a_sum / count, b_sum / count, null_point)?;
    let block = averaged.alpha_block();
    let delta = delta_of(&block)?;
    let mean = per_record.iter().sum::<f64>() / count;
    let std_error = if realizations > 1 {
        let var = per_record.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    Ok(NoncentralityEstimate {
        delta,
        std_error,
        realizations,
        block: [
            [block[(0, 0)], block[(0, 1)]],
            [block[(1, 0)], block[(1, 1)]],
        ],
    })
}

/// Asymptotic detection probability `Q1(sqrt(delta), sqrt(threshold))`.
pub fn asymptotic_pd(delta: f64, threshold: f64) -> Result<f64> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(domain("noncentrality must be finite and >= 0", delta));
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(domain("threshold must be finite and >= 0", threshold));
    }
    marcum_q1(delta.sqrt(), threshold.sqrt())
}
