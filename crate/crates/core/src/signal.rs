//! Steering vectors and synthetic observations `x = alpha v + c` with
//! stationary AR(1) clutter.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mle::ParamVector;
use crate::numerics::{ComplexSample, InnovationLaw, RngStream};

/// How the length-`M^2` steering vector is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SteeringMode {
    /// `[v]_n = exp(j pi (n - 1) sin(phi))` for `n = 1..M^2`.
    DirectExponential,
    /// `v = a_T(phi) (x) a_R(phi)` for transmit and receive ULAs with the
    /// given element spacings (in wavelengths). The waveform mixing matrix
    /// is the identity.
    KroneckerMimo {
        dt_over_lambda: f64,
        dr_over_lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    pub mode: SteeringMode,
    /// Antennas per array; the virtual array has `M^2` channels.
    pub antennas: usize,
    /// Normalized spatial frequency; the target angle satisfies `sin(phi) = nu / 2`.
    pub nu: f64,
}

impl SteeringSpec {
    pub fn direct(antennas: usize, nu: f64) -> Self {
        SteeringSpec {
            mode: SteeringMode::DirectExponential,
            antennas,
            nu,
        }
    }

    pub fn len(&self) -> usize {
        self.antennas * self.antennas
    }

    pub fn is_empty(&self) -> bool {
        self.antennas == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(domain("antenna count must be positive", 0.0));
        }
        if !self.nu.is_finite() || self.nu.abs() > 2.0 {
            return Err(domain("spatial frequency must satisfy |nu| <= 2", self.nu));
        }
        if let SteeringMode::KroneckerMimo {
            dt_over_lambda,
            dr_over_lambda,
        } = self.mode
        {
            for d in [dt_over_lambda, dr_over_lambda] {
                if !(d.is_finite() && d > 0.0) {
                    return Err(domain("element spacing must be positive", d));
                }
            }
        }
        Ok(())
    }
}

/// Builds the unit-modulus steering vector of length `M^2`.
pub fn build_steering(spec: &SteeringSpec) -> Result<Vec<ComplexSample>> {
    spec.validate()?;
    let sin_phi = 0.5 * spec.nu;
    let m = spec.antennas;
    let v = match spec.mode {
        SteeringMode::DirectExponential => (0..m * m)
            .map(|n| ComplexSample::from_polar(1.0, PI * n as f64 * sin_phi))
            .collect(),
        SteeringMode::KroneckerMimo {
            dt_over_lambda,
            dr_over_lambda,
        } => {
            let ramp = |d: f64| -> Vec<ComplexSample> {
                (0..m)
                    .map(|k| ComplexSample::from_polar(1.0, 2.0 * PI * d * k as f64 * sin_phi))
                    .collect()
            };
            let (tx, rx) = (ramp(dt_over_lambda), ramp(dr_over_lambda));
            tx.iter()
                .flat_map(|t| rx.iter().map(move |r| t * r))
                .collect()
        }
    };
    Ok(v)
}

/// Stationary AR(1) clutter `c_n = rho c_{n-1} + w_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterSpec {
    pub rho: ComplexSample,
    pub law: InnovationLaw,
    /// Samples discarded after a zero start.
    pub burn_in: usize,
}

pub const DEFAULT_BURN_IN: usize = 1000;

impl ClutterSpec {
    /// `rho = |rho| exp(j 2 pi nu_c)`.
    pub fn from_polar(rho_abs: f64, nu_c: f64, law: InnovationLaw) -> Self {
        ClutterSpec {
            rho: ComplexSample::from_polar(rho_abs, 2.0 * PI * nu_c),
            law,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rho.norm();
        if !(r.is_finite() && r < 1.0) {
            return Err(domain("AR(1) coefficient must satisfy |rho| < 1", r));
        }
        self.law.validate()
    }

    /// Per-sample clutter power `R[0] = sigma2 / (1 - |rho|^2)`.
    pub fn power(&self) -> f64 {
        self.law.sigma2() / (1.0 - self.rho.norm_sqr())
    }
}

/// Generates `n` clutter samples after `burn_in` warm-up steps from zero.
pub fn simulate_clutter(
    spec: &ClutterSpec,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<ComplexSample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::UnsupportedSize { needed: 1, got: 0 });
    }
    let sampler = spec.law.sampler()?;
    let mut c = ComplexSample::new(0.0, 0.0);
    for _ in 0..spec.burn_in {
        c = spec.rho * c + sampler.sample(rng);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        c = spec.rho * c + sampler.sample(rng);
        out.push(c);
    }
    Ok(out)
}

/// Autocorrelation `R[m] = sigma2 / (1 - |rho|^2) rho^|m|`, conjugated for
/// negative lags so that `R[-m] = conj(R[m])`.
pub fn acf(spec: &ClutterSpec, m: i64) -> ComplexSample {
    let lag = spec.rho.powu(m.unsigned_abs() as u32) * spec.power();
    if m < 0 {
        lag.conj()
    } else {
        lag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// Phase of the target amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaPhase {
    /// Uniform on `[0, 2 pi)`, drawn once per trial.
    Random,
    /// Fixed phase in radians.
    Fixed(f64),
}

/// Target amplitude under `H1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    /// `10 log10(|alpha|^2 / R[0])`.
    pub snr_db: f64,
    pub phase: AlphaPhase,
    /// Forces `alpha = 0` even under `H1`.
    pub zero_amplitude: bool,
}

impl TargetSpec {
    pub fn new(snr_db: f64) -> Self {
        TargetSpec {
            snr_db,
            phase: AlphaPhase::Random,
            zero_amplitude: false,
        }
    }

    /// `|alpha|` for the given clutter.
    pub fn amplitude(&self, clutter: &ClutterSpec) -> f64 {
        if self.zero_amplitude {
            0.0
        } else {
            (10f64.powf(self.snr_db / 10.0) * clutter.power()).sqrt()
        }
    }
}

/// One received snapshot with the truth that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub samples: Vec<ComplexSample>,
    pub steering: Vec<ComplexSample>,
    pub truth: ParamVector,
    pub hypothesis: Hypothesis,
}

impl Observation {
    /// Wraps externally supplied data.
    pub fn from_parts(
        samples: Vec<ComplexSample>,
        steering: Vec<ComplexSample>,
        truth: ParamVector,
        hypothesis: Hypothesis,
    ) -> Result<Self> {
        if samples.len() != steering.len() {
            return Err(Error::UnsupportedSize {
                needed: steering.len(),
                got: samples.len(),
            });
        }
        if samples
            .iter()
            .chain(&steering)
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(domain("observation contains a non-finite sample", f64::NAN));
        }
        Ok(Observation {
            samples,
            steering,
            truth,
            hypothesis,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Synthesizes one observation. The target phase is drawn first on every
/// trial (also under `H0`) so that `H0` and `H1` runs on the same stream see
/// the same clutter realization.
pub fn synthesize_observation(
    steering: &SteeringSpec,
    clutter: &ClutterSpec,
    hypothesis: Hypothesis,
    target: &TargetSpec,
    rng: &mut RngStream,
) -> Result<Observation> {
    let v = build_steering(steering)?;
    synthesize_with_steering(&v, clutter, hypothesis, target, rng)
}

/// As [`synthesize_observation`] with a precomputed steering vector.
pub fn synthesize_with_steering(
    steering: &[ComplexSample],
    clutter: &ClutterSpec,
    hypothesis: Hypothesis,
    target: &TargetSpec,
    rng: &mut RngStream,
) -> Result<Observation> {
    let drawn_phase = rng.random::<f64>() * 2.0 * PI;
    let mut samples = simulate_clutter(clutter, steering.len(), rng)?;
    let alpha = match hypothesis {
        Hypothesis::H0 => ComplexSample::new(0.0, 0.0),
        Hypothesis::H1 => {
            let phase = match target.phase {
                AlphaPhase::Random => drawn_phase,
                AlphaPhase::Fixed(p) => p,
            };
            ComplexSample::from_polar(target.amplitude(clutter), phase)
        }
    };
    if alpha != ComplexSample::new(0.0, 0.0) {
        for (x, v) in samples.iter_mut().zip(steering) {
            *x += alpha * v;
        }
    }
    let truth = ParamVector::new([
        alpha.re,
        alpha.im,
        clutter.rho.re,
        clutter.rho.im,
        clutter.law.sigma2(),
    ]);
    Ok(Observation {
        samples,
        steering: steering.to_vec(),
        truth,
        hypothesis,
    })
}
