//! Seeded Monte Carlo campaigns over antenna-count and `|rho|` grids.

use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mle::EstimatorOptions;
use crate::numerics::{derive_seed, threshold_from_pfa, ComplexSample, InnovationLaw, RngStream};
use crate::signal::{
    build_steering, synthesize_with_steering, AlphaPhase, ClutterSpec, Hypothesis, SteeringMode,
    SteeringSpec, TargetSpec, DEFAULT_BURN_IN,
};
use crate::wald::{
    asymptotic_pd, estimate_noncentrality, wald_from_estimate, NoncentralityEstimate,
};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
/// Degenerate-trial rate above which a grid point fails.
pub const MAX_DEGENERATE_RATE: f64 = 1e-3;
/// Trials per parallel work item.
const CHUNK: u64 = 256;

const PURPOSE_H0: u64 = 0;
const PURPOSE_H1: u64 = 1;
const PURPOSE_DELTA: u64 = 2;

/// Everything about a trial except the grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub steering: SteeringMode,
    /// Target spatial frequency.
    pub nu: f64,
    /// Clutter normalized Doppler, `rho = |rho| exp(j 2 pi nu_c)`.
    pub nu_c: f64,
    pub law: InnovationLaw,
    pub snr_db: f64,
    pub alpha_phase: AlphaPhase,
    /// Forces `alpha = 0` in `H1` trials.
    pub zero_target: bool,
    pub burn_in: usize,
    pub estimator: EstimatorOptions,
    /// Independent `H0` records averaged for the noncentrality estimate.
    pub delta_realizations: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            steering: SteeringMode::DirectExponential,
            nu: 0.25,
            nu_c: 0.23,
            law: InnovationLaw::complex_t(3.0, 1.0),
            snr_db: -10.0,
            alpha_phase: AlphaPhase::Random,
            zero_target: false,
            burn_in: DEFAULT_BURN_IN,
            estimator: EstimatorOptions::default(),
            delta_realizations: 500,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        SteeringSpec {
            mode: self.steering,
            antennas: 1,
            nu: self.nu,
        }
        .validate()?;
        if !self.nu_c.is_finite() {
            return Err(domain("clutter Doppler must be finite", self.nu_c));
        }
        if !self.snr_db.is_finite() {
            return Err(domain("SNR must be finite", self.snr_db));
        }
        if let AlphaPhase::Fixed(p) = self.alpha_phase {
            if !p.is_finite() {
                return Err(domain("target phase must be finite", p));
            }
        }
        let cap = self.estimator.rho_cap;
        if !(cap > 0.0 && cap < 1.0) {
            return Err(domain("rho cap must lie in (0, 1)", cap));
        }
        if !(self.estimator.gradient_tolerance.is_finite()
            && self.estimator.gradient_tolerance > 0.0)
        {
            return Err(domain(
                "gradient tolerance must be positive",
                self.estimator.gradient_tolerance,
            ));
        }
        if self.delta_realizations == 0 {
            return Err(domain("need at least one noncentrality realization", 0.0));
        }
        Ok(())
    }

    pub fn clutter(&self, rho_abs: f64) -> ClutterSpec {
        ClutterSpec {
            burn_in: self.burn_in,
            ..ClutterSpec::from_polar(rho_abs, self.nu_c, self.law)
        }
    }

    pub fn target(&self) -> TargetSpec {
        TargetSpec {
            snr_db: self.snr_db,
            phase: self.alpha_phase,
            zero_amplitude: self.zero_target,
        }
    }

    pub fn steering_spec(&self, antennas: usize) -> SteeringSpec {
        SteeringSpec {
            mode: self.steering,
            antennas,
            nu: self.nu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub scenario: Scenario,
    pub m_grid: Vec<usize>,
    pub rho_abs_grid: Vec<f64>,
    pub trials_h0: u64,
    pub trials_h1: u64,
    pub base_seed: u64,
    pub pfa_nominal: f64,
}

impl Campaign {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        threshold_from_pfa(self.pfa_nominal)?;
        for &m in &self.m_grid {
            let len = m * m;
            if len < crate::mle::MIN_ESTIMATION_LEN {
                return Err(Error::UnsupportedSize {
                    needed: crate::mle::MIN_ESTIMATION_LEN,
                    got: len,
                });
            }
        }
        for &r in &self.rho_abs_grid {
            if !(r.is_finite() && (0.0..1.0).contains(&r)) {
                return Err(domain("|rho| grid values must lie in [0, 1)", r));
            }
        }
        Ok(())
    }

    /// Grid points in row-major order (`M` outer, `|rho|` inner).
    pub fn points(&self) -> Vec<GridPoint> {
        self.m_grid
            .iter()
            .flat_map(|&antennas| {
                self.rho_abs_grid
                    .iter()
                    .map(move |&rho_abs| GridPoint { antennas, rho_abs })
            })
            .collect()
    }

    pub fn threshold(&self) -> Result<f64> {
        threshold_from_pfa(self.pfa_nominal)
    }

    /// Stable 64-bit FNV-1a digest of the serialized campaign.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("campaign serializes");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn trials(&self, mode: SweepMode) -> u64 {
        match mode {
            SweepMode::Pfa => self.trials_h0,
            SweepMode::Pd => self.trials_h1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub antennas: usize,
    pub rho_abs: f64,
}

impl GridPoint {
    /// Seed for one stream family at this point. Trial `i` then uses
    /// `RngStream::new(seed, i)`.
    fn seed(&self, base: u64, purpose: u64) -> u64 {
        derive_seed(
            base,
            &[self.antennas as u64, self.rho_abs.to_bits(), purpose],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Pfa,
    Pd,
}

impl SweepMode {
    fn hypothesis(self) -> Hypothesis {
        match self {
            SweepMode::Pfa => Hypothesis::H0,
            SweepMode::Pd => Hypothesis::H1,
        }
    }

    fn purpose(self) -> u64 {
        match self {
            SweepMode::Pfa => PURPOSE_H0,
            SweepMode::Pd => PURPOSE_H1,
        }
    }
}

/// Result of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialOutcome {
    Statistic(f64),
    /// Estimator did not converge or the sandwich was singular.
    Degenerate,
}

/// Precomputed per-point inputs shared by all trials.
struct PointContext {
    steering: Vec<ComplexSample>,
    clutter: ClutterSpec,
    target: TargetSpec,
    estimator: EstimatorOptions,
    seed: u64,
    hypothesis: Hypothesis,
}

impl PointContext {
    fn new(campaign: &Campaign, point: GridPoint, mode: SweepMode) -> Result<Self> {
        let scenario = &campaign.scenario;
        let clutter = scenario.clutter(point.rho_abs);
        clutter.validate()?;
        Ok(PointContext {
            steering: build_steering(&scenario.steering_spec(point.antennas))?,
            clutter,
            target: scenario.target(),
            estimator: scenario.estimator,
            seed: point.seed(campaign.base_seed, mode.purpose()),
            hypothesis: mode.hypothesis(),
        })
    }

    fn trial(&self, index: u64) -> Result<TrialOutcome> {
        let mut rng = RngStream::new(self.seed, index);
        let obs = synthesize_with_steering(
            &self.steering,
            &self.clutter,
            self.hypothesis,
            &self.target,
            &mut rng,
        )?;
        let detected = crate::mle::mml_estimate_with(&obs, None, &self.estimator)
            .and_then(|est| wald_from_estimate(&obs, &est, 0.0));
        match detected {
            Ok(out) => Ok(TrialOutcome::Statistic(out.statistic)),
            Err(Error::NotConverged { .. } | Error::Singular { .. } | Error::Estimation(_)) => {
                Ok(TrialOutcome::Degenerate)
            }
            Err(e) => Err(e),
        }
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Estimation(format!("cannot start worker pool: {e}")))
}

fn chunks(range: Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        out.push(start..end);
        start = end;
    }
    out
}

/// Per-trial Wald statistics at one grid point, in trial order.
pub fn trial_statistics(
    campaign: &Campaign,
    point: GridPoint,
    mode: SweepMode,
    trials: Range<u64>,
    workers: usize,
) -> Result<Vec<TrialOutcome>> {
    campaign.validate()?;
    let ctx = PointContext::new(campaign, point, mode)?;
    let pool = thread_pool(workers)?;
    let parts: Vec<Result<Vec<TrialOutcome>>> = pool.install(|| {
        chunks(trials)
            .into_par_iter()
            .map(|c| c.map(|i| ctx.trial(i)).collect())
            .collect()
    });
    let mut out = Vec::new();
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Trial counts at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointCounts {
    /// Trials attempted.
    pub trials: u64,
    /// Non-degenerate trials with `Lambda > threshold`.
    pub detections: u64,
    pub degenerate: u64,
}

impl PointCounts {
    fn add(&mut self, other: &PointCounts) {
        self.trials += other.trials;
        self.detections += other.detections;
        self.degenerate += other.degenerate;
    }

    fn record(&mut self, outcome: TrialOutcome, threshold: f64) {
        self.trials += 1;
        match outcome {
            TrialOutcome::Statistic(s) if s > threshold => self.detections += 1,
            TrialOutcome::Statistic(_) => {}
            TrialOutcome::Degenerate => self.degenerate += 1,
        }
    }

    pub fn valid(&self) -> u64 {
        self.trials - self.degenerate
    }
}

/// Counts from one worker, tagged with the campaign they belong to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub fingerprint: u64,
    pub mode: SweepMode,
    /// One entry per grid point in [`Campaign::points`] order.
    pub counts: Vec<PointCounts>,
}

/// Runs trials `i` with `i % workers == worker` at every grid point.
pub fn partial_tally(
    campaign: &Campaign,
    mode: SweepMode,
    worker: usize,
    workers: usize,
) -> Result<Tally> {
    campaign.validate()?;
    if worker >= workers.max(1) {
        return Err(domain("worker index out of range", worker as f64));
    }
    let threshold = campaign.threshold()?;
    let stride = workers.max(1) as u64;
    let mut counts = Vec::new();
    for point in campaign.points() {
        let ctx = PointContext::new(campaign, point, mode)?;
        let mut c = PointCounts::default();
        let mut i = worker as u64;
        while i < campaign.trials(mode) {
            c.record(ctx.trial(i)?, threshold);
            i += stride;
        }
        counts.push(c);
    }
    Ok(Tally {
        fingerprint: campaign.fingerprint(),
        mode,
        counts,
    })
}

/// Sums partial tallies. Fails on tallies from different campaigns or modes.
pub fn aggregate(partials: &[Tally]) -> Result<Tally> {
    let Some(first) = partials.first() else {
        return Err(domain("nothing to aggregate", 0.0));
    };
    let mut merged = Tally {
        fingerprint: first.fingerprint,
        mode: first.mode,
        counts: vec![PointCounts::default(); first.counts.len()],
    };
    for t in partials {
        if t.fingerprint != first.fingerprint || t.mode != first.mode {
            return Err(Error::CampaignMismatch {
                expected: first.fingerprint,
                found: t.fingerprint,
            });
        }
        if t.counts.len() != merged.counts.len() {
            return Err(Error::UnsupportedSize {
                needed: merged.counts.len(),
                got: t.counts.len(),
            });
        }
        for (m, c) in merged.counts.iter_mut().zip(&t.counts) {
            m.add(c);
        }
    }
    Ok(merged)
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (
        (center - half).max(0.0).min(p),
        (center + half).min(1.0).max(p),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub antennas: usize,
    pub rho_abs: f64,
    pub mode: SweepMode,
    pub nominal: f64,
    /// Empirical PFA or PD over non-degenerate trials; NaN if none.
    pub empirical: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Nominal PFA (pfa mode) or Marcum-Q PD (pd mode).
    pub theory: f64,
    pub delta: Option<NoncentralityEstimate>,
    pub degenerate_rate: f64,
    pub counts: PointCounts,
    pub low_confidence: bool,
    pub failed: bool,
    pub wall_clock_secs: f64,
}

impl SweepRow {
    pub fn warning(&self) -> String {
        let mut w = Vec::new();
        if self.low_confidence {
            w.push("low-confidence");
        }
        if self.failed {
            w.push("degenerate-rate");
        }
        w.join(";")
    }
}

fn row_from_counts(
    campaign: &Campaign,
    point: GridPoint,
    mode: SweepMode,
    counts: PointCounts,
    delta: Option<NoncentralityEstimate>,
    wall_clock_secs: f64,
) -> Result<SweepRow> {
    let valid = counts.valid();
    let empirical = if valid > 0 {
        counts.detections as f64 / valid as f64
    } else {
        f64::NAN
    };
    let (ci_lo, ci_hi) = wilson_interval(counts.detections, valid);
    let degenerate_rate = if counts.trials > 0 {
        counts.degenerate as f64 / counts.trials as f64
    } else {
        0.0
    };
    let theory = match delta {
        Some(d) => asymptotic_pd(d.delta, campaign.threshold()?)?,
        None => campaign.pfa_nominal,
    };
    Ok(SweepRow {
        antennas: point.antennas,
        rho_abs: point.rho_abs,
        mode,
        nominal: campaign.pfa_nominal,
        empirical,
        ci_lo,
        ci_hi,
        theory,
        delta,
        degenerate_rate,
        counts,
        low_confidence: mode == SweepMode::Pfa
            && (counts.trials as f64) < 100.0 / campaign.pfa_nominal,
        failed: degenerate_rate > MAX_DEGENERATE_RATE || valid == 0,
        wall_clock_secs,
    })
}

/// Noncentrality at one grid point from the `R`-record oracle.
pub fn point_noncentrality(campaign: &Campaign, point: GridPoint) -> Result<NoncentralityEstimate> {
    let scenario = &campaign.scenario;
    let steering = build_steering(&scenario.steering_spec(point.antennas))?;
    estimate_noncentrality(
        &steering,
        &scenario.clutter(point.rho_abs),
        &scenario.target(),
        scenario.delta_realizations,
        point.seed(campaign.base_seed, PURPOSE_DELTA),
    )
}

/// Runs a full sweep with `workers` threads. Output depends only on the
/// campaign, never on `workers`.
pub fn run_sweep(campaign: &Campaign, mode: SweepMode, workers: usize) -> Result<Vec<SweepRow>> {
    campaign.validate()?;
    if campaign.trials(mode) == 0 {
        return Ok(Vec::new());
    }
    let threshold = campaign.threshold()?;
    let pool = thread_pool(workers)?;
    let mut rows = Vec::new();
    for point in campaign.points() {
        let started = Instant::now();
        let ctx = PointContext::new(campaign, point, mode)?;
        let parts: Vec<Result<PointCounts>> = pool.install(|| {
            chunks(0..campaign.trials(mode))
                .into_par_iter()
                .map(|c| {
                    let mut counts = PointCounts::default();
                    for i in c {
                        counts.record(ctx.trial(i)?, threshold);
                    }
                    Ok(counts)
                })
                .collect()
        });
        let mut counts = PointCounts::default();
        for p in parts {
            counts.add(&p?);
        }
        let delta = match mode {
            SweepMode::Pfa => None,
            SweepMode::Pd => Some(point_noncentrality(campaign, point)?),
        };
        rows.push(row_from_counts(
            campaign,
            point,
            mode,
            counts,
            delta,
            started.elapsed().as_secs_f64(),
        )?);
    }
    Ok(rows)
}

/// Rows of an aggregated tally, without timing.
pub fn rows_from_tally(campaign: &Campaign, tally: &Tally) -> Result<Vec<SweepRow>> {
    if tally.fingerprint != campaign.fingerprint() {
        return Err(Error::CampaignMismatch {
            expected: campaign.fingerprint(),
            found: tally.fingerprint,
        });
    }
    if campaign.trials(tally.mode) == 0 {
        return Ok(Vec::new());
    }
    campaign
        .points()
        .into_iter()
        .zip(&tally.counts)
        .map(|(point, counts)| {
            let delta = match tally.mode {
                SweepMode::Pfa => None,
                SweepMode::Pd => Some(point_noncentrality(campaign, point)?),
            };
            row_from_counts(campaign, point, tally.mode, *counts, delta, 0.0)
        })
        .collect()
}

pub fn run_pfa_sweep(campaign: &Campaign, workers: usize) -> Result<Vec<SweepRow>> {
    run_sweep(campaign, SweepMode::Pfa, workers)
}

pub fn run_pd_sweep(campaign: &Campaign, workers: usize) -> Result<Vec<SweepRow>> {
    run_sweep(campaign, SweepMode::Pd, workers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub antennas: usize,
    pub rho_abs: f64,
    pub snr_db: f64,
    pub threshold: f64,
    pub delta: NoncentralityEstimate,
    pub theory_pd: f64,
}

/// Asymptotic references for every grid point; no detection trials.
pub fn theory_rows(campaign: &Campaign) -> Result<Vec<TheoryRow>> {
    campaign.validate()?;
    let threshold = campaign.threshold()?;
    campaign
        .points()
        .into_iter()
        .map(|point| {
            let delta = point_noncentrality(campaign, point)?;
            Ok(TheoryRow {
                antennas: point.antennas,
                rho_abs: point.rho_abs,
                snr_db: campaign.scenario.snr_db,
                threshold,
                theory_pd: asymptotic_pd(delta.delta, threshold)?,
                delta,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str =
    "M,rho_abs,nominal,empirical,ci_lo,ci_hi,theory,degenerate_rate,trials,warning";
pub const THEORY_CSV_HEADER: &str =
    "M,rho_abs,snr_db,threshold,delta,delta_se,theory_pd,realizations";

/// Sweep rows as CSV. Statistics use 17 significant digits.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.antennas,
            r.rho_abs,
            r.nominal,
            r.empirical,
            r.ci_lo,
            r.ci_hi,
            r.theory,
            r.degenerate_rate,
            r.counts.trials,
            r.warning()
        );
    }
    out
}

pub fn theory_csv(rows: &[TheoryRow]) -> String {
    let mut out = String::from(THEORY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.antennas,
            r.rho_abs,
            r.snr_db,
            r.threshold,
            r.delta.delta,
            r.delta.std_error,
            r.theory_pd,
            r.delta.realizations
        );
    }
    out
}
