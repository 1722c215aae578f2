//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use mwradar::mle::score;
use mwradar::montecarlo::{
    aggregate, partial_tally, run_sweep, sweep_csv, trial_statistics, Campaign, GridPoint,
    Scenario, SweepMode, TrialOutcome,
};
use mwradar::signal::synthesize_with_steering;
use mwradar::{
    build_steering, chi2_survival_2dof, marcum_q1, mml_estimate, sandwich, threshold_from_pfa,
    ClutterSpec, ComplexSample, Hypothesis, InnovationLaw, ParamVector, RngStream, SteeringSpec,
    TargetSpec,
};
use nalgebra::{Matrix5, Vector5};
use rand::Rng;

const KS_MAX: f64 = 0.01;
const NULL_MEAN_TOL: f64 = 0.03;
const NULL_TRIALS: u64 = 100_000;
const DESK_PFA: f64 = 1e-2;
const DESK_H0_TRIALS: u64 = 100_000;
const DESK_H1_TRIALS: u64 = 10_000;
const PFA_BAND: (f64, f64) = (0.8e-2, 1.25e-2);
const PD_TOL: f64 = 0.03;
const DELTA_REALIZATIONS: usize = 500;
const CONSISTENCY_TRIALS: u64 = 200;
const RMSE_TRIALS: u64 = 500;
const RMSE_RATIO: (f64, f64) = (1.6, 2.5);
const SE_MULTIPLE: f64 = 3.0;
const SCORE_REL_TOL: f64 = 1e-5;
const HESSIAN_DRAWS: usize = 10_000;
const INFO_RECORDS: u64 = 100;
const MARCUM_TOL: f64 = 1e-10;
const ROUND_TRIP_TOL: f64 = 1e-12;

struct Verdict {
    pass: bool,
    detail: String,
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn reference_scenario() -> Scenario {
    Scenario {
        law: InnovationLaw::complex_t(3.0, 1.0),
        delta_realizations: DELTA_REALIZATIONS,
        ..Scenario::default()
    }
}

fn values(out: Vec<TrialOutcome>) -> (Vec<f64>, usize) {
    let degenerate = out
        .iter()
        .filter(|o| **o == TrialOutcome::Degenerate)
        .count();
    let stats = out
        .into_iter()
        .filter_map(|o| match o {
            TrialOutcome::Statistic(s) => Some(s),
            TrialOutcome::Degenerate => None,
        })
        .collect();
    (stats, degenerate)
}

fn null_law_robustness() -> Verdict {
    let campaign = Campaign {
        scenario: reference_scenario(),
        m_grid: vec![50],
        rho_abs_grid: vec![0.7],
        trials_h0: NULL_TRIALS,
        trials_h1: 0,
        base_seed: 1,
        pfa_nominal: DESK_PFA,
    };
    let point = GridPoint {
        antennas: 50,
        rho_abs: 0.7,
    };
    let out =
        trial_statistics(&campaign, point, SweepMode::Pfa, 0..NULL_TRIALS, workers()).unwrap();
    let (mut stats, degenerate) = values(out);
    let m = mean(&stats);
    let v = variance(&stats);
    let ks = ks_distance(&mut stats, chi2_2dof_cdf);
    Verdict {
        pass: ks < KS_MAX && (m - 2.0).abs() <= NULL_MEAN_TOL,
        detail: format!(
            "KS {ks:.5} (< {KS_MAX}), mean {m:.4} (2 +/- {NULL_MEAN_TOL}), variance {v:.3}, degenerate {degenerate}"
        ),
    }
}

fn pfa_convergence() -> Verdict {
    let campaign = Campaign {
        scenario: reference_scenario(),
        m_grid: vec![10, 50],
        rho_abs_grid: vec![0.3, 0.7, 0.9],
        trials_h0: DESK_H0_TRIALS,
        trials_h1: 0,
        base_seed: 2,
        pfa_nominal: DESK_PFA,
    };
    let rows = run_sweep(&campaign, SweepMode::Pfa, workers()).unwrap();
    let at = |m: usize, r: f64| {
        rows.iter()
            .find(|row| row.antennas == m && row.rho_abs == r)
            .unwrap()
    };
    let anchor = at(50, 0.3).empirical;
    let mut pass = (PFA_BAND.0..=PFA_BAND.1).contains(&anchor);
    let mut detail = format!(
        "PFA(M=50, |rho|=0.3) = {anchor:.5} in [{}, {}]",
        PFA_BAND.0, PFA_BAND.1
    );
    for r in [0.3, 0.7, 0.9] {
        let small = (at(10, r).empirical - DESK_PFA).abs();
        let large = (at(50, r).empirical - DESK_PFA).abs();
        pass &= small > large;
        detail.push_str(&format!(
            "; |rho|={r}: gap M=10 {small:.5} vs M=50 {large:.5}"
        ));
    }
    pass &= rows.iter().all(|r| !r.failed);
    Verdict { pass, detail }
}

fn pd_matches_asymptote() -> Verdict {
    let campaign = Campaign {
        scenario: reference_scenario(),
        m_grid: vec![50],
        rho_abs_grid: vec![0.7],
        trials_h0: 0,
        trials_h1: DESK_H1_TRIALS,
        base_seed: 3,
        pfa_nominal: DESK_PFA,
    };
    let row = run_sweep(&campaign, SweepMode::Pd, workers())
        .unwrap()
        .remove(0);
    let delta = row.delta.unwrap();
    let gap = (row.empirical - row.theory).abs();
    Verdict {
        pass: gap < PD_TOL && !row.failed,
        detail: format!(
            "empirical PD {:.5}, Q1 reference {:.5} (delta {:.1} +/- {:.1}), gap {gap:.5} (< {PD_TOL})",
            row.empirical, row.theory, delta.delta, delta.std_error
        ),
    }
}

fn h0_estimates(m: usize, trials: u64, seed: u64) -> (Vec<ParamVector>, ParamVector) {
    let v = build_steering(&SteeringSpec::direct(m, 0.25)).unwrap();
    let clutter = ClutterSpec::from_polar(0.7, 0.23, InnovationLaw::complex_t(3.0, 1.0));
    let target = TargetSpec::new(-10.0);
    let mut truth = ParamVector::new([0.0; 5]);
    let est = (0..trials)
        .map(|k| {
            let obs = synthesize_with_steering(
                &v,
                &clutter,
                Hypothesis::H0,
                &target,
                &mut RngStream::new(seed, k),
            )
            .unwrap();
            truth = obs.truth;
            mml_estimate(&obs, None).unwrap().theta
        })
        .collect();
    (est, truth)
}

fn estimator_consistency() -> Verdict {
    let (est, truth) = h0_estimates(50, CONSISTENCY_TRIALS, 4);
    let mut pass = true;
    let mut detail = String::from("median bias / se:");
    for k in 0..5 {
        let col: Vec<f64> = est.iter().map(|t| t.0[k]).collect();
        let bias = median(&col) - truth.0[k];
        let se = median_std_error(&col);
        pass &= bias.abs() <= SE_MULTIPLE * se;
        detail.push_str(&format!(" theta{} {:+.2}", k + 1, bias / se));
    }
    let rmse = |m: usize| {
        let (est, truth) = h0_estimates(m, RMSE_TRIALS, 40 + m as u64);
        let mse = est
            .iter()
            .map(|t| (t.as_vector() - truth.as_vector()).norm_squared())
            .sum::<f64>()
            / est.len() as f64;
        mse.sqrt()
    };
    let ratio = rmse(20) / rmse(40);
    pass &= (RMSE_RATIO.0..=RMSE_RATIO.1).contains(&ratio);
    detail.push_str(&format!(
        "; RMSE ratio N=400/N=1600 {ratio:.3} in [{}, {}]",
        RMSE_RATIO.0, RMSE_RATIO.1
    ));
    Verdict { pass, detail }
}

fn derivative_suite() -> Verdict {
    let mut rng = RngStream::new(5, 0);
    let v = build_steering(&SteeringSpec::direct(6, 0.25)).unwrap();
    let clutter = ClutterSpec::from_polar(0.7, 0.23, InnovationLaw::complex_t(3.0, 1.0));
    let mut worst_rel = 0.0f64;
    for k in 0..50 {
        let theta = random_theta(&mut rng);
        let obs = synthesize_with_steering(
            &v,
            &clutter,
            Hypothesis::H1,
            &TargetSpec::new(0.0),
            &mut RngStream::new(5, k + 1),
        )
        .unwrap();
        let analytic: Vector5<f64> = score(&theta, &obs).unwrap().iter().sum();
        let fd = loglik_gradient_fd(&theta, &obs, 1e-6);
        worst_rel = worst_rel.max((analytic - fd).amax() / fd.amax().max(1.0));
    }
    let mut worst_ratio = 0.0f64;
    for _ in 0..5 {
        let theta = random_theta(&mut rng);
        let x_prev = ComplexSample::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        for n in 0..2 {
            let (avg, se, expected) =
                hessian_oracle(&theta, x_prev, &v, n, HESSIAN_DRAWS, &mut rng);
            worst_ratio = worst_ratio.max(hessian_oracle_ratio(&avg, &se, &expected));
        }
    }
    Verdict {
        pass: worst_rel < SCORE_REL_TOL && worst_ratio <= 1.0,
        detail: format!(
            "score max rel. error {worst_rel:.2e} (< {SCORE_REL_TOL:e}); Hessian worst deviation {worst_ratio:.3} of allowed 3 se"
        ),
    }
}

fn information_equality() -> Verdict {
    // N = 10^4 per record.
    let v = build_steering(&SteeringSpec::direct(100, 0.25)).unwrap();
    let clutter = ClutterSpec::from_polar(0.7, 0.23, InnovationLaw::gaussian(1.0));
    let mut sums = Vec::new();
    let mut gaps = Vec::new();
    for r in 0..INFO_RECORDS {
        let obs = synthesize_with_steering(
            &v,
            &clutter,
            Hypothesis::H1,
            &TargetSpec::new(-10.0),
            &mut RngStream::new(6, r),
        )
        .unwrap();
        let m = sandwich(&obs.truth, &obs).unwrap();
        sums.push(m.a + m.b);
        gaps.push(m.c - m.b.try_inverse().unwrap());
    }
    let standardized = |xs: &[Matrix5<f64>]| {
        let r = xs.len() as f64;
        let avg = xs.iter().sum::<Matrix5<f64>>() / r;
        let var = xs
            .iter()
            .map(|x| (x - avg).component_mul(&(x - avg)))
            .sum::<Matrix5<f64>>()
            / (r - 1.0);
        let mut worst = 0.0f64;
        for (a, s) in avg.iter().zip(var.iter()) {
            let se = (s / r).sqrt();
            if se > 0.0 {
                worst = worst.max(a.abs() / se);
            } else if a.abs() > 1e-14 {
                worst = f64::INFINITY;
            }
        }
        (avg.amax(), worst)
    };
    let (sum_max, sum_z) = standardized(&sums);
    let (gap_max, gap_z) = standardized(&gaps);
    Verdict {
        pass: sum_z <= SE_MULTIPLE && gap_z <= SE_MULTIPLE,
        detail: format!(
            "max|A+B| {sum_max:.2e} (worst {sum_z:.2} se); max|C - B^-1| {gap_max:.2e} (worst {gap_z:.2} se)"
        ),
    }
}

fn special_functions() -> Verdict {
    let grid: Vec<f64> = (0..20).map(|k| 40.0 * k as f64 / 19.0).collect();
    let mut worst = 0.0f64;
    for &a in &grid {
        for &b in &grid {
            worst = worst.max((marcum_q1(a, b).unwrap() - marcum_q1_quadrature(a, b)).abs());
        }
    }
    let mut round_trip = 0.0f64;
    for k in 1..=8 {
        let p = 10f64.powi(-k);
        round_trip =
            round_trip.max((chi2_survival_2dof(threshold_from_pfa(p).unwrap()).unwrap() - p).abs());
    }
    Verdict {
        pass: worst < MARCUM_TOL && round_trip < ROUND_TRIP_TOL,
        detail: format!(
            "Marcum vs quadrature {worst:.2e} (< {MARCUM_TOL:e}); round trip {round_trip:.2e}"
        ),
    }
}

fn determinism() -> Verdict {
    let campaign = Campaign {
        scenario: Scenario {
            delta_realizations: 50,
            ..reference_scenario()
        },
        m_grid: vec![5, 8],
        rho_abs_grid: vec![0.3, 0.9],
        trials_h0: 3_000,
        trials_h1: 1_000,
        base_seed: 8,
        pfa_nominal: DESK_PFA,
    };
    let mut pass = true;
    for mode in [SweepMode::Pfa, SweepMode::Pd] {
        let csv: Vec<String> = [1, 2, 8]
            .iter()
            .map(|&w| sweep_csv(&run_sweep(&campaign, mode, w).unwrap()))
            .collect();
        pass &= csv.iter().all(|c| c.as_bytes() == csv[0].as_bytes());
        let split = |w: usize| {
            let parts: Vec<_> = (0..w)
                .map(|k| partial_tally(&campaign, mode, k, w).unwrap())
                .collect();
            aggregate(&parts).unwrap()
        };
        let one = split(1);
        pass &= one == split(2) && one == split(8);
    }
    Verdict {
        pass,
        detail: "sweep CSVs and merged tallies identical for 1, 2 and 8 workers".into(),
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("null-law robustness", null_law_robustness),
        ("PFA convergence", pfa_convergence),
        ("PD matches asymptote", pd_matches_asymptote),
        ("estimator consistency", estimator_consistency),
        ("analytic derivatives", derivative_suite),
        ("information equality", information_equality),
        ("special functions", special_functions),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{name}]: {} ({:.1} s) {}",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
