use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mwradar::montecarlo::{
    partial_tally, rows_from_tally, run_sweep, sweep_csv, theory_csv, theory_rows,
};
use mwradar::{
    aggregate, build_steering, mml_estimate_with, synthesize_observation, DetectionOutcome,
    Estimate, Hypothesis, Observation, RngStream, SweepMode, Tally,
};

use crate::config::ConfigDocument;
use crate::error::CliError;
use crate::samples;
use crate::{Cli, Command, ConfigArgs, RecordArgs, SimulateArgs};

pub const THREADS_ENV: &str = "MWRADAR_THREADS";

/// Available parallelism, capped by `MWRADAR_THREADS` when set.
pub fn worker_count() -> Result<usize, CliError> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(available),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(cap) if cap >= 1 => Ok(available.min(cap)),
            _ => Err(CliError::Validation {
                key: THREADS_ENV.into(),
                message: format!("expected a positive integer, got `{v}`"),
            }),
        },
    }
}

/// Loads the configuration, then applies the preset and explicit flags in
/// that order, then revalidates.
pub fn load_config(args: &ConfigArgs) -> Result<ConfigDocument, CliError> {
    let mut doc = match args.config_file.as_ref().or(args.config.as_ref()) {
        Some(path) => ConfigDocument::load(path)?,
        None => ConfigDocument::default(),
    };
    if let Some(p) = args.preset {
        doc.apply_preset(p);
    }
    if let Some(pfa) = args.pfa {
        doc.campaign.pfa_nominal = pfa;
    }
    if let Some(s) = args.seed {
        doc.campaign.base_seed = s;
    }
    if let Some(n) = args.trials_h0 {
        doc.campaign.trials_h0 = n;
    }
    if let Some(n) = args.trials_h1 {
        doc.campaign.trials_h1 = n;
    }
    doc.validate()?;
    Ok(doc)
}

fn load_single(args: &SimulateArgs) -> Result<ConfigDocument, CliError> {
    let mut doc = load_config(&args.common)?;
    if let Some(m) = args.antennas {
        doc.single.antennas = m;
    }
    if let Some(r) = args.rho_abs {
        doc.single.rho_abs = r;
    }
    doc.validate()?;
    Ok(doc)
}

/// The record `simulate` writes for this configuration, hypothesis and seed.
/// Stream 0 of `seed` drives it.
pub fn synthesize(
    doc: &ConfigDocument,
    hypothesis: Hypothesis,
    seed: u64,
) -> Result<Observation, CliError> {
    let scenario = doc.scenario();
    let spec = scenario.steering_spec(doc.single.antennas);
    let mut rng = RngStream::new(seed, 0);
    Ok(synthesize_observation(
        &spec,
        &scenario.clutter(doc.single.rho_abs),
        hypothesis,
        &scenario.target(),
        &mut rng,
    )?)
}

pub fn simulate_text(
    doc: &ConfigDocument,
    hypothesis: Hypothesis,
    seed: u64,
) -> Result<String, CliError> {
    let obs = synthesize(doc, hypothesis, seed)?;
    let law = serde_json::to_string(&doc.scenario.innovation).expect("law serializes");
    Ok(samples::render(
        &obs,
        &[
            ("antennas", doc.single.antennas.to_string()),
            ("rho_abs", doc.single.rho_abs.to_string()),
            ("nu", doc.scenario.nu.to_string()),
            ("nu_c", doc.scenario.nu_c.to_string()),
            ("snr_db", doc.scenario.snr_db.to_string()),
            ("innovation", law),
            ("seed", seed.to_string()),
        ],
    ))
}

fn record_for(args: &RecordArgs) -> Result<(ConfigDocument, Observation), CliError> {
    let doc = load_single(&args.simulate)?;
    let obs = match &args.input {
        Some(path) => samples::read(path)?,
        None => synthesize(
            &doc,
            args.simulate.hypothesis.into(),
            doc.campaign.base_seed,
        )?,
    };
    Ok((doc, obs))
}

fn estimate_fields(out: &mut String, est: &Estimate) {
    let t = est.theta.0;
    let r = &est.report;
    for (k, v) in [
        ("alpha_re", t[0]),
        ("alpha_im", t[1]),
        ("rho_re", t[2]),
        ("rho_im", t[3]),
        ("sigma2", t[4]),
    ] {
        let _ = writeln!(out, "{k}={v}");
    }
    let _ = writeln!(out, "loglik={}", r.loglik);
    let _ = writeln!(out, "iterations={}", r.iterations);
    let _ = writeln!(out, "gradient_norm={}", r.gradient_norm);
    let _ = writeln!(out, "converged={}", r.converged);
    let _ = writeln!(out, "rho_cap_active={}", r.rho_cap_active);
    let _ = writeln!(out, "starts={}", r.starts);
}

fn error_fields(out: &mut String, err: &CliError) {
    let _ = writeln!(out, "status=error");
    let _ = writeln!(out, "kind={}", err.kind());
    let _ = writeln!(out, "message={}", err.to_string().replace('\n', " "));
}

/// A key=value report plus the outcome it describes. The report is
/// written even when the outcome is an error.
pub struct Report<T> {
    pub text: String,
    pub outcome: Result<T, CliError>,
}

pub fn estimate_report(doc: &ConfigDocument, obs: &Observation) -> Report<Estimate> {
    let mut text = String::new();
    let opts = doc.scenario().estimator;
    let outcome = match mml_estimate_with(obs, None, &opts) {
        Ok(est) if est.report.converged => {
            let _ = writeln!(text, "status=ok\nsamples={}", obs.len());
            estimate_fields(&mut text, &est);
            Ok(est)
        }
        Ok(est) => {
            let err = CliError::Estimation(mwradar::Error::NotConverged {
                iterations: est.report.iterations,
                gradient_norm: est.report.gradient_norm,
            });
            error_fields(&mut text, &err);
            estimate_fields(&mut text, &est);
            Err(err)
        }
        Err(e) => {
            let err = CliError::from(e);
            error_fields(&mut text, &err);
            Err(err)
        }
    };
    Report { text, outcome }
}

pub fn detect_report(doc: &ConfigDocument, obs: &Observation) -> Report<DetectionOutcome> {
    let pfa = doc.campaign.pfa_nominal;
    let threshold = match mwradar::threshold_from_pfa(pfa) {
        Ok(t) => t,
        Err(e) => {
            let err = CliError::Validation {
                key: "--pfa".into(),
                message: e.to_string(),
            };
            let mut text = String::new();
            error_fields(&mut text, &err);
            return Report {
                text,
                outcome: Err(err),
            };
        }
    };
    let est = estimate_report(doc, obs);
    let estimate = match est.outcome {
        Ok(e) => e,
        Err(err) => {
            return Report {
                text: est.text,
                outcome: Err(err),
            }
        }
    };
    let mut text = String::new();
    match mwradar::wald::wald_from_estimate(obs, &estimate, threshold) {
        Ok(d) => {
            let _ = writeln!(text, "status=ok\nsamples={}", obs.len());
            let _ = writeln!(text, "statistic={}", d.statistic);
            let _ = writeln!(text, "threshold={}", d.threshold);
            let _ = writeln!(text, "pfa={pfa}");
            let _ = writeln!(text, "decision={}", samples::hypothesis_name(d.decision));
            let _ = writeln!(text, "condition_a={}", d.diagnostics.condition_a);
            let _ = writeln!(text, "condition_block={}", d.diagnostics.condition_block);
            let _ = writeln!(text, "pseudo_solve={}", d.diagnostics.pseudo_solve);
            estimate_fields(&mut text, &estimate);
            Report {
                text,
                outcome: Ok(d),
            }
        }
        Err(e) => {
            let err = CliError::from(e);
            error_fields(&mut text, &err);
            estimate_fields(&mut text, &estimate);
            Report {
                text,
                outcome: Err(err),
            }
        }
    }
}

fn parse_shard(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Validation {
        key: "--shard".into(),
        message: format!("expected k/K with 0 <= k < K, got `{s}`"),
    };
    let (k, n) = s.split_once('/').ok_or_else(bad)?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || k >= n {
        return Err(bad());
    }
    Ok((k, n))
}

pub fn sweep_text(
    doc: &ConfigDocument,
    mode: SweepMode,
    workers: usize,
) -> Result<String, CliError> {
    let rows = run_sweep(&doc.campaign(), mode, workers)?;
    for r in rows.iter().filter(|r| !r.warning().is_empty()) {
        eprintln!(
            "warning: M={} rho_abs={}: {}",
            r.antennas,
            r.rho_abs,
            r.warning()
        );
    }
    Ok(sweep_csv(&rows))
}

pub fn theory_text(doc: &ConfigDocument) -> Result<String, CliError> {
    Ok(theory_csv(&theory_rows(&doc.campaign())?))
}

pub fn merge_text(doc: &ConfigDocument, paths: &[PathBuf]) -> Result<String, CliError> {
    let mut tallies = Vec::with_capacity(paths.len());
    for p in paths {
        let text = read_file(p)?;
        let tally: Tally = serde_json::from_str(&text).map_err(|e| CliError::Validation {
            key: p.display().to_string(),
            message: format!("not a tally file: {e}"),
        })?;
        tallies.push(tally);
    }
    let merged = aggregate(&tallies)?;
    Ok(sweep_csv(&rows_from_tally(&doc.campaign(), &merged)?))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes to `out`, or standard output when `None`.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}

fn emit_report<T>(out: Option<&Path>, report: Report<T>) -> Result<(), CliError> {
    let written = emit(out, &report.text);
    report.outcome.map(|_| ())?;
    written
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(args) => {
            let doc = load_single(args)?;
            // Validates the steering geometry before anything is written.
            build_steering(&doc.scenario().steering_spec(doc.single.antennas))?;
            let text = simulate_text(&doc, args.hypothesis.into(), doc.campaign.base_seed)?;
            emit(args.common.out.as_deref(), &text)
        }
        Command::Estimate(args) => {
            let (doc, obs) = record_for(args)?;
            emit_report(
                args.simulate.common.out.as_deref(),
                estimate_report(&doc, &obs),
            )
        }
        Command::Detect(args) => {
            let (doc, obs) = record_for(args)?;
            emit_report(
                args.simulate.common.out.as_deref(),
                detect_report(&doc, &obs),
            )
        }
        Command::Sweep(args) => {
            let doc = load_config(&args.common)?;
            let mode = args.mode.into();
            let text = match &args.shard {
                Some(s) => {
                    let (k, n) = parse_shard(s)?;
                    let tally = partial_tally(&doc.campaign(), mode, k, n)?;
                    serde_json::to_string_pretty(&tally).expect("tally serializes") + "\n"
                }
                None => sweep_text(&doc, mode, worker_count()?)?,
            };
            emit(args.common.out.as_deref(), &text)
        }
        Command::Theory(args) => {
            let doc = load_config(&args.common)?;
            emit(args.common.out.as_deref(), &theory_text(&doc)?)
        }
        Command::Config(args) => {
            let doc = load_config(&args.common)?;
            emit(args.common.out.as_deref(), &doc.to_toml())
        }
        Command::Merge(args) => {
            let doc = load_config(&args.common)?;
            emit(
                args.common.out.as_deref(),
                &merge_text(&doc, &args.tallies)?,
            )
        }
    }
}
