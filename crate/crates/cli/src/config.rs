//! TOML scenario and campaign configuration.

use std::path::Path;

use mwradar::{
    AlphaPhase, Campaign, EstimatorOptions, InnovationLaw, Scenario, SteeringMode, SteeringSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub scenario: ScenarioSection,
    pub campaign: CampaignSection,
    /// Grid point used by `simulate`, `estimate` and `detect`.
    pub single: SingleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub nu: f64,
    pub nu_c: f64,
    pub snr_db: f64,
    pub innovation: InnovationLaw,
    pub steering: SteeringMode,
    /// Target phase in radians; uniform per trial when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_alpha_phase: Option<f64>,
    pub zero_target: bool,
    pub burn_in: usize,
    pub delta_realizations: usize,
    pub estimator: EstimatorSection,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = Scenario::default();
        ScenarioSection {
            nu: s.nu,
            nu_c: s.nu_c,
            snr_db: s.snr_db,
            innovation: s.law,
            steering: s.steering,
            fixed_alpha_phase: None,
            zero_target: false,
            burn_in: s.burn_in,
            delta_realizations: s.delta_realizations,
            estimator: EstimatorSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub multistart: bool,
    pub rho_cap: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let o = EstimatorOptions::default();
        EstimatorSection {
            max_iterations: o.max_iterations,
            gradient_tolerance: o.gradient_tolerance,
            multistart: o.multistart,
            rho_cap: o.rho_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub m_grid: Vec<usize>,
    pub rho_abs_grid: Vec<f64>,
    pub trials_h0: u64,
    pub trials_h1: u64,
    pub base_seed: u64,
    pub pfa_nominal: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        let p = Preset::Paper.values();
        CampaignSection {
            m_grid: vec![10, 20, 30, 40, 50],
            rho_abs_grid: vec![0.3, 0.7, 0.9],
            trials_h0: p.trials_h0,
            trials_h1: p.trials_h1,
            base_seed: 1,
            pfa_nominal: p.pfa_nominal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleSection {
    pub antennas: usize,
    pub rho_abs: f64,
}

impl Default for SingleSection {
    fn default() -> Self {
        SingleSection {
            antennas: 50,
            rho_abs: 0.7,
        }
    }
}

/// Trial-count and level presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// `pfa = 1e-4`, `10^6` trials under each hypothesis.
    Paper,
    /// `pfa = 1e-2`, `10^5` null and `10^4` target trials.
    Desk,
}

pub struct PresetValues {
    pub pfa_nominal: f64,
    pub trials_h0: u64,
    pub trials_h1: u64,
}

impl Preset {
    pub fn values(self) -> PresetValues {
        match self {
            Preset::Paper => PresetValues {
                pfa_nominal: 1e-4,
                trials_h0: 1_000_000,
                trials_h1: 1_000_000,
            },
            Preset::Desk => PresetValues {
                pfa_nominal: 1e-2,
                trials_h0: 100_000,
                trials_h1: 10_000,
            },
        }
    }
}

fn invalid(key: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Validation {
        key: key.to_string(),
        message: err.to_string(),
    }
}

impl ConfigDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let syntax = |e: toml::de::Error| CliError::Validation {
            key: "<document>".into(),
            message: e.message().to_string(),
        };
        let de = toml::Deserializer::parse(text).map_err(syntax)?;
        let doc: ConfigDocument =
            serde_path_to_error::deserialize(de).map_err(|e| CliError::Validation {
                key: e.path().to_string(),
                message: e.inner().message().to_string(),
            })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let p = preset.values();
        self.campaign.pfa_nominal = p.pfa_nominal;
        self.campaign.trials_h0 = p.trials_h0;
        self.campaign.trials_h1 = p.trials_h1;
    }

    /// Checks every physical constraint and names the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        s.innovation
            .validate()
            .map_err(|e| invalid("scenario.innovation", e))?;
        SteeringSpec {
            mode: s.steering,
            antennas: 1,
            nu: s.nu,
        }
        .validate()
        .map_err(|e| invalid("scenario.steering / scenario.nu", e))?;
        if !s.nu_c.is_finite() {
            return Err(invalid("scenario.nu_c", "must be finite"));
        }
        if !s.snr_db.is_finite() {
            return Err(invalid("scenario.snr_db", "must be finite"));
        }
        if let Some(p) = s.fixed_alpha_phase {
            if !p.is_finite() {
                return Err(invalid("scenario.fixed_alpha_phase", "must be finite"));
            }
        }
        if s.delta_realizations == 0 {
            return Err(invalid("scenario.delta_realizations", "must be at least 1"));
        }
        let e = &s.estimator;
        if !(e.rho_cap > 0.0 && e.rho_cap < 1.0) {
            return Err(invalid("scenario.estimator.rho_cap", "must lie in (0, 1)"));
        }
        if !(e.gradient_tolerance.is_finite() && e.gradient_tolerance > 0.0) {
            return Err(invalid(
                "scenario.estimator.gradient_tolerance",
                "must be positive",
            ));
        }
        let c = &self.campaign;
        mwradar::threshold_from_pfa(c.pfa_nominal)
            .map_err(|e| invalid("campaign.pfa_nominal", e))?;
        for (i, &m) in c.m_grid.iter().enumerate() {
            if m * m < mwradar::mle::MIN_ESTIMATION_LEN {
                return Err(invalid(
                    &format!("campaign.m_grid[{i}]"),
                    format!(
                        "M = {m} gives fewer than {} samples",
                        mwradar::mle::MIN_ESTIMATION_LEN
                    ),
                ));
            }
        }
        for (i, &r) in c.rho_abs_grid.iter().enumerate() {
            if !(r.is_finite() && (0.0..1.0).contains(&r)) {
                return Err(invalid(
                    &format!("campaign.rho_abs_grid[{i}]"),
                    "must lie in [0, 1)",
                ));
            }
        }
        let one = &self.single;
        // Short records can be simulated; estimation rejects them later.
        if one.antennas == 0 {
            return Err(invalid("single.antennas", "must be at least 1"));
        }
        if !(one.rho_abs.is_finite() && (0.0..1.0).contains(&one.rho_abs)) {
            return Err(invalid("single.rho_abs", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        let s = &self.scenario;
        let e = &s.estimator;
        Scenario {
            steering: s.steering,
            nu: s.nu,
            nu_c: s.nu_c,
            law: s.innovation,
            snr_db: s.snr_db,
            alpha_phase: s
                .fixed_alpha_phase
                .map_or(AlphaPhase::Random, AlphaPhase::Fixed),
            zero_target: s.zero_target,
            burn_in: s.burn_in,
            estimator: EstimatorOptions {
                max_iterations: e.max_iterations,
                gradient_tolerance: e.gradient_tolerance,
                multistart: e.multistart,
                rho_cap: e.rho_cap,
            },
            delta_realizations: s.delta_realizations,
        }
    }

    pub fn campaign(&self) -> Campaign {
        let c = &self.campaign;
        Campaign {
            scenario: self.scenario(),
            m_grid: c.m_grid.clone(),
            rho_abs_grid: c.rho_abs_grid.clone(),
            trials_h0: c.trials_h0,
            trials_h1: c.trials_h1,
            base_seed: c.base_seed,
            pfa_nominal: c.pfa_nominal,
        }
    }
}
