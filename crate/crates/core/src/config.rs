//! JSON problem configuration with units in the field names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dist::{DeviationDistribution, DistributionSpec};
use crate::econ::InvestmentSpec;
use crate::error::{Error, Result};
use crate::feasible::{check_roundtrip, BatterySpec, RegulationContract};
use crate::implicit::EfficiencyPair;
use crate::simulate::DEFAULT_STEPS_PER_DAY;
use crate::solve::MarketPrices;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub cap_kwh: f64,
    pub charge_cap_kw: f64,
    pub discharge_cap_kw: f64,
    pub soc0_kwh: f64,
    /// Defaults to `soc0_kwh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soc_target_kwh: Option<f64>,
    pub eta_plus: f64,
    pub eta_minus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractConfig {
    pub horizon_h: f64,
    pub budget_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PricesConfig {
    Inelastic {
        cb_cts_per_kwh: f64,
        cr_cts_per_kw_h: f64,
    },
    Elastic {
        cb0_cts_per_kwh: f64,
        cbd_cts_per_kwh_kw: f64,
        ca0_cts_per_kw_h: f64,
        cad_cts_per_kw_h_kw: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvestmentConfig {
    pub energy_capex_per_kwh: f64,
    pub power_capex_per_kw: f64,
    pub energy_lifetime_yr: f64,
    pub power_lifetime_yr: f64,
    pub discount_rate_per_yr: f64,
    #[serde(default = "default_fx")]
    pub fx_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charger_c_rate_per_h: Option<f64>,
}

fn default_fx() -> f64 {
    1.15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub seed: u64,
    /// Time steps per horizon for simulation.
    pub n_steps: usize,
    /// Monte-Carlo paths for the expected state-of-charge check.
    pub n_paths: usize,
    /// Random members of the uncertainty set for the robustness check.
    pub n_random: usize,
    /// Points of the grid used to cross-check optimality.
    pub grid_points: usize,
    /// Absolute tolerance on pathwise constraint violations (kW or kWh).
    pub violation_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_steps: DEFAULT_STEPS_PER_DAY,
            n_paths: 10_000,
            n_random: 1000,
            grid_points: 10_000,
            violation_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub battery: BatteryConfig,
    pub contract: ContractConfig,
    pub prices: PricesConfig,
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub investment: Option<InvestmentConfig>,
    /// Directory against which relative paths resolve; not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::ParameterDomain { value, reason, .. } => Error::Config {
            path: path.to_string(),
            message: format!("{value} {reason}"),
        },
        Error::AssumptionViolated(m) => Error::Config {
            path: path.to_string(),
            message: m,
        },
        other => other,
    }
}

fn field_path(section: &str, name: &str, table: &[(&str, &str)]) -> String {
    let leaf = table
        .iter()
        .find(|(k, _)| *k == name)
        .map(|(_, v)| *v)
        .unwrap_or(name);
    format!("{section}.{leaf}")
}

fn relabel(section: &str, table: &[(&str, &str)], e: Error) -> Error {
    match &e {
        Error::ParameterDomain { name, .. } => {
            let p = field_path(section, name, table);
            at(&p, e)
        }
        _ => e,
    }
}

const BATTERY_FIELDS: &[(&str, &str)] = &[
    ("cap", "cap_kwh"),
    ("charge_cap", "charge_cap_kw"),
    ("discharge_cap", "discharge_cap_kw"),
    ("soc0", "soc0_kwh"),
    ("soc_target", "soc_target_kwh"),
];
const CONTRACT_FIELDS: &[(&str, &str)] = &[("horizon", "horizon_h"), ("budget", "budget_h")];
const PRICE_FIELDS: &[(&str, &str)] = &[
    ("cb", "cb_cts_per_kwh"),
    ("cr", "cr_cts_per_kw_h"),
    ("cb0", "cb0_cts_per_kwh"),
    ("cbd", "cbd_cts_per_kwh_kw"),
    ("ca0", "ca0_cts_per_kw_h"),
    ("cad", "cad_cts_per_kw_h_kw"),
];
const INVESTMENT_FIELDS: &[(&str, &str)] = &[
    ("energy_capex", "energy_capex_per_kwh"),
    ("power_capex", "power_capex_per_kw"),
    ("energy_lifetime", "energy_lifetime_yr"),
    ("power_lifetime", "power_lifetime_yr"),
    ("discount_rate", "discount_rate_per_yr"),
    ("charger_c_rate", "charger_c_rate_per_h"),
];

impl ProblemConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config; relative paths inside resolve against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn battery(&self) -> BatterySpec {
        let b = &self.battery;
        BatterySpec {
            cap: b.cap_kwh,
            charge_cap: b.charge_cap_kw,
            discharge_cap: b.discharge_cap_kw,
            soc0: b.soc0_kwh,
            soc_target: b.soc_target_kwh.unwrap_or(b.soc0_kwh),
            eff: EfficiencyPair {
                eta_plus: b.eta_plus,
                eta_minus: b.eta_minus,
            },
        }
    }

    pub fn contract(&self) -> RegulationContract {
        RegulationContract {
            horizon: self.contract.horizon_h,
            budget: self.contract.budget_h,
        }
    }

    pub fn prices(&self) -> MarketPrices {
        match self.prices {
            PricesConfig::Inelastic {
                cb_cts_per_kwh,
                cr_cts_per_kw_h,
            } => MarketPrices::Inelastic {
                cb: cb_cts_per_kwh,
                cr: cr_cts_per_kw_h,
            },
            PricesConfig::Elastic {
                cb0_cts_per_kwh,
                cbd_cts_per_kwh_kw,
                ca0_cts_per_kw_h,
                cad_cts_per_kw_h_kw,
            } => MarketPrices::Elastic {
                cb0: cb0_cts_per_kwh,
                cbd: cbd_cts_per_kwh_kw,
                ca0: ca0_cts_per_kw_h,
                cad: cad_cts_per_kw_h_kw,
            },
        }
    }

    pub fn investment(&self) -> Option<InvestmentSpec> {
        self.investment.as_ref().map(|i| InvestmentSpec {
            energy_capex: i.energy_capex_per_kwh,
            power_capex: i.power_capex_per_kw,
            energy_lifetime: i.energy_lifetime_yr,
            power_lifetime: i.power_lifetime_yr,
            discount_rate: i.discount_rate_per_yr,
            fx_rate: i.fx_rate,
            charger_c_rate: i.charger_c_rate_per_h,
        })
    }

    pub fn distribution(&self) -> Result<DeviationDistribution> {
        self.distribution
            .build(self.base_dir.as_deref())
            .map_err(|e| relabel("distribution", &[], e))
    }

    /// Checks every module-level invariant and reports the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config {
                path: "schema_version".into(),
                message: format!(
                    "unsupported version {}, expected {CONFIG_SCHEMA_VERSION}",
                    self.schema_version
                ),
            });
        }
        let bat = self.battery();
        bat.validate()
            .map_err(|e| relabel("battery", BATTERY_FIELDS, e))?;
        check_roundtrip(bat.eff).map_err(|e| at("battery.eta_plus", e))?;
        self.contract()
            .validate()
            .map_err(|e| relabel("contract", CONTRACT_FIELDS, e))?;
        self.prices()
            .validate()
            .map_err(|e| relabel("prices", PRICE_FIELDS, e))?;
        if let Some(inv) = self.investment() {
            inv.validate()
                .map_err(|e| relabel("investment", INVESTMENT_FIELDS, e))?;
        }
        if let Some(mad) = self.distribution.mad {
            if !(mad > 0.0 && mad <= 1.0) {
                return Err(Error::Config {
                    path: "distribution.mad".into(),
                    message: format!("{mad} must lie in (0, 1]"),
                });
            }
        }
        let s = &self.solver;
        for (name, v) in [
            ("solver.n_steps", s.n_steps),
            ("solver.n_paths", s.n_paths),
            ("solver.grid_points", s.grid_points),
        ] {
            if v < 2 {
                return Err(Error::Config {
                    path: name.into(),
                    message: format!("{v} must be at least 2"),
                });
            }
        }
        if !(s.violation_tol >= 0.0) {
            return Err(Error::Config {
                path: "solver.violation_tol".into(),
                message: format!("{} must be nonnegative", s.violation_tol),
            });
        }
        Ok(())
    }
}
