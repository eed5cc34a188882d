//! Regulation economics: unit and operating profits, annualized investment
//! costs and the effective yearly profit.
//!
//! Prices are in cts/kWh and cts/(kW h); annualized costs are in currency
//! units (after the FX divisor) per kWh or kW and year.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::{BatterySpec, RegulationContract};
use crate::solve::MarketPrices;

pub const HOURS_PER_YEAR: f64 = 8760.0;
pub const CENTS_PER_UNIT: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvestmentSpec {
    /// Storage investment per kWh, in the capex currency.
    pub energy_capex: f64,
    /// Charger investment per kW, in the capex currency.
    pub power_capex: f64,
    pub energy_lifetime: f64,
    pub power_lifetime: f64,
    /// Yearly discount rate in (0, 1).
    pub discount_rate: f64,
    /// Divisor converting the capex currency into the reporting currency.
    pub fx_rate: f64,
    /// Charger C-rate (1/h) used for the power cost; defaults to the minimum
    /// C-rate of an energy-constrained device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charger_c_rate: Option<f64>,
}

impl InvestmentSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("energy_capex", self.energy_capex),
            ("power_capex", self.power_capex),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(name, v, "must be nonnegative"));
            }
        }
        let positive = [
            ("energy_lifetime", self.energy_lifetime),
            ("power_lifetime", self.power_lifetime),
            ("fx_rate", self.fx_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(name, v, "must be positive"));
            }
        }
        if !(self.discount_rate > 0.0 && self.discount_rate < 1.0) {
            return Err(Error::domain(
                "discount_rate",
                self.discount_rate,
                "must lie in (0, 1)",
            ));
        }
        if let Some(c) = self.charger_c_rate {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::domain("charger_c_rate", c, "must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Annualized cost of one unit of capital over `lifetime` years.
pub fn annuity(capex: f64, lifetime: f64, rate: f64) -> f64 {
    capex * rate / (1.0 - (1.0 + rate).powf(-lifetime))
}

/// Yearly `(energy, power)` costs per kWh and per kW in the reporting currency.
pub fn annualized_cost(inv: &InvestmentSpec) -> Result<(f64, f64)> {
    inv.validate()?;
    Ok((
        annuity(
            inv.energy_capex / inv.fx_rate,
            inv.energy_lifetime,
            inv.discount_rate,
        ),
        annuity(
            inv.power_capex / inv.fx_rate,
            inv.power_lifetime,
            inv.discount_rate,
        ),
    ))
}

fn inelastic(prices: &MarketPrices) -> Result<(f64, f64)> {
    match *prices {
        MarketPrices::Inelastic { cb, cr } => Ok((cb, cr)),
        _ => Err(Error::PriceMode {
            expected: "inelastic",
        }),
    }
}

/// Profit `cr - m cb` per unit of regulation power and hour.
pub fn unit_profit(prices: &MarketPrices, m: f64) -> Result<f64> {
    let (cb, cr) = inelastic(prices)?;
    Ok(cr - m * cb)
}

/// Energy-constrained bid per kWh of storage times the horizon: `xr_star T / cap`.
pub fn bid_hours_per_kwh(bat: &BatterySpec, con: &RegulationContract, m: f64) -> f64 {
    let rho = bat.eff.roundtrip();
    bat.eff.eta_minus / (con.activation_ratio() * (1.0 + rho - m) + rho * m)
}

/// Operating profit over one horizon per kWh of storage capacity (cts/kWh),
/// for an energy-constrained device started at its optimal state-of-charge.
pub fn operating_profit(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    m: f64,
) -> Result<f64> {
    bat.eff.validate()?;
    con.validate()?;
    Ok(unit_profit(prices, m)? * bid_hours_per_kwh(bat, con, m))
}

/// Minimum C-rate (1/h) of an energy-constrained device.
pub fn min_c_rate(bat: &BatterySpec, con: &RegulationContract, m: f64) -> f64 {
    (1.0 + m) * bid_hours_per_kwh(bat, con, m) / con.horizon
}

pub fn horizons_per_year(horizon: f64) -> f64 {
    HOURS_PER_YEAR / horizon
}

/// Breakdown of the effective yearly profit per kWh of storage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearlyProfit {
    /// Operating profit over one horizon (cts/kWh).
    pub operating_per_horizon: f64,
    /// Operating profit over a year (currency/kWh).
    pub operating_yearly: f64,
    pub energy_cost: f64,
    pub power_cost: f64,
    /// Charger size per kWh of storage charged at the power cost (1/h).
    pub c_rate: f64,
    pub effective: f64,
}

pub fn effective_yearly_profit(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    m: f64,
    inv: &InvestmentSpec,
    horizons_per_year: f64,
) -> Result<YearlyProfit> {
    if !(horizons_per_year > 0.0) {
        return Err(Error::domain(
            "horizons_per_year",
            horizons_per_year,
            "must be positive",
        ));
    }
    let (energy_annual, power_annual) = annualized_cost(inv)?;
    let per_horizon = operating_profit(bat, con, prices, m)?;
    let operating_yearly = per_horizon * horizons_per_year / CENTS_PER_UNIT;
    let c_rate = inv
        .charger_c_rate
        .unwrap_or_else(|| min_c_rate(bat, con, m));
    let power_cost = power_annual * c_rate;
    Ok(YearlyProfit {
        operating_per_horizon: per_horizon,
        operating_yearly,
        energy_cost: energy_annual,
        power_cost,
        c_rate,
        effective: operating_yearly - energy_annual - power_cost,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon_h: f64,
    pub budget_h: f64,
    #[serde(flatten)]
    pub profit: YearlyProfit,
}

/// Effective yearly profit for each horizon at the activation ratio of `con`.
pub fn horizon_sweep(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    m: f64,
    inv: &InvestmentSpec,
    horizons: &[f64],
) -> Result<Vec<HorizonRow>> {
    let ratio = con.activation_ratio();
    horizons
        .iter()
        .map(|&t| {
            let c = RegulationContract::new(t, ratio * t)?;
            Ok(HorizonRow {
                horizon_h: t,
                budget_h: c.budget,
                profit: effective_yearly_profit(bat, &c, prices, m, inv, horizons_per_year(t))?,
            })
        })
        .collect()
}
