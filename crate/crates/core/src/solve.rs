//! Optimal regulation bids.
//!
//! The objective `T (c_b g(xr) - c_r xr)` is convex on the feasible segment
//! `[0, xr_max]`, so the smallest optimum is one of three candidates: zero,
//! the right boundary, or the leftmost stationary point. With elastic prices
//! the same structure holds for the quadratic cost
//! `T (cb0 g + cbd g^2 - ca0 xr + cad xr^2)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::DeviationDistribution;
use crate::error::{Error, Result};
use crate::feasible::{
    check_roundtrip, desired_rate, max_feasible_bid, BatterySpec, FeasibleInterval,
    RegulationContract,
};
use crate::implicit::ImplicitContext;
use crate::numeric::bisect_leftmost;

/// Relative tolerance under which a net marginal cost counts as zero.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MarketPrices {
    /// Average market price `cb` (cts/kWh) and regulation price `cr` (cts/(kW h)).
    Inelastic { cb: f64, cr: f64 },
    /// Affine prices `cb0 + cbd xb` and `ca0 - cad xr`.
    Elastic {
        cb0: f64,
        cbd: f64,
        ca0: f64,
        cad: f64,
    },
}

impl MarketPrices {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarketPrices::Inelastic { cb, cr } => {
                if !(cb > 0.0) {
                    return Err(Error::domain("cb", cb, "must be positive"));
                }
                if !(cr > 0.0) {
                    return Err(Error::domain("cr", cr, "must be positive"));
                }
            }
            MarketPrices::Elastic { cb0, cbd, ca0, cad } => {
                if !(cb0 > 0.0) {
                    return Err(Error::domain("cb0", cb0, "must be positive"));
                }
                if !(ca0 > 0.0) {
                    return Err(Error::domain("ca0", ca0, "must be positive"));
                }
                if !(cbd >= 0.0) {
                    return Err(Error::domain("cbd", cbd, "must be nonnegative"));
                }
                if !(cad >= 0.0) {
                    return Err(Error::domain("cad", cad, "must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// Coefficients `(cb0, cbd, ca0, cad)`; inelastic prices have zero slopes.
    fn curve(&self) -> PriceCurve {
        match *self {
            MarketPrices::Inelastic { cb, cr } => PriceCurve {
                cb0: cb,
                cbd: 0.0,
                ca0: cr,
                cad: 0.0,
            },
            MarketPrices::Elastic { cb0, cbd, ca0, cad } => PriceCurve { cb0, cbd, ca0, cad },
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct PriceCurve {
    cb0: f64,
    cbd: f64,
    ca0: f64,
    cad: f64,
}

impl PriceCurve {
    /// Marginal price of the purchase at `g` (the factor in front of `g'`).
    fn buy_weight(&self, g: f64) -> f64 {
        self.cb0 + 2.0 * self.cbd * g
    }

    /// Marginal regulation revenue at `x`.
    fn revenue(&self, x: f64) -> f64 {
        self.ca0 - 2.0 * self.cad * x
    }

    /// Whether the one-sided marginal cost at `x` with slope `s` is nonnegative.
    fn cost_rises(&self, x: f64, g: f64, s: f64) -> bool {
        let rev = self.revenue(x);
        self.buy_weight(g) * s - rev >= -MARGINAL_TOL * rev.abs()
    }

    /// Per-hour cost; multiply by `T` for the horizon.
    fn rate(&self, x: f64, g: f64) -> f64 {
        self.cb0 * g + self.cbd * g * g - self.ca0 * x + self.cad * x * x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    Zero,
    Boundary,
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidSolution {
    /// Regulation bid (kW).
    pub xr: f64,
    /// Matched market purchase `g(xr)` (kW).
    pub xb: f64,
    /// Net cost over the horizon in cts; negative values are profits.
    pub objective: f64,
    pub candidate: Candidate,
    pub xr_max: f64,
    pub m: f64,
    pub feasible: FeasibleInterval,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Horizon cost of bidding `xr` with purchase `xb`.
pub fn objective(prices: &MarketPrices, con: &RegulationContract, xr: f64, xb: f64) -> f64 {
    con.horizon * prices.curve().rate(xr, xb)
}

fn solve_with(
    bat: &BatterySpec,
    con: &RegulationContract,
    curve: PriceCurve,
    ctx: &ImplicitContext,
) -> Result<BidSolution> {
    let feasible = max_feasible_bid(bat, con, ctx)?;
    let xr_max = feasible.upper;
    let right_at_zero = ctx.g_derivative(0.0).1;
    let g_max = ctx.g(xr_max);
    let left_at_max = if xr_max > 0.0 {
        ctx.slopes_at(g_max, xr_max).0
    } else {
        right_at_zero
    };

    let (xr, candidate) = if xr_max <= 0.0 || curve.cost_rises(0.0, ctx.g0(), right_at_zero) {
        (0.0, Candidate::Zero)
    } else if !curve.cost_rises(xr_max, g_max, left_at_max) {
        (xr_max, Candidate::Boundary)
    } else {
        let x = bisect_leftmost(0.0, xr_max, |x| {
            let g = ctx.g(x);
            curve.cost_rises(x, g, ctx.slopes_at(g, x).1)
        });
        (x, Candidate::Stationary)
    };

    let xb = ctx.g(xr);
    let obj = con.horizon * curve.rate(xr, xb);
    let (sl, sr) = ctx.g_derivative(xr);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("g_slope_right_at_zero".into(), right_at_zero);
    diagnostics.insert("g_slope_left_at_max".into(), left_at_max);
    diagnostics.insert("g_slope_left".into(), sl);
    diagnostics.insert("g_slope_right".into(), sr);
    diagnostics.insert(
        "charge_rate_residual".into(),
        ctx.expected_charge_rate(xb, xr) - ctx.ydot_star(),
    );
    diagnostics.insert(
        "marginal_ratio".into(),
        curve.revenue(xr) / curve.buy_weight(xb),
    );
    diagnostics.insert("ydot_star".into(), ctx.ydot_star());

    Ok(BidSolution {
        xr,
        xb,
        objective: obj,
        candidate,
        xr_max,
        m: ctx.m(),
        feasible,
        diagnostics,
    })
}

fn context(
    bat: &BatterySpec,
    con: &RegulationContract,
    dist: &DeviationDistribution,
) -> Result<ImplicitContext> {
    bat.validate()?;
    con.validate()?;
    check_roundtrip(bat.eff)?;
    ImplicitContext::new(bat.eff, dist.clone(), desired_rate(bat, con))
}

/// Smallest optimal bid under inelastic prices.
pub fn solve_inelastic(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    dist: &DeviationDistribution,
) -> Result<BidSolution> {
    if !matches!(prices, MarketPrices::Inelastic { .. }) {
        return Err(Error::PriceMode {
            expected: "inelastic",
        });
    }
    prices.validate()?;
    let ctx = context(bat, con, dist)?;
    solve_with(bat, con, prices.curve(), &ctx)
}

/// Smallest optimal bid under affine (elastic) prices.
pub fn solve_elastic(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    dist: &DeviationDistribution,
) -> Result<BidSolution> {
    if !matches!(prices, MarketPrices::Elastic { .. }) {
        return Err(Error::PriceMode {
            expected: "elastic",
        });
    }
    prices.validate()?;
    let ctx = context(bat, con, dist)?;
    let curve = prices.curve();
    if curve.cbd > 0.0 {
        let limit = -curve.cb0 / (2.0 * curve.cbd);
        if ctx.g0() < limit {
            return Err(Error::ConvexityViolated {
                g0: ctx.g0(),
                limit,
            });
        }
    }
    solve_with(bat, con, curve, &ctx)
}

/// Dispatches on the price mode.
pub fn solve(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    dist: &DeviationDistribution,
) -> Result<BidSolution> {
    match prices {
        MarketPrices::Inelastic { .. } => solve_inelastic(bat, con, prices, dist),
        MarketPrices::Elastic { .. } => solve_elastic(bat, con, prices, dist),
    }
}

fn require_on_target(bat: &BatterySpec) -> Result<()> {
    if (bat.soc0 - bat.soc_target).abs() > 1e-12 * bat.cap {
        return Err(Error::TargetMismatch {
            soc0: bat.soc0,
            target: bat.soc_target,
        });
    }
    Ok(())
}

fn check_slope(m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::domain("m", m, "must lie in [0, 1)"));
    }
    Ok(())
}

/// Closed-form right end of the feasible segment when `y0 = y*`.
pub fn analytic_bid(bat: &BatterySpec, con: &RegulationContract, m: f64) -> Result<f64> {
    bat.validate()?;
    con.validate()?;
    require_on_target(bat)?;
    check_slope(m)?;
    let (ep, em) = (bat.eff.eta_plus, bat.eff.eta_minus);
    Ok([
        bat.discharge_cap / (1.0 - m),
        bat.charge_cap / (1.0 + m),
        em * bat.soc0 / (con.budget * (1.0 - m)),
        (bat.cap - bat.soc0) / (ep * (con.budget + m * con.horizon)),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min))
}

/// Interior elastic optimum `(ca0 - m cb0) / (2 (cad + m^2 cbd))` for `y0 = y*`.
pub fn elastic_interior_candidate(prices: &MarketPrices, m: f64) -> Result<f64> {
    match *prices {
        MarketPrices::Elastic { cb0, cbd, ca0, cad } => {
            Ok((ca0 - m * cb0) / (2.0 * (cad + m * m * cbd)))
        }
        _ => Err(Error::PriceMode {
            expected: "elastic",
        }),
    }
}

/// Closed-form elastic optimum for `y0 = y*`.
pub fn analytic_elastic_bid(
    bat: &BatterySpec,
    con: &RegulationContract,
    prices: &MarketPrices,
    m: f64,
) -> Result<(f64, Candidate)> {
    let xr_max = analytic_bid(bat, con, m)?;
    let MarketPrices::Elastic { cb0, ca0, .. } = *prices else {
        return Err(Error::PriceMode {
            expected: "elastic",
        });
    };
    if m >= ca0 / cb0 {
        return Ok((0.0, Candidate::Zero));
    }
    let interior = elastic_interior_candidate(prices, m)?;
    if interior >= xr_max {
        Ok((xr_max, Candidate::Boundary))
    } else {
        Ok((interior, Candidate::Stationary))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    DischargePower,
    ChargePower,
    Energy,
}

/// Largest bid over initial states of charge for an energy-constrained device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyOptimum {
    /// `min` of the two power terms and the energy term (kW).
    pub xr_star: f64,
    /// The energy term alone (kW).
    pub energy_term: f64,
    /// Initial state-of-charge that balances absorbable and deliverable energy (kWh).
    pub y0_star: f64,
    /// Minimum C-rate (1/h) above which the device is energy-constrained.
    pub c_rate_min: f64,
    pub binding: BindingTerm,
    /// `xr_star` divided by `cap / (2 budget)`.
    pub normalized: f64,
}

pub fn energy_constrained_optimum(
    bat: &BatterySpec,
    con: &RegulationContract,
    m: f64,
) -> Result<EnergyOptimum> {
    bat.validate()?;
    con.validate()?;
    check_slope(m)?;
    let (t, ratio) = (con.horizon, con.activation_ratio());
    let em = bat.eff.eta_minus;
    let rho = bat.eff.roundtrip();
    let denom = ratio * (1.0 + rho - m) + rho * m;
    let energy_term = em / denom * bat.cap / t;
    let terms = [
        (bat.discharge_cap / (1.0 - m), BindingTerm::DischargePower),
        (bat.charge_cap / (1.0 + m), BindingTerm::ChargePower),
        (energy_term, BindingTerm::Energy),
    ];
    let (xr_star, binding) =
        terms
            .into_iter()
            .fold((f64::INFINITY, BindingTerm::Energy), |acc, t| {
                if t.0 < acc.0 {
                    t
                } else {
                    acc
                }
            });
    let y0_star = (1.0 - m) * bat.cap / (1.0 + rho + (rho / ratio - 1.0) * m);
    let c_rate_min = (1.0 + m) * em / denom / t;
    Ok(EnergyOptimum {
        xr_star,
        energy_term,
        y0_star,
        c_rate_min,
        binding,
        normalized: xr_star / (bat.cap / (2.0 * con.budget)),
    })
}
