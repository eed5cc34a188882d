//! Robust feasible set of regulation bids.
//!
//! The four robust capacity constraints reduce to `l(xr) <= g(xr) <= u(xr)`
//! with a piecewise-linear lower envelope `l` (increasing) and upper
//! envelope `u` (decreasing). Under a roundtrip efficiency above 1/3 the
//! feasible set is the segment `[0, xr_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implicit::{EfficiencyPair, ImplicitContext};
use crate::numeric::bisect;

/// Tolerance under which a constraint counts as active.
pub const ACTIVE_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    /// Storage capacity (kWh).
    pub cap: f64,
    /// Charging capacity (kW).
    pub charge_cap: f64,
    /// Discharging capacity (kW).
    pub discharge_cap: f64,
    /// Initial state-of-charge (kWh).
    pub soc0: f64,
    /// Terminal state-of-charge target (kWh).
    pub soc_target: f64,
    pub eff: EfficiencyPair,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cap > 0.0 && self.cap.is_finite()) {
            return Err(Error::domain("cap", self.cap, "must be positive"));
        }
        if !(self.charge_cap >= 0.0) {
            return Err(Error::domain(
                "charge_cap",
                self.charge_cap,
                "must be nonnegative",
            ));
        }
        if !(self.discharge_cap >= 0.0) {
            return Err(Error::domain(
                "discharge_cap",
                self.discharge_cap,
                "must be nonnegative",
            ));
        }
        if !(self.soc0 >= 0.0 && self.soc0 <= self.cap) {
            return Err(Error::domain("soc0", self.soc0, "must lie in [0, cap]"));
        }
        if !(self.soc_target >= 0.0 && self.soc_target <= self.cap) {
            return Err(Error::domain(
                "soc_target",
                self.soc_target,
                "must lie in [0, cap]",
            ));
        }
        self.eff.validate()
    }

    /// Multiplies every energy and power figure by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            cap: self.cap * k,
            charge_cap: self.charge_cap * k,
            discharge_cap: self.discharge_cap * k,
            soc0: self.soc0 * k,
            soc_target: self.soc_target * k,
            eff: self.eff,
        }
    }
}

/// Planning horizon `horizon` (h) and activation budget `budget` (h).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationContract {
    pub horizon: f64,
    pub budget: f64,
}

impl RegulationContract {
    pub fn new(horizon: f64, budget: f64) -> Result<Self> {
        let c = Self { horizon, budget };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain("horizon", self.horizon, "must be positive"));
        }
        if !(self.budget > 0.0 && self.budget <= self.horizon) {
            return Err(Error::domain(
                "budget",
                self.budget,
                "must lie in (0, horizon]",
            ));
        }
        Ok(())
    }

    /// Fraction of the horizon with guaranteed full delivery.
    pub fn activation_ratio(&self) -> f64 {
        self.budget / self.horizon
    }
}

/// Desired average charging rate `(y* - y0) / T`.
pub fn desired_rate(bat: &BatterySpec, con: &RegulationContract) -> f64 {
    (bat.soc_target - bat.soc0) / con.horizon
}

/// Lower and upper envelopes `(l(xr), u(xr))` on the purchase `xb`.
pub fn envelopes(xr: f64, bat: &BatterySpec, con: &RegulationContract) -> (f64, f64) {
    let (t, gamma) = (con.horizon, con.budget);
    let e = bat.eff;
    let room = bat.cap - bat.soc0;
    let lower = (xr - bat.discharge_cap.min(e.eta_minus * bat.soc0 / gamma))
        .max(gamma / t * xr - e.eta_minus * bat.soc0 / t);
    let upper = (bat.charge_cap.min(room / (e.eta_plus * gamma)) - xr)
        .min(room / (e.eta_plus * t) - gamma / t * xr);
    (lower, upper)
}

/// Closed-form intersection of `l` and `u`.
pub fn closed_form_crossing(bat: &BatterySpec, con: &RegulationContract) -> f64 {
    let (t, gamma) = (con.horizon, con.budget);
    let (ep, em) = (bat.eff.eta_plus, bat.eff.eta_minus);
    let (yc, yp, ym, y0) = (bat.cap, bat.charge_cap, bat.discharge_cap, bat.soc0);
    let rho = ep * em;
    let room = yc - y0;
    [
        (yp + ym) / 2.0,
        (yp + em / gamma * y0) / 2.0,
        (t * yp + em * y0) / (gamma + t),
        (ym + room / (ep * gamma)) / 2.0,
        (t * ym + room / ep) / (gamma + t),
        (yc + (rho * t / gamma - 1.0) * y0) / (ep * (gamma + t)),
        (t / gamma * yc - (t / gamma - rho) * y0) / (ep * (gamma + t)),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Which envelope stops the feasible segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// `g` meets the upper envelope (charging power or full battery).
    Upper,
    /// `g` meets the lower envelope (discharging power or empty battery).
    Lower,
    /// Both envelopes meet `g` at the right end.
    Both,
}

/// The feasible segment `[0, upper]` together with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleInterval {
    pub upper: f64,
    pub crossing: f64,
    pub x_upper_hit: Option<f64>,
    pub x_lower_hit: Option<f64>,
    pub binding: Binding,
    /// Set when the deviation MAD exceeds the activation ratio.
    pub mad_exceeds_activation: bool,
}

/// Rejects roundtrip efficiencies at or below 1/3, where the feasible set
/// may split into two segments.
pub fn check_roundtrip(eff: EfficiencyPair) -> Result<()> {
    let rho = eff.roundtrip();
    if rho <= 1.0 / 3.0 {
        return Err(Error::AssumptionViolated(format!(
            "roundtrip efficiency {rho} must exceed 1/3"
        )));
    }
    Ok(())
}

/// Right end of the feasible segment of regulation bids.
pub fn max_feasible_bid(
    bat: &BatterySpec,
    con: &RegulationContract,
    ctx: &ImplicitContext,
) -> Result<FeasibleInterval> {
    bat.validate()?;
    con.validate()?;
    check_roundtrip(bat.eff)?;
    let mad = ctx.dist().mad();
    let mad_exceeds_activation = mad > con.activation_ratio();
    if mad_exceeds_activation {
        log::warn!(
            "deviation MAD {mad} exceeds activation ratio {}; feasible set may not be convex",
            con.activation_ratio()
        );
    }

    let g0 = ctx.g0();
    let (l0, u0) = envelopes(0.0, bat, con);
    if u0 < g0 {
        return Err(Error::Infeasible(format!(
            "purchase without regulation g(0) = {g0} exceeds upper envelope u(0) = {u0}"
        )));
    }
    if g0 < l0 {
        return Err(Error::Infeasible(format!(
            "purchase without regulation g(0) = {g0} below lower envelope l(0) = {l0}"
        )));
    }

    let crossing = closed_form_crossing(bat, con).max(0.0);
    let gap_upper = |x: f64| envelopes(x, bat, con).1 - ctx.g(x);
    let gap_lower = |x: f64| ctx.g(x) - envelopes(x, bat, con).0;

    let hit = |gap: &dyn Fn(f64) -> f64| -> Option<f64> {
        if gap(0.0) <= 0.0 {
            Some(0.0)
        } else if gap(crossing) < 0.0 {
            Some(bisect(0.0, crossing, gap))
        } else {
            None
        }
    };
    let x_upper_hit = hit(&gap_upper);
    let x_lower_hit = hit(&gap_lower);

    let (upper, binding) = match (x_upper_hit, x_lower_hit) {
        (Some(a), Some(b)) if (a - b).abs() <= ACTIVE_TOL * (1.0 + a.abs()) => {
            (a.min(b), Binding::Both)
        }
        (Some(a), Some(b)) if a < b => (a, Binding::Upper),
        (Some(_), Some(b)) => (b, Binding::Lower),
        (Some(a), None) => (a, Binding::Upper),
        (None, Some(b)) => (b, Binding::Lower),
        // both gaps vanish exactly at the envelope crossing
        (None, None) => (crossing, Binding::Both),
    };

    Ok(FeasibleInterval {
        upper,
        crossing,
        x_upper_hit,
        x_lower_hit,
        binding,
        mad_exceeds_activation,
    })
}

/// True when `l(xr) <= g(xr) <= u(xr)` within `tol`.
pub fn is_feasible(
    xr: f64,
    bat: &BatterySpec,
    con: &RegulationContract,
    ctx: &ImplicitContext,
    tol: f64,
) -> bool {
    let (l, u) = envelopes(xr, bat, con);
    let g = ctx.g(xr);
    l - tol <= g && g <= u + tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DeviationDistribution;
    use approx::assert_abs_diff_eq;

    fn bat(y0: f64) -> BatterySpec {
        BatterySpec {
            cap: 100.0,
            charge_cap: 6.0,
            discharge_cap: 6.0,
            soc0: y0,
            soc_target: y0,
            eff: EfficiencyPair::new(0.92, 0.92).unwrap(),
        }
    }

    #[test]
    fn envelope_at_zero() {
        let b = bat(50.0);
        let c = RegulationContract::new(24.0, 5.0).unwrap();
        let (l, u) = envelopes(0.0, &b, &c);
        let l_hand = (-(6.0f64.min(0.92 * 50.0 / 5.0))).max(-0.92 * 50.0 / 24.0);
        let u_hand = 6.0f64.min(50.0 / (0.92 * 5.0)).min(50.0 / (0.92 * 24.0));
        assert_abs_diff_eq!(l, l_hand, epsilon = 1e-15);
        assert_abs_diff_eq!(u, u_hand, epsilon = 1e-15);
    }

    #[test]
    fn envelope_empty_battery() {
        let b = bat(0.0);
        let c = RegulationContract::new(24.0, 5.0).unwrap();
        for xr in [0.0, 1.0, 3.3] {
            assert_abs_diff_eq!(envelopes(xr, &b, &c).0, xr, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(
            envelopes(0.0, &b, &c).1,
            6.0f64.min(100.0 / (0.92 * 5.0)).min(100.0 / (0.92 * 24.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn envelope_hand_value() {
        let c = RegulationContract::new(24.0, 5.0).unwrap();
        let (l, _) = envelopes(10.0, &bat(50.0), &c);
        assert_abs_diff_eq!(l, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn crossing_power_bound() {
        let b = BatterySpec {
            cap: 1e9,
            charge_cap: 1.0,
            discharge_cap: 1.0,
            soc0: 5e8,
            soc_target: 5e8,
            eff: EfficiencyPair::new(1.0, 1.0).unwrap(),
        };
        let c = RegulationContract::new(24.0, 4.8).unwrap();
        assert_abs_diff_eq!(closed_form_crossing(&b, &c), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn contract_validation() {
        assert!(RegulationContract::new(24.0, 0.0).is_err());
        assert!(RegulationContract::new(24.0, 25.0).is_err());
        assert!(RegulationContract::new(0.0, 0.0).is_err());
        assert_abs_diff_eq!(
            RegulationContract::new(24.0, 4.8)
                .unwrap()
                .activation_ratio(),
            0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn battery_validation() {
        let mut b = bat(50.0);
        assert!(b.validate().is_ok());
        b.soc0 = 120.0;
        assert!(b.validate().is_err());
        let mut b = bat(50.0);
        b.cap = 0.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn infeasible_when_target_needs_too_much_power() {
        let mut b = bat(0.0);
        b.cap = 10.0;
        b.charge_cap = 0.1;
        b.soc_target = 10.0;
        let c = RegulationContract::new(24.0, 4.8).unwrap();
        let d = DeviationDistribution::logistic(0.0816).unwrap();
        let ctx = ImplicitContext::new(b.eff, d, desired_rate(&b, &c)).unwrap();
        let err = max_feasible_bid(&b, &c, &ctx).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn low_roundtrip_rejected() {
        let mut b = bat(50.0);
        b.eff = EfficiencyPair::new(0.5, 0.6).unwrap();
        let c = RegulationContract::new(24.0, 4.8).unwrap();
        let d = DeviationDistribution::logistic(0.0816).unwrap();
        let ctx = ImplicitContext::new(b.eff, d, 0.0).unwrap();
        assert!(matches!(
            max_feasible_bid(&b, &c, &ctx),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn empty_battery_without_target_drift_has_zero_bid() {
        let b = bat(0.0);
        let c = RegulationContract::new(24.0, 4.8).unwrap();
        let d = DeviationDistribution::logistic(0.0816).unwrap();
        let ctx = ImplicitContext::new(b.eff, d, 0.0).unwrap();
        let fi = max_feasible_bid(&b, &c, &ctx).unwrap();
        assert_eq!(fi.upper, 0.0);
    }
}
