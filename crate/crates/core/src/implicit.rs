//! The implicit power-purchase function `g`.
//!
//! For a regulation bid `xr`, `g(xr)` is the constant market purchase `xb`
//! that keeps the expected terminal state-of-charge on target. It is the
//! unique root of `expected_charge_rate(xb, xr) = ydot_star` and grows at
//! most at the asymptotic slope `m`, which solves `m = (1 - eta+ eta-) phi(m)`.

use serde::{Deserialize, Serialize};

use crate::dist::DeviationDistribution;
use crate::error::{Error, Result};
use crate::numeric::{bisect, neg, pos};

/// Beyond this bid `g(xr)/xr` is reported as `m` directly.
pub const LARGE_BID: f64 = 1e12;

/// Charging efficiency `eta_plus` and discharging efficiency `eta_minus`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPair {
    pub eta_plus: f64,
    pub eta_minus: f64,
}

impl EfficiencyPair {
    pub fn new(eta_plus: f64, eta_minus: f64) -> Result<Self> {
        let e = Self {
            eta_plus,
            eta_minus,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_plus > 0.0 && self.eta_plus <= 1.0) {
            return Err(Error::domain(
                "eta_plus",
                self.eta_plus,
                "must lie in (0, 1]",
            ));
        }
        if !(self.eta_minus > 0.0 && self.eta_minus <= 1.0) {
            return Err(Error::domain(
                "eta_minus",
                self.eta_minus,
                "must lie in (0, 1]",
            ));
        }
        Ok(())
    }

    pub fn roundtrip(&self) -> f64 {
        self.eta_plus * self.eta_minus
    }

    /// `1/eta_minus - eta_plus`, the loss weight of absolute deviations.
    pub fn eta_d(&self) -> f64 {
        (1.0 / self.eta_minus - self.eta_plus).max(0.0)
    }
}

/// Solves `m = (1 - rho) phi(m)` on `[0, 1]` by bisection.
pub fn asymptotic_slope(eff: EfficiencyPair, dist: &DeviationDistribution) -> f64 {
    let loss = 1.0 - eff.roundtrip();
    if loss <= 0.0 {
        return 0.0;
    }
    // h(0) = -loss * phi(0) < 0 and h(1) = rho > 0
    bisect(0.0, 1.0, |m| m - loss * dist.scdf(m))
}

/// Closed-form slopes under the two-point and three-point families with the
/// given MAD, which bracket `m` for every distribution with that MAD.
pub fn slope_bounds(eff: EfficiencyPair, mad: f64) -> Result<(f64, f64)> {
    if !(mad > 0.0 && mad <= 1.0) {
        return Err(Error::domain("mad", mad, "must lie in (0, 1]"));
    }
    let rho = eff.roundtrip();
    let lower = (1.0 - rho) / (1.0 + rho) * mad;
    let upper = 1.0 - 1.0 / (1.0 + (1.0 / rho - 1.0) * 0.5 * mad);
    Ok((lower, upper))
}

/// Everything needed to evaluate `g` for one device and one target.
#[derive(Clone, Debug)]
pub struct ImplicitContext {
    eff: EfficiencyPair,
    dist: DeviationDistribution,
    ydot_star: f64,
    m: f64,
    g0: f64,
}

impl ImplicitContext {
    /// `ydot_star` is the desired average charging rate `(y* - y0) / T` in kW.
    pub fn new(eff: EfficiencyPair, dist: DeviationDistribution, ydot_star: f64) -> Result<Self> {
        eff.validate()?;
        if !ydot_star.is_finite() {
            return Err(Error::domain("ydot_star", ydot_star, "must be finite"));
        }
        let m = asymptotic_slope(eff, &dist);
        let g0 = pos(ydot_star) / eff.eta_plus - eff.eta_minus * neg(ydot_star);
        Ok(Self {
            eff,
            dist,
            ydot_star,
            m,
            g0,
        })
    }

    pub fn eff(&self) -> EfficiencyPair {
        self.eff
    }

    pub fn dist(&self) -> &DeviationDistribution {
        &self.dist
    }

    pub fn ydot_star(&self) -> f64 {
        self.ydot_star
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Purchase needed without regulation.
    pub fn g0(&self) -> f64 {
        self.g0
    }

    /// Expected average charging rate
    /// `eta+ xb - eta_d xr phi(-xb/xr)`, with the perspective limit at `xr = 0`.
    pub fn expected_charge_rate(&self, xb: f64, xr: f64) -> f64 {
        let e = self.eff;
        if xr <= 0.0 {
            return e.eta_plus * pos(xb) - neg(xb) / e.eta_minus;
        }
        e.eta_plus * xb - e.eta_d() * xr * self.dist.scdf(-xb / xr)
    }

    /// `g(xr)`: the purchase that meets the expected state-of-charge target.
    pub fn g(&self, xr: f64) -> f64 {
        if xr <= 0.0 || self.eff.eta_d() == 0.0 {
            return self.g0;
        }
        if xr > LARGE_BID {
            return self.m * xr;
        }
        let f = |xb: f64| self.expected_charge_rate(xb, xr) - self.ydot_star;
        let lo = self.g0;
        if f(lo) >= 0.0 {
            return lo;
        }
        let mut hi = self.g0 + self.m * xr;
        if f(hi) < 0.0 {
            hi += 1e-9 * (1.0 + self.g0.abs());
            let mut step = 1e-9 * (1.0 + self.g0.abs() + self.m * xr);
            while f(hi) < 0.0 {
                log::debug!("g({xr}): widening root bracket beyond g(0) + m xr");
                step *= 2.0;
                hi += step;
            }
        }
        bisect(lo, hi, f)
    }

    /// Derivative formula evaluated with a given CDF value at `z = -xb/xr`.
    fn slope_with(&self, z: f64, phi: f64, cdf: f64) -> f64 {
        let e = self.eff;
        let eta_d = e.eta_d();
        eta_d * (phi - z * cdf) / (e.eta_plus + eta_d * cdf)
    }

    /// One-sided derivatives `(g'_-(xr), g'_+(xr))`.
    ///
    /// At atoms of a discrete law, the left and right limits of `F` give the
    /// endpoints of the subdifferential. At `xr = 0` only the right slope is
    /// meaningful and both entries carry it.
    pub fn g_derivative(&self, xr: f64) -> (f64, f64) {
        if self.eff.eta_d() == 0.0 {
            return (0.0, 0.0);
        }
        if xr <= 0.0 {
            let s = if self.ydot_star != 0.0 { 0.0 } else { self.m };
            return (s, s);
        }
        if xr > LARGE_BID {
            return (self.m, self.m);
        }
        let xb = self.g(xr);
        self.slopes_at(xb, xr)
    }

    /// One-sided slopes given an already evaluated `xb = g(xr)`.
    pub(crate) fn slopes_at(&self, xb: f64, xr: f64) -> (f64, f64) {
        let z = -xb / xr;
        let phi = self.dist.scdf(z);
        let a = self.slope_with(z, phi, self.dist.cdf_left(z));
        let b = self.slope_with(z, phi, self.dist.cdf(z));
        let clamp = |s: f64| s.clamp(0.0, self.m);
        (clamp(a.min(b)), clamp(a.max(b)))
    }

    /// Piecewise-linear bounds `(g_lower, g_upper)` obtained from the
    /// two-point and three-point families with the same MAD.
    pub fn g_bounds(&self, xr: f64) -> (f64, f64) {
        let rho = self.eff.roundtrip();
        let g0 = self.g0;
        let phi0 = self.dist.scdf(0.0);
        let mad = 2.0 * phi0;
        let shrink = (1.0 - rho) / (1.0 + rho);
        let m_lo = shrink * mad;
        let m_hi = 1.0 - 1.0 / (1.0 + (1.0 / rho - 1.0) * 0.5 * mad);

        let lower = g0.max(m_lo * xr + g0 - shrink * g0.abs());
        let middle = ((1.0 - rho) * phi0 * xr - neg(g0)) / (rho + (1.0 - rho) * (1.0 - phi0));
        let tail = m_hi * xr + (rho * pos(g0) - neg(g0)) / (rho + (1.0 - rho) * phi0);
        let upper = g0.max(middle).max(tail);
        (lower, upper)
    }
}
