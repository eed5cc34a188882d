//! Monte-Carlo and worst-case oracles for the state-of-charge dynamics.
//!
//! Deviation trajectories are piecewise constant on a uniform grid, so the
//! state-of-charge is integrated exactly step by step.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::DeviationDistribution;
use crate::error::{Error, Result};
use crate::feasible::{BatterySpec, RegulationContract};
use crate::numeric::{neg, pos};

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Default grid: 10-second steps over a day.
pub const DEFAULT_STEPS_PER_DAY: usize = 8640;

/// Tolerance for grid alignment checks.
const GRID_TOL: f64 = 1e-9;

/// Relative slack for the closed-form constraint flags.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    /// Step length (h).
    pub dt: f64,
    /// Horizon (h), equal to `values.len() * dt`.
    pub horizon: f64,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("trajectory has no steps"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain("dt", dt, "must be positive"));
        }
        if let Some(&v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::domain("deviation", v, "must lie in [-1, 1]"));
        }
        let horizon = values.len() as f64 * dt;
        Ok(Self {
            values,
            dt,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total activation `sum |delta| dt` (h).
    pub fn activation(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.dt
    }

    /// Membership in the budgeted uncertainty set, up to `tol`.
    pub fn within_budget(&self, budget: f64, tol: f64) -> bool {
        self.activation() <= budget + tol
    }

    pub fn abs(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.abs()).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = format!("# dt={} T={}\n", self.dt, self.horizon);
        for v in &self.values {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (dt, horizon) = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::EmptyInput("trajectory file has no header"));
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            break parse_header(line).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected header `# dt=<hours> T=<hours>`".into(),
            })?;
        };
        let mut values = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("invalid deviation `{line}`"),
            })?;
            values.push(v);
        }
        let t = Self::new(values, dt)?;
        if (t.horizon - horizon).abs() > GRID_TOL * (1.0 + horizon) {
            return Err(Error::Misaligned(format!(
                "header horizon {horizon} h differs from {} steps of {dt} h",
                t.len()
            )));
        }
        Ok(t)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

fn parse_header(line: &str) -> Option<(f64, f64)> {
    let rest = line.strip_prefix('#')?;
    let (mut dt, mut t) = (None, None);
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("dt=") {
            dt = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("T=") {
            t = v.parse().ok();
        }
    }
    Some((dt?, t?))
}

/// Generator for path `index` of a run seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Zeroes a path once its activation reaches `budget`; the crossing step is
/// scaled so the budget binds exactly.
pub fn cap_to_budget(values: &mut [f64], dt: f64, budget: f64) -> bool {
    let mut used = 0.0;
    let mut capped = false;
    for v in values.iter_mut() {
        if capped {
            *v = 0.0;
            continue;
        }
        let step = v.abs() * dt;
        if used + step > budget {
            *v = v.signum() * pos(budget - used) / dt;
            capped = true;
        } else {
            used += step;
        }
    }
    capped
}

fn grid(con: &RegulationContract, n_steps: usize) -> Result<f64> {
    con.validate()?;
    if n_steps == 0 {
        return Err(Error::EmptyInput("n_steps must be positive"));
    }
    Ok(con.horizon / n_steps as f64)
}

fn draw_path<R: Rng>(dist: &DeviationDistribution, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| dist.draw(rng)).collect()
}

/// iid draws, capped at the activation budget.
pub fn sample_trajectory(
    dist: &DeviationDistribution,
    con: &RegulationContract,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let dt = grid(con, n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = draw_path(dist, n_steps, &mut rng);
    cap_to_budget(&mut values, dt, con.budget);
    Trajectory::new(values, dt)
}

/// iid draws without budget capping.
pub fn sample_trajectory_uncapped(
    dist: &DeviationDistribution,
    con: &RegulationContract,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let dt = grid(con, n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Trajectory::new(draw_path(dist, n_steps, &mut rng), dt)
}

/// Net charging rate of the storage at grid power `p`.
#[inline]
fn soc_rate(p: f64, eta_plus: f64, eta_minus: f64) -> f64 {
    eta_plus * pos(p) - neg(p) / eta_minus
}

/// State-of-charge at every grid point, starting with `soc0`. No clipping.
pub fn integrate_soc(xb: f64, xr: f64, traj: &Trajectory, bat: &BatterySpec) -> Vec<f64> {
    let (ep, em) = (bat.eff.eta_plus, bat.eff.eta_minus);
    let mut y = bat.soc0;
    let mut out = Vec::with_capacity(traj.len() + 1);
    out.push(y);
    for &d in &traj.values {
        y += traj.dt * soc_rate(xb + d * xr, ep, em);
        out.push(y);
    }
    out
}

fn terminal_soc(xb: f64, xr: f64, values: &[f64], dt: f64, bat: &BatterySpec) -> f64 {
    let (ep, em) = (bat.eff.eta_plus, bat.eff.eta_minus);
    bat.soc0
        + dt * values
            .iter()
            .map(|&d| soc_rate(xb + d * xr, ep, em))
            .sum::<f64>()
}

/// Full activation `(delta+, delta-)` on `[0, budget]`, zero afterwards.
pub fn worst_case_signals(
    con: &RegulationContract,
    n_steps: usize,
) -> Result<(Trajectory, Trajectory)> {
    let dt = grid(con, n_steps)?;
    let k = con.budget / dt;
    let kr = k.round();
    if (k - kr).abs() > GRID_TOL * (1.0 + k) {
        return Err(Error::Misaligned(format!(
            "budget {} h is not a multiple of the step {dt} h",
            con.budget
        )));
    }
    let k = kr as usize;
    let up: Vec<f64> = (0..n_steps)
        .map(|i| if i < k { 1.0 } else { 0.0 })
        .collect();
    let down = up.iter().map(|v| -v).collect();
    Ok((Trajectory::new(up, dt)?, Trajectory::new(down, dt)?))
}

/// Monte-Carlo estimate of the expected terminal state-of-charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// 99% normal-approximation half-width.
    pub half_width: f64,
    pub std_dev: f64,
    pub n_paths: usize,
    /// Paths whose activation budget was reached (capped sampling only).
    pub n_capped: usize,
}

impl McEstimate {
    pub fn contains(&self, v: f64) -> bool {
        (v - self.mean).abs() <= self.half_width
    }
}

/// Expected terminal state-of-charge over `n_paths` iid paths.
///
/// Path `i` uses [`path_rng`]`(seed, i)` and the sums run in path order, so
/// the estimate does not depend on the number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn mc_expected_terminal_soc(
    xb: f64,
    xr: f64,
    bat: &BatterySpec,
    con: &RegulationContract,
    dist: &DeviationDistribution,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    capped: bool,
) -> Result<McEstimate> {
    let dt = grid(con, n_steps)?;
    if n_paths < 2 {
        return Err(Error::EmptyInput("n_paths must be at least 2"));
    }
    let results: Vec<(f64, bool)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut values = draw_path(dist, n_steps, &mut rng);
            let hit = capped && cap_to_budget(&mut values, dt, con.budget);
            (terminal_soc(xb, xr, &values, dt, bat), hit)
        })
        .collect();

    // shifted sums keep a zero-variance sample exact
    let shift = results[0].0;
    let n = n_paths as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for &(v, _) in &results {
        let d = v - shift;
        s1 += d;
        s2 += d * d;
    }
    let mean_shift = s1 / n;
    let var = pos((s2 - s1 * mean_shift) / (n - 1.0));
    let std_dev = var.sqrt();
    Ok(McEstimate {
        mean: shift + mean_shift,
        half_width: Z_99 * std_dev / n.sqrt(),
        std_dev,
        n_paths,
        n_capped: results.iter().filter(|r| r.1).count(),
    })
}

/// Values sorted in nonincreasing order. Requires a nonnegative trajectory.
pub fn rearrange_nonincreasing(traj: &Trajectory) -> Result<Trajectory> {
    if let Some(&v) = traj.values.iter().find(|v| **v < 0.0) {
        return Err(Error::domain(
            "deviation",
            v,
            "rearrangement needs a nonnegative trajectory",
        ));
    }
    let mut values = traj.values.clone();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(Trajectory {
        values,
        ..traj.clone()
    })
}

/// Worst-case charging power, discharging power, and state-of-charge range
/// over the budgeted uncertainty set, in closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub charge_power: f64,
    pub discharge_power: f64,
    pub soc_max: f64,
    pub soc_min: f64,
}

pub fn closed_form_worst_case(
    xb: f64,
    xr: f64,
    bat: &BatterySpec,
    con: &RegulationContract,
) -> WorstCase {
    let (t, gamma) = (con.horizon, con.budget);
    let (ep, em) = (bat.eff.eta_plus, bat.eff.eta_minus);
    let stretch = t / gamma * xb;
    WorstCase {
        charge_power: pos(xb + xr),
        discharge_power: pos(xr - xb),
        soc_max: bat.soc0 + ep * gamma * pos(xr + stretch.max(xb)),
        soc_min: bat.soc0 - gamma / em * pos(xr - stretch.min(xb)),
    }
}

/// Extremes attained along one trajectory.
pub fn pathwise_extremes(xb: f64, xr: f64, traj: &Trajectory, bat: &BatterySpec) -> WorstCase {
    let soc = integrate_soc(xb, xr, traj, bat);
    let (mut cp, mut dp) = (0.0_f64, 0.0_f64);
    for &d in &traj.values {
        let p = xb + d * xr;
        cp = cp.max(pos(p));
        dp = dp.max(neg(p));
    }
    WorstCase {
        charge_power: cp,
        discharge_power: dp,
        soc_max: soc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        soc_min: soc.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

impl WorstCase {
    /// Largest excess over the battery limits (zero if none).
    pub fn violations(&self, bat: &BatterySpec) -> [f64; 4] {
        [
            pos(self.charge_power - bat.charge_cap),
            pos(self.discharge_power - bat.discharge_cap),
            pos(self.soc_max - bat.cap),
            pos(-self.soc_min),
        ]
    }

    fn merge(self, o: WorstCase) -> WorstCase {
        WorstCase {
            charge_power: self.charge_power.max(o.charge_power),
            discharge_power: self.discharge_power.max(o.discharge_power),
            soc_max: self.soc_max.max(o.soc_max),
            soc_min: self.soc_min.min(o.soc_min),
        }
    }
}

/// Random member of the uncertainty set. Families alternate by index:
/// scaled uniform magnitudes with random signs, budget-exact blocks of full
/// activation at random steps, and uniform magnitudes scaled onto the budget.
pub fn random_member<R: Rng>(
    rng: &mut R,
    con: &RegulationContract,
    n_steps: usize,
    index: usize,
) -> Vec<f64> {
    let dt = con.horizon / n_steps as f64;
    match index % 3 {
        0 | 2 => {
            let mut v: Vec<f64> = (0..n_steps)
                .map(|_| {
                    let mag: f64 = rng.random();
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let act: f64 = v.iter().map(|x| x.abs()).sum::<f64>() * dt;
            let scale = if index.is_multiple_of(3) {
                (con.budget / act).min(1.0)
            } else {
                // stretch onto the budget where the unit bound allows
                let peak = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                (con.budget / act).min(1.0 / peak)
            };
            if act > 0.0 {
                v.iter_mut().for_each(|x| *x *= scale);
            }
            v
        }
        _ => {
            let k = ((con.budget / dt).floor() as usize).min(n_steps);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut v = vec![0.0; n_steps];
            let mut idx: Vec<usize> = (0..n_steps).collect();
            for j in 0..k {
                let r = rng.random_range(j..n_steps);
                idx.swap(j, r);
                v[idx[j]] = sign;
            }
            v
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    /// Worst-case value over the uncertainty set.
    pub worst: f64,
    pub limit: f64,
    pub satisfied: bool,
    /// Largest sampled excess over the limit.
    pub sampled_violation: f64,
    /// Gap between the closed-form worst case and the one attained by the
    /// full-activation signals.
    pub tightness_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub xb: f64,
    pub xr: f64,
    pub closed_form_feasible: bool,
    pub constraints: Vec<ConstraintCheck>,
    pub n_sampled: usize,
    pub max_sampled_violation: f64,
    pub max_tightness_gap: f64,
}

/// Compares the closed-form robust constraints with pathwise evaluation on
/// `n_random` random members of the uncertainty set plus the two
/// full-activation signals.
pub fn check_robust_feasibility(
    xb: f64,
    xr: f64,
    bat: &BatterySpec,
    con: &RegulationContract,
    n_steps: usize,
    n_random: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    bat.validate()?;
    let dt = grid(con, n_steps)?;
    let closed = closed_form_worst_case(xb, xr, bat, con);
    let (up, down) = worst_case_signals(con, n_steps)?;
    let e_up = pathwise_extremes(xb, xr, &up, bat);
    let e_down = pathwise_extremes(xb, xr, &down, bat);

    let sampled = (0..n_random)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let v = random_member(&mut rng, con, n_steps, i);
            let t = Trajectory {
                values: v,
                dt,
                horizon: con.horizon,
            };
            pathwise_extremes(xb, xr, &t, bat)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(e_up.merge(e_down), WorstCase::merge);

    let sv = sampled.violations(bat);
    let limits = [bat.charge_cap, bat.discharge_cap, bat.cap, 0.0];
    let worst = [
        closed.charge_power,
        closed.discharge_power,
        closed.soc_max,
        closed.soc_min,
    ];
    let attained = [
        e_up.charge_power,
        e_down.discharge_power,
        e_up.soc_max,
        e_down.soc_min,
    ];
    let names = ["charge_power", "discharge_power", "soc_max", "soc_min"];
    let tol = FEASIBILITY_TOL * (1.0 + bat.cap.max(bat.charge_cap).max(bat.discharge_cap));
    let constraints: Vec<ConstraintCheck> = (0..4)
        .map(|k| ConstraintCheck {
            name: names[k].to_string(),
            worst: worst[k],
            limit: limits[k],
            satisfied: if k == 3 {
                worst[k] >= limits[k] - tol
            } else {
                worst[k] <= limits[k] + tol
            },
            sampled_violation: sv[k],
            tightness_gap: (worst[k] - attained[k]).abs(),
        })
        .collect();
    Ok(RobustnessReport {
        xb,
        xr,
        closed_form_feasible: constraints.iter().all(|c| c.satisfied),
        max_sampled_violation: sv.iter().copied().fold(0.0, f64::max),
        max_tightness_gap: constraints
            .iter()
            .map(|c| c.tightness_gap)
            .fold(0.0, f64::max),
        constraints,
        n_sampled: n_random + 2,
    })
}
