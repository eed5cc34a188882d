//! Acceptance checks. Each test writes one `criterion N: PASS|FAIL` line to
//! stderr (bypassing output capture) and then asserts.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use regbid::dist::DeviationDistribution;
use regbid::econ::{annualized_cost, operating_profit, unit_profit, InvestmentSpec};
use regbid::feasible::{desired_rate, BatterySpec, RegulationContract};
use regbid::implicit::{asymptotic_slope, slope_bounds, EfficiencyPair, ImplicitContext};
use regbid::ingest::{
    daily_mad, fit_elasticity, fit_logistic, mad_stats, normalize, normalize_frequency,
    read_frequency_csv, read_price_csv, reduce_prices,
};
use regbid::simulate::{
    check_robust_feasibility, integrate_soc, mc_expected_terminal_soc, rearrange_nonincreasing,
    Trajectory,
};
use regbid::solve::{
    energy_constrained_optimum, objective, solve_elastic, solve_inelastic, MarketPrices,
};
use regbid::Error;

const MAD: f64 = 0.0816;

fn report(n: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2}: {status}  {detail}");
}

fn logistic() -> DeviationDistribution {
    DeviationDistribution::logistic(MAD).unwrap()
}

fn symmetric(rho: f64) -> EfficiencyPair {
    EfficiencyPair::new(rho.sqrt(), rho.sqrt()).unwrap()
}

fn energy_battery(eff: EfficiencyPair) -> BatterySpec {
    BatterySpec {
        cap: 100.0,
        charge_cap: 1e6,
        discharge_cap: 1e6,
        soc0: 50.0,
        soc_target: 50.0,
        eff,
    }
}

#[test]
fn criterion_01_asymptotic_slope() {
    let d = logistic();
    let mut ok = true;
    let mut detail = String::new();
    for (rho, want) in [(0.35, 0.0430), (0.60, 0.0209), (0.85, 0.0066)] {
        let e = symmetric(rho);
        let start = Instant::now();
        let m = asymptotic_slope(e, &d);
        let us = start.elapsed().as_secs_f64() * 1e6;
        let good = (m - want).abs() <= 0.0005 && us < 1000.0;
        ok &= good;
        detail += &format!("rho={rho}: m={m:.5} ({us:.0} us) ");
    }
    report(1, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_02_lower_bound_tightness() {
    let d = logistic();
    let mut worst = (0.0, f64::NEG_INFINITY);
    for k in 60..=100 {
        let rho = k as f64 / 100.0;
        let e = symmetric(rho);
        let m = asymptotic_slope(e, &d);
        let (lo, _) = slope_bounds(e, MAD).unwrap();
        let gap = m - lo;
        if gap > worst.1 {
            worst = (rho, gap);
        }
    }
    let ok = worst.1 < 4.59e-4;
    let detail = format!("max m - m_lo = {:.6e} at rho = {:.2}", worst.1, worst.0);
    report(2, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_03_closed_form_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err: f64 = 0.0;
    for _ in 0..100 {
        let rho = rng.random_range(0.34..1.0);
        let mad = rng.random_range(0.005..0.995);
        let e = symmetric(rho);
        let (lo, hi) = slope_bounds(e, mad).unwrap();
        let m_lo = asymptotic_slope(e, &DeviationDistribution::two_point_lower(mad).unwrap());
        let m_hi = asymptotic_slope(e, &DeviationDistribution::three_point_upper(mad).unwrap());
        max_err = max_err.max((lo - m_lo).abs()).max((hi - m_hi).abs());
    }
    let ok = max_err <= 1e-10;
    let detail = format!("max |closed form - bisection| = {max_err:.2e}");
    report(3, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_04_normalized_bid() {
    let con = RegulationContract::new(24.0, 4.8).unwrap();
    let d = logistic();
    let mut ok = true;
    let mut detail = String::new();
    for (name, ep, em, want) in [
        ("li-ion", 0.92, 0.92, 0.98),
        ("v2g", 0.88, 0.79, 0.91),
        ("h2", 0.80, 0.58, 0.77),
    ] {
        let bat = energy_battery(EfficiencyPair::new(ep, em).unwrap());
        let m = asymptotic_slope(bat.eff, &d);
        let o = energy_constrained_optimum(&bat, &con, m).unwrap();
        ok &= (o.normalized - want).abs() <= 0.01;
        detail += &format!("{name}={:.4} ", o.normalized);
    }
    report(4, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_05_optimal_initial_soc() {
    let d = logistic();
    let mut ok = true;
    let mut detail = String::new();
    for (rho, lo, hi) in [(0.92 * 0.92, 0.52, 0.53), (0.35, 0.66, 0.69)] {
        for ratio in [0.1, 0.2] {
            let con = RegulationContract::new(24.0, 24.0 * ratio).unwrap();
            let bat = energy_battery(symmetric(rho));
            let m = asymptotic_slope(bat.eff, &d);
            let y = energy_constrained_optimum(&bat, &con, m).unwrap().y0_star / bat.cap;
            ok &= y >= lo - 0.005 && y <= hi + 0.005;
            detail += &format!("rho={rho:.4},g/T={ratio}: {y:.4} ");
        }
    }
    report(5, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_06_economics() {
    let d = logistic();
    let cr = 0.9;
    let wholesale = MarketPrices::Inelastic { cb: cr / 0.251, cr };
    let retail = MarketPrices::Inelastic { cb: cr / 0.059, cr };
    let mut ok = true;
    let mut detail = String::new();

    for (p, want) in [(&wholesale, 0.73), (&retail, 0.24)] {
        let u = unit_profit(p, 0.0430).unwrap();
        ok &= (u - want).abs() <= 0.02;
        detail += &format!("unit={u:.3} ");
    }

    let c20 = RegulationContract::new(24.0, 4.8).unwrap();
    let c10 = RegulationContract::new(24.0, 2.4).unwrap();
    let cases = [
        ("lossless", 1.0, 1.0, &wholesale, 2.25),
        ("li-ion/w", 0.92, 0.92, &wholesale, 2.15),
        ("li-ion/r", 0.92, 0.92, &retail, 1.96),
        ("v2g/w", 0.88, 0.79, &wholesale, 1.92),
        ("v2g/r", 0.88, 0.79, &retail, 1.53),
        ("h2/w", 0.80, 0.58, &wholesale, 1.49),
        ("h2/r", 0.80, 0.58, &retail, 0.81),
    ];
    for (name, ep, em, p, want) in cases {
        let bat = energy_battery(EfficiencyPair::new(ep, em).unwrap());
        let m = asymptotic_slope(bat.eff, &d);
        let v20 = operating_profit(&bat, &c20, p, m).unwrap();
        let v10 = operating_profit(&bat, &c10, p, m).unwrap();
        let ratio = v10 / v20;
        ok &= (v20 - want).abs() <= 0.05 && (1.9..=2.1).contains(&ratio);
        detail += &format!("{name}={v20:.3}(x{ratio:.3}) ");
    }
    report(6, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_07_annualization() {
    let mut ok = true;
    let mut detail = String::new();
    for (capex, life, want) in [
        (85.0, 10.0, 8.2),
        (165.0, 10.0, 16.0),
        (710.0, 30.0, 27.6),
        (860.0, 30.0, 33.4),
    ] {
        let inv = InvestmentSpec {
            energy_capex: capex,
            power_capex: 0.0,
            energy_lifetime: life,
            power_lifetime: 1.0,
            discount_rate: 0.02,
            fx_rate: 1.15,
            charger_c_rate: None,
        };
        let (e, _) = annualized_cost(&inv).unwrap();
        ok &= (e - want).abs() <= 0.1;
        detail += &format!("{capex}/{life}y={e:.3} ");
    }
    report(7, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_08_expected_soc_oracle() {
    let d = logistic();
    let con = RegulationContract::new(24.0, 4.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let start = Instant::now();
    let mut failures = 0;
    for i in 0..20 {
        let eff =
            EfficiencyPair::new(rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)).unwrap();
        let bat = BatterySpec {
            cap: 1e4,
            charge_cap: 1e4,
            discharge_cap: 1e4,
            soc0: 5e3,
            soc_target: 5e3,
            eff,
        };
        let xb = rng.random_range(-2.0..2.0);
        let xr = rng.random_range(0.0..10.0);
        let ctx = ImplicitContext::new(eff, d.clone(), 0.0).unwrap();
        let analytic = bat.soc0 + con.horizon * ctx.expected_charge_rate(xb, xr);
        let est =
            mc_expected_terminal_soc(xb, xr, &bat, &con, &d, 24, 100_000, 1000 + i, false).unwrap();
        if !est.contains(analytic) {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures <= 1 && secs < 30.0;
    let detail = format!("{failures}/20 outside the 99% interval, {secs:.2} s");
    report(8, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_09_constraint_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n_steps = 240;
    let (mut unsound, mut loose, mut feasible) = (0.0_f64, 0.0_f64, 0);
    for set in 0..50u64 {
        let eff =
            EfficiencyPair::new(rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)).unwrap();
        let cap = rng.random_range(10.0..200.0);
        let soc0 = cap * rng.random_range(0.05..0.95);
        let bat = BatterySpec {
            cap,
            charge_cap: rng.random_range(1.0..50.0),
            discharge_cap: rng.random_range(1.0..50.0),
            soc0,
            soc_target: soc0,
            eff,
        };
        let ratio = [0.1, 0.2, 0.25, 0.5][set as usize % 4];
        let con = RegulationContract::new(24.0, 24.0 * ratio).unwrap();
        let mut xb = rng.random_range(-5.0..5.0);
        let mut xr = rng.random_range(0.0..30.0);
        let mut r = check_robust_feasibility(xb, xr, &bat, &con, n_steps, 1000, set).unwrap();
        if set % 2 == 0 {
            while !r.closed_form_feasible {
                xb *= 0.5;
                xr *= 0.5;
                r = check_robust_feasibility(xb, xr, &bat, &con, n_steps, 1000, set).unwrap();
            }
        }
        if r.closed_form_feasible {
            feasible += 1;
            unsound = unsound.max(r.max_sampled_violation);
        }
        loose = loose.max(r.max_tightness_gap);
    }
    let ok = unsound <= 1e-9 && loose <= 1e-9 && feasible >= 25;
    let detail = format!(
        "{feasible} feasible sets, max sampled violation {unsound:.2e}, max tightness gap {loose:.2e}"
    );
    report(9, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_10_rearrangement_dominance() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(10..200);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t = Trajectory::new(values, 24.0 / n as f64).unwrap();
        let s = rearrange_nonincreasing(&t).unwrap();
        let eff =
            EfficiencyPair::new(rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)).unwrap();
        let bat = BatterySpec {
            cap: 1e3,
            charge_cap: 1e3,
            discharge_cap: 1e3,
            soc0: 0.0,
            soc_target: 0.0,
            eff,
        };
        let xb = rng.random_range(-10.0..10.0);
        let xr = rng.random_range(0.0..10.0);
        let a = integrate_soc(xb, xr, &t, &bat);
        let b = integrate_soc(xb, xr, &s, &bat);
        for (ya, yb) in a.iter().zip(&b) {
            worst = worst.min(yb - ya);
        }
    }
    let ok = worst >= -1e-12;
    let detail = format!("min slack {worst:.2e}");
    report(10, ok, &detail);
    assert!(ok, "{detail}");
}

/// Random solvable instance: battery, contract and distribution.
fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (BatterySpec, RegulationContract, DeviationDistribution) {
    loop {
        let eff =
            EfficiencyPair::new(rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)).unwrap();
        if eff.roundtrip() <= 0.36 {
            continue;
        }
        let cap = rng.random_range(10.0..200.0);
        let soc0 = cap * rng.random_range(0.1..0.9);
        let drift = if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            rng.random_range(-0.2..0.2)
        };
        let bat = BatterySpec {
            cap,
            charge_cap: rng.random_range(1.0..50.0),
            discharge_cap: rng.random_range(1.0..50.0),
            soc0,
            soc_target: (soc0 + drift * cap).clamp(0.0, cap),
            eff,
        };
        let horizon = [4.0, 12.0, 24.0][rng.random_range(0..3)];
        let con = RegulationContract::new(horizon, horizon * rng.random_range(0.1..0.5)).unwrap();
        let mad = rng.random_range(0.02..0.3);
        let dist = match rng.random_range(0..4) {
            0 => DeviationDistribution::logistic(mad).unwrap(),
            1 => DeviationDistribution::two_point_lower(mad).unwrap(),
            2 => DeviationDistribution::three_point_upper(mad).unwrap(),
            _ => {
                let s = DeviationDistribution::logistic(mad)
                    .unwrap()
                    .sample(rng.random(), 50)
                    .unwrap();
                DeviationDistribution::empirical(&s).unwrap()
            }
        };
        let ctx = ImplicitContext::new(eff, dist.clone(), desired_rate(&bat, &con)).unwrap();
        if regbid::max_feasible_bid(&bat, &con, &ctx).is_ok() {
            return (bat, con, dist);
        }
    }
}

fn grid_minimum(
    bat: &BatterySpec,
    con: &RegulationContract,
    dist: &DeviationDistribution,
    prices: &MarketPrices,
    xr_max: f64,
) -> f64 {
    let ctx = ImplicitContext::new(bat.eff, dist.clone(), desired_rate(bat, con)).unwrap();
    let n = 10_000;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = xr_max * i as f64 / (n - 1) as f64;
            objective(prices, con, x, ctx.g(x))
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[test]
fn criterion_11_solver_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut mismatches = 0;
    for _ in 0..200 {
        let (bat, con, dist) = random_instance(&mut rng);
        let cb = rng.random_range(1.0..10.0);
        let cr = cb * rng.random_range(0.0..0.12);
        let p = MarketPrices::Inelastic { cb, cr };
        let s = solve_inelastic(&bat, &con, &p, &dist).unwrap();
        let best = grid_minimum(&bat, &con, &dist, &p, s.xr_max);
        worst_gap = worst_gap.max((s.objective - best) / (1.0 + best.abs()));

        let zero = MarketPrices::Elastic {
            cb0: cb,
            cbd: 0.0,
            ca0: cr,
            cad: 0.0,
        };
        let e = solve_elastic(&bat, &con, &zero, &dist).unwrap();
        if (e.xr, e.xb, e.objective, e.candidate) != (s.xr, s.xb, s.objective, s.candidate) {
            mismatches += 1;
        }
    }
    let mut elastic_gap = f64::NEG_INFINITY;
    let mut solved = 0;
    while solved < 200 {
        let (bat, con, dist) = random_instance(&mut rng);
        let cb0 = rng.random_range(1.0..10.0);
        let ca0 = cb0 * rng.random_range(0.0..0.12);
        let scale = bat.charge_cap.max(bat.discharge_cap);
        let p = MarketPrices::Elastic {
            cb0,
            cbd: cb0 / scale * rng.random_range(0.0..0.5),
            ca0,
            cad: ca0 / scale * rng.random_range(0.0..2.0),
        };
        let s = match solve_elastic(&bat, &con, &p, &dist) {
            Ok(s) => s,
            Err(Error::ConvexityViolated { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let best = grid_minimum(&bat, &con, &dist, &p, s.xr_max);
        elastic_gap = elastic_gap.max((s.objective - best) / (1.0 + best.abs()));
        solved += 1;
    }
    let ok = worst_gap <= 1e-7 && elastic_gap <= 1e-7 && mismatches == 0;
    let detail = format!(
        "inelastic gap {worst_gap:.2e}, elastic gap {elastic_gap:.2e}, zero-slope mismatches {mismatches}"
    );
    report(11, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_12_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut phi_slack = f64::INFINITY;
    let mut g_slack = f64::INFINITY;
    for _ in 0..20 {
        let mad = rng.random_range(0.02..0.5);
        let s = DeviationDistribution::logistic(mad)
            .unwrap()
            .sample(rng.random(), 2000)
            .unwrap();
        let d = DeviationDistribution::empirical(&s).unwrap();
        let lo = DeviationDistribution::two_point_lower(d.mad()).unwrap();
        let hi = DeviationDistribution::three_point_upper(d.mad()).unwrap();
        for i in 0..1000 {
            let z = -1.0 + 2.0 * i as f64 / 999.0;
            let p = d.scdf(z);
            phi_slack = phi_slack.min(p - lo.scdf(z)).min(hi.scdf(z) - p);
        }
        let eff =
            EfficiencyPair::new(rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)).unwrap();
        let ydot = rng.random_range(-3.0..3.0);
        let ctx = ImplicitContext::new(eff, d, ydot).unwrap();
        let x_max = rng.random_range(1.0..200.0);
        for i in 0..1000 {
            let x = x_max * i as f64 / 999.0;
            let g = ctx.g(x);
            let (gl, gu) = ctx.g_bounds(x);
            g_slack = g_slack.min(g - gl).min(gu - g);
        }
    }
    let ok = phi_slack >= -1e-10 && g_slack >= -1e-10;
    let detail = format!("min phi slack {phi_slack:.2e}, min g slack {g_slack:.2e}");
    report(12, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_13_fit_pipeline_on_synthetic_data() {
    let mut ok = true;
    let mut detail = String::new();

    // ramp inverts exactly on [-1, 1]
    let ramp_err = (0..=200)
        .map(|i| {
            let d = -1.0 + i as f64 / 100.0;
            (normalize(50.0 + d * 0.2, 50.0, 0.2) - d).abs()
        })
        .fold(0.0, f64::max);
    ok &= ramp_err < 1e-12;
    detail += &format!("ramp err {ramp_err:.1e}; ");

    // frequency file -> deviations -> logistic fit
    let truth = DeviationDistribution::logistic(MAD).unwrap();
    let n = 100_000;
    let draws = truth.sample(131, n).unwrap();
    let mut csv = String::from("timestamp,hz\n");
    for (i, d) in draws.iter().enumerate() {
        let s = 10 * i as i64;
        csv += &format!(
            "2019-01-{:02}T{:02}:{:02}:{:02}Z,{}\n",
            1 + s / 86_400,
            (s / 3600) % 24,
            (s / 60) % 60,
            s % 60,
            50.0 + d * 0.2
        );
    }
    let fs = read_frequency_csv(csv.as_bytes(), 50.0, 0.2).unwrap();
    let dev = normalize_frequency(&fs).unwrap();
    let fit = fit_logistic(&dev).unwrap();
    let mean: f64 = draws.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let var: f64 = draws.iter().map(|d| (d.abs() - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = (var / n as f64).sqrt();
    let z = (fit.mad() - MAD) / sigma;
    ok &= z.abs() <= 3.0 && (fit.mad() - MAD).abs() <= 0.002;
    detail += &format!("mad {:.5} ({z:+.2} sigma); ", fit.mad());

    // daily MAD tail matches the generating day-level law
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let days = 300;
    let steps = 8640;
    let mut truth_above = 0;
    let mut signal = Vec::with_capacity(days * steps);
    for day in 0..days {
        let m = MAD * (0.15 * normal(&mut rng)).exp();
        truth_above += usize::from(m > 0.1);
        signal.extend(
            DeviationDistribution::logistic(m)
                .unwrap()
                .sample(day as u64, steps)
                .unwrap(),
        );
    }
    let stats = mad_stats(&daily_mad(&signal, steps).unwrap(), 0.1).unwrap();
    let expected = truth_above as f64 / days as f64;
    ok &= (stats.fraction_above - expected).abs() <= 0.02;
    detail += &format!(
        "days above 0.1: {:.3} vs {expected:.3}; ",
        stats.fraction_above
    );

    // price file reduction and elasticity regression
    let csv = "timestamp,pb_cts_per_kwh,pa_cts_per_kw_h,pd_cts_per_kwh,delta\n\
               2019-01-01T00:00:00Z,3.9,0.9,4.0,0.5\n\
               2019-01-01T00:30:00Z,3.9,0.9,4.0,-0.5\n";
    let r = reduce_prices(&read_price_csv(csv.as_bytes()).unwrap()).unwrap();
    ok &= (r.cb - 3.9).abs() < 1e-12 && (r.cr.unwrap() - 0.9).abs() < 1e-12;

    let vols: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1e5)).collect();
    let prices: Vec<f64> = vols
        .iter()
        .map(|v| 0.9 + 1e-6 * v + 0.01 * normal(&mut rng))
        .collect();
    let (c0, cd) = fit_elasticity(&prices, &vols).unwrap();
    ok &= (c0 - 0.9).abs() <= 0.045 && (cd - 1e-6).abs() <= 5e-8;
    detail += &format!(
        "cb={:.3} cr={:.3} elasticity ({c0:.4}, {cd:.3e})",
        r.cb,
        r.cr.unwrap()
    );

    report(13, ok, &detail);
    assert!(ok, "{detail}");
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}
