use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use regbid::config::ProblemConfig;
use regbid::dist::{DeviationDistribution, DistributionKind};
use regbid::econ::{
    annualized_cost, effective_yearly_profit, horizon_sweep, horizons_per_year, min_c_rate,
    operating_profit, unit_profit,
};
use regbid::feasible::{desired_rate, max_feasible_bid};
use regbid::implicit::{asymptotic_slope, slope_bounds, EfficiencyPair, ImplicitContext};
use regbid::ingest::{
    cap_daily_activation, daily_mad, daily_price_ratios, fit_elasticity, fit_logistic, mad_stats,
    normalize_frequency, read_frequency_file, read_price_file, read_volume_csv, reduce_prices,
    FittedParameters, DEFAULT_DELTA_NU, DEFAULT_NU0,
};
use regbid::simulate::{
    check_robust_feasibility, integrate_soc, mc_expected_terminal_soc, rearrange_nonincreasing,
    sample_trajectory,
};
use regbid::solve::{
    analytic_bid, analytic_elastic_bid, energy_constrained_optimum, objective, solve, BidSolution,
    MarketPrices,
};
use regbid::Error;

use crate::output::{envelope, write_csv, write_json, Format};

/// Exit status for a failed verification or an unexpected error.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status for invalid input: config, parameters, files.
pub const EXIT_INVALID: u8 = 2;
/// Exit status for an empty feasible set.
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "regbid",
    version,
    about = "Frequency-regulation bids for lossy storage"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Problem config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimal regulation bid for the configured prices.
    Solve(ConfigArgs),
    /// Closed-form bids, optimal initial state-of-charge and minimum C-rate.
    Analytic(ConfigArgs),
    /// Slope bounds and sandwich tables for the super-CDF and for g.
    Bounds {
        #[command(flatten)]
        io: ConfigArgs,
        /// `g` tabulates g against xr; `phi` tabulates the super-CDF on [-1, 1].
        #[arg(long, default_value = "g")]
        table: String,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Upper end of the xr grid (kW); defaults to the feasible maximum.
        #[arg(long)]
        xr_max: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Asymptotic slope and its bounds over a grid of roundtrip efficiencies.
    SweepM {
        /// `start:stop:step` over the roundtrip efficiency.
        #[arg(long)]
        eta_grid: String,
        #[arg(long)]
        mad: f64,
        #[arg(long, default_value = "logistic")]
        kind: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Unit, operating and effective yearly profits.
    Profit {
        #[command(flatten)]
        io: ConfigArgs,
        /// Planning horizons (h) for the sweep at the configured activation ratio.
        #[arg(long, value_delimiter = ',', default_value = "24,12,8,6,4")]
        horizons: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Estimate model parameters from frequency and price files.
    Fit(FitArgs),
    /// Monte-Carlo simulation of the state-of-charge at a bid.
    Simulate {
        #[command(flatten)]
        io: ConfigArgs,
        #[command(flatten)]
        bid: BidArgs,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Writes the first sampled trajectory as CSV.
        #[arg(long)]
        trajectory_out: Option<PathBuf>,
    },
    /// Oracle checks of a bid: expected state-of-charge, robust constraints,
    /// rearrangement dominance.
    Verify {
        #[command(flatten)]
        io: ConfigArgs,
        #[command(flatten)]
        bid: BidArgs,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
pub struct BidArgs {
    /// Regulation bid (kW); defaults to the optimal bid.
    #[arg(long)]
    pub xr: Option<f64>,
    /// Market purchase (kW); defaults to g(xr).
    #[arg(long)]
    pub xb: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Frequency CSV with header `timestamp,hz`.
    #[arg(long)]
    pub frequency: Option<PathBuf>,
    /// Price CSV with header `timestamp,pb_cts_per_kwh[,pa_cts_per_kw_h,pd_cts_per_kwh,delta]`.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// `volume_kw,price` rows for the market price elasticity.
    #[arg(long)]
    pub volumes_market: Option<PathBuf>,
    /// `volume_kw,price` rows for the availability price elasticity.
    #[arg(long)]
    pub volumes_availability: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NU0)]
    pub nu0: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA_NU)]
    pub delta_nu: f64,
    /// Samples per day for daily statistics; derived from the sampling interval when absent.
    #[arg(long)]
    pub steps_per_day: Option<usize>,
    /// Caps each day's activation at this ratio before fitting.
    #[arg(long)]
    pub cap_ratio: Option<f64>,
    /// Threshold for the share of days with a larger MAD.
    #[arg(long, default_value_t = 0.1)]
    pub mad_threshold: f64,
    /// Fitted parameter file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full fit report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::invalid(e.to_string())
    }
}

/// Maps a library error to an exit status, writing a machine-readable
/// report for infeasible problems.
fn fail(command: &str, out: Option<&Path>, e: Error) -> Failure {
    if e.is_infeasible() {
        let report = envelope(command, "infeasible", json!({ "reason": e.to_string() }));
        if let Err(io) = write_json(&report, out) {
            return Failure::invalid(io.to_string());
        }
        return Failure {
            code: EXIT_INFEASIBLE,
            message: e.to_string(),
        };
    }
    Failure::invalid(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(io) => cmd_solve(&io),
        Command::Analytic(io) => cmd_analytic(&io),
        Command::Bounds {
            io,
            table,
            points,
            xr_max,
            format,
        } => cmd_bounds(&io, &table, points, xr_max, format),
        Command::SweepM {
            eta_grid,
            mad,
            kind,
            out,
            format,
        } => cmd_sweep_m(&eta_grid, mad, &kind, out.as_deref(), format),
        Command::Profit {
            io,
            horizons,
            format,
        } => cmd_profit(&io, &horizons, format),
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate {
            io,
            bid,
            paths,
            seed,
            trajectory_out,
        } => cmd_simulate(&io, &bid, paths, seed, trajectory_out.as_deref()),
        Command::Verify {
            io,
            bid,
            paths,
            seed,
        } => cmd_verify(&io, &bid, paths, seed),
    }
}

struct Loaded {
    cfg: ProblemConfig,
    dist: DeviationDistribution,
}

fn load(command: &str, io: &ConfigArgs) -> Result<Loaded, Failure> {
    let out = io.out.as_deref();
    let cfg = ProblemConfig::load(&io.config).map_err(|e| fail(command, out, e))?;
    let dist = cfg.distribution().map_err(|e| fail(command, out, e))?;
    Ok(Loaded { cfg, dist })
}

fn units() -> Value {
    json!({
        "power": "kW",
        "energy": "kWh",
        "time": "h",
        "market_price": "cts/kWh",
        "regulation_price": "cts/(kW h)",
        "objective": "cts per horizon, negative is profit",
    })
}

fn solution_json(s: &BidSolution) -> Value {
    json!({
        "xr_kw": s.xr,
        "xb_kw": s.xb,
        "objective_cts": s.objective,
        "candidate": s.candidate,
        "xr_max_kw": s.xr_max,
        "m": s.m,
        "feasible": {
            "upper_kw": s.feasible.upper,
            "crossing_kw": s.feasible.crossing,
            "upper_envelope_hit_kw": s.feasible.x_upper_hit,
            "lower_envelope_hit_kw": s.feasible.x_lower_hit,
            "binding": s.feasible.binding,
            "mad_exceeds_activation": s.feasible.mad_exceeds_activation,
        },
        "diagnostics": s.diagnostics,
    })
}

fn cmd_solve(io: &ConfigArgs) -> Result<(), Failure> {
    let l = load("solve", io)?;
    let out = io.out.as_deref();
    let s = solve(
        &l.cfg.battery(),
        &l.cfg.contract(),
        &l.cfg.prices(),
        &l.dist,
    )
    .map_err(|e| fail("solve", out, e))?;
    let report = envelope(
        "solve",
        "ok",
        json!({ "units": units(), "price_mode": mode(&l.cfg.prices()), "solution": solution_json(&s) }),
    );
    write_json(&report, out)?;
    Ok(())
}

fn mode(p: &MarketPrices) -> &'static str {
    match p {
        MarketPrices::Inelastic { .. } => "inelastic",
        MarketPrices::Elastic { .. } => "elastic",
    }
}

fn cmd_analytic(io: &ConfigArgs) -> Result<(), Failure> {
    let l = load("analytic", io)?;
    let out = io.out.as_deref();
    let (bat, con, prices) = (l.cfg.battery(), l.cfg.contract(), l.cfg.prices());
    let m = asymptotic_slope(bat.eff, &l.dist);
    let opt = energy_constrained_optimum(&bat, &con, m).map_err(|e| fail("analytic", out, e))?;
    let on_target = (bat.soc0 - bat.soc_target).abs() <= 1e-12 * bat.cap;
    let bid = if on_target {
        json!(analytic_bid(&bat, &con, m).map_err(|e| fail("analytic", out, e))?)
    } else {
        Value::Null
    };
    let elastic = match (&prices, on_target) {
        (MarketPrices::Elastic { .. }, true) => {
            let (x, c) = analytic_elastic_bid(&bat, &con, &prices, m)
                .map_err(|e| fail("analytic", out, e))?;
            json!({ "xr_kw": x, "candidate": c })
        }
        _ => Value::Null,
    };
    let report = envelope(
        "analytic",
        "ok",
        json!({
            "units": units(),
            "m": m,
            "soc_on_target": on_target,
            "xr_max_kw": bid,
            "energy_constrained": {
                "xr_star_kw": opt.xr_star,
                "energy_term_kw": opt.energy_term,
                "y0_star_kwh": opt.y0_star,
                "y0_star_fraction": opt.y0_star / bat.cap,
                "c_rate_min_per_h": opt.c_rate_min,
                "binding": opt.binding,
                "normalized_bid": opt.normalized,
            },
            "elastic": elastic,
        }),
    );
    write_json(&report, out)?;
    Ok(())
}

#[derive(Serialize)]
struct GRow {
    xr_kw: f64,
    g_lower_kw: f64,
    g_kw: f64,
    g_upper_kw: f64,
}

#[derive(Serialize)]
struct PhiRow {
    z: f64,
    phi_lower: f64,
    phi: f64,
    phi_upper: f64,
}

fn cmd_bounds(
    io: &ConfigArgs,
    table: &str,
    points: usize,
    xr_max: Option<f64>,
    format: Format,
) -> Result<(), Failure> {
    let l = load("bounds", io)?;
    let out = io.out.as_deref();
    if points < 2 {
        return Err(Failure::invalid("--points must be at least 2"));
    }
    let (bat, con) = (l.cfg.battery(), l.cfg.contract());
    let mad = l.dist.mad();
    let m = asymptotic_slope(bat.eff, &l.dist);
    let (m_lo, m_hi) = slope_bounds(bat.eff, mad).map_err(|e| fail("bounds", out, e))?;
    let step = |i: usize| i as f64 / (points - 1) as f64;

    let (rows_g, rows_phi): (Vec<GRow>, Vec<PhiRow>) = match table {
        "g" => {
            let ctx = ImplicitContext::new(bat.eff, l.dist.clone(), desired_rate(&bat, &con))
                .map_err(|e| fail("bounds", out, e))?;
            let top = match xr_max {
                Some(x) if x > 0.0 => x,
                Some(x) => return Err(Failure::invalid(format!("--xr-max {x} must be positive"))),
                None => {
                    max_feasible_bid(&bat, &con, &ctx)
                        .map_err(|e| fail("bounds", out, e))?
                        .upper
                }
            };
            let rows = (0..points)
                .map(|i| {
                    let x = top * step(i);
                    let (gl, gu) = ctx.g_bounds(x);
                    GRow {
                        xr_kw: x,
                        g_lower_kw: gl,
                        g_kw: ctx.g(x),
                        g_upper_kw: gu,
                    }
                })
                .collect();
            (rows, Vec::new())
        }
        "phi" => {
            let lo =
                DeviationDistribution::two_point_lower(mad).map_err(|e| fail("bounds", out, e))?;
            let hi = DeviationDistribution::three_point_upper(mad)
                .map_err(|e| fail("bounds", out, e))?;
            let rows = (0..points)
                .map(|i| {
                    let z = -1.0 + 2.0 * step(i);
                    PhiRow {
                        z,
                        phi_lower: lo.scdf(z),
                        phi: l.dist.scdf(z),
                        phi_upper: hi.scdf(z),
                    }
                })
                .collect();
            (Vec::new(), rows)
        }
        other => {
            return Err(Failure::invalid(format!(
                "unknown table `{other}`, expected `g` or `phi`"
            )))
        }
    };

    match format {
        Format::Csv if table == "g" => write_csv(&rows_g, out)?,
        Format::Csv => write_csv(&rows_phi, out)?,
        Format::Json => {
            let rows = if table == "g" {
                serde_json::to_value(&rows_g)
            } else {
                serde_json::to_value(&rows_phi)
            }
            .map_err(|e| Failure::invalid(e.to_string()))?;
            let report = envelope(
                "bounds",
                "ok",
                json!({
                    "mad": mad,
                    "roundtrip": bat.eff.roundtrip(),
                    "m": m,
                    "m_lower": m_lo,
                    "m_upper": m_hi,
                    "table": table,
                    "rows": rows,
                }),
            );
            write_json(&report, out)?;
        }
    }
    Ok(())
}

/// Parses `start:stop:step` into grid points, inclusive of `stop` up to rounding.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::invalid(format!("invalid grid `{spec}`, expected start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let (a, b, h) = (nums[0], nums[1], nums[2]);
    if !(h > 0.0 && b >= a) {
        return Err(bad());
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * h).collect())
}

#[derive(Serialize)]
struct SlopeRow {
    roundtrip: f64,
    m: f64,
    m_lower: f64,
    m_upper: f64,
}

fn cmd_sweep_m(
    grid: &str,
    mad: f64,
    kind: &str,
    out: Option<&Path>,
    format: Format,
) -> Result<(), Failure> {
    let kind: DistributionKind = kind
        .parse()
        .map_err(|e: Error| Failure::invalid(e.to_string()))?;
    let dist = DeviationDistribution::build(kind, mad, None)
        .map_err(|e| Failure::invalid(e.to_string()))?;
    let rhos = parse_grid(grid)?;
    if let Some(r) = rhos.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Failure::invalid(format!("roundtrip {r} outside (0, 1]")));
    }
    let rows: Vec<SlopeRow> = rhos
        .par_iter()
        .map(|&rho| {
            let eff = EfficiencyPair {
                eta_plus: rho.sqrt(),
                eta_minus: rho.sqrt(),
            };
            let (lo, hi) = slope_bounds(eff, mad).map_err(|e| Failure::invalid(e.to_string()))?;
            Ok(SlopeRow {
                roundtrip: rho,
                m: asymptotic_slope(eff, &dist),
                m_lower: lo,
                m_upper: hi,
            })
        })
        .collect::<Result<_, Failure>>()?;
    match format {
        Format::Csv => write_csv(&rows, out)?,
        Format::Json => {
            let report = envelope(
                "sweep-m",
                "ok",
                json!({ "mad": mad, "kind": kind.as_str(), "rows": rows }),
            );
            write_json(&report, out)?;
        }
    }
    Ok(())
}

/// Flat horizon-sweep row; the CSV writer does not take flattened structs.
#[derive(Serialize)]
struct SweepRow {
    horizon_h: f64,
    budget_h: f64,
    operating_per_horizon: f64,
    operating_yearly: f64,
    energy_cost: f64,
    power_cost: f64,
    c_rate: f64,
    effective: f64,
}

fn cmd_profit(io: &ConfigArgs, horizons: &[f64], format: Format) -> Result<(), Failure> {
    let l = load("profit", io)?;
    let out = io.out.as_deref();
    let (bat, con, prices) = (l.cfg.battery(), l.cfg.contract(), l.cfg.prices());
    let m = asymptotic_slope(bat.eff, &l.dist);
    let err = |e| fail("profit", out, e);
    let unit = unit_profit(&prices, m).map_err(err)?;
    let op = operating_profit(&bat, &con, &prices, m).map_err(err)?;
    let c_min = min_c_rate(&bat, &con, m);
    let energy_constrained = bat.charge_cap / bat.cap >= c_min;
    let inv = l.cfg.investment();

    let sweep = match &inv {
        Some(inv) => Some(horizon_sweep(&bat, &con, &prices, m, inv, horizons).map_err(err)?),
        None => None,
    };
    if format == Format::Csv {
        let rows = sweep.ok_or_else(|| {
            Failure::invalid("CSV output needs an `investment` block in the config")
        })?;
        let flat: Vec<SweepRow> = rows
            .iter()
            .map(|r| SweepRow {
                horizon_h: r.horizon_h,
                budget_h: r.budget_h,
                operating_per_horizon: r.profit.operating_per_horizon,
                operating_yearly: r.profit.operating_yearly,
                energy_cost: r.profit.energy_cost,
                power_cost: r.profit.power_cost,
                c_rate: r.profit.c_rate,
                effective: r.profit.effective,
            })
            .collect();
        write_csv(&flat, out)?;
        return Ok(());
    }
    let investment = match &inv {
        Some(inv) => {
            let (e, p) = annualized_cost(inv).map_err(err)?;
            let yearly = effective_yearly_profit(
                &bat,
                &con,
                &prices,
                m,
                inv,
                horizons_per_year(con.horizon),
            )
            .map_err(err)?;
            json!({
                "annualized_energy_cost_per_kwh_yr": e,
                "annualized_power_cost_per_kw_yr": p,
                "yearly": yearly,
                "horizon_sweep": sweep,
            })
        }
        None => Value::Null,
    };
    let report = envelope(
        "profit",
        "ok",
        json!({
            "m": m,
            "unit_profit_cts_per_kw_h": unit,
            "operating_profit_cts_per_kwh": op,
            "c_rate_min_per_h": c_min,
            "energy_constrained": energy_constrained,
            "investment": investment,
        }),
    );
    write_json(&report, out)?;
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let inv = |e: Error| Failure::invalid(e.to_string());
    if a.frequency.is_none() && a.prices.is_none() {
        return Err(Failure::invalid("fit needs --frequency and/or --prices"));
    }
    let mut params = FittedParameters::default();
    let mut report = serde_json::Map::new();

    if let Some(path) = &a.frequency {
        let fs = read_frequency_file(path, a.nu0, a.delta_nu).map_err(inv)?;
        let mut dev = normalize_frequency(&fs).map_err(inv)?;
        let per_day = a
            .steps_per_day
            .unwrap_or_else(|| (24.0 / fs.dt).round().max(1.0) as usize);
        let daily = daily_mad(&dev, per_day).map_err(inv)?;
        if !daily.is_empty() {
            report.insert(
                "daily_mad".into(),
                json!(mad_stats(&daily, a.mad_threshold).map_err(inv)?),
            );
        }
        if let Some(ratio) = a.cap_ratio {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Failure::invalid(format!(
                    "--cap-ratio {ratio} outside (0, 1]"
                )));
            }
            dev = cap_daily_activation(&dev, per_day, ratio).map_err(inv)?;
        }
        let d = fit_logistic(&dev).map_err(inv)?;
        params.mad = Some(d.mad());
        params.theta = d.theta();
        report.insert("samples".into(), json!(dev.len()));
        report.insert("dt_h".into(), json!(fs.dt));
        report.insert("capped_ratio".into(), json!(a.cap_ratio));
    }

    if let Some(path) = &a.prices {
        let ps = read_price_file(path).map_err(inv)?;
        let r = reduce_prices(&ps).map_err(inv)?;
        params.cb = Some(r.cb);
        params.cr = r.cr;
        params.cb0 = Some(r.cb);
        params.ca0 = r.cr;
        report.insert("delivery_correction".into(), json!(r.delivery_correction));
        if r.delivery_correction.is_none() {
            report.insert(
                "delivery_correction_note".into(),
                json!("omitted: delivery prices or deviations missing"),
            );
        }
        if r.cr.is_some() {
            let per_day = a
                .steps_per_day
                .unwrap_or_else(|| (24.0 / ps.dt).round().max(1.0) as usize);
            let ratios = daily_price_ratios(&ps, per_day).map_err(inv)?;
            if !ratios.is_empty() {
                let n = ratios.len() as f64;
                report.insert(
                    "daily_cr_over_cb".into(),
                    json!({
                        "days": ratios.len(),
                        "min": ratios.iter().copied().fold(f64::INFINITY, f64::min),
                        "mean": ratios.iter().sum::<f64>() / n,
                        "max": ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    }),
                );
            }
        }
    }

    if let Some(path) = &a.volumes_market {
        let (v, p) = read_volume_csv(std::fs::File::open(path)?).map_err(inv)?;
        let (c0, cd) = fit_elasticity(&p, &v).map_err(inv)?;
        params.cb0 = Some(c0);
        params.cbd = Some(cd);
    }
    if let Some(path) = &a.volumes_availability {
        let (v, p) = read_volume_csv(std::fs::File::open(path)?).map_err(inv)?;
        let (c0, cd) = fit_elasticity(&p, &v).map_err(inv)?;
        params.ca0 = Some(c0);
        // availability prices fall with volume: ca0 - cad xr
        params.cad = Some(-cd);
    }

    let params_json = serde_json::to_value(params).map_err(|e| Failure::invalid(e.to_string()))?;
    write_json(&params_json, a.out.as_deref())?;
    if let Some(path) = &a.report {
        report.insert("parameters".into(), params_json);
        write_json(&envelope("fit", "ok", Value::Object(report)), Some(path))?;
    }
    Ok(())
}

/// The bid to simulate: explicit values, or the optimal bid.
fn resolve_bid(
    command: &str,
    l: &Loaded,
    bid: &BidArgs,
    out: Option<&Path>,
) -> Result<(f64, f64), Failure> {
    let (bat, con) = (l.cfg.battery(), l.cfg.contract());
    let err = |e| fail(command, out, e);
    match (bid.xr, bid.xb) {
        (Some(xr), Some(xb)) => Ok((xr, xb)),
        (Some(xr), None) => {
            if xr < 0.0 {
                return Err(Failure::invalid(format!("--xr {xr} must be nonnegative")));
            }
            let ctx = ImplicitContext::new(bat.eff, l.dist.clone(), desired_rate(&bat, &con))
                .map_err(err)?;
            Ok((xr, ctx.g(xr)))
        }
        (None, Some(_)) => Err(Failure::invalid("--xb requires --xr")),
        (None, None) => {
            let s = solve(&bat, &con, &l.cfg.prices(), &l.dist).map_err(err)?;
            Ok((s.xr, s.xb))
        }
    }
}

fn cmd_simulate(
    io: &ConfigArgs,
    bid: &BidArgs,
    paths: Option<usize>,
    seed: Option<u64>,
    trajectory_out: Option<&Path>,
) -> Result<(), Failure> {
    let l = load("simulate", io)?;
    let out = io.out.as_deref();
    let (xr, xb) = resolve_bid("simulate", &l, bid, out)?;
    let (bat, con) = (l.cfg.battery(), l.cfg.contract());
    let s = &l.cfg.solver;
    let (n_paths, seed) = (paths.unwrap_or(s.n_paths), seed.unwrap_or(s.seed));
    let err = |e| fail("simulate", out, e);
    let free =
        mc_expected_terminal_soc(xb, xr, &bat, &con, &l.dist, s.n_steps, n_paths, seed, false)
            .map_err(err)?;
    let capped =
        mc_expected_terminal_soc(xb, xr, &bat, &con, &l.dist, s.n_steps, n_paths, seed, true)
            .map_err(err)?;
    let ctx = ImplicitContext::new(bat.eff, l.dist.clone(), 0.0).map_err(err)?;
    let analytic = bat.soc0 + con.horizon * ctx.expected_charge_rate(xb, xr);

    if let Some(path) = trajectory_out {
        sample_trajectory(&l.dist, &con, s.n_steps, seed)
            .map_err(err)?
            .write_csv(path)
            .map_err(err)?;
    }
    let report = envelope(
        "simulate",
        "ok",
        json!({
            "units": units(),
            "xr_kw": xr,
            "xb_kw": xb,
            "seed": seed,
            "n_paths": n_paths,
            "n_steps": s.n_steps,
            "analytic_terminal_soc_kwh": analytic,
            "uncapped": free,
            "capped": capped,
            "capped_fraction": capped.n_capped as f64 / n_paths as f64,
        }),
    );
    write_json(&report, out)?;
    Ok(())
}

fn cmd_verify(
    io: &ConfigArgs,
    bid: &BidArgs,
    paths: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let l = load("verify", io)?;
    let out = io.out.as_deref();
    let (xr, xb) = resolve_bid("verify", &l, bid, out)?;
    let (bat, con) = (l.cfg.battery(), l.cfg.contract());
    let s = &l.cfg.solver;
    let (n_paths, seed) = (paths.unwrap_or(s.n_paths), seed.unwrap_or(s.seed));
    let err = |e| fail("verify", out, e);

    let ctx = ImplicitContext::new(bat.eff, l.dist.clone(), 0.0).map_err(err)?;
    let analytic = bat.soc0 + con.horizon * ctx.expected_charge_rate(xb, xr);
    let mc = mc_expected_terminal_soc(xb, xr, &bat, &con, &l.dist, s.n_steps, n_paths, seed, false)
        .map_err(err)?;
    let esoc_ok = mc.contains(analytic);

    let robust =
        check_robust_feasibility(xb, xr, &bat, &con, s.n_steps, s.n_random, seed).map_err(err)?;
    let robust_ok = robust.closed_form_feasible && robust.max_sampled_violation <= s.violation_tol;
    let tight_ok = robust.max_tightness_gap <= s.violation_tol.max(1e-9) * (1.0 + bat.cap);

    let n_rearr = 100;
    let min_slack = (0..n_rearr as u64)
        .into_par_iter()
        .map(|i| -> regbid::Result<f64> {
            let t = sample_trajectory(&l.dist, &con, s.n_steps, seed.wrapping_add(i))?.abs();
            let sorted = rearrange_nonincreasing(&t)?;
            let a = integrate_soc(xb, xr, &t, &bat);
            let b = integrate_soc(xb, xr, &sorted, &bat);
            Ok(a.iter()
                .zip(&b)
                .map(|(a, b)| b - a)
                .fold(f64::INFINITY, f64::min))
        })
        .collect::<regbid::Result<Vec<f64>>>()
        .map_err(err)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let rearr_ok = min_slack >= -1e-9;

    // the optimal bid must beat every point of a grid over the feasible segment
    let grid = if bid.xr.is_none() {
        let prices = l.cfg.prices();
        let s_opt = solve(&bat, &con, &prices, &l.dist).map_err(err)?;
        let ctx =
            ImplicitContext::new(bat.eff, l.dist.clone(), desired_rate(&bat, &con)).map_err(err)?;
        let n = s.grid_points.max(2);
        let best = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = s_opt.xr_max * i as f64 / (n - 1) as f64;
                objective(&prices, &con, x, ctx.g(x))
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let ok = s_opt.objective <= best + 1e-9 * (1.0 + best.abs());
        json!({ "points": n, "grid_best_cts": best, "solver_cts": s_opt.objective, "optimal": ok })
    } else {
        Value::Null
    };
    let grid_ok = grid["optimal"].as_bool().unwrap_or(true);

    let pass = esoc_ok && robust_ok && tight_ok && rearr_ok && grid_ok;
    let report = envelope(
        "verify",
        if pass { "ok" } else { "failed" },
        json!({
            "units": units(),
            "xr_kw": xr,
            "xb_kw": xb,
            "seed": seed,
            "expected_soc": {
                "analytic_kwh": analytic,
                "mc_mean_kwh": mc.mean,
                "half_width_kwh": mc.half_width,
                "n_paths": n_paths,
                "inside": esoc_ok,
            },
            "robust": robust,
            "robust_feasible": robust_ok,
            "robust_tight": tight_ok,
            "grid_optimality": grid,
            "rearrangement": { "paths": n_rearr, "min_slack_kwh": min_slack, "dominates": rearr_ok },
            "pass": pass,
        }),
    );
    write_json(&report, out)?;
    if pass {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILURE,
            message: "verification failed".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.35:1.0:0.05").unwrap();
        assert_eq!(g.len(), 14);
        assert!((g[13] - 1.0).abs() < 1e-12);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }
}
