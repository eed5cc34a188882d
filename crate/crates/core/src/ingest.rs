//! Parameter estimation from raw frequency and price series.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::dist::{mean_abs, DeviationDistribution};
use crate::error::{Error, Result};
use crate::simulate::cap_to_budget;

/// Nominal grid frequency in continental Europe (Hz).
pub const DEFAULT_NU0: f64 = 50.0;
/// Frequency deviation at which full regulation power is due (Hz).
pub const DEFAULT_DELTA_NU: f64 = 0.2;

/// Relative tolerance on sampling-interval uniformity.
const SPACING_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySeries {
    /// Measured frequency (Hz).
    pub nu: Vec<f64>,
    pub nu0: f64,
    pub delta_nu: f64,
    /// Sampling interval (h).
    pub dt: f64,
}

impl FrequencySeries {
    pub fn validate(&self) -> Result<()> {
        if self.nu.is_empty() {
            return Err(Error::EmptyInput("frequency series"));
        }
        if !(self.delta_nu > 0.0) {
            return Err(Error::domain("delta_nu", self.delta_nu, "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::domain("dt", self.dt, "must be positive"));
        }
        Ok(())
    }
}

/// Clipped ramp `(nu - nu0) / delta_nu` onto `[-1, 1]`.
pub fn normalize(nu: f64, nu0: f64, delta_nu: f64) -> f64 {
    ((nu - nu0) / delta_nu).clamp(-1.0, 1.0)
}

pub fn normalize_frequency(fs: &FrequencySeries) -> Result<Vec<f64>> {
    fs.validate()?;
    Ok(fs
        .nu
        .iter()
        .map(|&v| normalize(v, fs.nu0, fs.delta_nu))
        .collect())
}

/// Logistic distribution with the sample mean absolute deviation.
pub fn fit_logistic(deviations: &[f64]) -> Result<DeviationDistribution> {
    let mad = mean_abs(deviations).ok_or(Error::EmptyInput("deviation sample"))?;
    if mad == 0.0 {
        return Err(Error::DegenerateDistribution("all deviations are zero"));
    }
    DeviationDistribution::logistic(mad)
}

/// Mean absolute deviation of each complete day.
pub fn daily_mad(deviations: &[f64], steps_per_day: usize) -> Result<Vec<f64>> {
    if steps_per_day == 0 {
        return Err(Error::EmptyInput("steps_per_day must be positive"));
    }
    Ok(deviations
        .chunks_exact(steps_per_day)
        .map(|d| d.iter().map(|v| v.abs()).sum::<f64>() / steps_per_day as f64)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadStats {
    pub days: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Share of days whose MAD exceeds the threshold.
    pub fraction_above: f64,
    pub threshold: f64,
}

pub fn mad_stats(daily: &[f64], threshold: f64) -> Result<MadStats> {
    if daily.is_empty() {
        return Err(Error::EmptyInput("no complete day"));
    }
    let n = daily.len() as f64;
    Ok(MadStats {
        days: daily.len(),
        mean: daily.iter().sum::<f64>() / n,
        min: daily.iter().copied().fold(f64::INFINITY, f64::min),
        max: daily.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        fraction_above: daily.iter().filter(|&&d| d > threshold).count() as f64 / n,
        threshold,
    })
}

/// Stops each day's signal once its activation reaches `ratio` of the day,
/// so that no day's MAD exceeds `ratio`. A trailing partial day is kept as is.
pub fn cap_daily_activation(
    deviations: &[f64],
    steps_per_day: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if steps_per_day == 0 {
        return Err(Error::EmptyInput("steps_per_day must be positive"));
    }
    let mut out = deviations.to_vec();
    for day in out.chunks_exact_mut(steps_per_day) {
        cap_to_budget(day, 1.0, ratio * steps_per_day as f64);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    /// Market prices (cts/kWh).
    pub pb: Vec<f64>,
    /// Availability prices (cts/(kW h)).
    pub pa: Option<Vec<f64>>,
    /// Delivery prices (cts/kWh).
    pub pd: Option<Vec<f64>>,
    /// Normalized deviations aligned with the prices.
    pub delta: Option<Vec<f64>>,
    /// Sampling interval (h).
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceReduction {
    pub cb: f64,
    /// Absent without availability prices.
    pub cr: Option<f64>,
    /// Time average of `delta pd`; absent when delivery prices or deviations are missing.
    pub delivery_correction: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_len(name: &str, xs: &[f64], n: usize) -> Result<()> {
    if xs.len() != n {
        return Err(Error::Misaligned(format!(
            "{name} has {} samples, market prices have {n}",
            xs.len()
        )));
    }
    Ok(())
}

/// Time averages `cb = <pb>` and `cr = <pa> - <delta pd>`.
pub fn reduce_prices(ps: &PriceSeries) -> Result<PriceReduction> {
    let n = ps.pb.len();
    if n == 0 {
        return Err(Error::EmptyInput("price series"));
    }
    for (name, s) in [("pa", &ps.pa), ("pd", &ps.pd), ("delta", &ps.delta)] {
        if let Some(s) = s {
            check_len(name, s, n)?;
        }
    }
    let delivery_correction = match (&ps.pd, &ps.delta) {
        (Some(pd), Some(d)) => Some(pd.iter().zip(d).map(|(p, d)| p * d).sum::<f64>() / n as f64),
        _ => None,
    };
    let cr = ps
        .pa
        .as_deref()
        .map(|pa| mean(pa) - delivery_correction.unwrap_or(0.0));
    Ok(PriceReduction {
        cb: mean(&ps.pb),
        cr,
        delivery_correction,
    })
}

/// Ratio `cr / cb` per complete day.
pub fn daily_price_ratios(ps: &PriceSeries, steps_per_day: usize) -> Result<Vec<f64>> {
    if steps_per_day == 0 {
        return Err(Error::EmptyInput("steps_per_day must be positive"));
    }
    let n = ps.pb.len();
    let days = n / steps_per_day;
    (0..days)
        .map(|d| {
            let r = d * steps_per_day..(d + 1) * steps_per_day;
            let slice = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[r.clone()].to_vec());
            let day = PriceSeries {
                pb: ps.pb[r.clone()].to_vec(),
                pa: slice(&ps.pa),
                pd: slice(&ps.pd),
                delta: slice(&ps.delta),
                dt: ps.dt,
            };
            let red = reduce_prices(&day)?;
            let cr = red.cr.ok_or(Error::EmptyInput("availability prices"))?;
            Ok(cr / red.cb)
        })
        .collect()
}

/// Ordinary least squares `price = c0 + cd volume`.
pub fn fit_elasticity(prices: &[f64], volumes: &[f64]) -> Result<(f64, f64)> {
    if prices.len() != volumes.len() {
        return Err(Error::Misaligned(format!(
            "{} prices vs {} volumes",
            prices.len(),
            volumes.len()
        )));
    }
    if prices.len() < 2 {
        return Err(Error::EmptyInput(
            "elasticity fit needs at least two points",
        ));
    }
    let (mx, my) = (mean(volumes), mean(prices));
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&x, &y) in volumes.iter().zip(prices) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::SingularFit("volumes are constant"));
    }
    let cd = sxy / sxx;
    Ok((my - cd * mx, cd))
}

/// Parses an ISO-8601 timestamp; offsets are honoured, naive times read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_millis());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp_millis());
        }
    }
    None
}

/// Common sampling interval in hours; rejects irregular spacing.
fn uniform_step(stamps: &[(usize, i64)]) -> Result<f64> {
    if stamps.len() < 2 {
        return Err(Error::EmptyInput("series needs at least two timestamps"));
    }
    let step = stamps[1].1 - stamps[0].1;
    if step <= 0 {
        return Err(Error::Parse {
            line: stamps[1].0,
            message: "timestamps must increase".into(),
        });
    }
    for w in stamps.windows(2) {
        let d = w[1].1 - w[0].1;
        if ((d - step) as f64).abs() > SPACING_TOL * step as f64 {
            return Err(Error::Parse {
                line: w[1].0,
                message: format!("irregular spacing: {d} ms after {step} ms"),
            });
        }
    }
    Ok(step as f64 / 3_600_000.0)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r)
}

fn field(rec: &csv::StringRecord, i: usize, line: usize, name: &str) -> Result<f64> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {name} `{raw}`"),
    })
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

fn header_error(found: &csv::StringRecord, expected: &str) -> Error {
    Error::Parse {
        line: 1,
        message: format!(
            "expected header `{expected}`, found `{}`",
            found.iter().collect::<Vec<_>>().join(",")
        ),
    }
}

/// Reads `timestamp,hz` rows.
pub fn read_frequency_csv<R: Read>(r: R, nu0: f64, delta_nu: f64) -> Result<FrequencySeries> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "hz"] {
        return Err(header_error(&headers, "timestamp,hz"));
    }
    let mut stamps = Vec::new();
    let mut nu = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec, i + 2);
        let ts = parse_timestamp(rec.get(0).unwrap_or("")).ok_or_else(|| Error::Parse {
            line,
            message: "invalid ISO-8601 timestamp".into(),
        })?;
        stamps.push((line, ts));
        nu.push(field(&rec, 1, line, "frequency")?);
    }
    let dt = uniform_step(&stamps)?;
    let fs = FrequencySeries {
        nu,
        nu0,
        delta_nu,
        dt,
    };
    fs.validate()?;
    Ok(fs)
}

pub fn read_frequency_file(path: &Path, nu0: f64, delta_nu: f64) -> Result<FrequencySeries> {
    read_frequency_csv(std::fs::File::open(path)?, nu0, delta_nu)
}

const PRICE_COLUMNS: [&str; 5] = [
    "timestamp",
    "pb_cts_per_kwh",
    "pa_cts_per_kw_h",
    "pd_cts_per_kwh",
    "delta",
];

/// Reads `timestamp,pb_cts_per_kwh[,pa_cts_per_kw_h,pd_cts_per_kwh,delta]` rows.
/// Optional columns may be given as a prefix of the list.
pub fn read_price_csv<R: Read>(r: R) -> Result<PriceSeries> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols.len() > 5 || cols[..] != PRICE_COLUMNS[..cols.len()] {
        return Err(header_error(&headers, &PRICE_COLUMNS.join(",")));
    }
    let width = cols.len();
    let mut stamps = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); width - 1];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec, i + 2);
        let ts = parse_timestamp(rec.get(0).unwrap_or("")).ok_or_else(|| Error::Parse {
            line,
            message: "invalid ISO-8601 timestamp".into(),
        })?;
        stamps.push((line, ts));
        for (k, col) in data.iter_mut().enumerate() {
            col.push(field(&rec, k + 1, line, PRICE_COLUMNS[k + 1])?);
        }
    }
    let dt = uniform_step(&stamps)?;
    let mut it = data.into_iter();
    Ok(PriceSeries {
        pb: it.next().unwrap_or_default(),
        pa: it.next(),
        pd: it.next(),
        delta: it.next(),
        dt,
    })
}

pub fn read_price_file(path: &Path) -> Result<PriceSeries> {
    read_price_csv(std::fs::File::open(path)?)
}

/// Reads `volume_kw,price` rows for an elasticity regression.
pub fn read_volume_csv<R: Read>(r: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["volume_kw", "price"] {
        return Err(header_error(&headers, "volume_kw,price"));
    }
    let (mut vol, mut price) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec, i + 2);
        vol.push(field(&rec, 0, line, "volume")?);
        price.push(field(&rec, 1, line, "price")?);
    }
    Ok((vol, price))
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Fitted model parameters as written by the `fit` command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FittedParameters {
    pub mad: Option<f64>,
    pub theta: Option<f64>,
    pub cb: Option<f64>,
    pub cr: Option<f64>,
    pub cb0: Option<f64>,
    pub cbd: Option<f64>,
    pub ca0: Option<f64>,
    pub cad: Option<f64>,
}
