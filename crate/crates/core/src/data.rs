//! Scenario data: ingestion, scaling, simulated predictions and synthetic
//! generation.
//!
//! A [`ScenarioSeries`] holds one hourly record per time step with market
//! price, carbon intensity, demand, renewable generation and the derived
//! unmet power (demand minus generation). Price and carbon intensity carry
//! min-max scaling statistics once fitted; unmet power stays in physical
//! units.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::Scheme;

/// Expected CSV header, in order.
pub const CSV_COLUMNS: [&str; 5] = ["timestamp", "price", "carbon_intensity", "demand_kw", "res_kw"];

/// One hourly observation of the exogenous variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExogenousRecord {
    /// Hour index within the series, equal to the record's position.
    pub hour: usize,
    /// Market price ($/kWh).
    pub price: f64,
    /// Carbon intensity (gCO2/kWh).
    pub carbon: f64,
    /// Aggregated demand (kW, never negative).
    pub demand_kw: f64,
    /// Renewable generation (kW, never negative).
    pub res_kw: f64,
    /// Unmet power `demand_kw - res_kw` (kW); negative means surplus.
    pub unmet_kw: f64,
}

/// Min-max statistics for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// Linear map of `x` onto [0, 1] for in-range values; out-of-range values
    /// map outside the unit interval.
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    /// Like [`MinMax::scale`] but clamped into [0, 1].
    pub fn scale_clamped(&self, x: f64) -> f64 {
        self.scale(x).clamp(0.0, 1.0)
    }

    /// Inverse of [`MinMax::scale`].
    pub fn unscale(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// Fitted min-max statistics for the variables that feed the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub price: MinMax,
    pub carbon: MinMax,
}

/// Gaussian prediction-noise settings: per-point standard deviation is
/// `level * |actual|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

/// An ordered hourly series plus its scaling statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSeries {
    /// Timestamp of the first record.
    pub start_utc: DateTime<Utc>,
    /// Interval between consecutive records (h).
    pub dt_hours: f64,
    /// Hourly records with consecutive `hour` indices starting at 0.
    pub records: Vec<ExogenousRecord>,
    /// Min-max statistics, present once [`ScenarioSeries::fit_scaler`] ran.
    pub scaler: Option<Scaler>,
}

impl ScenarioSeries {
    /// Builds a series from raw records, recomputing hour indices and the
    /// derived unmet power.
    pub fn from_records(start_utc: DateTime<Utc>, mut records: Vec<ExogenousRecord>) -> Self {
        for (i, r) in records.iter_mut().enumerate() {
            r.hour = i;
            r.unmet_kw = r.demand_kw - r.res_kw;
        }
        Self { start_utc, dt_hours: 1.0, records, scaler: None }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fits min-max statistics for price and carbon intensity over the whole
    /// series and stores them on the series.
    pub fn fit_scaler(&mut self) -> Result<Scaler> {
        if self.records.is_empty() {
            return Err(Error::SeriesTooShort { needed: 1, available: 0 });
        }
        let fit = |name: &str, values: &mut dyn Iterator<Item = f64>| -> Result<MinMax> {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for v in values {
                min = min.min(v);
                max = max.max(v);
            }
            if min >= max {
                return Err(Error::Config(format!(
                    "cannot fit scaler: column {name} is constant ({min})"
                )));
            }
            Ok(MinMax { min, max })
        };
        let scaler = Scaler {
            price: fit("price", &mut self.records.iter().map(|r| r.price))?,
            carbon: fit("carbon_intensity", &mut self.records.iter().map(|r| r.carbon))?,
        };
        self.scaler = Some(scaler);
        Ok(scaler)
    }

    /// Returns the fitted scaler or an error if none was fitted.
    pub fn require_scaler(&self) -> Result<&Scaler> {
        self.scaler
            .as_ref()
            .ok_or_else(|| Error::Config("series has no fitted scaler; call fit_scaler first".into()))
    }

    /// Contiguous sub-series `[start, start + len)`, re-indexed from zero.
    /// The fitted scaler is carried over unchanged.
    pub fn slice(&self, start: usize, len: usize) -> Result<ScenarioSeries> {
        if start + len > self.records.len() {
            return Err(Error::SeriesTooShort {
                needed: start + len,
                available: self.records.len(),
            });
        }
        let mut records = self.records[start..start + len].to_vec();
        for (i, r) in records.iter_mut().enumerate() {
            r.hour = i;
        }
        Ok(ScenarioSeries {
            start_utc: self.start_utc + Duration::hours(start as i64),
            dt_hours: self.dt_hours,
            records,
            scaler: self.scaler,
        })
    }
}

fn parse_cell(raw: &str, column: &str, row: usize) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::Csv { row, message: format!("column {column}: non-numeric value {raw:?}") })
}

/// Loads a scenario from a CSV file.
///
/// Schema: header `timestamp,price,carbon_intensity,demand_kw,res_kw`,
/// RFC 3339 timestamps on a strict hourly grid, decimal-point numerics.
/// Rows are sorted by timestamp; duplicates, gaps, negative demand and
/// negative generation are rejected with the offending row number.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<ScenarioSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Schema(format!("{}: {e}", path.as_ref().display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let mut column_index = Vec::with_capacity(CSV_COLUMNS.len());
    for name in CSV_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))?;
        column_index.push(idx);
    }

    // (timestamp, price, carbon, demand, res, original 1-based file row)
    let mut rows: Vec<(DateTime<Utc>, f64, f64, f64, f64, usize)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header occupies row 1
        let record = record.map_err(|e| Error::Csv { row, message: e.to_string() })?;
        let field = |k: usize| -> Result<&str> {
            record.get(column_index[k]).ok_or_else(|| Error::Csv {
                row,
                message: format!("missing value for column {:?}", CSV_COLUMNS[k]),
            })
        };
        let ts = DateTime::parse_from_rfc3339(field(0)?)
            .map_err(|e| Error::Csv { row, message: format!("column timestamp: {e}") })?
            .with_timezone(&Utc);
        let price = parse_cell(field(1)?, "price", row)?;
        let carbon = parse_cell(field(2)?, "carbon_intensity", row)?;
        let demand = parse_cell(field(3)?, "demand_kw", row)?;
        let res = parse_cell(field(4)?, "res_kw", row)?;
        if demand < 0.0 {
            return Err(Error::Validation { row, message: format!("demand_kw must be non-negative, got {demand}") });
        }
        if res < 0.0 {
            return Err(Error::Validation { row, message: format!("res_kw must be non-negative, got {res}") });
        }
        rows.push((ts, price, carbon, demand, res, row));
    }
    if rows.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, available: 0 });
    }

    rows.sort_by_key(|r| r.0);
    for pair in rows.windows(2) {
        let gap = pair[1].0 - pair[0].0;
        if gap == Duration::zero() {
            return Err(Error::Validation {
                row: pair[1].5,
                message: format!("duplicate timestamp {}", pair[1].0.to_rfc3339()),
            });
        }
        if gap != Duration::hours(1) {
            return Err(Error::Validation {
                row: pair[1].5,
                message: format!(
                    "timestamp gap of {} minutes before {}; expected strictly hourly data",
                    gap.num_minutes(),
                    pair[1].0.to_rfc3339()
                ),
            });
        }
    }

    let start = rows[0].0;
    let records = rows
        .into_iter()
        .map(|(_, price, carbon, demand_kw, res_kw, _)| ExogenousRecord {
            hour: 0,
            price,
            carbon,
            demand_kw,
            res_kw,
            unmet_kw: 0.0,
        })
        .collect();
    Ok(ScenarioSeries::from_records(start, records))
}

/// Writes a series back out in the canonical CSV schema.
pub fn write_csv<P: AsRef<Path>>(series: &ScenarioSeries, path: P) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", CSV_COLUMNS.join(","));
    for r in &series.records {
        let ts = (series.start_utc + Duration::hours(r.hour as i64))
            .to_rfc3339_opts(SecondsFormat::Secs, true);
        let _ = writeln!(out, "{ts},{},{},{},{}", r.price, r.carbon, r.demand_kw, r.res_kw);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Replaces price, carbon intensity and unmet power with noisy forecasts.
///
/// Each value `x` becomes `x + e` with `e ~ N(0, (level * |x|)^2)`; demand is
/// adjusted so the unmet-power identity keeps holding. Level 0 returns an
/// identical copy. Deterministic per seed.
pub fn simulate_predictions(series: &ScenarioSeries, spec: &NoiseSpec) -> ScenarioSeries {
    if spec.level == 0.0 {
        return series.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = series.clone();
    for r in &mut noisy.records {
        let mut perturb = |x: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + spec.level * x.abs() * z
        };
        r.price = perturb(r.price);
        r.carbon = perturb(r.carbon);
        r.unmet_kw = perturb(r.unmet_kw);
        r.demand_kw = r.res_kw + r.unmet_kw;
    }
    noisy
}

/// Draws a uniformly random episode window start.
///
/// The window of `window_len` consecutive records must leave `horizon` steps
/// of lookahead after it (prediction-based scheme) or `horizon` steps of
/// history before it (prediction-free scheme); the current-only scheme needs
/// no margin.
pub fn sample_episode_window<R: Rng + ?Sized>(
    series: &ScenarioSeries,
    window_len: usize,
    horizon: usize,
    scheme: Scheme,
    rng: &mut R,
) -> Result<usize> {
    let len = series.len();
    let (lo, needed) = match scheme {
        Scheme::PredictionBased | Scheme::PredictionFree => {
            let needed = window_len + horizon;
            let lo = if scheme == Scheme::PredictionFree { horizon } else { 0 };
            (lo, needed)
        }
        Scheme::Common => (0, window_len),
    };
    if len < needed || window_len == 0 {
        return Err(Error::SeriesTooShort { needed, available: len });
    }
    let hi = match scheme {
        Scheme::PredictionBased => len - window_len - horizon,
        Scheme::PredictionFree | Scheme::Common => len - window_len,
    };
    Ok(rng.random_range(lo..=hi))
}

/// Shape parameters for the synthetic scenario generator.
///
/// Price and carbon intensity follow daily sinusoids with configurable peak
/// hours; demand adds morning and evening bells on a base load; renewable
/// generation is a midday bell. Day-to-day jitter keeps the series from being
/// perfectly periodic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    pub price_base: f64,
    pub price_amplitude: f64,
    pub price_peak_hour: f64,
    pub carbon_base: f64,
    pub carbon_amplitude: f64,
    pub carbon_peak_hour: f64,
    pub demand_base_kw: f64,
    pub morning_peak_kw: f64,
    pub morning_peak_hour: f64,
    pub morning_width_h: f64,
    pub evening_peak_kw: f64,
    pub evening_peak_hour: f64,
    pub evening_width_h: f64,
    pub res_peak_kw: f64,
    pub res_peak_hour: f64,
    pub res_width_h: f64,
    /// Relative day-to-day wobble of amplitudes.
    pub day_jitter: f64,
    /// Relative hour-to-hour measurement jitter.
    pub hour_jitter: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            price_base: 0.10,
            price_amplitude: 0.06,
            price_peak_hour: 18.0,
            carbon_base: 350.0,
            carbon_amplitude: 150.0,
            carbon_peak_hour: 20.0,
            demand_base_kw: 2600.0,
            morning_peak_kw: 900.0,
            morning_peak_hour: 8.0,
            morning_width_h: 2.0,
            evening_peak_kw: 1700.0,
            evening_peak_hour: 19.0,
            evening_width_h: 2.5,
            res_peak_kw: 1600.0,
            res_peak_hour: 12.5,
            res_width_h: 2.5,
            day_jitter: 0.15,
            hour_jitter: 0.02,
        }
    }
}

fn bell(hour: f64, center: f64, width: f64) -> f64 {
    let d = hour - center;
    (-d * d / (2.0 * width * width)).exp()
}

/// Generates a reproducible synthetic scenario of whole days.
pub fn generate_synthetic(days: usize, seed: u64, profile: &SyntheticProfile) -> ScenarioSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = profile;
    let mut records = Vec::with_capacity(days * 24);
    let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    for _day in 0..days {
        let price_day = 1.0 + p.day_jitter * (rng.random::<f64>() * 2.0 - 1.0);
        let carbon_day = 1.0 + p.day_jitter * (rng.random::<f64>() * 2.0 - 1.0);
        let demand_day = 1.0 + p.day_jitter * (rng.random::<f64>() * 2.0 - 1.0);
        // Cloud cover scales generation down, never up.
        let res_day = 1.0 - p.day_jitter * rng.random::<f64>();
        for h in 0..24 {
            let hour = h as f64;
            let mut jitter = || 1.0 + p.hour_jitter * (rng.random::<f64>() * 2.0 - 1.0);
            let daily = |peak: f64| ((hour - peak + 6.0) * std::f64::consts::TAU / 24.0).sin();
            let price =
                (p.price_base + p.price_amplitude * price_day * daily(p.price_peak_hour)) * jitter();
            let carbon = (p.carbon_base + p.carbon_amplitude * carbon_day * daily(p.carbon_peak_hour))
                * jitter();
            let demand = (p.demand_base_kw
                + p.morning_peak_kw * bell(hour, p.morning_peak_hour, p.morning_width_h)
                + p.evening_peak_kw * bell(hour, p.evening_peak_hour, p.evening_width_h))
                * demand_day
                * jitter();
            let res = p.res_peak_kw * res_day * bell(hour, p.res_peak_hour, p.res_width_h) * jitter();
            records.push(ExogenousRecord {
                hour: 0,
                price: price.max(0.001),
                carbon: carbon.max(0.0),
                demand_kw: demand.max(0.0),
                res_kw: res.max(0.0),
                unmet_kw: 0.0,
            });
        }
    }
    ScenarioSeries::from_records(start, records)
}
