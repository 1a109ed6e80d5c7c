use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{hour_day, DataKind, Schema, SeriesTable};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Real;

/// Rated output of the synthetic wind farm, MW.
pub const WIND_CAPACITY: Real = 50.0;

const TAU: Real = std::f64::consts::TAU as Real;

/// Deterministic hourly series in the same raw schema as ingested files.
///
/// Load: trend plus daily and weekly cycles, a weekend dip and Gaussian
/// noise. Wind: AR(1) wind speed driving a cubic power curve, with noisy
/// weather forecasts around the true speed.
pub fn synth_generate(kind: DataKind, length: usize, seed: u64) -> Result<SeriesTable> {
    if length < 400 {
        return Err(Error::InvalidArgument(format!("synthetic series need at least 400 rows, got {length}")));
    }
    let start = NaiveDate::from_ymd_opt(2021, 6, 1).expect("date").and_hms_opt(1, 0, 0).expect("time");
    let timestamps: Vec<_> = (0..length).map(|i| start + Duration::hours(i as i64)).collect();
    let mut rng = stream(seed, &format!("synth-{kind}"), 0);
    let schema = Schema::for_kind(kind);
    let values = match kind {
        DataKind::Load => load_values(&timestamps, &mut rng),
        DataKind::Wind => wind_values(&timestamps, &mut rng),
    };
    SeriesTable::new(timestamps, schema.columns, values, &schema.target)
}

fn normal(sd: Real) -> Normal<Real> {
    Normal::new(0.0, sd).expect("positive sd")
}

fn load_values(ts: &[chrono::NaiveDateTime], rng: &mut impl Rng) -> Vec<Real> {
    let noise = normal(25.0);
    let mut ar = 0.0;
    ts.iter()
        .enumerate()
        .map(|(i, t)| {
            let (h, d) = hour_day(*t);
            let t = i as Real;
            let daily = 220.0 * (TAU * (h as Real - 9.0) / 24.0).sin() + 60.0 * (2.0 * TAU * (h as Real - 3.0) / 24.0).sin();
            let weekly = 60.0 * (TAU * t / 168.0).sin();
            let weekend = if d >= 6 { -120.0 } else { 0.0 };
            ar = 0.7 * ar + noise.sample(rng);
            1500.0 + 0.05 * t + daily + weekly + weekend + ar
        })
        .collect()
}

fn power_curve(speed: Real) -> Real {
    let p = match speed {
        s if s < 3.0 || s >= 25.0 => 0.0,
        s if s < 12.0 => WIND_CAPACITY * ((s - 3.0) / 9.0).powi(3),
        _ => WIND_CAPACITY,
    };
    p.clamp(0.0, WIND_CAPACITY)
}

fn wind_values(ts: &[chrono::NaiveDateTime], rng: &mut impl Rng) -> Vec<Real> {
    let mut speed: Real = 7.0;
    let mut dir: Real = rng.random_range(0.0..360.0);
    let mut pressure_dev: Real = 0.0;
    let mut values = Vec::with_capacity(ts.len() * 7);
    for t in ts {
        let (h, _) = hour_day(*t);
        let season = (TAU * t.ordinal() as Real / 365.0).cos();
        let diurnal = (TAU * (h as Real - 15.0) / 24.0).sin();
        speed = (7.0 + 0.92 * (speed - 7.0) + 0.6 * diurnal * 0.3 + normal(1.1).sample(rng)).max(0.0);
        dir = (dir + normal(12.0).sample(rng)).rem_euclid(360.0);
        pressure_dev = 0.95 * pressure_dev + normal(0.8).sample(rng);
        let temperature = 14.0 - 8.0 * season + 5.0 * diurnal + normal(1.0).sample(rng);
        let humidity = (65.0 - 12.0 * diurnal + normal(4.0).sample(rng)).clamp(5.0, 100.0);
        let pressure = 1013.0 + pressure_dev - 0.3 * (speed - 7.0);
        let nwp_speed = (speed + normal(0.9).sample(rng)).max(0.0);
        let measured = (speed + normal(0.3).sample(rng)).max(0.0);
        let power = (power_curve(speed) + normal(1.0).sample(rng)).clamp(0.0, WIND_CAPACITY);
        values.extend([humidity, nwp_speed, dir, temperature, pressure, measured, power]);
    }
    values
}
