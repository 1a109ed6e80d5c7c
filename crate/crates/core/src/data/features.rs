use chrono::{Datelike, Duration, NaiveDateTime, Timelike};

use super::SeriesTable;
use crate::error::Result;
use crate::tensor::Real;

pub const LOAD_FEATURES: [&str; 3] = ["load", "hour", "day"];

pub const WIND_FEATURES: [&str; 9] = [
    "humidity",
    "nwp_speed",
    "nwp_direction_sin",
    "nwp_direction_cos",
    "temperature",
    "pressure",
    "wind_speed",
    "wind_power",
    "hour",
];

/// Wind feature columns forecast ahead of time (the NWP block).
pub const WIND_KNOWN_AHEAD: [usize; 6] = [0, 1, 2, 3, 4, 5];

/// Hour of day in 1..=24 and day of week in 1..=7 (Monday = 1).
///
/// Hour `h` covers the interval ending at `h:00`, so 00:00 is hour 24 of
/// the previous day.
pub fn hour_day(ts: NaiveDateTime) -> (u32, u32) {
    let t = ts - Duration::hours(1);
    (t.hour() + 1, t.weekday().number_from_monday())
}

/// `(load, hour, day)` per row.
pub fn build_load_features(table: &SeriesTable) -> Result<SeriesTable> {
    let load = table.column(&table.target)?;
    let mut values = Vec::with_capacity(table.len() * 3);
    for (ts, l) in table.timestamps.iter().zip(load) {
        let (h, d) = hour_day(*ts);
        values.extend([l, h as Real, d as Real]);
    }
    SeriesTable::new(
        table.timestamps.clone(),
        LOAD_FEATURES.iter().map(|s| s.to_string()).collect(),
        values,
        "load",
    )
}

/// The nine wind features in [`WIND_FEATURES`] order; direction (degrees) is
/// replaced by its sine and cosine.
pub fn build_wind_features(table: &SeriesTable) -> Result<SeriesTable> {
    let get = |n: &str| table.column(n);
    let humidity = get("humidity")?;
    let speed = get("nwp_speed")?;
    let dir = get("nwp_direction")?;
    let temp = get("temperature")?;
    let pressure = get("pressure")?;
    let hist = get("wind_speed")?;
    let power = get("wind_power")?;
    let mut values = Vec::with_capacity(table.len() * 9);
    for i in 0..table.len() {
        let theta = dir[i].to_radians();
        let (h, _) = hour_day(table.timestamps[i]);
        values.extend([humidity[i], speed[i], theta.sin(), theta.cos(), temp[i], pressure[i], hist[i], power[i], h as Real]);
    }
    SeriesTable::new(
        table.timestamps.clone(),
        WIND_FEATURES.iter().map(|s| s.to_string()).collect(),
        values,
        "wind_power",
    )
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;

    fn at(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    #[test]
    fn hour_and_day_encoding() {
        // 2021-06-06 is a Sunday
        assert_eq!(hour_day(at(2021, 6, 6, 8)), (8, 7));
        assert_eq!(hour_day(at(2021, 6, 7, 1)), (1, 1));
        // midnight closes Sunday
        assert_eq!(hour_day(at(2021, 6, 7, 0)), (24, 7));
    }

    #[test]
    fn load_row() {
        let t = SeriesTable::new(vec![at(2021, 6, 6, 8)], vec!["load".into()], vec![50.0], "load").unwrap();
        let f = build_load_features(&t).unwrap();
        assert_eq!(f.row(0), &[50.0, 8.0, 7.0]);
    }

    #[test]
    fn wind_columns() {
        let cols: Vec<String> = ["humidity", "nwp_speed", "nwp_direction", "temperature", "pressure", "wind_speed", "wind_power"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let t = SeriesTable::new(
            vec![at(2021, 6, 6, 8), at(2021, 6, 6, 9)],
            cols,
            vec![60.0, 5.0, 90.0, 20.0, 1000.0, 4.0, 3.0, 61.0, 6.0, 0.0, 21.0, 1001.0, 5.0, 4.0],
            "wind_power",
        )
        .unwrap();
        let f = build_wind_features(&t).unwrap();
        assert_eq!(f.width(), 9);
        assert!((f.row(0)[2] - 1.0).abs() <= Real::EPSILON && f.row(0)[3].abs() <= Real::EPSILON);
        assert_eq!((f.row(1)[2], f.row(1)[3]), (0.0, 1.0));
        assert_eq!(f.row(1)[8], 9.0);

        let short = SeriesTable::new(vec![at(2021, 6, 6, 8)], vec!["wind_power".into()], vec![1.0], "wind_power").unwrap();
        assert!(build_wind_features(&short).is_err());
    }
}
