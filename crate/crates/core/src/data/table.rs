use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::DataKind;
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const TIMESTAMP_COLUMN: &str = "timestamp";

const TS_FORMATS: [&str; 3] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"];
const TS_OUT: &str = "%Y-%m-%d %H:%M:%S";

/// Expected CSV columns (after the timestamp) and the forecast target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub columns: Vec<String>,
    pub target: String,
}

impl Schema {
    pub fn new(columns: &[&str], target: &str) -> Self {
        Schema {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            target: target.to_string(),
        }
    }

    /// `timestamp,load`
    pub fn load() -> Self {
        Schema::new(&["load"], "load")
    }

    /// `timestamp,humidity,nwp_speed,nwp_direction,temperature,pressure,wind_speed,wind_power`
    pub fn wind() -> Self {
        Schema::new(
            &["humidity", "nwp_speed", "nwp_direction", "temperature", "pressure", "wind_speed", "wind_power"],
            "wind_power",
        )
    }

    pub fn for_kind(kind: DataKind) -> Self {
        match kind {
            DataKind::Load => Schema::load(),
            DataKind::Wind => Schema::wind(),
        }
    }
}

/// Hourly, gap-free table of named real columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<String>,
    /// Row-major `len x columns.len()`.
    pub values: Vec<Real>,
    pub target: String,
}

impl SeriesTable {
    /// Builds a table, checking hourly spacing and shape.
    pub fn new(timestamps: Vec<NaiveDateTime>, columns: Vec<String>, values: Vec<Real>, target: &str) -> Result<Self> {
        if values.len() != timestamps.len() * columns.len() {
            return Err(Error::Dataset(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                timestamps.len(),
                columns.len()
            )));
        }
        if !columns.iter().any(|c| c == target) {
            return Err(Error::Dataset(format!("target column {target:?} is not among {columns:?}")));
        }
        check_hourly(&timestamps, 0)?;
        Ok(SeriesTable {
            timestamps,
            columns,
            values,
            target: target.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.values[i * self.width()..(i + 1) * self.width()]
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Dataset(format!("missing column {name:?} (have {:?})", self.columns)))
    }

    pub fn column(&self, name: &str) -> Result<Vec<Real>> {
        let j = self.column_index(name)?;
        Ok((0..self.len()).map(|i| self.values[i * self.width() + j]).collect())
    }

    pub fn target_index(&self) -> usize {
        self.column_index(&self.target).expect("target checked at construction")
    }
}

/// Strictly increasing, exactly hourly. Reported rows are `first_line` plus
/// the 0-based index of the offending timestamp.
fn check_hourly(ts: &[NaiveDateTime], first_line: usize) -> Result<()> {
    for (i, pair) in ts.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        let row = first_line + i + 1;
        if step == Duration::zero() {
            return Err(Error::Data {
                row,
                message: format!("duplicate timestamp {}", pair[1]),
            });
        }
        if step < Duration::zero() {
            return Err(Error::Data {
                row,
                message: format!("timestamp {} goes backwards from {}", pair[1], pair[0]),
            });
        }
        if step != Duration::hours(1) {
            return Err(Error::Data {
                row,
                message: format!("gap: expected {} after {}, found {}", pair[0] + Duration::hours(1), pair[0], pair[1]),
            });
        }
    }
    Ok(())
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TS_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Reads an hourly CSV whose header is `timestamp` plus the schema columns
/// (any order). Reported row numbers are file line numbers.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<SeriesTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Dataset(format!("{}: {other:?}", path.display())),
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let ts_col = header
        .iter()
        .position(|h| h == TIMESTAMP_COLUMN)
        .ok_or_else(|| Error::Data {
            row: 1,
            message: format!("header has no {TIMESTAMP_COLUMN:?} column"),
        })?;
    let mut idx = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let j = header.iter().position(|h| h == c).ok_or_else(|| Error::Data {
            row: 1,
            message: format!("header is missing column {c:?} (found {header:?})"),
        })?;
        idx.push(j);
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let cell = |j: usize| rec.get(j).unwrap_or("").trim();
        let ts = parse_timestamp(cell(ts_col)).ok_or_else(|| Error::Data {
            row: line,
            message: format!("unparseable timestamp {:?}", cell(ts_col)),
        })?;
        timestamps.push(ts);
        for (&j, name) in idx.iter().zip(&schema.columns) {
            let v: Real = cell(j).parse().map_err(|_| Error::Data {
                row: line,
                message: format!("column {name:?}: non-numeric value {:?}", cell(j)),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row: line,
                    message: format!("column {name:?}: non-finite value {v}"),
                });
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Dataset(format!("{} holds no data rows", path.display())));
    }
    check_hourly(&timestamps, 2)?;
    SeriesTable::new(timestamps, schema.columns.clone(), values, &schema.target)
}

/// Writes a table in the same layout [`load_csv`] reads.
pub fn write_csv(table: &SeriesTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Dataset(format!("{}: {other:?}", path.display())),
    })?;
    let mut header = vec![TIMESTAMP_COLUMN.to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (i, ts) in table.timestamps.iter().enumerate() {
        let mut rec = vec![ts.format(TS_OUT).to_string()];
        rec.extend(table.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use chrono::NaiveDate;

    use super::*;

    fn start() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(1, 0, 0).unwrap()
    }

    fn write(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn rows(n: usize) -> Vec<String> {
        let mut v = vec!["timestamp,load".to_string()];
        for i in 0..n {
            let ts = start() + Duration::hours(i as i64);
            v.push(format!("{},{}", ts.format(TS_OUT), 100.0 + i as f64));
        }
        v
    }

    #[test]
    fn well_formed_file() {
        let f = write(&rows(100));
        let t = load_csv(f.path(), &Schema::load()).unwrap();
        assert_eq!(t.len(), 100);
        assert_eq!(t.column("load").unwrap()[99], 199.0);
    }

    #[test]
    fn gap_is_reported_with_row() {
        let mut r = rows(10);
        r.remove(5);
        let err = load_csv(write(&r).path(), &Schema::load()).unwrap_err();
        let Error::Data { row, message } = &err else { panic!("{err}") };
        assert_eq!(*row, 6);
        assert!(message.contains("gap") && message.contains("2021-03-01 05:00:00"), "{message}");
    }

    #[test]
    fn duplicate_and_bad_cells() {
        let mut r = rows(10);
        r[4] = r[3].clone();
        let err = load_csv(write(&r).path(), &Schema::load()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let mut r = rows(10);
        r[7] = r[7].replace(",106", ",abc");
        let err = load_csv(write(&r).path(), &Schema::load()).unwrap_err();
        assert!(matches!(err, Error::Data { row: 8, .. }), "{err}");

        let r = vec!["time,load".to_string()];
        assert!(load_csv(write(&r).path(), &Schema::load()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = load_csv(write(&rows(30)).path(), &Schema::load()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&t, out.path()).unwrap();
        assert_eq!(load_csv(out.path(), &Schema::load()).unwrap(), t);
    }
}
