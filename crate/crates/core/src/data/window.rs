use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataKind, SeriesTable, WIND_KNOWN_AHEAD};
use crate::error::{Error, Result};
use crate::tensor::{Array, Real};

/// Window length, forecast horizon and the feature columns that are known
/// ahead of time (shifted forward by the horizon).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub horizon: usize,
    #[serde(default)]
    pub known_ahead: Vec<usize>,
}

impl WindowSpec {
    /// 168 x 3 load windows or 72 x 9 wind windows, both 24 h ahead.
    pub fn for_kind(kind: DataKind) -> Self {
        match kind {
            DataKind::Load => WindowSpec {
                window: 168,
                horizon: 24,
                known_ahead: vec![],
            },
            DataKind::Wind => WindowSpec {
                window: 72,
                horizon: 24,
                known_ahead: WIND_KNOWN_AHEAD.to_vec(),
            },
        }
    }

    /// Rows spanned by one sample, inputs through target.
    pub fn span(&self) -> usize {
        self.window + self.horizon
    }
}

/// Input windows `[S, W, F]` with their scalar targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Array,
    pub targets: Vec<Real>,
    /// Table row of each sample's first input row.
    pub starts: Vec<usize>,
    /// Table row of each sample's target.
    pub target_rows: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// `(window, features)`
    pub fn sample_shape(&self) -> (usize, usize) {
        (self.inputs.shape()[1], self.inputs.shape()[2])
    }

    pub fn select(&self, idx: &[usize]) -> WindowedDataset {
        WindowedDataset {
            inputs: self.inputs.gather_outer(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
            target_rows: idx.iter().map(|&i| self.target_rows[i]).collect(),
        }
    }

    /// Inputs and targets of a batch of sample indices.
    pub fn batch(&self, idx: &[usize]) -> (Array, Array) {
        (self.inputs.gather_outer(idx), Array::vector(idx.iter().map(|&i| self.targets[i]).collect()))
    }
}

/// Every stride-1 window of `table`. Sample `i` reads rows `i..i+W` (known-ahead
/// columns from rows `i+h..i+h+W`) and targets row `i+W-1+h`.
pub fn make_windows(table: &SeriesTable, spec: &WindowSpec) -> Result<WindowedDataset> {
    let (w, h, f) = (spec.window, spec.horizon, table.width());
    if w == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if table.len() < spec.span() {
        return Err(Error::Dataset(format!(
            "table has {} rows; a window of {w} with horizon {h} needs at least {}",
            table.len(),
            spec.span()
        )));
    }
    if let Some(&c) = spec.known_ahead.iter().find(|&&c| c >= f) {
        return Err(Error::InvalidArgument(format!("known-ahead column {c} outside {f} columns")));
    }
    let mut ahead = vec![false; f];
    for &c in &spec.known_ahead {
        ahead[c] = true;
    }
    let target = table.target_index();
    let count = table.len() - w - h + 1;
    let mut data = Vec::with_capacity(count * w * f);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        for t in 0..w {
            for (c, &shift) in ahead.iter().enumerate() {
                let row = i + t + if shift { h } else { 0 };
                data.push(table.values[row * f + c]);
            }
        }
        targets.push(table.values[(i + w - 1 + h) * f + target]);
    }
    Ok(WindowedDataset {
        inputs: Array::from_vec(&[count, w, f], data)?,
        targets,
        starts: (0..count).collect(),
        target_rows: (0..count).map(|i| i + w - 1 + h).collect(),
    })
}

/// Chronological row regions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regions {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Load: first 75 % of rows train, rest test. Wind: last 120 rows test.
/// The final 15 % of the train portion is carved out for validation.
pub fn split_regions(rows: usize, kind: DataKind) -> Result<Regions> {
    let train_end = match kind {
        DataKind::Load => rows * 3 / 4,
        DataKind::Wind => rows.checked_sub(120).ok_or_else(|| Error::Dataset(format!("{rows} rows cannot hold a 120-row test region")))?,
    };
    let val = (train_end * 15 + 50) / 100;
    Ok(Regions {
        train: 0..train_end - val,
        validation: train_end - val..train_end,
        test: train_end..rows,
    })
}

/// Per-feature min-max scaling to [0, 1] and target z-scoring, both from
/// training rows only. Constant columns pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_min: Vec<Real>,
    pub feature_max: Vec<Real>,
    pub target_mean: Real,
    pub target_std: Real,
}

impl NormStats {
    pub fn from_rows(table: &SeriesTable, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("no training rows for normalisation statistics".into()));
        }
        let f = table.width();
        let mut lo = vec![Real::INFINITY; f];
        let mut hi = vec![Real::NEG_INFINITY; f];
        for r in rows.clone() {
            for (c, &v) in table.row(r).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        for c in 0..f {
            if lo[c] == hi[c] {
                log::warn!("feature {:?} is constant on the training rows; passing it through unscaled", table.columns[c]);
            }
        }
        let y: Vec<Real> = table.column(&table.target)?[rows].to_vec();
        let n = y.len() as Real;
        let mean = y.iter().sum::<Real>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
        let mut std = var.sqrt();
        if std == 0.0 {
            log::warn!("target is constant on the training rows; leaving its scale unchanged");
            std = 1.0;
        }
        Ok(NormStats {
            feature_min: lo,
            feature_max: hi,
            target_mean: mean,
            target_std: std,
        })
    }

    fn scale_feature(&self, c: usize, v: Real) -> Real {
        let (lo, hi) = (self.feature_min[c], self.feature_max[c]);
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            v
        }
    }

    pub fn normalize(&self, ds: &mut WindowedDataset) {
        let f = self.feature_min.len();
        for (k, v) in ds.inputs.data_mut().iter_mut().enumerate() {
            *v = self.scale_feature(k % f, *v);
        }
        for y in &mut ds.targets {
            *y = self.normalize_target(*y);
        }
    }

    pub fn normalize_target(&self, y: Real) -> Real {
        (y - self.target_mean) / self.target_std
    }

    pub fn denormalize(&self, y: Real) -> Real {
        y * self.target_std + self.target_mean
    }

    pub fn denormalize_all(&self, y: &[Real]) -> Vec<Real> {
        y.iter().map(|&v| self.denormalize(v)).collect()
    }
}

/// Normalised train / validation / test windows of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
    pub stats: NormStats,
    pub regions: Regions,
    pub spec: WindowSpec,
}

impl PreparedData {
    /// `(time, channels)` of one input window.
    pub fn input_shape(&self) -> crate::arch::Shape {
        let (w, f) = self.train.sample_shape();
        crate::arch::Shape::new(w, f)
    }
}

fn inside(ds: &WindowedDataset, region: &Range<usize>) -> Vec<usize> {
    (0..ds.len())
        .filter(|&i| ds.starts[i] >= region.start && ds.target_rows[i] < region.end)
        .collect()
}

/// Windows, splits and normalises a feature table. A sample belongs to a
/// split only when every row it reads lies inside that split's region.
pub fn prepare(table: &SeriesTable, spec: &WindowSpec, kind: DataKind) -> Result<PreparedData> {
    let regions = split_regions(table.len(), kind)?;
    let all = make_windows(table, spec)?;
    let pick = |r: &Range<usize>, name: &str| -> Result<WindowedDataset> {
        let idx = inside(&all, r);
        if idx.is_empty() {
            return Err(Error::Dataset(format!(
                "{name} region rows {}..{} ({} rows) cannot hold one {}-row sample",
                r.start,
                r.end,
                r.len(),
                spec.span()
            )));
        }
        Ok(all.select(&idx))
    };
    let mut train = pick(&regions.train, "train")?;
    let mut validation = pick(&regions.validation, "validation")?;
    let mut test = pick(&regions.test, "test")?;
    let stats = NormStats::from_rows(table, regions.train.clone())?;
    stats.normalize(&mut train);
    stats.normalize(&mut validation);
    stats.normalize(&mut test);
    Ok(PreparedData {
        train,
        validation,
        test,
        stats,
        regions,
        spec: spec.clone(),
    })
}
