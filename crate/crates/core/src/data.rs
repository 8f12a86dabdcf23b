//! CSV ingestion, global scaling, chronological splits and window batching.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Row-major `rows × channels` value matrix with its column names.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    pub columns: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    pub values: Vec<f64>,
    pub rows: usize,
    pub channels: usize,
}

impl TimeSeriesTable {
    pub fn new(columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let channels = columns.len();
        if channels == 0 || !values.len().is_multiple_of(channels) {
            return Err(Error::Data(format!(
                "{} values do not fill {channels} columns",
                values.len()
            )));
        }
        Ok(TimeSeriesTable {
            rows: values.len() / channels,
            columns,
            timestamps: None,
            values,
            channels,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.channels..(r + 1) * self.channels]
    }

    pub fn rows_slice(&self, range: Range<usize>) -> &[f64] {
        &self.values[range.start * self.channels..range.end * self.channels]
    }
}

/// Reads a CSV with a header row. With `has_timestamp_col` the first column is
/// kept as text and excluded from the values.
pub fn load_csv(path: &Path, has_timestamp_col: bool) -> Result<TimeSeriesTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let skip = usize::from(has_timestamp_col);
    if header.len() <= skip {
        return Err(Error::Data(format!("{}: no value columns in header", path.display())));
    }
    let columns: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
    let width = header.len();

    let mut values = Vec::new();
    let mut stamps = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        // header is line 1
        let row = i + 2;
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.into(),
                row,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if has_timestamp_col {
            stamps.push(rec[0].to_string());
        }
        for (j, cell) in rec.iter().enumerate().skip(skip) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.into(),
                row,
                col: j + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    row,
                    col: j + 1,
                    msg: format!("missing or non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let mut table = TimeSeriesTable::new(columns, values)?;
    table.timestamps = has_timestamp_col.then_some(stamps);
    Ok(table)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::File {
                path: path.into(),
                source,
            },
            _ => unreachable!(),
        },
        _ => Error::Data(format!("{}: {e}", path.display())),
    }
}

/// Per-channel z-scoring statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on `rows` of `table` (population standard deviation).
    pub fn fit(table: &TimeSeriesTable, rows: Range<usize>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Data("cannot fit a scaler on an empty split".into()));
        }
        let v = table.channels;
        let mut mean = vec![0.0; v];
        for r in rows.clone() {
            for (m, x) in mean.iter_mut().zip(table.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; v];
        for r in rows {
            for ((s, x), m) in var.iter_mut().zip(table.row(r)).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        if let Some(c) = std.iter().position(|&s| s == 0.0) {
            return Err(Error::Data(format!(
                "channel {:?} has zero variance in the training split",
                table.columns[c]
            )));
        }
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, table: &TimeSeriesTable) -> TimeSeriesTable {
        let v = table.channels;
        let values = table
            .values
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % v]) / self.std[i % v])
            .collect();
        TimeSeriesTable {
            values,
            ..table.clone()
        }
    }

    /// Maps normalized values of channel `c` back to data units.
    pub fn inverse(&self, c: usize, x: f64) -> f64 {
        x * self.std[c] + self.mean[c]
    }
}

/// Normalizes the whole table with statistics from `train_rows` only.
pub fn normalize_global(table: &TimeSeriesTable, train_rows: Range<usize>) -> Result<(TimeSeriesTable, Scaler)> {
    let scaler = Scaler::fit(table, train_rows)?;
    Ok((scaler.transform(table), scaler))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    /// 6:2:2 for the ETT family, 7:1:2 otherwise.
    pub fn for_dataset(name: &str) -> Self {
        if name.to_ascii_uppercase().starts_with("ETT") {
            SplitSpec {
                train: 0.6,
                val: 0.2,
                test: 0.2,
            }
        } else {
            SplitSpec {
                train: 0.7,
                val: 0.1,
                test: 0.2,
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be in [0, 1] and sum to 1, got {}:{}:{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// Row ranges of the three splits. `val` and `test` start `L` rows early so
/// their first window has a full look-back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Rows owned by each split, before the look-back extension.
    pub core: [usize; 3],
}

pub fn make_splits(rows: usize, spec: &SplitSpec, look_back: usize, horizon: usize) -> Result<Splits> {
    spec.validate()?;
    let n_train = (rows as f64 * spec.train + 1e-9).floor() as usize;
    let n_val = ((rows as f64 * spec.val + 1e-9).floor() as usize).min(rows - n_train);
    let n_test = rows - n_train - n_val;
    let extend = |start: usize, len: usize| {
        if len == 0 {
            start..start
        } else {
            start.saturating_sub(look_back)..start + len
        }
    };
    let splits = Splits {
        train: 0..n_train,
        val: extend(n_train, n_val),
        test: extend(n_train + n_val, n_test),
        core: [n_train, n_val, n_test],
    };
    let need = look_back + horizon;
    for (name, r) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        if (name == "train" || !r.is_empty()) && r.len() < need {
            return Err(Error::Data(format!(
                "{name} split has {} rows, fewer than look-back + horizon = {need}",
                r.len()
            )));
        }
    }
    Ok(splits)
}

/// Number of stride-1 windows in a view of `len` rows.
pub fn window_count(len: usize, look_back: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(look_back + horizon)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `(L, V)`.
    pub x: Tensor,
    /// `(T, V)`.
    pub y: Tensor,
}

/// Stride-1 windows over a contiguous block of normalized rows.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    values: Vec<f64>,
    /// Absolute row index of `values[0]` in the source table.
    pub first_row: usize,
    pub channels: usize,
    pub look_back: usize,
    pub horizon: usize,
}

impl WindowDataset {
    pub fn new(table: &TimeSeriesTable, rows: Range<usize>, look_back: usize, horizon: usize) -> Result<Self> {
        if look_back == 0 || horizon == 0 {
            return Err(Error::Config("look-back and horizon must be positive".into()));
        }
        if rows.len() < look_back + horizon {
            return Err(Error::Data(format!(
                "view of {} rows is shorter than look-back + horizon = {}",
                rows.len(),
                look_back + horizon
            )));
        }
        Ok(WindowDataset {
            values: table.rows_slice(rows.clone()).to_vec(),
            first_row: rows.start,
            channels: table.channels,
            look_back,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        window_count(self.values.len() / self.channels, self.look_back, self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absolute row ranges `(x_rows, y_rows)` of window `i`.
    pub fn rows_of(&self, i: usize) -> (Range<usize>, Range<usize>) {
        let s = self.first_row + i;
        let mid = s + self.look_back;
        (s..mid, mid..mid + self.horizon)
    }

    fn slice(&self, start: usize, len: usize) -> &[f64] {
        &self.values[start * self.channels..(start + len) * self.channels]
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let v = self.channels;
        let x = self.slice(i, self.look_back).to_vec();
        let y = self.slice(i + self.look_back, self.horizon).to_vec();
        WindowSample {
            x: Tensor::new([self.look_back, v], x).expect("window shape"),
            y: Tensor::new([self.horizon, v], y).expect("window shape"),
        }
    }

    /// Stacks the given windows into `x: (B, L, V)` and `y: (B, T, V)`.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(indices.len() * self.look_back * self.channels);
        let mut y = Vec::with_capacity(indices.len() * self.horizon * self.channels);
        for &i in indices {
            x.extend_from_slice(self.slice(i, self.look_back));
            y.extend_from_slice(self.slice(i + self.look_back, self.horizon));
        }
        let b = indices.len();
        Batch {
            x: Tensor::new([b, self.look_back, self.channels], x).expect("batch shape"),
            y: Tensor::new([b, self.horizon, self.channels], y).expect("batch shape"),
            indices: indices.to_vec(),
        }
    }

    /// Batches in a fresh shuffled order (training) or in order (evaluation).
    pub fn batches(&self, batch_size: usize, shuffle: Option<&mut Rng>) -> Batches<'_> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(rng) = shuffle {
            rng.shuffle(&mut order);
        }
        Batches {
            data: self,
            order,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    /// Window indices in the order they were stacked.
    pub indices: Vec<usize>,
}

pub struct Batches<'a> {
    data: &'a WindowDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.data.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(b)
    }
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub sample_index: usize,
    pub channel: usize,
    pub step: usize,
    pub y_true: Option<f64>,
    pub y_pred: f64,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Records for a `(B, T, V)` prediction block whose first window has index `offset`.
pub fn prediction_records(offset: usize, y_true: Option<&Tensor>, y_pred: &Tensor) -> Vec<PredictionRecord> {
    let [b, t, v] = *y_pred.shape() else {
        panic!("predictions must be (B, T, V)");
    };
    let mut out = Vec::with_capacity(b * t * v);
    for bi in 0..b {
        for c in 0..v {
            for s in 0..t {
                let k = (bi * t + s) * v + c;
                out.push(PredictionRecord {
                    sample_index: offset + bi,
                    channel: c,
                    step: s,
                    y_true: y_true.map(|y| y.data()[k]),
                    y_pred: y_pred.data()[k],
                });
            }
        }
    }
    out
}

/// Sum of two sinusoids per channel with channel-dependent periods and phases.
pub fn sinusoid_table(rows: usize, channels: usize) -> TimeSeriesTable {
    let values = (0..rows * channels)
        .map(|i| {
            let (t, c) = ((i / channels) as f64, (i % channels) as f64);
            (2.0 * std::f64::consts::PI * t / (24.0 + 4.0 * c) + 0.5 * c).sin()
                + 0.5 * (2.0 * std::f64::consts::PI * t / (7.0 + c) + c).cos()
        })
        .collect();
    let columns = (0..channels).map(|c| format!("ch{c}")).collect();
    TimeSeriesTable::new(columns, values).expect("sinusoid table")
}
