//! Multivariate time series indexed by rescaled time `t/T`.
//!
//! Row order is time order. There is no timestamp handling and no
//! imputation: a missing or non-numeric cell is a hard error.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A `T x d` block of finite observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    len: usize,
    dim: usize,
    labels: Option<Vec<String>>,
    lag_order: Option<usize>,
}

impl TimeSeries {
    /// Builds a series from row-major values.
    pub fn new(values: Vec<f64>, len: usize, dim: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidSeries(format!(
                "need at least 2 observations, got {len}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidSeries("dimension must be at least 1".into()));
        }
        if values.len() != len * dim {
            return Err(Error::InvalidSeries(format!(
                "expected {} values for a {len}x{dim} series, got {}",
                len * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at row {}, column {}",
                pos / dim + 1,
                pos % dim + 1
            )));
        }
        Ok(Self {
            values,
            len,
            dim,
            labels: None,
            lag_order: None,
        })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(values, len, 1)
    }

    /// Builds a series from equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dim = columns.len();
        if dim == 0 {
            return Err(Error::InvalidSeries("no columns".into()));
        }
        let len = columns[0].len();
        if let Some(bad) = columns.iter().position(|c| c.len() != len) {
            return Err(Error::InvalidSeries(format!(
                "column {} has {} rows, expected {len}",
                bad + 1,
                columns[bad].len()
            )));
        }
        let mut values = Vec::with_capacity(len * dim);
        for t in 0..len {
            values.extend(columns.iter().map(|c| c[t]));
        }
        Self::new(values, len, dim)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Sample size `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Maximum lag when this series was produced by [`embed_lags`].
    pub fn lag_order(&self) -> Option<usize> {
        self.lag_order
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row `t`, 0-based.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator {
        self.values.chunks_exact(self.dim)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// Rescaled time `t/T` of the 1-based row `t`.
    pub fn rescaled_time(&self, t: usize) -> f64 {
        t as f64 / self.len as f64
    }

    /// Applies `f` to every entry. Fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let mut out = Self::new(values, self.len, self.dim)?;
        out.labels = self.labels.clone();
        out.lag_order = self.lag_order;
        Ok(out)
    }
}

/// Lag embedding of a univariate series: row `t` of the output is
/// `(Y_t, Y_{t-1}, ..., Y_{t-p})`. The first `p` rows are dropped, so the
/// result has `T - p` rows and `p + 1` columns.
pub fn embed_lags(series: &TimeSeries, p: usize) -> Result<TimeSeries> {
    if series.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: series.dim(),
        });
    }
    let len = series.len();
    if p >= len {
        return Err(Error::InvalidArgument(format!(
            "lag order {p} must be smaller than the sample size {len}"
        )));
    }
    let y = series.values();
    let out_len = len - p;
    let mut values = Vec::with_capacity(out_len * (p + 1));
    for t in p..len {
        values.extend((0..=p).map(|lag| y[t - lag]));
    }
    let mut out = TimeSeries::new(values, out_len, p + 1)?;
    out.lag_order = Some(p);
    if let Some(labels) = series.labels() {
        let base = &labels[0];
        out.labels = Some((0..=p).map(|lag| format!("{base}_lag{lag}")).collect());
    }
    Ok(out)
}

/// Reverses the time axis: row `t` of the output is row `T + 1 - t` of the input.
pub fn reverse_time(series: &TimeSeries) -> TimeSeries {
    let mut values = Vec::with_capacity(series.values.len());
    for row in series.rows().rev() {
        values.extend_from_slice(row);
    }
    TimeSeries {
        values,
        len: series.len,
        dim: series.dim,
        labels: series.labels.clone(),
        lag_order: series.lag_order,
    }
}

/// Which columns of a CSV file make up the series.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ColumnSelector {
    #[default]
    All,
    /// 0-based column positions.
    Indices(Vec<usize>),
    /// Header names; requires a header line.
    Names(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub columns: ColumnSelector,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            columns: ColumnSelector::All,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, opts, &path.display().to_string())
}

/// Parses comma-delimited UTF-8 text. `source_name` only appears in error messages.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions, source_name: &str) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        row,
        column,
        message,
    };

    let mut records = rdr.records();
    let mut header: Option<Vec<String>> = None;
    let mut line = 0usize;
    if opts.has_header {
        match records.next() {
            Some(rec) => {
                line += 1;
                let rec = rec.map_err(|e| parse_err(line, 1, e.to_string()))?;
                header = Some(rec.iter().map(str::to_string).collect());
            }
            None => return Err(parse_err(1, 1, "empty file".into())),
        }
    }

    let mut width = header.as_ref().map(Vec::len);
    let mut selected: Option<Vec<usize>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();

    for rec in records {
        line += 1;
        let rec = rec.map_err(|e| parse_err(line, 1, e.to_string()))?;
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(parse_err(
                line,
                rec.len().min(expected) + 1,
                format!("ragged row: expected {expected} fields, found {}", rec.len()),
            ));
        }
        if selected.is_none() {
            let s = resolve_columns(&opts.columns, header.as_deref(), expected)
                .map_err(|msg| parse_err(line, 1, msg))?;
            columns = vec![Vec::new(); s.len()];
            selected = Some(s);
        }
        let sel = selected.as_deref().unwrap_or_default();
        for (out, &c) in columns.iter_mut().zip(sel.iter()) {
            let cell = &rec[c];
            if cell.is_empty() {
                return Err(parse_err(line, c + 1, "empty cell".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, c + 1, format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, c + 1, format!("non-finite value {cell:?}")));
            }
            out.push(v);
        }
    }

    let Some(sel) = selected else {
        return Err(parse_err(line.max(1), 1, "no data rows".into()));
    };
    let series = TimeSeries::from_columns(&columns)?;
    match header {
        Some(h) => series.with_labels(sel.iter().map(|&c| h[c].clone()).collect()),
        None => Ok(series),
    }
}

fn resolve_columns(
    selector: &ColumnSelector,
    header: Option<&[String]>,
    width: usize,
) -> std::result::Result<Vec<usize>, String> {
    match selector {
        ColumnSelector::All => Ok((0..width).collect()),
        ColumnSelector::Indices(idx) => {
            if let Some(&bad) = idx.iter().find(|&&c| c >= width) {
                return Err(format!("column index {bad} out of range (width {width})"));
            }
            if idx.is_empty() {
                return Err("empty column selection".into());
            }
            Ok(idx.clone())
        }
        ColumnSelector::Names(names) => {
            let header = header.ok_or("column names require a header line")?;
            names
                .iter()
                .map(|n| {
                    header
                        .iter()
                        .position(|h| h == n)
                        .ok_or_else(|| format!("no column named {n:?}"))
                })
                .collect()
        }
    }
}

/// Writes the series with 17 significant digits, so that reading it back
/// reproduces every value bit for bit.
pub fn write_csv<W: Write>(series: &TimeSeries, writer: W, header: bool) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    if header {
        let names: Vec<String> = match series.labels() {
            Some(l) => l.to_vec(),
            None => (1..=series.dim()).map(|k| format!("x{k}")).collect(),
        };
        writeln!(w, "{}", names.join(","))?;
    }
    for row in series.rows() {
        let cells: Vec<String> = row.iter().map(|v| format_full(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

pub fn save_csv(series: &TimeSeries, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_csv(series, file, header).map_err(io_err)
}

/// 17 significant digits in scientific notation.
pub fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_short_and_non_finite() {
        assert!(TimeSeries::univariate(vec![1.0]).is_err());
        assert!(TimeSeries::univariate(vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeries::new(vec![1.0; 5], 2, 2).is_err());
    }

    #[test]
    fn rescaled_time_ends_at_one() {
        let s = uni(&[1.0, 2.0, 4.0, 8.0]);
        assert_eq!(s.rescaled_time(1), 0.25);
        assert_eq!(s.rescaled_time(4), 1.0);
    }

    #[test]
    fn embed_lags_shifts() {
        let s = uni(&[1.0, 2.0, 3.0, 4.0]);
        let e = embed_lags(&s, 1).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e.dim(), 2);
        assert_eq!(e.values(), &[2.0, 1.0, 3.0, 2.0, 4.0, 3.0]);
        assert_eq!(e.lag_order(), Some(1));
    }

    #[test]
    fn embed_lags_zero_is_identity() {
        let s = uni(&[0.5, -1.0, 3.25]);
        let e = embed_lags(&s, 0).unwrap();
        assert_eq!(e.values(), s.values());
        assert_eq!((e.len(), e.dim()), (3, 1));
    }

    #[test]
    fn embed_lags_errors() {
        let s = uni(&[1.0, 2.0, 3.0]);
        assert!(embed_lags(&s, 3).is_err());
        let m = TimeSeries::new(vec![1.0; 6], 3, 2).unwrap();
        assert!(matches!(
            embed_lags(&m, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reverse_small() {
        let s = uni(&[1.0, 2.0, 3.0]);
        assert_eq!(reverse_time(&s).values(), &[3.0, 2.0, 1.0]);
        let m = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(reverse_time(&m).values(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn csv_three_rows() {
        let text = "1.0\n2.0\n3.0\n";
        let opts = CsvOptions {
            has_header: false,
            columns: ColumnSelector::All,
        };
        let s = read_csv(text.as_bytes(), &opts, "mem").unwrap();
        assert_eq!((s.len(), s.dim()), (3, 1));
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_blank_cell_names_row() {
        let text = "a,b\n1,2\n3,\n5,6\n";
        let err = read_csv(text.as_bytes(), &CsvOptions::default(), "mem").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_and_non_numeric() {
        let opts = CsvOptions::default();
        let err = read_csv("a,b\n1,2\n3\n".as_bytes(), &opts, "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
        let err = read_csv("a\n1\nfoo\n".as_bytes(), &opts, "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, column: 1, .. }), "{err}");
    }

    #[test]
    fn csv_column_selection() {
        let text = "a,b,c\n1,2,3\n4,5,6\n";
        let by_name = CsvOptions {
            has_header: true,
            columns: ColumnSelector::Names(vec!["c".into(), "a".into()]),
        };
        let s = read_csv(text.as_bytes(), &by_name, "mem").unwrap();
        assert_eq!(s.values(), &[3.0, 1.0, 6.0, 4.0]);
        assert_eq!(s.labels().unwrap(), &["c".to_string(), "a".to_string()]);

        let by_index = CsvOptions {
            has_header: true,
            columns: ColumnSelector::Indices(vec![1]),
        };
        let s = read_csv(text.as_bytes(), &by_index, "mem").unwrap();
        assert_eq!(s.values(), &[2.0, 5.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/x.csv", &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
