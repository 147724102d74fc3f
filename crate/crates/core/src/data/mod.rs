//! Series ingestion, preprocessing, windowing and evaluation splits.

mod preprocess;
mod synth;
mod window;

use std::fs;
use std::path::{Path, PathBuf};

pub use preprocess::{
    impute_mean, quantile_linear, remove_outliers_iqr, standardize, PreprocessStats, IQR_MULTIPLIER,
    STD_FLOOR,
};
pub use synth::{synth_generate, Harmonic, SynthOutput, SynthSpec};
pub use window::{
    make_windows, prepare, split_protocol1, split_protocol2, Prepared, PipelineSpec, SeriesInfo, Split,
    SplitSpec, Window, WindowedDataset,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multivariate series: `M` named variables over `T` steps, with a missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub id: String,
    pub names: Vec<String>,
    values: Tensor,
    missing: Vec<bool>,
}

impl RawSeries {
    /// `values` is `[M, T]`; `missing` is row-major over the same grid.
    /// Missing cells may hold any finite placeholder.
    pub fn new(id: impl Into<String>, names: Vec<String>, values: Tensor, missing: Vec<bool>) -> Result<Self> {
        if values.rank() != 2 || values.shape()[0] != names.len() || missing.len() != values.len() {
            return Err(Error::dim("RawSeries::new", values.shape(), &[names.len(), missing.len()]));
        }
        if values.shape()[1] == 0 || names.is_empty() {
            return Err(Error::Domain("a series needs at least one variable and one step".into()));
        }
        Ok(Self {
            id: id.into(),
            names,
            values,
            missing,
        })
    }

    pub fn from_values(id: impl Into<String>, values: Tensor) -> Result<Self> {
        let m = values.shape().first().copied().unwrap_or(0);
        let names = (0..m).map(|i| format!("v{i}")).collect();
        let missing = vec![false; values.len()];
        Self::new(id, names, values, missing)
    }

    pub fn variables(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn value(&self, var: usize, step: usize) -> f64 {
        self.values.data()[var * self.len() + step]
    }

    pub fn is_missing(&self, var: usize, step: usize) -> bool {
        self.missing[var * self.len() + step]
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub(crate) fn set_missing(&mut self, var: usize, step: usize) {
        let len = self.len();
        self.missing[var * len + step] = true;
    }

    pub(crate) fn set_value(&mut self, var: usize, step: usize, value: f64) {
        let len = self.len();
        self.values.data_mut()[var * len + step] = value;
    }

    pub(crate) fn clear_missing(&mut self) {
        self.missing.fill(false);
    }

    /// The observed values of `var` in `range`.
    pub(crate) fn observed(&self, var: usize, range: std::ops::Range<usize>) -> impl Iterator<Item = f64> + '_ {
        range.filter(move |&s| !self.is_missing(var, s)).map(move |s| self.value(var, s))
    }
}

fn is_timestamp_header(h: &str) -> bool {
    h.trim().eq_ignore_ascii_case("timestamp")
}

/// Reads a CSV with a header row of variable names. A leading timestamp column
/// (header `timestamp`, or a non-numeric first data cell) is skipped. Empty cells
/// become missing entries.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        records.push((line, rec));
    }
    let (_, header) = records
        .first()
        .ok_or_else(|| parse_err(1, "empty file: expected a header row".into()))?;
    let width = header.len();
    let skip_first = width > 0
        && (is_timestamp_header(&header[0])
            || records
                .get(1)
                .map(|(_, r)| r.get(0).is_some_and(|c| !c.is_empty() && c.parse::<f64>().is_err()))
                .unwrap_or(false));
    let names: Vec<String> = header.iter().skip(usize::from(skip_first)).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(parse_err(1, "no variable columns".into()));
    }
    let rows = &records[1..];
    if rows.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let (m, t) = (names.len(), rows.len());
    let mut values = vec![0.0; m * t];
    let mut missing = vec![false; m * t];
    for (s, (line, rec)) in rows.iter().enumerate() {
        if rec.len() != width {
            return Err(parse_err(
                *line,
                format!("row {line} has {} fields, header has {width}", rec.len()),
            ));
        }
        for (i, cell) in rec.iter().skip(usize::from(skip_first)).enumerate() {
            if cell.is_empty() {
                missing[i * t + s] = true;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(*line, format!("row {line}: cannot parse `{cell}` as a number")))?;
            if !v.is_finite() {
                missing[i * t + s] = true;
                continue;
            }
            values[i * t + s] = v;
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RawSeries::new(id, names, Tensor::from_parts(vec![m, t], values), missing)
}

/// Loads every `.csv` in a directory (sorted by file name), or one file.
pub fn load_path(path: impl AsRef<Path>) -> Result<Vec<RawSeries>> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![load_csv(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no .csv files found", path.display())));
    }
    files.iter().map(load_csv).collect()
}

/// Writes a series as CSV (header of names, one row per step). Missing cells are empty.
pub fn write_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(&series.names).map_err(io)?;
    let mut row = Vec::with_capacity(series.variables());
    for s in 0..series.len() {
        row.clear();
        for i in 0..series.variables() {
            row.push(if series.is_missing(i, s) {
                String::new()
            } else {
                format!("{}", series.value(i, s))
            });
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_two_variables_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "a,b\n1,2\n3,4\n5,6\n");
        let s = load_csv(&p).unwrap();
        assert_eq!(s.values().shape(), &[2, 3]);
        assert_eq!(s.names, ["a", "b"]);
        assert_eq!(s.value(1, 2), 6.0);
        assert_eq!(s.id, "s");
    }

    #[test]
    fn empty_cell_is_masked() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "a,b\n1,2\n3,\n5,6\n");
        let s = load_csv(&p).unwrap();
        assert_eq!(s.missing_count(), 1);
        assert!(s.is_missing(1, 1));
    }

    #[test]
    fn ragged_row_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "a,b\n1,2\n3\n5,6\n");
        let err = load_csv(&p).unwrap_err();
        match &err {
            Error::Parse { line, .. } => assert_eq!(*line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 3"));
    }

    #[test]
    fn timestamp_column_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let named = write(&dir, "a.csv", "timestamp,x\n0,1.5\n1,2.5\n");
        assert_eq!(load_csv(&named).unwrap().names, ["x"]);
        let dated = write(&dir, "b.csv", "date,x,y\n2020-01-01,1,2\n2020-01-02,3,4\n");
        let s = load_csv(&dated).unwrap();
        assert_eq!(s.names, ["x", "y"]);
        assert_eq!(s.value(0, 1), 3.0);
    }

    #[test]
    fn zero_variables_and_bad_cells_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let only_ts = write(&dir, "a.csv", "timestamp\n0\n1\n");
        assert!(matches!(load_csv(&only_ts), Err(Error::Parse { .. })));
        let bad = write(&dir, "b.csv", "x,y\n1,2\n3,oops\n");
        assert!(matches!(load_csv(&bad), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(load_csv(dir.path().join("nope.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn directory_loading_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = Tensor::new([2, 3], vec![0.1, 1.0 / 3.0, -2.5, 7.0, 8.0, 9.0]).unwrap();
        let mut s = RawSeries::from_values("p1", values).unwrap();
        s.set_missing(1, 0);
        write_csv(&s, dir.path().join("p1.csv")).unwrap();
        write_csv(&s, dir.path().join("p0.csv")).unwrap();
        let all = load_path(dir.path()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].id, "p0");
        assert_eq!(all[1].value(0, 1), 1.0 / 3.0);
        assert!(all[1].is_missing(1, 0));
    }
}
