//! Partially observed numeric tables.
//!
//! A [`TabularDataset`] keeps the raw values (missing cells hold `NaN`), a
//! 0/1 observation mask (`1` = observed), and optionally the complete ground
//! truth when the missingness was simulated. All imputation runs happen in
//! z-scored space; [`standardize`] and [`destandardize`] move between the two.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation mask: `1` observed, `0` missing.
pub type Mask = Array2<u8>;

/// Lower bound applied to every column standard deviation.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    values: Array2<f64>,
    mask: Mask,
    truth: Option<Array2<f64>>,
    column_names: Option<Vec<String>>,
}

impl TabularDataset {
    /// Builds a dataset from raw values, deriving the mask from `NaN` cells.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        check_nonempty(values.dim())?;
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::NonFinite("dataset values"));
        }
        let mask = values.mapv(|v| u8::from(!v.is_nan()));
        Ok(Self {
            values,
            mask,
            truth: None,
            column_names: None,
        })
    }

    /// Applies `mask` to a complete matrix; the complete matrix is kept as truth.
    pub fn from_truth_and_mask(truth: Array2<f64>, mask: Mask) -> Result<Self> {
        check_nonempty(truth.dim())?;
        check_shape("mask", truth.dim(), mask.dim())?;
        if truth.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ground truth"));
        }
        check_mask_values(&mask)?;
        let mut values = truth.clone();
        Zip::from(&mut values).and(&mask).for_each(|v, &m| {
            if m == 0 {
                *v = f64::NAN;
            }
        });
        Ok(Self {
            values,
            mask,
            truth: Some(truth),
            column_names: None,
        })
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols() {
            return Err(Error::param(format!(
                "{} column names for {} columns",
                names.len(),
                self.ncols()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn with_truth(mut self, truth: Array2<f64>) -> Result<Self> {
        check_shape("truth", self.values.dim(), truth.dim())?;
        if truth.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ground truth"));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn truth(&self) -> Option<&Array2<f64>> {
        self.truth.as_ref()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 0).count()
    }

    pub fn missing_rate(&self) -> f64 {
        self.missing_count() as f64 / self.mask.len() as f64
    }

    /// Errors with the first column index that has no observed entry.
    pub fn check_observed_columns(&self) -> Result<()> {
        for (d, col) in self.mask.axis_iter(Axis(1)).enumerate() {
            if col.iter().all(|&m| m == 0) {
                return Err(Error::FullyMissingColumn(d));
            }
        }
        Ok(())
    }

    /// Mean of the observed entries of every column.
    pub fn observed_means(&self) -> Result<Array1<f64>> {
        self.check_observed_columns()?;
        let means = Zip::from(self.values.columns())
            .and(self.mask.columns())
            .map_collect(|v, m| {
                let (sum, n) = v
                    .iter()
                    .zip(m.iter())
                    .filter(|(_, &m)| m == 1)
                    .fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1));
                sum / n as f64
            });
        Ok(means)
    }
}

fn check_nonempty(dim: (usize, usize)) -> Result<()> {
    if dim.0 == 0 || dim.1 == 0 {
        return Err(Error::param(format!(
            "dataset must have at least one row and one column, got {}x{}",
            dim.0, dim.1
        )));
    }
    Ok(())
}

pub(crate) fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_mask_values(mask: &Mask) -> Result<()> {
    if mask.iter().any(|&m| m > 1) {
        return Err(Error::param("mask entries must be 0 or 1"));
    }
    Ok(())
}

/// Per-column z-scoring statistics computed from observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl StandardizationStats {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: Array1::zeros(d),
            std: Array1::ones(d),
        }
    }

    /// Observed-only mean and sample standard deviation (`n - 1`), floored at
    /// [`STD_FLOOR`]. A column with a single observation gets the floor.
    pub fn from_observed(values: &Array2<f64>, mask: &Mask) -> Result<Self> {
        check_shape("mask", values.dim(), mask.dim())?;
        let d = values.ncols();
        let mut mean = Array1::zeros(d);
        let mut std = Array1::zeros(d);
        for j in 0..d {
            let observed: Vec<f64> = values
                .column(j)
                .iter()
                .zip(mask.column(j))
                .filter(|(_, &m)| m == 1)
                .map(|(&v, _)| v)
                .collect();
            if observed.is_empty() {
                return Err(Error::FullyMissingColumn(j));
            }
            let n = observed.len() as f64;
            let mu = observed.iter().sum::<f64>() / n;
            let sd = if observed.len() >= 2 {
                let ss: f64 = observed.iter().map(|v| (v - mu).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            mean[j] = mu;
            std[j] = sd.max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.mean.len() != d || self.std.len() != d {
            return Err(Error::Shape {
                context: "standardization stats",
                expected: (1, d),
                found: (1, self.mean.len()),
            });
        }
        Ok(())
    }

    /// `(x - mean) / std` column-wise; `NaN` cells stay `NaN`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = x.clone();
        for (mut col, (&mu, &sd)) in out
            .columns_mut()
            .into_iter()
            .zip(self.mean.iter().zip(self.std.iter()))
        {
            col.mapv_inplace(|v| (v - mu) / sd);
        }
        Ok(out)
    }

    /// `x * std + mean` column-wise.
    pub fn invert(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = x.clone();
        for (mut col, (&mu, &sd)) in out
            .columns_mut()
            .into_iter()
            .zip(self.mean.iter().zip(self.std.iter()))
        {
            col.mapv_inplace(|v| v * sd + mu);
        }
        Ok(out)
    }
}

/// Z-scores observed entries (and the truth, if present) with statistics
/// computed from the observed entries only.
pub fn standardize(ds: &TabularDataset) -> Result<(TabularDataset, StandardizationStats)> {
    let stats = StandardizationStats::from_observed(&ds.values, &ds.mask)?;
    let out = TabularDataset {
        values: stats.apply(&ds.values)?,
        mask: ds.mask.clone(),
        truth: ds.truth.as_ref().map(|t| stats.apply(t)).transpose()?,
        column_names: ds.column_names.clone(),
    };
    Ok((out, stats))
}

pub fn destandardize(ds: &TabularDataset, stats: &StandardizationStats) -> Result<TabularDataset> {
    Ok(TabularDataset {
        values: stats.invert(&ds.values)?,
        mask: ds.mask.clone(),
        truth: ds.truth.as_ref().map(|t| stats.invert(t)).transpose()?,
        column_names: ds.column_names.clone(),
    })
}

/// Observed entries copied verbatim; missing entries set to the observed
/// column mean plus `N(0, noise_scale^2)` noise, drawn row-major.
pub fn initialize_missing(ds: &TabularDataset, seed: u64, noise_scale: f64) -> Result<Array2<f64>> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::param(format!("noise_scale must be >= 0, got {noise_scale}")));
    }
    let means = ds.observed_means()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = ds.values.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        if ds.mask[[i, j]] == 0 {
            let z: f64 = normal.sample(&mut rng);
            *v = means[j] + noise_scale * z;
        }
    }
    Ok(out)
}

/// Tokens accepted as a missing cell in addition to the caller's token.
const MISSING_TOKENS: [&str; 3] = ["", "NaN", "nan"];

/// Reads a comma-separated numeric table.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, missing_token: &str) -> Result<TabularDataset> {
    load_csv_with_delimiter(path, has_header, missing_token, b',')
}

pub fn load_csv_with_delimiter(
    path: impl AsRef<Path>,
    has_header: bool,
    missing_token: &str,
    delimiter: u8,
) -> Result<TabularDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(file);

    let names = if has_header {
        let header = reader.headers()?;
        Some(header.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };

    let mut data = Vec::new();
    let mut width: Option<usize> = names.as_ref().map(Vec::len);
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row,
                expected,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            data.push(parse_cell(cell, missing_token, row, c + 1)?);
        }
        rows += 1;
    }
    let cols = match width {
        Some(w) if rows > 0 && w > 0 => w,
        _ => return Err(Error::EmptyFile(path.to_path_buf())),
    };
    let values = Array2::from_shape_vec((rows, cols), data).expect("rectangular by construction");
    let ds = TabularDataset::from_values(values)?;
    match names {
        Some(n) => ds.with_column_names(n),
        None => Ok(ds),
    }
}

fn parse_cell(cell: &str, missing_token: &str, row: usize, col: usize) -> Result<f64> {
    if cell == missing_token || MISSING_TOKENS.contains(&cell) {
        return Ok(f64::NAN);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            col,
            value: cell.to_owned(),
        }),
    }
}

/// Writes values with `NaN` cells as empty strings. `{}` formatting of `f64`
/// is the shortest representation that parses back to the same bits.
pub fn write_csv(path: impl AsRef<Path>, values: &Array2<f64>, column_names: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    if let Some(names) = column_names {
        writer.write_record(names)?;
    }
    for row in values.rows() {
        writer.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_mask_csv(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for row in mask.rows() {
        let line = row.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_mask_csv(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row: r + 1,
                expected,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let m = match cell {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::Parse {
                        row: r + 1,
                        col: c + 1,
                        value: other.to_owned(),
                    })
                }
            };
            data.push(m);
        }
        rows += 1;
    }
    let cols = match width {
        Some(w) if rows > 0 && w > 0 => w,
        _ => return Err(Error::EmptyFile(path.to_path_buf())),
    };
    Ok(Array2::from_shape_vec((rows, cols), data).expect("rectangular by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_derives_mask_from_empty_cells() {
        let f = write_tmp("1.0,\n,2.0\n");
        let ds = load_csv(f.path(), false, "").unwrap();
        assert_eq!(ds.mask(), &array![[1u8, 0], [0, 1]]);
        assert_eq!(ds.values()[[0, 0]], 1.0);
        assert!(ds.values()[[0, 1]].is_nan());
        assert!(ds.values()[[1, 0]].is_nan());
        assert_eq!(ds.values()[[1, 1]], 2.0);
    }

    #[test]
    fn load_csv_reads_header_and_nan_tokens() {
        let f = write_tmp("a,b\n1.5e0,NaN\nnan,-3\n");
        let ds = load_csv(f.path(), true, "NA").unwrap();
        assert_eq!(ds.column_names().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.missing_count(), 2);
        assert_eq!(ds.values()[[1, 1]], -3.0);
    }

    #[test]
    fn load_csv_reports_bad_cell_position() {
        let f = write_tmp("1.0,xy\n");
        match load_csv(f.path(), false, "") {
            Err(Error::Parse { row, col, value }) => {
                assert_eq!((row, col), (1, 2));
                assert_eq!(value, "xy");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_ragged_and_empty() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(load_csv(f.path(), false, ""), Err(Error::Ragged { row: 2, .. })));
        let f = write_tmp("");
        assert!(matches!(load_csv(f.path(), false, ""), Err(Error::EmptyFile(_))));
        assert!(matches!(load_csv("/nonexistent/x.csv", false, ""), Err(Error::Io { .. })));
    }

    #[test]
    fn csv_round_trip_preserves_values_and_mask() {
        let values = array![[0.1, f64::NAN, -1e-300], [1.0 / 3.0, 2.5e17, f64::NAN]];
        let ds = TabularDataset::from_values(values).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), ds.values(), None).unwrap();
        let back = load_csv(f.path(), false, "").unwrap();
        assert_eq!(back.mask(), ds.mask());
        for (a, b) in back.values().iter().zip(ds.values()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        let mf = tempfile::NamedTempFile::new().unwrap();
        write_mask_csv(mf.path(), ds.mask()).unwrap();
        assert_eq!(&load_mask_csv(mf.path()).unwrap(), ds.mask());
    }

    #[test]
    fn standardize_uses_sample_std_of_observed() {
        let ds = TabularDataset::from_values(array![[1.0], [f64::NAN], [3.0]]).unwrap();
        let (z, stats) = standardize(&ds).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert!((stats.std[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((z.values()[[0, 0]] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((z.values()[[2, 0]] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(z.values()[[1, 0]].is_nan());
    }

    #[test]
    fn standardize_constant_column_hits_floor() {
        let ds = TabularDataset::from_values(array![[5.0], [5.0], [5.0]]).unwrap();
        let (z, stats) = standardize(&ds).unwrap();
        assert_eq!(stats.std[0], STD_FLOOR);
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_rejects_fully_missing_column() {
        let ds = TabularDataset::from_values(array![[1.0, f64::NAN], [2.0, f64::NAN]]).unwrap();
        assert!(matches!(standardize(&ds), Err(Error::FullyMissingColumn(1))));
    }

    #[test]
    fn destandardize_examples() {
        let stats = StandardizationStats {
            mean: array![2.0],
            std: array![1.0],
        };
        let ds = TabularDataset::from_values(array![[-1.0]]).unwrap();
        assert_eq!(destandardize(&ds, &stats).unwrap().values()[[0, 0]], 1.0);

        let x = array![[0.3, -7.0]];
        let ds = TabularDataset::from_values(x.clone()).unwrap();
        let id = StandardizationStats::identity(2);
        assert_eq!(destandardize(&ds, &id).unwrap().values(), &x);
        assert!(matches!(destandardize(&ds, &stats), Err(Error::Shape { .. })));
    }

    #[test]
    fn standardize_round_trip() {
        let values = array![[10.0, -3.0], [f64::NAN, 4.5], [12.5, f64::NAN], [9.0, 1e3]];
        let ds = TabularDataset::from_values(values.clone()).unwrap();
        let (z, stats) = standardize(&ds).unwrap();
        let back = destandardize(&z, &stats).unwrap();
        for (a, b) in back.values().iter().zip(values.iter()) {
            if b.is_nan() {
                assert!(a.is_nan());
            } else {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn initialize_missing_without_noise_uses_means() {
        let ds = TabularDataset::from_values(array![[1.0, f64::NAN], [3.0, 4.0], [f64::NAN, 6.0]]).unwrap();
        let x = initialize_missing(&ds, 7, 0.0).unwrap();
        assert_eq!(x, array![[1.0, 5.0], [3.0, 4.0], [2.0, 6.0]]);
    }

    #[test]
    fn initialize_missing_is_deterministic() {
        let ds = TabularDataset::from_values(array![[1.0, f64::NAN], [f64::NAN, 4.0], [0.0, 6.0]]).unwrap();
        let a = initialize_missing(&ds, 11, 0.1).unwrap();
        let b = initialize_missing(&ds, 11, 0.1).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = initialize_missing(&ds, 12, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn initialize_missing_noise_has_requested_scale() {
        // one observed cell pins the column mean at zero; 10^4 missing cells
        let n = 10_001;
        let mut values = Array2::from_elem((n, 1), f64::NAN);
        values[[0, 0]] = 0.0;
        let ds = TabularDataset::from_values(values).unwrap();
        let x = initialize_missing(&ds, 3, 0.1).unwrap();
        let draws: Vec<f64> = x.iter().skip(1).copied().collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.09..=0.11).contains(&sd), "sample std {sd}");
    }
}
