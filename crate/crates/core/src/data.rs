//! Data sets, standardisation, prediction grids over the data cube and a
//! linear discriminant classifier to fill them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TourError};

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 2_000_000;

/// Default grid margin as a fraction of each variable's range.
pub const DEFAULT_GRID_MARGIN: f64 = 0.05;

/// Tolerance when matching a prediction file's frame against a data set.
pub const FRAME_TOL: f64 = 1e-6;

const MISSING: [&str; 6] = ["", "NA", "NaN", "nan", "null", "NULL"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub mean: f64,
    pub sd: f64,
}

/// `N x p` numeric data with optional group labels.
///
/// `group_index[i]` is 1-based and indexes `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub values: DMatrix<f64>,
    pub var_names: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub group_index: Option<Vec<usize>>,
    pub class_names: Vec<String>,
    /// Maps standardised values back to the original units:
    /// `original = mean + sd · value`.
    pub scale_info: Option<Vec<ScaleInfo>>,
    pub dropped_rows: usize,
}

impl DataSet {
    /// Unlabelled data set from a matrix.
    pub fn from_matrix(values: DMatrix<f64>, var_names: Vec<String>) -> Result<Self> {
        if var_names.len() != values.ncols() {
            return Err(TourError::DimensionMismatch {
                what: "variable names",
                expected: values.ncols(),
                actual: var_names.len(),
            });
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(TourError::EmptyData);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TourError::DomainError("values must be finite".into()));
        }
        Ok(DataSet {
            values,
            var_names,
            labels: None,
            group_index: None,
            class_names: Vec::new(),
            scale_info: None,
            dropped_rows: 0,
        })
    }

    /// Attaches labels; group indices follow the sorted distinct labels.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(TourError::DimensionMismatch {
                what: "labels",
                expected: self.n(),
                actual: labels.len(),
            });
        }
        let (class_names, index) = encode_labels(&labels);
        self.labels = Some(labels);
        self.group_index = Some(index);
        self.class_names = class_names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_min(&self) -> Vec<f64> {
        self.values
            .column_iter()
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }

    pub fn column_max(&self) -> Vec<f64> {
        self.values
            .column_iter()
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Per-variable (mean, sd) of the frame the values live in; identity
    /// when the data was never standardised.
    pub fn frame(&self) -> Vec<ScaleInfo> {
        self.scale_info
            .clone()
            .unwrap_or_else(|| vec![ScaleInfo { mean: 0.0, sd: 1.0 }; self.p()])
    }
}

fn encode_labels(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut names: Vec<String> = labels.to_vec();
    names.sort();
    names.dedup();
    let lookup: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i + 1))
        .collect();
    let index = labels.iter().map(|l| lookup[l.as_str()]).collect();
    (names, index)
}

/// Which columns of a CSV carry labels rather than values.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    /// Label column by name. When `None` the last column is used if it
    /// holds any non-numeric value.
    pub label_column: Option<String>,
    pub group_index_column: Option<String>,
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            label_column: None,
            group_index_column: None,
            delimiter: b',',
        }
    }
}

fn is_missing(token: &str) -> bool {
    MISSING.contains(&token.trim())
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<DataSet> {
    let file = File::open(path.as_ref())
        .map_err(|e| TourError::Io(format!("{}: {e}", path.as_ref().display())))?;
    ingest_reader(file, schema)
}

/// Reads a header row and numeric columns; rows with any missing value are
/// dropped and counted in `dropped_rows`.
pub fn ingest_reader(reader: impl Read, schema: &CsvSchema) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(e, i + 2))?;
        if rec.len() != header.len() {
            return Err(TourError::ParseError {
                row: i + 2,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        records.push(rec);
    }

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TourError::ParseError {
                row: 1,
                column: 0,
                message: format!("no column named '{name}'"),
            })
    };
    let group_col = schema.group_index_column.as_deref().map(find).transpose()?;
    let label_col = match schema.label_column.as_deref() {
        Some(name) => Some(find(name)?),
        None => {
            let last = header.len().checked_sub(1).filter(|&l| Some(l) != group_col);
            last.filter(|&l| {
                records
                    .iter()
                    .any(|r| !is_missing(&r[l]) && r[l].parse::<f64>().is_err())
            })
        }
    };
    let numeric: Vec<usize> = (0..header.len())
        .filter(|&j| Some(j) != label_col && Some(j) != group_col)
        .collect();
    if numeric.is_empty() {
        return Err(TourError::EmptyData);
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut dropped = 0;
    'rows: for (i, rec) in records.iter().enumerate() {
        let row_no = i + 2;
        let mut row = Vec::with_capacity(numeric.len());
        for &j in &numeric {
            let token = &rec[j];
            if is_missing(token) {
                dropped += 1;
                continue 'rows;
            }
            let v: f64 = token.parse().map_err(|_| TourError::ParseError {
                row: row_no,
                column: j + 1,
                message: format!("'{token}' is not a number"),
            })?;
            if !v.is_finite() {
                dropped += 1;
                continue 'rows;
            }
            row.push(v);
        }
        if let Some(l) = label_col {
            if is_missing(&rec[l]) {
                dropped += 1;
                continue;
            }
            labels.push(rec[l].to_owned());
        }
        if let Some(g) = group_col {
            let idx: usize = rec[g].parse().map_err(|_| TourError::ParseError {
                row: row_no,
                column: g + 1,
                message: format!("'{}' is not a group index", &rec[g]),
            })?;
            groups.push(idx);
        }
        values.extend(row);
    }
    let n = values.len() / numeric.len();
    if n == 0 {
        return Err(TourError::EmptyData);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }

    let mut ds = DataSet::from_matrix(
        DMatrix::from_row_slice(n, numeric.len(), &values),
        numeric.iter().map(|&j| header[j].clone()).collect(),
    )?;
    ds.dropped_rows = dropped;
    if label_col.is_some() {
        ds = ds.with_labels(labels)?;
        if group_col.is_some() {
            ds = apply_group_index(ds, groups)?;
        }
    } else if group_col.is_some() {
        let labels = groups.iter().map(|g| g.to_string()).collect();
        ds = apply_group_index(ds.with_labels(labels)?, groups)?;
    }
    Ok(ds)
}

/// Uses explicit 1-based group indices in place of the sorted-label
/// encoding, after checking they are dense and agree with the labels.
fn apply_group_index(mut ds: DataSet, groups: Vec<usize>) -> Result<DataSet> {
    let labels = ds.labels.as_ref().expect("labels attached first");
    let g = groups.iter().copied().max().unwrap_or(0);
    let mut names: Vec<Option<String>> = vec![None; g];
    for (row, (&idx, label)) in groups.iter().zip(labels).enumerate() {
        if idx == 0 {
            return Err(TourError::ParseError {
                row: row + 2,
                column: 0,
                message: "group index must start at 1".into(),
            });
        }
        match &names[idx - 1] {
            Some(existing) if existing != label => {
                return Err(TourError::ParseError {
                    row: row + 2,
                    column: 0,
                    message: format!("group {idx} used for both '{existing}' and '{label}'"),
                })
            }
            _ => names[idx - 1] = Some(label.clone()),
        }
    }
    let names: Vec<String> = names
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            n.ok_or_else(|| TourError::ParseError {
                row: 0,
                column: 0,
                message: format!("group index {} unused; indices must be dense", i + 1),
            })
        })
        .collect::<Result<_>>()?;
    let mut distinct = names.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != names.len() {
        return Err(TourError::ParseError {
            row: 0,
            column: 0,
            message: "one label mapped to several group indices".into(),
        });
    }
    ds.class_names = names;
    ds.group_index = Some(groups);
    Ok(ds)
}

fn csv_error(e: csv::Error, row: usize) -> TourError {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(row);
    TourError::ParseError {
        row,
        column: 0,
        message: e.to_string(),
    }
}

/// Centres each column and scales it to unit sample standard deviation
/// (divisor `N − 1`). `scale_info` composes with any earlier scaling so it
/// always maps back to the original units.
pub fn standardize(ds: &DataSet) -> Result<DataSet> {
    let n = ds.n();
    let mut out = ds.clone();
    let mut info = Vec::with_capacity(ds.p());
    for (j, col) in ds.values.column_iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(TourError::ZeroVariance(ds.var_names[j].clone()));
        }
        for i in 0..n {
            out.values[(i, j)] = (ds.values[(i, j)] - mean) / sd;
        }
        let prior = ds
            .scale_info
            .as_ref()
            .map_or(ScaleInfo { mean: 0.0, sd: 1.0 }, |s| s[j]);
        info.push(ScaleInfo {
            mean: prior.mean + prior.sd * mean,
            sd: prior.sd * sd,
        });
    }
    out.scale_info = Some(info);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub per_axis: usize,
    pub margin: f64,
    pub cap: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            per_axis: 20,
            margin: DEFAULT_GRID_MARGIN,
            cap: DEFAULT_GRID_CAP,
        }
    }
}

/// Regular lattice of `per_axis^p` points over the data cube widened by
/// `margin · range` on each side. The last variable varies fastest.
pub fn make_grid(ds: &DataSet, spec: &GridSpec) -> Result<DMatrix<f64>> {
    if spec.per_axis < 2 {
        return Err(TourError::DomainError("per_axis must be >= 2".into()));
    }
    if !(spec.margin >= 0.0) || !spec.margin.is_finite() {
        return Err(TourError::DomainError("margin must be >= 0".into()));
    }
    let p = ds.p();
    let points = (spec.per_axis as u128)
        .checked_pow(p as u32)
        .unwrap_or(u128::MAX);
    if points > spec.cap as u128 {
        return Err(TourError::GridTooLarge {
            points,
            cap: spec.cap,
        });
    }
    let m = points as usize;
    let steps = spec.per_axis - 1;
    let axes: Vec<Vec<f64>> = ds
        .column_min()
        .into_iter()
        .zip(ds.column_max())
        .map(|(lo, hi)| {
            let pad = spec.margin * (hi - lo);
            let (lo, hi) = (lo - pad, hi + pad);
            (0..spec.per_axis)
                .map(|i| if i == steps { hi } else { lo + (hi - lo) * (i as f64 / steps as f64) })
                .collect()
        })
        .collect();

    let mut grid = DMatrix::zeros(m, p);
    for row in 0..m {
        let mut rest = row;
        for j in (0..p).rev() {
            grid[(row, j)] = axes[j][rest % spec.per_axis];
            rest /= spec.per_axis;
        }
    }
    Ok(grid)
}

/// Linear discriminant analysis with a pooled within-class covariance.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub class_names: Vec<String>,
    /// `G x p`, one row per class.
    pub class_means: DMatrix<f64>,
    pub pooled_covariance: DMatrix<f64>,
    pub priors: Vec<f64>,
    weights: DMatrix<f64>,
    biases: Vec<f64>,
}

pub fn fit_lda(ds: &DataSet) -> Result<LdaModel> {
    let groups = ds.group_index.as_ref().ok_or(TourError::MissingLabels)?;
    let (n, p, g) = (ds.n(), ds.p(), ds.class_names.len());
    if g < 2 {
        return Err(TourError::DomainError(format!(
            "LDA needs at least 2 classes, found {g}"
        )));
    }
    let mut counts = vec![0usize; g];
    let mut means = DMatrix::zeros(g, p);
    for (i, &gi) in groups.iter().enumerate() {
        counts[gi - 1] += 1;
        for j in 0..p {
            means[(gi - 1, j)] += ds.values[(i, j)];
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        if c < p + 1 {
            return Err(TourError::TooFewSamples {
                class: ds.class_names[k].clone(),
                count: c,
                needed: p + 1,
            });
        }
        for j in 0..p {
            means[(k, j)] /= c as f64;
        }
    }
    let mut cov = DMatrix::zeros(p, p);
    for (i, &gi) in groups.iter().enumerate() {
        let dev = ds.values.row(i) - means.row(gi - 1);
        cov += dev.transpose() * dev;
    }
    cov /= (n - g) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    LdaModel::new(ds.class_names.clone(), means, cov, priors)
}

impl LdaModel {
    pub fn new(
        class_names: Vec<String>,
        class_means: DMatrix<f64>,
        pooled_covariance: DMatrix<f64>,
        priors: Vec<f64>,
    ) -> Result<Self> {
        let (g, p) = class_means.shape();
        if pooled_covariance.shape() != (p, p) {
            return Err(TourError::DimensionMismatch {
                what: "covariance",
                expected: p,
                actual: pooled_covariance.nrows(),
            });
        }
        if priors.len() != g || class_names.len() != g {
            return Err(TourError::DimensionMismatch {
                what: "class count",
                expected: g,
                actual: priors.len(),
            });
        }
        let chol: Cholesky<f64, Dyn> =
            Cholesky::new(pooled_covariance.clone()).ok_or(TourError::SingularCovariance)?;
        let weights = chol.solve(&class_means.transpose());
        let biases = (0..g)
            .map(|k| -0.5 * class_means.row(k).dot(&weights.column(k).transpose()) + priors[k].ln())
            .collect();
        Ok(LdaModel {
            class_names,
            class_means,
            pooled_covariance,
            priors,
            weights,
            biases,
        })
    }

    pub fn p(&self) -> usize {
        self.class_means.ncols()
    }

    /// Linear score of class `k`: `weights · x + bias`.
    pub fn discriminant(&self, k: usize) -> (DVector<f64>, f64) {
        (self.weights.column(k).into_owned(), self.biases[k])
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (0..self.class_names.len())
            .map(|k| self.weights.column(k).dot(&x) + self.biases[k])
            .collect()
    }

    /// 0-based class index per row; ties go to the lowest index.
    pub fn predict(&self, points: &DMatrix<f64>) -> Result<Vec<usize>> {
        if points.ncols() != self.p() {
            return Err(TourError::DimensionMismatch {
                what: "point dimension",
                expected: self.p(),
                actual: points.ncols(),
            });
        }
        let scores = points * &self.weights;
        Ok(scores
            .row_iter()
            .map(|row| {
                let mut best = 0;
                let mut best_score = row[0] + self.biases[0];
                for k in 1..row.len() {
                    let s = row[k] + self.biases[k];
                    if s > best_score {
                        best = k;
                        best_score = s;
                    }
                }
                best
            })
            .collect())
    }
}

pub fn predict_lda(model: &LdaModel, points: &DMatrix<f64>) -> Result<Vec<usize>> {
    model.predict(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSource {
    BuiltinLda,
    External { path: String },
}

/// Dense grid over the data cube labelled with model predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrid {
    pub points: DMatrix<f64>,
    /// 0-based indices into `classes`.
    pub predicted: Vec<usize>,
    pub classes: Vec<String>,
    pub source: GridSource,
    pub warnings: Vec<String>,
}

impl ClassifierGrid {
    pub fn from_lda(ds: &DataSet, spec: &GridSpec) -> Result<Self> {
        let model = fit_lda(ds)?;
        let points = make_grid(ds, spec)?;
        let predicted = model.predict(&points)?;
        Ok(ClassifierGrid {
            points,
            predicted,
            classes: model.class_names,
            source: GridSource::BuiltinLda,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// 1-based group index per point, matching `DataSet::group_index`.
    pub fn group_index(&self) -> Vec<usize> {
        self.predicted.iter().map(|k| k + 1).collect()
    }
}

/// Metadata carried by a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub var_names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub class_list: Vec<String>,
}

impl PredictionMeta {
    pub fn for_dataset(ds: &DataSet, class_list: Vec<String>) -> Self {
        let frame = ds.frame();
        PredictionMeta {
            var_names: ds.var_names.clone(),
            means: frame.iter().map(|s| s.mean).collect(),
            sds: frame.iter().map(|s| s.sd).collect(),
            class_list,
        }
    }
}

/// Prefix of the metadata comment line in a prediction file.
pub const META_PREFIX: &str = "# meta: ";

/// Writes the canonical prediction format: one metadata comment line, a
/// header, then coordinates and the predicted class label per row.
pub fn write_predictions(
    mut out: impl Write,
    grid: &ClassifierGrid,
    meta: &PredictionMeta,
) -> Result<()> {
    let json = serde_json::to_string(meta).map_err(|e| TourError::Io(e.to_string()))?;
    writeln!(out, "{META_PREFIX}{json}")?;
    let mut header = meta.var_names.join(",");
    header.push_str(",class");
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for (row, &k) in grid.points.row_iter().zip(&grid.predicted) {
        line.clear();
        for v in row.iter() {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&grid.classes[k]);
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// A prediction file as read from disk, before it is matched to a data set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub meta: PredictionMeta,
    pub points: DMatrix<f64>,
    pub labels: Vec<String>,
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TourError::Io(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut meta = None;
    let mut body = String::new();
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            let rest = rest.strip_prefix("meta:").map_or(rest, str::trim);
            if let Ok(m) = serde_json::from_str::<PredictionMeta>(rest) {
                meta = Some(m);
            }
            continue;
        }
        body.push_str(&line);
        reader.read_to_string(&mut body)?;
        break;
    }
    let meta = match meta {
        Some(m) => m,
        None => read_sidecar(path)?,
    };
    let p = meta.var_names.len();
    if meta.means.len() != p || meta.sds.len() != p {
        return Err(TourError::ParseError {
            row: 1,
            column: 0,
            message: "metadata means/sds do not match var_names".into(),
        });
    }

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header_len = rdr.headers().map_err(|e| csv_error(e, line_no + 1))?.len();
    if header_len != p + 1 {
        return Err(TourError::ParseError {
            row: line_no + 1,
            column: 0,
            message: format!("expected {} columns, found {header_len}", p + 1),
        });
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = line_no + 2 + i;
        let rec = rec.map_err(|e| csv_error(e, row_no))?;
        if rec.len() != p + 1 {
            return Err(TourError::ParseError {
                row: row_no,
                column: rec.len(),
                message: format!("expected {} fields", p + 1),
            });
        }
        for j in 0..p {
            let v: f64 = rec[j].parse().map_err(|_| TourError::ParseError {
                row: row_no,
                column: j + 1,
                message: format!("'{}' is not a number", &rec[j]),
            })?;
            values.push(v);
        }
        labels.push(rec[p].to_owned());
    }
    let n = labels.len();
    Ok(PredictionFile {
        meta,
        points: DMatrix::from_row_slice(n, p, &values),
        labels,
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path) -> Result<PredictionMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|_| TourError::ParseError {
        row: 1,
        column: 0,
        message: format!(
            "no metadata comment and no sidecar {}",
            side.display()
        ),
    })?;
    serde_json::from_str(&text).map_err(|e| TourError::ParseError {
        row: e.line(),
        column: e.column(),
        message: format!("sidecar {}: {e}", side.display()),
    })
}

/// Loads externally produced predictions and matches them to `ds`.
///
/// The file's frame (variable names, means, sds) must agree with the data
/// set's within [`FRAME_TOL`]. The class list starts from the data set's
/// classes; classes only named by the file are appended, with a warning
/// when they are not even in the file's own class list.
pub fn ingest_predictions(path: impl AsRef<Path>, ds: &DataSet) -> Result<ClassifierGrid> {
    let path = path.as_ref();
    let file = read_predictions(path)?;
    let meta = &file.meta;
    if meta.var_names != ds.var_names {
        return Err(TourError::FrameMismatch(format!(
            "variables {:?} vs {:?}",
            meta.var_names, ds.var_names
        )));
    }
    for (j, s) in ds.frame().iter().enumerate() {
        let dm = (meta.means[j] - s.mean).abs();
        let dsd = (meta.sds[j] - s.sd).abs();
        if !(dm <= FRAME_TOL) || !(dsd <= FRAME_TOL) {
            return Err(TourError::FrameMismatch(format!(
                "variable '{}': file mean/sd ({}, {}) vs data ({}, {})",
                ds.var_names[j], meta.means[j], meta.sds[j], s.mean, s.sd
            )));
        }
    }

    let mut classes = ds.class_names.clone();
    for c in &meta.class_list {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }
    let mut warnings = Vec::new();
    let mut predicted = Vec::with_capacity(file.labels.len());
    for label in &file.labels {
        let k = match classes.iter().position(|c| c == label) {
            Some(k) => k,
            None => {
                let msg = format!("unknown class '{label}' appended to class list");
                log::warn!("{msg}");
                warnings.push(msg);
                classes.push(label.clone());
                classes.len() - 1
            }
        };
        predicted.push(k);
    }
    Ok(ClassifierGrid {
        points: file.points,
        predicted,
        classes,
        source: GridSource::External {
            path: path.display().to_string(),
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_from(text: &str) -> Result<DataSet> {
        ingest_reader(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn three_rows_no_labels() {
        let ds = ds_from("a,b\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 2);
        assert!(ds.labels.is_none());
        assert_eq!(ds.dropped_rows, 0);
    }

    #[test]
    fn trailing_label_detected() {
        let ds = ds_from("a,b,species\n1,2,x\n3,4,y\n5,6,x\n").unwrap();
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.class_names, vec!["x", "y"]);
        assert_eq!(ds.group_index, Some(vec![1, 2, 1]));
    }

    #[test]
    fn missing_value_row_dropped() {
        let ds = ds_from("a,b\n1,2\nNA,4\n5,6\n").unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.dropped_rows, 1);
        assert_eq!(ds.values[(1, 0)], 5.0);
    }

    #[test]
    fn parse_error_location() {
        let err = ds_from("a,b,c\n1,2,3\n4,oops,6\n").unwrap_err();
        assert_eq!(
            err,
            TourError::ParseError {
                row: 3,
                column: 2,
                message: "'oops' is not a number".into()
            }
        );
    }

    #[test]
    fn empty_data() {
        assert_eq!(ds_from("a,b\nNA,1\n").unwrap_err(), TourError::EmptyData);
    }

    #[test]
    fn explicit_group_index_column() {
        let schema = CsvSchema {
            label_column: Some("name".into()),
            group_index_column: Some("flag".into()),
            delimiter: b';',
        };
        let ds = ingest_reader("a;b;name;flag\n1;2;zeta;1\n3;4;alpha;2\n5;6;zeta;1\n".as_bytes(), &schema).unwrap();
        assert_eq!(ds.class_names, vec!["zeta", "alpha"]);
        assert_eq!(ds.group_index, Some(vec![1, 2, 1]));

        let bad = ingest_reader("a;b;name;flag\n1;2;zeta;1\n3;4;alpha;1\n".as_bytes(), &schema);
        assert!(matches!(bad, Err(TourError::ParseError { .. })));
        let sparse = ingest_reader("a;b;name;flag\n1;2;zeta;1\n3;4;alpha;3\n".as_bytes(), &schema);
        assert!(matches!(sparse, Err(TourError::ParseError { .. })));
    }

    #[test]
    fn standardize_small_column() {
        let ds = ds_from("a,b\n1,10\n2,20\n3,60\n").unwrap();
        let s = standardize(&ds).unwrap();
        assert_eq!(s.values.column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        let info = s.scale_info.as_ref().unwrap();
        assert_eq!(info[0], ScaleInfo { mean: 2.0, sd: 1.0 });
    }

    #[test]
    fn standardize_constant_column() {
        let ds = ds_from("a,b\n1,10\n2,10\n3,10\n").unwrap();
        assert_eq!(standardize(&ds).unwrap_err(), TourError::ZeroVariance("b".into()));
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = ds_from("a,b\n1,10\n2,25\n7,60\n4,4\n").unwrap();
        let once = standardize(&ds).unwrap();
        let twice = standardize(&once).unwrap();
        assert!((once.values.clone() - twice.values.clone()).amax() < 1e-10);
        let (i1, i2) = (once.scale_info.unwrap(), twice.scale_info.unwrap());
        for (a, b) in i1.iter().zip(&i2) {
            assert!((a.mean - b.mean).abs() < 1e-10 && (a.sd - b.sd).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_one_dimension() {
        let ds = DataSet::from_matrix(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), vec!["x".into()]).unwrap();
        let g = make_grid(&ds, &GridSpec { per_axis: 3, margin: 0.0, cap: DEFAULT_GRID_CAP }).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_counting_and_cap() {
        let values = DMatrix::from_fn(5, 4, |i, j| (i * (j + 1)) as f64);
        let names = (0..4).map(|j| format!("v{j}")).collect();
        let ds = DataSet::from_matrix(values, names).unwrap();
        let g = make_grid(&ds, &GridSpec { per_axis: 10, ..GridSpec::default() }).unwrap();
        assert_eq!(g.nrows(), 10_000);
        let err = make_grid(&ds, &GridSpec { per_axis: 40, ..GridSpec::default() }).unwrap_err();
        assert_eq!(err, TourError::GridTooLarge { points: 2_560_000, cap: DEFAULT_GRID_CAP });
        assert!(make_grid(&ds, &GridSpec { per_axis: 1, ..GridSpec::default() }).is_err());
    }

    #[test]
    fn grid_respects_margin() {
        let ds = DataSet::from_matrix(DMatrix::from_column_slice(2, 1, &[0.0, 10.0]), vec!["x".into()]).unwrap();
        let g = make_grid(&ds, &GridSpec { per_axis: 2, margin: 0.05, cap: 10 }).unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 10.5]);
    }

    fn two_class_line() -> DataSet {
        let x = [-1.5, -1.0, -0.5, 0.5, 1.0, 1.5];
        let labels = ["a", "a", "a", "b", "b", "b"].map(String::from).to_vec();
        DataSet::from_matrix(DMatrix::from_column_slice(6, 1, &x), vec!["x".into()])
            .unwrap()
            .with_labels(labels)
            .unwrap()
    }

    #[test]
    fn lda_symmetric_boundary_at_zero() {
        let model = fit_lda(&two_class_line()).unwrap();
        let pts = DMatrix::from_column_slice(3, 1, &[-0.01, 0.0, 0.01]);
        // exact tie at the midpoint goes to the first class
        assert_eq!(model.predict(&pts).unwrap(), vec![0, 0, 1]);
        let s = model.scores(&[0.0]);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn lda_point_at_mean() {
        let means = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 0.0, 0.0, 3.0]);
        let model = LdaModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            means.clone(),
            DMatrix::identity(2, 2),
            vec![1.0 / 3.0; 3],
        )
        .unwrap();
        assert_eq!(model.predict(&means).unwrap(), vec![0, 1, 2]);
        assert!(model.predict(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn lda_errors() {
        let ds = two_class_line();
        let unlabeled = DataSet::from_matrix(ds.values.clone(), ds.var_names.clone()).unwrap();
        assert_eq!(fit_lda(&unlabeled).unwrap_err(), TourError::MissingLabels);

        let small = DataSet::from_matrix(DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, 5.0, 5.0, 6.0, 7.0]), vec!["x".into(), "y".into()])
            .unwrap()
            .with_labels(["a", "a", "b", "b"].map(String::from).to_vec())
            .unwrap();
        assert!(matches!(fit_lda(&small), Err(TourError::TooFewSamples { needed: 3, count: 2, .. })));

        let singular = LdaModel::new(vec!["a".into(), "b".into()], DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), vec![0.5, 0.5]);
        assert!(matches!(singular, Err(TourError::SingularCovariance)));
    }

    #[test]
    fn prediction_file_round_trip() {
        let ds = standardize(&two_class_line()).unwrap();
        let grid = ClassifierGrid::from_lda(&ds, &GridSpec { per_axis: 7, margin: 0.1, cap: 100 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        let meta = PredictionMeta::for_dataset(&ds, grid.classes.clone());
        write_predictions(File::create(&path).unwrap(), &grid, &meta).unwrap();
        let back = ingest_predictions(&path, &ds).unwrap();
        assert_eq!(back.points, grid.points);
        assert_eq!(back.predicted, grid.predicted);
        assert_eq!(back.classes, grid.classes);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn prediction_file_sidecar_and_unknown_class() {
        let ds = standardize(&two_class_line()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.csv");
        std::fs::write(&path, "x,class\n0.1,a\n0.2,c\n0.3,b\n").unwrap();
        let meta = PredictionMeta::for_dataset(&ds, vec!["a".into(), "b".into()]);
        std::fs::write(sidecar_path(&path), serde_json::to_string(&meta).unwrap()).unwrap();
        let grid = ingest_predictions(&path, &ds).unwrap();
        assert_eq!(grid.classes, vec!["a", "b", "c"]);
        assert_eq!(grid.predicted, vec![0, 2, 1]);
        assert_eq!(grid.warnings.len(), 1);
    }

    #[test]
    fn prediction_frame_mismatch() {
        let ds = standardize(&two_class_line()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.csv");
        let mut meta = PredictionMeta::for_dataset(&ds, vec![]);
        meta.means[0] += 1e-3;
        std::fs::write(
            &path,
            format!("{META_PREFIX}{}\nx,class\n0.1,a\n", serde_json::to_string(&meta).unwrap()),
        )
        .unwrap();
        assert!(matches!(ingest_predictions(&path, &ds), Err(TourError::FrameMismatch(_))));
        std::fs::write(&path, "x,class\n0.1,a\n").unwrap();
        assert!(matches!(ingest_predictions(&path, &ds), Err(TourError::ParseError { .. })));
    }
}
