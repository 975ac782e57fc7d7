//! Dataset ingestion, subsampling and the synthetic radial-shift benchmark.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::{self, fraction_count};

/// Feature matrix with binary labels and an optional integer group column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    group: Option<Vec<i64>>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, group: Option<Vec<i64>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if d == 0 {
            return Err(Error::InvalidData("dataset has no feature columns".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidData(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidData(format!(
                "label {} at row {i} is not 0 or 1",
                labels[i]
            )));
        }
        if let Some(g) = &group {
            if g.len() != n {
                return Err(Error::InvalidData(format!(
                    "group column has {} entries for {n} rows",
                    g.len()
                )));
            }
        }
        if let Some(((i, j), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature value {v} at row {i}, column {j}"
            )));
        }
        Ok(Self {
            features,
            labels,
            group,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} columns",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn group(&self) -> Option<&[i64]> {
        self.group.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.n_positive();
        p > 0 && p < self.n_rows()
    }

    /// Rows `rows` (in the given order), all columns.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), rows);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let group = self
            .group
            .as_ref()
            .map(|g| rows.iter().map(|&i| g[i]).collect());
        let mut ds = Self::new(features, labels, group)?;
        ds.feature_names = self.feature_names.clone();
        Ok(ds)
    }

    /// Same rows, replacing the feature matrix (e.g. with latent codes).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n_rows() {
            return Err(Error::Dimension {
                expected: self.n_rows(),
                got: features.nrows(),
            });
        }
        Self::new(features, self.labels.clone(), self.group.clone())
    }

    /// Writes features, label and (if present) group columns. Feature
    /// values use the shortest round-trip representation, so a reload
    /// reproduces the matrix bit for bit.
    pub fn save_csv(&self, path: impl AsRef<Path>, label_column: &str, group_column: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = match &self.feature_names {
            Some(names) => names.clone(),
            None => (0..self.n_features()).map(|j| format!("x{j}")).collect(),
        };
        header.push(label_column.to_string());
        if self.group.is_some() {
            header.push(group_column.to_string());
        }
        w.write_record(&header)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            if let Some(g) = &self.group {
                rec.push(g[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn parse_label(cell: &str, row: usize, column: &str) -> Result<u8> {
    let t = cell.trim();
    match t.to_ascii_lowercase().as_str() {
        "0" | "false" => return Ok(0),
        "1" | "true" => return Ok(1),
        _ => {}
    }
    match t.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(Error::Parse(format!(
            "row {row}, column '{column}': label '{t}' is not 0/1 or true/false"
        ))),
    }
}

/// Reads a headered CSV. Every column other than the label and group
/// columns is a feature, in header order. Rows are numbered from 1
/// (the first data line) in error messages.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, group_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("{}: no column named '{name}'", path.display())))
    };
    let label_idx = find(label_column)?;
    let group_idx = group_column.map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != label_idx && Some(j) != group_idx)
        .collect();
    let names: Vec<String> = feature_cols.iter().map(|&j| headers[j].trim().to_string()).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        labels.push(parse_label(&rec[label_idx], row, label_column)?);
        if let Some(gi) = group_idx {
            let cell = rec[gi].trim();
            let g = cell.parse::<i64>().map_err(|_| {
                Error::Parse(format!(
                    "row {row}, column '{}': group id '{cell}' is not an integer",
                    &headers[gi]
                ))
            })?;
            groups.push(g);
        }
        for &j in &feature_cols {
            let cell = rec[j].trim();
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Parse(format!(
                    "row {row}, column '{}': '{cell}' is not a finite number",
                    &headers[j]
                ))
            })?;
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidData(format!("{}: no data rows", path.display())));
    }
    if feature_cols.is_empty() {
        return Err(Error::InvalidData(format!("{}: no feature columns", path.display())));
    }
    let features = Array2::from_shape_vec((labels.len(), feature_cols.len()), values)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    Dataset::new(features, labels, group_idx.map(|_| groups))?.with_feature_names(names)
}

/// Feature matrix of a headered CSV that may lack labels: every column
/// whose name is not in `exclude` is a feature. Absent excluded names are
/// ignored.
pub fn load_features_csv(path: impl AsRef<Path>, exclude: &[&str]) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = (0..headers.len())
        .filter(|&j| !exclude.contains(&headers[j].trim()))
        .collect();
    if cols.is_empty() {
        return Err(Error::InvalidData(format!("{}: no feature columns", path.display())));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for &j in &cols {
            let cell = rec[j].trim();
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Parse(format!(
                    "row {}, column '{}': '{cell}' is not a finite number",
                    r + 1,
                    &headers[j]
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InvalidData(format!("{}: no data rows", path.display())));
    }
    Array2::from_shape_vec((rows, cols.len()), values).map_err(|e| Error::InvalidData(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleSpec {
    pub instance_fraction: f64,
    pub feature_fraction: f64,
    pub seed: u64,
}

impl SubsampleSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("instance_fraction", self.instance_fraction),
            ("feature_fraction", self.feature_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

/// Sorted indices drawn without replacement.
pub fn sample_sorted(rng: &mut seed::Rng, n: usize, amount: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, n, amount).into_vec();
    idx.sort_unstable();
    idx
}

pub struct Subsample {
    pub dataset: Dataset,
    pub instance_indices: Vec<usize>,
    pub feature_indices: Vec<usize>,
}

/// Draws rows then columns without replacement from a stream seeded by
/// `spec.seed`. Indices come back sorted.
pub fn subsample(ds: &Dataset, spec: &SubsampleSpec) -> Result<Subsample> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let rows = sample_sorted(&mut rng, ds.n_rows(), fraction_count(spec.instance_fraction, ds.n_rows()));
    let cols = sample_sorted(
        &mut rng,
        ds.n_features(),
        fraction_count(spec.feature_fraction, ds.n_features()),
    );
    let features = ds.features.select(Axis(0), &rows).select(Axis(1), &cols);
    let labels = rows.iter().map(|&i| ds.labels[i]).collect();
    let group = ds.group.as_ref().map(|g| rows.iter().map(|&i| g[i]).collect());
    let mut sub = Dataset::new(features, labels, group)?;
    if let Some(names) = &ds.feature_names {
        sub.feature_names = Some(cols.iter().map(|&j| names[j].clone()).collect());
    }
    Ok(Subsample {
        dataset: sub,
        instance_indices: rows,
        feature_indices: cols,
    })
}

/// The fixed labelling rule of the synthetic benchmark.
pub fn radial_label(x: ArrayView1<'_, f64>) -> u8 {
    u8::from((3.0 * x[0]).sin() + 0.5 * x[1] > 0.0)
}

const SYNTH_RETRIES: u64 = 32;

/// Standard Gaussian points split by norm at the pooled median `r0`:
/// `‖x‖ < r0` goes to the in-distribution train set, the rest to the OOD
/// test set. A seed whose train or test side misses a class is retried
/// with `seed + 1`, a bounded number of times.
pub fn make_synthetic_radial(n_id: usize, n_ood: usize, d: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_id < 10 || n_ood < 10 {
        return Err(Error::Config(format!(
            "synthetic set sizes must be at least 10, got {n_id} and {n_ood}"
        )));
    }
    if d < 2 {
        return Err(Error::Config(format!("synthetic dimension must be at least 2, got {d}")));
    }
    for attempt in 0..SYNTH_RETRIES {
        let mut rng = seed::rng(seed.wrapping_add(attempt));
        let pool = 2 * n_id.max(n_ood);
        let points: Array2<f64> = Array2::from_shape_simple_fn((pool, d), || StandardNormal.sample(&mut rng));
        let norms: Vec<f64> = points.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut sorted = norms.clone();
        sorted.sort_by(f64::total_cmp);
        let r0 = 0.5 * (sorted[pool / 2 - 1] + sorted[pool / 2]);

        let inside: Vec<usize> = (0..pool).filter(|&i| norms[i] < r0).take(n_id).collect();
        let outside: Vec<usize> = (0..pool).filter(|&i| norms[i] >= r0).take(n_ood).collect();
        if inside.len() < n_id || outside.len() < n_ood {
            continue;
        }
        let build = |rows: &[usize]| {
            let x = points.select(Axis(0), rows);
            let y = x.rows().into_iter().map(radial_label).collect();
            Dataset::new(x, y, None)
        };
        let train = build(&inside)?;
        let test = build(&outside)?;
        if train.has_both_classes() && test.n_positive() > 0 {
            return Ok((train, test));
        }
    }
    Err(Error::Config(format!(
        "could not draw a usable synthetic split after {SYNTH_RETRIES} seeds starting at {seed}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn features_only_load_skips_named_columns() {
        let f = write_tmp("a,y,b\n1,0,2\n3,1,4\n");
        let x = load_features_csv(f.path(), &["y", "group"]).unwrap();
        assert_eq!(x, array![[1.0, 2.0], [3.0, 4.0]]);
        let g = write_tmp("a,b\n1,x\n");
        let err = load_features_csv(g.path(), &["y"]).unwrap_err().to_string();
        assert!(err.contains("row 1, column 'b'"), "{err}");
    }

    #[test]
    fn loads_three_rows() {
        let f = write_tmp("a,b,y\n1.0,2.0,0\n3,4,1\n-5e-1,0,true\n");
        let ds = load_csv(f.path(), "y", None).unwrap();
        assert_eq!((ds.n_rows(), ds.n_features()), (3, 2));
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.features()[[2, 0]], -0.5);
        assert_eq!(ds.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn rejects_bad_label_with_row() {
        let f = write_tmp("a,y\n1,0\n2,2\n");
        let err = load_csv(f.path(), "y", None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn rejects_non_numeric_feature_with_location() {
        let f = write_tmp("a,b,y\n1,x,0\n");
        let err = load_csv(f.path(), "y", None).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("'b'"), "{err}");
    }

    #[test]
    fn rejects_missing_file_and_empty() {
        assert!(matches!(
            load_csv("/nonexistent/nope.csv", "y", None),
            Err(Error::Io { .. })
        ));
        let f = write_tmp("a,y\n");
        assert!(load_csv(f.path(), "y", None).is_err());
    }

    #[test]
    fn group_column_is_not_a_feature() {
        let f = write_tmp("a,g,b,y\n1,7,2,0\n3,8,4,1\n");
        let ds = load_csv(f.path(), "y", Some("g")).unwrap();
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.group().unwrap(), &[7, 8]);
        assert_eq!(ds.features().row(1).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let x = array![[0.1, 1e-300], [std::f64::consts::PI, -123456.789e10]];
        let ds = Dataset::new(x, vec![0, 1], Some(vec![3, 4])).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.save_csv(f.path(), "label", "group").unwrap();
        let back = load_csv(f.path(), "label", Some("group")).unwrap();
        for (a, b) in ds.features().iter().zip(back.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.group(), ds.group());
    }

    #[test]
    fn subsample_full_is_identity() {
        let (train, _) = make_synthetic_radial(20, 20, 3, 1).unwrap();
        let spec = SubsampleSpec { instance_fraction: 1.0, feature_fraction: 1.0, seed: 9 };
        let sub = subsample(&train, &spec).unwrap();
        assert_eq!(sub.instance_indices, (0..20).collect::<Vec<_>>());
        assert_eq!(sub.feature_indices, vec![0, 1, 2]);
        assert_eq!(sub.dataset, train);
    }

    #[test]
    fn subsample_counts_and_determinism() {
        let x = Array2::from_shape_fn((10, 4), |(i, j)| (i * 4 + j) as f64);
        let ds = Dataset::new(x, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], None).unwrap();
        let spec = SubsampleSpec { instance_fraction: 0.5, feature_fraction: 0.5, seed: 3 };
        let a = subsample(&ds, &spec).unwrap();
        let b = subsample(&ds, &spec).unwrap();
        assert_eq!(a.dataset.n_rows(), 5);
        assert_eq!(a.dataset.n_features(), 2);
        assert_eq!(a.instance_indices, b.instance_indices);
        assert_eq!(a.feature_indices, b.feature_indices);
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        let ds = Dataset::new(array![[1.0]], vec![0], None).unwrap();
        let spec = SubsampleSpec { instance_fraction: 0.0, feature_fraction: 1.0, seed: 0 };
        assert!(subsample(&ds, &spec).is_err());
    }

    #[test]
    fn radial_split_respects_norm_boundary() {
        let (train, test) = make_synthetic_radial(1000, 1000, 8, 7).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (1000, 1000));
        let norm = |r: ArrayView1<f64>| r.dot(&r).sqrt();
        let max_train = train.features().rows().into_iter().map(norm).fold(0.0, f64::max);
        let min_test = test.features().rows().into_iter().map(norm).fold(f64::INFINITY, f64::min);
        assert!(max_train < min_test);
        assert!(train.has_both_classes());
    }

    #[test]
    fn radial_is_deterministic() {
        let a = make_synthetic_radial(50, 30, 4, 11).unwrap();
        let b = make_synthetic_radial(50, 30, 4, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn radial_label_at_origin_is_zero() {
        assert_eq!(radial_label(Array1::zeros(3).view()), 0);
        assert_eq!(radial_label(array![0.0, 1.0].view()), 1);
    }

    #[test]
    fn radial_rejects_tiny_requests() {
        assert!(make_synthetic_radial(5, 100, 3, 0).is_err());
        assert!(make_synthetic_radial(100, 100, 1, 0).is_err());
    }

}
