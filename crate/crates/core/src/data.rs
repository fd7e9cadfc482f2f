//! Datasets: in-memory examples, file loaders (CSV, LIBSVM, IDX), seeded
//! splitting, standardization and synthetic generators.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::metrics::discrete_cvar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub target: Target,
}

impl Example {
    pub fn regression(features: Vec<f64>, value: f64) -> Self {
        Example {
            features,
            target: Target::Value(value),
        }
    }

    pub fn classification(features: Vec<f64>, class: usize) -> Self {
        Example {
            features,
            target: Target::Class(class),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Number of classes.
    Classification(usize),
    Regression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Classification(k) => write!(f, "classification({k})"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    task: Task,
    name: String,
}

impl Dataset {
    /// Validates nonemptiness, a common feature dimension, and targets
    /// matching the task.
    pub fn new(name: impl Into<String>, task: Task, examples: Vec<Example>) -> Result<Self> {
        let name = name.into();
        let Some(first) = examples.first() else {
            return Err(Error::EmptyDataset(format!(" `{name}`")));
        };
        let dim = first.features.len();
        for ex in &examples {
            if ex.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: ex.features.len(),
                });
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("feature value in `{name}`")));
            }
            match (task, ex.target) {
                (Task::Classification(k), Target::Class(c)) if c < k => {}
                (Task::Regression, Target::Value(v)) if v.is_finite() => {}
                (task, target) => {
                    return Err(Error::param(
                        "target",
                        format!("{target:?} is invalid for {task} data"),
                    ))
                }
            }
        }
        Ok(Dataset {
            examples,
            task,
            name,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.examples[0].features.len()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Examples at `indices`, in that order. Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Dataset::new(self.name.clone(), self.task, examples)
    }
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    /// Zero-based target column; `None` means the last column.
    pub target_column: Option<usize>,
    /// Class labels (mapped to indices by sorted numeric order) rather than real targets.
    pub classification: bool,
    /// `None` detects a header by whether the first row parses as numbers.
    pub has_header: Option<bool>,
}

impl CsvSchema {
    pub fn regression() -> Self {
        CsvSchema {
            target_column: None,
            classification: false,
            has_header: None,
        }
    }

    pub fn classification() -> Self {
        CsvSchema {
            classification: true,
            ..Self::regression()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let parse_err = |row: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        reason,
    };

    let mut rows: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(i + 1, e.to_string()))?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if i == 0 {
            let header = match schema.has_header {
                Some(h) => h,
                None => record.iter().any(|f| f.parse::<f64>().is_err()),
            };
            if header {
                width = Some(record.len());
                continue;
            }
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RowDimension {
                path: path.to_path_buf(),
                row,
                expected: expected.saturating_sub(1),
                found: record.len().saturating_sub(1),
            });
        }
        let target_col = schema.target_column.unwrap_or(expected - 1);
        if target_col >= expected {
            return Err(parse_err(
                row,
                format!("target column {target_col} out of range for {expected} columns"),
            ));
        }
        let mut features = Vec::with_capacity(expected - 1);
        let mut target = 0.0;
        for (col, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(parse_err(row, format!("missing value in column {col}")));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, format!("non-numeric value `{field}` in column {col}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("non-finite value in column {col}")));
            }
            if col == target_col {
                target = v;
            } else {
                features.push(v);
            }
        }
        rows.push((row, features, target));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(": {}", path.display())));
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if schema.classification {
        let labels: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let (classes, mapped) = index_labels(&labels);
        let examples = rows
            .into_iter()
            .zip(mapped)
            .map(|((_, f, _), c)| Example::classification(f, c))
            .collect();
        Dataset::new(name, Task::Classification(classes.len().max(2)), examples)
    } else {
        let examples = rows
            .into_iter()
            .map(|(_, f, t)| Example::regression(f, t))
            .collect();
        Dataset::new(name, Task::Regression, examples)
    }
}

/// Maps numeric labels to class indices by sorted order of the distinct values.
fn index_labels(labels: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut classes = labels.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let mapped = labels
        .iter()
        .map(|l| classes.partition_point(|c| c < l))
        .collect();
    (classes, mapped)
}

/// Sparse `label index:value ...` text, 1-based indices, densified to the
/// largest index seen. Labels become class indices by sorted order.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let parse_err = |row: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        reason,
    };

    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(row, format!("invalid label `{label_tok}`")))?;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(row, format!("expected index:value, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(row, format!("invalid feature index `{idx}`")))?;
            if idx == 0 {
                return Err(parse_err(row, "feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(row, format!("non-numeric value `{val}`")))?;
            if !val.is_finite() {
                return Err(parse_err(row, format!("non-finite value at index {idx}")));
            }
            if entries.iter().any(|&(j, _)| j == idx) {
                return Err(parse_err(row, format!("duplicate feature index {idx}")));
            }
            max_index = max_index.max(idx);
            entries.push((idx, val));
        }
        rows.push((label, entries));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(": {}", path.display())));
    }
    let labels: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (classes, mapped) = index_labels(&labels);
    let examples = rows
        .into_iter()
        .zip(mapped)
        .map(|((_, entries), c)| {
            let mut features = vec![0.0; max_index];
            for (j, v) in entries {
                features[j - 1] = v;
            }
            Example::classification(features, c)
        })
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, Task::Classification(classes.len().max(2)), examples)
}

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |reason: &str| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        reason: reason.to_string(),
    };
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("missing IDX magic number"));
    }
    if bytes[2] != 0x08 {
        return Err(bad("only unsigned-byte IDX payloads are supported"));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if ndims == 0 || bytes.len() < header {
        return Err(bad("truncated IDX header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() != header + total {
        return Err(bad("IDX payload size does not match its dimensions"));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// MNIST-style image/label file pair. `limit` keeps the first examples only.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let images = images.as_ref();
    let img = read_idx(images)?;
    let lab = read_idx(labels.as_ref())?;
    if lab.dims.len() != 1 {
        return Err(Error::Parse {
            path: labels.as_ref().to_path_buf(),
            row: 0,
            reason: "label file must be one-dimensional".into(),
        });
    }
    let count = img.dims[0];
    if lab.dims[0] != count {
        return Err(Error::DimensionMismatch {
            expected: count,
            found: lab.dims[0],
        });
    }
    let width: usize = img.dims[1..].iter().product();
    let take = limit.map_or(count, |l| l.min(count));
    let classes = lab.data[..take].iter().copied().max().unwrap_or(0) as usize + 1;
    let examples = (0..take)
        .map(|i| {
            let features = img.data[i * width..(i + 1) * width]
                .iter()
                .map(|&b| b as f64)
                .collect();
            Example::classification(features, lab.data[i] as usize)
        })
        .collect();
    let name = images
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, Task::Classification(classes.max(2)), examples)
}

/// Seeded shuffle followed by a prefix split. The first part has
/// `floor(fraction * n)` examples, clamped to `[1, n - 1]`.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(
            "train_fraction",
            format!("must lie in (0, 1), got {train_fraction}"),
        ));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::param(
            "train_fraction",
            format!("cannot split {n} example(s) into two nonempty parts"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let head = ((train_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let train = ds.select(&order[..head])?.with_name(format!("{}/train", ds.name()));
    let rest = ds.select(&order[head..])?.with_name(format!("{}/val", ds.name()));
    Ok((train, rest))
}

/// Per-feature affine map fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Divisor per feature; 1 for zero-variance features, which are only centered.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let d = train.feature_dim();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for ex in train.examples() {
            for (m, v) in mean.iter_mut().zip(&ex.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for ex in train.examples() {
            for ((s, v), m) in var.iter_mut().zip(&ex.features).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.feature_dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: ds.feature_dim(),
            });
        }
        let examples = ds
            .examples()
            .iter()
            .map(|ex| Example {
                features: ex
                    .features
                    .iter()
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect(),
                target: ex.target,
            })
            .collect();
        Dataset::new(ds.name().to_string(), ds.task(), examples)
    }
}

/// Fits on `train` and transforms `train` followed by each of `others`.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Vec<Dataset>, Standardizer)> {
    let st = Standardizer::fit(train);
    let mut out = vec![st.apply(train)?];
    for ds in others {
        out.push(st.apply(ds)?);
    }
    Ok((out, st))
}

/// Two-atom target distribution: `hi` with probability `p`, otherwise `lo`.
///
/// Paired with the location loss `clip(|w - z|, 0, B)` (featureless
/// absolute-error regression), the population CVaR of every `w` has a
/// closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointLaw {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TwoPointLaw {
    pub fn new(p: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
        }
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::param(
                "lo/hi",
                format!("need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}"),
            ));
        }
        Ok(TwoPointLaw { p, lo, hi })
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..n)
            .map(|_| {
                let z = if rng.random::<f64>() < self.p {
                    self.hi
                } else {
                    self.lo
                };
                Example::regression(Vec::new(), z)
            })
            .collect();
        Dataset::new(
            format!("twopoint(p={},lo={},hi={})", self.p, self.lo, self.hi),
            Task::Regression,
            examples,
        )
    }

    /// Population CVaR at level `alpha` of `clip(|w - z|, 0, bound)`.
    pub fn population_cvar(&self, w: f64, alpha: f64, bound: f64) -> f64 {
        let loss = |z: f64| (w - z).abs().min(bound);
        discrete_cvar(&[(loss(self.hi), self.p), (loss(self.lo), 1.0 - self.p)], alpha)
    }
}

pub fn synth_twopoint(n: usize, p: f64, lo: f64, hi: f64, seed: u64) -> Result<Dataset> {
    TwoPointLaw::new(p, lo, hi)?.sample(n, seed)
}

/// Linear regression data with Student-t noise (3 degrees of freedom) whose
/// scale grows with the first feature, so a minority of examples carries most
/// of the squared-error tail.
pub fn synth_heavy_tail(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if dim == 0 {
        return Err(Error::param("dim", "need at least one feature"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = StudentT::new(3.0).expect("valid degrees of freedom");
    let coef: Vec<f64> = (0..dim).map(|j| 1.0 / (1.0 + j as f64)).collect();
    let examples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let signal: f64 = x.iter().zip(&coef).map(|(a, b)| a * b).sum();
            let scale = 0.1 + 0.4 * x[0].abs();
            let y = 0.5 + signal + scale * noise.sample(&mut rng);
            Example::regression(x, y)
        })
        .collect();
    Dataset::new(format!("heavytail(dim={dim})"), Task::Regression, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_regression_rows() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), &CsvSchema::regression()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.examples()[2], Example::regression(vec![7.0, 8.0], 9.0));
    }

    #[test]
    fn csv_without_header_and_target_column() {
        let f = write_tmp("1,2,3\n4,5,6\n");
        let schema = CsvSchema {
            target_column: Some(0),
            ..CsvSchema::regression()
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples()[0], Example::regression(vec![2.0, 3.0], 1.0));
    }

    #[test]
    fn csv_bad_row_is_named() {
        let f = write_tmp("a,b,y\n1,2,3\n4,x,6\n");
        let err = load_csv(f.path(), &CsvSchema::regression()).unwrap_err();
        match err {
            Error::Parse { row, reason, .. } => {
                assert_eq!(row, 3);
                assert!(reason.contains("non-numeric"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_value_and_ragged_rows() {
        let f = write_tmp("1,2,3\n4,,6\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::regression()),
            Err(Error::Parse { row: 2, .. })
        ));
        let f = write_tmp("1,2,3\n4,6\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::regression()),
            Err(Error::RowDimension { row: 2, .. })
        ));
    }

    #[test]
    fn csv_header_only_is_empty() {
        let f = write_tmp("a,b,y\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::regression()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn csv_unreadable_file() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &CsvSchema::regression()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_classification_labels_sorted() {
        let f = write_tmp("0.5,7\n0.1,3\n0.2,7\n");
        let ds = load_csv(f.path(), &CsvSchema::classification()).unwrap();
        assert_eq!(ds.task(), Task::Classification(2));
        let classes: Vec<_> = ds.examples().iter().map(|e| e.target).collect();
        assert_eq!(
            classes,
            vec![Target::Class(1), Target::Class(0), Target::Class(1)]
        );
    }

    #[test]
    fn libsvm_decodes_sparse_rows() {
        let f = write_tmp("+1 1:0.5 3:1.0\n-1 2:2\n");
        let ds = load_libsvm(f.path()).unwrap();
        assert_eq!(ds.task(), Task::Classification(2));
        assert_eq!(ds.examples()[0], Example::classification(vec![0.5, 0.0, 1.0], 1));
        assert_eq!(ds.examples()[1], Example::classification(vec![0.0, 2.0, 0.0], 0));
    }

    #[test]
    fn libsvm_rejects_duplicates_and_empty() {
        let f = write_tmp("+1 1:0.5 1:1.0\n");
        assert!(matches!(load_libsvm(f.path()), Err(Error::Parse { row: 1, .. })));
        let f = write_tmp("");
        assert!(matches!(load_libsvm(f.path()), Err(Error::EmptyDataset(_))));
        let f = write_tmp("+1 0:1\n");
        assert!(load_libsvm(f.path()).is_err());
    }

    fn idx_bytes(dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 0x08, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn idx_pair_loads() {
        let mut img = tempfile::NamedTempFile::new().unwrap();
        img.write_all(&idx_bytes(&[3, 2, 2], &(0u8..12).collect::<Vec<_>>()))
            .unwrap();
        let mut lab = tempfile::NamedTempFile::new().unwrap();
        lab.write_all(&idx_bytes(&[3], &[2, 0, 1])).unwrap();
        let ds = load_idx(img.path(), lab.path(), None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.task(), Task::Classification(3));
        assert_eq!(ds.examples()[1].features, vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(ds.examples()[1].target, Target::Class(0));
        let ds = load_idx(img.path(), lab.path(), Some(2)).unwrap();
        assert_eq!(ds.len(), 2);

        let mut short = tempfile::NamedTempFile::new().unwrap();
        short.write_all(&idx_bytes(&[3, 2, 2], &[0u8; 5])).unwrap();
        assert!(load_idx(short.path(), lab.path(), None).is_err());
    }

    fn toy(n: usize) -> Dataset {
        let ex = (0..n)
            .map(|i| Example::regression(vec![i as f64], i as f64))
            .collect();
        Dataset::new("toy", Task::Regression, ex).unwrap()
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = toy(9);
        let (a, b) = split(&ds, 2.0 / 3.0, 7).unwrap();
        assert_eq!((a.len(), b.len()), (6, 3));
        let mut all: Vec<f64> = a
            .examples()
            .iter()
            .chain(b.examples())
            .map(|e| e.features[0])
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..9).map(|i| i as f64).collect::<Vec<_>>());

        let (a2, _) = split(&ds, 2.0 / 3.0, 7).unwrap();
        assert_eq!(a, a2);

        let (a, b) = split(&toy(2), 0.999, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(split(&toy(1), 0.5, 1).is_err());
        assert!(split(&toy(5), 1.0, 1).is_err());
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let train = Dataset::new(
            "t",
            Task::Regression,
            vec![
                Example::regression(vec![1.0, 5.0], 0.0),
                Example::regression(vec![3.0, 5.0], 0.0),
            ],
        )
        .unwrap();
        let val = Dataset::new(
            "v",
            Task::Regression,
            vec![Example::regression(vec![5.0, 7.0], 0.0)],
        )
        .unwrap();
        let (out, st) = standardize(&train, &[&val]).unwrap();
        assert_eq!(st.mean, vec![2.0, 5.0]);
        assert_eq!(out[0].examples()[0].features, vec![-1.0, 0.0]);
        assert_eq!(out[0].examples()[1].features, vec![1.0, 0.0]);
        // validation mapped with train mean/scale, not its own
        assert_eq!(out[1].examples()[0].features, vec![3.0, 2.0]);
    }

    #[test]
    fn standardized_train_has_zero_mean() {
        let ds = synth_heavy_tail(200, 4, 3).unwrap();
        let (out, _) = standardize(&ds, &[]).unwrap();
        for j in 0..4 {
            let m: f64 = out[0].examples().iter().map(|e| e.features[j]).sum::<f64>() / 200.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn twopoint_generation() {
        let a = synth_twopoint(500, 0.1, 0.0, 1.0, 11).unwrap();
        let b = synth_twopoint(500, 0.1, 0.0, 1.0, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.feature_dim(), 0);
        let hi = a
            .examples()
            .iter()
            .filter(|e| e.target == Target::Value(1.0))
            .count();
        assert!(hi > 20 && hi < 90);
        assert!(synth_twopoint(5, 1.0, 0.0, 1.0, 0).is_err());
        assert!(synth_twopoint(5, 0.5, 0.6, 0.2, 0).is_err());
    }

    /// Tau-grid minimization of `[l - tau]_+ / alpha + tau` over the two atoms.
    fn grid_population_cvar(law: &TwoPointLaw, w: f64, alpha: f64) -> f64 {
        let a = (w - law.hi).abs();
        let b = (w - law.lo).abs();
        (0..=100_000)
            .map(|k| {
                let t = k as f64 * 1e-5;
                (law.p * (a - t).max(0.0) + (1.0 - law.p) * (b - t).max(0.0)) / alpha + t
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn twopoint_population_cvar() {
        let law = TwoPointLaw::new(0.1, 0.0, 1.0).unwrap();
        for w in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let c = law.population_cvar(w, 0.05, 1.0);
            // the 5% tail sits entirely on whichever atom is farther from w
            assert!((c - (w - 1.0f64).abs().max(w)).abs() < 1e-12);
            assert!((c - grid_population_cvar(&law, w, 0.05)).abs() < 1e-4);
        }
        let law = TwoPointLaw::new(0.5, 0.2, 0.7).unwrap();
        for w in [0.0, 0.3, 0.45, 0.9] {
            let c = law.population_cvar(w, 1.0, 1.0);
            assert!((c - 0.5 * ((w - 0.2f64).abs() + (w - 0.7f64).abs())).abs() < 1e-12);
        }
        let law = TwoPointLaw::new(0.3, 0.1, 0.8).unwrap();
        for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for alpha in [0.1, 0.3, 0.5, 0.9] {
                let c = law.population_cvar(w, alpha, 1.0);
                assert!((c - grid_population_cvar(&law, w, alpha)).abs() < 1e-4);
            }
        }
    }
}
