//! Flow datasets: ingestion, stratified partitioning, few-shot subsets,
//! normalisation and class-balanced batch sampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Standard deviations below this are replaced by 1.
pub const STD_FLOOR: f64 = 1e-8;

/// Numeric flow features with integer class labels. Class id 0 is benign.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_map: Vec<String>,
    pub feature_names: Vec<String>,
    /// Position of each row in the source it was loaded or generated from.
    pub row_ids: Vec<usize>,
}

impl FlowDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_map: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Shape(format!(
                "{} feature names vs {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_map.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside class map of size {}",
                class_map.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        let row_ids = (0..labels.len()).collect();
        Ok(FlowDataset {
            features,
            labels,
            class_map,
            feature_names,
            row_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_map.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices grouped by class id, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_map.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FlowDataset {
        FlowDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_map: self.class_map.clone(),
            feature_names: self.feature_names.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub fn with_features(&self, features: Array2<f64>) -> FlowDataset {
        FlowDataset {
            features,
            ..self.clone()
        }
    }

    /// Writes the dataset as CSV with the label column last.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(label_column.to_string());
        wtr.write_record(&header)?;
        for (row, &label) in self.features.outer_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.class_map[label].clone());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_class_map(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct ClassMap<'a> {
            classes: &'a [String],
        }
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(&mut f, &ClassMap { classes: &self.class_map })?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label_column: String,
    /// Class name forced to id 0, matched case-insensitively. When unset the
    /// first class to appear becomes id 0.
    pub benign: Option<String>,
    /// Fixes the class order instead of deriving it from the data.
    pub class_map: Option<Vec<String>>,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        CsvOptions {
            label_column: label_column.into(),
            benign: None,
            class_map: None,
        }
    }

    pub fn benign(mut self, name: impl Into<String>) -> Self {
        self.benign = Some(name.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped: usize,
}

/// Reads a flow CSV. Rows with a NaN, infinite or empty feature are dropped
/// and counted in the returned report.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<(FlowDataset, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, opts)
}

pub fn read_csv<R: std::io::Read>(reader: R, opts: &CsvOptions) -> Result<(FlowDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == opts.label_column)
        .ok_or_else(|| Error::MissingLabelColumn(opts.label_column.clone()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut report = LoadReport {
        rows_read: 0,
        dropped: 0,
    };
    let mut row_buf = Vec::with_capacity(feature_names.len());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        row_buf.clear();
        let mut finite = true;
        for (i, field) in rec.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            if field.is_empty() {
                finite = false;
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::ParseFeature {
                column: header[i].to_string(),
                row,
                value: field.to_string(),
            })?;
            finite &= v.is_finite();
            row_buf.push(v);
        }
        if !finite {
            report.dropped += 1;
            continue;
        }
        values.extend_from_slice(&row_buf);
        raw_labels.push(rec[label_idx].to_string());
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut class_map: Vec<String> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    if let Some(fixed) = &opts.class_map {
        for (i, name) in fixed.iter().enumerate() {
            ids.insert(name.clone(), i);
        }
        class_map = fixed.clone();
    } else if let Some(benign) = &opts.benign {
        let name = raw_labels
            .iter()
            .find(|l| l.eq_ignore_ascii_case(benign))
            .ok_or_else(|| Error::MissingBenignClass(benign.clone()))?;
        ids.insert(name.clone(), 0);
        class_map.push(name.clone());
    }
    let mut labels = Vec::with_capacity(raw_labels.len());
    for name in &raw_labels {
        let id = match ids.get(name) {
            Some(&id) => id,
            None if opts.class_map.is_some() => {
                return Err(Error::InvalidArgument(format!("unknown class `{name}`")))
            }
            None => {
                let id = class_map.len();
                ids.insert(name.clone(), id);
                class_map.push(name.clone());
                id
            }
        };
        labels.push(id);
    }

    let features = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let ds = FlowDataset::new(features, labels, class_map, feature_names)?;
    Ok((ds, report))
}

pub fn read_class_map(path: &Path) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct ClassMap {
        classes: Vec<String>,
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let cm: ClassMap = serde_json::from_reader(f)?;
    Ok(cm.classes)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Per class, `floor(fraction * n_c)` rows go to the first split and the
/// rest to the second. Each output keeps source row order.
pub fn stratified_split(ds: &FlowDataset, fraction: f64, seed: u64) -> Result<(FlowDataset, FlowDataset)> {
    check_fraction(fraction)?;
    let (first, second) = stratified_split_indices(ds, fraction, seed)?;
    Ok((ds.select(&first), ds.select(&second)))
}

pub fn stratified_split_indices(
    ds: &FlowDataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(fraction)?;
    let mut rng = Rng::new(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut rows) in ds.indices_by_class().into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::InsufficientSamples {
                class: ds.class_map[class].clone(),
                have: rows.len(),
                need: 2,
            });
        }
        rng.shuffle(&mut rows);
        let n_first = (fraction * rows.len() as f64).floor() as usize;
        first.extend_from_slice(&rows[..n_first]);
        second.extend_from_slice(&rows[n_first..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

/// Few-shot subset size: `n_benign` benign rows and `n_per_attack` rows of
/// every attack class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub n_benign: usize,
    pub n_per_attack: usize,
    pub seed: u64,
}

pub fn sample_subset(train: &FlowDataset, spec: &SubsetSpec) -> Result<FlowDataset> {
    let rows = sample_subset_indices(train, spec)?;
    Ok(train.select(&rows))
}

pub fn sample_subset_indices(train: &FlowDataset, spec: &SubsetSpec) -> Result<Vec<usize>> {
    if spec.n_benign == 0 || spec.n_per_attack == 0 {
        return Err(Error::InvalidArgument(
            "subset sizes must be at least 1".into(),
        ));
    }
    let mut rng = Rng::new(spec.seed);
    let mut out = Vec::new();
    for (class, rows) in train.indices_by_class().into_iter().enumerate() {
        let need = if class == 0 {
            spec.n_benign
        } else {
            spec.n_per_attack
        };
        if rows.len() < need {
            return Err(Error::InsufficientSamples {
                class: train.class_map[class].clone(),
                have: rows.len(),
                need,
            });
        }
        out.extend(rng.sample_indices(rows.len(), need).into_iter().map(|i| rows[i]));
    }
    out.sort_unstable();
    Ok(out)
}

/// A single cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified K-fold over the labels. Each class is permuted and cut into
/// K chunks whose sizes differ by at most one, larger chunks first.
pub fn stratified_kfold(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K = {k} < 2")));
    }
    let mut groups = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut val: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (class, mut rows) in groups.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            return Err(Error::InsufficientSamples {
                class: format!("#{class}"),
                have: rows.len(),
                need: k,
            });
        }
        rng.shuffle(&mut rows);
        let base = rows.len() / k;
        let extra = rows.len() % k;
        let mut start = 0;
        for (fold, v) in val.iter_mut().enumerate() {
            let size = base + usize::from(fold < extra);
            v.extend_from_slice(&rows[start..start + size]);
            start += size;
        }
    }
    let folds = val
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            let mut in_val = vec![false; labels.len()];
            for &i in &v {
                in_val[i] = true;
            }
            let train = (0..labels.len()).filter(|&i| !in_val[i]).collect();
            Fold { train, val: v }
        })
        .collect();
    Ok(folds)
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and standard deviation of each column.
    pub fn fit(features: &Array2<f64>) -> Result<Normalizer> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean = features.mean_axis(Axis(0)).expect("nonempty");
        let std = features
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &mu)| {
                let var = col.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                let s = var.sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Normalizer {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        (features - &mean) / &std
    }

    pub fn denormalize(&self, features: &Array2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        features * &std + &mean
    }

    pub fn apply_dataset(&self, ds: &FlowDataset) -> FlowDataset {
        ds.with_features(self.apply(&ds.features))
    }
}

pub fn fit_normalizer(ds: &FlowDataset) -> Result<Normalizer> {
    Normalizer::fit(&ds.features)
}

pub fn apply_normalizer(nz: &Normalizer, ds: &FlowDataset) -> FlowDataset {
    nz.apply_dataset(ds)
}

/// Per-row sampling probabilities that give every present class equal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub w: Vec<f64>,
}

pub fn compute_sample_weights(labels: &[usize]) -> SampleWeights {
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let w = labels
        .iter()
        .map(|&l| 1.0 / (counts[l] as f64 * present))
        .collect();
    SampleWeights { w }
}

/// Draws class-balanced batches with replacement.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(weights: &SampleWeights) -> Result<Self> {
        let dist = WeightedIndex::new(&weights.w)
            .map_err(|e| Error::InvalidArgument(format!("sample weights: {e}")))?;
        Ok(BalancedSampler { dist })
    }

    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        Self::new(&compute_sample_weights(labels))
    }

    pub fn draw(&self, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch_size).map(|_| self.dist.sample(rng)).collect()
    }
}

pub fn draw_balanced_batch(weights: &SampleWeights, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!("batch size {batch_size} < 2")));
    }
    Ok(BalancedSampler::new(weights)?.draw(batch_size, rng))
}

/// Collapses every attack class into a single `malicious` class.
pub fn binarize_labels(ds: &FlowDataset) -> FlowDataset {
    FlowDataset {
        labels: binarize(&ds.labels),
        class_map: vec!["benign".into(), "malicious".into()],
        ..ds.clone()
    }
}

pub fn binarize(labels: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| usize::from(l != 0)).collect()
}

/// Parameters for isotropic Gaussian blobs, one per class. Class `c` is
/// centred at `separation * sigma / sqrt(2)` along axis `c`, so every pair
/// of centres is `separation` standard deviations apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub counts: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

pub fn synthetic_blobs(spec: &BlobSpec) -> Result<FlowDataset> {
    use rand_distr::StandardNormal;
    let n_classes = spec.counts.len();
    if n_classes == 0 || spec.dim < n_classes {
        return Err(Error::InvalidArgument(format!(
            "blobs need dim >= classes (dim {}, classes {n_classes})",
            spec.dim
        )));
    }
    let offset = spec.separation * spec.sigma / std::f64::consts::SQRT_2;
    let n: usize = spec.counts.iter().sum();
    let mut rng = Rng::new(spec.seed);
    let mut features = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, &count) in spec.counts.iter().enumerate() {
        for _ in 0..count {
            for j in 0..spec.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[row, j]] = spec.sigma * z + if j == class { offset } else { 0.0 };
            }
            labels.push(class);
            row += 1;
        }
    }
    let class_map = std::iter::once("benign".to_string())
        .chain((1..n_classes).map(|c| format!("attack{c}")))
        .collect();
    let feature_names = (0..spec.dim).map(|j| format!("f{j}")).collect();
    FlowDataset::new(features, labels, class_map, feature_names)
}
