//! Dataset representation, CSV ingestion, synthetic generation, partitioning
//! and minibatch sampling.
//!
//! A dataset couples a dense feature matrix with binary labels and a discrete
//! group attribute. Partitioning follows the 62.5/12.5/25 train/validation/test
//! proportions, with the training set further divided into five folds for
//! cross-validated training runs.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix_seed, stream_rng};
use crate::scalar::{sigmoid, Scalar};

/// Number of cross-validation folds carved out of the training split.
pub const NUM_FOLDS: usize = 5;

const TRAIN_FRACTION: f64 = 0.625;
const VAL_FRACTION: f64 = 0.125;

/// Feature matrix, binary labels and group attribute for one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Array2<T>,
    labels: Vec<u8>,
    groups: Vec<usize>,
    group_names: Vec<String>,
    feature_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    /// Build a dataset, validating every structural invariant.
    pub fn new(
        features: Array2<T>,
        labels: Vec<u8>,
        groups: Vec<usize>,
        group_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::data("dataset is empty"));
        }
        if labels.len() != n || groups.len() != n {
            return Err(Error::data(format!(
                "length mismatch: {} feature rows, {} labels, {} group labels",
                n,
                labels.len(),
                groups.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::data(format!(
                "{} feature columns but {} feature names",
                features.ncols(),
                feature_names.len()
            )));
        }
        let k = group_names.len();
        if k == 0 {
            return Err(Error::data("no groups defined"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::data(format!("label {bad} is not 0 or 1")));
        }
        let mut seen = vec![false; k];
        for &g in &groups {
            if g >= k {
                return Err(Error::data(format!(
                    "group index {g} out of range for {k} groups"
                )));
            }
            seen[g] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::data(format!(
                "group {:?} has no examples",
                group_names[missing]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("features contain non-finite values"));
        }
        Ok(Dataset {
            features,
            labels,
            groups,
            group_names,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, T> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Number of examples in each group.
    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_groups()];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts
    }

    /// Group counts restricted to an index pool.
    pub fn group_counts_in(&self, pool: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_groups()];
        for &i in pool {
            counts[self.groups[i]] += 1;
        }
        counts
    }

    /// Gather a batch of rows into a dense matrix plus labels and groups.
    pub fn gather(&self, indices: &[usize]) -> (Array2<T>, Vec<u8>, Vec<usize>) {
        let mut x = Array2::zeros((indices.len(), self.num_features()));
        let mut y = Vec::with_capacity(indices.len());
        let mut g = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            x.row_mut(row).assign(&self.features.row(i));
            y.push(self.labels[i]);
            g.push(self.groups[i]);
        }
        (x, y, g)
    }

    /// Standardize features to zero mean and unit variance, with the moments
    /// estimated on `train_idx` only and applied to every row. Constant
    /// columns are left unscaled.
    pub fn standardized(&self, train_idx: &[usize]) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(Error::config("cannot standardize on an empty training split"));
        }
        let m = self.num_features();
        let n_train = T::from_usize_lossy(train_idx.len());
        let mut mean = vec![T::zero(); m];
        for &i in train_idx {
            for j in 0..m {
                mean[j] += self.features[(i, j)];
            }
        }
        for mj in mean.iter_mut() {
            *mj = *mj / n_train;
        }
        let mut var = vec![T::zero(); m];
        for &i in train_idx {
            for j in 0..m {
                let d = self.features[(i, j)] - mean[j];
                var[j] += d * d;
            }
        }
        let tiny = T::from_f64_lossy(1e-12);
        let scale: Vec<T> = var
            .iter()
            .map(|&v| {
                let sd = (v / n_train).sqrt();
                if sd > tiny {
                    T::one() / sd
                } else {
                    T::one()
                }
            })
            .collect();
        let mut features = self.features.clone();
        for mut row in features.rows_mut() {
            for j in 0..m {
                row[j] = (row[j] - mean[j]) * scale[j];
            }
        }
        Ok(Dataset {
            features,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            group_names: self.group_names.clone(),
            feature_names: self.feature_names.clone(),
        })
    }

    /// Write the dataset as a CSV loadable by [`load_csv`]: feature columns,
    /// then `label`, then `group` (as the group name).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("label".to_string());
        header.push("group".to_string());
        w.write_record(&header)
            .map_err(|e| Error::data(e.to_string()))?;
        for i in 0..self.len() {
            let mut record: Vec<String> = (0..self.num_features())
                .map(|j| format!("{}", self.features[(i, j)]))
                .collect();
            record.push(self.labels[i].to_string());
            record.push(self.group_names[self.groups[i]].clone());
            w.write_record(&record)
                .map_err(|e| Error::data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Load a dataset from a CSV file with a header row.
///
/// All columns other than `label_col` and `group_col` become features, in
/// header order. Group names are sorted lexicographically and mapped to
/// indices `0..K`.
pub fn load_csv<T: Scalar>(path: &Path, label_col: &str, group_col: &str) -> Result<Dataset<T>> {
    if !path.exists() {
        return Err(Error::config(format!("file not found: {}", path.display())));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let label_pos = headers
        .iter()
        .position(|h| h == label_col)
        .ok_or_else(|| Error::config(format!("label column {label_col:?} not found")))?;
    let group_pos = headers
        .iter()
        .position(|h| h == group_col)
        .ok_or_else(|| Error::config(format!("group column {group_col:?} not found")))?;
    if label_pos == group_pos {
        return Err(Error::config(
            "label and group columns must be distinct".to_string(),
        ));
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != label_pos && j != group_pos)
        .collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut values: Vec<T> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut raw_groups: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row_no = row_idx + 1; // 1-based data row for error messages
        let record = record.map_err(|e| Error::data(format!("row {row_no}: {e}")))?;
        for &j in &feature_cols {
            let cell = record
                .get(j)
                .ok_or_else(|| Error::data(format!("row {row_no}: missing field {:?}", headers[j])))?;
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::data(format!(
                    "row {row_no}, column {:?}: {cell:?} is not numeric",
                    headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "row {row_no}, column {:?}: non-finite value {cell:?}",
                    headers[j]
                )));
            }
            values.push(T::from_f64_lossy(v));
        }
        let label_cell = record
            .get(label_pos)
            .ok_or_else(|| Error::data(format!("row {row_no}: missing label")))?;
        let label: f64 = label_cell.trim().parse().map_err(|_| {
            Error::data(format!(
                "row {row_no}, column {label_col:?}: {label_cell:?} is not a binary label"
            ))
        })?;
        if label == 0.0 {
            labels.push(0);
        } else if label == 1.0 {
            labels.push(1);
        } else {
            return Err(Error::data(format!(
                "row {row_no}, column {label_col:?}: label {label_cell:?} is not 0 or 1"
            )));
        }
        let group_cell = record
            .get(group_pos)
            .ok_or_else(|| Error::data(format!("row {row_no}: missing group")))?;
        raw_groups.push(group_cell.trim().to_string());
    }
    if labels.is_empty() {
        return Err(Error::data("file has a header but no data rows"));
    }

    let mut group_names: Vec<String> = raw_groups.clone();
    group_names.sort();
    group_names.dedup();
    let index: BTreeMap<&str, usize> = group_names
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let groups: Vec<usize> = raw_groups.iter().map(|g| index[g.as_str()]).collect();

    let n = labels.len();
    let features = Array2::from_shape_vec((n, feature_cols.len()), values)
        .map_err(|e| Error::data(e.to_string()))?;
    Dataset::new(features, labels, groups, group_names, feature_names)
}

/// Train/validation/test split plus the five training folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub seed: u64,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl Partition {
    /// Training pool for one cross-validation run: every fold except `fold_id`.
    pub fn train_pool(&self, fold_id: usize) -> Result<Vec<usize>> {
        if fold_id >= self.folds.len() {
            return Err(Error::config(format!(
                "fold {fold_id} out of range for {} folds",
                self.folds.len()
            )));
        }
        Ok(self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold_id)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect())
    }

    /// Development set for one cross-validation run.
    pub fn dev_pool(&self, fold_id: usize) -> Result<&[usize]> {
        self.folds
            .get(fold_id)
            .map(|f| f.as_slice())
            .ok_or_else(|| {
                Error::config(format!(
                    "fold {fold_id} out of range for {} folds",
                    self.folds.len()
                ))
            })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::data(format!("invalid partition JSON: {e}")))
    }
}

/// Split `n` examples 62.5/12.5/25 by a seeded random permutation, then form
/// five folds over the training indices by round-robin.
pub fn partition(n: usize, seed: u64) -> Result<Partition> {
    if n < 16 {
        return Err(Error::config(format!(
            "need at least 16 examples to partition, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0);
    order.shuffle(&mut rng);

    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = (VAL_FRACTION * n as f64).round() as usize;
    let train_idx = order[..n_train].to_vec();
    let val_idx = order[n_train..n_train + n_val].to_vec();
    let test_idx = order[n_train + n_val..].to_vec();

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); NUM_FOLDS];
    for (i, &idx) in train_idx.iter().enumerate() {
        folds[i % NUM_FOLDS].push(idx);
    }
    Ok(Partition {
        seed,
        train_idx,
        val_idx,
        test_idx,
        folds,
    })
}

/// Ground truth for a synthetic cohort: group-conditional Gaussian features
/// and logistic labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Relative group sizes; must sum to 1.
    pub group_proportions: Vec<f64>,
    /// Per-group feature means, one length-`m` vector per group.
    pub means: Vec<Vec<f64>>,
    /// Shared isotropic feature standard deviation.
    pub covariance_scale: f64,
    /// Per-group true logistic coefficients, one length-`m` vector per group.
    pub coefficients: Vec<Vec<f64>>,
    /// Per-group true intercepts.
    pub intercepts: Vec<f64>,
    /// Total number of examples to draw.
    pub n: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn num_groups(&self) -> usize {
        self.group_proportions.len()
    }

    pub fn num_features(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_groups();
        if k == 0 {
            return Err(Error::config("synthetic spec has no groups"));
        }
        let total: f64 = self.group_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "group proportions sum to {total}, expected 1"
            )));
        }
        if self.group_proportions.iter().any(|&p| p <= 0.0) {
            return Err(Error::config("group proportions must all be positive"));
        }
        if self.means.len() != k || self.coefficients.len() != k || self.intercepts.len() != k {
            return Err(Error::config(
                "means, coefficients and intercepts must all have one entry per group",
            ));
        }
        let m = self.num_features();
        if self.means.iter().any(|v| v.len() != m)
            || self.coefficients.iter().any(|v| v.len() != m)
        {
            return Err(Error::config(
                "per-group mean and coefficient vectors must share one length",
            ));
        }
        if self.n == 0 {
            return Err(Error::config("synthetic spec requests zero examples"));
        }
        if !(self.covariance_scale.is_finite() && self.covariance_scale > 0.0) {
            return Err(Error::config("covariance scale must be positive and finite"));
        }
        Ok(())
    }
}

const SYNTH_STREAM_MEMBERSHIP: u64 = 0;
const SYNTH_STREAM_FEATURES: u64 = 1;
const SYNTH_STREAM_LABELS: u64 = 2;
const MAX_MEMBERSHIP_ATTEMPTS: u64 = 100;

fn draw_memberships(spec: &SyntheticSpec, attempt: u64) -> Vec<usize> {
    let mut rng = stream_rng(
        mix_seed(spec.seed, attempt),
        SYNTH_STREAM_MEMBERSHIP,
    );
    let mut cumulative: Vec<f64> = Vec::with_capacity(spec.num_groups());
    let mut acc = 0.0;
    for &p in &spec.group_proportions {
        acc += p;
        cumulative.push(acc);
    }
    (0..spec.n)
        .map(|_| {
            let u: f64 = rng.random();
            cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(spec.num_groups() - 1)
        })
        .collect()
}

/// Draw a synthetic dataset: multinomial group memberships, group-conditional
/// Gaussian features, Bernoulli labels through the group's true logistic
/// model. Deterministic given `spec.seed`.
pub fn synthesize<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let k = spec.num_groups();
    let m = spec.num_features();

    let mut memberships = None;
    for attempt in 0..MAX_MEMBERSHIP_ATTEMPTS {
        let draw = draw_memberships(spec, attempt);
        let mut counts = vec![0usize; k];
        for &g in &draw {
            counts[g] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            memberships = Some(draw);
            break;
        }
    }
    let groups = memberships.ok_or_else(|| {
        Error::data(format!(
            "failed to draw at least one example for every group after {MAX_MEMBERSHIP_ATTEMPTS} attempts"
        ))
    })?;

    let mut feature_rng: ChaCha8Rng = stream_rng(spec.seed, SYNTH_STREAM_FEATURES);
    let mut label_rng: ChaCha8Rng = stream_rng(spec.seed, SYNTH_STREAM_LABELS);
    let normal = StandardNormal;

    let mut features = Array2::<T>::zeros((spec.n, m));
    let mut labels = Vec::with_capacity(spec.n);
    for (i, &g) in groups.iter().enumerate() {
        let mut z = 0.0f64;
        for j in 0..m {
            let noise: f64 = normal.sample(&mut feature_rng);
            let x = spec.means[g][j] + spec.covariance_scale * noise;
            features[(i, j)] = T::from_f64_lossy(x);
            z += spec.coefficients[g][j] * x;
        }
        z += spec.intercepts[g];
        let p = sigmoid(z);
        let y = if label_rng.random::<f64>() < p { 1 } else { 0 };
        labels.push(y);
    }

    let width = (k.max(2) - 1).to_string().len();
    let group_names = (0..k).map(|g| format!("g{g:0width$}")).collect();
    let feature_names = (0..m).map(|j| format!("x{j}")).collect();
    Dataset::new(features, labels, groups, group_names, feature_names)
}

/// Draw `batch_size` indices uniformly with replacement from the pool.
pub fn minibatch_standard(
    pool: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::config("cannot sample a minibatch from an empty pool"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Ok((0..batch_size)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect())
}

/// Draw a group-balanced minibatch: `batch_size / K` indices per group
/// (uniformly with replacement within the group), with the remainder assigned
/// to groups chosen uniformly without replacement.
pub fn minibatch_balanced<T: Scalar>(
    ds: &Dataset<T>,
    pool: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let k = ds.num_groups();
    if batch_size < k {
        return Err(Error::config(format!(
            "batch size {batch_size} is smaller than the number of groups {k}"
        )));
    }
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in pool {
        by_group[ds.groups()[i]].push(i);
    }
    for (g, members) in by_group.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::data(format!(
                "group {:?} has no examples in the sampling pool",
                ds.group_names()[g]
            )));
        }
    }
    let base = batch_size / k;
    let remainder = batch_size % k;
    let mut per_group = vec![base; k];
    if remainder > 0 {
        for chosen in rand::seq::index::sample(rng, k, remainder) {
            per_group[chosen] += 1;
        }
    }
    let mut batch = Vec::with_capacity(batch_size);
    for (g, &count) in per_group.iter().enumerate() {
        let members = &by_group[g];
        for _ in 0..count {
            batch.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(batch)
}
