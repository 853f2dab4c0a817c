//! Test-set evaluation with a stratified percentile bootstrap.
//!
//! Replicates resample with replacement within each (label, group) stratum,
//! preserving stratum sizes exactly, so every replicate keeps each group's
//! size and class mix. For each replicate and each of the fold models a full
//! metric table is computed; absolute confidence intervals pool the
//! model × replicate values per (metric, scope), relative intervals take per
//! replicate differences of the mean-over-models value against a baseline
//! evaluated on the *same* replicates (pairing is realized by a shared
//! bootstrap seed), and worst-case intervals use each table's worst row.
//!
//! Quantiles interpolate linearly between order statistics. Undefined values
//! (a single-class AUC or an unfit calibration curve in a replicate) are
//! excluded from their distribution and counted in the report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{group_metric_table, GroupMetricTable, RecalTransform};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use rand::Rng;

pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Bootstrap parameters. Strata are always label × group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    /// Replicate count B.
    pub b: usize,
    /// Two-sided miscoverage: the interval spans the α/2 and 1−α/2 quantiles.
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapSpec {
    pub fn new(seed: u64) -> Self {
        BootstrapSpec {
            b: DEFAULT_REPLICATES,
            alpha: DEFAULT_ALPHA,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::config("bootstrap needs at least one replicate"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha {} must lie strictly between 0 and 1",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Scores of each fold model on the same test rows, plus the row labels and
/// group attributes.
#[derive(Debug, Clone)]
pub struct EvalData<'a, T> {
    /// One score vector per model, each aligned with `labels`.
    pub scores: &'a [Vec<T>],
    pub labels: &'a [u8],
    pub groups: &'a [usize],
    pub group_names: &'a [String],
    pub transform: RecalTransform,
}

impl<T: Scalar> EvalData<'_, T> {
    fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::config("evaluation needs at least one model"));
        }
        let n = self.labels.len();
        if self.groups.len() != n {
            return Err(Error::config(format!(
                "{} labels but {} group attributes",
                n,
                self.groups.len()
            )));
        }
        for (m, s) in self.scores.iter().enumerate() {
            if s.len() != n {
                return Err(Error::config(format!(
                    "model {m} scored {} rows, expected {n}",
                    s.len()
                )));
            }
        }
        if self.group_names.is_empty() {
            return Err(Error::config("no groups defined"));
        }
        Ok(())
    }
}

/// Draw the B replicate index lists: within each (label, group) stratum,
/// resample its indices with replacement, preserving the stratum size.
/// Replicate r uses the independent stream (seed, r), so replicates can be
/// generated in any order.
pub fn bootstrap_indices(
    spec: &BootstrapSpec,
    labels: &[u8],
    groups: &[usize],
    group_names: &[String],
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let k = group_names.len();
    if labels.len() != groups.len() {
        return Err(Error::config(format!(
            "{} labels but {} group attributes",
            labels.len(),
            groups.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::data("cannot bootstrap an empty test set"));
    }
    // Strata in fixed (group, label) order.
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 2 * k];
    for (i, (&y, &g)) in labels.iter().zip(groups).enumerate() {
        if y > 1 {
            return Err(Error::data(format!("label {y} at row {i} is not 0/1")));
        }
        if g >= k {
            return Err(Error::data(format!(
                "group index {g} at row {i} out of range for {k} groups"
            )));
        }
        strata[2 * g + y as usize].push(i);
    }
    for g in 0..k {
        for y in 0..2 {
            if strata[2 * g + y].is_empty() {
                return Err(Error::data(format!(
                    "empty bootstrap stratum: label {y}, group {:?}",
                    group_names[g]
                )));
            }
        }
    }
    Ok((0..spec.b)
        .map(|r| {
            let mut rng = stream_rng(spec.seed, r as u64);
            let mut replicate = Vec::with_capacity(labels.len());
            for stratum in &strata {
                for _ in 0..stratum.len() {
                    replicate.push(stratum[rng.random_range(0..stratum.len())]);
                }
            }
            replicate
        })
        .collect())
}

/// Metric tables of every model on the full (unresampled) test set.
pub fn point_tables<T: Scalar>(data: &EvalData<'_, T>) -> Result<Vec<GroupMetricTable<T>>> {
    data.validate()?;
    data.scores
        .iter()
        .map(|s| group_metric_table(s, data.labels, data.groups, data.group_names, data.transform))
        .collect()
}

/// Metric tables for every (replicate, model) pair: result[r][m].
pub fn bootstrap_tables<T: Scalar>(
    data: &EvalData<'_, T>,
    indices: &[Vec<usize>],
) -> Result<Vec<Vec<GroupMetricTable<T>>>> {
    data.validate()?;
    indices
        .par_iter()
        .map(|rows| {
            let labels: Vec<u8> = rows.iter().map(|&i| data.labels[i]).collect();
            let groups: Vec<usize> = rows.iter().map(|&i| data.groups[i]).collect();
            data.scores
                .iter()
                .map(|s| {
                    let scores: Vec<T> = rows.iter().map(|&i| s[i]).collect();
                    group_metric_table(
                        &scores,
                        &labels,
                        &groups,
                        data.group_names,
                        data.transform,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Empirical quantile interval (α/2, 1−α/2) with linear interpolation
/// between order statistics.
pub fn percentile_ci<T: Scalar>(values: &[T], alpha: f64) -> Result<(T, T)> {
    if values.is_empty() {
        return Err(Error::config("cannot take quantiles of an empty sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("invalid alpha {alpha}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in bootstrap distribution"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q = |p: f64| -> T {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let frac = T::from_f64_lossy(h - lo as f64);
        if lo + 1 < sorted.len() {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        }
    };
    Ok((q(alpha / 2.0), q(1.0 - alpha / 2.0)))
}

/// The three reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    Loss,
    Ace,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auc, Metric::Loss, Metric::Ace];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Loss => "loss",
            Metric::Ace => "ace",
        }
    }
}

/// A reporting scope: the pooled test set, one group, or the worst group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Overall,
    Group(usize),
    WorstCase,
}

impl Scope {
    /// Overall, each group, worst-case: K+2 scopes.
    pub fn all(k: usize) -> Vec<Scope> {
        let mut scopes = vec![Scope::Overall];
        scopes.extend((0..k).map(Scope::Group));
        scopes.push(Scope::WorstCase);
        scopes
    }

    pub fn name(self, group_names: &[String]) -> String {
        match self {
            Scope::Overall => "overall".to_string(),
            Scope::Group(g) => group_names[g].clone(),
            Scope::WorstCase => "worst_case".to_string(),
        }
    }
}

/// The (metric, scope) cell of one table; `None` when undefined there.
pub fn table_value<T: Scalar>(
    table: &GroupMetricTable<T>,
    metric: Metric,
    scope: Scope,
) -> Option<T> {
    match scope {
        Scope::Overall => match metric {
            Metric::Auc => table.overall.auc,
            Metric::Loss => Some(table.overall.loss),
            Metric::Ace => table.overall.ace,
        },
        Scope::Group(g) => match metric {
            Metric::Auc => table.groups[g].auc,
            Metric::Loss => Some(table.groups[g].loss),
            Metric::Ace => table.groups[g].ace,
        },
        Scope::WorstCase => match metric {
            Metric::Auc => table.worst_case.auc,
            Metric::Loss => Some(table.worst_case.loss),
            Metric::Ace => table.worst_case.ace,
        },
    }
}

/// Pool one (metric, scope) cell over all (replicate, model) tables:
/// defined values plus the count of missing ones.
pub fn pooled_distribution<T: Scalar>(
    tables: &[Vec<GroupMetricTable<T>>],
    metric: Metric,
    scope: Scope,
) -> (Vec<T>, usize) {
    let mut values = Vec::with_capacity(tables.len() * tables.first().map_or(0, Vec::len));
    let mut missing = 0;
    for replicate in tables {
        for table in replicate {
            match table_value(table, metric, scope) {
                Some(v) => values.push(v),
                None => missing += 1,
            }
        }
    }
    (values, missing)
}

fn mean_defined<T: Scalar>(values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let defined: Vec<T> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().copied().sum::<T>() / T::from_usize_lossy(defined.len()))
    }
}

/// Per-replicate differences (method − baseline) of the mean-over-models
/// value in one (metric, scope) cell. Both table sets must come from the
/// same replicate index lists, which is enforced by requiring identical
/// bootstrap specs (pairing is keyed by the shared seed). Replicates where
/// either side is undefined are skipped.
pub fn relative_distribution<T: Scalar>(
    method: &[Vec<GroupMetricTable<T>>],
    method_spec: &BootstrapSpec,
    baseline: &[Vec<GroupMetricTable<T>>],
    baseline_spec: &BootstrapSpec,
    metric: Metric,
    scope: Scope,
) -> Result<Vec<T>> {
    if method_spec.seed != baseline_spec.seed || method_spec.b != baseline_spec.b {
        return Err(Error::config(
            "paired replicates require a shared bootstrap seed and replicate count",
        ));
    }
    if method.len() != baseline.len() {
        return Err(Error::config(format!(
            "{} method replicates vs {} baseline replicates",
            method.len(),
            baseline.len()
        )));
    }
    Ok(method
        .iter()
        .zip(baseline)
        .filter_map(|(m_tables, b_tables)| {
            let m = mean_defined(m_tables.iter().map(|t| table_value(t, metric, scope)));
            let b = mean_defined(b_tables.iter().map(|t| table_value(t, metric, scope)));
            match (m, b) {
                (Some(m), Some(b)) => Some(m - b),
                _ => None,
            }
        })
        .collect())
}

/// One report row: point estimate, absolute CI, optional relative CI, and
/// the number of missing values excluded from the absolute distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReportRow<T> {
    pub metric: String,
    pub scope: String,
    pub point: Option<T>,
    pub lower: Option<T>,
    pub upper: Option<T>,
    pub relative_point: Option<T>,
    pub relative_lower: Option<T>,
    pub relative_upper: Option<T>,
    pub n_missing: usize,
}

/// Full evaluation of one method: 3 metrics × (K+2) scopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricReport<T> {
    pub method: String,
    pub baseline: Option<String>,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub rows: Vec<ReportRow<T>>,
}

impl<T: Scalar> MetricReport<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::data(format!("invalid metric report: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "metric,scope,point,lower,upper,relative_point,relative_lower,relative_upper,n_missing\n",
        );
        let cell = |v: &Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.metric,
                r.scope,
                cell(&r.point),
                cell(&r.lower),
                cell(&r.upper),
                cell(&r.relative_point),
                cell(&r.relative_lower),
                cell(&r.relative_upper),
                r.n_missing
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Evaluate one method: absolute CIs always, relative CIs when a baseline
/// shares the test rows. The baseline is bootstrapped on the identical
/// replicate index lists, which pairs the differences.
pub fn evaluate_method<T: Scalar>(
    method_name: &str,
    method: &EvalData<'_, T>,
    baseline: Option<(&str, &EvalData<'_, T>)>,
    spec: &BootstrapSpec,
) -> Result<MetricReport<T>> {
    method.validate()?;
    if let Some((_, base)) = baseline {
        base.validate()?;
        if base.labels != method.labels || base.groups != method.groups {
            return Err(Error::config(
                "paired evaluation requires the method and baseline to share test rows",
            ));
        }
    }
    let indices = bootstrap_indices(spec, method.labels, method.groups, method.group_names)?;
    let method_point = point_tables(method)?;
    let method_boot = bootstrap_tables(method, &indices)?;
    let baseline_eval = match baseline {
        Some((name, base)) => Some((
            name.to_string(),
            point_tables(base)?,
            bootstrap_tables(base, &indices)?,
        )),
        None => None,
    };

    let k = method.group_names.len();
    let mut rows = Vec::with_capacity(3 * (k + 2));
    for metric in Metric::ALL {
        for scope in Scope::all(k) {
            let point = mean_defined(method_point.iter().map(|t| table_value(t, metric, scope)));
            let (dist, n_missing) = pooled_distribution(&method_boot, metric, scope);
            let (lower, upper) = if dist.is_empty() {
                (None, None)
            } else {
                let (lo, hi) = percentile_ci(&dist, spec.alpha)?;
                (Some(lo), Some(hi))
            };
            let (relative_point, relative_lower, relative_upper) = match &baseline_eval {
                None => (None, None, None),
                Some((_, base_point, base_boot)) => {
                    let bp = mean_defined(base_point.iter().map(|t| table_value(t, metric, scope)));
                    let rel_point = match (point, bp) {
                        (Some(m), Some(b)) => Some(m - b),
                        _ => None,
                    };
                    let diffs =
                        relative_distribution(&method_boot, spec, base_boot, spec, metric, scope)?;
                    if diffs.is_empty() {
                        (rel_point, None, None)
                    } else {
                        let (lo, hi) = percentile_ci(&diffs, spec.alpha)?;
                        (rel_point, Some(lo), Some(hi))
                    }
                }
            };
            rows.push(ReportRow {
                metric: metric.name().to_string(),
                scope: scope.name(method.group_names),
                point,
                lower,
                upper,
                relative_point,
                relative_lower,
                relative_upper,
                n_missing,
            });
        }
    }
    Ok(MetricReport {
        method: method_name.to_string(),
        baseline: baseline_eval.map(|(name, _, _)| name),
        b: spec.b,
        alpha: spec.alpha,
        seed: spec.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::sigmoid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|g| format!("g{g}")).collect()
    }

    /// Deterministic little test set: 2 groups, both classes in each.
    fn small_data() -> (Vec<u8>, Vec<usize>) {
        let labels = vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 1, 0];
        let groups = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
        (labels, groups)
    }

    #[test]
    fn replicates_preserve_stratum_sizes() {
        let mut labels = vec![1u8; 10];
        labels.extend(vec![0u8; 90]);
        let groups = vec![0usize; 100];
        let spec = BootstrapSpec { b: 20, alpha: 0.05, seed: 4 };
        let reps = bootstrap_indices(&spec, &labels, &groups, &names(1)).unwrap();
        assert_eq!(reps.len(), 20);
        for rep in &reps {
            assert_eq!(rep.len(), 100);
            let ones = rep.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones, 10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn stratum_sizes_preserved_under_fuzz(seed in 0u64..10_000) {
            let mut rng = stream_rng(seed, 41);
            let k = rng.random_range(1..4usize);
            let n = rng.random_range((4 * k)..120);
            // Force every (group, label) stratum non-empty, then fill randomly.
            let mut labels = Vec::new();
            let mut groups = Vec::new();
            for g in 0..k {
                for y in 0..2u8 {
                    labels.push(y);
                    groups.push(g);
                }
            }
            while labels.len() < n {
                labels.push(rng.random_range(0..2u32) as u8);
                groups.push(rng.random_range(0..k));
            }
            let mut counts = vec![0usize; 2 * k];
            for (&y, &g) in labels.iter().zip(&groups) {
                counts[2 * g + y as usize] += 1;
            }
            let spec = BootstrapSpec { b: 5, alpha: 0.05, seed };
            let reps = bootstrap_indices(&spec, &labels, &groups, &names(k)).unwrap();
            for rep in &reps {
                let mut got = vec![0usize; 2 * k];
                for &i in rep {
                    got[2 * groups[i] + labels[i] as usize] += 1;
                }
                prop_assert_eq!(&got, &counts);
            }
        }
    }

    #[test]
    fn empty_stratum_is_named() {
        // Group "minority" has no negatives.
        let labels = vec![0, 1, 1, 1];
        let groups = vec![0, 0, 1, 1];
        let names = vec!["majority".to_string(), "minority".to_string()];
        let spec = BootstrapSpec::new(1);
        let err = bootstrap_indices(&spec, &labels, &groups, &names).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("minority"), "{err}");
        assert!(err.to_string().contains("label 0"), "{err}");
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let (labels, groups) = small_data();
        let spec = BootstrapSpec { b: 7, alpha: 0.05, seed: 9 };
        let a = bootstrap_indices(&spec, &labels, &groups, &names(2)).unwrap();
        let b = bootstrap_indices(&spec, &labels, &groups, &names(2)).unwrap();
        assert_eq!(a, b);
        let other = BootstrapSpec { seed: 10, ..spec };
        let c = bootstrap_indices(&other, &labels, &groups, &names(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn distinct_index_fraction_near_632() {
        // One large stratum: the classical 1 − 1/e distinct fraction.
        let labels = vec![1u8; 5000];
        let mut all = labels.clone();
        all.extend(vec![0u8; 5000]);
        let groups = vec![0usize; 10_000];
        let spec = BootstrapSpec { b: 20, alpha: 0.05, seed: 3 };
        let reps = bootstrap_indices(&spec, &all, &groups, &names(1)).unwrap();
        let mut fractions = Vec::new();
        for rep in &reps {
            let distinct: HashSet<usize> = rep.iter().copied().collect();
            fractions.push(distinct.len() as f64 / rep.len() as f64);
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        let expect = 1.0 - (-1.0f64).exp();
        assert!((mean - expect).abs() < 0.01, "mean distinct fraction {mean}");
    }

    #[test]
    fn percentile_ci_order_statistic_examples() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (lo, hi) = percentile_ci(&v, 0.05).unwrap();
        assert_abs_diff_eq!(lo, 3.475, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 97.525, epsilon = 1e-12);

        let (lo, hi) = percentile_ci(&[7.0; 9], 0.05).unwrap();
        assert_eq!((lo, hi), (7.0, 7.0));

        let (lo, hi) = percentile_ci(&[0.0, 1.0], 0.05).unwrap();
        assert_abs_diff_eq!(lo, 0.025, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 0.975, epsilon = 1e-12);

        assert!(percentile_ci::<f64>(&[], 0.05).is_err());
        assert!(percentile_ci(&[1.0, f64::NAN], 0.05).is_err());
    }

    #[test]
    fn percentile_ci_is_sort_invariant() {
        let v = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        let mut w = v.clone();
        w.reverse();
        assert_eq!(
            percentile_ci(&v, 0.1).unwrap(),
            percentile_ci(&w, 0.1).unwrap()
        );
    }

    fn eval_data<'a>(
        scores: &'a [Vec<f64>],
        labels: &'a [u8],
        groups: &'a [usize],
        group_names: &'a [String],
    ) -> EvalData<'a, f64> {
        EvalData {
            scores,
            labels,
            groups,
            group_names,
            transform: RecalTransform::Logit,
        }
    }

    #[test]
    fn constant_predictor_has_zero_width_loss_ci() {
        let (labels, groups) = small_data();
        let scores = vec![vec![0.5; labels.len()]];
        let names = names(2);
        let data = eval_data(&scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 30, alpha: 0.05, seed: 5 };
        let report = evaluate_method("const", &data, None, &spec).unwrap();
        // Stratification fixes each group's class mix, so the loss of a
        // constant predictor is identical in every replicate.
        for row in report.rows.iter().filter(|r| r.metric == "loss") {
            assert_eq!(row.lower, row.upper, "{row:?}");
            assert_eq!(row.point, row.lower);
        }
    }

    #[test]
    fn single_replicate_single_model_ci_is_the_value() {
        let (labels, groups) = small_data();
        let scores = vec![labels.iter().map(|&y| 0.3 + 0.4 * y as f64).collect()];
        let names = names(2);
        let data = eval_data(&scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 1, alpha: 0.05, seed: 6 };
        let indices = bootstrap_indices(&spec, &labels, &groups, &names).unwrap();
        let tables = bootstrap_tables(&data, &indices).unwrap();
        assert_eq!(tables.len(), 1);
        assert_eq!(tables[0].len(), 1);
        let (dist, _) = pooled_distribution(&tables, Metric::Loss, Scope::Overall);
        let (lo, hi) = percentile_ci(&dist, 0.05).unwrap();
        assert_eq!(lo, hi);
        assert_eq!(lo, tables[0][0].overall.loss);
    }

    #[test]
    fn relative_ci_of_method_against_itself_is_zero() {
        let (labels, groups) = small_data();
        let scores: Vec<Vec<f64>> = (0..3)
            .map(|m| {
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| sigmoid(0.3 * y as f64 + 0.01 * ((i + m) as f64)))
                    .collect()
            })
            .collect();
        let names = names(2);
        let data = eval_data(&scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 25, alpha: 0.05, seed: 8 };
        let report = evaluate_method("m", &data, Some(("m", &data)), &spec).unwrap();
        for row in &report.rows {
            if row.point.is_some() {
                assert_eq!(row.relative_point, Some(0.0), "{row:?}");
                assert_eq!(row.relative_lower, Some(0.0), "{row:?}");
                assert_eq!(row.relative_upper, Some(0.0), "{row:?}");
            }
        }
    }

    #[test]
    fn monotone_logit_shift_gives_degenerate_auc_difference() {
        let (labels, groups) = small_data();
        let base: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| sigmoid(0.8 * y as f64 + 0.07 * i as f64 - 0.5))
            .collect();
        let shifted: Vec<f64> = base
            .iter()
            .map(|&p| sigmoid(crate::scalar::logit(p) + 1.0))
            .collect();
        let method_scores = vec![shifted];
        let base_scores = vec![base];
        let names = names(2);
        let method = eval_data(&method_scores, &labels, &groups, &names);
        let baseline = eval_data(&base_scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 40, alpha: 0.05, seed: 12 };
        let report = evaluate_method("shift", &method, Some(("base", &baseline)), &spec).unwrap();
        for row in report.rows.iter().filter(|r| r.metric == "auc") {
            if row.relative_lower.is_some() {
                assert_abs_diff_eq!(row.relative_lower.unwrap(), 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(row.relative_upper.unwrap(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn paired_differences_match_a_naive_loop() {
        let (labels, groups) = small_data();
        let m_scores: Vec<Vec<f64>> = vec![
            labels.iter().map(|&y| 0.2 + 0.5 * y as f64).collect(),
            labels.iter().map(|&y| 0.3 + 0.3 * y as f64).collect(),
        ];
        let b_scores: Vec<Vec<f64>> =
            vec![labels.iter().map(|&y| 0.45 + 0.1 * y as f64).collect()];
        let names = names(2);
        let method = eval_data(&m_scores, &labels, &groups, &names);
        let baseline = eval_data(&b_scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 15, alpha: 0.05, seed: 14 };
        let indices = bootstrap_indices(&spec, &labels, &groups, &names).unwrap();
        let mt = bootstrap_tables(&method, &indices).unwrap();
        let bt = bootstrap_tables(&baseline, &indices).unwrap();
        let diffs =
            relative_distribution(&mt, &spec, &bt, &spec, Metric::Loss, Scope::Overall).unwrap();

        // Independent recomputation straight from the shared index lists.
        for (r, rows) in indices.iter().enumerate() {
            let mean_loss = |scores: &[Vec<f64>]| -> f64 {
                let per_model: Vec<f64> = scores
                    .iter()
                    .map(|s| {
                        let sc: Vec<f64> = rows.iter().map(|&i| s[i]).collect();
                        let lb: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
                        crate::metrics::mean_loss(&sc, &lb)
                    })
                    .collect();
                per_model.iter().sum::<f64>() / per_model.len() as f64
            };
            let want = mean_loss(&m_scores) - mean_loss(&b_scores);
            assert_abs_diff_eq!(diffs[r], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn mismatched_bootstrap_seeds_are_rejected() {
        let (labels, groups) = small_data();
        let scores = vec![labels.iter().map(|&y| 0.3 + 0.2 * y as f64).collect()];
        let names = names(2);
        let data = eval_data(&scores, &labels, &groups, &names);
        let a = BootstrapSpec { b: 5, alpha: 0.05, seed: 1 };
        let b = BootstrapSpec { b: 5, alpha: 0.05, seed: 2 };
        let ia = bootstrap_indices(&a, &labels, &groups, &names).unwrap();
        let ib = bootstrap_indices(&b, &labels, &groups, &names).unwrap();
        let ta = bootstrap_tables(&data, &ia).unwrap();
        let tb = bootstrap_tables(&data, &ib).unwrap();
        let err = relative_distribution(&ta, &a, &tb, &b, Metric::Loss, Scope::Overall).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn worst_case_matches_naive_recomputation() {
        let (labels, groups) = small_data();
        let scores: Vec<Vec<f64>> = (0..2)
            .map(|m| {
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| sigmoid(0.6 * y as f64 + 0.1 * (i as f64) - 0.8 + m as f64 * 0.2))
                    .collect()
            })
            .collect();
        let names = names(2);
        let data = eval_data(&scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 12, alpha: 0.05, seed: 17 };
        let indices = bootstrap_indices(&spec, &labels, &groups, &names).unwrap();
        let tables = bootstrap_tables(&data, &indices).unwrap();
        for replicate in &tables {
            for table in replicate {
                let max_loss = table
                    .groups
                    .iter()
                    .map(|g| g.loss)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(table.worst_case.loss, max_loss);
                let min_auc = table
                    .groups
                    .iter()
                    .filter_map(|g| g.auc)
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(table.worst_case.auc, Some(min_auc));
                for g in &table.groups {
                    assert!(table.worst_case.loss >= g.loss);
                    if let (Some(w), Some(a)) = (table.worst_case.auc, g.auc) {
                        assert!(w <= a);
                    }
                }
            }
        }
    }

    #[test]
    fn single_group_worst_case_equals_the_group() {
        let labels = vec![0, 1, 1, 0, 1, 0, 1, 0, 1, 1, 0, 0];
        let groups = vec![0usize; 12];
        let scores = vec![labels.iter().map(|&y| 0.35 + 0.25 * y as f64).collect()];
        let names = names(1);
        let data = eval_data(&scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 10, alpha: 0.05, seed: 19 };
        let report = evaluate_method("solo", &data, None, &spec).unwrap();
        for metric in ["auc", "loss", "ace"] {
            let by_scope = |s: &str| {
                report
                    .rows
                    .iter()
                    .find(|r| r.metric == metric && r.scope == s)
                    .unwrap()
                    .clone()
            };
            let g = by_scope("g0");
            let w = by_scope("worst_case");
            assert_eq!((g.point, g.lower, g.upper), (w.point, w.lower, w.upper));
        }
    }

    #[test]
    fn report_shape_and_round_trips() {
        let (labels, groups) = small_data();
        let scores = vec![labels.iter().map(|&y| 0.25 + 0.4 * y as f64).collect()];
        let base = vec![vec![0.5; labels.len()]];
        let names = names(2);
        let method = eval_data(&scores, &labels, &groups, &names);
        let baseline = eval_data(&base, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 8, alpha: 0.05, seed: 20 };
        let report = evaluate_method("m", &method, Some(("base", &baseline)), &spec).unwrap();

        // 3 metrics × (K + 2) scopes.
        assert_eq!(report.rows.len(), 3 * (2 + 2));
        let csv = report.to_csv_string();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(
            lines[0],
            "metric,scope,point,lower,upper,relative_point,relative_lower,relative_upper,n_missing"
        );
        assert_eq!(lines.len(), 1 + report.rows.len());

        let back = MetricReport::<f64>::from_json(&report.to_json()).unwrap();
        assert_eq!(report, back);

        // Determinism: a second evaluation is identical.
        let again = evaluate_method("m", &method, Some(("base", &baseline)), &spec).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn lower_never_exceeds_upper() {
        let (labels, groups) = small_data();
        let mut rng = stream_rng(99, 50);
        let scores: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..labels.len()).map(|_| rng.random::<f64>()).collect())
            .collect();
        let names = names(2);
        let data = eval_data(&scores, &labels, &groups, &names);
        let spec = BootstrapSpec { b: 50, alpha: 0.05, seed: 22 };
        let report = evaluate_method("fuzz", &data, None, &spec).unwrap();
        for row in &report.rows {
            if let (Some(lo), Some(hi)) = (row.lower, row.upper) {
                assert!(lo <= hi, "{row:?}");
            }
        }
    }
}
