//! Evaluation metrics: AUC, average cross-entropy, and absolute calibration
//! error via a two-parameter logistic recalibration fit — computed pooled,
//! per group, and worst-case across groups.
//!
//! AUC uses the rank-based Mann–Whitney statistic with half-credit for ties,
//! algebraically equal to the O(n²) pairwise count but O(n log n). A group
//! sample containing only one class has no defined AUC; such entries are
//! reported as missing and skipped by worst-case reductions rather than
//! imputed.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{clip_probability, Scalar};

/// Probability floor shared with the training loss.
const CLIP: f64 = 1e-12;

/// Minimum sample size for the recalibration fit.
pub const MIN_RECALIBRATION_N: usize = 10;

/// Area under the ROC curve with half-credit ties, or `None` when only one
/// class is present.
///
/// Computed from midranks in O(n log n); exactly equal (not merely close) to
/// the pairwise statistic (wins + ½·ties) / (n₁·n₀).
pub fn auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Option<T> {
    debug_assert_eq!(scores.len(), labels.len());
    let n = scores.len();
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| {
        scores[i]
            .partial_cmp(&scores[j])
            .expect("scores must not contain NaN")
    });
    // Sum of positive-label midranks, accumulated per tie block. Midranks are
    // multiples of ½ bounded by n(n+1)/2, so the sum is exact in f64 at any
    // realistic n.
    let mut rank_sum_pos = T::zero();
    let half = T::from_f64_lossy(0.5);
    let mut block_start = 0;
    while block_start < n {
        let mut block_end = block_start + 1;
        while block_end < n && scores[order[block_end]] == scores[order[block_start]] {
            block_end += 1;
        }
        // 1-based ranks block_start+1 ..= block_end share one midrank.
        let midrank =
            half * T::from_usize_lossy(block_start + 1 + block_end);
        for &i in &order[block_start..block_end] {
            if labels[i] == 1 {
                rank_sum_pos += midrank;
            }
        }
        block_start = block_end;
    }
    let n1_t = T::from_usize_lossy(n1);
    let numerator = rank_sum_pos - half * n1_t * (n1_t + T::one());
    Some(numerator / (n1_t * T::from_usize_lossy(n0)))
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-12, 1-1e-12]`.
pub fn mean_loss<T: Scalar>(scores: &[T], labels: &[u8]) -> T {
    assert!(!scores.is_empty(), "mean loss over an empty sample");
    debug_assert_eq!(scores.len(), labels.len());
    let floor = T::from_f64_lossy(CLIP);
    let total = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clip_probability(p, floor);
            if y == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum::<T>();
    total / T::from_usize_lossy(scores.len())
}

/// Input transform applied to model probabilities before the recalibration
/// fit: log-odds (the default) or plain log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecalTransform {
    #[default]
    Logit,
    Log,
}

/// Fitted recalibration map `p ↦ σ(intercept + slope·t(p))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recalibration<T> {
    pub intercept: T,
    pub slope: T,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid_f64(z: f64) -> f64 {
    crate::scalar::sigmoid(z)
}

fn transformed_scores<T: Scalar>(scores: &[T], transform: RecalTransform) -> Vec<f64> {
    scores
        .iter()
        .map(|&p| {
            let p = clip_probability(p.to_f64().unwrap_or(0.5), CLIP);
            match transform {
                RecalTransform::Logit => (p / (1.0 - p)).ln(),
                RecalTransform::Log => p.ln(),
            }
        })
        .collect()
}

/// Maximum-likelihood fit of the two-parameter logistic recalibration model
/// by damped Newton iteration.
///
/// The objective is the mean Bernoulli log-likelihood of the labels given
/// `σ(a + b·t(p))`. Convergence is declared when the mean-gradient ∞-norm
/// falls below 1e-10; the solve runs internally in `f64` regardless of `T`
/// for a scale-independent stopping rule. A singular Hessian (for example
/// constant scores) is regularized with a small ridge, leaving the fit on the
/// maximum-likelihood ridge closest to the origin.
pub fn fit_recalibration<T: Scalar>(
    scores: &[T],
    labels: &[u8],
    transform: RecalTransform,
) -> Result<Recalibration<T>> {
    let n = scores.len();
    if n != labels.len() {
        return Err(Error::config(format!(
            "recalibration inputs disagree: {n} scores, {} labels",
            labels.len()
        )));
    }
    if n < MIN_RECALIBRATION_N {
        return Err(Error::data(format!(
            "recalibration needs at least {MIN_RECALIBRATION_N} examples, got {n}"
        )));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == n {
        return Err(Error::data(
            "recalibration needs both outcome classes present",
        ));
    }

    let x = transformed_scores(scores, transform);
    let nf = n as f64;
    let mean_ll = |a: f64, b: f64| -> f64 {
        x.iter()
            .zip(labels)
            .map(|(&xi, &y)| {
                let z = a + b * xi;
                f64::from(y) * z - softplus(z)
            })
            .sum::<f64>()
            / nf
    };

    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut ll = mean_ll(a, b);
    for _ in 0..100 {
        // Mean gradient and mean negative Hessian of the log-likelihood.
        let (mut g0, mut g1) = (0.0f64, 0.0f64);
        let (mut h00, mut h01, mut h11) = (0.0f64, 0.0f64, 0.0f64);
        for (&xi, &y) in x.iter().zip(labels) {
            let p = sigmoid_f64(a + b * xi);
            let r = f64::from(y) - p;
            g0 += r;
            g1 += r * xi;
            let w = p * (1.0 - p);
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        g0 /= nf;
        g1 /= nf;
        h00 /= nf;
        h01 /= nf;
        h11 /= nf;
        if g0.abs().max(g1.abs()) < 1e-10 {
            return Ok(Recalibration {
                intercept: T::from_f64_lossy(a),
                slope: T::from_f64_lossy(b),
            });
        }
        let mut det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-12 * (h00 * h11).abs().max(1e-300) {
            // Degenerate design (constant transformed scores): ridge the
            // normal matrix so the step stays on the identifiable direction.
            let tau = 1e-8 * h00.max(h11).max(1e-12);
            h00 += tau;
            h11 += tau;
            det = h00 * h11 - h01 * h01;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        // Step-halving damping on the ascent direction.
        let mut t = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = mean_ll(a + t * da, b + t * db);
            if cand.is_finite() && cand >= ll {
                a += t * da;
                b += t * db;
                ll = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::numeric(
                "recalibration step halving exhausted without improving the likelihood",
            ));
        }
    }
    Err(Error::numeric(
        "recalibration did not converge within 100 iterations",
    ))
}

/// Absolute calibration error: the mean absolute gap between the fitted
/// recalibration curve and the model's own probabilities.
pub fn ace<T: Scalar>(scores: &[T], labels: &[u8], transform: RecalTransform) -> Result<T> {
    let fit = fit_recalibration(scores, labels, transform)?;
    let a = fit.intercept.to_f64().unwrap_or(0.0);
    let b = fit.slope.to_f64().unwrap_or(0.0);
    let x = transformed_scores(scores, transform);
    let total: f64 = x
        .iter()
        .zip(scores)
        .map(|(&xi, &p)| (sigmoid_f64(a + b * xi) - p.to_f64().unwrap_or(0.5)).abs())
        .sum();
    Ok(T::from_f64_lossy(total / scores.len() as f64))
}

/// Metrics for one scope (a group, or the pooled sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricRow<T> {
    pub name: String,
    pub n: usize,
    pub auc: Option<T>,
    pub loss: T,
    pub ace: Option<T>,
}

/// Extremes across the per-group rows: minimum AUC, maximum loss, maximum
/// calibration error, each skipping undefined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WorstCase<T> {
    pub auc: Option<T>,
    pub loss: T,
    pub ace: Option<T>,
}

/// Per-group, pooled and worst-case metrics for one score vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupMetricTable<T> {
    pub groups: Vec<MetricRow<T>>,
    pub overall: MetricRow<T>,
    pub worst_case: WorstCase<T>,
}

fn scope_row<T: Scalar>(
    name: &str,
    scores: &[T],
    labels: &[u8],
    transform: RecalTransform,
) -> MetricRow<T> {
    let ace = match ace(scores, labels, transform) {
        Ok(v) => Some(v),
        // Too few examples or one class: report the cell as missing.
        Err(Error::Data(_)) => None,
        Err(_) => None,
    };
    MetricRow {
        name: name.to_string(),
        n: scores.len(),
        auc: auc(scores, labels),
        loss: mean_loss(scores, labels),
        ace,
    }
}

/// Compute the full metric table for one score vector over a grouped sample.
///
/// Every group index in `0..group_names.len()` must appear at least once.
pub fn group_metric_table<T: Scalar>(
    scores: &[T],
    labels: &[u8],
    groups: &[usize],
    group_names: &[String],
    transform: RecalTransform,
) -> Result<GroupMetricTable<T>> {
    let n = scores.len();
    if labels.len() != n || groups.len() != n {
        return Err(Error::config(format!(
            "metric inputs disagree: {n} scores, {} labels, {} group labels",
            labels.len(),
            groups.len()
        )));
    }
    if n == 0 {
        return Err(Error::config("metric table over an empty sample"));
    }
    let k = group_names.len();
    if let Some(&bad) = groups.iter().find(|&&g| g >= k) {
        return Err(Error::data(format!(
            "group index {bad} out of range for {k} groups"
        )));
    }

    let mut rows = Vec::with_capacity(k);
    for g in 0..k {
        let idx: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
        if idx.is_empty() {
            return Err(Error::data(format!(
                "group {:?} has no examples in the sample",
                group_names[g]
            )));
        }
        let s: Vec<T> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        rows.push(scope_row(&group_names[g], &s, &y, transform));
    }
    let overall = scope_row("overall", scores, labels, transform);

    let worst_auc = rows
        .iter()
        .filter_map(|r| r.auc)
        .min_by(|a, b| a.partial_cmp(b).expect("AUC is finite"));
    let worst_loss = rows
        .iter()
        .map(|r| r.loss)
        .max_by(|a, b| a.partial_cmp(b).expect("loss is finite"))
        .expect("at least one group");
    let worst_ace = rows
        .iter()
        .filter_map(|r| r.ace)
        .max_by(|a, b| a.partial_cmp(b).expect("ACE is finite"));

    Ok(GroupMetricTable {
        groups: rows,
        overall,
        worst_case: WorstCase {
            auc: worst_auc,
            loss: worst_loss,
            ace: worst_ace,
        },
    })
}

impl<T: Scalar> GroupMetricTable<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::data(format!("invalid metric table JSON: {e}")))
    }

    /// Flat CSV with one row per group plus `overall` and `worst_case`
    /// pseudo-groups; missing metrics are empty cells.
    pub fn to_csv_string(&self) -> String {
        fn cell<T: Scalar>(v: Option<T>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        let mut out = String::from("group,n,auc,loss,ace\n");
        for row in self.groups.iter().chain(std::iter::once(&self.overall)) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.name,
                row.n,
                cell(row.auc),
                row.loss,
                cell(row.ace)
            ));
        }
        out.push_str(&format!(
            "worst_case,,{},{},{}\n",
            cell(self.worst_case.auc),
            self.worst_case.loss,
            cell(self.worst_case.ace)
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}
