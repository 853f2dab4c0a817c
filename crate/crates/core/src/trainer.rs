//! The training engine: empirical risk minimization and its group-robust
//! variants under one alternating loop.
//!
//! Robust training keeps a weight vector λ on the probability simplex over
//! groups. Each minibatch first updates λ by exponentiated gradient ascent on
//! per-group batch statistics (mean loss plus optional additive adjustments,
//! or one minus the batch AUC), then takes one optimizer step on the
//! λ-weighted objective Σ_k λ_k ℓ_k, realized through per-example weights
//! λ_{a_i}/B_{a_i}. Plain ERM is the degenerate case of a fixed uniform λ
//! over a single pooled "group" of examples — its objective is the plain
//! minibatch mean.
//!
//! Every run is single-threaded and bit-reproducible given its seed; with
//! η = 0 or a single group, a robust configuration's parameter trajectory is
//! bitwise identical to the matching ERM run under shared seeds.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{minibatch_balanced, minibatch_standard, Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{
    backward, forward_pass, infer, per_example_ce, Mode, ModelParams, ModelSpec, ParamsDoc,
    PerExampleWeights,
};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITERATIONS: usize = 150;
pub const DEFAULT_MINIBATCHES_PER_ITERATION: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 512;
pub const DEFAULT_PATIENCE: usize = 25;

/// Simplex tolerance for validating λ.
const SIMPLEX_TOL: f64 = 1e-9;

/// RNG stream ids within one training run.
const STREAM_SAMPLER: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Nonnegative group weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", transparent)]
pub struct GroupWeights<T> {
    lambda: Vec<T>,
}

impl<T: Scalar> GroupWeights<T> {
    pub fn new(lambda: Vec<T>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::config("group weights are empty"));
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < T::zero()) {
            return Err(Error::numeric(
                "group weights must be finite and nonnegative",
            ));
        }
        let total = lambda.iter().copied().sum::<T>().to_f64().unwrap_or(f64::NAN);
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::numeric(format!(
                "group weights sum to {total}, expected 1 within {SIMPLEX_TOL:e}"
            )));
        }
        Ok(GroupWeights { lambda })
    }

    /// Uniform centre of the simplex.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("group weights are empty"));
        }
        Ok(GroupWeights {
            lambda: vec![T::one() / T::from_usize_lossy(k); k],
        })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.lambda
    }
}

/// Shared exponentiated-gradient step: λ_k ← λ_k·exp(η·d_k) / Σ_j λ_j·exp(η·d_j),
/// with max-subtraction for overflow safety. `None` drive entries (groups
/// absent from the minibatch) keep their λ_k in the numerator with exponent
/// zero. η = 0 returns λ unchanged, bit for bit.
fn exp_weighted_update<T: Scalar>(
    lambda: &GroupWeights<T>,
    drive: &[Option<T>],
    eta: f64,
) -> Result<GroupWeights<T>> {
    if drive.len() != lambda.len() {
        return Err(Error::config(format!(
            "λ update got {} drive values for {} groups",
            drive.len(),
            lambda.len()
        )));
    }
    if eta == 0.0 {
        return Ok(lambda.clone());
    }
    if let Some(bad) = drive.iter().flatten().find(|d| !d.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite group statistic {bad} in λ update (drive {drive:?})"
        )));
    }
    let eta_t = T::from_f64_lossy(eta);
    let exponents: Vec<T> = drive
        .iter()
        .map(|d| d.map(|v| eta_t * v).unwrap_or_else(T::zero))
        .collect();
    let max_e = exponents
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let weighted: Vec<T> = lambda
        .as_slice()
        .iter()
        .zip(&exponents)
        .map(|(&l, &e)| l * (e - max_e).exp())
        .collect();
    let total = weighted.iter().copied().sum::<T>();
    if !total.is_finite() || total <= T::zero() {
        return Err(Error::numeric(format!(
            "λ update degenerated (normalizer {total}) for drive {drive:?}"
        )));
    }
    Ok(GroupWeights {
        lambda: weighted.into_iter().map(|w| w / total).collect(),
    })
}

/// λ update driven by per-group mean losses plus additive adjustments.
pub fn lambda_update_loss<T: Scalar>(
    lambda: &GroupWeights<T>,
    group_losses: &[Option<T>],
    adjustments: &[T],
    eta: f64,
) -> Result<GroupWeights<T>> {
    if adjustments.len() != lambda.len() {
        return Err(Error::config(format!(
            "λ update got {} adjustments for {} groups",
            adjustments.len(),
            lambda.len()
        )));
    }
    let drive: Vec<Option<T>> = group_losses
        .iter()
        .zip(adjustments)
        .map(|(l, &c)| l.map(|l| l + c))
        .collect();
    exp_weighted_update(lambda, &drive, eta)
}

/// λ update driven by an arbitrary per-group performance score g (higher g =
/// group doing worse).
pub fn lambda_update_metric<T: Scalar>(
    lambda: &GroupWeights<T>,
    g_values: &[Option<T>],
    eta: f64,
) -> Result<GroupWeights<T>> {
    exp_weighted_update(lambda, g_values, eta)
}

/// Performance score for AUC-driven robust training: 1 − AUC with half-credit
/// ties. `None` when the sample contains a single class.
pub fn g_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Option<T> {
    metrics::auc(scores, labels).map(|a| T::one() - a)
}

/// Additive per-group offsets inside the λ update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Adjustment {
    /// No offset: plain group-loss ascent.
    None,
    /// c_k = C / p_k with p_k the group's share of the training split.
    Reciprocal { c: f64 },
    /// c_k = C·√(n_k/N).
    Proportional { c: f64 },
    /// c_k = −H(Ŷ_k): the negative marginal label entropy of the group,
    /// estimated from the current minibatch.
    MarginalBaseline,
}

impl Adjustment {
    pub fn validate(&self) -> Result<()> {
        match self {
            Adjustment::Reciprocal { c } | Adjustment::Proportional { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::config(format!(
                        "adjustment scale {c} must be positive and finite"
                    )));
                }
            }
            Adjustment::None | Adjustment::MarginalBaseline => {}
        }
        Ok(())
    }
}

/// Carry-forward state for adjustments that depend on the minibatch: groups
/// absent from a batch keep their last defined offset (initially zero).
#[derive(Debug, Clone)]
pub struct AdjustmentState<T> {
    last: Vec<T>,
}

impl<T: Scalar> AdjustmentState<T> {
    pub fn new(k: usize) -> Self {
        AdjustmentState {
            last: vec![T::zero(); k],
        }
    }
}

/// Label-rate clip bound inside the marginal-baseline entropy.
const RATE_CLIP: f64 = 1e-6;

/// Compute the K-vector of additive adjustments.
///
/// Size-based kinds use `split_group_counts`, the group sizes of the full
/// training split; the marginal-baseline kind estimates per-group label rates
/// from the current minibatch only.
pub fn compute_adjustments<T: Scalar>(
    adjustment: &Adjustment,
    split_group_counts: &[usize],
    batch_labels: &[u8],
    batch_groups: &[usize],
    state: &mut AdjustmentState<T>,
) -> Result<Vec<T>> {
    let k = split_group_counts.len();
    if state.last.len() != k {
        return Err(Error::config("adjustment state has the wrong group count"));
    }
    match adjustment {
        Adjustment::None => Ok(vec![T::zero(); k]),
        Adjustment::Reciprocal { c } => {
            let n: usize = split_group_counts.iter().sum();
            split_group_counts
                .iter()
                .map(|&nk| {
                    if nk == 0 {
                        return Err(Error::data(
                            "reciprocal adjustment with a group absent from the training split",
                        ));
                    }
                    let p = nk as f64 / n as f64;
                    Ok(T::from_f64_lossy(c / p))
                })
                .collect()
        }
        Adjustment::Proportional { c } => {
            let n: usize = split_group_counts.iter().sum();
            Ok(split_group_counts
                .iter()
                .map(|&nk| T::from_f64_lossy(c * (nk as f64 / n as f64).sqrt()))
                .collect())
        }
        Adjustment::MarginalBaseline => {
            if batch_labels.len() != batch_groups.len() {
                return Err(Error::config("batch labels and groups disagree in length"));
            }
            let mut positives = vec![0usize; k];
            let mut counts = vec![0usize; k];
            for (&y, &g) in batch_labels.iter().zip(batch_groups) {
                if g >= k {
                    return Err(Error::data(format!(
                        "group index {g} out of range for {k} groups"
                    )));
                }
                positives[g] += usize::from(y == 1);
                counts[g] += 1;
            }
            for g in 0..k {
                if counts[g] > 0 {
                    let rate = (positives[g] as f64 / counts[g] as f64)
                        .clamp(RATE_CLIP, 1.0 - RATE_CLIP);
                    let c = rate * rate.ln() + (1.0 - rate) * (1.0 - rate).ln();
                    state.last[g] = T::from_f64_lossy(c);
                }
            }
            Ok(state.last.clone())
        }
    }
}

/// Per-example weights realizing the λ-weighted sum of group means: example i
/// of group k gets λ_k/B_k, with B_k the group's count in the batch.
pub fn weighted_example_weights<T: Scalar>(
    lambda: &GroupWeights<T>,
    batch_groups: &[usize],
) -> Result<PerExampleWeights<T>> {
    if batch_groups.is_empty() {
        return Err(Error::config("cannot weight an empty minibatch"));
    }
    let k = lambda.len();
    let mut counts = vec![0usize; k];
    for &g in batch_groups {
        if g >= k {
            return Err(Error::data(format!(
                "group index {g} out of range for {k} groups"
            )));
        }
        counts[g] += 1;
    }
    let factors: Vec<T> = lambda
        .as_slice()
        .iter()
        .zip(&counts)
        .map(|(&l, &b)| {
            if b == 0 {
                T::zero()
            } else {
                l / T::from_usize_lossy(b)
            }
        })
        .collect();
    PerExampleWeights::new(batch_groups.iter().map(|&g| factors[g]).collect())
}

/// Which objective family a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Erm,
    Dro,
}

/// Statistic driving the λ update in robust runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroMetric {
    Loss,
    Auc,
}

/// Minibatch composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Uniform draws from the pool (group shares follow the pool).
    Standard,
    /// Equal per-group counts (±1) regardless of pool shares.
    Balanced,
}

/// Development-set criterion evaluated once per iteration; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopRule {
    PooledLoss,
    WeightedObjective,
    WorstGroupLoss,
    WorstGroupAuc,
}

/// Complete description of one training run's objective and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub family: Family,
    pub dro_metric: DroMetric,
    pub adjustment: Adjustment,
    /// Step size of the exponentiated-gradient λ update; ignored for ERM.
    pub eta: f64,
    pub sampler: Sampler,
    pub early_stop: EarlyStopRule,
    pub max_iterations: usize,
    pub minibatches_per_iteration: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
}

impl ObjectiveSpec {
    /// Plain pooled ERM with the default schedule.
    pub fn erm(learning_rate: f64) -> Self {
        ObjectiveSpec {
            family: Family::Erm,
            dro_metric: DroMetric::Loss,
            adjustment: Adjustment::None,
            eta: 0.0,
            sampler: Sampler::Standard,
            early_stop: EarlyStopRule::PooledLoss,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            minibatches_per_iteration: DEFAULT_MINIBATCHES_PER_ITERATION,
            batch_size: DEFAULT_BATCH_SIZE,
            patience: DEFAULT_PATIENCE,
            learning_rate,
        }
    }

    /// Loss-driven robust training with the default schedule.
    pub fn dro_loss(eta: f64, learning_rate: f64) -> Self {
        ObjectiveSpec {
            family: Family::Dro,
            early_stop: EarlyStopRule::WorstGroupLoss,
            eta,
            ..Self::erm(learning_rate)
        }
    }

    /// AUC-driven robust training with the default schedule.
    pub fn dro_auc(eta: f64, learning_rate: f64) -> Self {
        ObjectiveSpec {
            dro_metric: DroMetric::Auc,
            early_stop: EarlyStopRule::WorstGroupAuc,
            ..Self::dro_loss(eta, learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adjustment.validate()?;
        if self.adjustment != Adjustment::None
            && !(self.family == Family::Dro && self.dro_metric == DroMetric::Loss)
        {
            return Err(Error::config(
                "additive adjustments apply only to loss-driven robust training",
            ));
        }
        if self.family == Family::Dro && !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config(format!(
                "eta {} must be nonnegative and finite",
                self.eta
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.max_iterations == 0 || self.minibatches_per_iteration == 0 {
            return Err(Error::config("iteration counts must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        Ok(())
    }
}

/// Development-set metrics from one evaluation. Group entries are `None` when
/// the group is absent from the development set (loss) or single-class (AUC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DevMetrics<T> {
    pub pooled_loss: T,
    pub pooled_auc: Option<T>,
    pub group_losses: Vec<Option<T>>,
    pub group_aucs: Vec<Option<T>>,
}

/// One per-iteration history entry: λ snapshot, dev metrics, criterion value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub lambda: Vec<T>,
    pub dev: DevMetrics<T>,
    pub criterion: T,
}

/// Early-stop criterion value (lower is better) for one dev evaluation.
pub fn early_stop_value<T: Scalar>(
    rule: EarlyStopRule,
    dev: &DevMetrics<T>,
    lambda: &GroupWeights<T>,
) -> Result<T> {
    let value = match rule {
        EarlyStopRule::PooledLoss => dev.pooled_loss,
        EarlyStopRule::WorstGroupLoss => dev
            .group_losses
            .iter()
            .flatten()
            .copied()
            .fold(None, |acc: Option<T>, l| {
                Some(acc.map_or(l, |a| a.max(l)))
            })
            .ok_or_else(|| Error::data("no group present in the development set"))?,
        EarlyStopRule::WorstGroupAuc => {
            let min_auc = dev
                .group_aucs
                .iter()
                .flatten()
                .copied()
                .fold(None, |acc: Option<T>, a| {
                    Some(acc.map_or(a, |m| m.min(a)))
                })
                .ok_or_else(|| {
                    Error::data("no development group has a defined AUC for early stopping")
                })?;
            -min_auc
        }
        EarlyStopRule::WeightedObjective => {
            if lambda.len() != dev.group_losses.len() {
                return Err(Error::config(
                    "λ length does not match the number of groups",
                ));
            }
            lambda
                .as_slice()
                .iter()
                .zip(&dev.group_losses)
                .filter_map(|(&l, loss)| loss.map(|v| l * v))
                .sum()
        }
    };
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "early-stop criterion is not finite: {value}"
        )));
    }
    Ok(value)
}

/// A finished training run: best-by-criterion parameter snapshot plus the
/// full per-iteration history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub params: ModelParams<T>,
    pub history: Vec<IterationRecord<T>>,
    pub objective: ObjectiveSpec,
    pub fold_id: usize,
    pub seed: u64,
    /// 1-based iteration whose snapshot is `params`.
    pub best_iteration: usize,
    pub best_criterion: T,
    /// `Some(group)` when this run was restricted to a single group's rows.
    pub stratified_group: Option<usize>,
}

/// On-disk form of [`TrainedModel`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedModelDoc<T> {
    pub format_version: u32,
    pub params: ParamsDoc<T>,
    pub history: Vec<IterationRecord<T>>,
    pub objective: ObjectiveSpec,
    pub fold_id: usize,
    pub seed: u64,
    pub best_iteration: usize,
    pub best_criterion: T,
    pub stratified_group: Option<usize>,
}

pub const TRAINED_MODEL_FORMAT_VERSION: u32 = 1;

impl<T: Scalar> TrainedModel<T> {
    pub fn to_json(&self) -> String {
        let doc = TrainedModelDoc {
            format_version: TRAINED_MODEL_FORMAT_VERSION,
            params: self.params.to_doc(),
            history: self.history.clone(),
            objective: self.objective.clone(),
            fold_id: self.fold_id,
            seed: self.seed,
            best_iteration: self.best_iteration,
            best_criterion: self.best_criterion,
            stratified_group: self.stratified_group,
        };
        serde_json::to_string(&doc).expect("trained model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TrainedModelDoc<T> = serde_json::from_str(s)
            .map_err(|e| Error::data(format!("invalid trained-model JSON: {e}")))?;
        if doc.format_version != TRAINED_MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported trained-model document version {}",
                doc.format_version
            )));
        }
        Ok(TrainedModel {
            params: ModelParams::from_doc(doc.params)?,
            history: doc.history,
            objective: doc.objective,
            fold_id: doc.fold_id,
            seed: doc.seed,
            best_iteration: doc.best_iteration,
            best_criterion: doc.best_criterion,
            stratified_group: doc.stratified_group,
        })
    }
}

fn with_coords(e: Error, iteration: usize, minibatch: usize) -> Error {
    let tag = format!("iteration {iteration}, minibatch {minibatch}: ");
    match e {
        Error::Config(m) => Error::Config(tag + &m),
        Error::Data(m) => Error::Data(tag + &m),
        Error::Numeric(m) => Error::Numeric(tag + &m),
        Error::Io(io) => Error::Io(io),
    }
}

/// Everything `run_training` needs to know about the (possibly restricted)
/// cohort it trains on.
struct TrainContext<'a, T> {
    ds: &'a Dataset<T>,
    pool: Vec<usize>,
    dev: Vec<usize>,
    /// Effective group count (1 for stratified runs).
    k: usize,
    /// Effective group of each dataset row (identically 0 for stratified).
    group_of: Vec<usize>,
    group_names: Vec<String>,
    /// Group sizes over the full training split, for size-based adjustments.
    split_group_counts: Vec<usize>,
    stratified_group: Option<usize>,
}

fn run_training<T: Scalar>(
    ctx: &TrainContext<'_, T>,
    model_spec: &ModelSpec,
    objective: &ObjectiveSpec,
    fold_id: usize,
    seed: u64,
) -> Result<TrainedModel<T>> {
    objective.validate()?;
    model_spec.validate()?;
    let k = ctx.k;
    if ctx.pool.is_empty() {
        return Err(Error::config("training pool is empty"));
    }
    if ctx.dev.is_empty() {
        return Err(Error::config("development set is empty"));
    }
    if objective.sampler == Sampler::Balanced {
        let pool_counts = count_groups(&ctx.pool, &ctx.group_of, k);
        if let Some(g) = pool_counts.iter().position(|&c| c == 0) {
            return Err(Error::data(format!(
                "group {:?} has no examples in the training pool",
                ctx.group_names[g]
            )));
        }
    }

    let mut params = ModelParams::init(model_spec, ctx.ds.num_features())?;
    let mut lambda = GroupWeights::<T>::uniform(k)?;
    let mut adj_state = AdjustmentState::<T>::new(k);
    let mut g_carry: Vec<T> = vec![T::from_f64_lossy(0.5); k];
    let mut sampler_rng = stream_rng(seed, STREAM_SAMPLER);
    let mut dropout_rng = stream_rng(seed, STREAM_DROPOUT);

    let (dev_x, dev_y, _) = ctx.ds.gather(&ctx.dev);
    let dev_groups: Vec<usize> = ctx.dev.iter().map(|&i| ctx.group_of[i]).collect();

    let mut history: Vec<IterationRecord<T>> = Vec::new();
    let mut best: Option<(T, ModelParams<T>, usize)> = None;
    let mut stale = 0usize;

    'iterations: for iteration in 1..=objective.max_iterations {
        for minibatch in 1..=objective.minibatches_per_iteration {
            minibatch_step(
                ctx,
                objective,
                &mut params,
                &mut lambda,
                &mut adj_state,
                &mut g_carry,
                &mut sampler_rng,
                &mut dropout_rng,
            )
            .map_err(|e| with_coords(e, iteration, minibatch))?;
        }

        let dev_scores = infer(&params, dev_x.view())
            .map_err(|e| with_coords(e, iteration, 0))?
            .to_vec();
        let dev = dev_metrics(&dev_scores, &dev_y, &dev_groups, k);
        let criterion = early_stop_value(objective.early_stop, &dev, &lambda)
            .map_err(|e| with_coords(e, iteration, 0))?;
        history.push(IterationRecord {
            iteration,
            lambda: lambda.as_slice().to_vec(),
            dev,
            criterion,
        });

        let improved = match &best {
            None => true,
            Some((b, _, _)) => criterion < *b,
        };
        if improved {
            best = Some((criterion, params.clone(), iteration));
            stale = 0;
        } else {
            stale += 1;
            if stale >= objective.patience {
                break 'iterations;
            }
        }
    }

    let (best_criterion, best_params, best_iteration) =
        best.expect("at least one iteration ran");
    Ok(TrainedModel {
        params: best_params,
        history,
        objective: objective.clone(),
        fold_id,
        seed,
        best_iteration,
        best_criterion,
        stratified_group: ctx.stratified_group,
    })
}

fn count_groups(indices: &[usize], group_of: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &i in indices {
        counts[group_of[i]] += 1;
    }
    counts
}

#[allow(clippy::too_many_arguments)]
fn minibatch_step<T: Scalar>(
    ctx: &TrainContext<'_, T>,
    objective: &ObjectiveSpec,
    params: &mut ModelParams<T>,
    lambda: &mut GroupWeights<T>,
    adj_state: &mut AdjustmentState<T>,
    g_carry: &mut [T],
    sampler_rng: &mut rand_chacha::ChaCha8Rng,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    let batch = match objective.sampler {
        Sampler::Standard => minibatch_standard(&ctx.pool, objective.batch_size, sampler_rng)?,
        Sampler::Balanced => {
            minibatch_balanced(ctx.ds, &ctx.pool, objective.batch_size, sampler_rng)?
        }
    };
    let (x, y, _) = ctx.ds.gather(&batch);
    let groups: Vec<usize> = batch.iter().map(|&i| ctx.group_of[i]).collect();

    let pass = forward_pass(params, x.view(), Mode::Train, Some(dropout_rng))?;

    let weights = match objective.family {
        Family::Erm => PerExampleWeights::uniform(batch.len())?,
        Family::Dro => {
            match objective.dro_metric {
                DroMetric::Loss => {
                    let ce = per_example_ce(&pass.probs, &y);
                    let mut sums = vec![T::zero(); ctx.k];
                    let mut counts = vec![0usize; ctx.k];
                    for (i, &g) in groups.iter().enumerate() {
                        sums[g] += ce[i];
                        counts[g] += 1;
                    }
                    let group_losses: Vec<Option<T>> = sums
                        .iter()
                        .zip(&counts)
                        .map(|(&s, &c)| {
                            (c > 0).then(|| s / T::from_usize_lossy(c))
                        })
                        .collect();
                    let adjustments = compute_adjustments(
                        &objective.adjustment,
                        &ctx.split_group_counts,
                        &y,
                        &groups,
                        adj_state,
                    )?;
                    *lambda = lambda_update_loss(lambda, &group_losses, &adjustments, objective.eta)?;
                }
                DroMetric::Auc => {
                    for g in 0..ctx.k {
                        let idx: Vec<usize> =
                            (0..batch.len()).filter(|&i| groups[i] == g).collect();
                        if idx.is_empty() {
                            continue;
                        }
                        let s: Vec<T> = idx.iter().map(|&i| pass.probs[i]).collect();
                        let l: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
                        if let Some(g_val) = g_auc(&s, &l) {
                            g_carry[g] = g_val;
                        }
                        // Single-class batches reuse the last defined value.
                    }
                    let g_values: Vec<Option<T>> = g_carry.iter().map(|&g| Some(g)).collect();
                    *lambda = lambda_update_metric(lambda, &g_values, objective.eta)?;
                }
            }
            weighted_example_weights(lambda, &groups)?
        }
    };

    let (_, grad) = backward(params, &pass, x.view(), &y, &weights)?;
    params.optimizer_step(&grad, objective.learning_rate)
}

fn dev_metrics<T: Scalar>(
    scores: &[T],
    labels: &[u8],
    groups: &[usize],
    k: usize,
) -> DevMetrics<T> {
    let pooled_loss = metrics::mean_loss(scores, labels);
    let pooled_auc = metrics::auc(scores, labels);
    let mut group_losses = Vec::with_capacity(k);
    let mut group_aucs = Vec::with_capacity(k);
    for g in 0..k {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| groups[i] == g).collect();
        if idx.is_empty() {
            group_losses.push(None);
            group_aucs.push(None);
            continue;
        }
        let s: Vec<T> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        group_losses.push(Some(metrics::mean_loss(&s, &y)));
        group_aucs.push(metrics::auc(&s, &y));
    }
    DevMetrics {
        pooled_loss,
        pooled_auc,
        group_losses,
        group_aucs,
    }
}

/// Train one model on four folds of the training split, evaluating the
/// early-stop criterion on the held-out fold once per iteration.
pub fn train<T: Scalar>(
    ds: &Dataset<T>,
    partition: &Partition,
    fold_id: usize,
    model_spec: &ModelSpec,
    objective: &ObjectiveSpec,
    seed: u64,
) -> Result<TrainedModel<T>> {
    let pool = partition.train_pool(fold_id)?;
    let dev = partition.dev_pool(fold_id)?.to_vec();
    let ctx = TrainContext {
        ds,
        pool,
        dev,
        k: ds.num_groups(),
        group_of: ds.groups().to_vec(),
        group_names: ds.group_names().to_vec(),
        split_group_counts: ds.group_counts_in(&partition.train_idx),
        stratified_group: None,
    };
    run_training(&ctx, model_spec, objective, fold_id, seed)
}

/// Train an ERM model restricted to one group's rows. Early stopping uses the
/// loss on that group's slice of the held-out fold; the sampler is forced to
/// standard draws and the objective family to ERM.
pub fn train_stratified<T: Scalar>(
    ds: &Dataset<T>,
    partition: &Partition,
    fold_id: usize,
    model_spec: &ModelSpec,
    objective: &ObjectiveSpec,
    group_id: usize,
    seed: u64,
) -> Result<TrainedModel<T>> {
    if group_id >= ds.num_groups() {
        return Err(Error::config(format!(
            "group {group_id} out of range for {} groups",
            ds.num_groups()
        )));
    }
    let name = &ds.group_names()[group_id];
    let pool: Vec<usize> = partition
        .train_pool(fold_id)?
        .into_iter()
        .filter(|&i| ds.groups()[i] == group_id)
        .collect();
    let dev: Vec<usize> = partition
        .dev_pool(fold_id)?
        .iter()
        .copied()
        .filter(|&i| ds.groups()[i] == group_id)
        .collect();

    let pool_pos = pool.iter().filter(|&&i| ds.labels()[i] == 1).count();
    let pool_neg = pool.len() - pool_pos;
    if pool_pos < 2 || pool_neg < 2 {
        return Err(Error::data(format!(
            "group {name:?} has {pool_pos} positive and {pool_neg} negative training examples; \
             need at least 2 of each"
        )));
    }
    let dev_pos = dev.iter().filter(|&&i| ds.labels()[i] == 1).count();
    if dev.is_empty() || dev_pos == 0 || dev_pos == dev.len() {
        return Err(Error::data(format!(
            "group {name:?} has a single-class development fold"
        )));
    }

    let stratified_objective = ObjectiveSpec {
        family: Family::Erm,
        dro_metric: DroMetric::Loss,
        adjustment: Adjustment::None,
        eta: 0.0,
        sampler: Sampler::Standard,
        early_stop: EarlyStopRule::PooledLoss,
        ..objective.clone()
    };
    let split_count = partition
        .train_idx
        .iter()
        .filter(|&&i| ds.groups()[i] == group_id)
        .count();
    let ctx = TrainContext {
        ds,
        pool,
        dev,
        k: 1,
        group_of: vec![0; ds.len()],
        group_names: vec![name.clone()],
        split_group_counts: vec![split_count],
        stratified_group: Some(group_id),
    };
    run_training(&ctx, model_spec, &stratified_objective, fold_id, seed)
}

/// Eval-mode scores of a trained model over selected rows.
pub fn score_rows<T: Scalar>(
    params: &ModelParams<T>,
    ds: &Dataset<T>,
    rows: &[usize],
) -> Result<Vec<T>> {
    let mut x = Array2::zeros((rows.len(), ds.num_features()));
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&ds.feature_row(i));
    }
    Ok(infer(params, x.view())?.to_vec())
}
