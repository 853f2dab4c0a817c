//! Hyperparameter grid expansion, cross-validated sweeps over a persistent
//! record store, and model selection.
//!
//! A grid is the Cartesian product of model axes (learning rate, hidden
//! layout, dropout, weight decay) and algorithm axes (objective variant,
//! sampler, early-stop rule, η, C), pruned of incompatible combinations —
//! the C axis only exists for size-adjusted robust variants, η only for
//! robust variants. Expansion order is fixed, so config ids are stable for a
//! given spec.
//!
//! A sweep trains one model per (config, fold) pair, evaluates it on the
//! held-out validation split and on its development fold, and persists a
//! JSON record plus the trained model. Runs already in the store are skipped,
//! which makes sweeps resumable; individual failures are recorded without
//! aborting the sweep.
//!
//! Selection averages each per-group validation metric over the five fold
//! models first, then reduces across groups (worst case or pooled mean) —
//! never the reverse order. Ties break toward the lower config id.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Partition, NUM_FOLDS};
use crate::error::{Error, Result};
use crate::metrics::{group_metric_table, GroupMetricTable, RecalTransform};
use crate::model::ModelSpec;
use crate::rng::mix_seed;
use crate::scalar::Scalar;
use crate::trainer::{
    score_rows, train, Adjustment, DroMetric, EarlyStopRule, Family, ObjectiveSpec, Sampler,
    TrainedModel, DEFAULT_BATCH_SIZE, DEFAULT_MAX_ITERATIONS, DEFAULT_MINIBATCHES_PER_ITERATION,
    DEFAULT_PATIENCE,
};

/// Objective families a grid can span. The ERM variant ignores the η and C
/// axes; only the two size-adjusted variants consume the C axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveVariant {
    Erm,
    DroLoss,
    DroReciprocal,
    DroProportional,
    DroMarginalBaseline,
    DroAuc,
}

impl ObjectiveVariant {
    pub fn uses_eta(self) -> bool {
        self != ObjectiveVariant::Erm
    }

    pub fn uses_c(self) -> bool {
        matches!(
            self,
            ObjectiveVariant::DroReciprocal | ObjectiveVariant::DroProportional
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveVariant::Erm => "erm",
            ObjectiveVariant::DroLoss => "dro_loss",
            ObjectiveVariant::DroReciprocal => "dro_reciprocal",
            ObjectiveVariant::DroProportional => "dro_proportional",
            ObjectiveVariant::DroMarginalBaseline => "dro_marginal_baseline",
            ObjectiveVariant::DroAuc => "dro_auc",
        }
    }
}

impl fmt::Display for ObjectiveVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed (non-gridded) schedule parameters shared by every run in a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub max_iterations: usize,
    pub minibatches_per_iteration: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            minibatches_per_iteration: DEFAULT_MINIBATCHES_PER_ITERATION,
            batch_size: DEFAULT_BATCH_SIZE,
            patience: DEFAULT_PATIENCE,
        }
    }
}

/// Hyperparameter axes. Every axis is overridable; the default values are
/// the reference search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub variants: Vec<ObjectiveVariant>,
    pub learning_rates: Vec<f64>,
    pub hidden_layouts: Vec<Vec<usize>>,
    pub dropouts: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub samplers: Vec<Sampler>,
    pub early_stop_rules: Vec<EarlyStopRule>,
    pub etas: Vec<f64>,
    pub cs: Vec<f64>,
    pub schedule: Schedule,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            variants: vec![ObjectiveVariant::Erm],
            learning_rates: vec![1e-4, 1e-5],
            hidden_layouts: vec![
                vec![128],
                vec![256],
                vec![128, 128, 128],
                vec![256, 256, 256],
            ],
            dropouts: vec![0.25, 0.75],
            weight_decays: vec![0.0],
            samplers: vec![Sampler::Standard, Sampler::Balanced],
            early_stop_rules: vec![
                EarlyStopRule::PooledLoss,
                EarlyStopRule::WorstGroupLoss,
                EarlyStopRule::WorstGroupAuc,
            ],
            etas: vec![1.0, 0.1, 0.01],
            cs: vec![1.0, 0.1, 0.01],
            schedule: Schedule::default(),
        }
    }
}

impl GridSpec {
    /// The default robust-objective grid: all five robust variants over the
    /// η/C/sampler/early-stop axes, with the model axes fixed to one point
    /// (as selected by a prior ERM search).
    pub fn dro_default(learning_rate: f64, hidden: Vec<usize>, dropout: f64) -> Self {
        GridSpec {
            variants: vec![
                ObjectiveVariant::DroLoss,
                ObjectiveVariant::DroReciprocal,
                ObjectiveVariant::DroProportional,
                ObjectiveVariant::DroMarginalBaseline,
                ObjectiveVariant::DroAuc,
            ],
            learning_rates: vec![learning_rate],
            hidden_layouts: vec![hidden],
            dropouts: vec![dropout],
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::config("grid has no objective variants"));
        }
        for (axis, empty) in [
            ("learning_rates", self.learning_rates.is_empty()),
            ("hidden_layouts", self.hidden_layouts.is_empty()),
            ("dropouts", self.dropouts.is_empty()),
            ("weight_decays", self.weight_decays.is_empty()),
            ("samplers", self.samplers.is_empty()),
            ("early_stop_rules", self.early_stop_rules.is_empty()),
        ] {
            if empty {
                return Err(Error::config(format!("grid axis {axis} is empty")));
            }
        }
        if self.variants.iter().any(|v| v.uses_eta()) && self.etas.is_empty() {
            return Err(Error::config("grid has robust variants but no η values"));
        }
        if self.variants.iter().any(|v| v.uses_c()) && self.cs.is_empty() {
            return Err(Error::config(
                "grid has size-adjusted variants but no C values",
            ));
        }
        for &lr in &self.learning_rates {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(format!("invalid learning rate {lr}")));
            }
        }
        for &d in &self.dropouts {
            if !(d.is_finite() && (0.0..1.0).contains(&d)) {
                return Err(Error::config(format!("invalid dropout probability {d}")));
            }
        }
        for &wd in &self.weight_decays {
            if !(wd.is_finite() && wd >= 0.0) {
                return Err(Error::config(format!("invalid weight decay {wd}")));
            }
        }
        for &eta in &self.etas {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(Error::config(format!("invalid η {eta}")));
            }
        }
        for &c in &self.cs {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!("invalid adjustment scale {c}")));
            }
        }
        Ok(())
    }
}

/// One expanded grid point. `model.init_seed` is a placeholder (0) at
/// expansion time; the sweep derives the real seed from the sweep seed and
/// the config id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: usize,
    pub variant: ObjectiveVariant,
    pub model: ModelSpec,
    pub objective: ObjectiveSpec,
}

/// Expand a grid spec into its full Cartesian product minus pruned
/// incompatibilities, in a fixed lexicographic axis order (variant, learning
/// rate, layout, dropout, weight decay, sampler, early-stop rule, η, C), with
/// sequential config ids starting at 0.
pub fn expand_grid(spec: &GridSpec) -> Result<Vec<GridPoint>> {
    spec.validate()?;
    let mut points = Vec::new();
    for &variant in &spec.variants {
        let etas: &[f64] = if variant.uses_eta() { &spec.etas } else { &[0.0] };
        let cs: &[f64] = if variant.uses_c() { &spec.cs } else { &[0.0] };
        for &lr in &spec.learning_rates {
            for layout in &spec.hidden_layouts {
                for &dropout in &spec.dropouts {
                    for &wd in &spec.weight_decays {
                        for &sampler in &spec.samplers {
                            for &rule in &spec.early_stop_rules {
                                for &eta in etas {
                                    for &c in cs {
                                        let model = ModelSpec {
                                            hidden_sizes: layout.clone(),
                                            dropout_p: dropout,
                                            weight_decay: wd,
                                            init_seed: 0,
                                        };
                                        let objective = build_objective(
                                            variant,
                                            eta,
                                            c,
                                            sampler,
                                            rule,
                                            lr,
                                            &spec.schedule,
                                        );
                                        points.push(GridPoint {
                                            id: points.len(),
                                            variant,
                                            model,
                                            objective,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::config("grid expands to zero configurations"));
    }
    Ok(points)
}

fn build_objective(
    variant: ObjectiveVariant,
    eta: f64,
    c: f64,
    sampler: Sampler,
    rule: EarlyStopRule,
    lr: f64,
    schedule: &Schedule,
) -> ObjectiveSpec {
    let (family, dro_metric, adjustment) = match variant {
        ObjectiveVariant::Erm => (Family::Erm, DroMetric::Loss, Adjustment::None),
        ObjectiveVariant::DroLoss => (Family::Dro, DroMetric::Loss, Adjustment::None),
        ObjectiveVariant::DroReciprocal => {
            (Family::Dro, DroMetric::Loss, Adjustment::Reciprocal { c })
        }
        ObjectiveVariant::DroProportional => {
            (Family::Dro, DroMetric::Loss, Adjustment::Proportional { c })
        }
        ObjectiveVariant::DroMarginalBaseline => {
            (Family::Dro, DroMetric::Loss, Adjustment::MarginalBaseline)
        }
        ObjectiveVariant::DroAuc => (Family::Dro, DroMetric::Auc, Adjustment::None),
    };
    ObjectiveSpec {
        family,
        dro_metric,
        adjustment,
        eta,
        sampler,
        early_stop: rule,
        max_iterations: schedule.max_iterations,
        minibatches_per_iteration: schedule.minibatches_per_iteration,
        batch_size: schedule.batch_size,
        patience: schedule.patience,
        learning_rate: lr,
    }
}

/// One completed (config, fold) run: metric tables on the validation split
/// and the development fold, plus the path of the persisted model.
///
/// The development table is `None` when the dev fold is missing a group
/// entirely (it exists for audit; selection always uses the validation
/// table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RunRecord<T> {
    pub config_id: usize,
    pub fold_id: usize,
    pub validation: GroupMetricTable<T>,
    pub dev: Option<GroupMetricTable<T>>,
    pub model_path: String,
}

/// A training failure inside a sweep; the sweep continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub config_id: usize,
    pub fold_id: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome<T> {
    pub records: Vec<RunRecord<T>>,
    pub failures: Vec<SweepFailure>,
}

/// Index file summarizing a record store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndex {
    /// Completed (config, fold) pairs.
    pub completed: Vec<(usize, usize)>,
    pub failures: Vec<SweepFailure>,
}

/// Directory of JSON run records and model files, keyed by (config, fold).
#[derive(Debug, Clone)]
pub struct RecordStore {
    root: PathBuf,
}

impl RecordStore {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("records"))?;
        fs::create_dir_all(root.join("models"))?;
        Ok(RecordStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, config_id: usize, fold_id: usize) -> PathBuf {
        self.root
            .join("records")
            .join(format!("cfg{config_id:05}_fold{fold_id}.json"))
    }

    /// Model file path relative to the store root.
    pub fn model_rel_path(config_id: usize, fold_id: usize) -> String {
        format!("models/cfg{config_id:05}_fold{fold_id}.json")
    }

    pub fn model_path(&self, config_id: usize, fold_id: usize) -> PathBuf {
        self.root.join(Self::model_rel_path(config_id, fold_id))
    }

    pub fn has_record(&self, config_id: usize, fold_id: usize) -> bool {
        self.record_path(config_id, fold_id).is_file()
    }

    pub fn write_record<T: Scalar>(&self, record: &RunRecord<T>) -> Result<()> {
        let json = serde_json::to_string(record).expect("run record serializes");
        fs::write(self.record_path(record.config_id, record.fold_id), json)?;
        Ok(())
    }

    pub fn read_record<T: Scalar>(&self, config_id: usize, fold_id: usize) -> Result<RunRecord<T>> {
        let path = self.record_path(config_id, fold_id);
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("invalid run record {}: {e}", path.display())))
    }

    pub fn write_model_at<T: Scalar>(
        &self,
        config_id: usize,
        fold_id: usize,
        model: &TrainedModel<T>,
    ) -> Result<()> {
        fs::write(self.model_path(config_id, fold_id), model.to_json())?;
        Ok(())
    }

    pub fn read_model<T: Scalar>(&self, config_id: usize, fold_id: usize) -> Result<TrainedModel<T>> {
        let path = self.model_path(config_id, fold_id);
        let text = fs::read_to_string(&path)?;
        TrainedModel::from_json(&text)
    }

    /// All (config, fold) pairs with a record on disk, sorted.
    pub fn scan(&self) -> Result<Vec<(usize, usize)>> {
        let mut pairs = Vec::new();
        for entry in fs::read_dir(self.root.join("records"))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(rest) = name.strip_prefix("cfg").and_then(|r| r.strip_suffix(".json")) {
                if let Some((cfg, fold)) = rest.split_once("_fold") {
                    if let (Ok(c), Ok(f)) = (cfg.parse(), fold.parse()) {
                        pairs.push((c, f));
                    }
                }
            }
        }
        pairs.sort_unstable();
        Ok(pairs)
    }

    pub fn write_index(&self, index: &StoreIndex) -> Result<()> {
        let json = serde_json::to_string_pretty(index).expect("index serializes");
        fs::write(self.root.join("index.json"), json)?;
        Ok(())
    }

    pub fn read_index(&self) -> Result<StoreIndex> {
        let text = fs::read_to_string(self.root.join("index.json"))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("invalid store index: {e}")))
    }
}

/// Evaluate a trained model into a run record (validation table always, dev
/// table when every group is present in the dev fold).
fn record_for_run<T: Scalar>(
    ds: &Dataset<T>,
    part: &Partition,
    point: &GridPoint,
    fold_id: usize,
    trained: &TrainedModel<T>,
    transform: RecalTransform,
) -> Result<RunRecord<T>> {
    let val_scores = score_rows(&trained.params, ds, &part.val_idx)?;
    let (val_labels, val_groups): (Vec<u8>, Vec<usize>) = part
        .val_idx
        .iter()
        .map(|&i| (ds.labels()[i], ds.groups()[i]))
        .unzip();
    let validation = group_metric_table(
        &val_scores,
        &val_labels,
        &val_groups,
        ds.group_names(),
        transform,
    )?;

    let dev_idx = part.dev_pool(fold_id)?;
    let dev_scores = score_rows(&trained.params, ds, dev_idx)?;
    let (dev_labels, dev_groups): (Vec<u8>, Vec<usize>) = dev_idx
        .iter()
        .map(|&i| (ds.labels()[i], ds.groups()[i]))
        .unzip();
    let dev = group_metric_table(
        &dev_scores,
        &dev_labels,
        &dev_groups,
        ds.group_names(),
        transform,
    )
    .ok();

    Ok(RunRecord {
        config_id: point.id,
        fold_id,
        validation,
        dev,
        model_path: RecordStore::model_rel_path(point.id, fold_id),
    })
}

/// Train and evaluate every (config, fold) pair of the grid, skipping pairs
/// already in the store. Initialization seeds derive from `(seed, 1, config)`
/// and training seeds from `(seed, 2, config·5+fold)`, so a sweep is
/// reproducible regardless of scheduling order or restarts.
pub fn run_sweep<T: Scalar>(
    ds: &Dataset<T>,
    part: &Partition,
    grid: &[GridPoint],
    seed: u64,
    transform: RecalTransform,
    store: &RecordStore,
) -> Result<SweepOutcome<T>> {
    if grid.is_empty() {
        return Err(Error::config("cannot sweep an empty grid"));
    }
    let tasks: Vec<(&GridPoint, usize)> = grid
        .iter()
        .flat_map(|p| (0..NUM_FOLDS).map(move |f| (p, f)))
        .collect();

    let results: Vec<std::result::Result<RunRecord<T>, SweepFailure>> = tasks
        .par_iter()
        .map(|&(point, fold_id)| {
            if store.has_record(point.id, fold_id) {
                return store
                    .read_record(point.id, fold_id)
                    .map_err(|e| SweepFailure {
                        config_id: point.id,
                        fold_id,
                        message: e.to_string(),
                    });
            }
            let run = || -> Result<RunRecord<T>> {
                let model_spec = ModelSpec {
                    init_seed: mix_seed(mix_seed(seed, 1), point.id as u64),
                    ..point.model.clone()
                };
                let train_seed = mix_seed(
                    mix_seed(seed, 2),
                    (point.id * NUM_FOLDS + fold_id) as u64,
                );
                let trained = train(ds, part, fold_id, &model_spec, &point.objective, train_seed)?;
                let record = record_for_run(ds, part, point, fold_id, &trained, transform)?;
                store.write_model_at(point.id, fold_id, &trained)?;
                store.write_record(&record)?;
                Ok(record)
            };
            run().map_err(|e| SweepFailure {
                config_id: point.id,
                fold_id,
                message: e.to_string(),
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let index = StoreIndex {
        completed: records.iter().map(|r| (r.config_id, r.fold_id)).collect(),
        failures: failures.clone(),
    };
    store.write_index(&index)?;
    Ok(SweepOutcome { records, failures })
}

/// Model-selection criteria over fold-averaged validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    /// Pooled validation loss, averaged over folds (lower is better).
    MeanLoss,
    /// Max over groups of fold-averaged group loss (lower is better).
    WorstGroupLoss,
    /// Min over groups of fold-averaged group AUC (higher is better).
    WorstGroupAuc,
}

impl SelectionCriterion {
    pub fn name(self) -> &'static str {
        match self {
            SelectionCriterion::MeanLoss => "mean_loss",
            SelectionCriterion::WorstGroupLoss => "worst_group_loss",
            SelectionCriterion::WorstGroupAuc => "worst_group_auc",
        }
    }
}

impl fmt::Display for SelectionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One config's criterion value, in the criterion's natural orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConfigScore<T> {
    pub config_id: usize,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SelectionReport<T> {
    pub criterion: SelectionCriterion,
    pub winner: usize,
    /// Every rankable config, best first; ties ordered by config id.
    pub ranked: Vec<ConfigScore<T>>,
    /// Configs left out: incomplete folds, or criterion undefined.
    pub excluded: Vec<usize>,
}

fn by_config<T>(records: &[RunRecord<T>]) -> BTreeMap<usize, Vec<&RunRecord<T>>> {
    let mut map: BTreeMap<usize, Vec<&RunRecord<T>>> = BTreeMap::new();
    for r in records {
        map.entry(r.config_id).or_default().push(r);
    }
    map
}

fn is_complete<T>(runs: &[&RunRecord<T>]) -> bool {
    let mut folds: Vec<usize> = runs.iter().map(|r| r.fold_id).collect();
    folds.sort_unstable();
    folds.dedup();
    folds.len() == NUM_FOLDS && folds.iter().all(|&f| f < NUM_FOLDS)
}

/// Fold-average of each group's metric, `None` for a group with no defined
/// value in any fold.
fn fold_averaged_group_values<T: Scalar>(
    runs: &[&RunRecord<T>],
    value: impl Fn(&GroupMetricTable<T>, usize) -> Option<T>,
) -> Vec<Option<T>> {
    let k = runs[0].validation.groups.len();
    (0..k)
        .map(|g| {
            let vals: Vec<T> = runs
                .iter()
                .filter_map(|r| value(&r.validation, g))
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().copied().sum::<T>() / T::from_usize_lossy(vals.len()))
            }
        })
        .collect()
}

/// Criterion value for one complete config, or `None` when undefined (e.g.
/// a group whose AUC is undefined in every fold).
fn config_score<T: Scalar>(runs: &[&RunRecord<T>], criterion: SelectionCriterion) -> Option<T> {
    match criterion {
        SelectionCriterion::MeanLoss => {
            let total: T = runs.iter().map(|r| r.validation.overall.loss).sum();
            Some(total / T::from_usize_lossy(runs.len()))
        }
        SelectionCriterion::WorstGroupLoss => {
            let avgs = fold_averaged_group_values(runs, |t, g| Some(t.groups[g].loss));
            avgs.into_iter()
                .flatten()
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
        }
        SelectionCriterion::WorstGroupAuc => {
            let avgs = fold_averaged_group_values(runs, |t, g| t.groups[g].auc);
            if avgs.iter().any(|a| a.is_none()) {
                return None; // a group never had a defined AUC: not rankable
            }
            avgs.into_iter()
                .flatten()
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v))))
        }
    }
}

/// Select the best complete config under a criterion. Per-group metrics are
/// averaged over the five folds first, then reduced across groups.
pub fn select<T: Scalar>(
    records: &[RunRecord<T>],
    criterion: SelectionCriterion,
) -> Result<SelectionReport<T>> {
    let mut ranked: Vec<ConfigScore<T>> = Vec::new();
    let mut excluded = Vec::new();
    for (config_id, runs) in by_config(records) {
        if !is_complete(&runs) {
            excluded.push(config_id);
            continue;
        }
        match config_score(&runs, criterion) {
            Some(value) => ranked.push(ConfigScore { config_id, value }),
            None => excluded.push(config_id),
        }
    }
    if ranked.is_empty() {
        return Err(Error::config(
            "no configuration with five completed folds to select from",
        ));
    }
    // Best first; ties by lower config id (sort is stable, input is id-ordered).
    match criterion {
        SelectionCriterion::WorstGroupAuc => {
            ranked.sort_by(|a, b| b.value.partial_cmp(&a.value).expect("finite scores"))
        }
        _ => ranked.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("finite scores")),
    }
    Ok(SelectionReport {
        criterion,
        winner: ranked[0].config_id,
        ranked,
        excluded,
    })
}

/// Per-group winner among stratified runs: argmin of the fold-averaged loss
/// on the group's validation slice. `records_by_group[g]` holds the records
/// of group g's stratified runs (whose tables are restricted to that group,
/// so the overall row is the group's row).
pub fn select_stratified<T: Scalar>(
    records_by_group: &[Vec<RunRecord<T>>],
    group_names: &[String],
) -> Result<Vec<ConfigScore<T>>> {
    if records_by_group.len() != group_names.len() {
        return Err(Error::config(format!(
            "{} record sets for {} groups",
            records_by_group.len(),
            group_names.len()
        )));
    }
    let mut winners = Vec::with_capacity(group_names.len());
    for (g, records) in records_by_group.iter().enumerate() {
        let report = select(records, SelectionCriterion::MeanLoss).map_err(|_| {
            Error::config(format!(
                "group {:?} has no configuration with five completed folds",
                group_names[g]
            ))
        })?;
        winners.push(report.ranked[0].clone());
    }
    Ok(winners)
}
