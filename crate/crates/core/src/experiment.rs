//! End-to-end experiment orchestration: one config file drives data loading
//! or synthesis, partitioning, the hyperparameter sweeps, selection, and
//! bootstrap evaluation, writing every artifact under one output directory.
//!
//! Layout of a completed experiment directory:
//!
//! ```text
//! out/
//!   config.json            resolved copy of the experiment config
//!   partition.json         the train/validation/test split and folds
//!   stores/erm/            record store of the ERM sweep
//!   stores/dro/            record store of the robust sweep (if enabled)
//!   stores/strat_g*/       per-group stores of the stratified sweep
//!   selection/             one JSON report per (family, criterion)
//!   reports/               one JSON metric report per (family, criterion)
//! ```
//!
//! All randomness derives from the single config seed through fixed salts,
//! so every command is a pure function of its config file: rerunning any
//! command reproduces its artifacts byte for byte, and finished sweep runs
//! are never retrained.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, partition, synthesize, Dataset, Partition, SyntheticSpec, NUM_FOLDS};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_method, BootstrapSpec, EvalData, MetricReport};
use crate::metrics::{group_metric_table, RecalTransform};
use crate::model::ModelSpec;
use crate::rng::mix_seed;
use crate::scalar::Scalar;
use crate::selection::{
    expand_grid, run_sweep, select, select_stratified, ConfigScore, GridPoint, GridSpec,
    ObjectiveVariant, RecordStore, RunRecord, SelectionCriterion, SelectionReport,
    SweepFailure, SweepOutcome,
};
use crate::trainer::{score_rows, train_stratified, Sampler};

/// Seed salts: one fixed salt per consumer of the experiment seed.
const SALT_PARTITION: u64 = 101;
const SALT_ERM_SWEEP: u64 = 102;
const SALT_DRO_SWEEP: u64 = 103;
const SALT_STRATIFIED: u64 = 104;
const SALT_BOOTSTRAP: u64 = 105;

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: String,
        label_col: String,
        group_col: String,
    },
    Synthetic {
        spec: SyntheticSpec,
    },
}

/// How the robust sweep's grid is chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DroMode {
    /// No robust sweep.
    Off,
    /// Fix the model axes to the ERM winner (by pooled mean loss) and run
    /// the default robust grid.
    #[default]
    Auto,
    /// Run exactly this grid.
    Grid { grid: GridSpec },
}

fn default_true() -> bool {
    true
}

fn default_criteria() -> Vec<SelectionCriterion> {
    vec![
        SelectionCriterion::MeanLoss,
        SelectionCriterion::WorstGroupLoss,
        SelectionCriterion::WorstGroupAuc,
    ]
}

fn default_b() -> usize {
    crate::evaluation::DEFAULT_REPLICATES
}

fn default_alpha() -> f64 {
    crate::evaluation::DEFAULT_ALPHA
}

/// One experiment, in full. Seeds are explicit; every command derives its
/// randomness from `seed` through fixed salts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub seed: u64,
    /// Standardize features to train-split moments before any training.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub transform: RecalTransform,
    #[serde(default)]
    pub erm_grid: GridSpec,
    #[serde(default)]
    pub dro: DroMode,
    /// Per-group model grid; `None` disables the stratified family.
    #[serde(default)]
    pub stratified_grid: Option<GridSpec>,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<SelectionCriterion>,
    #[serde(default = "default_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Output directory; a command-line `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Read a config from a TOML (`.toml`) or JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)
                .map_err(|e| Error::config(format!("invalid TOML config: {e}")))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("invalid JSON config: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.erm_grid.validate()?;
        if let DroMode::Grid { grid } = &self.dro {
            grid.validate()?;
        }
        if let Some(grid) = &self.stratified_grid {
            grid.validate()?;
        }
        if self.criteria.is_empty() {
            return Err(Error::config("no selection criteria configured"));
        }
        if self.bootstrap_b == 0 {
            return Err(Error::config("bootstrap_b must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha {} must lie strictly between 0 and 1",
                self.alpha
            )));
        }
        Ok(())
    }

    /// The output directory, preferring an explicit override.
    pub fn resolve_out(&self, cli_out: Option<&Path>) -> Result<PathBuf> {
        cli_out
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| Error::config("no output directory: set out_dir or pass --out"))
    }
}

/// The default grid of the stratified family: per-group logistic models over
/// the weight-decay axis.
pub fn stratified_default_grid() -> GridSpec {
    GridSpec {
        variants: vec![ObjectiveVariant::Erm],
        hidden_layouts: vec![vec![]],
        dropouts: vec![0.0],
        weight_decays: vec![0.0, 0.01, 0.001],
        samplers: vec![Sampler::Standard],
        early_stop_rules: vec![crate::trainer::EarlyStopRule::PooledLoss],
        ..GridSpec::default()
    }
}

/// Dataset plus partition, with the resolved config and partition persisted.
pub struct Prepared<T> {
    pub ds: Dataset<T>,
    pub part: Partition,
    pub out: PathBuf,
}

/// Load or synthesize the data, partition it, standardize if configured, and
/// write `config.json` and `partition.json` into the output directory.
pub fn prepare<T: Scalar>(config: &ExperimentConfig, out: &Path) -> Result<Prepared<T>> {
    config.validate()?;
    let raw: Dataset<T> = match &config.data {
        DataSource::Csv {
            path,
            label_col,
            group_col,
        } => load_csv(Path::new(path), label_col, group_col)?,
        DataSource::Synthetic { spec } => synthesize(spec)?,
    };
    let part = partition(raw.len(), mix_seed(config.seed, SALT_PARTITION))?;
    let ds = if config.standardize {
        raw.standardized(&part.train_idx)?
    } else {
        raw
    };
    fs::create_dir_all(out)?;
    // The copy omits the output path so it is byte-identical wherever the
    // experiment lands; every seed inside it is explicit.
    let resolved = ExperimentConfig {
        out_dir: None,
        ..config.clone()
    };
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&resolved).expect("config serializes"),
    )?;
    fs::write(out.join("partition.json"), part.to_json())?;
    Ok(Prepared { ds, part, out: out.to_path_buf() })
}

/// Write the synthetic CSV plus a provenance JSON recording the generator
/// spec (which includes its seed). Only valid for synthetic sources.
pub fn cmd_synth<T: Scalar>(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let DataSource::Synthetic { spec } = &config.data else {
        return Err(Error::config("synth requires a synthetic data source"));
    };
    let ds: Dataset<T> = synthesize(spec)?;
    fs::create_dir_all(out)?;
    let csv_path = out.join("data.csv");
    ds.write_csv(&csv_path)?;
    fs::write(
        out.join("provenance.json"),
        serde_json::to_string_pretty(spec).expect("spec serializes"),
    )?;
    Ok(csv_path)
}

/// Counts from one family's sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepStats {
    pub configs: usize,
    pub records: usize,
    pub failures: usize,
}

impl<T> From<&SweepOutcome<T>> for SweepStats {
    fn from(o: &SweepOutcome<T>) -> Self {
        SweepStats {
            configs: (o.records.len() + o.failures.len()) / NUM_FOLDS,
            records: o.records.len(),
            failures: o.failures.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub erm: SweepStats,
    pub dro: Option<SweepStats>,
    pub stratified: Option<Vec<SweepStats>>,
    pub total_failures: usize,
}

/// The ERM winner by pooled mean loss, used to fix model axes in `Auto`
/// robust grids.
fn erm_winner_point<T: Scalar>(
    grid: &[GridPoint],
    records: &[RunRecord<T>],
) -> Result<GridPoint> {
    let report = select(records, SelectionCriterion::MeanLoss)?;
    grid.iter()
        .find(|p| p.id == report.winner)
        .cloned()
        .ok_or_else(|| Error::config(format!("winner config {} not in grid", report.winner)))
}

fn dro_grid_for<T: Scalar>(
    config: &ExperimentConfig,
    erm_grid: &[GridPoint],
    erm_records: &[RunRecord<T>],
) -> Result<Option<Vec<GridPoint>>> {
    match &config.dro {
        DroMode::Off => Ok(None),
        DroMode::Grid { grid } => Ok(Some(expand_grid(grid)?)),
        DroMode::Auto => {
            let winner = erm_winner_point(erm_grid, erm_records)?;
            let spec = GridSpec::dro_default(
                winner.objective.learning_rate,
                winner.model.hidden_sizes.clone(),
                winner.model.dropout_p,
            );
            Ok(Some(expand_grid(&spec)?))
        }
    }
}

/// Train and evaluate every (config, fold) pair of a stratified sweep for
/// one group, mirroring `run_sweep` but restricting training and evaluation
/// to the group's rows (tables are single-group: overall = the group).
pub fn run_sweep_stratified<T: Scalar>(
    ds: &Dataset<T>,
    part: &Partition,
    grid: &[GridPoint],
    group_id: usize,
    seed: u64,
    transform: RecalTransform,
    store: &RecordStore,
) -> Result<SweepOutcome<T>> {
    use rayon::prelude::*;
    if grid.is_empty() {
        return Err(Error::config("cannot sweep an empty grid"));
    }
    if group_id >= ds.num_groups() {
        return Err(Error::config(format!(
            "group {group_id} out of range for {} groups",
            ds.num_groups()
        )));
    }
    let name = vec![ds.group_names()[group_id].clone()];
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
                let train_seed =
                    mix_seed(mix_seed(seed, 2), (point.id * NUM_FOLDS + fold_id) as u64);
                let trained = train_stratified(
                    ds,
                    part,
                    fold_id,
                    &model_spec,
                    &point.objective,
                    group_id,
                    train_seed,
                )?;
                let group_rows = |rows: &[usize]| -> Vec<usize> {
                    rows.iter()
                        .copied()
                        .filter(|&i| ds.groups()[i] == group_id)
                        .collect()
                };
                let table_on = |rows: &[usize]| -> Result<crate::metrics::GroupMetricTable<T>> {
                    let scores = score_rows(&trained.params, ds, rows)?;
                    let labels: Vec<u8> = rows.iter().map(|&i| ds.labels()[i]).collect();
                    let zeros = vec![0usize; rows.len()];
                    group_metric_table(&scores, &labels, &zeros, &name, transform)
                };
                let val_rows = group_rows(&part.val_idx);
                if val_rows.is_empty() {
                    return Err(Error::data(format!(
                        "group {:?} has no validation rows",
                        name[0]
                    )));
                }
                let validation = table_on(&val_rows)?;
                let dev_rows = group_rows(part.dev_pool(fold_id)?);
                let dev = if dev_rows.is_empty() {
                    None
                } else {
                    table_on(&dev_rows).ok()
                };
                let record = RunRecord {
                    config_id: point.id,
                    fold_id,
                    validation,
                    dev,
                    model_path: RecordStore::model_rel_path(point.id, fold_id),
                };
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
    let index = crate::selection::StoreIndex {
        completed: records.iter().map(|r| (r.config_id, r.fold_id)).collect(),
        failures: failures.clone(),
    };
    store.write_index(&index)?;
    Ok(SweepOutcome { records, failures })
}

/// Run every configured sweep (ERM, robust, stratified), resumably.
pub fn cmd_run<T: Scalar>(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let prepared: Prepared<T> = prepare(config, out)?;
    let Prepared { ds, part, out } = &prepared;

    let erm_grid = expand_grid(&config.erm_grid)?;
    let erm_store = RecordStore::create(out.join("stores/erm"))?;
    let erm_out = run_sweep(
        ds,
        part,
        &erm_grid,
        mix_seed(config.seed, SALT_ERM_SWEEP),
        config.transform,
        &erm_store,
    )?;
    let erm_stats = SweepStats::from(&erm_out);

    let dro_stats = match dro_grid_for(config, &erm_grid, &erm_out.records)? {
        None => None,
        Some(grid) => {
            let store = RecordStore::create(out.join("stores/dro"))?;
            let outcome = run_sweep(
                ds,
                part,
                &grid,
                mix_seed(config.seed, SALT_DRO_SWEEP),
                config.transform,
                &store,
            )?;
            Some(SweepStats::from(&outcome))
        }
    };

    let strat_stats = match &config.stratified_grid {
        None => None,
        Some(spec) => {
            let grid = expand_grid(spec)?;
            let mut stats = Vec::new();
            for g in 0..ds.num_groups() {
                let store = RecordStore::create(out.join(format!("stores/strat_g{g}")))?;
                let outcome = run_sweep_stratified(
                    ds,
                    part,
                    &grid,
                    g,
                    mix_seed(mix_seed(config.seed, SALT_STRATIFIED), g as u64),
                    config.transform,
                    &store,
                )?;
                stats.push(SweepStats::from(&outcome));
            }
            Some(stats)
        }
    };

    let total_failures = erm_stats.failures
        + dro_stats.as_ref().map_or(0, |s| s.failures)
        + strat_stats
            .as_ref()
            .map_or(0, |s| s.iter().map(|x| x.failures).sum());
    let summary = RunSummary {
        erm: erm_stats,
        dro: dro_stats,
        stratified: strat_stats,
        total_failures,
    };
    fs::write(
        out.join("run_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

fn read_store_records<T: Scalar>(store: &RecordStore) -> Result<Vec<RunRecord<T>>> {
    store
        .scan()?
        .into_iter()
        .map(|(c, f)| store.read_record(c, f))
        .collect()
}

/// One method family eligible for selection: a store, its grid, and its
/// records (the subset of the store belonging to this family's variant).
pub struct FamilyRuns<T> {
    pub name: String,
    pub store: RecordStore,
    pub grid: Vec<GridPoint>,
    pub records: Vec<RunRecord<T>>,
}

/// Reload every family's records from the experiment directory.
pub fn load_families<T: Scalar>(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<FamilyRuns<T>>> {
    let erm_grid = expand_grid(&config.erm_grid)?;
    let erm_store = RecordStore::create(out.join("stores/erm"))?;
    let erm_records: Vec<RunRecord<T>> = read_store_records(&erm_store)?;
    let mut families = vec![FamilyRuns {
        name: "erm".to_string(),
        store: erm_store,
        grid: erm_grid.clone(),
        records: erm_records.clone(),
    }];
    if let Some(dro_grid) = dro_grid_for(config, &erm_grid, &erm_records)? {
        let store = RecordStore::create(out.join("stores/dro"))?;
        let records: Vec<RunRecord<T>> = read_store_records(&store)?;
        // Split the robust store into one family per objective variant.
        let mut variants: Vec<ObjectiveVariant> = Vec::new();
        for p in &dro_grid {
            if !variants.contains(&p.variant) {
                variants.push(p.variant);
            }
        }
        for variant in variants {
            let ids: Vec<usize> = dro_grid
                .iter()
                .filter(|p| p.variant == variant)
                .map(|p| p.id)
                .collect();
            let subset: Vec<RunRecord<T>> = records
                .iter()
                .filter(|r| ids.contains(&r.config_id))
                .cloned()
                .collect();
            families.push(FamilyRuns {
                name: variant.name().to_string(),
                store: RecordStore::create(out.join("stores/dro"))?,
                grid: dro_grid.clone(),
                records: subset,
            });
        }
    }
    Ok(families)
}

/// The pooled-ERM mean-loss baseline: selection restricted to
/// standard-sampler ERM configs. Errors when no such config completed.
pub fn baseline_selection<T: Scalar>(
    erm: &FamilyRuns<T>,
) -> Result<SelectionReport<T>> {
    let standard_ids: Vec<usize> = erm
        .grid
        .iter()
        .filter(|p| {
            p.variant == ObjectiveVariant::Erm && p.objective.sampler == Sampler::Standard
        })
        .map(|p| p.id)
        .collect();
    let subset: Vec<RunRecord<T>> = erm
        .records
        .iter()
        .filter(|r| standard_ids.contains(&r.config_id))
        .cloned()
        .collect();
    select(&subset, SelectionCriterion::MeanLoss)
        .map_err(|_| Error::config("no completed pooled-ERM config to use as the baseline"))
}

/// Selection artifacts: per (family, criterion) reports plus the stratified
/// per-group winners when that family is enabled.
#[derive(Debug)]
pub struct SelectionArtifacts<T> {
    pub baseline: SelectionReport<T>,
    pub by_family: Vec<(String, SelectionCriterion, SelectionReport<T>)>,
    pub stratified: Option<Vec<ConfigScore<T>>>,
}

/// Select winners for every (family, criterion) and persist the reports.
pub fn cmd_select<T: Scalar>(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<SelectionArtifacts<T>> {
    config.validate()?;
    let families: Vec<FamilyRuns<T>> = load_families(config, out)?;
    let sel_dir = out.join("selection");
    fs::create_dir_all(&sel_dir)?;

    let baseline = baseline_selection(&families[0])?;
    fs::write(
        sel_dir.join("baseline.json"),
        serde_json::to_string_pretty(&baseline).expect("report serializes"),
    )?;

    let mut by_family = Vec::new();
    for family in &families {
        for &criterion in &config.criteria {
            let report = select(&family.records, criterion)?;
            fs::write(
                sel_dir.join(format!("{}_{}.json", family.name, criterion)),
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            by_family.push((family.name.clone(), criterion, report));
        }
    }

    let stratified = match &config.stratified_grid {
        None => None,
        Some(_) => {
            let prepared: Prepared<T> = prepare(config, out)?;
            let k = prepared.ds.num_groups();
            let mut per_group = Vec::with_capacity(k);
            for g in 0..k {
                let store = RecordStore::create(out.join(format!("stores/strat_g{g}")))?;
                per_group.push(read_store_records::<T>(&store)?);
            }
            let winners = select_stratified(&per_group, prepared.ds.group_names())?;
            fs::write(
                sel_dir.join("stratified.json"),
                serde_json::to_string_pretty(&winners).expect("report serializes"),
            )?;
            Some(winners)
        }
    };

    Ok(SelectionArtifacts {
        baseline,
        by_family,
        stratified,
    })
}

/// Scores of one config's five fold models on the given rows.
fn fold_model_scores<T: Scalar>(
    store: &RecordStore,
    config_id: usize,
    ds: &Dataset<T>,
    rows: &[usize],
) -> Result<Vec<Vec<T>>> {
    (0..NUM_FOLDS)
        .map(|f| {
            let trained = store.read_model::<T>(config_id, f)?;
            score_rows(&trained.params, ds, rows)
        })
        .collect()
}

/// Composite stratified scores: each row is scored by its own group's
/// winning model. One score vector per fold.
pub fn composite_scores<T: Scalar>(
    ds: &Dataset<T>,
    rows: &[usize],
    winners: &[ConfigScore<T>],
    out: &Path,
) -> Result<Vec<Vec<T>>> {
    let k = ds.num_groups();
    if winners.len() != k {
        return Err(Error::config(format!(
            "{} stratified winners for {k} groups",
            winners.len()
        )));
    }
    let mut per_fold = vec![vec![T::zero(); rows.len()]; NUM_FOLDS];
    for g in 0..k {
        let store = RecordStore::create(out.join(format!("stores/strat_g{g}")))?;
        let positions: Vec<usize> = (0..rows.len())
            .filter(|&p| ds.groups()[rows[p]] == g)
            .collect();
        let group_rows: Vec<usize> = positions.iter().map(|&p| rows[p]).collect();
        for f in 0..NUM_FOLDS {
            let trained = store.read_model::<T>(winners[g].config_id, f)?;
            let scores = score_rows(&trained.params, ds, &group_rows)?;
            for (&p, &s) in positions.iter().zip(&scores) {
                per_fold[f][p] = s;
            }
        }
    }
    Ok(per_fold)
}

/// Bootstrap-evaluate every selected method on the test split, against the
/// pooled-ERM mean-loss baseline, and persist one report per method.
pub fn cmd_evaluate<T: Scalar>(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<MetricReport<T>>> {
    let prepared: Prepared<T> = prepare(config, out)?;
    let Prepared { ds, part, out } = &prepared;
    let selection: SelectionArtifacts<T> = cmd_select(config, out)?;
    let families: Vec<FamilyRuns<T>> = load_families(config, out)?;

    let test_rows = &part.test_idx;
    let labels: Vec<u8> = test_rows.iter().map(|&i| ds.labels()[i]).collect();
    let groups: Vec<usize> = test_rows.iter().map(|&i| ds.groups()[i]).collect();
    let spec = BootstrapSpec {
        b: config.bootstrap_b,
        alpha: config.alpha,
        seed: mix_seed(config.seed, SALT_BOOTSTRAP),
    };

    let erm_store = &families[0].store;
    let baseline_scores = fold_model_scores(erm_store, selection.baseline.winner, ds, test_rows)?;
    let baseline_data = EvalData {
        scores: &baseline_scores,
        labels: &labels,
        groups: &groups,
        group_names: ds.group_names(),
        transform: config.transform,
    };

    let report_dir = out.join("reports");
    fs::create_dir_all(&report_dir)?;
    let mut reports = Vec::new();
    for (family_name, criterion, report) in &selection.by_family {
        let store = &families
            .iter()
            .find(|f| &f.name == family_name)
            .expect("family exists")
            .store;
        let scores = fold_model_scores(store, report.winner, ds, test_rows)?;
        let data = EvalData {
            scores: &scores,
            labels: &labels,
            groups: &groups,
            group_names: ds.group_names(),
            transform: config.transform,
        };
        let name = format!("{family_name}_{criterion}");
        let metric_report = evaluate_method(&name, &data, Some(("erm_baseline", &baseline_data)), &spec)?;
        fs::write(
            report_dir.join(format!("{name}.json")),
            metric_report.to_json(),
        )?;
        reports.push(metric_report);
    }

    if let Some(winners) = &selection.stratified {
        let scores = composite_scores(ds, test_rows, winners, out)?;
        let data = EvalData {
            scores: &scores,
            labels: &labels,
            groups: &groups,
            group_names: ds.group_names(),
            transform: config.transform,
        };
        let metric_report =
            evaluate_method("stratified", &data, Some(("erm_baseline", &baseline_data)), &spec)?;
        fs::write(
            report_dir.join("stratified.json"),
            metric_report.to_json(),
        )?;
        reports.push(metric_report);
    }
    Ok(reports)
}

/// Render every JSON metric report in the output directory to CSV, returning
/// the CSV paths.
pub fn cmd_report(out: &Path) -> Result<Vec<PathBuf>> {
    let report_dir = out.join("reports");
    if !report_dir.is_dir() {
        return Err(Error::config(format!(
            "no reports directory under {}; run evaluate first",
            out.display()
        )));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(&report_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    let mut written = Vec::new();
    for path in entries {
        let report = MetricReport::<f64>::from_json(&fs::read_to_string(&path)?)?;
        let csv_path = path.with_extension("csv");
        report.write_csv(&csv_path)?;
        written.push(csv_path);
    }
    if written.is_empty() {
        return Err(Error::config("no metric reports found to render"));
    }
    Ok(written)
}
