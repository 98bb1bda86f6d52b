//! Experiment orchestration: data preparation, per-method runs, reports and
//! grid search.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::thread;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, RegStrength};
use crate::data::{
    inject_spurious, load_csv, split_indices, synth_generate, LabelColumn, PartitionSpec, Partitioned,
    Standardizer, TabularDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{
    check_significance, cost_to_targets, default_grid, global_mask, spurious_removed_fraction, MetricsPoint,
    Significance,
};
use crate::nn::{Activation, DenseNetwork, Labels, LossKind};
use crate::protocol::{BatchPlan, CommLedger, DataSplit, GroupLassoStep, Party, Phase, VflSystem};
use crate::selectors::{
    extract_mask, less_vfl_run, local_lasso_run, pretrain_with, select_from_pretrained, Observer, Progress,
    SelectionConfig,
};
use crate::seed::{self, Stream};

/// Train/test data of one method, already partitioned.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: TabularDataset,
    pub test: TabularDataset,
    /// Global column indices held by each party.
    pub columns: Vec<Vec<usize>>,
}

impl PreparedData {
    pub fn flags(&self) -> &[bool] {
        &self.train.spurious_flags
    }
}

fn base_dataset(cfg: &ExperimentConfig) -> Result<TabularDataset> {
    if let Some(spec) = &cfg.data.synthetic {
        return Ok(synth_generate(spec, seed::stream_seed(cfg.seed, Stream::Data))?.0);
    }
    let csv = cfg
        .data
        .csv
        .as_ref()
        .ok_or_else(|| Error::config("data", "no data source"))?;
    let ds = load_csv(&csv.path, &LabelColumn::parse(&csv.label_column), csv.has_header)?;
    inject_spurious(&ds, cfg.data.spurious_ratio, seed::stream_seed(cfg.seed, Stream::Spurious))
}

fn partition_spec(cfg: &ExperimentConfig) -> Result<PartitionSpec> {
    match (&cfg.partition, &cfg.data.synthetic) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(s)) => Ok(PartitionSpec::even(s.parties)),
        (None, None) => Err(Error::config("partition", "required for CSV data")),
    }
}

/// Loads or generates the data, splits it, standardizes it when configured
/// and resolves the vertical partition. `original_only` drops every flagged
/// column (the VFL-Original baseline); the remaining columns keep their
/// party assignment.
pub fn prepare_data(cfg: &ExperimentConfig, original_only: bool) -> Result<PreparedData> {
    let full = base_dataset(cfg)?;
    let mut columns = partition_spec(cfg)?.resolve(&full.spurious_flags)?;
    let ds = if original_only {
        let keep: Vec<usize> = (0..full.n_features()).filter(|&j| !full.spurious_flags[j]).collect();
        let mut new_index = vec![usize::MAX; full.n_features()];
        for (new, &old) in keep.iter().enumerate() {
            new_index[old] = new;
        }
        columns = columns
            .into_iter()
            .map(|list| list.into_iter().filter(|&j| !full.spurious_flags[j]).map(|j| new_index[j]).collect())
            .collect();
        if let Some(m) = columns.iter().position(Vec::is_empty) {
            return Err(Error::config("partition", format!("party {m} holds only spurious columns")));
        }
        full.select_columns(&keep)
    } else {
        full
    };

    let (train_rows, test_rows) = split_indices(
        ds.n_samples(),
        cfg.data.train_fraction,
        seed::stream_seed(cfg.seed, Stream::Split),
    )?;
    let mut train = ds.select_rows(&train_rows);
    let mut test = ds.select_rows(&test_rows);
    if train.n_samples() == 0 || test.n_samples() == 0 {
        return Err(Error::config("data.train_fraction", "leaves an empty split"));
    }
    if cfg.data.standardize() {
        let z = Standardizer::fit(&train.features);
        z.apply(&mut train.features);
        z.apply(&mut test.features);
    }
    Ok(PreparedData { train, test, columns })
}

fn labels(ds: &TabularDataset, loss: LossKind, classes: usize) -> Result<Labels> {
    match loss {
        LossKind::SquaredError => Ok(Labels::Real(
            Array2::from_shape_vec((ds.n_samples(), 1), ds.labels.clone()).map_err(|e| Error::Domain(e.to_string()))?,
        )),
        LossKind::SoftmaxCrossEntropy => {
            let index = ds
                .labels
                .iter()
                .map(|&y| {
                    if y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes {
                        Ok(y as usize)
                    } else {
                        Err(Error::Domain(format!("label {y} is not a class index below {classes}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Labels::Classes { index, classes })
        }
    }
}

/// Builds the VFL system for prepared data. Party `m` is initialized from
/// `derive(init, m)` and the server from `derive(init, M)`.
pub fn build_system(cfg: &ExperimentConfig, data: &PreparedData) -> Result<VflSystem> {
    let loss = cfg.loss()?;
    let classes = match loss {
        LossKind::SquaredError => 1,
        LossKind::SoftmaxCrossEntropy => {
            let count = |ds: &TabularDataset| {
                ds.class_count()
                    .ok_or_else(|| Error::config("model.loss", "cross-entropy needs integer class labels"))
            };
            count(&data.train)?.max(count(&data.test)?).max(2)
        }
    };
    let init = seed::stream_seed(cfg.seed, Stream::Init);
    let model = &cfg.model;
    let train_shards = Partitioned::from_columns(&data.train.features, data.columns.clone());
    let test_shards = Partitioned::from_columns(&data.test.features, data.columns.clone());
    let parties = data
        .columns
        .iter()
        .enumerate()
        .map(|(m, cols)| {
            let mut rng = seed::rng(seed::derive(init, m as u64));
            let net = DenseNetwork::init(cols.len(), &model.party_hidden, model.embedding_dim, model.activation, &mut rng)?;
            Party::new(
                net,
                cfg.training.optimizer,
                train_shards.shards[m].clone(),
                test_shards.shards[m].clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let m = parties.len();
    let mut rng = seed::rng(seed::derive(init, m as u64));
    let activation = if model.server_hidden.is_empty() {
        Activation::Identity
    } else {
        model.activation
    };
    let server = DenseNetwork::init(m * model.embedding_dim, &model.server_hidden, classes, activation, &mut rng)?;
    VflSystem::new(
        server,
        cfg.training.optimizer,
        parties,
        labels(&data.train, loss, classes)?,
        labels(&data.test, loss, classes)?,
        cfg.seed,
    )
}

/// Observer that evaluates the test split at every logged point.
pub struct MetricsLogger {
    loss: LossKind,
    flags: Vec<bool>,
    columns: Vec<Vec<usize>>,
    pub series: Vec<MetricsPoint>,
}

impl MetricsLogger {
    pub fn new(loss: LossKind, data: &PreparedData) -> Self {
        MetricsLogger {
            loss,
            flags: data.flags().to_vec(),
            columns: data.columns.clone(),
            series: Vec::new(),
        }
    }
}

impl Observer for MetricsLogger {
    fn observe(&mut self, system: &VflSystem, progress: &Progress) -> Result<()> {
        let eval = system.evaluate(DataSplit::Test, self.loss)?;
        let mask = extract_mask(system);
        let removal = spurious_removed_fraction(&global_mask(&mask.per_party, &self.columns), &self.flags)?;
        let ledger = system.ledger();
        let components = match &progress.components {
            Some(k) => k.sizes(),
            None => system.component_map().dims().to_vec(),
        };
        self.series.push(MetricsPoint {
            step: Phase::ALL.iter().map(|&p| ledger.phase(p).rounds).sum(),
            phase: progress.phase,
            epoch: progress.epoch,
            cumulative_mb: ledger.total_mb(),
            train_loss: progress.train_loss,
            test_loss: eval.loss,
            test_accuracy: eval.accuracy,
            spurious_removed_fraction: removal,
            surviving_features: mask.surviving_counts(),
            components,
        });
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_test_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// Test loss at the end of pre-training, for staged methods.
    pub pretrained_test_loss: Option<f64>,
    pub spurious_removed_fraction: Option<f64>,
    pub total_mb: f64,
    /// VFL-Original's best test accuracy, when it ran in the same suite.
    pub baseline_best_accuracy: Option<f64>,
    pub cost_to_targets_mb: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: Method,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub feature_names: Vec<String>,
    pub spurious_flags: Vec<bool>,
    pub columns: Vec<Vec<usize>>,
    pub series: Vec<MetricsPoint>,
    /// Global feature mask of the final model (`true` = kept).
    pub final_mask: Vec<bool>,
    /// Significant embedding components per party, for staged methods.
    pub components: Option<Vec<Vec<usize>>>,
    /// Empirical significance of every feature in the final model: each
    /// column replaced by 13 grid values on up to 64 test rows, tolerance
    /// 1e-9. A finite probe, not a proof.
    pub significance: Vec<Significance>,
    pub ledger: CommLedger,
    pub summary: RunSummary,
    pub error: Option<String>,
}

const SIGNIFICANCE_TOL: f64 = 1e-9;
const SIGNIFICANCE_PROBES: usize = 64;

fn selection_config(cfg: &ExperimentConfig, method: Method, n_train: usize, parties: usize) -> SelectionConfig {
    let epochs = cfg.training.epochs;
    let loss = cfg.loss().unwrap_or(LossKind::SquaredError);
    match method {
        Method::LocalLasso => {
            let p = &cfg.local_lasso;
            SelectionConfig {
                loss,
                batch_size: cfg.training.batch_size,
                local_batch_size: p.local_batch_size.unwrap_or(cfg.training.batch_size),
                pretrain_epochs: p.pretrain_epochs,
                component_selection: false,
                server_lambda: 0.0,
                server_learning_rate: cfg.less_vfl.server_learning_rate,
                stage2_epochs: 0,
                party_lambdas: vec![p.party_lambda.resolve(n_train); parties],
                party_learning_rate: p.party_learning_rate,
                stage3_epochs: p.stage3_epochs,
                refine_epochs: p.refine_epochs.unwrap_or(epochs.saturating_sub(p.pretrain_epochs)),
                prune_components: false,
                parallel_parties: p.parallel_parties,
                seed: cfg.seed,
            }
        }
        _ => {
            let p = &cfg.less_vfl;
            SelectionConfig {
                loss,
                batch_size: cfg.training.batch_size,
                local_batch_size: p.local_batch_size.unwrap_or(cfg.training.batch_size),
                pretrain_epochs: p.pretrain_epochs,
                component_selection: true,
                server_lambda: p.server_lambda.resolve(n_train),
                server_learning_rate: p.server_learning_rate,
                stage2_epochs: p.stage2_epochs,
                party_lambdas: vec![p.party_lambda.resolve(n_train); parties],
                party_learning_rate: p.party_learning_rate,
                stage3_epochs: p.stage3_epochs,
                refine_epochs: p.refine_epochs.unwrap_or(epochs.saturating_sub(p.pretrain_epochs)),
                prune_components: p.prune_components,
                parallel_parties: p.parallel_parties,
                seed: cfg.seed,
            }
        }
    }
}

fn standard_training(
    system: &mut VflSystem,
    cfg: &ExperimentConfig,
    batch_size: usize,
    reg: Option<&GroupLassoStep>,
    observer: &mut dyn Observer,
) -> Result<()> {
    let loss = cfg.loss()?;
    let plan = BatchPlan::new(
        system.n_train(),
        batch_size,
        seed::stream_seed(cfg.seed, Stream::Batches),
    )?;
    system.set_phase(Phase::Standard);
    let progress = |epoch, train_loss| Progress {
        phase: Phase::Standard,
        epoch,
        train_loss,
        components: None,
    };
    observer.observe(system, &progress(0, None))?;
    for e in 0..cfg.training.epochs {
        let l = system.train_epoch(&plan, e as u64, loss, reg)?;
        observer.observe(system, &progress(e + 1, Some(l)))?;
    }
    Ok(())
}

fn significance(system: &VflSystem, columns: &[Vec<usize>]) -> Result<Vec<Significance>> {
    let d = columns.iter().map(Vec::len).sum();
    let mut out = vec![Significance::Significant; d];
    for (p, cols) in system.parties().iter().zip(columns) {
        let test = p.shard(DataSplit::Test);
        let probes = test.slice(s![..test.nrows().min(SIGNIFICANCE_PROBES), ..]);
        for (local, &global) in cols.iter().enumerate() {
            let grid = default_grid(probes, local);
            out[global] = check_significance(p.net(), local, probes, &grid, SIGNIFICANCE_TOL)?;
        }
    }
    Ok(out)
}

fn execute(
    system: &mut VflSystem,
    cfg: &ExperimentConfig,
    method: Method,
    logger: &mut MetricsLogger,
) -> Result<Option<Vec<Vec<usize>>>> {
    let parties = system.parties().len();
    match method {
        Method::VflOriginal | Method::VflSpurious => {
            standard_training(system, cfg, cfg.training.batch_size, None, logger)?;
            Ok(None)
        }
        Method::GroupLasso => {
            let reg = GroupLassoStep {
                lambdas: vec![cfg.group_lasso.lambda.resolve(system.n_train()); parties],
                learning_rate: cfg.group_lasso.learning_rate,
            };
            let batch_size = cfg.group_lasso.batch_size.unwrap_or(cfg.training.batch_size);
            standard_training(system, cfg, batch_size, Some(&reg), logger)?;
            Ok(None)
        }
        Method::LessVfl | Method::LocalLasso => {
            let sel = selection_config(cfg, method, system.n_train(), parties);
            let report = if method == Method::LessVfl {
                less_vfl_run(system, &sel, logger)?
            } else {
                local_lasso_run(system, &sel, logger)?
            };
            Ok(Some(report.components.per_party))
        }
    }
}

fn summarize(series: &[MetricsPoint], ledger: &CommLedger) -> RunSummary {
    let best = series
        .iter()
        .filter_map(|p| p.test_accuracy)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    let pretrained = series
        .iter()
        .rev()
        .find(|p| p.phase == Phase::Pretrain)
        .filter(|_| series.iter().any(|p| p.phase != Phase::Pretrain))
        .map(|p| p.test_loss);
    let last = series.last();
    RunSummary {
        best_test_accuracy: best,
        final_test_accuracy: last.and_then(|p| p.test_accuracy),
        final_test_loss: last.map(|p| p.test_loss),
        final_train_accuracy: None,
        final_train_loss: None,
        pretrained_test_loss: pretrained,
        spurious_removed_fraction: last.map(|p| p.spurious_removed_fraction),
        total_mb: ledger.total_mb(),
        baseline_best_accuracy: None,
        cost_to_targets_mb: None,
    }
}

/// Runs one method end to end. Failures are captured in
/// [`MetricsRecord::error`] together with the series logged so far.
pub fn run_method(cfg: &ExperimentConfig, method: Method) -> MetricsRecord {
    let mut record = MetricsRecord {
        method,
        seed: cfg.seed,
        config: cfg.clone(),
        feature_names: Vec::new(),
        spurious_flags: Vec::new(),
        columns: Vec::new(),
        series: Vec::new(),
        final_mask: Vec::new(),
        components: None,
        significance: Vec::new(),
        ledger: CommLedger::new(),
        summary: RunSummary::default(),
        error: None,
    };
    let result = (|| -> Result<()> {
        let data = prepare_data(cfg, method == Method::VflOriginal)?;
        record.feature_names = data.train.feature_names.clone();
        record.spurious_flags = data.flags().to_vec();
        record.columns = data.columns.clone();
        let mut system = build_system(cfg, &data)?;
        let mut logger = MetricsLogger::new(cfg.loss()?, &data);
        let outcome = execute(&mut system, cfg, method, &mut logger);
        record.series = std::mem::take(&mut logger.series);
        record.ledger = system.ledger().clone();
        record.final_mask = global_mask(&extract_mask(&system).per_party, &data.columns);
        record.summary = summarize(&record.series, &record.ledger);
        record.components = outcome?;
        let train = system.evaluate(DataSplit::Train, cfg.loss()?)?;
        record.summary.final_train_loss = Some(train.loss);
        record.summary.final_train_accuracy = train.accuracy;
        record.significance = significance(&system, &data.columns)?;
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("{method}: {e}");
        record.error = Some(e.to_string());
    }
    record
}

/// Runs every configured method. Costs to targets are filled in against
/// VFL-Original's best test accuracy when that method is part of the suite.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let mut methods = cfg.methods.clone();
    methods.dedup();
    let mut records: Vec<MetricsRecord> = if cfg.parallel_methods {
        thread::scope(|scope| {
            let handles: Vec<_> = methods.iter().map(|&m| scope.spawn(move || run_method(cfg, m))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("method worker panicked"))
                .collect()
        })
    } else {
        methods.iter().map(|&m| run_method(cfg, m)).collect()
    };
    let baseline = records
        .iter()
        .find(|r| r.method == Method::VflOriginal && r.error.is_none())
        .and_then(|r| r.summary.best_test_accuracy);
    for r in &mut records {
        r.summary.baseline_best_accuracy = baseline;
        r.summary.cost_to_targets_mb = baseline.and_then(|b| cost_to_targets(&r.series, b, &cfg.targets));
    }
    Ok(records)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Serialization(format!("{}: {e}", path.display()))
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_series_csv(series: &[MetricsPoint], path: &Path) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "step",
        "phase",
        "epoch",
        "cumulative_mb",
        "train_loss",
        "test_loss",
        "test_accuracy",
        "spurious_removed_fraction",
        "surviving_features",
        "components",
    ])
    .map_err(&err)?;
    for p in series {
        w.write_record([
            p.step.to_string(),
            p.phase.name().to_string(),
            p.epoch.to_string(),
            p.cumulative_mb.to_string(),
            opt(p.train_loss),
            p.test_loss.to_string(),
            opt(p.test_accuracy),
            p.spurious_removed_fraction.to_string(),
            join(&p.surviving_features),
            join(&p.components),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `<dir>/<method>/report.json` and `series.csv` for every record.
pub fn write_reports(dir: &Path, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        let sub = dir.join(r.method.name());
        fs::create_dir_all(&sub).map_err(|source| Error::Io {
            path: sub.clone(),
            source,
        })?;
        let json = serde_json::to_string_pretty(r).map_err(|e| Error::Serialization(e.to_string()))?;
        write_file(&sub.join("report.json"), json.as_bytes())?;
        write_series_csv(&r.series, &sub.join("series.csv"))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsRecord> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// One grid cell aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub method: Method,
    pub pretrain_epochs: usize,
    pub party_lambda: RegStrength,
    /// `None` for local lasso, which has no component selection.
    pub server_lambda: Option<RegStrength>,
    pub seeds: Vec<u64>,
    pub train_accuracy: Option<(f64, f64)>,
    pub test_accuracy: Option<(f64, f64)>,
    pub train_loss: (f64, f64),
    pub test_loss: (f64, f64),
    pub removal: (f64, f64),
    /// Communication of one run; pre-training is shared by every row with
    /// the same pre-training length and seed.
    pub total_mb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Highest mean training accuracy (lowest training loss for regression)
    /// among rows whose mean removal meets the removal target.
    pub winner: Option<usize>,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct CellResult {
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    train_loss: f64,
    test_loss: f64,
    removal: f64,
    mb: f64,
}

/// Sweeps the Cartesian product of the grid. Each (seed, pre-training
/// length) pair is pre-trained once and every λ combination continues from
/// a copy of that checkpoint.
pub fn grid_search(cfg: &ExperimentConfig) -> Result<GridReport> {
    cfg.validate()?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::config("grid", "missing [grid] section"))?;
    if grid.party_lambdas.is_empty() {
        return Err(Error::config("grid.party_lambdas", "grid is empty"));
    }
    let methods = if grid.methods.is_empty() {
        vec![Method::LessVfl]
    } else {
        grid.methods.clone()
    };
    if let Some(m) = methods.iter().find(|m| !matches!(m, Method::LessVfl | Method::LocalLasso)) {
        return Err(Error::config("grid.methods", format!("{m} has no feature-selection stage to tune")));
    }
    let seeds = if grid.seeds.is_empty() { vec![cfg.seed] } else { grid.seeds.clone() };
    let pretrain = if grid.pretrain_epochs.is_empty() {
        vec![cfg.less_vfl.pretrain_epochs]
    } else {
        grid.pretrain_epochs.clone()
    };
    let server_lambdas = if grid.server_lambdas.is_empty() {
        vec![cfg.less_vfl.server_lambda]
    } else {
        grid.server_lambdas.clone()
    };
    let loss = cfg.loss()?;

    type Key = (usize, usize, usize, Option<usize>);
    let mut cells: BTreeMap<Key, Vec<CellResult>> = BTreeMap::new();
    for &seed_value in &seeds {
        let run_cfg = ExperimentConfig {
            seed: seed_value,
            ..cfg.clone()
        };
        let data = prepare_data(&run_cfg, false)?;
        for (ti, &t0) in pretrain.iter().enumerate() {
            let mut base = build_system(&run_cfg, &data)?;
            let mut sel = selection_config(&run_cfg, Method::LessVfl, base.n_train(), data.columns.len());
            sel.pretrain_epochs = t0;
            sel.refine_epochs = cfg
                .less_vfl
                .refine_epochs
                .unwrap_or(cfg.training.epochs.saturating_sub(t0));
            let pretrain_losses = pretrain_with(&mut base, &sel, &mut ())?;
            for (mi, &method) in methods.iter().enumerate() {
                let lambdas_s: Vec<Option<usize>> = if method == Method::LessVfl {
                    (0..server_lambdas.len()).map(Some).collect()
                } else {
                    vec![None]
                };
                for (pi, party_lambda) in grid.party_lambdas.iter().enumerate() {
                    for &si in &lambdas_s {
                        let mut system = base.clone();
                        let mut cell = sel.clone();
                        cell.party_lambdas = vec![party_lambda.resolve(system.n_train()); data.columns.len()];
                        match si {
                            Some(si) => cell.server_lambda = server_lambdas[si].resolve(system.n_train()),
                            None => {
                                cell.component_selection = false;
                                cell.stage2_epochs = 0;
                            }
                        }
                        select_from_pretrained(&mut system, &cell, &mut (), pretrain_losses.clone())?;
                        let train = system.evaluate(DataSplit::Train, loss)?;
                        let test = system.evaluate(DataSplit::Test, loss)?;
                        let mask = global_mask(&extract_mask(&system).per_party, &data.columns);
                        cells.entry((ti, mi, pi, si)).or_default().push(CellResult {
                            train_accuracy: train.accuracy,
                            test_accuracy: test.accuracy,
                            train_loss: train.loss,
                            test_loss: test.loss,
                            removal: spurious_removed_fraction(&mask, data.flags())?,
                            mb: system.ledger().total_mb(),
                        });
                    }
                }
            }
        }
    }

    let rows: Vec<GridRow> = cells
        .into_iter()
        .map(|((ti, mi, pi, si), results)| {
            let pick = |f: &dyn Fn(&CellResult) -> f64| mean_std(&results.iter().map(f).collect::<Vec<_>>());
            let pick_opt = |f: &dyn Fn(&CellResult) -> Option<f64>| {
                results
                    .iter()
                    .map(f)
                    .collect::<Option<Vec<_>>>()
                    .map(|v| mean_std(&v))
            };
            GridRow {
                method: methods[mi],
                pretrain_epochs: pretrain[ti],
                party_lambda: grid.party_lambdas[pi],
                server_lambda: si.map(|i| server_lambdas[i]),
                seeds: seeds.clone(),
                train_accuracy: pick_opt(&|r| r.train_accuracy),
                test_accuracy: pick_opt(&|r| r.test_accuracy),
                train_loss: pick(&|r| r.train_loss),
                test_loss: pick(&|r| r.test_loss),
                removal: pick(&|r| r.removal),
                total_mb: pick(&|r| r.mb).0,
            }
        })
        .collect();

    let winner = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.removal.0 >= cfg.targets.removal)
        .max_by(|(_, a), (_, b)| {
            let score = |r: &GridRow| r.train_accuracy.map_or(-r.train_loss.0, |a| a.0);
            score(a).total_cmp(&score(b))
        })
        .map(|(i, _)| i);
    Ok(GridReport { rows, winner })
}

fn strength(l: &RegStrength) -> String {
    match l {
        RegStrength::Value(v) => v.to_string(),
        RegStrength::Scaled { scale } => format!("{scale}*N^-1/4"),
    }
}

pub fn write_grid_csv(report: &GridReport, path: &Path) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "method",
        "pretrain_epochs",
        "party_lambda",
        "server_lambda",
        "train_accuracy_mean",
        "train_accuracy_std",
        "test_accuracy_mean",
        "test_accuracy_std",
        "train_loss_mean",
        "train_loss_std",
        "test_loss_mean",
        "test_loss_std",
        "removal_mean",
        "removal_std",
        "total_mb",
        "seeds",
        "winner",
    ])
    .map_err(&err)?;
    for (i, r) in report.rows.iter().enumerate() {
        let pair = |v: Option<(f64, f64)>| (opt(v.map(|p| p.0)), opt(v.map(|p| p.1)));
        let (tra, tras) = pair(r.train_accuracy);
        let (tea, teas) = pair(r.test_accuracy);
        w.write_record([
            r.method.name().to_string(),
            r.pretrain_epochs.to_string(),
            strength(&r.party_lambda),
            r.server_lambda.as_ref().map(strength).unwrap_or_default(),
            tra,
            tras,
            tea,
            teas,
            r.train_loss.0.to_string(),
            r.train_loss.1.to_string(),
            r.test_loss.0.to_string(),
            r.test_loss.1.to_string(),
            r.removal.0.to_string(),
            r.removal.1.to_string(),
            r.total_mb.to_string(),
            r.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            (report.winner == Some(i)).to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
