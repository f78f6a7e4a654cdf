//! Experiment harness: tuned method comparison, parameter sweeps, the
//! estimator-accuracy study, and report files.
//!
//! Hyperparameters are selected per `(method, metric, seed)` on the
//! validation replicates only; the chosen setting is then retrained and
//! scored on every test replicate. Independent trainings run on a rayon pool
//! whose size comes from [`WORKERS_ENV`].

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::DataBundle;
use crate::datagen::PropensityMode;
use crate::domain::{ObservedReplicate, RankedList, TruthReplicate};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, fmt_sig, write_json, REPORT_PRECISION};
use crate::metrics::{
    estimator_mae, metric_average, metric_estimate, BoundInputs, CappingParams, Estimator, MetricKind,
};
use crate::models::MFModel;
use crate::train::{popularity_ranker, random_ranker, train, train_with_callback, Method, TrainConfig};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "CAUSALRANK_WORKERS";

/// Thread pool sized by [`WORKERS_ENV`], or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
        if n == 0 {
            return Err(Error::param(format!("{WORKERS_ENV} must be at least 1")));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::param(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub gamma: Vec<f64>,
    pub chi: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            gamma: vec![0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0003, 0.0001],
            chi: vec![0.7, 0.5, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    #[default]
    None,
    Beta(Vec<f64>),
    Xi(Vec<f64>),
    Capping(Vec<f64>),
}

/// What the validation score used for selection is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    /// Realized causal effects of the validation replicates.
    #[default]
    GroundTruth,
    /// Uncapped IPS estimate from the logged validation data.
    Estimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Bundle directory.
    pub dataset: PathBuf,
    pub methods: Vec<Method>,
    pub metrics: Vec<MetricKind>,
    pub grids: Grids,
    pub sweep: Sweep,
    /// Training seeds `train.seed .. train.seed + n_seeds`.
    pub n_seeds: usize,
    /// Run directory.
    pub output: PathBuf,
    /// Shared training settings; `method`, `gamma` and `capping` are
    /// overridden per grid point.
    pub train: TrainConfig,
    pub tuning: Tuning,
    /// Capping thresholds for the estimator study (0 means uncapped).
    pub estimate_chi: Vec<f64>,
    /// Confidence parameter for the deviation bound in the estimator study.
    pub zeta: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("bundle"),
            methods: vec![Method::Dlce, Method::Blce, Method::Dlto, Method::Bpr, Method::Pop, Method::Random],
            metrics: vec![MetricKind::CpAt(10), MetricKind::CpAt(100), MetricKind::Cdcg],
            grids: Grids::default(),
            sweep: Sweep::None,
            n_seeds: 1,
            output: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            tuning: Tuning::GroundTruth,
            estimate_chi: vec![0.0, 0.003, 0.01, 0.03, 0.1, 0.3],
            zeta: 0.05,
        }
    }
}

fn check_values(name: &str, values: &[f64], ok: impl Fn(f64) -> bool) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(format!("{name} list is empty")));
    }
    if let Some(v) = values.iter().find(|&&v| !ok(v)) {
        return Err(Error::param(format!("invalid {name} value {v}")));
    }
    Ok(())
}

fn valid_chi(v: f64) -> bool {
    CappingParams::symmetric(v).is_ok()
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::param("plan lists no methods"));
        }
        if self.metrics.is_empty() {
            return Err(Error::param("plan lists no metrics"));
        }
        if let Some(m) = self.metrics.iter().find(|m| !m.is_causal()) {
            return Err(Error::param(format!("{m} is not a causal metric")));
        }
        if self.n_seeds == 0 {
            return Err(Error::param("n_seeds must be at least 1"));
        }
        check_values("gamma", &self.grids.gamma, |g| g >= 0.0 && g.is_finite())?;
        check_values("chi", &self.grids.chi, valid_chi)?;
        check_values("estimate_chi", &self.estimate_chi, valid_chi)?;
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::param(format!("zeta must lie in (0, 1), got {}", self.zeta)));
        }
        match &self.sweep {
            Sweep::None => {}
            Sweep::Beta(v) => check_values("beta", v, |b| b >= 0.0 && b.is_finite())?,
            Sweep::Xi(v) => check_values("xi", v, |x| (0.0..=1.0).contains(&x))?,
            Sweep::Capping(v) => check_values("capping", v, valid_chi)?,
        }
        let probe = TrainConfig {
            method: Method::Dlce,
            capping: CappingParams::NONE,
            ..self.train.clone()
        };
        probe.validate()
    }

    /// SHA-256 over the canonical JSON form of the plan.
    pub fn config_hash(&self) -> Result<String> {
        hash_json(self)
    }

    fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(|s| self.train.seed.wrapping_add(s))
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One hyperparameter grid point; `None` marks a parameter the method lacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub gamma: Option<f64>,
    pub chi: Option<f64>,
}

/// Grid points searched for `method`.
pub fn settings(method: Method, grids: &Grids) -> Vec<Setting> {
    if !method.is_trained() {
        return vec![Setting { gamma: None, chi: None }];
    }
    let chis: Vec<Option<f64>> = if method.uses_propensity() {
        grids.chi.iter().map(|&c| Some(c)).collect()
    } else {
        vec![None]
    };
    grids
        .gamma
        .iter()
        .flat_map(|&g| chis.iter().map(move |&c| Setting { gamma: Some(g), chi: c }))
        .collect()
}

/// Training configuration of one grid point.
pub fn setting_config(base: &TrainConfig, method: Method, setting: Setting, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        method,
        gamma: setting.gamma.unwrap_or(base.gamma),
        capping: match setting.chi {
            Some(c) => CappingParams::symmetric(c)?,
            None => CappingParams::NONE,
        },
        seed,
        ..base.clone()
    })
}

/// Rankings produced by `method` at `setting` from the training replicates.
pub fn fit_ranking(
    train_obs: &[ObservedReplicate],
    n_users: usize,
    n_items: usize,
    method: Method,
    setting: Setting,
    base: &TrainConfig,
    seed: u64,
) -> Result<RankedList> {
    match method {
        Method::Pop => popularity_ranker(train_obs, n_users, n_items),
        Method::Random => random_ranker(n_users, n_items, seed),
        _ => {
            let cfg = setting_config(base, method, setting, seed)?;
            train(train_obs, &cfg, n_users, n_items)?.rank_all()
        }
    }
}

/// Ground-truth metric on each replicate.
pub fn metric_per_replicate(rankings: &RankedList, truth: &[TruthReplicate], kind: MetricKind) -> Result<Vec<f64>> {
    truth.iter().map(|t| metric_average(rankings, t, kind)).collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub metric: MetricKind,
    pub mean: f64,
    pub std: f64,
    pub gamma: Option<f64>,
    pub chi: Option<f64>,
    pub seed: u64,
    /// Metric on each test replicate.
    pub values: Vec<f64>,
    /// Row reports the negated metric (CAR in its smaller-is-better form).
    #[serde(default)]
    pub negated: bool,
}

impl ReportRow {
    /// `-CAR` for negated rows, the metric name otherwise.
    pub fn metric_label(&self) -> String {
        if self.negated {
            format!("-{}", self.metric)
        } else {
            self.metric.to_string()
        }
    }

    fn negate(&self) -> Self {
        let values: Vec<f64> = self.values.iter().map(|v| -v).collect();
        Self {
            mean: -self.mean,
            values,
            negated: !self.negated,
            ..self.clone()
        }
    }
}

/// Follows every CAR row with its negation.
pub fn with_negated_car(rows: Vec<ReportRow>) -> Vec<ReportRow> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let extra = (row.metric == MetricKind::Car && !row.negated).then(|| row.negate());
        out.push(row);
        out.extend(extra);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub seed: u64,
    pub dataset_seed: u64,
    pub rows: Vec<ReportRow>,
}

/// The data a tuning pass may read: training and validation replicates.
#[derive(Clone, Copy)]
pub struct TuningView<'a> {
    pub train: &'a [ObservedReplicate],
    pub validation_observed: &'a [ObservedReplicate],
    pub validation_truth: &'a [TruthReplicate],
    pub n_users: usize,
    pub n_items: usize,
}

impl<'a> TuningView<'a> {
    pub fn of(bundle: &'a DataBundle) -> Self {
        Self {
            train: bundle.train_observed(),
            validation_observed: bundle.validation_observed(),
            validation_truth: bundle.validation_truth(),
            n_users: bundle.n_users(),
            n_items: bundle.n_items(),
        }
    }

    fn score(&self, rankings: &RankedList, kind: MetricKind, tuning: Tuning) -> Result<f64> {
        let scores: Vec<f64> = match tuning {
            Tuning::GroundTruth => metric_per_replicate(rankings, self.validation_truth, kind)?,
            Tuning::Estimator => self
                .validation_observed
                .iter()
                .map(|o| metric_estimate(rankings, o, kind, Estimator::Ips(CappingParams::NONE)))
                .collect::<Result<_>>()?,
        };
        Ok(mean_std(&scores).0)
    }
}

/// Setting chosen for one `(method, metric, seed)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: Method,
    pub metric: MetricKind,
    pub seed: u64,
    pub setting: Setting,
    pub validation_score: f64,
}

/// Grid search on the validation replicates. Settings whose training
/// diverges are skipped; ties keep the earlier grid point.
pub fn tune(
    view: TuningView<'_>,
    methods: &[Method],
    metrics: &[MetricKind],
    grids: &Grids,
    base: &TrainConfig,
    seeds: &[u64],
    tuning: Tuning,
) -> Result<Vec<Selection>> {
    for m in metrics {
        m.validate(view.n_items)?;
    }
    if view.validation_truth.is_empty() {
        return Err(Error::param("tuning needs at least one validation replicate"));
    }
    let jobs: Vec<(Method, u64, Setting)> = methods
        .iter()
        .flat_map(|&m| {
            seeds
                .iter()
                .flat_map(move |&s| settings(m, grids).into_iter().map(move |st| (m, s, st)))
        })
        .collect();
    let scores: Vec<Option<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(method, seed, setting)| {
            match fit_ranking(view.train, view.n_users, view.n_items, method, setting, base, seed) {
                Ok(rl) => metrics
                    .iter()
                    .map(|&k| view.score(&rl, k, tuning))
                    .collect::<Result<Vec<_>>>()
                    .map(Some),
                Err(Error::Numeric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for &method in methods {
        for (k, &metric) in metrics.iter().enumerate() {
            for &seed in seeds {
                let mut best: Option<(Setting, f64)> = None;
                for ((m, s, setting), sc) in jobs.iter().zip(&scores) {
                    if *m != method || *s != seed {
                        continue;
                    }
                    if let Some(v) = sc.as_ref().map(|v| v[k]).filter(|v| v.is_finite()) {
                        if best.is_none_or(|(_, b)| v > b) {
                            best = Some((*setting, v));
                        }
                    }
                }
                let (setting, validation_score) = best.ok_or_else(|| {
                    Error::Numeric(format!("every grid point diverged for {method} (seed {seed})"))
                })?;
                out.push(Selection {
                    method,
                    metric,
                    seed,
                    setting,
                    validation_score,
                });
            }
        }
    }
    Ok(out)
}

/// Retrains each selection and scores it on the test replicates.
pub fn evaluate_selections(
    bundle: &DataBundle,
    selections: &[Selection],
    base: &TrainConfig,
) -> Result<Vec<ReportRow>> {
    selections
        .par_iter()
        .map(|sel| {
            let rl = fit_ranking(
                bundle.train_observed(),
                bundle.n_users(),
                bundle.n_items(),
                sel.method,
                sel.setting,
                base,
                sel.seed,
            )?;
            let values = metric_per_replicate(&rl, bundle.test_truth(), sel.metric)?;
            let (mean, std) = mean_std(&values);
            Ok(ReportRow {
                method: sel.method,
                metric: sel.metric,
                mean,
                std,
                gamma: sel.setting.gamma,
                chi: sel.setting.chi,
                seed: sel.seed,
                values,
                negated: false,
            })
        })
        .collect()
}

/// Tune-then-test for every method, metric and seed of `plan` on `bundle`.
pub fn compare_bundle(bundle: &DataBundle, plan: &ExperimentPlan) -> Result<Vec<ReportRow>> {
    let seeds: Vec<u64> = plan.seeds().collect();
    let selections = tune(
        TuningView::of(bundle),
        &plan.methods,
        &plan.metrics,
        &plan.grids,
        &plan.train,
        &seeds,
        plan.tuning,
    )?;
    Ok(with_negated_car(evaluate_selections(bundle, &selections, &plan.train)?))
}

fn read_bundle(plan: &ExperimentPlan) -> Result<DataBundle> {
    DataBundle::read(&plan.dataset)
}

/// Method comparison on the plan's bundle.
pub fn run_comparison(plan: &ExperimentPlan) -> Result<MetricReport> {
    plan.validate()?;
    let bundle = read_bundle(plan)?;
    let rows = worker_pool()?.install(|| compare_bundle(&bundle, plan))?;
    Ok(MetricReport {
        config_hash: plan.config_hash()?,
        seed: plan.train.seed,
        dataset_seed: bundle.meta.seed,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// `chi`, `beta` or `xi`.
    pub parameter: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset_seed: u64,
    pub points: Vec<SweepPoint>,
}

fn sweep_values<'a>(plan: &'a ExperimentPlan, want: &str) -> Result<&'a [f64]> {
    match (&plan.sweep, want) {
        (Sweep::Capping(v), "chi") | (Sweep::Beta(v), "beta") | (Sweep::Xi(v), "xi") => Ok(v),
        _ => Err(Error::param(format!("plan has no {want} sweep"))),
    }
}

fn sweep_report(plan: &ExperimentPlan, bundle: &DataBundle, parameter: &str, points: Vec<SweepPoint>) -> Result<SweepReport> {
    Ok(SweepReport {
        parameter: parameter.into(),
        config_hash: plan.config_hash()?,
        seed: plan.train.seed,
        dataset_seed: bundle.meta.seed,
        points,
    })
}

/// DLCE at each capping threshold with `gamma` tuned per threshold.
pub fn sweep_capping(plan: &ExperimentPlan) -> Result<SweepReport> {
    plan.validate()?;
    let values = sweep_values(plan, "chi")?;
    let bundle = read_bundle(plan)?;
    let points = worker_pool()?.install(|| {
        values
            .iter()
            .map(|&chi| {
                let point_plan = ExperimentPlan {
                    methods: vec![Method::Dlce],
                    grids: Grids {
                        gamma: plan.grids.gamma.clone(),
                        chi: vec![chi],
                    },
                    ..plan.clone()
                };
                Ok(SweepPoint {
                    value: chi,
                    rows: compare_bundle(&bundle, &point_plan)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    sweep_report(plan, &bundle, "chi", points)
}

/// Regenerates the plan's bundle with `edit` applied to its generation
/// config (same master seed) and runs the comparison on each result.
fn regenerate_sweep(
    plan: &ExperimentPlan,
    parameter: &str,
    edit: impl Fn(&mut crate::datagen::GenConfig, f64) + Sync,
) -> Result<SweepReport> {
    plan.validate()?;
    let values = sweep_values(plan, parameter)?;
    let bundle = read_bundle(plan)?;
    let base = bundle.base_tables();
    let gen = bundle.gen_config()?;
    let points = worker_pool()?.install(|| {
        values
            .iter()
            .map(|&v| {
                let mut cfg = gen.clone();
                edit(&mut cfg, v);
                let regenerated = DataBundle::generate(&base, &cfg, &bundle.meta.source)?;
                Ok(SweepPoint {
                    value: v,
                    rows: compare_bundle(&regenerated, plan)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    sweep_report(plan, &bundle, parameter, points)
}

/// Full pipeline per personalized-propensity exponent `beta`.
pub fn sweep_unevenness(plan: &ExperimentPlan) -> Result<SweepReport> {
    regenerate_sweep(plan, "beta", |cfg, beta| {
        cfg.propensity = PropensityMode::Personalized;
        cfg.beta = beta;
    })
}

/// Full pipeline per misspecification level `xi`; only the logged
/// propensity changes.
pub fn sweep_misspecification(plan: &ExperimentPlan) -> Result<SweepReport> {
    regenerate_sweep(plan, "xi", |cfg, xi| cfg.xi = xi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: Method,
    pub metric: MetricKind,
    /// `naive` or `ips`.
    pub estimator: String,
    pub chi: Option<f64>,
    pub mae: f64,
    pub mean_error: f64,
    pub closed_form_bias: Option<f64>,
    pub bound: Option<f64>,
    pub n_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub config_hash: String,
    pub seed: u64,
    pub dataset_seed: u64,
    pub zeta: f64,
    pub rows: Vec<EstimateRow>,
}

/// MAE of the naive and capped IPS estimators over the test replicates for
/// the tuned rankings of each method (first seed).
pub fn estimator_reliability(plan: &ExperimentPlan) -> Result<EstimateReport> {
    plan.validate()?;
    let bundle = read_bundle(plan)?;
    let rows = worker_pool()?.install(|| estimator_rows(&bundle, plan))?;
    Ok(EstimateReport {
        config_hash: plan.config_hash()?,
        seed: plan.train.seed,
        dataset_seed: bundle.meta.seed,
        zeta: plan.zeta,
        rows,
    })
}

/// Estimator MAE rows for `bundle`; see [`estimator_reliability`].
pub fn estimator_rows(bundle: &DataBundle, plan: &ExperimentPlan) -> Result<Vec<EstimateRow>> {
    let selections = tune(
        TuningView::of(bundle),
        &plan.methods,
        &plan.metrics,
        &plan.grids,
        &plan.train,
        &[plan.train.seed],
        plan.tuning,
    )?;
    let p_true = &bundle.propensity.p;
    let per_selection: Vec<Vec<EstimateRow>> = selections
        .par_iter()
        .map(|sel| {
            let rl = fit_ranking(
                bundle.train_observed(),
                bundle.n_users(),
                bundle.n_items(),
                sel.method,
                sel.setting,
                &plan.train,
                sel.seed,
            )?;
            let mut rows = Vec::with_capacity(plan.estimate_chi.len() + 1);
            let naive = estimator_mae(&rl, bundle.test_observed(), bundle.test_truth(), sel.metric, Estimator::Naive, None)?;
            rows.push(EstimateRow {
                method: sel.method,
                metric: sel.metric,
                estimator: "naive".into(),
                chi: None,
                mae: naive.mae,
                mean_error: naive.mean_error,
                closed_form_bias: None,
                bound: None,
                n_replicates: naive.n_replicates(),
            });
            for &chi in &plan.estimate_chi {
                let r = estimator_mae(
                    &rl,
                    bundle.test_observed(),
                    bundle.test_truth(),
                    sel.metric,
                    Estimator::Ips(CappingParams::symmetric(chi)?),
                    Some(BoundInputs { p_true, zeta: plan.zeta }),
                )?;
                rows.push(EstimateRow {
                    method: sel.method,
                    metric: sel.metric,
                    estimator: "ips".into(),
                    chi: Some(chi),
                    mae: r.mae,
                    mean_error: r.mean_error,
                    closed_form_bias: r.closed_form_bias,
                    bound: r.bound,
                    n_replicates: r.n_replicates(),
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_selection.into_iter().flatten().collect())
}

/// Output encoding of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Header of the comparison CSV.
pub const REPORT_HEADER: [&str; 7] = ["method", "metric", "mean", "std", "gamma", "chi", "seed"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| fmt_sig(x, REPORT_PRECISION)).unwrap_or_default()
}

fn report_fields(row: &ReportRow) -> Vec<String> {
    vec![
        row.method.to_string(),
        row.metric_label(),
        fmt_sig(row.mean, REPORT_PRECISION),
        fmt_sig(row.std, REPORT_PRECISION),
        opt(row.gamma),
        opt(row.chi),
        row.seed.to_string(),
    ]
}

/// Writes `report` to `path`: CSV rows with 6 significant digits, or JSON at
/// full precision with the config hash and seeds.
pub fn emit_report(report: &MetricReport, path: &Path, format: ReportFormat) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::param("refusing to write an empty report"));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    match format {
        ReportFormat::Json => write_json(path, report),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
            w.write_record(REPORT_HEADER)?;
            for row in &report.rows {
                w.write_record(report_fields(row))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

pub fn read_report_json(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `sweep.csv` (the comparison columns prefixed by `parameter,value`)
/// and `sweep.json` into `dir`.
pub fn emit_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    let mut header = vec!["parameter", "value"];
    header.extend(REPORT_HEADER);
    w.write_record(&header)?;
    for point in &report.points {
        for row in &point.rows {
            let mut fields = vec![report.parameter.clone(), fmt_sig(point.value, REPORT_PRECISION)];
            fields.extend(report_fields(row));
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join("sweep.json"), report)
}

/// Writes `estimates.csv` and `estimates.json` into `dir`.
pub fn emit_estimates(report: &EstimateReport, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join("estimates.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record([
        "method",
        "metric",
        "estimator",
        "chi",
        "mae",
        "mean_error",
        "closed_form_bias",
        "bound",
        "n_replicates",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.method.to_string(),
            r.metric.to_string(),
            r.estimator.clone(),
            opt(r.chi),
            fmt_sig(r.mae, REPORT_PRECISION),
            fmt_sig(r.mean_error, REPORT_PRECISION),
            opt(r.closed_form_bias),
            opt(r.bound),
            r.n_replicates.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join("estimates.json"), report)
}

/// Run-directory `meta.json`: command, plan, config hash and seed.
pub fn write_run_meta(dir: &Path, command: &str, config: &serde_json::Value, config_hash: &str, seed: u64) -> Result<()> {
    ensure_dir(dir)?;
    let meta = serde_json::json!({
        "command": command,
        "config": config,
        "config_hash": config_hash,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&dir.join("meta.json"), &meta)
}

/// Header of the per-epoch training log.
pub const TRAIN_LOG_HEADER: [&str; 3] = ["epoch", "mean_triplet_loss", "validation_metric"];

/// Trains on the bundle's training replicates, writing one training-log row
/// per epoch with `metric` on the validation replicates.
pub fn train_logged(bundle: &DataBundle, cfg: &TrainConfig, metric: MetricKind, log_path: &Path) -> Result<MFModel> {
    metric.validate(bundle.n_items())?;
    let mut w = csv::Writer::from_path(log_path).map_err(|e| csv_io(log_path, e))?;
    w.write_record(TRAIN_LOG_HEADER)?;
    let model = train_with_callback(bundle.train_observed(), cfg, bundle.n_users(), bundle.n_items(), |stats, model| {
        let rl = model.rank_all()?;
        let (val, _) = mean_std(&metric_per_replicate(&rl, bundle.validation_truth(), metric)?);
        w.write_record([
            stats.epoch.to_string(),
            fmt_sig(stats.mean_triplet_loss, crate::io::FULL_PRECISION),
            fmt_sig(val, crate::io::FULL_PRECISION),
        ])?;
        Ok(())
    })?;
    w.flush().map_err(|e| Error::io(log_path, e))?;
    Ok(model)
}
