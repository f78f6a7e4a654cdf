//! Causal ranking metrics and their estimators.
//!
//! A metric is a rank weighting `lambda(r)` applied to the per-pair causal
//! effect: `Delta_u = (1/I) sum_i lambda(r_ui) tau_ui`, averaged over users.
//! Since `tau` is never observed, it is replaced by the naive estimate or by
//! the (optionally capped) inverse-propensity estimate
//!
//! ```text
//! tau_ips = Z Y / max(P, chi_t) - (1 - Z) Y / max(1 - P, chi_c)
//! ```
//!
//! which is unbiased when both caps are zero and `P` is the true propensity.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{ObservedRecord, ObservedReplicate, PotentialOutcome, RankedList, TruthReplicate};
use crate::error::{Error, Result};

/// Rank weighting shared by a causal metric and its observed-feedback twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weighting {
    AverageRank,
    PrecisionAt(usize),
    Dcg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// Causal average rank.
    Car,
    /// Causal precision at k.
    CpAt(usize),
    /// Causal discounted cumulative gain.
    Cdcg,
    Ar,
    PAt(usize),
    Dcg,
}

impl MetricKind {
    pub fn weighting(self) -> Weighting {
        match self {
            MetricKind::Car | MetricKind::Ar => Weighting::AverageRank,
            MetricKind::CpAt(k) | MetricKind::PAt(k) => Weighting::PrecisionAt(k),
            MetricKind::Cdcg | MetricKind::Dcg => Weighting::Dcg,
        }
    }

    pub fn is_causal(self) -> bool {
        matches!(self, MetricKind::Car | MetricKind::CpAt(_) | MetricKind::Cdcg)
    }

    /// Checks `1 <= k <= I` for precision kinds.
    pub fn validate(self, n_items: usize) -> Result<()> {
        if let Weighting::PrecisionAt(k) = self.weighting() {
            if k == 0 || k > n_items {
                return Err(Error::param(format!(
                    "{self}: k must lie in 1..={n_items}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Car => write!(f, "CAR"),
            MetricKind::CpAt(k) => write!(f, "CP@{k}"),
            MetricKind::Cdcg => write!(f, "CDCG"),
            MetricKind::Ar => write!(f, "AR"),
            MetricKind::PAt(k) => write!(f, "P@{k}"),
            MetricKind::Dcg => write!(f, "DCG"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let parse_k = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| Error::param(format!("bad cutoff in metric name {s:?}")))
        };
        match upper.as_str() {
            "CAR" => Ok(MetricKind::Car),
            "CDCG" => Ok(MetricKind::Cdcg),
            "AR" => Ok(MetricKind::Ar),
            "DCG" => Ok(MetricKind::Dcg),
            _ => {
                if let Some(rest) = upper.strip_prefix("CP@") {
                    Ok(MetricKind::CpAt(parse_k(rest)?))
                } else if let Some(rest) = upper.strip_prefix("P@") {
                    Ok(MetricKind::PAt(parse_k(rest)?))
                } else {
                    Err(Error::param(format!("unknown metric {s:?}")))
                }
            }
        }
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Propensity caps. A value of `0` disables capping on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CappingParams {
    pub chi_t: f64,
    pub chi_c: f64,
}

impl CappingParams {
    pub const NONE: CappingParams = CappingParams { chi_t: 0.0, chi_c: 0.0 };

    pub fn new(chi_t: f64, chi_c: f64) -> Result<Self> {
        let ok = |c: f64| c == 0.0 || (c > 0.0 && c <= 1.0);
        if !ok(chi_t) || !ok(chi_c) {
            return Err(Error::param(format!(
                "capping thresholds must be 0 or in (0, 1], got ({chi_t}, {chi_c})"
            )));
        }
        Ok(Self { chi_t, chi_c })
    }

    /// Same threshold on both sides.
    pub fn symmetric(chi: f64) -> Result<Self> {
        Self::new(chi, chi)
    }

    pub fn treated_denominator(&self, p: f64) -> f64 {
        p.max(self.chi_t)
    }

    pub fn control_denominator(&self, p: f64) -> f64 {
        (1.0 - p).max(self.chi_c)
    }
}

impl Default for CappingParams {
    fn default() -> Self {
        Self::NONE
    }
}

/// `lambda(rank)` for a ranking over `n_items` items.
pub fn lambda_weight(weighting: Weighting, rank: usize, n_items: usize) -> Result<f64> {
    if rank == 0 || rank > n_items {
        return Err(Error::param(format!("rank {rank} outside 1..={n_items}")));
    }
    Ok(match weighting {
        Weighting::AverageRank => -(rank as f64),
        Weighting::PrecisionAt(k) => {
            if k == 0 || k > n_items {
                return Err(Error::param(format!("precision cutoff {k} outside 1..={n_items}")));
            }
            if rank <= k {
                n_items as f64 / k as f64
            } else {
                0.0
            }
        }
        Weighting::Dcg => n_items as f64 / (1.0 + rank as f64).log2(),
    })
}

/// `lambda` tabulated by rank; index 0 is unused.
#[derive(Debug, Clone)]
pub struct LambdaByRank {
    values: Vec<f64>,
}

impl LambdaByRank {
    pub fn new(kind: MetricKind, n_items: usize) -> Result<Self> {
        kind.validate(n_items)?;
        let mut values = Vec::with_capacity(n_items + 1);
        values.push(0.0);
        for rank in 1..=n_items {
            values.push(lambda_weight(kind.weighting(), rank, n_items)?);
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn get(&self, rank: usize) -> f64 {
        self.values[rank]
    }

    pub fn n_items(&self) -> usize {
        self.values.len() - 1
    }
}

/// `Delta_u` against the realized causal effects of one user.
///
/// `ranks` are the user's 1-based item ranks indexed by item.
pub fn delta_true(ranks: &[u32], outcomes: &[PotentialOutcome], kind: MetricKind) -> Result<f64> {
    let lambda = LambdaByRank::new(kind, ranks.len())?;
    Ok(delta_true_with(&lambda, ranks, outcomes))
}

fn delta_true_with(lambda: &LambdaByRank, ranks: &[u32], outcomes: &[PotentialOutcome]) -> f64 {
    let sum: f64 = outcomes
        .iter()
        .map(|o| lambda.get(ranks[o.item as usize] as usize) * o.tau() as f64)
        .sum();
    sum / lambda.n_items() as f64
}

fn check_ranking(rankings: &RankedList, n_users: usize, n_items: usize) -> Result<()> {
    if rankings.n_users() != n_users {
        return Err(Error::Structural {
            dimension: "ranking users",
            expected: n_users,
            found: rankings.n_users(),
        });
    }
    if rankings.n_items() != n_items {
        return Err(Error::Structural {
            dimension: "ranking items",
            expected: n_items,
            found: rankings.n_items(),
        });
    }
    Ok(())
}

fn require_causal(kind: MetricKind) -> Result<()> {
    if !kind.is_causal() {
        return Err(Error::param(format!(
            "{kind} is an observed-feedback metric; use observed_metric_average"
        )));
    }
    Ok(())
}

/// Ground-truth metric `R = (1/U) sum_u Delta_u` for one replicate.
pub fn metric_average(rankings: &RankedList, truth: &TruthReplicate, kind: MetricKind) -> Result<f64> {
    require_causal(kind)?;
    check_ranking(rankings, truth.n_users(), truth.n_items())?;
    let lambda = LambdaByRank::new(kind, truth.n_items())?;
    let n_users = truth.n_users();
    let total: f64 = (0..n_users)
        .map(|u| delta_true_with(&lambda, rankings.ranks(u), truth.row(u)))
        .sum();
    Ok(total / n_users as f64)
}

/// Observed-feedback metric `(1/UI) sum lambda Y` for the raw kinds.
pub fn observed_metric_average(
    rankings: &RankedList,
    observed: &ObservedReplicate,
    kind: MetricKind,
) -> Result<f64> {
    if kind.is_causal() {
        return Err(Error::param(format!("{kind} needs causal effects, not observed outcomes")));
    }
    check_ranking(rankings, observed.n_users(), observed.n_items())?;
    let lambda = LambdaByRank::new(kind, observed.n_items())?;
    let total: f64 = observed
        .positives()
        .map(|r| lambda.get(rankings.rank(r.user as usize, r.item as usize)))
        .sum();
    Ok(total / (observed.n_users() * observed.n_items()) as f64)
}

/// Treatment/control counts over all `U x I` pairs of a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentTotals {
    pub treated: usize,
    pub control: usize,
}

impl AssignmentTotals {
    pub fn of(observed: &ObservedReplicate) -> Self {
        let (treated, control) = observed.assignment_totals();
        Self { treated, control }
    }

    pub fn pairs(&self) -> usize {
        self.treated + self.control
    }

    /// `(sum Z / UI, sum (1 - Z) / UI)`.
    pub fn rates(&self) -> Result<(f64, f64)> {
        if self.treated == 0 || self.control == 0 {
            return Err(Error::DegenerateAssignment(format!(
                "{} treated and {} control pairs",
                self.treated, self.control
            )));
        }
        let n = self.pairs() as f64;
        Ok((self.treated as f64 / n, self.control as f64 / n))
    }
}

/// Naive causal-effect estimate, weighting by the overall assignment rates.
pub fn tau_naive(record: &ObservedRecord, totals: AssignmentTotals) -> Result<f64> {
    let (treated_rate, control_rate) = totals.rates()?;
    Ok(naive_from_rates(record, treated_rate, control_rate))
}

fn naive_from_rates(record: &ObservedRecord, treated_rate: f64, control_rate: f64) -> f64 {
    match (record.y, record.z) {
        (false, _) => 0.0,
        (true, true) => 1.0 / treated_rate,
        (true, false) => -1.0 / control_rate,
    }
}

/// Capped IPS causal-effect estimate; `CappingParams::NONE` gives plain IPS.
pub fn tau_ips(record: &ObservedRecord, capping: CappingParams) -> Result<f64> {
    if !(record.p > 0.0 && record.p < 1.0) {
        return Err(Error::Propensity { value: record.p });
    }
    Ok(match (record.y, record.z) {
        (false, _) => 0.0,
        (true, true) => 1.0 / capping.treated_denominator(record.p),
        (true, false) => -1.0 / capping.control_denominator(record.p),
    })
}

/// `Delta_u` estimated from one user's observed records.
pub fn delta_estimated(
    ranks: &[u32],
    records: &[ObservedRecord],
    kind: MetricKind,
    capping: CappingParams,
) -> Result<f64> {
    let lambda = LambdaByRank::new(kind, ranks.len())?;
    delta_estimated_with(&lambda, ranks, records, |r| tau_ips(r, capping))
}

fn delta_estimated_with(
    lambda: &LambdaByRank,
    ranks: &[u32],
    records: &[ObservedRecord],
    tau: impl Fn(&ObservedRecord) -> Result<f64>,
) -> Result<f64> {
    let mut sum = 0.0;
    for r in records.iter().filter(|r| r.y) {
        sum += lambda.get(ranks[r.item as usize] as usize) * tau(r)?;
    }
    Ok(sum / lambda.n_items() as f64)
}

/// Which causal-effect estimate feeds an estimated metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Naive,
    Ips(CappingParams),
    /// Reads the realized effects directly; only meaningful as a sanity oracle.
    Oracle,
}

/// Estimated metric `R_hat` for one observed replicate.
pub fn metric_estimate(
    rankings: &RankedList,
    observed: &ObservedReplicate,
    kind: MetricKind,
    estimator: Estimator,
) -> Result<f64> {
    require_causal(kind)?;
    check_ranking(rankings, observed.n_users(), observed.n_items())?;
    let lambda = LambdaByRank::new(kind, observed.n_items())?;
    let n_users = observed.n_users();
    let mut total = 0.0;
    match estimator {
        Estimator::Naive => {
            let (t, c) = AssignmentTotals::of(observed).rates()?;
            for u in 0..n_users {
                total += delta_estimated_with(&lambda, rankings.ranks(u), observed.row(u), |r| {
                    Ok(naive_from_rates(r, t, c))
                })?;
            }
        }
        Estimator::Ips(capping) => {
            for u in 0..n_users {
                total += delta_estimated_with(&lambda, rankings.ranks(u), observed.row(u), |r| {
                    tau_ips(r, capping)
                })?;
            }
        }
        Estimator::Oracle => {
            return Err(Error::param("the oracle estimator needs ground truth"));
        }
    }
    Ok(total / n_users as f64)
}

/// `lambda_ui` for every pair under `rankings`.
pub fn lambda_table(rankings: &RankedList, kind: MetricKind) -> Result<Array2<f64>> {
    let n_items = rankings.n_items();
    let lambda = LambdaByRank::new(kind, n_items)?;
    Ok(Array2::from_shape_fn((rankings.n_users(), n_items), |(u, i)| {
        lambda.get(rankings.rank(u, i))
    }))
}

fn check_table(name: &'static str, table: &Array2<f64>, truth: &TruthReplicate) -> Result<()> {
    if table.dim() != (truth.n_users(), truth.n_items()) {
        return Err(Error::Structural {
            dimension: name,
            expected: truth.n_users() * truth.n_items(),
            found: table.len(),
        });
    }
    Ok(())
}

/// Expected error of the IPS metric when `p_used` replaces the true
/// propensity `p_true`.
pub fn bias_estimated_propensity(
    truth: &TruthReplicate,
    rankings: &RankedList,
    p_true: &Array2<f64>,
    p_used: &Array2<f64>,
    kind: MetricKind,
) -> Result<f64> {
    require_causal(kind)?;
    check_ranking(rankings, truth.n_users(), truth.n_items())?;
    check_table("true propensity", p_true, truth)?;
    check_table("used propensity", p_used, truth)?;
    let lambda = LambdaByRank::new(kind, truth.n_items())?;
    let mut sum = 0.0;
    for (u, o) in truth.iter() {
        let i = o.item as usize;
        let (p, q) = (p_true[[u, i]], p_used[[u, i]]);
        let term = (1.0 - p / q) * o.y_t as u8 as f64
            - (1.0 - (1.0 - p) / (1.0 - q)) * o.y_c as u8 as f64;
        sum += lambda.get(rankings.rank(u, i)) * term;
    }
    Ok(sum / (truth.n_users() * truth.n_items()) as f64)
}

/// Closed-form bias of the capped IPS metric under the true propensity.
pub fn bias_cips(
    truth: &TruthReplicate,
    rankings: &RankedList,
    p_true: &Array2<f64>,
    capping: CappingParams,
    kind: MetricKind,
) -> Result<f64> {
    require_causal(kind)?;
    check_ranking(rankings, truth.n_users(), truth.n_items())?;
    check_table("true propensity", p_true, truth)?;
    let lambda = LambdaByRank::new(kind, truth.n_items())?;
    let CappingParams { chi_t, chi_c } = capping;
    let mut sum = 0.0;
    for (u, o) in truth.iter() {
        let i = o.item as usize;
        let p = p_true[[u, i]];
        let mut term = 0.0;
        if o.y_t && p < chi_t {
            term += 1.0 - p / chi_t;
        }
        if o.y_c && p > 1.0 - chi_c {
            term -= 1.0 - (1.0 - p) / chi_c;
        }
        sum += lambda.get(rankings.rank(u, i)) * term;
    }
    Ok(sum / (truth.n_users() * truth.n_items()) as f64)
}

/// Half-width of the deviation interval that holds with probability at least
/// `1 - zeta`:
/// `(1/UI) sqrt(log(2/zeta)/2) sqrt(sum d_ui^2)` with
/// `d_ui = lambda_ui (1/max(P, chi_t) + 1/max(1-P, chi_c))`.
///
/// For capped estimators the caller adds `|bias_cips|`.
pub fn hoeffding_bound(
    lambdas: &Array2<f64>,
    p: &Array2<f64>,
    capping: CappingParams,
    zeta: f64,
) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::param(format!("zeta must lie in (0, 1), got {zeta}")));
    }
    if lambdas.dim() != p.dim() {
        return Err(Error::Structural {
            dimension: "propensity table",
            expected: lambdas.len(),
            found: p.len(),
        });
    }
    let sum_sq = squared_ranges(lambdas, p, capping);
    let pairs = lambdas.len() as f64;
    Ok(((2.0 / zeta).ln() / 2.0).sqrt() * sum_sq.sqrt() / pairs)
}

/// `sum d_ui^2`; non-increasing in either cap.
pub fn squared_ranges(lambdas: &Array2<f64>, p: &Array2<f64>, capping: CappingParams) -> f64 {
    lambdas
        .iter()
        .zip(p.iter())
        .map(|(&l, &p)| {
            let d = l * (1.0 / capping.treated_denominator(p) + 1.0 / capping.control_denominator(p));
            d * d
        })
        .sum()
}

/// Estimator accuracy over a set of replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub metric: MetricKind,
    pub estimates: Vec<f64>,
    pub truths: Vec<f64>,
    pub mae: f64,
    /// Mean of `R_hat - R` over replicates.
    pub mean_error: f64,
    /// Mean closed-form capping bias, when the true propensity is supplied.
    pub closed_form_bias: Option<f64>,
    /// Hoeffding half-width at `zeta` plus `|closed_form_bias|`.
    pub bound: Option<f64>,
    pub zeta: Option<f64>,
}

impl EstimatorReport {
    pub fn n_replicates(&self) -> usize {
        self.estimates.len()
    }
}

/// True propensity and confidence level for the bias/bound columns.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    pub p_true: &'a Array2<f64>,
    pub zeta: f64,
}

/// Per-replicate `|R_hat_r - R_r|` against each replicate's own realized
/// ground truth, averaged.
pub fn estimator_mae(
    rankings: &RankedList,
    observed: &[ObservedReplicate],
    truth: &[TruthReplicate],
    kind: MetricKind,
    estimator: Estimator,
    bound: Option<BoundInputs<'_>>,
) -> Result<EstimatorReport> {
    if observed.is_empty() {
        return Err(Error::param("estimator MAE needs at least one replicate"));
    }
    if observed.len() != truth.len() {
        return Err(Error::Structural {
            dimension: "replicates",
            expected: truth.len(),
            found: observed.len(),
        });
    }
    let mut estimates = Vec::with_capacity(observed.len());
    let mut truths = Vec::with_capacity(observed.len());
    for (obs, tr) in observed.iter().zip(truth) {
        let r = metric_average(rankings, tr, kind)?;
        let r_hat = match estimator {
            Estimator::Oracle => r,
            _ => metric_estimate(rankings, obs, kind, estimator)?,
        };
        estimates.push(r_hat);
        truths.push(r);
    }
    let n = estimates.len() as f64;
    let mae = estimates.iter().zip(&truths).map(|(e, t)| (e - t).abs()).sum::<f64>() / n;
    let mean_error = estimates.iter().zip(&truths).map(|(e, t)| e - t).sum::<f64>() / n;

    let (closed_form_bias, bound_value, zeta) = match (bound, estimator) {
        (Some(b), Estimator::Ips(capping)) => {
            let mut bias = 0.0;
            for tr in truth {
                bias += bias_cips(tr, rankings, b.p_true, capping, kind)?;
            }
            bias /= n;
            let lambdas = lambda_table(rankings, kind)?;
            let half_width = hoeffding_bound(&lambdas, b.p_true, capping, b.zeta)?;
            (Some(bias), Some(half_width + bias.abs()), Some(b.zeta))
        }
        _ => (None, None, None),
    };

    Ok(EstimatorReport {
        metric: kind,
        estimates,
        truths,
        mae,
        mean_error,
        closed_form_bias,
        bound: bound_value,
        zeta,
    })
}
