//! Semi-synthetic dataset construction.
//!
//! Starting from a weekly purchase/recommendation log (or a fully synthetic
//! base for small-scale work), this module estimates per-pair purchase
//! probabilities with and without recommendation, builds recommendation
//! propensities, and samples i.i.d. replicates of potential outcomes and
//! assignments.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    clip_propensity, InteractionLog, LogRecord, ObservedRecord, ObservedReplicate,
    PotentialOutcome, PropensityModel, Provenance, TruthReplicate, PROPENSITY_CEIL,
};
use crate::error::{Error, Result};
use crate::io::{parse_field, parse_flag, read_csv_rows};
use crate::rng::{stream_rng, Stream};

/// Minimum number of purchase weeks for users and items to survive filtering.
pub const DEFAULT_MIN_WEEKS: usize = 10;

/// Target for the mean of a personalized propensity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetMean {
    Value(f64),
    Keyword(MatchOriginal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchOriginal {
    MatchOriginal,
}

impl Default for TargetMean {
    fn default() -> Self {
        TargetMean::Keyword(MatchOriginal::MatchOriginal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    Original,
    #[default]
    Personalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub prior_weight_grid: Vec<f64>,
    pub beta: f64,
    pub target_mean_propensity: TargetMean,
    pub propensity: PropensityMode,
    /// Misspecification applied to the logged propensity only.
    pub xi: f64,
    pub min_weeks: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            prior_weight_grid: (1..=20).map(|k| k as f64 / 10.0).collect(),
            beta: 2.0,
            target_mean_propensity: TargetMean::default(),
            propensity: PropensityMode::default(),
            xi: 0.0,
            min_weeks: DEFAULT_MIN_WEEKS,
            n_train: 10,
            n_validation: 1,
            n_test: 10,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prior_weight_grid.is_empty() || self.prior_weight_grid.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::param("prior weight grid must be non-empty and positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::param(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        if self.n_train == 0 || self.n_validation == 0 || self.n_test == 0 {
            return Err(Error::param("replicate counts must be at least 1"));
        }
        if let TargetMean::Value(m) = self.target_mean_propensity {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::param(format!("target mean propensity {m} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn split(&self) -> SplitSizes {
        SplitSizes {
            n_train: self.n_train,
            n_validation: self.n_validation,
            n_test: self.n_test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.n_train + self.n_validation + self.n_test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBaseConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Weeks emitted by [`synthetic_weekly_log`].
    pub n_weeks: usize,
    pub mean_mu_t: f64,
    pub mean_mu_c: f64,
    pub mean_p: f64,
    /// Zipf exponent of item popularity; 0 gives uniform popularity.
    pub popularity_skew: f64,
    /// Log-scale spread of user activity.
    pub activity_spread: f64,
    /// Log-scale spread of the per-item multiplicative lift.
    pub lift_spread: f64,
    /// Share of the treated probability coming from the additive lift.
    pub additive_share: f64,
    pub seed: u64,
}

impl Default for SyntheticBaseConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 50,
            n_weeks: 20,
            mean_mu_t: 0.06,
            mean_mu_c: 0.04,
            mean_p: 0.15,
            popularity_skew: 1.0,
            activity_spread: 0.5,
            lift_spread: 0.5,
            additive_share: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticBaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_weeks == 0 {
            return Err(Error::param("synthetic base dimensions must be at least 1"));
        }
        for (name, v) in [
            ("mean_mu_t", self.mean_mu_t),
            ("mean_mu_c", self.mean_mu_c),
            ("mean_p", self.mean_p),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.popularity_skew >= 0.0)
            || !(self.activity_spread >= 0.0)
            || !(self.lift_spread >= 0.0)
            || !(0.0..=1.0).contains(&self.additive_share)
        {
            return Err(Error::param("synthetic base shape parameters out of range"));
        }
        Ok(())
    }
}

/// Outcome probabilities and the original-style propensity of a base.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTables {
    pub mu_t: Array2<f64>,
    pub mu_c: Array2<f64>,
    pub propensity: PropensityModel,
    /// Tuned prior weight, when the base came from a log.
    pub prior_weight: Option<f64>,
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Reads a `user_id,item_id,week,y,z` CSV and applies [`filter_log`].
///
/// External ids are mapped to dense indices in sorted id order; weeks are
/// mapped in ascending numeric order.
pub fn ingest_weekly_logs(path: &Path, min_weeks: usize) -> Result<InteractionLog> {
    let rows = read_csv_rows(path)?;
    let cols = ["user_id", "item_id", "week", "y", "z"]
        .iter()
        .map(|c| rows.column(c, path))
        .collect::<Result<Vec<_>>>()?;

    struct Raw {
        user: String,
        item: String,
        week: i64,
        y: bool,
        z: bool,
    }
    let mut raw = Vec::with_capacity(rows.records.len());
    for rec in &rows.records {
        let field = |k: usize| rec.get(cols[k]).unwrap_or("");
        raw.push(Raw {
            user: field(0).to_string(),
            item: field(1).to_string(),
            week: parse_field(field(2), path, "week")?,
            y: parse_flag(field(3), path, "y")?,
            z: parse_flag(field(4), path, "z")?,
        });
    }

    let users: BTreeSet<&str> = raw.iter().map(|r| r.user.as_str()).collect();
    let items: BTreeSet<&str> = raw.iter().map(|r| r.item.as_str()).collect();
    let weeks: BTreeSet<i64> = raw.iter().map(|r| r.week).collect();
    let user_index: BTreeMap<&str, usize> = users.iter().enumerate().map(|(k, u)| (*u, k)).collect();
    let item_index: BTreeMap<&str, usize> = items.iter().enumerate().map(|(k, i)| (*i, k)).collect();
    let week_index: BTreeMap<i64, usize> = weeks.iter().enumerate().map(|(k, w)| (*w, k)).collect();

    let records = raw
        .iter()
        .filter(|r| r.y || r.z)
        .map(|r| LogRecord {
            user: user_index[r.user.as_str()],
            item: item_index[r.item.as_str()],
            week: week_index[&r.week],
            y: r.y,
            z: r.z,
        })
        .collect();
    let log = InteractionLog::with_ids(
        users.into_iter().map(str::to_string).collect(),
        items.into_iter().map(str::to_string).collect(),
        weeks.into_iter().collect(),
        records,
    )?;
    filter_log(&log, min_weeks)
}

/// Keeps users and items with at least `min_weeks` distinct purchase weeks and
/// items logged both with and without recommendation, repeating until no more
/// rows are removed. Surviving users and items are re-indexed densely.
pub fn filter_log(log: &InteractionLog, min_weeks: usize) -> Result<InteractionLog> {
    let mut keep_user = vec![true; log.n_users()];
    let mut keep_item = vec![true; log.n_items()];
    loop {
        let mut user_weeks: Vec<HashSet<usize>> = vec![HashSet::new(); log.n_users()];
        let mut item_weeks: Vec<HashSet<usize>> = vec![HashSet::new(); log.n_items()];
        let mut item_treated = vec![false; log.n_items()];
        let mut item_control = vec![false; log.n_items()];
        for r in log.records() {
            if !keep_user[r.user] || !keep_item[r.item] {
                continue;
            }
            if r.y {
                user_weeks[r.user].insert(r.week);
                item_weeks[r.item].insert(r.week);
            }
            if r.z {
                item_treated[r.item] = true;
            } else {
                item_control[r.item] = true;
            }
        }
        let mut changed = false;
        for u in 0..log.n_users() {
            if keep_user[u] && user_weeks[u].len() < min_weeks {
                keep_user[u] = false;
                changed = true;
            }
        }
        for i in 0..log.n_items() {
            if keep_item[i]
                && (item_weeks[i].len() < min_weeks || !item_treated[i] || !item_control[i])
            {
                keep_item[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let remap = |keep: &[bool]| -> Vec<Option<usize>> {
        let mut next = 0;
        keep.iter()
            .map(|&k| {
                k.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let user_map = remap(&keep_user);
    let item_map = remap(&keep_item);
    let records: Vec<LogRecord> = log
        .records()
        .iter()
        .filter_map(|r| {
            Some(LogRecord {
                user: user_map[r.user]?,
                item: item_map[r.item]?,
                ..*r
            })
        })
        .collect();
    if records.is_empty() {
        return Err(Error::DegenerateInput("no records survive filtering".into()));
    }
    let pick = |ids: &[String], keep: &[bool]| -> Vec<String> {
        ids.iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(id, _)| id.clone())
            .collect()
    };
    InteractionLog::with_ids(
        pick(&log.user_ids, &keep_user),
        pick(&log.item_ids, &keep_item),
        log.week_ids.clone(),
        records,
    )
}

/// `V_ut = 1` iff user `u` purchased anything in week `t`.
pub fn visit_indicator(log: &InteractionLog) -> Array2<u8> {
    let mut v = Array2::zeros((log.n_users(), log.n_weeks()));
    for r in log.records().iter().filter(|r| r.y) {
        v[[r.user, r.week]] = 1;
    }
    v
}

/// Beta-prior smoothed rate `(a + w a*) / (b + w b*)`, 0 when the
/// denominator vanishes.
pub fn smoothed_rate(a: f64, b: f64, a_star: f64, b_star: f64, w: f64) -> f64 {
    let den = b + w * b_star;
    if den <= 0.0 {
        0.0
    } else {
        ((a + w * a_star) / den).clamp(0.0, 1.0)
    }
}

fn smooth_table(a: &Array2<f64>, b: &Array2<f64>, w: f64) -> Array2<f64> {
    let n_users = a.nrows() as f64;
    let a_star: Array1<f64> = a.sum_axis(ndarray::Axis(0)) / n_users;
    let b_star: Array1<f64> = b.sum_axis(ndarray::Axis(0)) / n_users;
    Array2::from_shape_fn(a.dim(), |(u, i)| {
        smoothed_rate(a[[u, i]], b[[u, i]], a_star[i], b_star[i], w)
    })
}

/// Treated/control purchase counts and visit-weighted exposure counts.
struct OutcomeCounts {
    a_t: Array2<f64>,
    b_t: Array2<f64>,
    a_c: Array2<f64>,
    b_c: Array2<f64>,
}

fn outcome_counts(log: &InteractionLog) -> OutcomeCounts {
    let dim = (log.n_users(), log.n_items());
    let v = visit_indicator(log);
    let visits: Vec<f64> = v.rows().into_iter().map(|r| r.iter().map(|&x| x as f64).sum()).collect();
    let mut a_t = Array2::zeros(dim);
    let mut b_t = Array2::zeros(dim);
    let mut a_c = Array2::zeros(dim);
    for r in log.records() {
        if r.z {
            b_t[[r.user, r.item]] += v[[r.user, r.week]] as f64;
            if r.y {
                a_t[[r.user, r.item]] += 1.0;
            }
        } else if r.y {
            a_c[[r.user, r.item]] += 1.0;
        }
    }
    let b_c = Array2::from_shape_fn(dim, |(u, i)| visits[u] - b_t[[u, i]]);
    OutcomeCounts { a_t, b_t, a_c, b_c }
}

/// Purchase probabilities with (`mu_t`) and without (`mu_c`) recommendation.
pub fn estimate_outcome_probs(log: &InteractionLog, w: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::param(format!("prior weight must be >= 0, got {w}")));
    }
    let c = outcome_counts(log);
    Ok((smooth_table(&c.a_t, &c.b_t, w), smooth_table(&c.a_c, &c.b_c, w)))
}

/// Restricts a log to its first `n_weeks` weeks, keeping user/item indices.
fn truncate_weeks(log: &InteractionLog, n_weeks: usize) -> Result<InteractionLog> {
    InteractionLog::with_ids(
        log.user_ids.clone(),
        log.item_ids.clone(),
        log.week_ids[..n_weeks].to_vec(),
        log.records().iter().filter(|r| r.week < n_weeks).copied().collect(),
    )
}

/// Brier score of every grid weight when fitting on all but the last week and
/// predicting the last one, plus the best weight (ties to the smallest).
///
/// Only pairs of users who visited in the last week are scored; the prediction
/// is `mu_t` if the pair was recommended that week and `mu_c` otherwise.
pub fn tune_prior_weight(log: &InteractionLog, grid: &[f64]) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::param("prior weight grid is empty"));
    }
    if log.n_weeks() < 2 {
        return Err(Error::param("prior weight tuning needs at least 2 weeks"));
    }
    let last = log.n_weeks() - 1;
    let fit_log = truncate_weeks(log, last)?;
    let visited: Vec<usize> = {
        let v = visit_indicator(log);
        (0..log.n_users()).filter(|&u| v[[u, last]] == 1).collect()
    };
    if visited.is_empty() {
        return Err(Error::DegenerateInput("no user visited in the held-out week".into()));
    }
    let mut held_out: BTreeMap<(usize, usize), (bool, bool)> = BTreeMap::new();
    for r in log.records().iter().filter(|r| r.week == last) {
        held_out.insert((r.user, r.item), (r.y, r.z));
    }
    let counts = outcome_counts(&fit_log);
    let n_pairs = (visited.len() * log.n_items()) as f64;

    let mut scores = Vec::with_capacity(grid.len());
    for &w in grid {
        if !(w >= 0.0) {
            return Err(Error::param(format!("prior weight must be >= 0, got {w}")));
        }
        let mu_t = smooth_table(&counts.a_t, &counts.b_t, w);
        let mu_c = smooth_table(&counts.a_c, &counts.b_c, w);
        let mut sq = 0.0;
        for &u in &visited {
            for i in 0..log.n_items() {
                let (y, z) = held_out.get(&(u, i)).copied().unwrap_or((false, false));
                let pred = if z { mu_t[[u, i]] } else { mu_c[[u, i]] };
                let err = pred - y as u8 as f64;
                sq += err * err;
            }
        }
        scores.push(sq / n_pairs);
    }
    let mut best = 0;
    for k in 1..grid.len() {
        if scores[k] < scores[best] || (scores[k] == scores[best] && grid[k] < grid[best]) {
            best = k;
        }
    }
    Ok((grid[best], scores))
}

/// Propensity from the log's recommendation frequency per visit, smoothed
/// with the same prior as the outcome probabilities, then clipped.
pub fn build_original_propensity(log: &InteractionLog, w: f64) -> Result<PropensityModel> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::param(format!("prior weight must be >= 0, got {w}")));
    }
    let dim = (log.n_users(), log.n_items());
    let v = visit_indicator(log);
    let mut a = Array2::<f64>::zeros(dim);
    for r in log.records().iter().filter(|r| r.z) {
        a[[r.user, r.item]] += 1.0;
    }
    let b = Array2::from_shape_fn(dim, |(u, _)| v.row(u).iter().map(|&x| x as f64).sum::<f64>());
    let n_users = dim.0 as f64;
    let a_star = a.sum_axis(ndarray::Axis(0)) / n_users;
    let b_star = b.sum_axis(ndarray::Axis(0)) / n_users;
    let p = Array2::from_shape_fn(dim, |(u, i)| {
        let den = b[[u, i]] + w * b_star[i];
        let raw = if den <= 0.0 { 0.0 } else { (a[[u, i]] + w * a_star[i]) / den };
        clip_propensity(raw)
    });
    PropensityModel::new(p, Provenance::Original)
}

/// Mean over ranks `1..=n_items` of `min(1, alpha rank^-beta)`. Every user
/// holds each rank exactly once, so this is also the mean over all pairs.
pub fn personalized_mean(alpha: f64, beta: f64, n_items: usize) -> f64 {
    (1..=n_items)
        .map(|r| (alpha * (r as f64).powf(-beta)).min(1.0))
        .sum::<f64>()
        / n_items as f64
}

/// Scale `alpha` such that the mean personalized propensity equals `target`.
pub fn solve_alpha(n_items: usize, beta: f64, target: f64) -> Result<f64> {
    const LO: f64 = 1e-9;
    const HI: f64 = 1e3;
    const TOL: f64 = 1e-6;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::param(format!("target mean propensity {target} outside (0, 1)")));
    }
    if n_items == 0 {
        return Err(Error::param("no items to rank"));
    }
    let (mut lo, mut hi) = (LO, HI);
    if personalized_mean(lo, beta, n_items) > target + TOL
        || personalized_mean(hi, beta, n_items) < target - TOL
    {
        return Err(Error::param(format!(
            "cannot bracket target mean {target} with alpha in [{LO}, {HI}] at beta {beta}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if personalized_mean(mid, beta, n_items) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let mean = personalized_mean(alpha, beta, n_items);
    if (mean - target).abs() > TOL {
        return Err(Error::Numeric(format!(
            "alpha search ended at mean {mean}, target {target}"
        )));
    }
    Ok(alpha)
}

/// 1-based rank of each item per user by descending `scores`, ties by item.
fn preference_ranks(scores: &Array2<f64>) -> Array2<u32> {
    let mut ranks = Array2::zeros(scores.dim());
    for (u, row) in scores.rows().into_iter().enumerate() {
        let values: Vec<f64> = row.to_vec();
        for (pos, item) in crate::models::rank_scores(&values).into_iter().enumerate() {
            ranks[[u, item as usize]] = pos as u32 + 1;
        }
    }
    ranks
}

/// Propensity concentrated on each user's preferred items:
/// `P_ui = min(1, alpha (1/rank_ui)^beta)` where ranks follow the purchase
/// probability under the original propensity and `alpha` matches the target
/// mean (the original mean unless overridden) before clipping.
pub fn build_personalized_propensity(
    mu_t: &Array2<f64>,
    mu_c: &Array2<f64>,
    original: &PropensityModel,
    beta: f64,
    target: TargetMean,
) -> Result<PropensityModel> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::param(format!("beta must be >= 0, got {beta}")));
    }
    if mu_t.dim() != original.p.dim() || mu_c.dim() != original.p.dim() {
        return Err(Error::Structural {
            dimension: "propensity table",
            expected: mu_t.len(),
            found: original.p.len(),
        });
    }
    let target = match target {
        TargetMean::Value(m) => m,
        TargetMean::Keyword(MatchOriginal::MatchOriginal) => original.mean(),
    };
    let n_items = mu_t.ncols();
    let alpha = solve_alpha(n_items, beta, target)?;
    let observed_mu = Array2::from_shape_fn(mu_t.dim(), |(u, i)| {
        let p = original.p[[u, i]];
        p * mu_t[[u, i]] + (1.0 - p) * mu_c[[u, i]]
    });
    let ranks = preference_ranks(&observed_mu);
    let p = ranks.mapv(|r| clip_propensity((alpha * (r as f64).powf(-beta)).min(1.0)));
    PropensityModel::new(p, Provenance::Personalized { beta })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shrinks every log-odds toward the mean log-odds by `xi`, then clips.
pub fn misspecify_propensity(pm: &PropensityModel, xi: f64) -> Result<PropensityModel> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::param(format!("xi must lie in [0, 1], got {xi}")));
    }
    if pm.p.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::param("misspecification needs propensities strictly inside (0, 1)"));
    }
    let mean_logit = pm.p.iter().map(|&p| logit(p)).sum::<f64>() / pm.p.len() as f64;
    let p = pm.p.mapv(|p| {
        if xi == 0.0 {
            p
        } else {
            clip_propensity(sigmoid((1.0 - xi) * logit(p) + xi * mean_logit))
        }
    });
    PropensityModel::new(
        p,
        Provenance::Misspecified {
            xi,
            base: Box::new(pm.provenance.clone()),
        },
    )
}

fn check_dims(name: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::Structural {
            dimension: name,
            expected: expected.0 * expected.1,
            found: found.0 * found.1,
        });
    }
    Ok(())
}

/// Samples replicates `first_index..first_index + n`.
///
/// `Y^T ~ Bern(mu_t)`, `Y^C ~ Bern(mu_c)` and `Z ~ Bern(assignment)` are drawn
/// independently per pair; observed records carry `logged` as their
/// propensity. Replicate `k` always uses outcome stream `k` and assignment
/// stream `k`, so changing `logged` never changes a draw.
pub fn sample_replicates(
    mu_t: &Array2<f64>,
    mu_c: &Array2<f64>,
    assignment: &PropensityModel,
    logged: &PropensityModel,
    n: usize,
    seed: u64,
    first_index: u64,
) -> Result<(Vec<TruthReplicate>, Vec<ObservedReplicate>)> {
    let dim = mu_t.dim();
    check_dims("mu_c", dim, mu_c.dim())?;
    check_dims("assignment propensity", dim, assignment.p.dim())?;
    check_dims("logged propensity", dim, logged.p.dim())?;
    let (n_users, n_items) = dim;

    let sampled: Vec<(TruthReplicate, ObservedReplicate)> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let k = first_index + r;
            let mut outcome_rng = stream_rng(seed, Stream::Outcomes, k);
            let mut assign_rng = stream_rng(seed, Stream::Assignments, k);
            let mut rows = vec![Vec::new(); n_users];
            let mut records = Vec::new();
            for (u, row) in rows.iter_mut().enumerate() {
                for i in 0..n_items {
                    let y_t = outcome_rng.random::<f64>() < mu_t[[u, i]];
                    let y_c = outcome_rng.random::<f64>() < mu_c[[u, i]];
                    let z = assign_rng.random::<f64>() < assignment.p[[u, i]];
                    if y_t || y_c {
                        row.push(PotentialOutcome { item: i as u32, y_t, y_c });
                    }
                    let y = if z { y_t } else { y_c };
                    if y || z {
                        records.push(ObservedRecord {
                            user: u as u32,
                            item: i as u32,
                            y,
                            z,
                            p: logged.p[[u, i]],
                        });
                    }
                }
            }
            Ok((
                TruthReplicate::from_rows(n_items, rows)?,
                ObservedReplicate::new(n_users, n_items, records)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(sampled.into_iter().unzip())
}

/// Bisection on `c` so that `mean(min(cap, c * raw)) = target`.
fn rescale_to_mean(raw: &Array2<f64>, target: f64, cap: f64) -> Result<Array2<f64>> {
    let positive = raw.iter().filter(|&&v| v > 0.0).count();
    let reachable = cap * positive as f64 / raw.len() as f64;
    if !(target > 0.0) || target >= reachable {
        return Err(Error::param(format!(
            "cannot rescale to mean {target}; reachable supremum is {reachable}"
        )));
    }
    let mean_at = |c: f64| raw.iter().map(|&v| (c * v).min(cap)).sum::<f64>() / raw.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_at(hi) < target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numeric("rescaling diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    Ok(raw.mapv(|v| (c * v).min(cap)))
}

/// Fully synthetic stand-in for a real base log.
///
/// Item popularity follows a Zipf profile over a random item permutation,
/// user activity is log-normal, and `mu_c` is their product. The treated
/// probability adds a per-item multiplicative lift (log-normal with unit mean,
/// so popular items carry no systematic effect) and an additive lift whose
/// item factor is independent of popularity. The propensity grows with
/// `mu_t`. Each table is rescaled to its configured mean.
pub fn generate_synthetic_base(cfg: &SyntheticBaseConfig) -> Result<BaseTables> {
    cfg.validate()?;
    let (n_users, n_items) = (cfg.n_users, cfg.n_items);
    let mut rng = stream_rng(cfg.seed, Stream::SyntheticBase, 0);

    let mut slots: Vec<usize> = (0..n_items).collect();
    slots.shuffle(&mut rng);
    let popularity: Vec<f64> = slots
        .iter()
        .map(|&s| ((s + 1) as f64).powf(-cfg.popularity_skew))
        .collect();
    let log_normal = |sigma: f64| {
        LogNormal::new(-0.5 * sigma * sigma, sigma).map_err(|e| Error::param(e.to_string()))
    };
    let activity_dist = log_normal(cfg.activity_spread)?;
    let activity: Vec<f64> = (0..n_users).map(|_| activity_dist.sample(&mut rng)).collect();
    let lift_dist = log_normal(cfg.lift_spread)?;
    let lift: Vec<f64> = (0..n_items).map(|_| lift_dist.sample(&mut rng)).collect();
    let appeal_dist = log_normal(1.0)?;
    let appeal: Vec<f64> = (0..n_items).map(|_| appeal_dist.sample(&mut rng)).collect();

    let raw_c = Array2::from_shape_fn((n_users, n_items), |(u, i)| activity[u] * popularity[i]);
    let mu_c = rescale_to_mean(&raw_c, cfg.mean_mu_c, 1.0)?;

    // additive part scaled to carry `additive_share` of the treated mean
    let mean_appeal = appeal.iter().sum::<f64>() / n_items as f64;
    let mean_activity = activity.iter().sum::<f64>() / n_users as f64;
    let add_scale = cfg.additive_share * cfg.mean_mu_t / (mean_appeal * mean_activity);
    let raw_t = Array2::from_shape_fn((n_users, n_items), |(u, i)| {
        (mu_c[[u, i]] * lift[i] * (1.0 - cfg.additive_share) + add_scale * activity[u] * appeal[i])
            .min(1.0)
    });
    let mu_t = rescale_to_mean(&raw_t, cfg.mean_mu_t, 1.0)?;

    let noise_dist = log_normal(0.5)?;
    let raw_p = Array2::from_shape_fn((n_users, n_items), |(u, i)| {
        mu_t[[u, i]].sqrt() * noise_dist.sample(&mut rng)
    });
    let p = rescale_to_mean(&raw_p, cfg.mean_p, PROPENSITY_CEIL)?.mapv(clip_propensity);
    Ok(BaseTables {
        mu_t,
        mu_c,
        propensity: PropensityModel::new(p, Provenance::Original)?,
        prior_weight: None,
    })
}

/// Samples a weekly log from base tables: each week, `Z ~ Bern(P)` and
/// `Y ~ Bern(mu_t or mu_c)` per pair. Useful for exercising the ingestion path
/// without real data.
pub fn synthetic_weekly_log(base: &BaseTables, n_weeks: usize, seed: u64) -> Result<InteractionLog> {
    let (n_users, n_items) = base.mu_t.dim();
    let mut rng = stream_rng(seed, Stream::SyntheticLog, 0);
    let mut records = Vec::new();
    for week in 0..n_weeks {
        for user in 0..n_users {
            for item in 0..n_items {
                let z = rng.random::<f64>() < base.propensity.p[[user, item]];
                let mu = if z { base.mu_t[[user, item]] } else { base.mu_c[[user, item]] };
                let y = rng.random::<f64>() < mu;
                if y || z {
                    records.push(LogRecord { user, item, week, y, z });
                }
            }
        }
    }
    InteractionLog::new(n_users, n_items, n_weeks, records)
}

/// Base tables from a filtered log: tunes the prior weight on the last week,
/// then estimates outcome probabilities and the original propensity.
pub fn base_from_log(log: &InteractionLog, grid: &[f64]) -> Result<BaseTables> {
    let (w, _) = tune_prior_weight(log, grid)?;
    let (mu_t, mu_c) = estimate_outcome_probs(log, w)?;
    let propensity = build_original_propensity(log, w)?;
    Ok(BaseTables {
        mu_t,
        mu_c,
        propensity,
        prior_weight: Some(w),
    })
}

/// Generating propensity selected by `cfg` (original or personalized).
pub fn assignment_propensity(base: &BaseTables, cfg: &GenConfig) -> Result<PropensityModel> {
    match cfg.propensity {
        PropensityMode::Original => Ok(base.propensity.clone()),
        PropensityMode::Personalized => build_personalized_propensity(
            &base.mu_t,
            &base.mu_c,
            &base.propensity,
            cfg.beta,
            cfg.target_mean_propensity,
        ),
    }
}
