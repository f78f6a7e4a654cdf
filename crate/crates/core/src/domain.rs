//! Domain types shared by every stage of the pipeline.
//!
//! Users and items are dense `0..U` / `0..I` indices. Outcome tables are
//! sparse (only positive entries are stored), propensity and probability
//! tables are dense `U x I` arrays.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clip bound for propensities.
pub const PROPENSITY_FLOOR: f64 = 1e-6;
/// Upper clip bound for propensities.
pub const PROPENSITY_CEIL: f64 = 1.0 - 1e-6;

pub fn clip_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_FLOOR, PROPENSITY_CEIL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogRecord {
    pub user: usize,
    pub item: usize,
    pub week: usize,
    pub y: bool,
    pub z: bool,
}

/// Weekly purchase (`y`) and recommendation (`z`) log.
///
/// Absent `(user, item, week)` triples mean `y = 0, z = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    n_users: usize,
    n_items: usize,
    n_weeks: usize,
    records: Vec<LogRecord>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub week_ids: Vec<i64>,
}

impl InteractionLog {
    /// Builds a log with synthetic ids (`"0"`, `"1"`, ...). Records are sorted
    /// by `(user, item, week)`.
    pub fn new(
        n_users: usize,
        n_items: usize,
        n_weeks: usize,
        records: Vec<LogRecord>,
    ) -> Result<Self> {
        Self::with_ids(
            (0..n_users).map(|u| u.to_string()).collect(),
            (0..n_items).map(|i| i.to_string()).collect(),
            (0..n_weeks as i64).collect(),
            records,
        )
    }

    pub fn with_ids(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        week_ids: Vec<i64>,
        mut records: Vec<LogRecord>,
    ) -> Result<Self> {
        let (n_users, n_items, n_weeks) = (user_ids.len(), item_ids.len(), week_ids.len());
        for r in &records {
            if r.user >= n_users || r.item >= n_items || r.week >= n_weeks {
                return Err(Error::Format(format!(
                    "record (user {}, item {}, week {}) out of bounds for {}x{}x{}",
                    r.user, r.item, r.week, n_users, n_items, n_weeks
                )));
            }
        }
        records.sort_unstable_by_key(|r| (r.user, r.item, r.week));
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].user, w[0].item, w[0].week) == (w[1].user, w[1].item, w[1].week))
        {
            return Err(Error::Format(format!(
                "duplicate record for (user {}, item {}, week {})",
                w[0].user, w[0].item, w[0].week
            )));
        }
        Ok(Self {
            n_users,
            n_items,
            n_weeks,
            records,
            user_ids,
            item_ids,
            week_ids,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_weeks(&self) -> usize {
        self.n_weeks
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }
}

/// Sampled potential outcomes of one user-item pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PotentialOutcome {
    pub item: u32,
    pub y_t: bool,
    pub y_c: bool,
}

impl PotentialOutcome {
    /// Causal effect `Y^T - Y^C`, always in `{-1, 0, 1}`.
    pub fn tau(&self) -> i8 {
        self.y_t as i8 - self.y_c as i8
    }
}

/// One replicate of sampled potential outcomes. Only pairs with `Y^T = 1` or
/// `Y^C = 1` are stored; rows are sorted by item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthReplicate {
    n_items: usize,
    rows: Vec<Vec<PotentialOutcome>>,
}

impl TruthReplicate {
    pub fn new(n_users: usize, n_items: usize) -> Self {
        Self {
            n_items,
            rows: vec![Vec::new(); n_users],
        }
    }

    /// Builds from per-user rows, dropping all-zero entries.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<PotentialOutcome>>) -> Result<Self> {
        let mut out = Self::new(rows.len(), n_items);
        for (u, row) in rows.into_iter().enumerate() {
            for o in row {
                out.insert(u, o)?;
            }
        }
        Ok(out)
    }

    pub fn insert(&mut self, user: usize, outcome: PotentialOutcome) -> Result<()> {
        if user >= self.rows.len() || outcome.item as usize >= self.n_items {
            return Err(Error::param(format!(
                "pair ({user}, {}) out of range",
                outcome.item
            )));
        }
        if !outcome.y_t && !outcome.y_c {
            return Ok(());
        }
        let row = &mut self.rows[user];
        match row.binary_search_by_key(&outcome.item, |o| o.item) {
            Ok(pos) => row[pos] = outcome,
            Err(pos) => row.insert(pos, outcome),
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, user: usize) -> &[PotentialOutcome] {
        &self.rows[user]
    }

    pub fn get(&self, user: usize, item: usize) -> (bool, bool) {
        match self.rows[user].binary_search_by_key(&(item as u32), |o| o.item) {
            Ok(pos) => (self.rows[user][pos].y_t, self.rows[user][pos].y_c),
            Err(_) => (false, false),
        }
    }

    pub fn tau(&self, user: usize, item: usize) -> i8 {
        let (t, c) = self.get(user, item);
        t as i8 - c as i8
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &PotentialOutcome)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |o| (u, o)))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Outcome probabilities plus the realized potential outcomes of every
/// replicate. Evaluation-only.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mu_t: Array2<f64>,
    pub mu_c: Array2<f64>,
    pub replicates: Vec<TruthReplicate>,
}

impl GroundTruth {
    pub fn new(mu_t: Array2<f64>, mu_c: Array2<f64>, replicates: Vec<TruthReplicate>) -> Result<Self> {
        check_shape("mu_c rows", mu_t.nrows(), mu_c.nrows())?;
        check_shape("mu_c columns", mu_t.ncols(), mu_c.ncols())?;
        for r in &replicates {
            check_shape("truth users", mu_t.nrows(), r.n_users())?;
            check_shape("truth items", mu_t.ncols(), r.n_items())?;
        }
        Ok(Self {
            mu_t,
            mu_c,
            replicates,
        })
    }

    pub fn n_users(&self) -> usize {
        self.mu_t.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.mu_t.ncols()
    }
}

/// How a propensity table was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Personalized { beta: f64 },
    Misspecified { xi: f64, base: Box<Provenance> },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => write!(f, "original"),
            Provenance::Personalized { beta } => write!(f, "personalized(beta={beta})"),
            Provenance::Misspecified { xi, base } => write!(f, "misspecified(xi={xi}, {base})"),
        }
    }
}

/// Dense per-pair recommendation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub p: Array2<f64>,
    pub provenance: Provenance,
}

impl PropensityModel {
    /// Accepts any table of probabilities in `[0, 1]`. Use [`Self::clipped`]
    /// to enforce the clip range.
    pub fn new(p: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if let Some(((u, i), v)) = p
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::param(format!("propensity {v} at ({u}, {i}) is not a probability")));
        }
        Ok(Self { p, provenance })
    }

    pub fn clipped(mut self) -> Self {
        self.p.mapv_inplace(clip_propensity);
        self
    }

    pub fn mean(&self) -> f64 {
        self.p.mean().unwrap_or(0.0)
    }

    pub fn n_users(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.p.ncols()
    }
}

/// One logged `(user, item)` observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRecord {
    pub user: u32,
    pub item: u32,
    pub y: bool,
    pub z: bool,
    /// Logged propensity (may differ from the generating one).
    pub p: f64,
}

/// Observed data of one replicate. Pairs with `y = 0` and `z = 0` are not
/// stored; every other pair is.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedReplicate {
    n_users: usize,
    n_items: usize,
    records: Vec<ObservedRecord>,
    offsets: Vec<usize>,
}

impl ObservedReplicate {
    pub fn new(n_users: usize, n_items: usize, mut records: Vec<ObservedRecord>) -> Result<Self> {
        for r in &records {
            if r.user as usize >= n_users || r.item as usize >= n_items {
                return Err(Error::param(format!(
                    "observed pair ({}, {}) out of range",
                    r.user, r.item
                )));
            }
        }
        records.retain(|r| r.y || r.z);
        records.sort_unstable_by_key(|r| (r.user, r.item));
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::Format(format!(
                "duplicate observed pair ({}, {})",
                w[0].user, w[0].item
            )));
        }
        let mut offsets = vec![0; n_users + 1];
        for r in &records {
            offsets[r.user as usize + 1] += 1;
        }
        for u in 0..n_users {
            offsets[u + 1] += offsets[u];
        }
        Ok(Self {
            n_users,
            n_items,
            records,
            offsets,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn records(&self) -> &[ObservedRecord] {
        &self.records
    }

    pub fn row(&self, user: usize) -> &[ObservedRecord] {
        &self.records[self.offsets[user]..self.offsets[user + 1]]
    }

    pub fn get(&self, user: usize, item: usize) -> Option<&ObservedRecord> {
        let row = self.row(user);
        row.binary_search_by_key(&(item as u32), |r| r.item)
            .ok()
            .map(|pos| &row[pos])
    }

    pub fn positives(&self) -> impl Iterator<Item = &ObservedRecord> {
        self.records.iter().filter(|r| r.y)
    }

    /// `(sum Z, sum (1 - Z))` over all `U x I` pairs.
    pub fn assignment_totals(&self) -> (usize, usize) {
        let treated = self.records.iter().filter(|r| r.z).count();
        (treated, self.n_users * self.n_items - treated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub replicates: Vec<ObservedReplicate>,
}

impl ObservedDataset {
    pub fn new(n_users: usize, n_items: usize, replicates: Vec<ObservedReplicate>) -> Result<Self> {
        for r in &replicates {
            check_shape("observed users", n_users, r.n_users())?;
            check_shape("observed items", n_items, r.n_items())?;
        }
        Ok(Self {
            n_users,
            n_items,
            replicates,
        })
    }
}

/// Per-user item orderings, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    n_items: usize,
    order: Vec<u32>,
    rank: Vec<u32>,
}

impl RankedList {
    /// Builds from per-user orderings; each must be a permutation of `0..I`.
    pub fn from_orders(n_items: usize, orders: Vec<Vec<u32>>) -> Result<Self> {
        let n_users = orders.len();
        let mut order = Vec::with_capacity(n_users * n_items);
        let mut rank = vec![0u32; n_users * n_items];
        for (u, row) in orders.into_iter().enumerate() {
            if row.len() != n_items {
                return Err(Error::Structural {
                    dimension: "ranking length",
                    expected: n_items,
                    found: row.len(),
                });
            }
            for (pos, &item) in row.iter().enumerate() {
                let slot = rank
                    .get_mut(u * n_items + item as usize)
                    .filter(|_| (item as usize) < n_items)
                    .ok_or_else(|| Error::param(format!("item {item} out of range in ranking")))?;
                if *slot != 0 {
                    return Err(Error::param(format!(
                        "item {item} appears twice in the ranking of user {u}"
                    )));
                }
                *slot = pos as u32 + 1;
            }
            order.extend(row);
        }
        Ok(Self {
            n_items,
            order,
            rank,
        })
    }

    /// Same ordering for every user.
    pub fn replicated(n_users: usize, order: Vec<u32>) -> Result<Self> {
        let n_items = order.len();
        Self::from_orders(n_items, vec![order; n_users])
    }

    pub fn n_users(&self) -> usize {
        if self.n_items == 0 {
            0
        } else {
            self.order.len() / self.n_items
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Items of `user`, best first.
    pub fn order(&self, user: usize) -> &[u32] {
        &self.order[user * self.n_items..(user + 1) * self.n_items]
    }

    /// 1-based ranks of `user`'s items, indexed by item.
    pub fn ranks(&self, user: usize) -> &[u32] {
        &self.rank[user * self.n_items..(user + 1) * self.n_items]
    }

    pub fn rank(&self, user: usize, item: usize) -> usize {
        self.rank[user * self.n_items + item] as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutcomeMismatch {
        replicate: usize,
        user: usize,
        item: usize,
    },
    PropensityBelowFloor {
        user: usize,
        item: usize,
        value: f64,
    },
    PropensityAboveCeiling {
        user: usize,
        item: usize,
        value: f64,
    },
    LoggedPropensityOutOfRange {
        replicate: usize,
        user: usize,
        item: usize,
        value: f64,
    },
    ProbabilityOutOfRange {
        table: &'static str,
        user: usize,
        item: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutcomeMismatch { replicate, user, item } => write!(
                f,
                "observed outcome mismatch at ({user},{item}) in replicate {replicate}"
            ),
            Violation::PropensityBelowFloor { user, item, value } => {
                write!(f, "propensity below clip floor at ({user},{item}): {value}")
            }
            Violation::PropensityAboveCeiling { user, item, value } => {
                write!(f, "propensity above clip ceiling at ({user},{item}): {value}")
            }
            Violation::LoggedPropensityOutOfRange { replicate, user, item, value } => write!(
                f,
                "logged propensity {value} outside (0,1) at ({user},{item}) in replicate {replicate}"
            ),
            Violation::ProbabilityOutOfRange { table, user, item, value } => {
                write!(f, "{table} value {value} outside [0,1] at ({user},{item})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_shape(dimension: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Structural {
            dimension,
            expected,
            found,
        });
    }
    Ok(())
}

/// Checks the probabilistic and structural invariants tying observed data,
/// ground truth and propensities together.
pub fn validate_dataset(
    data: &ObservedDataset,
    truth: &GroundTruth,
    propensity: &PropensityModel,
) -> Result<ValidationReport> {
    check_shape("users", truth.n_users(), data.n_users)?;
    check_shape("items", truth.n_items(), data.n_items)?;
    check_shape("propensity users", truth.n_users(), propensity.n_users())?;
    check_shape("propensity items", truth.n_items(), propensity.n_items())?;
    check_shape("replicates", truth.replicates.len(), data.replicates.len())?;

    let mut report = ValidationReport::default();
    for (table, mu) in [("mu_t", &truth.mu_t), ("mu_c", &truth.mu_c)] {
        for ((user, item), &value) in mu.indexed_iter() {
            if !(0.0..=1.0).contains(&value) {
                report.violations.push(Violation::ProbabilityOutOfRange {
                    table,
                    user,
                    item,
                    value,
                });
            }
        }
    }
    for ((user, item), &value) in propensity.p.indexed_iter() {
        if value < PROPENSITY_FLOOR {
            report
                .violations
                .push(Violation::PropensityBelowFloor { user, item, value });
        } else if value > PROPENSITY_CEIL {
            report
                .violations
                .push(Violation::PropensityAboveCeiling { user, item, value });
        }
    }

    for (replicate, (obs, tr)) in data.replicates.iter().zip(&truth.replicates).enumerate() {
        for r in obs.records() {
            if !(r.p > 0.0 && r.p < 1.0) {
                report.violations.push(Violation::LoggedPropensityOutOfRange {
                    replicate,
                    user: r.user as usize,
                    item: r.item as usize,
                    value: r.p,
                });
            }
        }
        for user in 0..data.n_users {
            let mut mismatched: Vec<usize> = Vec::new();
            // Y = Z Y^T + (1 - Z) Y^C for every pair touched by either table.
            for r in obs.row(user) {
                let (y_t, y_c) = tr.get(user, r.item as usize);
                let expected = if r.z { y_t } else { y_c };
                if expected != r.y {
                    mismatched.push(r.item as usize);
                }
            }
            for o in tr.row(user) {
                if obs.get(user, o.item as usize).is_none() && o.y_c {
                    mismatched.push(o.item as usize);
                }
            }
            mismatched.sort_unstable();
            report.violations.extend(mismatched.into_iter().map(|item| {
                Violation::OutcomeMismatch {
                    replicate,
                    user,
                    item,
                }
            }));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(y: [bool; 2]) -> (ObservedDataset, GroundTruth, PropensityModel) {
        let mut tr = TruthReplicate::new(1, 2);
        tr.insert(0, PotentialOutcome { item: 0, y_t: true, y_c: false }).unwrap();
        let truth = GroundTruth::new(array![[0.5, 0.5]], array![[0.1, 0.1]], vec![tr]).unwrap();
        let obs = ObservedReplicate::new(
            1,
            2,
            vec![
                ObservedRecord { user: 0, item: 0, y: y[0], z: true, p: 0.5 },
                ObservedRecord { user: 0, item: 1, y: y[1], z: false, p: 0.5 },
            ],
        )
        .unwrap();
        let data = ObservedDataset::new(1, 2, vec![obs]).unwrap();
        let pm = PropensityModel::new(array![[0.5, 0.5]], Provenance::Original).unwrap();
        (data, truth, pm)
    }

    #[test]
    fn consistent_dataset_has_no_violations() {
        let (d, g, pm) = tiny([true, false]);
        assert!(validate_dataset(&d, &g, &pm).unwrap().is_ok());
    }

    #[test]
    fn outcome_mismatch_is_reported() {
        let (d, g, pm) = tiny([false, false]);
        let report = validate_dataset(&d, &g, &pm).unwrap();
        assert_eq!(
            report.violations,
            vec![Violation::OutcomeMismatch { replicate: 0, user: 0, item: 0 }]
        );
        assert_eq!(
            report.violations[0].to_string(),
            "observed outcome mismatch at (0,0) in replicate 0"
        );
    }

    #[test]
    fn omitted_control_positive_is_a_mismatch() {
        let (d, mut g, pm) = tiny([true, false]);
        g.replicates[0]
            .insert(0, PotentialOutcome { item: 1, y_t: false, y_c: true })
            .unwrap();
        let report = validate_dataset(&d, &g, &pm).unwrap();
        assert_eq!(
            report.violations,
            vec![Violation::OutcomeMismatch { replicate: 0, user: 0, item: 1 }]
        );
    }

    #[test]
    fn zero_propensity_is_below_floor() {
        let (d, g, _) = tiny([true, false]);
        let pm = PropensityModel::new(array![[0.0, 0.5]], Provenance::Original).unwrap();
        let report = validate_dataset(&d, &g, &pm).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].to_string().contains("propensity below clip floor"));
    }

    #[test]
    fn shape_mismatch_names_dimension() {
        let (d, g, _) = tiny([true, false]);
        let pm = PropensityModel::new(array![[0.5, 0.5, 0.5]], Provenance::Original).unwrap();
        match validate_dataset(&d, &g, &pm) {
            Err(Error::Structural { dimension, expected: 2, found: 3 }) => {
                assert_eq!(dimension, "propensity items")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tau_stays_ternary() {
        for (t, c) in [(false, false), (true, false), (false, true), (true, true)] {
            let o = PotentialOutcome { item: 0, y_t: t, y_c: c };
            assert!((-1..=1).contains(&o.tau()));
        }
    }

    #[test]
    fn ranked_list_rejects_non_permutation() {
        assert!(RankedList::from_orders(3, vec![vec![0, 1, 1]]).is_err());
        assert!(RankedList::from_orders(3, vec![vec![0, 1, 3]]).is_err());
        let rl = RankedList::from_orders(3, vec![vec![2, 0, 1]]).unwrap();
        assert_eq!(rl.rank(0, 2), 1);
        assert_eq!(rl.rank(0, 1), 3);
    }

    #[test]
    fn duplicate_log_records_are_rejected() {
        let rec = LogRecord { user: 0, item: 0, week: 0, y: true, z: false };
        assert!(matches!(
            InteractionLog::new(1, 1, 1, vec![rec, rec]),
            Err(Error::Format(_))
        ));
    }
}
