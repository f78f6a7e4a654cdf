//! On-disk dataset bundle: ground truth, propensities and observed replicates.
//!
//! Layout of a bundle directory:
//!
//! | file              | columns                         |
//! |-------------------|---------------------------------|
//! | `mu.csv`          | `user,item,mu_t,mu_c`           |
//! | `propensity.csv`  | `user,item,p`                   |
//! | `propensity_base.csv` | `user,item,p`               |
//! | `truth_r<k>.csv`  | `user,item,y_t,y_c`             |
//! | `obs_r<k>.csv`    | `user,item,y,z,p_logged`        |
//! | `users.csv`       | `index,id`                      |
//! | `items.csv`       | `index,id`                      |
//! | `meta.json`       | config, seed, provenance, split |
//!
//! Replicates are numbered globally: training first, then validation, then
//! test. Floats are written with 17 significant digits.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    assignment_propensity, misspecify_propensity, sample_replicates, BaseTables, GenConfig,
    SplitSizes,
};
use crate::domain::{
    GroundTruth, ObservedDataset, ObservedRecord, ObservedReplicate, PotentialOutcome,
    PropensityModel, Provenance, TruthReplicate,
};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, fmt_sig, parse_field, parse_flag, read_csv_rows, write_json, FULL_PRECISION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
    pub split: SplitSizes,
    pub assignment_provenance: Provenance,
    pub logged_provenance: Provenance,
    pub prior_weight: Option<f64>,
    /// Free-form description of where the base tables came from.
    pub source: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub mu_t: Array2<f64>,
    pub mu_c: Array2<f64>,
    /// Propensity that generated the assignments.
    pub propensity: PropensityModel,
    /// Original propensity of the base tables, kept so the bundle can be
    /// regenerated under other settings.
    pub base_propensity: PropensityModel,
    pub truth: Vec<TruthReplicate>,
    pub observed: Vec<ObservedReplicate>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub meta: BundleMeta,
}

impl DataBundle {
    /// Samples every replicate of `cfg`'s split from `base`.
    ///
    /// With `cfg.xi > 0` the logged propensity is misspecified; assignments
    /// are always drawn from the generating propensity.
    pub fn generate(base: &BaseTables, cfg: &GenConfig, source: &str) -> Result<Self> {
        cfg.validate()?;
        let assignment = assignment_propensity(base, cfg)?;
        let logged = if cfg.xi > 0.0 {
            misspecify_propensity(&assignment, cfg.xi)?
        } else {
            assignment.clone()
        };
        let split = cfg.split();
        let (truth, observed) = sample_replicates(
            &base.mu_t,
            &base.mu_c,
            &assignment,
            &logged,
            split.total(),
            cfg.seed,
            0,
        )?;
        let (n_users, n_items) = base.mu_t.dim();
        Ok(Self {
            mu_t: base.mu_t.clone(),
            mu_c: base.mu_c.clone(),
            truth,
            observed,
            user_ids: (0..n_users).map(|u| u.to_string()).collect(),
            item_ids: (0..n_items).map(|i| i.to_string()).collect(),
            meta: BundleMeta {
                n_users,
                n_items,
                seed: cfg.seed,
                split,
                assignment_provenance: assignment.provenance.clone(),
                logged_provenance: logged.provenance,
                prior_weight: base.prior_weight,
                source: source.to_string(),
                config: serde_json::to_value(cfg)?,
            },
            propensity: assignment,
            base_propensity: base.propensity.clone(),
        })
    }

    /// Base tables this bundle was sampled from.
    pub fn base_tables(&self) -> BaseTables {
        BaseTables {
            mu_t: self.mu_t.clone(),
            mu_c: self.mu_c.clone(),
            propensity: self.base_propensity.clone(),
            prior_weight: self.meta.prior_weight,
        }
    }

    /// Generation config recorded in the bundle metadata.
    pub fn gen_config(&self) -> Result<GenConfig> {
        Ok(serde_json::from_value(self.meta.config.clone())?)
    }

    pub fn n_users(&self) -> usize {
        self.meta.n_users
    }

    pub fn n_items(&self) -> usize {
        self.meta.n_items
    }

    pub fn split(&self) -> SplitSizes {
        self.meta.split
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        let s = self.meta.split;
        [
            0..s.n_train,
            s.n_train..s.n_train + s.n_validation,
            s.n_train + s.n_validation..s.total(),
        ]
    }

    pub fn train_observed(&self) -> &[ObservedReplicate] {
        &self.observed[self.ranges()[0].clone()]
    }

    pub fn validation_observed(&self) -> &[ObservedReplicate] {
        &self.observed[self.ranges()[1].clone()]
    }

    pub fn validation_truth(&self) -> &[TruthReplicate] {
        &self.truth[self.ranges()[1].clone()]
    }

    pub fn test_observed(&self) -> &[ObservedReplicate] {
        &self.observed[self.ranges()[2].clone()]
    }

    pub fn test_truth(&self) -> &[TruthReplicate] {
        &self.truth[self.ranges()[2].clone()]
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        GroundTruth::new(self.mu_t.clone(), self.mu_c.clone(), self.truth.clone())
    }

    pub fn observed_dataset(&self) -> Result<ObservedDataset> {
        ObservedDataset::new(self.n_users(), self.n_items(), self.observed.clone())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let f = |x: f64| fmt_sig(x, FULL_PRECISION);

        let mut w = csv::Writer::from_path(dir.join("mu.csv"))?;
        w.write_record(["user", "item", "mu_t", "mu_c"])?;
        for ((u, i), &t) in self.mu_t.indexed_iter() {
            w.write_record([u.to_string(), i.to_string(), f(t), f(self.mu_c[[u, i]])])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("mu.csv"), e))?;

        write_propensity(&dir.join("propensity.csv"), &self.propensity.p)?;
        write_propensity(&dir.join("propensity_base.csv"), &self.base_propensity.p)?;

        for (k, truth) in self.truth.iter().enumerate() {
            let path = dir.join(format!("truth_r{k}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["user", "item", "y_t", "y_c"])?;
            for (u, o) in truth.iter() {
                w.write_record([
                    u.to_string(),
                    o.item.to_string(),
                    (o.y_t as u8).to_string(),
                    (o.y_c as u8).to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        for (k, obs) in self.observed.iter().enumerate() {
            let path = dir.join(format!("obs_r{k}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["user", "item", "y", "z", "p_logged"])?;
            for r in obs.records() {
                w.write_record([
                    r.user.to_string(),
                    r.item.to_string(),
                    (r.y as u8).to_string(),
                    (r.z as u8).to_string(),
                    f(r.p),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        for (name, ids) in [("users.csv", &self.user_ids), ("items.csv", &self.item_ids)] {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["index", "id"])?;
            for (k, id) in ids.iter().enumerate() {
                w.write_record([k.to_string(), id.clone()])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        write_json(&dir.join("meta.json"), &self.meta)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: BundleMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        let (n_users, n_items) = (meta.n_users, meta.n_items);

        let path = dir.join("mu.csv");
        let rows = read_csv_rows(&path)?;
        let c = [
            rows.column("user", &path)?,
            rows.column("item", &path)?,
            rows.column("mu_t", &path)?,
            rows.column("mu_c", &path)?,
        ];
        let mut mu_t = Array2::zeros((n_users, n_items));
        let mut mu_c = Array2::zeros((n_users, n_items));
        for rec in &rows.records {
            let (u, i) = pair(rec, c[0], c[1], &path, n_users, n_items)?;
            mu_t[[u, i]] = parse_field(&rec[c[2]], &path, "mu_t")?;
            mu_c[[u, i]] = parse_field(&rec[c[3]], &path, "mu_c")?;
        }

        let propensity = PropensityModel::new(
            read_propensity(&dir.join("propensity.csv"), n_users, n_items)?,
            meta.assignment_provenance.clone(),
        )?;
        let base_propensity = PropensityModel::new(
            read_propensity(&dir.join("propensity_base.csv"), n_users, n_items)?,
            Provenance::Original,
        )?;

        let mut truth = Vec::with_capacity(meta.split.total());
        let mut observed = Vec::with_capacity(meta.split.total());
        for k in 0..meta.split.total() {
            let path = dir.join(format!("truth_r{k}.csv"));
            let rows = read_csv_rows(&path)?;
            let c = [
                rows.column("user", &path)?,
                rows.column("item", &path)?,
                rows.column("y_t", &path)?,
                rows.column("y_c", &path)?,
            ];
            let mut t = TruthReplicate::new(n_users, n_items);
            for rec in &rows.records {
                let (u, i) = pair(rec, c[0], c[1], &path, n_users, n_items)?;
                t.insert(
                    u,
                    PotentialOutcome {
                        item: i as u32,
                        y_t: parse_flag(&rec[c[2]], &path, "y_t")?,
                        y_c: parse_flag(&rec[c[3]], &path, "y_c")?,
                    },
                )?;
            }
            truth.push(t);

            let path = dir.join(format!("obs_r{k}.csv"));
            let rows = read_csv_rows(&path)?;
            let c = [
                rows.column("user", &path)?,
                rows.column("item", &path)?,
                rows.column("y", &path)?,
                rows.column("z", &path)?,
                rows.column("p_logged", &path)?,
            ];
            let mut records = Vec::with_capacity(rows.records.len());
            for rec in &rows.records {
                let (u, i) = pair(rec, c[0], c[1], &path, n_users, n_items)?;
                records.push(ObservedRecord {
                    user: u as u32,
                    item: i as u32,
                    y: parse_flag(&rec[c[2]], &path, "y")?,
                    z: parse_flag(&rec[c[3]], &path, "z")?,
                    p: parse_field(&rec[c[4]], &path, "p_logged")?,
                });
            }
            observed.push(ObservedReplicate::new(n_users, n_items, records)?);
        }

        let read_ids = |name: &str, n: usize| -> Result<Vec<String>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok((0..n).map(|k| k.to_string()).collect());
            }
            let rows = read_csv_rows(&path)?;
            let id_col = rows.column("id", &path)?;
            let ids: Vec<String> = rows.records.iter().map(|r| r[id_col].to_string()).collect();
            if ids.len() != n {
                return Err(Error::Structural {
                    dimension: "id map",
                    expected: n,
                    found: ids.len(),
                });
            }
            Ok(ids)
        };

        Ok(Self {
            mu_t,
            mu_c,
            propensity,
            base_propensity,
            truth,
            observed,
            user_ids: read_ids("users.csv", n_users)?,
            item_ids: read_ids("items.csv", n_items)?,
            meta,
        })
    }
}

fn write_propensity(path: &Path, p: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user", "item", "p"])?;
    for ((u, i), &v) in p.indexed_iter() {
        w.write_record([u.to_string(), i.to_string(), fmt_sig(v, FULL_PRECISION)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_propensity(path: &Path, n_users: usize, n_items: usize) -> Result<Array2<f64>> {
    let rows = read_csv_rows(path)?;
    let c = [rows.column("user", path)?, rows.column("item", path)?, rows.column("p", path)?];
    let mut p = Array2::zeros((n_users, n_items));
    for rec in &rows.records {
        let (u, i) = pair(rec, c[0], c[1], path, n_users, n_items)?;
        p[[u, i]] = parse_field(&rec[c[2]], path, "p")?;
    }
    Ok(p)
}

fn pair(
    rec: &csv::StringRecord,
    user_col: usize,
    item_col: usize,
    path: &Path,
    n_users: usize,
    n_items: usize,
) -> Result<(usize, usize)> {
    let u: usize = parse_field(&rec[user_col], path, "user")?;
    let i: usize = parse_field(&rec[item_col], path, "item")?;
    if u >= n_users || i >= n_items {
        return Err(Error::Format(format!(
            "{}: pair ({u}, {i}) out of range",
            path.display()
        )));
    }
    Ok((u, i))
}
