//! Matrix-factorization scorer `s_ui = p_u . q_i` and deterministic ranking.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::RankedList;
use crate::error::{Error, Result};
use crate::io::{fmt_sig, read_csv_rows, FULL_PRECISION};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub dim: usize,
    pub scale: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MFModel {
    pub user_factors: Array2<f64>,
    pub item_factors: Array2<f64>,
}

impl MFModel {
    pub fn new(user_factors: Array2<f64>, item_factors: Array2<f64>) -> Result<Self> {
        if user_factors.ncols() != item_factors.ncols() {
            return Err(Error::Structural {
                dimension: "latent dimension",
                expected: user_factors.ncols(),
                found: item_factors.ncols(),
            });
        }
        if user_factors.ncols() == 0 {
            return Err(Error::param("latent dimension must be at least 1"));
        }
        if user_factors.iter().chain(item_factors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model has non-finite factors".into()));
        }
        Ok(Self {
            user_factors,
            item_factors,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_factors.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.user_factors.ncols()
    }

    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.n_users() || item >= self.n_items() {
            return Err(Error::param(format!(
                "pair ({user}, {item}) out of range for {}x{} model",
                self.n_users(),
                self.n_items()
            )));
        }
        Ok(self.score_unchecked(user, item))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, user: usize, item: usize) -> f64 {
        dot(self.user_factors.row(user), self.item_factors.row(item))
    }

    /// `s_ui - s_uj`.
    pub fn score_diff(&self, user: usize, i: usize, j: usize) -> Result<f64> {
        Ok(self.score(user, i)? - self.score(user, j)?)
    }

    /// Sorts every user's items by descending score, ties by ascending item.
    pub fn rank_all(&self) -> Result<RankedList> {
        let n_items = self.n_items();
        let mut orders = Vec::with_capacity(self.n_users());
        let mut scores = vec![0.0; n_items];
        for u in 0..self.n_users() {
            for (i, s) in scores.iter_mut().enumerate() {
                *s = self.score_unchecked(u, i);
                if !s.is_finite() {
                    return Err(Error::Numeric(format!("non-finite score at ({u}, {i})")));
                }
            }
            orders.push(rank_scores(&scores));
        }
        RankedList::from_orders(n_items, orders)
    }

    /// Writes `user_factors.csv`, `item_factors.csv` and `model_meta.json`.
    pub fn save_checkpoint(&self, dir: &Path, meta: &serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_factors(&dir.join("user_factors.csv"), &self.user_factors)?;
        write_factors(&dir.join("item_factors.csv"), &self.item_factors)?;
        let meta_path = dir.join("model_meta.json");
        let mut meta = meta.clone();
        if let Some(obj) = meta.as_object_mut() {
            obj.insert("dim".into(), self.dim().into());
            obj.insert("n_users".into(), self.n_users().into());
            obj.insert("n_items".into(), self.n_items().into());
        }
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
            .map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        Self::new(
            read_factors(&dir.join("user_factors.csv"))?,
            read_factors(&dir.join("item_factors.csv"))?,
        )
    }
}

#[inline]
pub(crate) fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Item indices by descending score, ties by ascending index.
pub fn rank_scores(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    order
}

/// Gaussian `N(0, scale^2)` factors from the model-init stream.
pub fn init_model(cfg: &InitConfig, n_users: usize, n_items: usize) -> Result<MFModel> {
    if cfg.dim == 0 {
        return Err(Error::param("latent dimension must be at least 1"));
    }
    if !(cfg.scale > 0.0 && cfg.scale.is_finite()) {
        return Err(Error::param(format!("init scale must be positive, got {}", cfg.scale)));
    }
    let normal = Normal::new(0.0, cfg.scale).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = stream_rng(cfg.seed, Stream::ModelInit, 0);
    let users = Array2::from_shape_simple_fn((n_users, cfg.dim), || normal.sample(&mut rng));
    let items = Array2::from_shape_simple_fn((n_items, cfg.dim), || normal.sample(&mut rng));
    MFModel::new(users, items)
}

fn write_factors(path: &Path, table: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    header.extend((0..table.ncols()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for (idx, row) in table.rows().into_iter().enumerate() {
        let mut rec = vec![idx.to_string()];
        rec.extend(row.iter().map(|v| fmt_sig(*v, FULL_PRECISION)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_factors(path: &Path) -> Result<Array2<f64>> {
    let rows = read_csv_rows(path)?;
    let n_cols = rows.headers.len().saturating_sub(1);
    let mut data = Vec::with_capacity(rows.records.len() * n_cols);
    for (line, rec) in rows.records.iter().enumerate() {
        if rec.len() != n_cols + 1 {
            return Err(Error::Format(format!("{}: row {line} has wrong width", path.display())));
        }
        for field in rec.iter().skip(1) {
            data.push(field.parse::<f64>().map_err(|_| {
                Error::Format(format!("{}: bad float {field:?}", path.display()))
            })?);
        }
    }
    Array2::from_shape_vec((rows.records.len(), n_cols), data)
        .map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn score_examples() {
        let m = MFModel::new(array![[1.0, 2.0]], array![[3.0, -1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(m.score(0, 0).unwrap(), 1.0);
        assert_eq!(m.score(0, 1).unwrap(), 0.0);
        assert_eq!(m.score_diff(0, 0, 1).unwrap(), 1.0);
        assert!(m.score(1, 0).is_err());
        assert!(m.score(0, 2).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_scores(&[0.5, 2.0, 1.0]), vec![1, 2, 0]);
        let zero = MFModel::new(Array2::zeros((2, 3)), Array2::zeros((4, 3))).unwrap();
        let rl = zero.rank_all().unwrap();
        assert_eq!(rl.order(0), &[0, 1, 2, 3]);
        assert_eq!(rl.order(1), &[0, 1, 2, 3]);
    }

    #[test]
    fn non_finite_score_is_reported() {
        let m = MFModel {
            user_factors: array![[f64::MAX], [1.0]],
            item_factors: array![[f64::MAX]],
        };
        match m.rank_all() {
            Err(Error::Numeric(msg)) => assert!(msg.contains("(0, 0)")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = InitConfig { dim: 7, scale: 0.1, seed: 3 };
        let a = init_model(&cfg, 4, 5).unwrap();
        let b = init_model(&cfg, 4, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 7);
        assert_eq!(a.user_factors.dim(), (4, 7));
        assert_eq!(a.item_factors.dim(), (5, 7));
        let c = init_model(&InitConfig { seed: 4, ..cfg }, 4, 5).unwrap();
        assert_ne!(a, c);
        assert!(init_model(&InitConfig { dim: 0, ..cfg }, 1, 1).is_err());
        assert!(init_model(&InitConfig { scale: 0.0, ..cfg }, 1, 1).is_err());
    }

    #[test]
    fn init_mean_is_near_zero() {
        // mean of n = 200 * (U + I) N(0, 0.01) draws; 3 sigma = 3 * 0.1 / sqrt(n)
        let (u, i) = (30, 20);
        let m = init_model(&InitConfig { dim: 200, scale: 0.1, seed: 11 }, u, i).unwrap();
        let n = (200 * (u + i)) as f64;
        let mean = (m.user_factors.sum() + m.item_factors.sum()) / n;
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = init_model(&InitConfig { dim: 3, scale: 0.1, seed: 1 }, 4, 6).unwrap();
        m.save_checkpoint(dir.path(), &serde_json::json!({"trainer": "DLCE"}))
            .unwrap();
        assert_eq!(MFModel::load_checkpoint(dir.path()).unwrap(), m);
    }
}
