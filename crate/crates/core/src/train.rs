//! Pairwise SGD trainers for matrix-factorization rankers.
//!
//! Every trainer samples a positive `(u, i)` uniformly from the logged
//! positives `D = {(u, i) | Y_ui = 1}` of the training replicates and a
//! second item `j`, and takes one SGD step on a weighted surrogate of the
//! rank loss in `s_uij = s_ui - s_uj`:
//!
//! | method | pairs used      | weight (treated / control)                        | `j` drawn from      |
//! |--------|-----------------|---------------------------------------------------|---------------------|
//! | DLCE   | all of `D`      | `1/max(P, chi_t)` / `1/max(1-P, chi_c)`           | all items `!= i`    |
//! | BLCE   | all of `D`      | `UI/sum Z` / `UI/sum (1-Z)`                       | all items `!= i`    |
//! | DLTO   | treated only    | `1/max(P, chi_t)`                                 | all items `!= i`    |
//! | BPR    | all of `D`      | `1`, always as a treated positive                 | items not bought    |
//!
//! Treated positives are pushed up the ranking and control positives down.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ObservedDataset, ObservedReplicate, RankedList};
use crate::error::{Error, Result};
use crate::metrics::CappingParams;
use crate::models::{init_model, rank_scores, InitConfig, MFModel};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Dlce,
    Blce,
    Dlto,
    Bpr,
    Pop,
    Random,
}

impl Method {
    /// Whether the method fits an MF model (as opposed to a fixed ranker).
    pub fn is_trained(self) -> bool {
        !matches!(self, Method::Pop | Method::Random)
    }

    /// Whether the method reads logged propensities (and so has a cap to tune).
    pub fn uses_propensity(self) -> bool {
        matches!(self, Method::Dlce | Method::Dlto)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dlce => "DLCE",
            Method::Blce => "BLCE",
            Method::Dlto => "DLTO",
            Method::Bpr => "BPR",
            Method::Pop => "Pop",
            Method::Random => "Random",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DLCE" => Ok(Method::Dlce),
            "BLCE" => Ok(Method::Blce),
            "DLTO" => Ok(Method::Dlto),
            "BPR" => Ok(Method::Bpr),
            "POP" => Ok(Method::Pop),
            "RANDOM" => Ok(Method::Random),
            _ => Err(Error::param(format!("unknown method {s:?}"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

/// Surrogate for the pairwise rank indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossKind {
    /// Logistic upper bound.
    #[default]
    Ub,
    /// Sigmoid approximation.
    Ap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub gamma: f64,
    pub omega: f64,
    pub capping: CappingParams,
    pub epochs: usize,
    pub loss: LossKind,
    pub method: Method,
    pub dim: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Use the upper-bound exponents exactly as printed in the DLCE pseudo
    /// code listing (treated `+omega`, control `-omega`). This ranks treated
    /// positives low and exists only for comparison.
    pub algorithm1_literal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            gamma: 0.001,
            omega: 1.0,
            capping: CappingParams::NONE,
            epochs: 50,
            loss: LossKind::Ub,
            method: Method::Dlce,
            dim: 200,
            init_scale: 0.1,
            seed: 0,
            algorithm1_literal: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param(format!("learning rate must be > 0, got {}", self.eta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(format!("regularization must be >= 0, got {}", self.gamma)));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::param(format!("omega must be > 0, got {}", self.omega)));
        }
        CappingParams::new(self.capping.chi_t, self.capping.chi_c)?;
        if !self.method.is_trained() {
            return Err(Error::param(format!("{} is not a trained method", self.method)));
        }
        Ok(())
    }

    pub fn init(&self) -> InitConfig {
        InitConfig {
            dim: self.dim,
            scale: self.init_scale,
            seed: self.seed,
        }
    }
}

/// One `(u, i, j)` draw with the logged assignment and propensity of `(u, i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletSample {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
    pub treated: bool,
    pub propensity: f64,
}

/// A triplet with the weight its method assigns to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTriplet {
    pub sample: TripletSample,
    pub weight: f64,
}

/// Capped inverse-propensity weight of a triplet.
pub fn ips_weight(sample: &TripletSample, capping: CappingParams) -> f64 {
    if sample.treated {
        1.0 / capping.treated_denominator(sample.propensity)
    } else {
        1.0 / capping.control_denominator(sample.propensity)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss value and its derivative in `s_uij`.
fn surrogate(treated: bool, weight: f64, s: f64, cfg: &TrainConfig) -> (f64, f64) {
    let w = cfg.omega;
    match cfg.loss {
        LossKind::Ub => {
            // treated: w log(1 + e^{-omega s}); control: w log(1 + e^{omega s})
            let sign = if treated != cfg.algorithm1_literal { -1.0 } else { 1.0 };
            let loss = weight * softplus(sign * w * s);
            let slope = weight * sign * w * sigmoid(sign * w * s);
            (loss, slope)
        }
        LossKind::Ap => {
            // +-weight * sigmoid(-omega s)
            let sign = if treated { 1.0 } else { -1.0 };
            let sig = sigmoid(-w * s);
            (sign * weight * sig, -sign * weight * w * sig * (1.0 - sig))
        }
    }
}

fn checked_diff(model: &MFModel, sample: &TripletSample) -> Result<f64> {
    let s = model.score_diff(sample.user, sample.pos_item, sample.neg_item)?;
    if !s.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite score difference for ({}, {}, {})",
            sample.user, sample.pos_item, sample.neg_item
        )));
    }
    Ok(s)
}

/// Upper-bound loss of a triplet under capped IPS weighting.
pub fn triplet_loss_ub(sample: &TripletSample, model: &MFModel, cfg: &TrainConfig) -> Result<f64> {
    let s = checked_diff(model, sample)?;
    let cfg = TrainConfig { loss: LossKind::Ub, ..cfg.clone() };
    Ok(surrogate(sample.treated, ips_weight(sample, cfg.capping), s, &cfg).0)
}

/// Sigmoid-approximation loss of a triplet under capped IPS weighting.
pub fn triplet_loss_ap(sample: &TripletSample, model: &MFModel, cfg: &TrainConfig) -> Result<f64> {
    let s = checked_diff(model, sample)?;
    let cfg = TrainConfig { loss: LossKind::Ap, ..cfg.clone() };
    Ok(surrogate(sample.treated, ips_weight(sample, cfg.capping), s, &cfg).0)
}

/// Loss of a triplet at an explicit weight, for the configured surrogate.
pub fn weighted_loss(triplet: &WeightedTriplet, model: &MFModel, cfg: &TrainConfig) -> Result<f64> {
    let s = checked_diff(model, &triplet.sample)?;
    Ok(surrogate(triplet.sample.treated, triplet.weight, s, cfg).0)
}

/// Analytic gradient of [`weighted_loss`] with respect to `(p_u, q_i, q_j)`,
/// excluding regularization.
pub fn loss_gradient(
    triplet: &WeightedTriplet,
    model: &MFModel,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let t = &triplet.sample;
    let s = checked_diff(model, t)?;
    let (_, slope) = surrogate(t.treated, triplet.weight, s, cfg);
    let pu = model.user_factors.row(t.user);
    let qi = model.item_factors.row(t.pos_item);
    let qj = model.item_factors.row(t.neg_item);
    Ok((
        qi.iter().zip(qj.iter()).map(|(a, b)| slope * (a - b)).collect(),
        pu.iter().map(|p| slope * p).collect(),
        pu.iter().map(|p| -slope * p).collect(),
    ))
}

/// `theta <- theta - eta (dloss/dtheta + gamma theta)` on `p_u`, `q_i`, `q_j`.
/// Returns the loss before the step; the model is untouched on error.
pub fn sgd_step(model: &mut MFModel, triplet: &WeightedTriplet, cfg: &TrainConfig) -> Result<f64> {
    let t = &triplet.sample;
    if t.pos_item == t.neg_item {
        return Err(Error::param(format!("triplet ({}, {}, {}) repeats an item", t.user, t.pos_item, t.neg_item)));
    }
    let s = checked_diff(model, t)?;
    let (loss, slope) = surrogate(t.treated, triplet.weight, s, cfg);
    let (eta, gamma) = (cfg.eta, cfg.gamma);
    let dim = model.dim();
    let pu = model.user_factors.row(t.user).to_vec();
    let qi = model.item_factors.row(t.pos_item).to_vec();
    let qj = model.item_factors.row(t.neg_item).to_vec();
    let mut new_pu = vec![0.0; dim];
    let mut new_qi = vec![0.0; dim];
    let mut new_qj = vec![0.0; dim];
    for k in 0..dim {
        new_pu[k] = pu[k] - eta * (slope * (qi[k] - qj[k]) + gamma * pu[k]);
        new_qi[k] = qi[k] - eta * (slope * pu[k] + gamma * qi[k]);
        new_qj[k] = qj[k] - eta * (-slope * pu[k] + gamma * qj[k]);
    }
    if new_pu.iter().chain(&new_qi).chain(&new_qj).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite update at triplet ({}, {}, {}) with weight {}",
            t.user, t.pos_item, t.neg_item, triplet.weight
        )));
    }
    model.user_factors.row_mut(t.user).assign(&ndarray::ArrayView1::from(&new_pu));
    model.item_factors.row_mut(t.pos_item).assign(&ndarray::ArrayView1::from(&new_qi));
    model.item_factors.row_mut(t.neg_item).assign(&ndarray::ArrayView1::from(&new_qj));
    Ok(loss)
}

#[derive(Debug, Clone, Copy)]
struct Positive {
    user: u32,
    item: u32,
    treated: bool,
    propensity: f64,
}

enum Weighting {
    Ips(CappingParams),
    Naive { treated: f64, control: f64 },
    Unit,
}

/// Draws weighted triplets for one method from the training replicates.
///
/// Each call to [`TripletSampler::draw`] consumes one `(u, i)` draw; methods
/// that ignore a drawn pair (DLTO on control positives) return `None` after
/// consuming the same random numbers DLCE would.
pub struct TripletSampler {
    positives: Vec<Positive>,
    n_items: usize,
    method: Method,
    weighting: Weighting,
    purchased: Vec<HashSet<u32>>,
    rng: ChaCha8Rng,
}

impl TripletSampler {
    pub fn new(observed: &[ObservedReplicate], cfg: &TrainConfig, n_users: usize, n_items: usize) -> Result<Self> {
        for r in observed {
            if r.n_users() != n_users || r.n_items() != n_items {
                return Err(Error::Structural {
                    dimension: "training replicate",
                    expected: n_users * n_items,
                    found: r.n_users() * r.n_items(),
                });
            }
        }
        if n_items < 2 {
            return Err(Error::DegenerateInput("pairwise training needs at least 2 items".into()));
        }
        let positives: Vec<Positive> = observed
            .iter()
            .flat_map(|r| r.positives())
            .map(|r| Positive {
                user: r.user,
                item: r.item,
                treated: r.z,
                propensity: r.p,
            })
            .collect();
        if positives.is_empty() {
            return Err(Error::DegenerateInput("no positive interactions to train on".into()));
        }
        let weighting = match cfg.method {
            Method::Dlce => Weighting::Ips(cfg.capping),
            Method::Dlto => {
                if !positives.iter().any(|p| p.treated) {
                    return Err(Error::DegenerateInput("DLTO needs treated positives".into()));
                }
                Weighting::Ips(cfg.capping)
            }
            Method::Blce => {
                let treated: usize = observed.iter().map(|r| r.assignment_totals().0).sum();
                let pairs = (observed.len() * n_users * n_items) as f64;
                let control = pairs - treated as f64;
                if treated == 0 || control == 0.0 {
                    return Err(Error::DegenerateAssignment(format!(
                        "{treated} treated pairs out of {pairs}"
                    )));
                }
                Weighting::Naive {
                    treated: pairs / treated as f64,
                    control: pairs / control,
                }
            }
            Method::Bpr => Weighting::Unit,
            Method::Pop | Method::Random => {
                return Err(Error::param(format!("{} is not a trained method", cfg.method)))
            }
        };
        let mut purchased = Vec::new();
        if cfg.method == Method::Bpr {
            purchased = vec![HashSet::new(); n_users];
            for p in &positives {
                purchased[p.user as usize].insert(p.item);
            }
        }
        Ok(Self {
            positives,
            n_items,
            method: cfg.method,
            weighting,
            purchased,
            rng: stream_rng(cfg.seed, Stream::Triplets, 0),
        })
    }

    /// Number of draws per epoch, `|D|`.
    pub fn epoch_len(&self) -> usize {
        self.positives.len()
    }

    pub fn draw(&mut self) -> Option<WeightedTriplet> {
        let pos = self.positives[self.rng.random_range(0..self.positives.len())];
        let (user, item) = (pos.user as usize, pos.item as usize);
        let neg_item = if self.method == Method::Bpr {
            let bought = &self.purchased[user];
            if bought.len() >= self.n_items {
                return None;
            }
            loop {
                let j = self.rng.random_range(0..self.n_items);
                if !bought.contains(&(j as u32)) {
                    break j;
                }
            }
        } else {
            let j = self.rng.random_range(0..self.n_items - 1);
            if j >= item {
                j + 1
            } else {
                j
            }
        };
        if self.method == Method::Dlto && !pos.treated {
            return None;
        }
        let sample = TripletSample {
            user,
            pos_item: item,
            neg_item,
            treated: pos.treated || self.method == Method::Bpr,
            propensity: pos.propensity,
        };
        let weight = match self.weighting {
            Weighting::Ips(capping) => ips_weight(&sample, capping),
            Weighting::Naive { treated, control } => {
                if sample.treated {
                    treated
                } else {
                    control
                }
            }
            Weighting::Unit => 1.0,
        };
        Some(WeightedTriplet { sample, weight })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_triplet_loss: f64,
    pub updates: usize,
}

/// Trains `cfg.method` on the training replicates; deterministic given
/// `cfg.seed`.
pub fn train(observed: &[ObservedReplicate], cfg: &TrainConfig, n_users: usize, n_items: usize) -> Result<MFModel> {
    train_with_callback(observed, cfg, n_users, n_items, |_, _| Ok(()))
}

/// [`train`] over an [`ObservedDataset`]'s replicates.
pub fn train_dataset(dataset: &ObservedDataset, cfg: &TrainConfig) -> Result<MFModel> {
    train(&dataset.replicates, cfg, dataset.n_users, dataset.n_items)
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_callback(
    observed: &[ObservedReplicate],
    cfg: &TrainConfig,
    n_users: usize,
    n_items: usize,
    mut on_epoch: impl FnMut(&EpochStats, &MFModel) -> Result<()>,
) -> Result<MFModel> {
    cfg.validate()?;
    let mut sampler = TripletSampler::new(observed, cfg, n_users, n_items)?;
    let mut model = init_model(&cfg.init(), n_users, n_items)?;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut updates = 0;
        for _ in 0..sampler.epoch_len() {
            if let Some(triplet) = sampler.draw() {
                total += sgd_step(&mut model, &triplet, cfg)?;
                updates += 1;
            }
        }
        let stats = EpochStats {
            epoch,
            mean_triplet_loss: if updates > 0 { total / updates as f64 } else { 0.0 },
            updates,
        };
        on_epoch(&stats, &model)?;
    }
    Ok(model)
}

/// Items by total purchases over the training replicates, same for all users.
pub fn popularity_ranker(observed: &[ObservedReplicate], n_users: usize, n_items: usize) -> Result<RankedList> {
    let mut counts = vec![0.0; n_items];
    for r in observed {
        for rec in r.positives() {
            counts[rec.item as usize] += 1.0;
        }
    }
    RankedList::replicated(n_users, rank_scores(&counts))
}

/// Independent uniform permutation per user.
pub fn random_ranker(n_users: usize, n_items: usize, seed: u64) -> Result<RankedList> {
    let mut rng = stream_rng(seed, Stream::RandomRanker, 0);
    let orders = (0..n_users)
        .map(|_| {
            let mut order: Vec<u32> = (0..n_items as u32).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    RankedList::from_orders(n_items, orders)
}
