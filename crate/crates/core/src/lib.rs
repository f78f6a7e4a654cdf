//! Unbiased estimation and learning of ranking metrics defined on the causal
//! effect of recommendation.
//!
//! The pipeline has four stages:
//!
//! * [`datagen`] builds semi-synthetic ground truth (purchase probabilities with
//!   and without recommendation), recommendation propensities, and i.i.d.
//!   replicates of potential outcomes and assignments;
//! * [`metrics`] evaluates causal ranking metrics (CAR, CP@k, CDCG) against the
//!   realized effects, and estimates them from logged data with naive or
//!   (capped) inverse-propensity weighting;
//! * [`train`] fits matrix-factorization rankers by pairwise SGD on the capped
//!   IPS objective (DLCE) and on its ablations and baselines;
//! * [`exp`] runs tuned comparisons and parameter sweeps and writes reports.

pub mod bundle;
pub mod config;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod exp;
pub mod io;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod train;

pub use bundle::DataBundle;
pub use config::RunConfig;
pub use domain::{
    validate_dataset, GroundTruth, InteractionLog, ObservedDataset, ObservedRecord,
    ObservedReplicate, PotentialOutcome, PropensityModel, Provenance, RankedList, TruthReplicate,
};
pub use error::{Error, Result};
pub use metrics::{CappingParams, Estimator, MetricKind};
pub use models::{InitConfig, MFModel};
pub use exp::ExperimentPlan;
pub use train::{Method, TrainConfig};
