//! Multi-label occurrence and multi-output frequency modeling for
//! entity-level cyber incident data.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] holds the dense containers (features, labels, counts, splits, folds).
//! * [`ingest`] turns raw incident records and an entity feature table into a
//!   firm-year modeling dataset.
//! * [`trees`] provides the tree base learners: CART, random forests and
//!   gradient-boosted trees, single- and multi-output.
//! * [`meta`] wraps base learners into binary relevance, classifier chains,
//!   multi-label trees and their regression mirrors, with joint
//!   cross-validated search over hyperparameters, thresholds and label orders.
//! * [`metrics`] implements the multi-label and multi-output metric suites.
//! * [`importance`] computes impurity, permutation and tree SHAP importances
//!   and aggregates them across models.

pub mod data;
pub mod error;
pub mod importance;
pub mod ingest;
pub mod meta;
pub mod metrics;
pub mod rng;
pub mod trees;

pub use error::{Error, Result};
