//! Meta-learners over the tree base learners: binary relevance, classifier
//! chains and joint multi-label forests, their regression counterparts, and
//! the K-fold joint search that selects hyperparameters, thresholds and
//! chain orders.

mod model;
mod search;
mod space;

pub use model::{predict_br, predict_cc, predict_mct, predict_regression, ChainModel, ModelKind};
pub use search::{
    cv_select, fit_br, fit_cc, fit_mct, fit_meta, fit_mor, fit_mrt, fit_rc, CvRow, CvTable,
    FitOutcome,
};
pub use space::{permutations, OrderSpace, SearchSpace, ThresholdGrid};
