//! Tree base learners: CART, random forests and gradient-boosted trees.
//!
//! Classification targets are 0/1 columns and leaves carry the fraction of
//! positives per output, so a leaf's class distribution for output `o` is
//! `(1 - value[o], value[o])`. Regression leaves carry per-output means.

mod forest;
mod gbt;
mod impurity;
mod learner;
mod params;
mod tree;

pub use forest::{fit_forest, ForestModel};
pub use gbt::{fit_gbt, GbtModel, Loss};
pub use impurity::impurity;
pub use learner::{BaseFamily, Learner};
pub use params::{Criterion, Task, TreeParams};
pub use tree::{fit_tree, DecisionTree, Node, Split};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the JSON model dump layout.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    model: T,
}

/// Serialises a model as a versioned JSON document. Floats are written in
/// shortest round-trip form, so thresholds and leaf values reload bit-exactly.
pub fn to_json<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format: kind.to_string(),
        version: MODEL_FORMAT_VERSION,
        model,
    })?)
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format != kind {
        return Err(Error::invalid(format!(
            "expected a {kind:?} document, found {:?}",
            env.format
        )));
    }
    if env.version != MODEL_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported model format version {}",
            env.version
        )));
    }
    Ok(env.model)
}
