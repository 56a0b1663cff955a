//! Compressed set representations for fast similarity computation.
//!
//! Sets over a common entity universe are embedded as axis-aligned boxes
//! (`Set2Box`) and optionally compressed with learned box codebooks
//! (`Set2Box+`). Similarities between two sets are then estimated from box
//! volumes in time independent of the set sizes.

pub mod baselines;
pub mod boxes;
pub mod corpus;
pub mod cost;
pub mod diff;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod quant;
pub mod train;

pub use boxes::{Hyperbox, Volume};
pub use corpus::{Measure, SetCorpus, Split, Triple};
pub use cost::{encoding_cost, CostParams, EncodingCost, Method};
pub use error::{Error, Result};
pub use model::EntityEmbeddings;
pub use train::{TrainConfig, TrainLog};
