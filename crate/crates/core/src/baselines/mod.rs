//! Comparison methods: random hashing, inner-product vectors, order
//! embeddings and product-quantized boxes.

pub mod bin;
pub mod order;
pub mod pq;
pub mod vec;

pub use bin::{bin_estimate, bin_sketch, BinEstimate, BinSketch, Set2Bin};
pub use order::{train_order, OrderModel};
pub use pq::{train_pq, PqCodes, PqConfig, PqModel};
pub use vec::{train_vec, VecConfig, VecModel};
