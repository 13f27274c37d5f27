//! Elastic shape distances for curves and low-dimensional embeddings built
//! on top of them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classify;
pub mod curve;
pub mod datasets;
pub mod distmat;
pub mod elastic;
pub mod embedding;
pub mod error;
pub mod numeric;
pub mod plot;
pub mod seed;
pub mod tsne;
pub mod umap;

pub use curve::{Curve, Srvf};
pub use datasets::ShapeDataset;
pub use distmat::{DistanceMatrix, MetricTag};
pub use embedding::{Embedding, Reducer};
pub use error::{Error, Result};
