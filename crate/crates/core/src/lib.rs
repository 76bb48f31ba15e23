//! Metric-learning recommender built around a triplet network.
//!
//! A user tower and a single item tower map users and items into a shared
//! latent space. A learned weighted-distance head scores user/item pairs, and
//! the difference of two such distances, squashed by a sigmoid, is trained
//! with binary cross-entropy to say which of two items the user prefers.
//!
//! Layout:
//! - [`numerics`]: dense matrices, layer primitives with hand-written
//!   backward passes, Adam, and a finite-difference gradient checker.
//! - [`model`]: towers, distance head, triplet and two-branch losses,
//!   retrieval.
//! - [`data`]: CSV ingestion, triplet construction, synthetic corpora.
//! - [`train`]: seeded minibatch loop and checkpoint format.
//! - [`eval`]: pairwise accuracy, precision@k, and method comparisons.
//! - [`cli`]: the `triplet-rank` command line.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
