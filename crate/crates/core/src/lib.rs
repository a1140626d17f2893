//! Graph node embedding with differentiable product quantisation.
//!
//! The pipeline: load an attributed graph, learn continuous embeddings under
//! a hop-adaptive triplet margin plus a semi-supervised label margin, jointly
//! quantise each node to M codeword indices over learned codebooks (64 bits
//! per node at the default M = 8, K = 256), and answer similarity queries
//! from pre-computed K x K codeword tables without touching floats or the
//! decoder.
//!
//! Modules:
//! - [`graph`]: ingestion, truncated BFS hop distances, triplet/pair sampling;
//! - [`autodiff`]: the reverse-mode tape the networks train on;
//! - [`model`]: embedding encoder and the two continuous losses;
//! - [`quant`]: Gumbel-softmax code assignment, codebooks, rank loss;
//! - [`train`]: joint SGD loop, schedules, NQCK checkpoints;
//! - [`codestore`]: packed codes, lookup tables, retrieval, NQCS files;
//! - [`eval`]: link prediction, node classification, path prediction, NDCG;
//! - [`synth`]: seeded stochastic-block-model fixtures;
//! - [`gradcheck`]: finite-difference verification of every operator.

pub mod autodiff;
pub mod checkpoint;
pub mod codestore;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod quant;
pub mod seeds;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
