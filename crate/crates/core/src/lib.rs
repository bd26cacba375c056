//! Evaluation and curation of high-content screening embeddings.
//!
//! The crate consumes well-level embeddings and provides:
//!
//! * [`data`]: the embedding table, relationship databases and curation
//!   manifests, with Arrow IPC and CSV readers/writers.
//! * [`normalize`]: standard scaling, control-fitted whitening (TVN),
//!   chromosome-arm centering and the control-origin shift.
//! * [`stats`]: cosine similarity, permutation p-values, Cauchy combination,
//!   two-sample KS/CVM, spherical means and rank correlation.
//! * [`benchmarks`]: perturbation consistency, replicate consistency and
//!   known-relationship recall.
//! * [`probe`]: block-wise linear probes and optimal-block selection.
//! * [`curate`]: the five-step training-set curation pipeline.
//! * [`synth`]: synthetic screens with planted ground truth.
//! * [`report`]: JSON and CSV report writers.

pub mod benchmarks;
pub mod curate;
pub mod data;
pub mod error;
pub mod linalg;
pub mod normalize;
pub mod probe;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
