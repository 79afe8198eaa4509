//! Diversity-aware list-wise news recommendation.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`] / [`graph`] / [`optim`] / [`gradcheck`]: a minimal dense-tensor
//!   engine with reverse-mode autodiff and Adam.
//! - [`text`]: tokenization, word-embedding loading, and the fixed semantic
//!   similarity matrix used both for diversity training and evaluation.
//! - [`model`]: news/user encoders, the permutation candidate-list encoder,
//!   and the inner-product click predictor.
//! - [`training`]: list-wise contrastive loss, diversity regularization, the
//!   point-wise and pair-wise alternatives, and the epoch loop.
//! - [`rerank`]: MMR and fast greedy DPP baselines.
//! - [`eval`]: AUC/MRR/nDCG plus intra-list distance metrics and the
//!   accuracy-diversity tradeoff sweep.
//! - [`data`] / [`config`] / [`pipeline`]: dataset ingestion, synthetic data
//!   generation, configuration, and the end-to-end entry points behind the
//!   `listrec` CLI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rerank;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
