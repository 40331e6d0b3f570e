//! Minimum Bayes Risk reranking of N-best translation candidates, with the
//! surrounding corpus tooling: heuristic filtering, lexical metrics, external
//! scorer protocol, bootstrap significance tests and an iterative
//! self-training loop driven by external translator/trainer commands.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod mbr;
pub mod metrics;
pub mod pipeline;
pub mod scorer;
pub mod significance;

pub use error::{Error, Result};
