//! Context-attention video regression with a relational loss.
//!
//! The crate is organized bottom-up: `tensor` is a self-contained f64
//! reverse-mode engine, `encoder` turns frame blocks into clip embeddings,
//! `fusion` attends over neighbouring-clip features and regresses,
//! `losses` and `metrics` hold the objectives and evaluation formulas,
//! `data` generates and samples the synthetic corpus, and `train` drives
//! optimization, cross-validation and the ablation grid.

pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod weights;
