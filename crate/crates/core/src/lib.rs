//! Text-guided image classification at desk scale.
//!
//! The pipeline turns tabular exam metadata into short synthetic reports,
//! encodes reports and images into token matrices of a shared width, fuses
//! the two streams with co-attention (or one of the baseline aggregators),
//! and classifies the max-pooled result. Everything runs on a small
//! reverse-mode autodiff engine in [`autodiff`].

pub mod autodiff;
pub mod compare;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod verify;

pub use autodiff::{grad_check, Graph, Var};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
