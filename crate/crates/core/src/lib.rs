//! Spatio-temporal foundation model for traffic forecasting: data pipeline,
//! model, multi-dataset pre-training and zero-shot evaluation.

pub mod data;
pub mod error;
pub mod evalcli;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
