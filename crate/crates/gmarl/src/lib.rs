//! Datasets, file formats and the experiment runner built on `gmarl-core`.

pub mod config;
pub mod covid;
pub mod dump;
pub mod error;
pub mod experiment;
pub mod movielens;
pub mod plot;
pub mod report;
pub mod source;
pub mod stats;

pub use error::{Error, Result};
