//! ν-ensembles: deep ensembles diversified by fitting random labels on
//! unlabeled data, with calibration metrics and a PAC-Bayes bound.

pub mod data;
pub mod error;
pub mod experiment;
pub mod io_util;
pub mod labeling;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
