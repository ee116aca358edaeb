pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod form;
pub mod geometry;
pub mod lhs;
pub mod overall;
pub mod rank_svm;
pub mod sampler;
pub mod seeds;
pub mod simulation;
pub mod survey;

pub use error::{Error, Result};
