//! Data-pipeline and training-plan toolkit for small-scale language model
//! pretraining.

pub mod corpus;
pub mod curriculum;
pub mod decontam;
pub mod dedup;
pub mod error;
pub mod filter;
pub mod initplan;
pub mod packing;
pub mod pipeline;
pub mod schedule;
pub mod stability;
pub mod tokenizer;

pub use error::{Error, Result};
