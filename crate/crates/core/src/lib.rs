pub mod cli;
pub mod container;
pub mod corpus;
pub mod error;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
