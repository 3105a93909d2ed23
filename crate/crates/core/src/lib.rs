pub mod checkpoint;
pub mod codec;
pub mod commands;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod generator;
pub mod model;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
