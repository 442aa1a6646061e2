pub mod customization;
pub mod data;
pub mod encoders;
pub mod metrics;
pub mod error;
pub mod fusion;
pub mod nn;
pub mod preprocess;
pub mod review;
pub mod siamese;

pub use error::{Error, Result};
