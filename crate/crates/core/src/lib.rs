//! Face presentation attack detection with a flow-augmented teacher and an
//! RGB-only student trained by knowledge distillation.

pub mod bench;
pub mod config;
pub mod distill;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod flow;
pub mod gradcam;
pub mod image;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod seed;

pub use error::{Error, Result};
pub use exec::Exec;
