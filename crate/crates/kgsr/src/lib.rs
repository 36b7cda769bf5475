//! File formats, checkpoints, the HTTP chat client and the pipeline stages
//! behind the `kgsr` binary.

pub mod chat;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod pipeline;
pub mod planted;
pub mod report;

pub use error::{Error, Result};
