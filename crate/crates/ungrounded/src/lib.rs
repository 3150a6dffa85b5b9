//! File formats, configuration, reports and the experiment pipeline built on
//! `ungrounded-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{AppError, AppResult};
