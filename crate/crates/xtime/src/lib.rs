//! File formats, pipeline driver and command line for the XceptionTime
//! sEMG classifier in `xtime-core`.

mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod dataset_file;
pub mod error;
pub mod metrics;
pub mod verify;

pub use error::{AppError, AppResult};
