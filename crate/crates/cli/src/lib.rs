//! Data ingestion, file formats and the `hali` command-line drivers.

pub mod commands;
pub mod data;
pub mod error;
pub mod grid;
pub mod manifest;
pub mod report;

pub use commands::{run_command, run_command_io};
pub use data::{load_idx, semisup_split, DatasetHandle};
pub use error::{CliError, IdxError, Result};
pub use grid::{read_pnm, write_image_grid, Pnm};
pub use manifest::RunManifest;
