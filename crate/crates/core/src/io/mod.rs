//! Run configuration, history CSV, design snapshots and geometry export.

pub mod config;
pub mod export;
pub mod history;

pub use config::{parse_config, parse_config_str, GradientCheckConfig, OutputConfig, RunConfig, OUTPUT_ROOT_ENV};
pub use export::{
    contour_segments, read_design, snapshot_path, write_contour, write_design, write_unstructured_grid,
    ExportFormat,
};
pub use history::{read_history, write_history, HISTORY_HEADER};
