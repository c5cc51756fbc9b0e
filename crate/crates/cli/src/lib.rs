//! Configuration-driven experiment runner: compares filters under nominal
//! and least favorable dynamics and writes CSV tables with SVG charts.

pub mod config;
pub mod experiments;
pub mod svg;
pub mod table;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, Artifact, ConfigError, ExperimentConfig, FilterSpec};
pub use experiments::{Figure, RunError};
pub use table::Table;

/// The simulation-study model, also shipped as `examples/fig7_model.json`.
pub const BUNDLED_CONFIG: &str = include_str!("../examples/fig7_model.json");
pub const BUNDLED_NAME: &str = "fig7_model";

pub fn bundled_config() -> ExperimentConfig {
    parse_config(BUNDLED_CONFIG, BUNDLED_NAME).expect("bundled configuration is valid")
}

/// Writes `table` as `<experiment>_<figure>.csv` into `out_dir`, plus an
/// SVG chart when requested and the table is a time series. Returns the
/// paths written.
pub fn write_table(cfg: &ExperimentConfig, table: &Table, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let stem = format!("{}_{}", cfg.name, table.figure);
    let mut written = Vec::new();
    if cfg.wants(Artifact::Csv) {
        let path = out_dir.join(format!("{stem}.csv"));
        fs::write(&path, table.to_csv())?;
        written.push(path);
    }
    if cfg.wants(Artifact::Svg) && table.is_time_series() {
        let path = out_dir.join(format!("{stem}.svg"));
        fs::write(&path, svg::render(table))?;
        written.push(path);
    }
    Ok(written)
}
