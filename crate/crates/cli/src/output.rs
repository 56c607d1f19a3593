//! The run's output directory. Every artifact is a plain file name inside it.

use std::fs;
use std::path::{Path, PathBuf};

use onbflow_core::training::MetricsLog;

use crate::error::CliError;
use crate::plot::Chart;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        debug_assert!(!name.contains('/') && !name.contains(".."), "artifact names stay in the run directory");
        self.root.join(name)
    }

    pub fn text(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    pub fn log(&self, name: &str, log: &MetricsLog) -> Result<(), CliError> {
        log.write_csv(&self.path(name)).map_err(CliError::from)
    }

    pub fn chart(&self, name: &str, chart: &Chart) -> Result<(), CliError> {
        self.text(name, &chart.render())
    }
}
