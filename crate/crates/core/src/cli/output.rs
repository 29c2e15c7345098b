//! Atomic CSV / JSON writers.
//!
//! Files are written to a temporary sibling and renamed into place, so a
//! reader never sees a half-written artifact.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{Error, Result};

/// Collects the artifacts written during one run.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn atomic<F: FnOnce(&mut NamedTempFile) -> Result<()>>(
        &mut self,
        name: &str,
        fill: F,
    ) -> Result<()> {
        let mut tmp = NamedTempFile::new_in(&self.root)?;
        fill(&mut tmp)?;
        tmp.as_file_mut().flush()?;
        tmp.persist(self.root.join(name))
            .map_err(|e| Error::Io(e.error))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.atomic(name, |f| {
            serde_json::to_writer_pretty(&mut *f, value)?;
            writeln!(f)?;
            Ok(())
        })
    }

    /// RFC 4180 CSV; floats carry 17 significant digits.
    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
        self.atomic(name, |f| {
            let mut w = csv::Writer::from_writer(&mut *f);
            w.write_record(header)?;
            for row in rows {
                if row.len() != header.len() {
                    return Err(Error::Structural(format!(
                        "{name}: row of {} values under a header of {}",
                        row.len(),
                        header.len()
                    )));
                }
                w.write_record(row.iter().map(|x| fmt_float(*x)))?;
            }
            w.flush()?;
            Ok(())
        })
    }
}

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column names `prefix_i_j` for a row-major flattened K x K matrix.
pub fn matrix_columns(prefix: &str, k: usize) -> Vec<String> {
    (0..k)
        .flat_map(|i| (0..k).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

/// Row-major flattening of a column-major nalgebra matrix.
pub fn row_major(m: &nalgebra::DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}
