//! Output directory bookkeeping and CSV/JSON writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Version of the CSV column layouts, recorded in every manifest.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const LEARN_COLUMNS: [&str; 6] = ["t", "sup_error", "L_t", "Lprime_t", "min_visits", "max_visits"];
pub const RIPPLE_COLUMNS: [&str; 3] = ["t", "sup_error", "mean_error"];
pub const LEMMA_COLUMNS: [&str; 4] = ["n", "x_n", "oracle_n", "abs_err"];

/// Formats a float so that the text round-trips and never depends on
/// locale or thread count.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// An output directory that remembers every file written into it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Mutex<Vec<String>>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for `name`, recorded as written.
    pub fn claim(&self, name: &str) -> PathBuf {
        self.written.lock().expect("poisoned file list").push(name.to_string());
        self.root.join(name)
    }

    /// Files written so far, sorted.
    pub fn files(&self) -> Vec<String> {
        let mut v = self.written.lock().expect("poisoned file list").clone();
        v.sort();
        v.dedup();
        v
    }

    pub fn write_csv<R, I>(&self, name: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.claim(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<()> {
        let path = self.claim(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.claim(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Writes without listing the file; used for the manifest itself.
    pub fn write_unlisted_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<()> {
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
