//! Result files. Every file is written to a temporary sibling and renamed
//! into place, so a crash never leaves a partial file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use coexist_core::analysis::Estimate;
use coexist_core::error::Error;

pub fn runtime(e: impl std::fmt::Display) -> Error {
    Error::Estimation(e.to_string())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(runtime)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(runtime)?;
    tmp.write_all(bytes).map_err(runtime)?;
    tmp.as_file().sync_all().map_err(runtime)?;
    tmp.persist(path).map_err(|e| runtime(e.error))?;
    Ok(())
}

/// One row of the long-format plot table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub parameter: String,
    pub parameter_value: Option<f64>,
    pub quantity: String,
    pub t: Option<f64>,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl PlotRow {
    pub fn estimate(quantity: &str, e: &Estimate) -> Self {
        PlotRow {
            parameter: String::new(),
            parameter_value: None,
            quantity: quantity.to_string(),
            t: None,
            value: e.value,
            ci_lo: e.ci95.0,
            ci_hi: e.ci95.1,
        }
    }

    pub fn point(quantity: &str, t: Option<f64>, value: f64) -> Self {
        PlotRow {
            parameter: String::new(),
            parameter_value: None,
            quantity: quantity.to_string(),
            t,
            value,
            ci_lo: value,
            ci_hi: value,
        }
    }
}

pub fn plot_csv(rows: &[PlotRow]) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("parameter,parameter_value,quantity,t,value,ci_lo,ci_hi\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.parameter,
            opt(r.parameter_value),
            r.quantity,
            opt(r.t),
            r.value,
            r.ci_lo,
            r.ci_hi
        ));
    }
    s
}

/// Everything a subcommand produces.
#[derive(Debug, Default)]
pub struct Report {
    pub result: serde_json::Value,
    pub series: Option<String>,
    pub raw: Option<String>,
    /// (file name, contents) under `snapshots/`.
    pub snapshots: Vec<(String, String)>,
    pub plot: Vec<PlotRow>,
}

pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn write(&self, name: &str, text: &str) -> Result<(), Error> {
        write_atomic(&self.root.join(name), text.as_bytes())
    }

    /// Append a timestamped line to the sidecar log. Timestamps live only
    /// here so that result files stay reproducible.
    pub fn log(&self, line: &str) -> Result<(), Error> {
        std::fs::create_dir_all(&self.root).map_err(runtime)?;
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("run.log"))
            .map_err(runtime)?;
        writeln!(f, "{secs:.3} {line}").map_err(runtime)
    }
}
