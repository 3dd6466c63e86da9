use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::ExperimentConfig;

/// In-memory CSV table written in one shot.
#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header
            .iter()
            .map(|h| h.as_ref())
            .collect::<Vec<_>>()
            .join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Float(v) => write!(self.text, "{v}").unwrap(),
                Cell::Empty => {}
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Empty,
}

/// JSON-lines accumulator.
#[derive(Debug, Default, Clone)]
pub struct JsonLines {
    text: String,
}

impl JsonLines {
    pub fn push<T: Serialize>(&mut self, record: &T) {
        self.text
            .push_str(&serde_json::to_string(record).expect("records serialize"));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub started_at_unix: f64,
    pub finished_at_unix: f64,
    pub outputs: Vec<OutputFile>,
    pub gates_passed: Option<bool>,
    pub error: Option<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Output directory plus the inventory of files written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    /// Creates the directory and proves it is writable.
    pub fn prepare(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        let probe = root.join(".write-probe");
        fs::write(&probe, b"ok")?;
        fs::remove_file(&probe)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.written.retain(|f| f.file != name);
        self.written.push(OutputFile {
            file: name.to_string(),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    pub fn inventory(&self) -> Vec<OutputFile> {
        self.written.clone()
    }
}
