use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            other => Err(CliError::Config(format!("`output.format`: expected csv, json or both, got {other:?}"))),
        }
    }

    pub fn csv(self) -> bool {
        self != Format::Json
    }

    pub fn json(self) -> bool {
        self != Format::Csv
    }
}

/// One run's output directory. Every file gets the version, config hash and seed.
pub struct RunDir {
    path: PathBuf,
    config_hash: String,
    seed: u64,
    written: Vec<String>,
}

impl RunDir {
    /// Refuses a non-empty directory unless `force` is set.
    pub fn create(path: &Path, force: bool, config_hash: &str, seed: u64) -> Result<Self, CliError> {
        if path.exists() {
            if !path.is_dir() {
                return Err(CliError::Config(format!("output path {} is not a directory", path.display())));
            }
            let occupied = fs::read_dir(path)?.next().is_some();
            if occupied && !force {
                return Err(CliError::Config(format!(
                    "output directory {} is not empty (use --force to overwrite)",
                    path.display()
                )));
            }
        }
        fs::create_dir_all(path)?;
        Ok(RunDir {
            path: path.to_path_buf(),
            config_hash: config_hash.to_string(),
            seed,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    pub fn header(&self) -> String {
        format!("# epicontrol {VERSION} config={} seed={}", self.config_hash, self.seed)
    }

    pub fn provenance(&self) -> Value {
        json!({ "version": VERSION, "config_hash": self.config_hash, "seed": self.seed })
    }

    /// Text file prefixed by the provenance comment line.
    pub fn write_text<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let mut w = BufWriter::new(fs::File::create(self.path.join(name))?);
        writeln!(w, "{}", self.header())?;
        body(&mut w)?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// JSON object with a `provenance` field added.
    pub fn write_json(&mut self, name: &str, value: Value) -> Result<(), CliError> {
        let mut obj = match value {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("provenance".into(), self.provenance());
        let text = serde_json::to_string_pretty(&Value::Object(obj)).expect("json serializes");
        fs::write(self.path.join(name), text + "\n")?;
        self.written.push(name.to_string());
        Ok(())
    }
}
