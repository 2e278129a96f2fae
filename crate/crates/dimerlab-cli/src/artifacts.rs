//! Deterministic JSON, CSV and SVG artifacts. Each embeds the resolved
//! configuration and seed; none carries a timestamp.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

/// Build identifier recorded in artifacts.
pub const BUILD: &str = concat!("dimerlab ", env!("CARGO_PKG_VERSION"));

/// Output directory and the metadata shared by every artifact of one run.
pub struct Sink {
    dir: PathBuf,
    stem: String,
    meta: Value,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new<C: Serialize>(dir: &Path, stem: &str, config: &C, seed: u64, plan_hash: Option<u64>) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let config = serde_json::to_value(config).map_err(|e| CliError::Io(e.to_string()))?;
        let meta = json!({ "build": BUILD, "seed": seed, "plan_hash": plan_hash.map(|h| format!("{h:016x}")), "config": config });
        Ok(Self { dir: dir.to_path_buf(), stem: stem.to_string(), meta, written: Vec::new() })
    }

    fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}.{ext}", self.stem))
    }

    fn write(&mut self, path: PathBuf, body: &str) -> Result<(), CliError> {
        fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// `<stem>.json` with `meta` fields and `result`.
    pub fn json<R: Serialize>(&mut self, result: &R) -> Result<Value, CliError> {
        let mut doc = self.meta.clone();
        doc["result"] = serde_json::to_value(result).map_err(|e| CliError::Io(e.to_string()))?;
        let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        self.write(self.path("json"), &text)?;
        Ok(doc)
    }

    /// `<stem>.csv`: a `#`-prefixed metadata line, then RFC 4180 records.
    pub fn csv<I, R>(&mut self, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?).map_err(|e| CliError::Io(e.to_string()))?;
        let text = format!("# {}\r\n{body}", self.meta);
        self.write(self.path("csv"), &text)
    }

    /// `<stem>.svg` with the metadata in a `<metadata>` element.
    pub fn svg(&mut self, svg: &str) -> Result<(), CliError> {
        let meta = self.meta.to_string().replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let body = match svg.find('>') {
            Some(i) => format!("{}<metadata>{meta}</metadata>{}", &svg[..=i], &svg[i + 1..]),
            None => svg.to_string(),
        };
        self.write(self.path("svg"), &body)
    }
}

/// Fixed-precision decimal for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}
