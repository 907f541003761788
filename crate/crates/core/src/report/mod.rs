//! Artifact emission: CSV, JSON and SVG with a provenance header.
//!
//! Every file records the tool version, the seed and a hash of the command
//! configuration. CSV files carry it in a leading `#` line, JSON in a `meta`
//! object, SVG in an XML comment.

pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::TOOL_VERSION;

pub use svg::{emit_svg_lines, emit_svg_scatter, LineSeries, ScatterPoint, YAxis};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to plot")]
    EmptyInput,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactHeader {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactHeader {
    /// Header for a configuration; the hash is SHA-256 over its JSON form
    /// with sorted keys.
    pub fn new(seed: u64, config: &impl Serialize) -> Self {
        let value = serde_json::to_value(config).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config_hash,
        }
    }

    pub fn comment_text(&self) -> String {
        format!(
            "{} seed={} config={}",
            self.tool_version, self.seed, self.config_hash
        )
    }
}

/// Fixed 3-decimal rendering used in CSV tables; never prints `-0.000`.
pub fn round3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// RFC 4180 CSV with LF line ends, preceded by the header comment.
pub fn csv_string(header: &ArtifactHeader, columns: &[&str], rows: &[Vec<String>]) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))?;
    let mut out = format!("# {}\n", header.comment_text());
    out.push_str(std::str::from_utf8(&body).expect("csv is utf-8"));
    Ok(out)
}

/// Pretty JSON with sorted keys: `{"meta": header, <key>: payload}`.
pub fn json_string(header: &ArtifactHeader, key: &str, payload: &impl Serialize) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("meta".into(), json!(header));
    obj.insert(
        key.into(),
        serde_json::to_value(payload).expect("payload serializes"),
    );
    let mut s = serde_json::to_string_pretty(&Value::Object(obj)).expect("value serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round3(-0.0004), "0.000");
        assert_eq!(round3(0.6994), "0.699");
        assert_eq!(round3(-0.2615), "-0.262");
    }

    #[test]
    fn header_hash_is_stable_and_key_order_free() {
        #[derive(Serialize)]
        struct A {
            x: u32,
            y: &'static str,
        }
        #[derive(Serialize)]
        struct B {
            y: &'static str,
            x: u32,
        }
        let a = ArtifactHeader::new(1, &A { x: 1, y: "q" });
        let b = ArtifactHeader::new(1, &B { y: "q", x: 1 });
        assert_eq!(a, b);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn csv_layout() {
        let h = ArtifactHeader::new(0, &1);
        let s = csv_string(&h, &["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# geomprobe "));
        assert_eq!(lines[1], "a,b");
        assert_eq!(lines[2], "1,\"x,y\"");
        assert!(!s.contains('\r'));
    }

    #[test]
    fn json_keys_sorted() {
        let h = ArtifactHeader::new(0, &1);
        let s = json_string(&h, "data", &json!({"zeta": 1, "alpha": 2}));
        assert!(s.find("\"alpha\"").unwrap() < s.find("\"zeta\"").unwrap());
        assert!(s.find("\"data\"").unwrap() < s.find("\"meta\"").unwrap());
    }
}
