//! Report envelopes, float formatting and atomic output.

use std::io::Write;
use std::path::Path;

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub const SCHEMA: &str = "mfb-report";
pub const SCHEMA_VERSION: u32 = 1;

/// An audit float, written with 17 significant digits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Top-level wrapper shared by every command.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema: &'static str,
    pub version: u32,
    pub command: &'a str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub body: T,
}

pub fn render<T: Serialize>(command: &str, exit_code: i32, error: Option<String>, body: T) -> String {
    let env = Envelope { schema: SCHEMA, version: SCHEMA_VERSION, command, exit_code, error, body };
    let mut s = serde_json::to_string_pretty(&env).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial report.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        #[derive(Serialize)]
        struct R {
            x: F17,
            y: F17,
        }
        let s = serde_json::to_string(&R { x: F17(0.1), y: F17(f64::NAN) }).unwrap();
        assert_eq!(s, r#"{"x":1.0000000000000001e-1,"y":null}"#);
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn envelope_is_versioned() {
        let s = render("ends", 0, None, serde_json::json!({"fiber_ends": 4}));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["fiber_ends"], 4);
        assert!(v.get("error").is_none());
    }
}
