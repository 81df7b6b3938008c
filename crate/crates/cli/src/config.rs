//! Resolution parsing and the provenance hash written into every output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        let r = Resolution {
            height: parse(h)?,
            width: parse(w)?,
        };
        if r.height == 0 || r.width == 0 {
            return Err("resolution must be non-zero".into());
        }
        Ok(r)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Hash of a config value; object keys are sorted, so the hash does not
/// depend on field order.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let v = serde_json::to_value(cfg).expect("config serialises");
    sha256_hex(v.to_string().as_bytes())
}

pub fn header(command: &str, hash: &str) -> String {
    format!("# sparseflow {command} config_sha256={hash}")
}
