//! Line-delimited JSON log of protocol messages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use dsse_core::multiarea::{Direction, RoundMessage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    /// `uplink` (AMS to DSO) or `downlink`.
    pub direction: String,
    /// One-based area id.
    pub area: usize,
    pub kind: String,
    pub scalars: usize,
    /// Encoded payload size in bytes.
    pub size: usize,
    /// SHA-256 of the encoded payload, hex.
    pub digest: String,
}

impl LogRecord {
    pub fn from_message(m: &RoundMessage) -> Self {
        let bytes = m.payload.to_bytes();
        LogRecord {
            round: m.round,
            direction: match m.direction {
                Direction::Uplink => "uplink",
                Direction::Downlink => "downlink",
            }
            .to_string(),
            area: m.area,
            kind: m.payload.kind().to_string(),
            scalars: m.payload.scalars(),
            size: bytes.len(),
            digest: hex::encode(Sha256::digest(&bytes)),
        }
    }
}

pub fn write_log(path: &Path, messages: &[RoundMessage]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in messages {
        let line = serde_json::to_string(&LogRecord::from_message(m)).expect("log records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?);
    }
    Ok(out)
}
