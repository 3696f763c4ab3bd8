//! Time-series CSV: one row per `(tick, node, phase)` with the true
//! injections and an optional squared-magnitude meter reading `v`.
//!
//! ```text
//! # schema_version=1
//! tick,node,phase,p,q,v
//! 0,3,a,-0.021,-0.008,
//! 0,6,a,-0.015,-0.006,0.9801
//! ```
//!
//! Slots not listed for a tick carry zero injection. Meter readings are
//! taken as given for that tick; ticks without any are synthesized when
//! consumed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dsse_core::measurements::Scenario;
use dsse_core::{DsseError, FeederModel, Injections, NodeId, Phase};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SCHEMA_LINE};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    tick: u64,
    node: u32,
    phase: char,
    p: f64,
    q: f64,
    v: Option<f64>,
}

/// Per-tick seed used for synthesized readings.
pub fn tick_seed(base: u64, tick: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tick)
}

pub fn load_timeseries(model: &FeederModel, path: &Path, seed: u64) -> Result<Vec<Scenario>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?;
    let idx = model.state_index();
    let n = idx.len();
    let mut out: Vec<Scenario> = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?;
        if out.last().is_none_or(|s| s.tick != row.tick) {
            if let Some(prev) = out.last() {
                if row.tick < prev.tick {
                    return Err(DsseError::NonMonotonicTicks { previous: prev.tick, next: row.tick }.into());
                }
            }
            out.push(Scenario {
                tick: row.tick,
                truth: Injections::zeros(n),
                readings: None,
                omega: None,
                seed: tick_seed(seed, row.tick),
            });
        }
        let i = model.index_of(NodeId(row.node))?;
        let ph =
            Phase::from_char(row.phase).ok_or_else(|| Error::format(path, format!("bad phase {:?}", row.phase)))?;
        let k = idx.get(i, ph).ok_or_else(|| {
            Error::format(path, format!("node {} has no state slot on phase {}", row.node, row.phase))
        })?;
        let sc = out.last_mut().expect("pushed above");
        sc.truth.p[k] = row.p;
        sc.truth.q[k] = row.q;
        if let Some(v) = row.v {
            sc.readings.get_or_insert_with(Vec::new).push((k, v));
        }
    }
    if out.is_empty() {
        return Err(Error::format(path, "time series has no rows"));
    }
    Ok(out)
}

pub fn save_timeseries(model: &FeederModel, scenarios: &[Scenario], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    writeln!(buf, "{SCHEMA_LINE}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(buf);
    let idx = model.state_index();
    for sc in scenarios {
        let reading = |k: usize| sc.readings.as_ref().and_then(|r| r.iter().find(|x| x.0 == k).map(|x| x.1));
        for (k, &(i, ph)) in idx.slots().iter().enumerate() {
            w.serialize(Row {
                tick: sc.tick,
                node: model.id(i).0,
                phase: ph.as_char(),
                p: sc.truth.p[k],
                q: sc.truth.q[k],
                v: reading(k),
            })
            .map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
