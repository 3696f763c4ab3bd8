//! Versioned JSON document for a [`MeasurementSet`].

use std::fs;
use std::path::Path;

use dsse_core::measurements::{MeasurementSet, VoltageMeter};
use dsse_core::{FeederModel, InjectionBox, NodeId, Phase};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDoc {
    pub node: u32,
    pub phase: char,
    pub p_hat: f64,
    pub q_hat: f64,
    /// Absent for slots without a pseudo-measurement.
    pub sigma_p: Option<f64>,
    pub sigma_q: Option<f64>,
    /// `[p_min, p_max, q_min, q_max]`.
    pub omega: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterDoc {
    pub node: u32,
    pub phase: char,
    /// Squared voltage magnitude, per-unit.
    pub v_hat: f64,
    pub sigma_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDocument {
    pub format_version: u32,
    pub channels: Vec<ChannelDoc>,
    pub meters: Vec<MeterDoc>,
}

impl MeasurementDocument {
    pub fn from_set(model: &FeederModel, ms: &MeasurementSet) -> Self {
        let idx = model.state_index();
        let label = |k: usize| {
            let (i, ph) = idx.slot(k);
            (model.id(i).0, ph.as_char())
        };
        let channels = (0..ms.dim())
            .map(|k| {
                let (node, phase) = label(k);
                let b = ms.omega[k];
                ChannelDoc {
                    node,
                    phase,
                    p_hat: ms.p_hat[k],
                    q_hat: ms.q_hat[k],
                    sigma_p: ms.sigma_p[k],
                    sigma_q: ms.sigma_q[k],
                    omega: [b.p_min, b.p_max, b.q_min, b.q_max],
                }
            })
            .collect();
        let meters = ms
            .meters
            .iter()
            .map(|m| {
                let (node, phase) = label(m.slot);
                MeterDoc { node, phase, v_hat: m.v_hat, sigma_v: m.sigma_v }
            })
            .collect();
        MeasurementDocument { format_version: FORMAT_VERSION, channels, meters }
    }

    /// Maps the document back onto the model's state index. Every slot must
    /// appear exactly once among the channels.
    pub fn to_set(&self, model: &FeederModel, path: &Path) -> Result<MeasurementSet> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: self.format_version, expected: FORMAT_VERSION });
        }
        let idx = model.state_index();
        let slot = |node: u32, phase: char| -> Result<usize> {
            let i = model.index_of(NodeId(node))?;
            let ph = Phase::from_char(phase).ok_or_else(|| Error::format(path, format!("bad phase {phase:?}")))?;
            idx.get(i, ph).ok_or_else(|| Error::format(path, format!("node {node} has no state slot on phase {phase}")))
        };
        let n = idx.len();
        let mut ms = MeasurementSet {
            p_hat: vec![0.0; n],
            q_hat: vec![0.0; n],
            sigma_p: vec![None; n],
            sigma_q: vec![None; n],
            meters: Vec::new(),
            omega: vec![InjectionBox::ZERO; n],
        };
        let mut seen = vec![false; n];
        for c in &self.channels {
            let k = slot(c.node, c.phase)?;
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::format(path, format!("duplicate channel for node {} phase {}", c.node, c.phase)));
            }
            ms.p_hat[k] = c.p_hat;
            ms.q_hat[k] = c.q_hat;
            ms.sigma_p[k] = c.sigma_p;
            ms.sigma_q[k] = c.sigma_q;
            ms.omega[k] = InjectionBox::new(c.omega[0], c.omega[1], c.omega[2], c.omega[3]);
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            let (i, ph) = idx.slot(k);
            return Err(Error::format(path, format!("no channel for node {} phase {}", model.id(i).0, ph.as_char())));
        }
        for m in &self.meters {
            ms.meters.push(VoltageMeter { slot: slot(m.node, m.phase)?, v_hat: m.v_hat, sigma_v: m.sigma_v });
        }
        ms.meters.sort_by_key(|m| m.slot);
        ms.validate()?;
        Ok(ms)
    }
}

pub fn save_measurements(model: &FeederModel, ms: &MeasurementSet, path: &Path) -> Result<()> {
    let doc = MeasurementDocument::from_set(model, ms);
    let text = serde_json::to_string_pretty(&doc).expect("measurement documents always serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_measurements(model: &FeederModel, path: &Path) -> Result<MeasurementSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: MeasurementDocument =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    doc.to_set(model, path)
}

/// SHA-256 of the canonical byte encoding, hex encoded.
pub fn digest(ms: &MeasurementSet) -> String {
    hex::encode(Sha256::digest(ms.canonical_bytes()))
}
