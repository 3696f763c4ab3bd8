//! CSV and JSON exports. Every CSV opens with [`SCHEMA_LINE`] followed by a
//! header row.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use dsse_core::estimator::TraceRow;
use dsse_core::observability::{ObservabilityReport, RowKind};
use dsse_core::powerflow::PowerFlowSolution;
use dsse_core::{FeederModel, Injections, SensitivityModel};
use serde::Serialize;

use crate::{Error, Result, SCHEMA_LINE};

pub type CsvWriter = csv::Writer<BufWriter<File>>;

/// Opens `path` for CSV output and writes the schema comment line.
pub fn csv_writer(path: &Path) -> Result<CsvWriter> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    writeln!(buf, "{SCHEMA_LINE}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(buf))
}

/// Like [`write_rows`] but with an explicit header, so an empty table still
/// gets one.
pub fn write_rows_with_header<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    writeln!(buf, "{SCHEMA_LINE}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(buf);
    let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serializes `rows` under a header derived from `T`.
pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TraceCsv {
    trial: usize,
    iteration: usize,
    objective: f64,
    dz_norm: f64,
    dv_inf: f64,
    time: f64,
}

/// Convergence traces of several trials in one file.
pub fn write_traces<'a>(path: &Path, traces: impl IntoIterator<Item = (usize, &'a [TraceRow])>) -> Result<()> {
    let rows = traces.into_iter().flat_map(|(trial, rows)| {
        rows.iter().map(move |r| TraceCsv {
            trial,
            iteration: r.iteration,
            objective: r.objective,
            dz_norm: r.dz_norm,
            dv_inf: r.dv_inf,
            time: r.time,
        })
    });
    write_rows_with_header(path, &["trial", "iteration", "objective", "dz_norm", "dv_inf", "time"], rows)
}

#[derive(Serialize)]
struct SolutionCsv {
    node: u32,
    phase: char,
    magnitude: f64,
    angle_deg: f64,
    v: f64,
    p: f64,
    q: f64,
}

pub fn write_solution(path: &Path, model: &FeederModel, z: &Injections, sol: &PowerFlowSolution) -> Result<()> {
    let idx = model.state_index();
    let rows = idx.slots().iter().enumerate().map(|(k, &(i, ph))| {
        let u = sol.phasors[i][ph.index()];
        SolutionCsv {
            node: model.id(i).0,
            phase: ph.as_char(),
            magnitude: u.norm(),
            angle_deg: u.arg().to_degrees(),
            v: sol.v[k],
            p: z.p[k],
            q: z.q[k],
        }
    });
    write_rows(path, rows)
}

fn slot_labels(model: &FeederModel) -> Vec<String> {
    model.state_index().slots().iter().map(|&(i, ph)| format!("{}{}", model.id(i).0, ph.as_char())).collect()
}

fn write_dense(path: &Path, labels: &[String], m: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
    let mut header = vec!["slot".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (a, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend((0..labels.len()).map(|b| m(a, b).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ZaggCsv {
    node_i: u32,
    node_j: u32,
    phi: char,
    psi: char,
    re: f64,
    im: f64,
}

/// `R.csv` and `X.csv` as dense matrices over the state slots, and
/// `zagg.csv` as coordinate triplets of the aggregated common-path
/// impedances between every pair of non-slack nodes.
pub fn write_matrices(dir: &Path, model: &FeederModel, sm: &SensitivityModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels = slot_labels(model);
    write_dense(&dir.join("R.csv"), &labels, |a, b| sm.r()[(a, b)])?;
    write_dense(&dir.join("X.csv"), &labels, |a, b| sm.x()[(a, b)])?;
    let mut rows = Vec::new();
    for i in 1..model.num_nodes() {
        for j in 1..model.num_nodes() {
            let z = sm.z_agg(i, j);
            for phi in model.node(i).phases.iter() {
                for psi in model.node(j).phases.iter() {
                    let e = z[phi.index()][psi.index()];
                    rows.push(ZaggCsv {
                        node_i: model.id(i).0,
                        node_j: model.id(j).0,
                        phi: phi.as_char(),
                        psi: psi.as_char(),
                        re: e.re,
                        im: e.im,
                    });
                }
            }
        }
    }
    write_rows(&dir.join("zagg.csv"), rows)
}

#[derive(Debug, Serialize)]
pub struct ObservabilitySummary {
    pub format_version: u32,
    pub state_dim: usize,
    pub rows: usize,
    pub pseudo_rows: usize,
    pub virtual_rows: usize,
    pub voltage_rows: usize,
    pub rank: usize,
    pub index_percent: f64,
    pub fully_observable: bool,
    pub null_space_dim: usize,
    pub singular_values: Vec<f64>,
}

impl ObservabilitySummary {
    pub fn from_report(rep: &ObservabilityReport) -> Self {
        let count = |f: fn(&RowKind) -> bool| rep.rows.iter().filter(|r| f(r)).count();
        ObservabilitySummary {
            format_version: crate::FORMAT_VERSION,
            state_dim: rep.h.ncols(),
            rows: rep.h.nrows(),
            pseudo_rows: count(|r| matches!(r, RowKind::PseudoP(_) | RowKind::PseudoQ(_))),
            virtual_rows: count(|r| matches!(r, RowKind::VirtualP(_) | RowKind::VirtualQ(_))),
            voltage_rows: count(|r| matches!(r, RowKind::Voltage(_))),
            rank: rep.rank,
            index_percent: rep.index_percent,
            fully_observable: rep.is_fully_observable(),
            null_space_dim: rep.unobservable_basis.len(),
            singular_values: rep.singular_values.clone(),
        }
    }
}

/// `observability.json`, plus `null_space.csv` (one column per basis vector,
/// rows labelled `p<slot>`/`q<slot>`) when the null space is non-trivial.
pub fn write_observability(dir: &Path, model: &FeederModel, rep: &ObservabilityReport) -> Result<()> {
    let path = dir.join("observability.json");
    let text = serde_json::to_string_pretty(&ObservabilitySummary::from_report(rep)).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    if rep.unobservable_basis.is_empty() {
        return Ok(());
    }
    let path = dir.join("null_space.csv");
    let mut w = csv_writer(&path)?;
    let csv_err = |e| Error::Csv { path: path.clone(), source: e };
    let mut header = vec!["coordinate".to_string()];
    header.extend((0..rep.unobservable_basis.len()).map(|k| format!("basis_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    let labels = slot_labels(model);
    let n = labels.len();
    for c in 0..2 * n {
        let name = if c < n { format!("p{}", labels[c]) } else { format!("q{}", labels[c - n]) };
        let mut rec = vec![name];
        rec.extend(rep.unobservable_basis.iter().map(|b| b[c].to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
