//! Feeder documents: a versioned JSON object, or an equivalent
//! `nodes.csv`/`lines.csv` pair.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dsse_core::phase::ZERO_PHASE_MATRIX;
use dsse_core::{FeederModel, InjectionBox, LineRecord, NodeId, NodeKind, NodeRecord, Phase, PhaseMatrix, PhaseSet};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, FORMAT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindDoc {
    Slack,
    ZeroInjection,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: u32,
    pub phases: String,
    pub kind: KindDoc,
    /// `[p_min, p_max, q_min, q_max]` keyed by phase letter.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, [f64; 4]>,
    /// `[p, q]` keyed by phase letter.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nominal: BTreeMap<String, [f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineDoc {
    pub from: u32,
    pub to: u32,
    pub phases: String,
    /// `[re, im]` entries over the line's phases, in the order of `phases`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impedance: Option<Vec<Vec<[f64; 2]>>>,
    /// Shorthand for a decoupled line with the same self impedance per phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederDocument {
    pub format_version: u32,
    pub base_voltage: f64,
    pub base_power: f64,
    #[serde(default = "unit")]
    pub slack_voltage: f64,
    pub nodes: Vec<NodeDoc>,
    pub lines: Vec<LineDoc>,
}

fn unit() -> f64 {
    1.0
}

fn phases_of(s: &str, path: &Path) -> Result<PhaseSet> {
    PhaseSet::parse(s).ok_or_else(|| Error::format(path, format!("bad phase set {s:?}")))
}

fn phase_of(s: &str, path: &Path) -> Result<Phase> {
    let mut chars = s.chars();
    match (chars.next().and_then(Phase::from_char), chars.next()) {
        (Some(p), None) => Ok(p),
        _ => Err(Error::format(path, format!("bad phase {s:?}"))),
    }
}

fn phase_key(p: Phase) -> String {
    p.as_char().to_string()
}

fn phase_string(set: PhaseSet) -> String {
    set.iter().map(Phase::as_char).collect()
}

impl FeederDocument {
    pub fn from_model(model: &FeederModel) -> Self {
        let nodes = model
            .nodes()
            .iter()
            .map(|n| {
                let kind = match n.kind {
                    NodeKind::Slack => KindDoc::Slack,
                    NodeKind::ZeroInjection => KindDoc::ZeroInjection,
                    NodeKind::Load => KindDoc::Load,
                };
                let mut bounds = BTreeMap::new();
                let mut nominal = BTreeMap::new();
                if n.kind == NodeKind::Load {
                    for ph in n.phases.iter() {
                        let b = n.bounds[ph.index()];
                        bounds.insert(phase_key(ph), [b.p_min, b.p_max, b.q_min, b.q_max]);
                        let (p, q) = n.nominal[ph.index()];
                        nominal.insert(phase_key(ph), [p, q]);
                    }
                }
                NodeDoc { id: n.id.0, phases: phase_string(n.phases), kind, bounds, nominal }
            })
            .collect();
        let lines = model
            .lines()
            .iter()
            .map(|l| {
                let ph: Vec<Phase> = l.phases.iter().collect();
                let m = ph
                    .iter()
                    .map(|a| {
                        ph.iter()
                            .map(|b| {
                                let z = l.impedance[a.index()][b.index()];
                                [z.re, z.im]
                            })
                            .collect()
                    })
                    .collect();
                LineDoc {
                    from: l.from.0,
                    to: l.to.0,
                    phases: phase_string(l.phases),
                    impedance: Some(m),
                    r: None,
                    x: None,
                }
            })
            .collect();
        FeederDocument {
            format_version: FORMAT_VERSION,
            base_voltage: model.base_voltage(),
            base_power: model.base_power(),
            slack_voltage: model.slack_voltage(),
            nodes,
            lines,
        }
    }

    /// Validates the document into a model; `path` only labels errors.
    pub fn to_model(&self, path: &Path) -> Result<FeederModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: self.format_version, expected: FORMAT_VERSION });
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let phases = phases_of(&n.phases, path)?;
            let id = NodeId(n.id);
            let record = match n.kind {
                KindDoc::Slack => NodeRecord::slack(id, phases),
                KindDoc::ZeroInjection => NodeRecord::zero_injection(id, phases),
                KindDoc::Load => {
                    let mut r = NodeRecord::zero_injection(id, phases);
                    r.kind = NodeKind::Load;
                    for ph in phases.iter() {
                        let key = phase_key(ph);
                        let nom = n.nominal.get(&key).copied();
                        if let Some([p, q]) = nom {
                            r.nominal[ph.index()] = (p, q);
                        }
                        r.bounds[ph.index()] = match (n.bounds.get(&key), nom) {
                            (Some(b), _) => InjectionBox::new(b[0], b[1], b[2], b[3]),
                            (None, Some([p, q])) => InjectionBox::for_peak_load(p, q),
                            (None, None) => {
                                return Err(Error::format(
                                    path,
                                    format!("load node {} phase {} has neither bounds nor nominal", n.id, key),
                                ))
                            }
                        };
                    }
                    r
                }
            };
            nodes.push(record);
        }
        let mut lines = Vec::with_capacity(self.lines.len());
        for l in &self.lines {
            let phases = phases_of(&l.phases, path)?;
            let record = match (&l.impedance, l.r, l.x) {
                (Some(m), None, None) => {
                    let ph: Vec<Phase> = phases.iter().collect();
                    if m.len() != ph.len() || m.iter().any(|row| row.len() != ph.len()) {
                        return Err(Error::format(
                            path,
                            format!("line {}->{}: impedance must be {n}x{n}", l.from, l.to, n = ph.len()),
                        ));
                    }
                    let mut z: PhaseMatrix = ZERO_PHASE_MATRIX;
                    for (i, a) in ph.iter().enumerate() {
                        for (j, b) in ph.iter().enumerate() {
                            z[a.index()][b.index()] = Complex64::new(m[i][j][0], m[i][j][1]);
                        }
                    }
                    LineRecord { from: NodeId(l.from), to: NodeId(l.to), phases, impedance: z }
                }
                (None, Some(r), Some(x)) => LineRecord::decoupled(NodeId(l.from), NodeId(l.to), phases, r, x),
                _ => {
                    return Err(Error::format(
                        path,
                        format!("line {}->{}: give either `impedance` or both `r` and `x`", l.from, l.to),
                    ))
                }
            };
            lines.push(record);
        }
        Ok(FeederModel::new(nodes, lines, self.base_voltage, self.base_power, self.slack_voltage)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    id: u32,
    phases: String,
    kind: KindDoc,
    phase: String,
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
    p_nominal: f64,
    q_nominal: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineRow {
    from: u32,
    to: u32,
    phases: String,
    row: String,
    col: String,
    r: f64,
    x: f64,
}

/// Reads a feeder from a JSON document, a directory holding `nodes.csv` and
/// `lines.csv`, or a `nodes.csv` path with `lines.csv` next to it.
pub fn load_feeder(path: &Path) -> Result<FeederModel> {
    if path.is_dir() {
        return load_csv_pair(&path.join("nodes.csv"), &path.join("lines.csv"));
    }
    if path.extension().is_some_and(|e| e == "csv") {
        let lines = path.with_file_name("lines.csv");
        return load_csv_pair(path, &lines);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: FeederDocument =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    doc.to_model(path)
}

pub fn save_feeder_json(model: &FeederModel, path: &Path) -> Result<()> {
    let doc = FeederDocument::from_model(model);
    let text = serde_json::to_string_pretty(&doc).expect("feeder documents always serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn header_line(doc: &FeederDocument) -> String {
    format!(
        "# format_version={} base_voltage={} base_power={} slack_voltage={}\n",
        doc.format_version, doc.base_voltage, doc.base_power, doc.slack_voltage
    )
}

/// Writes `nodes.csv` and `lines.csv` into `dir`, creating it if needed.
pub fn save_feeder_csv(model: &FeederModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = FeederDocument::from_model(model);
    let nodes_path = dir.join("nodes.csv");
    let mut buf = header_line(&doc).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for (n, rec) in doc.nodes.iter().zip(model.nodes()) {
            for ph in rec.phases.iter() {
                let b = rec.bounds[ph.index()];
                let (p, q) = rec.nominal[ph.index()];
                w.serialize(NodeRow {
                    id: n.id,
                    phases: n.phases.clone(),
                    kind: n.kind,
                    phase: phase_key(ph),
                    p_min: b.p_min,
                    p_max: b.p_max,
                    q_min: b.q_min,
                    q_max: b.q_max,
                    p_nominal: p,
                    q_nominal: q,
                })
                .map_err(|e| Error::Csv { path: nodes_path.clone(), source: e })?;
            }
        }
        w.flush().map_err(|e| Error::io(&nodes_path, e))?;
    }
    fs::write(&nodes_path, buf).map_err(|e| Error::io(&nodes_path, e))?;

    let lines_path = dir.join("lines.csv");
    let mut w = csv::Writer::from_path(&lines_path).map_err(|e| Error::Csv { path: lines_path.clone(), source: e })?;
    for l in model.lines() {
        for a in l.phases.iter() {
            for b in l.phases.iter() {
                let z = l.impedance[a.index()][b.index()];
                w.serialize(LineRow {
                    from: l.from.0,
                    to: l.to.0,
                    phases: phase_string(l.phases),
                    row: phase_key(a),
                    col: phase_key(b),
                    r: z.re,
                    x: z.im,
                })
                .map_err(|e| Error::Csv { path: lines_path.clone(), source: e })?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&lines_path, e))
}

fn parse_header(path: &Path, text: &str) -> Result<(u32, f64, f64, f64)> {
    let first = text.lines().next().unwrap_or("");
    let body =
        first.strip_prefix('#').ok_or_else(|| Error::format(path, "missing `# format_version=...` header line"))?;
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    for item in body.split_whitespace() {
        if let Some((k, v)) = item.split_once('=') {
            kv.insert(k, v);
        }
    }
    let get = |k: &str| -> Result<f64> {
        kv.get(k)
            .ok_or_else(|| Error::format(path, format!("header lacks {k}")))?
            .parse::<f64>()
            .map_err(|_| Error::format(path, format!("header field {k} is not a number")))
    };
    let version = get("format_version")? as u32;
    let slack = if kv.contains_key("slack_voltage") { get("slack_voltage")? } else { 1.0 };
    Ok((version, get("base_voltage")?, get("base_power")?, slack))
}

fn load_csv_pair(nodes_path: &Path, lines_path: &Path) -> Result<FeederModel> {
    let text = fs::read_to_string(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let (format_version, base_voltage, base_power, slack_voltage) = parse_header(nodes_path, &text)?;
    let mut nodes: Vec<NodeDoc> = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    for row in rdr.deserialize::<NodeRow>() {
        let row = row.map_err(|e| Error::Csv { path: nodes_path.to_path_buf(), source: e })?;
        if nodes.last().is_none_or(|n| n.id != row.id) {
            nodes.push(NodeDoc {
                id: row.id,
                phases: row.phases.clone(),
                kind: row.kind,
                bounds: BTreeMap::new(),
                nominal: BTreeMap::new(),
            });
        }
        let node = nodes.last_mut().expect("pushed above");
        if node.phases != row.phases || node.kind != row.kind {
            return Err(Error::format(nodes_path, format!("rows for node {} disagree on phases or kind", row.id)));
        }
        phase_of(&row.phase, nodes_path)?;
        if row.kind == KindDoc::Load {
            node.bounds.insert(row.phase.clone(), [row.p_min, row.p_max, row.q_min, row.q_max]);
            node.nominal.insert(row.phase, [row.p_nominal, row.q_nominal]);
        }
    }

    let mut lines: Vec<LineDoc> = Vec::new();
    let mut entries: BTreeMap<(u32, u32), Vec<LineRow>> = BTreeMap::new();
    let mut order: Vec<(u32, u32)> = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(lines_path)
        .map_err(|e| Error::Csv { path: lines_path.to_path_buf(), source: e })?;
    for row in rdr.deserialize::<LineRow>() {
        let row = row.map_err(|e| Error::Csv { path: lines_path.to_path_buf(), source: e })?;
        let key = (row.from, row.to);
        if !entries.contains_key(&key) {
            order.push(key);
        }
        entries.entry(key).or_default().push(row);
    }
    for key in order {
        let rows = &entries[&key];
        let phases = phases_of(&rows[0].phases, lines_path)?;
        let ph: Vec<Phase> = phases.iter().collect();
        let mut m = vec![vec![[0.0, 0.0]; ph.len()]; ph.len()];
        for r in rows {
            let a = phase_of(&r.row, lines_path)?;
            let b = phase_of(&r.col, lines_path)?;
            let (Some(i), Some(j)) = (ph.iter().position(|&p| p == a), ph.iter().position(|&p| p == b)) else {
                return Err(Error::format(lines_path, format!("line {}->{}: entry outside its phases", key.0, key.1)));
            };
            m[i][j] = [r.r, r.x];
        }
        lines.push(LineDoc {
            from: key.0,
            to: key.1,
            phases: rows[0].phases.clone(),
            impedance: Some(m),
            r: None,
            x: None,
        });
    }
    FeederDocument { format_version, base_voltage, base_power, slack_voltage, nodes, lines }.to_model(nodes_path)
}

/// Output location for a feeder given on the command line: JSON when the
/// path has a `.json` extension, otherwise a CSV directory.
pub fn save_feeder(model: &FeederModel, path: &Path) -> Result<PathBuf> {
    if path.extension().is_some_and(|e| e == "json") {
        save_feeder_json(model, path)?;
    } else {
        save_feeder_csv(model, path)?;
    }
    Ok(path.to_path_buf())
}

/// Writes the partition as one `node,area,root` line per node. Area `0`
/// is the unclustered region.
pub fn write_partition(
    model: &FeederModel,
    part: &dsse_core::AreaPartition,
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "{}", crate::SCHEMA_LINE)?;
    writeln!(out, "node,area,root")?;
    for i in 0..model.num_nodes() {
        let (area, root) = match part.region(i) {
            dsse_core::grid::Region::Unclustered => (0, String::new()),
            dsse_core::grid::Region::Area(a) => {
                let area = &part.areas()[a];
                (area.id, area.root_id.0.to_string())
            }
        };
        writeln!(out, "{},{},{}", model.id(i).0, area, root)?;
    }
    Ok(())
}
