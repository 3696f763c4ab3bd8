use std::fs;

use dsse::export::{write_matrices, write_traces};
use dsse::feeder_io::{load_feeder, save_feeder, save_feeder_csv, save_feeder_json, FeederDocument};
use dsse::measurement_io::{digest, load_measurements, save_measurements};
use dsse::msglog::{read_log, write_log};
use dsse::timeseries::{load_timeseries, save_timeseries};
use dsse::{Error, SCHEMA_LINE};
use dsse_core::estimator::{Feedback, StepSize};
use dsse_core::generate::{fig2_feeder, generate_feeder, GeneratorSpec, PhaseMix, FIG2_METERS, FIG2_ROOTS};
use dsse_core::grid::partition;
use dsse_core::measurements::{diurnal_profile, synthesize, DiurnalSpec, MeterPlacement, NoisePolicy};
use dsse_core::multiarea::{run_round, InProcessTransport, MultiAreaSystem};
use dsse_core::{DsseError, FeederModel, NodeId, SensitivityModel};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn three_phase(seed: u64) -> FeederModel {
    generate_feeder(&GeneratorSpec {
        size: 15,
        seed,
        phase_mix: PhaseMix::ThreePhase { lateral_fraction: 0.4, mutual_ratio: 0.35 },
        ..GeneratorSpec::default()
    })
    .unwrap()
}

fn assert_same_model(a: &FeederModel, b: &FeederModel) {
    assert_eq!(FeederDocument::from_model(a), FeederDocument::from_model(b));
    let (sa, sb) = (SensitivityModel::build_auto(a), SensitivityModel::build_auto(b));
    assert_eq!(sa.r(), sb.r());
    assert_eq!(sa.x(), sb.x());
}

#[test]
fn feeder_round_trips_through_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    for model in [fig2_feeder(3).unwrap(), three_phase(4)] {
        let json = dir.path().join("f.json");
        save_feeder_json(&model, &json).unwrap();
        assert_same_model(&model, &load_feeder(&json).unwrap());
        let csv = dir.path().join("csv");
        save_feeder_csv(&model, &csv).unwrap();
        assert_same_model(&model, &load_feeder(&csv).unwrap());
        assert_same_model(&model, &load_feeder(&csv.join("nodes.csv")).unwrap());
        let first = fs::read_to_string(csv.join("nodes.csv")).unwrap();
        assert!(first.starts_with("# format_version=1 "));
    }
}

#[test]
fn save_feeder_picks_format_from_extension() {
    let dir = tempfile::tempdir().unwrap();
    let model = fig2_feeder(0).unwrap();
    save_feeder(&model, &dir.path().join("a.json")).unwrap();
    save_feeder(&model, &dir.path().join("b")).unwrap();
    assert!(dir.path().join("a.json").is_file());
    assert!(dir.path().join("b/lines.csv").is_file());
}

#[test]
fn hand_written_two_node_document_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.json");
    fs::write(
        &path,
        r#"{
  "format_version": 1, "base_voltage": 4.16, "base_power": 1.0,
  "nodes": [
    {"id": 0, "phases": "a", "kind": "slack"},
    {"id": 1, "phases": "a", "kind": "load", "nominal": {"a": [-0.02, -0.01]}}
  ],
  "lines": [{"from": 0, "to": 1, "phases": "a", "r": 0.01, "x": 0.02}]
}"#,
    )
    .unwrap();
    let model = load_feeder(&path).unwrap();
    assert_eq!(model.num_nodes(), 2);
    assert_eq!(model.slack_voltage(), 1.0);
    let sm = SensitivityModel::build_auto(&model);
    // Single line: R11 = 2r, X11 = 2x.
    assert!((sm.r()[(0, 0)] - 0.02).abs() < 1e-15);
    assert!((sm.x()[(0, 0)] - 0.04).abs() < 1e-15);
    // Missing bounds fall back to the peak-load box around the nominal value.
    let b = model.slot_bounds()[0];
    assert!(b.contains(-0.02, -0.01));
}

#[test]
fn malformed_documents_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cycle = dir.path().join("cycle.json");
    fs::write(
        &cycle,
        r#"{"format_version": 1, "base_voltage": 4.16, "base_power": 1.0,
  "nodes": [{"id": 0, "phases": "a", "kind": "slack"},
            {"id": 1, "phases": "a", "kind": "zero-injection"},
            {"id": 2, "phases": "a", "kind": "zero-injection"}],
  "lines": [{"from": 0, "to": 1, "phases": "a", "r": 0.01, "x": 0.01},
            {"from": 1, "to": 2, "phases": "a", "r": 0.01, "x": 0.01},
            {"from": 2, "to": 1, "phases": "a", "r": 0.01, "x": 0.01}]}"#,
    )
    .unwrap();
    assert!(load_feeder(&cycle).is_err());

    let version = dir.path().join("v2.json");
    let mut doc = FeederDocument::from_model(&fig2_feeder(0).unwrap());
    doc.format_version = 2;
    fs::write(&version, serde_json::to_string(&doc).unwrap()).unwrap();
    assert!(matches!(load_feeder(&version), Err(Error::Version { found: 2, expected: 1 })));

    let no_impedance = dir.path().join("noz.json");
    let mut doc = FeederDocument::from_model(&fig2_feeder(0).unwrap());
    doc.lines[0].impedance = None;
    doc.lines[0].r = None;
    fs::write(&no_impedance, serde_json::to_string(&doc).unwrap()).unwrap();
    assert!(load_feeder(&no_impedance).is_err());

    assert!(matches!(load_feeder(&dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn measurement_document_round_trips_with_equal_digest() {
    let dir = tempfile::tempdir().unwrap();
    for model in [fig2_feeder(1).unwrap(), three_phase(2)] {
        let (ms, _) =
            synthesize(&model, &model.nominal_injections(), &NoisePolicy::default(), &MeterPlacement::Fraction(0.3), 5)
                .unwrap();
        let path = dir.path().join("ms.json");
        save_measurements(&model, &ms, &path).unwrap();
        let back = load_measurements(&model, &path).unwrap();
        assert_eq!(back, ms);
        assert_eq!(digest(&back), digest(&ms));
    }
}

#[test]
fn measurement_document_requires_every_slot() {
    let dir = tempfile::tempdir().unwrap();
    let model = fig2_feeder(1).unwrap();
    let (ms, _) =
        synthesize(&model, &model.nominal_injections(), &NoisePolicy::default(), &MeterPlacement::Fraction(0.1), 1)
            .unwrap();
    let mut doc = dsse::measurement_io::MeasurementDocument::from_set(&model, &ms);
    doc.channels.pop();
    let path = dir.path().join("short.json");
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    assert!(matches!(load_measurements(&model, &path), Err(Error::Format { .. })));
}

#[test]
fn timeseries_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let model = fig2_feeder(0).unwrap();
    let mut scenarios = diurnal_profile(&model, &DiurnalSpec { ticks: 5, seed: 2, ..DiurnalSpec::default() });
    scenarios[1].readings = Some(vec![(3, 0.98), (7, 0.97)]);
    let path = dir.path().join("ts.csv");
    save_timeseries(&model, &scenarios, &path).unwrap();
    assert!(fs::read_to_string(&path).unwrap().starts_with(SCHEMA_LINE));
    let back = load_timeseries(&model, &path, 11).unwrap();
    assert_eq!(back.len(), 5);
    for (a, b) in scenarios.iter().zip(&back) {
        assert_eq!(a.tick, b.tick);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.readings, b.readings);
    }
}

#[test]
fn timeseries_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let model = fig2_feeder(0).unwrap();
    let backwards = dir.path().join("back.csv");
    fs::write(&backwards, "# schema_version=1\ntick,node,phase,p,q,v\n2,3,a,-0.01,0,\n1,3,a,-0.01,0,\n").unwrap();
    assert!(matches!(
        load_timeseries(&model, &backwards, 0),
        Err(Error::Core(DsseError::NonMonotonicTicks { previous: 2, next: 1 }))
    ));
    let unknown = dir.path().join("unknown.csv");
    fs::write(&unknown, "tick,node,phase,p,q,v\n0,999,a,-0.01,0,\n").unwrap();
    assert!(matches!(load_timeseries(&model, &unknown, 0), Err(Error::Core(DsseError::UnknownNode(_)))));
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "tick,node,phase,p,q,v\n").unwrap();
    assert!(load_timeseries(&model, &empty, 0).is_err());
}

#[test]
fn csv_exports_open_with_schema_line_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let model = three_phase(6);
    let sm = SensitivityModel::build_auto(&model);
    write_matrices(dir.path(), &model, &sm).unwrap();
    write_traces(&dir.path().join("traces.csv"), std::iter::empty::<(usize, &[dsse_core::estimator::TraceRow])>())
        .unwrap();
    for name in ["R.csv", "X.csv", "zagg.csv", "traces.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SCHEMA_LINE), "{name}");
        assert!(lines.next().is_some_and(|h| h.contains(',')), "{name}");
    }
    let text = fs::read_to_string(dir.path().join("R.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(2).unwrap().split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    assert_eq!(row.len(), sm.dim());
    for (b, v) in row.iter().enumerate() {
        assert_eq!(*v, sm.r()[(0, b)]);
    }
}

#[test]
fn message_log_digests_match_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let model = fig2_feeder(0).unwrap();
    let sm = SensitivityModel::build_single_phase(&model).unwrap();
    let placement = MeterPlacement::Nodes(FIG2_METERS.iter().map(|&n| (NodeId(n), None)).collect());
    let (ms, _) = synthesize(&model, &model.nominal_injections(), &NoisePolicy::default(), &placement, 0).unwrap();
    let roots: Vec<NodeId> = FIG2_ROOTS.iter().map(|&r| NodeId(r)).collect();
    let part = partition(&model, &roots).unwrap();
    let mut sys =
        MultiAreaSystem::new(&sm, &ms, &part, Feedback::Linear, StepSize::Auto, InProcessTransport::with_log())
            .unwrap();
    for _ in 0..3 {
        run_round(&mut sys).unwrap();
    }
    let messages = sys.transport.log().to_vec();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &messages).unwrap();
    let records = read_log(&path).unwrap();
    assert_eq!(records.len(), messages.len());
    for (r, m) in records.iter().zip(&messages) {
        let bytes = m.payload.to_bytes();
        assert_eq!(r.digest, hex::encode(Sha256::digest(&bytes)));
        assert_eq!(r.size, bytes.len());
        assert_eq!(r.round, m.round);
        assert_eq!(r.kind, m.payload.kind());
    }
    assert_eq!(records.iter().map(|r| r.round).max(), Some(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_feeders_survive_both_formats(seed in 0u64..10_000, size in 1usize..40, three in any::<bool>()) {
        let model = generate_feeder(&GeneratorSpec {
            size,
            seed,
            phase_mix: if three {
                PhaseMix::ThreePhase { lateral_fraction: 0.5, mutual_ratio: 0.3 }
            } else {
                PhaseMix::SinglePhase
            },
            ..GeneratorSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("f.json");
        save_feeder_json(&model, &json).unwrap();
        let csv = dir.path().join("csv");
        save_feeder_csv(&model, &csv).unwrap();
        let a = FeederDocument::from_model(&load_feeder(&json).unwrap());
        let b = FeederDocument::from_model(&load_feeder(&csv).unwrap());
        prop_assert_eq!(&a, &FeederDocument::from_model(&model));
        prop_assert_eq!(&a, &b);
    }
}
