use std::path::PathBuf;

use hydranet::data::record::{parse_point_csv_from, write_points_csv_to};
use hydranet::data::{self, clean_points, ingest_file, SynthConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn cleaning_matches_expected_file_row_by_row() {
    let raw = data::parse_point_csv(&fixture("raw_20.csv")).unwrap();
    assert_eq!(raw.len(), 20);
    let clean = clean_points(&raw).unwrap();
    let mut out = Vec::new();
    write_points_csv_to(&mut out, &clean).unwrap();
    let got = String::from_utf8(out).unwrap();
    let want = std::fs::read_to_string(fixture("clean_20_expected.csv")).unwrap();
    let (got_lines, want_lines): (Vec<_>, Vec<_>) = (got.lines().collect(), want.lines().collect());
    assert_eq!(got_lines.len(), want_lines.len());
    for (i, (g, w)) in got_lines.iter().zip(&want_lines).enumerate() {
        assert_eq!(g, w, "row {i}");
    }
}

#[test]
fn cleaned_records_roundtrip() {
    let clean = clean_points(&data::parse_point_csv(&fixture("raw_20.csv")).unwrap()).unwrap();
    let mut out = Vec::new();
    write_points_csv_to(&mut out, &clean).unwrap();
    let again = clean_points(&parse_point_csv_from(out.as_slice()).unwrap()).unwrap();
    assert_eq!(again, clean);

    let synth = data::generate_synthetic_records(3, 4, &SynthConfig::default()).unwrap();
    let ingested = data::ingest_records(synth, 4).unwrap();
    let mut out = Vec::new();
    write_points_csv_to(&mut out, &ingested.records).unwrap();
    let again = clean_points(&parse_point_csv_from(out.as_slice()).unwrap()).unwrap();
    assert_eq!(again, ingested.records);
}

#[test]
fn ingest_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let sub = dir.path().join(format!("run{run}"));
        ingest_file(&fixture("raw_20.csv"), 17).unwrap().write_to(&sub).unwrap();
        outputs.push((
            std::fs::read(sub.join("points.csv")).unwrap(),
            std::fs::read(sub.join("normalization.txt")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn ingested_fixture_is_normalized() {
    let ing = ingest_file(&fixture("raw_20.csv"), 1).unwrap();
    for r in &ing.records {
        let s = r.server().unwrap();
        let v = r.players[s].serve_speed.expect("imputed");
        assert!((-1.0..=1.0).contains(&v));
        assert!(r.players[1 - s].serve_speed.is_none());
    }
    let d: Vec<f64> = ing.records.iter().flat_map(|r| r.players.iter().map(|p| p.distance_run)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    assert!(mean.abs() < 1e-12);
    for s in ing.sequences().unwrap() {
        s.validate().unwrap();
    }
}

#[test]
fn synthetic_sequences_satisfy_invariants() {
    let seqs = data::generate_synthetic_matches(12, 3, &SynthConfig::default()).unwrap();
    assert_eq!(seqs.len(), 12);
    for s in &seqs {
        s.validate().unwrap();
        assert!(s.p1.iter().chain(&s.p2).all(|v| v.iter().all(|x| x.is_finite())));
    }
}
