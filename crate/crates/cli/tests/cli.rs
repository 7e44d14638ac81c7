use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transitnet_core::coverage::{PopulationMap, SampleConfig};
use transitnet_core::report::{self, ReportConfig, TableFormat, Tables};
use transitnet_core::{ingest, EarthModel, IngestOptions};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transitnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn build_writes_network_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("net.bin");
    let o = run(&[
        "build",
        "--snapshot",
        fixture("tiny.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let feed = ingest::load_snapshot(&out).unwrap();
    assert_eq!(feed.stops.len(), 2);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("net.bin.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "build");
    assert_eq!(manifest["sample"]["seed"], 42);
    assert_eq!(manifest["merge_threshold_m"], 30.0);
    assert_eq!(manifest["transfer_penalty_sec"], 300.0);
    assert!(manifest["tool_version"].is_string());
    assert!(manifest["duration_sec"].is_number());
}

#[test]
fn path_to_self_is_empty() {
    let o = run(&[
        "path",
        "--snapshot",
        fixture("tiny.json").to_str().unwrap(),
        "--from",
        "A",
        "--to",
        "A",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let p: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(p["edges"].as_array().unwrap().len(), 0);
    assert_eq!(p["transfers"], 0);
    assert_eq!(p["total_time_sec"], 0.0);
}

#[test]
fn path_accepts_merged_away_ids() {
    let o = run(&[
        "path",
        "--snapshot",
        fixture("city20.json").to_str().unwrap(),
        "--from",
        "C11T",
        "--to",
        "C10",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let p: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(p["stops"], serde_json::json!(["C11", "C10"]));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["metrics"]).status.code(), Some(2));
    assert_eq!(run(&["metrics", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&["metrics", "--snapshot", "/nonexistent/city.json"])
            .status
            .code(),
        Some(1)
    );
    let o = run(&[
        "path",
        "--snapshot",
        fixture("tiny.json").to_str().unwrap(),
        "--from",
        "A",
        "--to",
        "Q",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"Q\""));
    let o = run(&[
        "coverage",
        "--source",
        "population",
        "--snapshot",
        fixture("tiny.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_pipeline_equals_library_composition() {
    let dir = tempfile::tempdir().unwrap();
    let snap = fixture("city20.json");
    let pop = fixture("city20_population.csv");
    let pois = fixture("city20_pois.csv");
    let base = [
        "report",
        "--snapshot",
        snap.to_str().unwrap(),
        "--population",
        pop.to_str().unwrap(),
        "--pois",
        pois.to_str().unwrap(),
        "--samples",
        "1500",
        "--poi-starts",
        "150",
    ];

    let cfg = ReportConfig {
        sample: SampleConfig {
            sample_count: 1500,
            poi_start_count: 150,
            seed: 9,
            ..SampleConfig::default()
        },
        ..ReportConfig::default()
    };
    let opts = IngestOptions::default();
    let net = ingest::normalize(
        ingest::load_snapshot(&snap).unwrap(),
        EarthModel::WGS84,
        &opts,
        30.0,
    )
    .unwrap();
    let popmap = PopulationMap::new(ingest::load_population(&pop, &opts).unwrap()).unwrap();
    let pois_v = ingest::load_pois(&pois).unwrap();
    let expected = report::build_city_report(&net, &popmap, &pois_v, &cfg).unwrap();

    for (fmt, tf) in [("csv", TableFormat::Csv), ("json", TableFormat::Json)] {
        let out = dir.path().join(format!("report.{fmt}"));
        let mut args = base.to_vec();
        args.extend([
            "--seed",
            "9",
            "--format",
            fmt,
            "--out",
            out.to_str().unwrap(),
        ]);
        let o = run(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_eq!(
            std::fs::read_to_string(&out).unwrap(),
            report::render_tables(Tables::Report(&expected), tf)
        );
    }

    let json = dir.path().join("report.json");
    let other = dir.path().join("other.json");
    let mut args = base.to_vec();
    args.extend(["--seed", "10", "--out", other.to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(0));
    let o = run(&[
        "compare",
        "--report",
        json.to_str().unwrap(),
        "--report",
        other.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("metric,unit,better,best,sig_digits,Lattice,Lattice\r\n"));

    let mut args = base.to_vec();
    args.extend([
        "--seed",
        "9",
        "--walk-threshold",
        "300",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(run(&args).status.code(), Some(0));
    let o = run(&[
        "compare",
        "--report",
        json.to_str().unwrap(),
        "--report",
        other.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("walk_threshold_m"));
}

#[test]
fn single_analyses_run() {
    let snap = fixture("city20.json");
    let s = snap.to_str().unwrap();
    let pop = fixture("city20_population.csv");
    let pois = fixture("city20_pois.csv");
    for args in [
        vec!["metrics", "--snapshot", s],
        vec!["metrics", "--snapshot", s, "--format", "csv"],
        vec!["coverage", "--snapshot", s, "--samples", "500"],
        vec![
            "coverage",
            "--source",
            "population",
            "--population",
            pop.to_str().unwrap(),
            "--snapshot",
            s,
            "--samples",
            "500",
        ],
        vec![
            "trips",
            "--snapshot",
            s,
            "--samples",
            "300",
            "--wait-policy",
            "zero",
        ],
        vec![
            "access",
            "--snapshot",
            s,
            "--pois",
            pois.to_str().unwrap(),
            "--poi-starts",
            "50",
        ],
        vec!["bridges", "--snapshot", s, "--format", "csv"],
        vec!["export-geojson", "--snapshot", s],
    ] {
        let o = run(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!o.stdout.is_empty());
        let manifest: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(manifest["command"], args[0]);
    }
    let o = run(&["bridges", "--snapshot", s]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}
