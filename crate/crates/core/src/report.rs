//! Per-city reports, side-by-side comparison, table rendering and GeoJSON
//! export.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::coverage::{
    self, AccessResult, CoverageError, CoverageResult, PointSource, PopulationMap, SampleConfig,
    TripSummary,
};
use crate::ingest::{IngestOptions, PointOfInterest};
use crate::network::{self, NetworkError, TransitNetwork, DEFAULT_MERGE_THRESHOLD_M};
use crate::routing::RoutingParams;

pub const SCHEMA_VERSION: u32 = 1;
/// Significant digits used for numbers in CSV tables.
pub const SIG_DIGITS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("need at least 2 reports to compare, got {0}")]
    TooFewReports(usize),
    #[error("reports were produced with different settings: {}", .fields.join(", "))]
    Incomparable { fields: Vec<String> },
}

/// Everything that shaped a report besides the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub sample: SampleConfig,
    pub routing: RoutingParams,
    pub merge_threshold_m: f64,
    pub ingest: IngestOptions,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            sample: SampleConfig::default(),
            routing: RoutingParams::default(),
            merge_threshold_m: DEFAULT_MERGE_THRESHOLD_M,
            ingest: IngestOptions::default(),
        }
    }
}

impl ReportConfig {
    /// Names of settings that differ, ignoring the seed.
    pub fn differences(&self, other: &ReportConfig) -> Vec<String> {
        let (a, b) = (self, other);
        let checks = [
            (
                "sample_count",
                a.sample.sample_count == b.sample.sample_count,
            ),
            (
                "walk_threshold_m",
                a.sample.walk_threshold_m == b.sample.walk_threshold_m,
            ),
            (
                "service_bound_m",
                a.sample.service_bound_m == b.sample.service_bound_m,
            ),
            (
                "poi_start_count",
                a.sample.poi_start_count == b.sample.poi_start_count,
            ),
            (
                "walking_speed_m_per_min",
                a.sample.walking_speed_m_per_min == b.sample.walking_speed_m_per_min,
            ),
            (
                "transfer_penalty_sec",
                a.routing.transfer_penalty_sec == b.routing.transfer_penalty_sec,
            ),
            (
                "wait_policy",
                a.routing.wait_policy == b.routing.wait_policy,
            ),
            (
                "merge_threshold_m",
                a.merge_threshold_m == b.merge_threshold_m,
            ),
            (
                "default_speed_kmh",
                a.ingest.default_speed_kmh == b.ingest.default_speed_kmh,
            ),
            (
                "default_region_side_m",
                a.ingest.default_region_side_m == b.ingest.default_region_side_m,
            ),
        ];
        checks
            .iter()
            .filter(|(_, same)| !same)
            .map(|(n, _)| n.to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub config: ReportConfig,
    pub notes: Vec<String>,
}

const NOTES: [&str; 4] = [
    "per-connection time is in seconds and length in meters",
    "wait time per route is headway/2; mean and population standard deviation are unweighted over routes",
    "trip length includes the walks to and from the network",
    "distances to the closest stop saturate at the service bound",
];

/// Averages over single connections and routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionSummary {
    pub mean_connection_time_sec: f64,
    pub mean_connection_length_m: f64,
    pub mean_wait_time_min: f64,
    pub wait_time_stddev_min: f64,
}

pub fn connection_summary(net: &TransitNetwork) -> ConnectionSummary {
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let times: Vec<f64> = net
        .connections()
        .iter()
        .map(|c| c.travel_time_sec)
        .collect();
    let lengths: Vec<f64> = net.connections().iter().map(|c| c.length_m()).collect();
    let waits: Vec<f64> = net.routes().values().map(|r| r.headway_min / 2.0).collect();
    let w = mean(&waits);
    let var = mean(&waits.iter().map(|x| (x - w).powi(2)).collect::<Vec<_>>());
    ConnectionSummary {
        mean_connection_time_sec: mean(&times),
        mean_connection_length_m: mean(&lengths),
        mean_wait_time_min: w,
        wait_time_stddev_min: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityReport {
    pub schema_version: u32,
    pub city: String,
    pub structural: network::StructuralMetrics,
    pub area_trips: TripSummary,
    pub population_trips: TripSummary,
    pub area_coverage: CoverageResult,
    pub population_coverage: CoverageResult,
    pub per_connection: ConnectionSummary,
    pub poi_access: Option<AccessResult>,
    pub config_echo: ConfigEcho,
}

/// Runs every analysis on a normalized network. Access to points of interest
/// is measured from area samples and only when `pois` is nonempty.
pub fn build_city_report(
    network: &TransitNetwork,
    popmap: &PopulationMap,
    pois: &[PointOfInterest],
    config: &ReportConfig,
) -> Result<CityReport, ReportError> {
    let s = &config.sample;
    let r = &config.routing;
    let pop = PointSource::Population(popmap);
    let poi_access = if pois.is_empty() {
        None
    } else {
        Some(coverage::poi_access(
            network,
            pois,
            s,
            PointSource::Area,
            r,
        )?)
    };
    Ok(CityReport {
        schema_version: SCHEMA_VERSION,
        city: network.city().to_string(),
        structural: network::structural_metrics(network)?,
        area_trips: coverage::trip_metrics(network, s, PointSource::Area, r)?,
        population_trips: coverage::trip_metrics(network, s, pop, r)?,
        area_coverage: coverage::area_coverage(network, s)?,
        population_coverage: coverage::population_coverage(network, popmap, s)?,
        per_connection: connection_summary(network),
        poi_access,
        config_echo: ConfigEcho {
            config: config.clone(),
            notes: NOTES.iter().map(|n| n.to_string()).collect(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Better {
    Min,
    Max,
    /// Descriptive metric with no preferred direction.
    None,
}

impl Better {
    fn as_str(self) -> &'static str {
        match self {
            Better::Min => "min",
            Better::Max => "max",
            Better::None => "none",
        }
    }
}

/// One numeric report field with its display metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCell {
    pub metric: String,
    pub unit: &'static str,
    pub better: Better,
    pub value: Option<f64>,
}

fn trip_cells(prefix: &str, t: &TripSummary, out: &mut Vec<MetricCell>) {
    use Better::*;
    let rows = [
        ("mean_trip_time", "min", Min, t.mean_trip_time_min),
        ("mean_trip_length", "km", None, t.mean_trip_length_km),
        ("mean_transfers", "count", Min, t.mean_transfers),
        (
            "mean_straight_distance",
            "km",
            None,
            t.mean_straight_distance_km,
        ),
        (
            "trip_time_per_straight_km",
            "min/km",
            Min,
            t.trip_time_per_straight_km_min,
        ),
        (
            "transfers_per_straight_km",
            "1/km",
            Min,
            t.transfers_per_straight_km,
        ),
        ("trip_length_ratio", "ratio", Min, t.trip_length_ratio),
    ];
    push_rows(prefix, &rows, out);
}

fn coverage_cells(prefix: &str, c: &CoverageResult, out: &mut Vec<MetricCell>) {
    use Better::*;
    let rows = [
        (
            "mean_stops_within_threshold",
            "count",
            Max,
            c.mean_stops_within_threshold,
        ),
        (
            "stops_within_threshold_sd",
            "count",
            None,
            c.stops_within_threshold_sd,
        ),
        (
            "mean_distance_to_closest_stop",
            "m",
            Min,
            c.mean_distance_to_closest_stop_m,
        ),
        (
            "distance_to_closest_stop_sd",
            "m",
            None,
            c.distance_to_closest_stop_sd_m,
        ),
    ];
    push_rows(prefix, &rows, out);
}

fn push_rows(prefix: &str, rows: &[(&str, &'static str, Better, f64)], out: &mut Vec<MetricCell>) {
    out.extend(rows.iter().map(|&(m, unit, better, v)| MetricCell {
        metric: format!("{prefix}.{m}"),
        unit,
        better,
        value: Some(v),
    }));
}

/// The report's numbers in a fixed order.
pub fn metric_cells(report: &CityReport) -> Vec<MetricCell> {
    use Better::*;
    let s = &report.structural;
    let mut out = Vec::new();
    let cell = |m: &str, unit, better, value| MetricCell {
        metric: format!("structural.{m}"),
        unit,
        better,
        value,
    };
    out.push(cell("total_length", "km", None, Some(s.total_length_km)));
    out.push(cell(
        "total_travel_time",
        "h",
        None,
        Some(s.total_travel_time_h),
    ));
    out.push(cell("mean_speed", "km/h", Max, Some(s.mean_speed_kmh)));
    out.push(cell("stop_count", "count", None, Some(s.stop_count as f64)));
    out.push(cell(
        "route_count",
        "count",
        None,
        Some(s.route_count as f64),
    ));
    out.push(cell(
        "connected_pair_count",
        "count",
        None,
        Some(s.connected_pair_count as f64),
    ));
    out.push(cell(
        "component_count",
        "count",
        Min,
        Some(s.component_count as f64),
    ));
    out.push(cell(
        "bridge_count",
        "count",
        Min,
        Some(s.bridge_count as f64),
    ));
    out.push(cell(
        "avg_shortest_path_hops",
        "hops",
        Min,
        s.avg_shortest_path_hops,
    ));
    out.push(cell("avg_clustering", "ratio", None, s.avg_clustering));
    trip_cells("area_trips", &report.area_trips, &mut out);
    trip_cells("population_trips", &report.population_trips, &mut out);
    coverage_cells("area_coverage", &report.area_coverage, &mut out);
    coverage_cells("population_coverage", &report.population_coverage, &mut out);
    let c = &report.per_connection;
    push_rows(
        "per_connection",
        &[
            (
                "mean_connection_time",
                "s",
                None,
                c.mean_connection_time_sec,
            ),
            (
                "mean_connection_length",
                "m",
                None,
                c.mean_connection_length_m,
            ),
            ("mean_wait_time", "min", Min, c.mean_wait_time_min),
            ("wait_time_stddev", "min", None, c.wait_time_stddev_min),
        ],
        &mut out,
    );
    let a = report.poi_access.as_ref();
    out.push(MetricCell {
        metric: "poi_access.mean_access_time".into(),
        unit: "min",
        better: Min,
        value: a.map(|a| a.mean_access_time_min),
    });
    out.push(MetricCell {
        metric: "poi_access.mean_access_distance".into(),
        unit: "km",
        better: None,
        value: a.map(|a| a.mean_access_distance_km),
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub unit: String,
    pub better: Better,
    /// One cell per city, in the table's city order.
    pub values: Vec<Option<f64>>,
    /// Indices of every city attaining the best value; more than one is a tie.
    pub best: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub cities: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn best_of(values: &[Option<f64>], better: Better) -> Vec<usize> {
    let pick = match better {
        Better::Min => f64::min,
        Better::Max => f64::max,
        Better::None => return Vec::new(),
    };
    let Some(target) = values.iter().flatten().copied().reduce(pick) else {
        return Vec::new();
    };
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == Some(target))
        .map(|(i, _)| i)
        .collect()
}

pub fn compare_cities(reports: &[CityReport]) -> Result<ComparisonTable, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFewReports(reports.len()));
    }
    let base = &reports[0].config_echo.config;
    let mut fields: Vec<String> = Vec::new();
    for r in &reports[1..] {
        for f in base.differences(&r.config_echo.config) {
            if !fields.contains(&f) {
                fields.push(f);
            }
        }
    }
    if !fields.is_empty() {
        return Err(ReportError::Incomparable { fields });
    }
    let cells: Vec<Vec<MetricCell>> = reports.iter().map(metric_cells).collect();
    let rows = (0..cells[0].len())
        .map(|k| {
            let head = &cells[0][k];
            let values: Vec<Option<f64>> = cells.iter().map(|c| c[k].value).collect();
            ComparisonRow {
                metric: head.metric.clone(),
                unit: head.unit.to_string(),
                better: head.better,
                best: best_of(&values, head.better),
                values,
            }
        })
        .collect();
    Ok(ComparisonTable {
        cities: reports.iter().map(|r| r.city.clone()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy)]
pub enum Tables<'a> {
    Report(&'a CityReport),
    Comparison(&'a ComparisonTable),
}

/// Rounds to `sig` significant digits and prints without exponent.
pub fn format_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return String::new();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", sig.saturating_sub(1), x);
    let (_, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let rounded: f64 = sci.parse().expect("round trip");
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

fn cell_text(v: Option<f64>) -> String {
    v.map(|x| format_sig(x, SIG_DIGITS)).unwrap_or_default()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

/// CSV (RFC 4180, CRLF, numbers rounded to the digits in the `sig_digits`
/// column) or pretty JSON at full precision.
pub fn render_tables(input: Tables, format: TableFormat) -> String {
    match format {
        TableFormat::Json => {
            let mut s = match input {
                Tables::Report(r) => serde_json::to_string_pretty(r),
                Tables::Comparison(c) => serde_json::to_string_pretty(c),
            }
            .expect("serializable");
            s.push('\n');
            s
        }
        TableFormat::Csv => {
            let mut w = csv_writer();
            let sig = SIG_DIGITS.to_string();
            match input {
                Tables::Report(r) => {
                    w.write_record(["city", "metric", "unit", "better", "sig_digits", "value"])
                        .expect("write");
                    for c in metric_cells(r) {
                        w.write_record([
                            &r.city,
                            &c.metric,
                            c.unit,
                            c.better.as_str(),
                            &sig,
                            &cell_text(c.value),
                        ])
                        .expect("write");
                    }
                }
                Tables::Comparison(t) => {
                    let mut header: Vec<String> =
                        ["metric", "unit", "better", "best", "sig_digits"]
                            .map(String::from)
                            .to_vec();
                    header.extend(t.cities.iter().cloned());
                    w.write_record(&header).expect("write");
                    for row in &t.rows {
                        let best: Vec<&str> =
                            row.best.iter().map(|&i| t.cities[i].as_str()).collect();
                        let mut rec = vec![
                            row.metric.clone(),
                            row.unit.clone(),
                            row.better.as_str().to_string(),
                            best.join(";"),
                            sig.clone(),
                        ];
                        rec.extend(row.values.iter().map(|v| cell_text(*v)));
                        w.write_record(&rec).expect("write");
                    }
                }
            }
            finish(w)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GeoJsonOptions {
    pub include_bridges: bool,
}

/// Stops as Points and connections as two-position LineStrings, in
/// `[lon, lat]` order.
pub fn export_geojson(net: &TransitNetwork, options: GeoJsonOptions) -> Value {
    let pos = |p: crate::GeoPoint| json!([p.lon(), p.lat()]);
    let mut bridge = vec![false; net.connections().len()];
    if options.include_bridges {
        for b in network::find_bridges(net) {
            bridge[b] = true;
        }
    }
    let mut features: Vec<Value> = net
        .stops()
        .iter()
        .map(|s| {
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": pos(s.location) },
                "properties": {
                    "kind": "stop",
                    "id": s.id,
                    "name": s.name,
                    "routes": s.routes,
                    "merged_from": s.merged_from,
                },
            })
        })
        .collect();
    for (k, c) in net.connections().iter().enumerate() {
        let (u, v) = net.connection_ends(k);
        let mut props = json!({
            "kind": "connection",
            "a": c.a,
            "b": c.b,
            "routes": c.routes,
            "straight_distance_m": c.straight_distance_m,
            "travel_time_sec": c.travel_time_sec,
        });
        if options.include_bridges {
            props["bridge"] = json!(bridge[k]);
        }
        features.push(json!({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [pos(net.stops()[u].location), pos(net.stops()[v].location)],
            },
            "properties": props,
        }));
    }
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn geojson_string(net: &TransitNetwork, options: GeoJsonOptions) -> String {
    let mut s = serde_json::to_string_pretty(&export_geojson(net, options)).expect("serializable");
    s.push('\n');
    s
}
