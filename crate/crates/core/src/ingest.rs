//! Loading city snapshots, population regions and points of interest.
//!
//! A snapshot is a UTF-8 JSON document:
//!
//! ```text
//! {"city": "...",
//!  "stops":  [{"id", "name", "lat", "lon", "merged_from"?}],
//!  "routes": [{"id", "name", "headway_min",
//!              "directions": [{"stops": [id, ...], "leg_times_sec"?: [...]}]}]}
//! ```
//!
//! `leg_times_sec`, when present, has one entry per leg. `merged_from` is only
//! written for stops that absorbed others during normalization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{self, EarthModel, GeoPoint};
use crate::network::{
    self, build_network, Connection, NetworkError, Route, RouteDirection, Stop, TransitNetwork,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Syntax {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate {kind} id {id:?} ({record})")]
    DuplicateId {
        kind: &'static str,
        id: String,
        record: String,
    },
    #[error("{record}: references unknown stop {stop:?}")]
    DanglingStop { stop: String, record: String },
    #[error("{record}: sequence has {len} stop(s), need at least 2")]
    ShortSequence { record: String, len: usize },
    #[error("{record}: {message}")]
    InvalidRecord { record: String, message: String },
    #[error("{path}: unknown column {column:?}")]
    UnknownColumn { path: PathBuf, column: String },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: total population is zero")]
    EmptyPopulation { path: PathBuf },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawStop {
    pub id: String,
    pub name: String,
    pub location: GeoPoint,
    pub merged_from: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDirection {
    pub stops: Vec<String>,
    pub leg_times_sec: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRoute {
    pub id: String,
    pub name: String,
    pub headway_min: f64,
    pub directions: Vec<RawDirection>,
}

/// Validated snapshot contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeed {
    pub city_name: String,
    pub stops: Vec<RawStop>,
    pub routes: Vec<RawRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotDoc {
    pub city: String,
    pub stops: Vec<SnapshotStop>,
    pub routes: Vec<SnapshotRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotStop {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_from: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotRoute {
    pub id: String,
    pub name: String,
    pub headway_min: f64,
    pub directions: Vec<SnapshotDirection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotDirection {
    pub stops: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leg_times_sec: Option<Vec<f64>>,
}

/// Knobs for filling gaps in the input data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// In-vehicle speed for legs without a given travel time.
    pub default_speed_kmh: f64,
    /// Side of a population square when its area is not given.
    pub default_region_side_m: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            default_speed_kmh: 18.0,
            default_region_side_m: 1000.0,
        }
    }
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<RawFeed, IngestError> {
    let path = path.as_ref();
    parse_snapshot(&read(path)?, path)
}

/// Parses snapshot text; `origin` only labels error messages.
pub fn parse_snapshot(text: &str, origin: &Path) -> Result<RawFeed, IngestError> {
    let doc: SnapshotDoc = serde_json::from_str(text).map_err(|e| IngestError::Syntax {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate_snapshot(doc)
}

pub fn validate_snapshot(doc: SnapshotDoc) -> Result<RawFeed, IngestError> {
    let mut stop_ids = HashSet::new();
    let mut stops = Vec::with_capacity(doc.stops.len());
    for (i, s) in doc.stops.into_iter().enumerate() {
        let record = format!("stops[{i}] {:?}", s.id);
        if !stop_ids.insert(s.id.clone()) {
            return Err(IngestError::DuplicateId {
                kind: "stop",
                id: s.id,
                record,
            });
        }
        let location = GeoPoint::new(s.lat, s.lon).map_err(|e| IngestError::InvalidRecord {
            record: record.clone(),
            message: e.to_string(),
        })?;
        let merged_from = match s.merged_from {
            Some(list) if !list.is_empty() => list.into_iter().collect(),
            _ => BTreeSet::from([s.id.clone()]),
        };
        stops.push(RawStop {
            id: s.id,
            name: s.name,
            location,
            merged_from,
        });
    }

    let mut route_ids = HashSet::new();
    let mut routes = Vec::with_capacity(doc.routes.len());
    for (i, r) in doc.routes.into_iter().enumerate() {
        let record = format!("routes[{i}] {:?}", r.id);
        if !route_ids.insert(r.id.clone()) {
            return Err(IngestError::DuplicateId {
                kind: "route",
                id: r.id,
                record,
            });
        }
        if !(r.headway_min.is_finite() && r.headway_min > 0.0) {
            return Err(IngestError::InvalidRecord {
                record,
                message: format!("headway_min {} must be positive", r.headway_min),
            });
        }
        let mut directions = Vec::with_capacity(r.directions.len());
        for (d, dir) in r.directions.into_iter().enumerate() {
            let record = format!("{record} directions[{d}]");
            if dir.stops.len() < 2 {
                return Err(IngestError::ShortSequence {
                    record,
                    len: dir.stops.len(),
                });
            }
            if let Some(s) = dir.stops.iter().find(|s| !stop_ids.contains(*s)) {
                return Err(IngestError::DanglingStop {
                    stop: s.clone(),
                    record,
                });
            }
            if let Some(legs) = &dir.leg_times_sec {
                if legs.len() + 1 != dir.stops.len() {
                    return Err(IngestError::InvalidRecord {
                        record,
                        message: format!("{} leg times for {} stops", legs.len(), dir.stops.len()),
                    });
                }
                if legs.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(IngestError::InvalidRecord {
                        record,
                        message: "leg times must be finite and nonnegative".into(),
                    });
                }
            }
            directions.push(RawDirection {
                stops: dir.stops,
                leg_times_sec: dir.leg_times_sec,
            });
        }
        routes.push(RawRoute {
            id: r.id,
            name: r.name,
            headway_min: r.headway_min,
            directions,
        });
    }
    Ok(RawFeed {
        city_name: doc.city,
        stops,
        routes,
    })
}

impl RawFeed {
    pub fn to_doc(&self) -> SnapshotDoc {
        SnapshotDoc {
            city: self.city_name.clone(),
            stops: self
                .stops
                .iter()
                .map(|s| SnapshotStop {
                    id: s.id.clone(),
                    name: s.name.clone(),
                    lat: s.location.lat(),
                    lon: s.location.lon(),
                    merged_from: (s.merged_from.len() > 1 || !s.merged_from.contains(&s.id))
                        .then(|| s.merged_from.iter().cloned().collect()),
                })
                .collect(),
            routes: self
                .routes
                .iter()
                .map(|r| SnapshotRoute {
                    id: r.id.clone(),
                    name: r.name.clone(),
                    headway_min: r.headway_min,
                    directions: r
                        .directions
                        .iter()
                        .map(|d| SnapshotDirection {
                            stops: d.stops.clone(),
                            leg_times_sec: d.leg_times_sec.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_doc()).expect("snapshot serializes");
        s.push('\n');
        s
    }

    fn stop_location(&self) -> BTreeMap<&str, GeoPoint> {
        self.stops
            .iter()
            .map(|s| (s.id.as_str(), s.location))
            .collect()
    }
}

/// Leg travel time when the feed gives none.
fn fallback_leg_time(distance_m: f64, speed_kmh: f64) -> f64 {
    distance_m / (speed_kmh / 3.6)
}

/// Route metadata with every leg time filled in.
pub fn resolve_routes(feed: &RawFeed, model: &EarthModel, default_speed_kmh: f64) -> Vec<Route> {
    let loc = feed.stop_location();
    feed.routes
        .iter()
        .map(|r| Route {
            id: r.id.clone(),
            name: r.name.clone(),
            headway_min: r.headway_min,
            directions: r
                .directions
                .iter()
                .map(|d| RouteDirection {
                    stops: d.stops.clone(),
                    leg_times_sec: match &d.leg_times_sec {
                        Some(t) => t.clone(),
                        None => d
                            .stops
                            .windows(2)
                            .map(|w| {
                                let dist = geodesy::haversine_distance(
                                    loc[w[0].as_str()],
                                    loc[w[1].as_str()],
                                    model,
                                );
                                fallback_leg_time(dist, default_speed_kmh)
                            })
                            .collect(),
                    },
                })
                .collect(),
        })
        .collect()
}

/// One connection per unordered pair of consecutive stops in any direction.
/// Route sets are unioned; travel time is the fastest leg over the pair.
pub fn derive_connections(
    feed: &RawFeed,
    model: &EarthModel,
    default_speed_kmh: f64,
) -> Vec<Connection> {
    let loc = feed.stop_location();
    let mut pairs: BTreeMap<(String, String), Connection> = BTreeMap::new();
    for r in resolve_routes(feed, model, default_speed_kmh) {
        for d in &r.directions {
            for (k, w) in d.stops.windows(2).enumerate() {
                let (u, v) = (&w[0], &w[1]);
                let key = if u <= v {
                    (u.clone(), v.clone())
                } else {
                    (v.clone(), u.clone())
                };
                let time = d.leg_times_sec[k];
                if let Some(c) = pairs.get_mut(&key) {
                    c.routes.insert(r.id.clone());
                    c.travel_time_sec = c.travel_time_sec.min(time);
                    continue;
                }
                let dist = geodesy::haversine_distance(loc[u.as_str()], loc[v.as_str()], model);
                if dist == 0.0 && u != v {
                    log::warn!(
                        "stops {u:?} and {v:?} share a location; keeping zero-length connection"
                    );
                }
                pairs.insert(
                    key,
                    Connection::new(
                        u.clone(),
                        v.clone(),
                        BTreeSet::from([r.id.clone()]),
                        dist,
                        time,
                    ),
                );
            }
        }
    }
    pairs.into_values().collect()
}

/// Drops stops that no connection touches. Order of survivors is kept.
pub fn prune_isolated_stops(
    feed: RawFeed,
    connections: Vec<Connection>,
) -> (RawFeed, Vec<Connection>) {
    let used: HashSet<&str> = connections
        .iter()
        .flat_map(|c| [c.a.as_str(), c.b.as_str()])
        .collect();
    let stops = feed
        .stops
        .iter()
        .filter(|s| used.contains(s.id.as_str()))
        .cloned()
        .collect();
    (RawFeed { stops, ..feed }, connections)
}

/// Ingest, prune and assemble the network for a feed (no merging).
pub fn network_from_feed(
    feed: RawFeed,
    model: EarthModel,
    opts: &IngestOptions,
) -> Result<TransitNetwork, IngestError> {
    let connections = derive_connections(&feed, &model, opts.default_speed_kmh);
    let routes = resolve_routes(&feed, &model, opts.default_speed_kmh);
    let (feed, connections) = prune_isolated_stops(feed, connections);
    let mut served: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for r in &feed.routes {
        for d in &r.directions {
            for s in &d.stops {
                served.entry(s.as_str()).or_default().insert(r.id.clone());
            }
        }
    }
    let stops = feed
        .stops
        .iter()
        .map(|s| Stop {
            id: s.id.clone(),
            name: s.name.clone(),
            location: s.location,
            routes: served.remove(s.id.as_str()).unwrap_or_default(),
            merged_from: s.merged_from.clone(),
        })
        .collect();
    Ok(build_network(
        feed.city_name.clone(),
        stops,
        connections,
        routes,
        model,
    )?)
}

/// Full normalization: ingest, prune, assemble, merge near-coincident stops.
pub fn normalize(
    feed: RawFeed,
    model: EarthModel,
    opts: &IngestOptions,
    merge_threshold_m: f64,
) -> Result<TransitNetwork, IngestError> {
    let net = network_from_feed(feed, model, opts)?;
    Ok(network::merge_nearby_stops(&net, merge_threshold_m)?)
}

/// Re-emits a network as a snapshot with explicit leg times.
pub fn network_to_feed(net: &TransitNetwork) -> RawFeed {
    RawFeed {
        city_name: net.city().to_string(),
        stops: net
            .stops()
            .iter()
            .map(|s| RawStop {
                id: s.id.clone(),
                name: s.name.clone(),
                location: s.location,
                merged_from: s.merged_from.clone(),
            })
            .collect(),
        routes: net
            .routes()
            .values()
            .map(|r| RawRoute {
                id: r.id.clone(),
                name: r.name.clone(),
                headway_min: r.headway_min,
                directions: r
                    .directions
                    .iter()
                    .map(|d| RawDirection {
                        stops: d.stops.clone(),
                        leg_times_sec: Some(d.leg_times_sec.clone()),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Neighborhood approximated by a square around its centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRegion {
    pub region_id: String,
    pub name: String,
    pub centroid: GeoPoint,
    pub population: u64,
    pub side_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOfInterest {
    pub poi_id: String,
    pub name: String,
    pub location: GeoPoint,
}

const POPULATION_COLUMNS: [&str; 6] = [
    "region_id",
    "name",
    "centroid_lat",
    "centroid_lon",
    "population",
    "area_km2",
];
const POI_COLUMNS: [&str; 4] = ["poi_id", "name", "lat", "lon"];

/// Maps each required column to its position; rejects unknown columns.
fn column_map(
    path: &Path,
    headers: &csv::StringRecord,
    known: &[&str],
    optional: &[&str],
) -> Result<Vec<Option<usize>>, IngestError> {
    for h in headers.iter() {
        if !known.contains(&h) {
            return Err(IngestError::UnknownColumn {
                path: path.into(),
                column: h.into(),
            });
        }
    }
    known
        .iter()
        .map(|k| {
            let pos = headers.iter().position(|h| h == *k);
            if pos.is_none() && !optional.contains(k) {
                return Err(IngestError::MissingColumn {
                    path: path.into(),
                    column: (*k).into(),
                });
            }
            Ok(pos)
        })
        .collect()
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn field(rec: &csv::StringRecord, pos: Option<usize>) -> &str {
    pos.and_then(|p| rec.get(p)).unwrap_or("")
}

fn parse_f64(path: &Path, row: usize, name: &str, raw: &str) -> Result<f64, IngestError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::Row {
            path: path.into(),
            row,
            message: format!("{name}: cannot parse {raw:?} as a number"),
        })
}

pub fn load_population(
    path: impl AsRef<Path>,
    opts: &IngestOptions,
) -> Result<Vec<PopulationRegion>, IngestError> {
    let path = path.as_ref();
    parse_population(&read(path)?, path, opts)
}

pub fn parse_population(
    text: &str,
    path: &Path,
    opts: &IngestOptions,
) -> Result<Vec<PopulationRegion>, IngestError> {
    let mut rdr = csv_reader(text);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Row {
            path: path.into(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = column_map(path, &headers, &POPULATION_COLUMNS, &["area_km2"])?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = i + 2;
        let row_err = |message: String| IngestError::Row {
            path: path.into(),
            row,
            message,
        };
        let rec = rec.map_err(|e| row_err(e.to_string()))?;
        let region_id = field(&rec, cols[0]).to_string();
        if region_id.is_empty() {
            return Err(row_err("empty region_id".into()));
        }
        if !ids.insert(region_id.clone()) {
            return Err(row_err(format!("duplicate region_id {region_id:?}")));
        }
        let lat = parse_f64(path, row, "centroid_lat", field(&rec, cols[2]))?;
        let lon = parse_f64(path, row, "centroid_lon", field(&rec, cols[3]))?;
        let centroid = GeoPoint::new(lat, lon).map_err(|e| row_err(e.to_string()))?;
        let raw_pop = field(&rec, cols[4]);
        let population = match raw_pop.parse::<i64>() {
            Ok(p) if p < 0 => return Err(row_err(format!("negative population {p}"))),
            Ok(p) => p as u64,
            Err(_) => return Err(row_err(format!("population: cannot parse {raw_pop:?}"))),
        };
        let raw_area = field(&rec, cols[5]);
        let side_m = if raw_area.is_empty() {
            opts.default_region_side_m
        } else {
            let area = parse_f64(path, row, "area_km2", raw_area)?;
            if area <= 0.0 {
                return Err(row_err(format!("area_km2 {area} must be positive")));
            }
            area.sqrt() * 1000.0
        };
        out.push(PopulationRegion {
            region_id,
            name: field(&rec, cols[1]).to_string(),
            centroid,
            population,
            side_m,
        });
    }
    if out.iter().map(|r| r.population).sum::<u64>() == 0 {
        return Err(IngestError::EmptyPopulation { path: path.into() });
    }
    Ok(out)
}

pub fn load_pois(path: impl AsRef<Path>) -> Result<Vec<PointOfInterest>, IngestError> {
    let path = path.as_ref();
    parse_pois(&read(path)?, path)
}

pub fn parse_pois(text: &str, path: &Path) -> Result<Vec<PointOfInterest>, IngestError> {
    let mut rdr = csv_reader(text);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Row {
            path: path.into(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let cols = column_map(path, &headers, &POI_COLUMNS, &[])?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let row_err = |message: String| IngestError::Row {
            path: path.into(),
            row,
            message,
        };
        let rec = rec.map_err(|e| row_err(e.to_string()))?;
        let poi_id = field(&rec, cols[0]).to_string();
        if poi_id.is_empty() {
            return Err(row_err("empty poi_id".into()));
        }
        if !ids.insert(poi_id.clone()) {
            return Err(row_err(format!("duplicate poi_id {poi_id:?}")));
        }
        let lat = parse_f64(path, row, "lat", field(&rec, cols[2]))?;
        let lon = parse_f64(path, row, "lon", field(&rec, cols[3]))?;
        let location = GeoPoint::new(lat, lon).map_err(|e| row_err(e.to_string()))?;
        out.push(PointOfInterest {
            poi_id,
            name: field(&rec, cols[1]).to_string(),
            location,
        });
    }
    Ok(out)
}

pub fn write_pois(pois: &[PointOfInterest]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(POI_COLUMNS).expect("in-memory write");
    for p in pois {
        w.write_record([
            p.poi_id.clone(),
            p.name.clone(),
            p.location.lat().to_string(),
            p.location.lon().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
