//! Deterministic synthetic cities for tests and benchmarks.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geodesy::{self, EarthModel, GeoPoint};
use crate::ingest::{PointOfInterest, PopulationRegion, RawDirection, RawFeed, RawRoute, RawStop};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub center: GeoPoint,
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub route_count: usize,
    /// Stops per route, at most.
    pub route_len: usize,
    /// Share of lattice nodes that get a second stop a few meters away.
    pub twin_fraction: f64,
    pub poi_count: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 7,
            center: GeoPoint::clamped(43.70, -79.40),
            rows: 20,
            cols: 20,
            spacing_m: 400.0,
            route_count: 24,
            route_len: 25,
            twin_fraction: 0.1,
            poi_count: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCity {
    pub feed: RawFeed,
    pub population: Vec<PopulationRegion>,
    pub pois: Vec<PointOfInterest>,
}

const HEADWAYS_MIN: [f64; 7] = [5.0, 7.5, 10.0, 12.0, 15.0, 20.0, 30.0];

fn offset(origin: GeoPoint, north_m: f64, east_m: f64, model: &EarthModel) -> GeoPoint {
    let dlat = geodesy::meters_to_lat_degrees(north_m, origin.lat(), model);
    let dlon = geodesy::meters_to_lat_degrees(east_m, origin.lat(), model)
        / origin.lat().to_radians().cos();
    GeoPoint::clamped(origin.lat() + dlat, origin.lon() + dlon)
}

/// A jittered lattice city whose routes are self-avoiding lattice walks, run
/// in both directions. Twin stops sit 10 m from their lattice node and are
/// used at random by routes passing through it.
pub fn synth_city(params: &SynthParams) -> SynthCity {
    let model = EarthModel::WGS84;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (rows, cols, sp) = (params.rows.max(1), params.cols.max(1), params.spacing_m);
    let node = |r: usize, c: usize| {
        let north = (r as f64 - (rows - 1) as f64 / 2.0) * sp;
        let east = (c as f64 - (cols - 1) as f64 / 2.0) * sp;
        (north, east)
    };
    let mut stops = Vec::new();
    let mut twins = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (n, e) = node(r, c);
            let jn = rng.random_range(-0.1..0.1) * sp;
            let je = rng.random_range(-0.1..0.1) * sp;
            let loc = offset(params.center, n + jn, e + je, &model);
            let id = format!("S{r:03}{c:03}");
            stops.push(RawStop {
                name: format!("Stop {r}-{c}"),
                location: loc,
                merged_from: BTreeSet::from([id.clone()]),
                id: id.clone(),
            });
            if rng.random_bool(params.twin_fraction) {
                twins[r * cols + c] = true;
                let tid = format!("{id}T");
                stops.push(RawStop {
                    name: format!("Stop {r}-{c} (twin)"),
                    location: offset(loc, 10.0, 0.0, &model),
                    merged_from: BTreeSet::from([tid.clone()]),
                    id: tid,
                });
            }
        }
    }

    let mut routes = Vec::new();
    for k in 0..params.route_count {
        let (mut r, mut c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let mut seen = BTreeSet::from([(r, c)]);
        let mut walk = vec![(r, c)];
        while walk.len() < params.route_len {
            let mut next = Vec::new();
            if r > 0 {
                next.push((r - 1, c));
            }
            if r + 1 < rows {
                next.push((r + 1, c));
            }
            if c > 0 {
                next.push((r, c - 1));
            }
            if c + 1 < cols {
                next.push((r, c + 1));
            }
            next.retain(|p| !seen.contains(p));
            let Some(&p) = next.choose(&mut rng) else {
                break;
            };
            (r, c) = p;
            seen.insert(p);
            walk.push(p);
        }
        if walk.len() < 2 {
            continue;
        }
        let ids: Vec<String> = walk
            .iter()
            .map(|&(r, c)| {
                let base = format!("S{r:03}{c:03}");
                if twins[r * cols + c] && rng.random_bool(0.5) {
                    format!("{base}T")
                } else {
                    base
                }
            })
            .collect();
        let back: Vec<String> = ids.iter().rev().cloned().collect();
        routes.push(RawRoute {
            id: format!("R{k:02}"),
            name: format!("Line {k}"),
            headway_min: *HEADWAYS_MIN.choose(&mut rng).expect("nonempty"),
            directions: vec![
                RawDirection {
                    stops: ids,
                    leg_times_sec: None,
                },
                RawDirection {
                    stops: back,
                    leg_times_sec: None,
                },
            ],
        });
    }

    let mut population = Vec::new();
    for r in (0..rows).step_by(2) {
        for c in (0..cols).step_by(2) {
            let (n, e) = node(r, c);
            population.push(PopulationRegion {
                region_id: format!("N{r:03}{c:03}"),
                name: format!("Neighborhood {r}-{c}"),
                centroid: offset(params.center, n + sp / 2.0, e + sp / 2.0, &model),
                population: rng.random_range(100..5000),
                side_m: 2.0 * sp,
            });
        }
    }

    let half_n = rows as f64 * sp / 2.0;
    let half_e = cols as f64 * sp / 2.0;
    let pois = (0..params.poi_count)
        .map(|i| PointOfInterest {
            poi_id: format!("P{i:03}"),
            name: format!("Place {i}"),
            location: offset(
                params.center,
                rng.random_range(-half_n..half_n),
                rng.random_range(-half_e..half_e),
                &model,
            ),
        })
        .collect();

    SynthCity {
        feed: RawFeed {
            city_name: format!("synth-{}", params.seed),
            stops,
            routes,
        },
        population,
        pois,
    }
}

/// Small unstructured feed: stops scattered over a square of side `extent_m`,
/// routes visiting random distinct stops with whole-second leg times.
pub fn random_feed(
    rng: &mut impl Rng,
    stop_count: usize,
    route_count: usize,
    max_route_len: usize,
    extent_m: f64,
) -> RawFeed {
    let model = EarthModel::WGS84;
    let origin = GeoPoint::clamped(40.0, -74.0);
    let stops: Vec<RawStop> = (0..stop_count)
        .map(|i| {
            let id = format!("s{i:03}");
            RawStop {
                name: id.clone(),
                location: offset(
                    origin,
                    rng.random_range(0.0..extent_m),
                    rng.random_range(0.0..extent_m),
                    &model,
                ),
                merged_from: BTreeSet::from([id.clone()]),
                id,
            }
        })
        .collect();
    let routes = (0..route_count)
        .map(|k| {
            let len = rng.random_range(2..=max_route_len.clamp(2, stop_count.max(2)));
            let picks = rand::seq::index::sample(rng, stop_count, len.min(stop_count));
            let seq: Vec<String> = picks.iter().map(|i| stops[i].id.clone()).collect();
            let times: Vec<f64> = (1..seq.len())
                .map(|_| rng.random_range(30..=300) as f64)
                .collect();
            let mut directions = vec![RawDirection {
                stops: seq.clone(),
                leg_times_sec: Some(times.clone()),
            }];
            if rng.random_bool(0.5) {
                directions.push(RawDirection {
                    stops: seq.into_iter().rev().collect(),
                    leg_times_sec: Some(times.into_iter().rev().collect()),
                });
            }
            RawRoute {
                id: format!("r{k:02}"),
                name: format!("route {k}"),
                headway_min: *HEADWAYS_MIN.choose(rng).expect("nonempty"),
                directions,
            }
        })
        .collect();
    RawFeed {
        city_name: "random".into(),
        stops,
        routes,
    }
}
