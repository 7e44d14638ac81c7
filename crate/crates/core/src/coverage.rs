//! Seeded Monte Carlo estimates over a city: stop coverage of the service
//! area or of the population, door-to-door trip statistics, and access time
//! to the nearest point of interest.
//!
//! Every sample `i` draws from its own ChaCha stream keyed by
//! `(seed, purpose, i)`, and per-sample results are reduced in index order, so
//! the output does not depend on how the index space is split across threads.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{self, GeoBounds, GeoError, GeoPoint, SpatialGrid};
use crate::ingest::{PointOfInterest, PopulationRegion};
use crate::network::TransitNetwork;
use crate::routing::{Router, RoutingParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverageError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("network has no stops")]
    EmptyNetwork,
    #[error("service area too small to sample: {accepted} of {probed} probe points accepted")]
    DegenerateGeometry { accepted: usize, probed: usize },
    #[error("{unreachable} of {total} sampled trips could not be routed (limit 10%)")]
    DataQuality { unreachable: usize, total: usize },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub sample_count: usize,
    pub walk_threshold_m: f64,
    pub service_bound_m: f64,
    pub poi_start_count: usize,
    pub seed: u64,
    pub walking_speed_m_per_min: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            sample_count: 10_000,
            walk_threshold_m: 400.0,
            service_bound_m: 800.0,
            poi_start_count: 1_000,
            seed: 42,
            walking_speed_m_per_min: 80.0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), CoverageError> {
        let bad = |m: String| Err(CoverageError::InvalidArgument(m));
        if self.sample_count == 0 {
            return bad("sample_count must be positive".into());
        }
        if !(self.walk_threshold_m > 0.0 && self.walk_threshold_m <= self.service_bound_m)
            || !self.service_bound_m.is_finite()
        {
            return bad(format!(
                "need 0 < walk threshold ({}) <= service bound ({})",
                self.walk_threshold_m, self.service_bound_m
            ));
        }
        if !(self.walking_speed_m_per_min.is_finite() && self.walking_speed_m_per_min > 0.0) {
            return bad("walking speed must be positive".into());
        }
        Ok(())
    }
}

/// Neighborhood squares weighted by population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMap {
    regions: Vec<PopulationRegion>,
    squares: Vec<GeoBounds>,
    total_population: u64,
}

impl PopulationMap {
    pub fn new(regions: Vec<PopulationRegion>) -> Result<PopulationMap, CoverageError> {
        let total_population = regions.iter().map(|r| r.population).sum();
        if total_population == 0 {
            return Err(CoverageError::InvalidArgument(
                "total population is zero".into(),
            ));
        }
        let model = crate::EarthModel::WGS84;
        let squares = regions
            .iter()
            .map(|r| {
                if !(r.side_m.is_finite() && r.side_m > 0.0) {
                    return Err(CoverageError::InvalidArgument(format!(
                        "region {:?} has side {}",
                        r.region_id, r.side_m
                    )));
                }
                Ok(geodesy::bounding_square(
                    r.centroid,
                    r.side_m / 2.0,
                    &model,
                )?)
            })
            .collect::<Result<_, CoverageError>>()?;
        Ok(PopulationMap {
            regions,
            squares,
            total_population,
        })
    }

    pub fn regions(&self) -> &[PopulationRegion] {
        &self.regions
    }

    pub fn total_population(&self) -> u64 {
        self.total_population
    }

    /// The lat/lon square samples for region `i` are drawn from.
    pub fn square(&self, i: usize) -> &GeoBounds {
        &self.squares[i]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PointSource<'a> {
    Area,
    Population(&'a PopulationMap),
}

impl PointSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PointSource::Area => "area",
            PointSource::Population(_) => "population",
        }
    }
}

const PURPOSE_PROBE: u64 = 0;
const PURPOSE_AREA: u64 = 1;
const PURPOSE_POPULATION: u64 = 2;
const PURPOSE_TRIPS: u64 = 3;
const PURPOSE_POI: u64 = 4;

fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

fn uniform_in(bounds: &GeoBounds, rng: &mut impl Rng) -> GeoPoint {
    let lat = bounds.min_lat + (bounds.max_lat - bounds.min_lat) * rng.random::<f64>();
    let lon = bounds.min_lon + (bounds.max_lon - bounds.min_lon) * rng.random::<f64>();
    GeoPoint::clamped(lat, lon)
}

const PROBE_BATCH: usize = 10_000;
const MIN_ACCEPTANCE: f64 = 1e-4;
const MAX_ATTEMPTS: usize = 1_000_000;

/// Stop locations plus their grid, shared by all per-sample work.
struct StopIndex<'a> {
    network: &'a TransitNetwork,
    points: Vec<GeoPoint>,
    grid: SpatialGrid,
}

impl<'a> StopIndex<'a> {
    fn new(network: &'a TransitNetwork) -> Result<Self, CoverageError> {
        if network.is_empty() {
            return Err(CoverageError::EmptyNetwork);
        }
        let points = network.locations();
        let grid = SpatialGrid::with_default_cells(&points, network.model());
        Ok(StopIndex {
            network,
            points,
            grid,
        })
    }

    fn within(&self, p: GeoPoint, radius_m: f64) -> Result<Vec<(usize, f64)>, GeoError> {
        geodesy::stops_within_radius(&self.grid, &self.points, p, radius_m, self.network.model())
    }

    fn nearest(&self, p: GeoPoint, hint_m: f64) -> (usize, f64) {
        geodesy::nearest_point(&self.grid, &self.points, p, hint_m, self.network.model())
            .expect("index is nonempty")
    }
}

enum Sampler<'a> {
    Area {
        bounds: GeoBounds,
        index: &'a StopIndex<'a>,
        bound_m: f64,
    },
    Population {
        map: &'a PopulationMap,
        weights: WeightedIndex<u64>,
    },
}

impl<'a> Sampler<'a> {
    fn new(
        source: PointSource<'a>,
        index: &'a StopIndex<'a>,
        config: &SampleConfig,
    ) -> Result<Sampler<'a>, CoverageError> {
        match source {
            PointSource::Area => {
                let bounds = GeoBounds::enclosing(&index.points)
                    .expect("nonempty")
                    .expanded(config.service_bound_m, index.network.model())?;
                let sampler = Sampler::Area {
                    bounds,
                    index,
                    bound_m: config.service_bound_m,
                };
                let mut rng = stream_rng(config.seed, PURPOSE_PROBE, 0);
                let mut accepted = 0;
                for _ in 0..PROBE_BATCH {
                    if sampler.accepts(uniform_in(&bounds, &mut rng))? {
                        accepted += 1;
                    }
                }
                if (accepted as f64) < MIN_ACCEPTANCE * PROBE_BATCH as f64 {
                    return Err(CoverageError::DegenerateGeometry {
                        accepted,
                        probed: PROBE_BATCH,
                    });
                }
                Ok(sampler)
            }
            PointSource::Population(map) => {
                let weights = WeightedIndex::new(map.regions.iter().map(|r| r.population))
                    .map_err(|e| CoverageError::InvalidArgument(e.to_string()))?;
                Ok(Sampler::Population { map, weights })
            }
        }
    }

    fn accepts(&self, p: GeoPoint) -> Result<bool, CoverageError> {
        match self {
            Sampler::Area { index, bound_m, .. } => Ok(!index.within(p, *bound_m)?.is_empty()),
            Sampler::Population { .. } => Ok(true),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<GeoPoint, CoverageError> {
        match self {
            Sampler::Area { bounds, .. } => {
                for _ in 0..MAX_ATTEMPTS {
                    let p = uniform_in(bounds, rng);
                    if self.accepts(p)? {
                        return Ok(p);
                    }
                }
                Err(CoverageError::DegenerateGeometry {
                    accepted: 0,
                    probed: MAX_ATTEMPTS,
                })
            }
            Sampler::Population { map, weights } => {
                let region = weights.sample(rng);
                Ok(uniform_in(&map.squares[region], rng))
            }
        }
    }
}

fn source_purpose(source: &PointSource) -> u64 {
    match source {
        PointSource::Area => PURPOSE_AREA,
        PointSource::Population(_) => PURPOSE_POPULATION,
    }
}

/// Uniform lat/lon samples from the stops' bounding box grown by the service
/// bound, keeping only points within the service bound of some stop.
pub fn sample_area_points(
    network: &TransitNetwork,
    config: &SampleConfig,
) -> Result<Vec<GeoPoint>, CoverageError> {
    config.validate()?;
    let index = StopIndex::new(network)?;
    let sampler = Sampler::new(PointSource::Area, &index, config)?;
    draw_points(&sampler, config, PURPOSE_AREA)
}

/// Region picked with probability proportional to population, then a uniform
/// point inside its square.
pub fn sample_population_points(
    popmap: &PopulationMap,
    config: &SampleConfig,
) -> Result<Vec<GeoPoint>, CoverageError> {
    config.validate()?;
    let weights = WeightedIndex::new(popmap.regions.iter().map(|r| r.population))
        .map_err(|e| CoverageError::InvalidArgument(e.to_string()))?;
    let sampler = Sampler::Population {
        map: popmap,
        weights,
    };
    draw_points(&sampler, config, PURPOSE_POPULATION)
}

fn draw_points(
    sampler: &Sampler,
    config: &SampleConfig,
    purpose: u64,
) -> Result<Vec<GeoPoint>, CoverageError> {
    (0..config.sample_count)
        .into_par_iter()
        .map(|i| sampler.draw(&mut stream_rng(config.seed, purpose, i as u64)))
        .collect()
}

/// Mean and sample standard deviation.
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub mean_stops_within_threshold: f64,
    pub stops_within_threshold_sd: f64,
    pub mean_distance_to_closest_stop_m: f64,
    pub distance_to_closest_stop_sd_m: f64,
    pub samples_used: usize,
    pub config: SampleConfig,
}

/// Stop count within the walk threshold and distance to the nearest stop for
/// one point. The distance saturates at the service bound.
pub fn point_coverage(
    network: &TransitNetwork,
    point: GeoPoint,
    config: &SampleConfig,
) -> Result<(usize, f64), CoverageError> {
    let index = StopIndex::new(network)?;
    evaluate_point(&index, point, config)
}

fn evaluate_point(
    index: &StopIndex,
    p: GeoPoint,
    config: &SampleConfig,
) -> Result<(usize, f64), CoverageError> {
    let near = index.within(p, config.walk_threshold_m)?;
    if let Some(&(_, d)) = near.first() {
        return Ok((near.len(), d));
    }
    let wider = index.within(p, config.service_bound_m)?;
    Ok((0, wider.first().map_or(config.service_bound_m, |&(_, d)| d)))
}

fn coverage_over(
    network: &TransitNetwork,
    config: &SampleConfig,
    source: PointSource,
) -> Result<CoverageResult, CoverageError> {
    config.validate()?;
    let index = StopIndex::new(network)?;
    let sampler = Sampler::new(source, &index, config)?;
    let purpose = source_purpose(&source);
    let per_point: Vec<(usize, f64)> = (0..config.sample_count)
        .into_par_iter()
        .map(|i| {
            let p = sampler.draw(&mut stream_rng(config.seed, purpose, i as u64))?;
            evaluate_point(&index, p, config)
        })
        .collect::<Result<_, CoverageError>>()?;
    let counts: Vec<f64> = per_point.iter().map(|&(c, _)| c as f64).collect();
    let dists: Vec<f64> = per_point.iter().map(|&(_, d)| d).collect();
    let (mc, sc) = mean_sd(&counts);
    let (md, sd) = mean_sd(&dists);
    Ok(CoverageResult {
        mean_stops_within_threshold: mc,
        stops_within_threshold_sd: sc,
        mean_distance_to_closest_stop_m: md,
        distance_to_closest_stop_sd_m: sd,
        samples_used: per_point.len(),
        config: *config,
    })
}

pub fn area_coverage(
    network: &TransitNetwork,
    config: &SampleConfig,
) -> Result<CoverageResult, CoverageError> {
    coverage_over(network, config, PointSource::Area)
}

pub fn population_coverage(
    network: &TransitNetwork,
    popmap: &PopulationMap,
    config: &SampleConfig,
) -> Result<CoverageResult, CoverageError> {
    coverage_over(network, config, PointSource::Population(popmap))
}

/// One door-to-door trip: walk to the nearest stop, ride, walk from the
/// nearest stop of the destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSample {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub trip_time_min: f64,
    pub trip_length_km: f64,
    pub transfers: usize,
    pub straight_distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSummary {
    pub mean_trip_time_min: f64,
    pub trip_time_sd_min: f64,
    pub mean_trip_length_km: f64,
    pub mean_transfers: f64,
    pub mean_straight_distance_km: f64,
    pub trip_time_per_straight_km_min: f64,
    pub transfers_per_straight_km: f64,
    pub trip_length_ratio: f64,
    pub samples_used: usize,
    pub unreachable_pairs: usize,
}

impl TripSummary {
    /// Per-kilometer normalizations divide by the mean straight-line
    /// origin-destination distance.
    pub fn from_means(
        mean_trip_time_min: f64,
        mean_trip_length_km: f64,
        mean_transfers: f64,
        mean_straight_distance_km: f64,
    ) -> TripSummary {
        TripSummary {
            mean_trip_time_min,
            trip_time_sd_min: 0.0,
            mean_trip_length_km,
            mean_transfers,
            mean_straight_distance_km,
            trip_time_per_straight_km_min: mean_trip_time_min / mean_straight_distance_km,
            transfers_per_straight_km: mean_transfers / mean_straight_distance_km,
            trip_length_ratio: mean_trip_length_km / mean_straight_distance_km,
            samples_used: 0,
            unreachable_pairs: 0,
        }
    }
}

/// Per-index trip samples; `None` where the stops are not connected.
pub fn sample_trips(
    network: &TransitNetwork,
    config: &SampleConfig,
    source: PointSource,
    params: &RoutingParams,
) -> Result<Vec<Option<TripSample>>, CoverageError> {
    config.validate()?;
    let index = StopIndex::new(network)?;
    let sampler = Sampler::new(source, &index, config)?;
    let router = Router::new(network);
    let model = network.model();
    let speed = config.walking_speed_m_per_min;
    let salt = source_purpose(&source) << 32;
    (0..config.sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, PURPOSE_TRIPS, salt | i as u64);
            let origin = sampler.draw(&mut rng)?;
            let destination = sampler.draw(&mut rng)?;
            let (os, ow) = index.nearest(origin, config.service_bound_m);
            let (ds, dw) = index.nearest(destination, config.service_bound_m);
            let Some(path) = router.path(os, ds, params) else {
                return Ok(None);
            };
            Ok(Some(TripSample {
                origin,
                destination,
                trip_time_min: (ow + dw) / speed + path.total_time_sec / 60.0,
                trip_length_km: (ow + path.total_length_m + dw) / 1000.0,
                transfers: path.transfers,
                straight_distance_km: geodesy::haversine_distance(origin, destination, model)
                    / 1000.0,
            }))
        })
        .collect()
}

/// Means over routed trips. Fails when more than 10% of pairs are unreachable.
pub fn summarize_trips(samples: &[Option<TripSample>]) -> Result<TripSummary, CoverageError> {
    let routed: Vec<&TripSample> = samples.iter().flatten().collect();
    let unreachable = samples.len() - routed.len();
    if routed.is_empty() || unreachable * 10 > samples.len() {
        return Err(CoverageError::DataQuality {
            unreachable,
            total: samples.len(),
        });
    }
    let n = routed.len() as f64;
    let times: Vec<f64> = routed.iter().map(|t| t.trip_time_min).collect();
    let (mean_time, sd_time) = mean_sd(&times);
    let length = routed.iter().map(|t| t.trip_length_km).sum::<f64>() / n;
    let transfers = routed.iter().map(|t| t.transfers as f64).sum::<f64>() / n;
    let straight = routed.iter().map(|t| t.straight_distance_km).sum::<f64>() / n;
    if straight <= 0.0 {
        return Err(CoverageError::InvalidArgument(
            "all sampled trips have zero straight-line length".into(),
        ));
    }
    Ok(TripSummary {
        trip_time_sd_min: sd_time,
        samples_used: routed.len(),
        unreachable_pairs: unreachable,
        ..TripSummary::from_means(mean_time, length, transfers, straight)
    })
}

/// Random origin-destination trips; origins and destinations are independent
/// draws from `source`.
pub fn trip_metrics(
    network: &TransitNetwork,
    config: &SampleConfig,
    source: PointSource,
    params: &RoutingParams,
) -> Result<TripSummary, CoverageError> {
    summarize_trips(&sample_trips(network, config, source, params)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessResult {
    pub mean_access_time_min: f64,
    pub access_time_sd_min: f64,
    pub mean_access_distance_km: f64,
    pub samples_used: usize,
    /// Starts from which no point of interest could be reached.
    pub unreachable_starts: usize,
}

/// Best (time, distance) to any point of interest from one start, or `None`
/// if none is reachable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessSample {
    pub poi: usize,
    pub time_min: f64,
    pub distance_km: f64,
}

pub fn sample_access(
    network: &TransitNetwork,
    pois: &[PointOfInterest],
    config: &SampleConfig,
    source: PointSource,
    params: &RoutingParams,
) -> Result<Vec<(GeoPoint, Option<AccessSample>)>, CoverageError> {
    config.validate()?;
    if pois.is_empty() {
        return Err(CoverageError::InvalidArgument(
            "no points of interest".into(),
        ));
    }
    if config.poi_start_count == 0 {
        return Err(CoverageError::InvalidArgument(
            "poi_start_count must be positive".into(),
        ));
    }
    let index = StopIndex::new(network)?;
    let sampler = Sampler::new(source, &index, config)?;
    let router = Router::new(network);
    let speed = config.walking_speed_m_per_min;
    let poi_stops: Vec<(usize, f64)> = pois
        .iter()
        .map(|p| index.nearest(p.location, config.service_bound_m))
        .collect();
    let salt = source_purpose(&source) << 32;
    (0..config.poi_start_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, PURPOSE_POI, salt | i as u64);
            let start = sampler.draw(&mut rng)?;
            let (s, walk_in) = index.nearest(start, config.service_bound_m);
            let tree = router.search(s, params.transfer_penalty_sec, None);
            let mut best: Option<AccessSample> = None;
            for (j, &(q, walk_out)) in poi_stops.iter().enumerate() {
                let Some(path) = router.finish(&tree, q, params) else {
                    continue;
                };
                let time_min = (walk_in + walk_out) / speed + path.total_time_sec / 60.0;
                if best.is_none_or(|b| time_min < b.time_min) {
                    best = Some(AccessSample {
                        poi: j,
                        time_min,
                        distance_km: (walk_in + path.total_length_m + walk_out) / 1000.0,
                    });
                }
            }
            Ok((start, best))
        })
        .collect()
}

/// Mean time to the nearest point of interest, chosen by total door-to-door
/// time rather than straight-line distance.
pub fn poi_access(
    network: &TransitNetwork,
    pois: &[PointOfInterest],
    config: &SampleConfig,
    source: PointSource,
    params: &RoutingParams,
) -> Result<AccessResult, CoverageError> {
    let samples = sample_access(network, pois, config, source, params)?;
    let reached: Vec<AccessSample> = samples.iter().filter_map(|(_, s)| *s).collect();
    let times: Vec<f64> = reached.iter().map(|s| s.time_min).collect();
    let (mean, sd) = mean_sd(&times);
    let dist = if reached.is_empty() {
        0.0
    } else {
        reached.iter().map(|s| s.distance_km).sum::<f64>() / reached.len() as f64
    };
    Ok(AccessResult {
        mean_access_time_min: mean,
        access_time_sd_min: sd,
        mean_access_distance_km: dist,
        samples_used: reached.len(),
        unreachable_starts: samples.len() - reached.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::EarthModel;
    use crate::network::{build_network, Connection, Route, RouteDirection, Stop};
    use crate::routing::WaitPolicy;
    use std::collections::BTreeSet;

    const M: EarthModel = EarthModel::WGS84;

    fn one_stop() -> TransitNetwork {
        let s = Stop::new("A", "A", GeoPoint::new(43.65, -79.38).unwrap());
        build_network("t", vec![s], vec![], vec![], M).unwrap()
    }

    fn two_stop() -> TransitNetwork {
        let a = GeoPoint::new(43.65, -79.38).unwrap();
        let b = GeoPoint::new(43.67, -79.38).unwrap();
        let d = geodesy::haversine_distance(a, b, &M);
        let stops = vec![Stop::new("A", "A", a), Stop::new("B", "B", b)];
        let c = Connection::new("A", "B", BTreeSet::from(["1".to_string()]), d, 300.0);
        let r = Route {
            id: "1".into(),
            name: "1".into(),
            headway_min: 10.0,
            directions: vec![RouteDirection {
                stops: vec!["A".into(), "B".into()],
                leg_times_sec: vec![300.0],
            }],
        };
        build_network("t", stops, vec![c], vec![r], M).unwrap()
    }

    fn cfg(n: usize) -> SampleConfig {
        SampleConfig {
            sample_count: n,
            ..SampleConfig::default()
        }
    }

    #[test]
    fn area_samples_stay_in_service_area_and_repeat() {
        let net = one_stop();
        let stop = net.stops()[0].location;
        let pts = sample_area_points(&net, &cfg(2000)).unwrap();
        assert_eq!(pts.len(), 2000);
        assert!(pts
            .iter()
            .all(|p| geodesy::haversine_distance(*p, stop, &M) <= 800.0));
        assert_eq!(pts, sample_area_points(&net, &cfg(2000)).unwrap());
    }

    #[test]
    fn uniform_disc_mean_distance() {
        // E[d] = 2R/3 for a uniform point in a disc of radius R.
        let net = one_stop();
        let stop = net.stops()[0].location;
        let pts = sample_area_points(&net, &cfg(100_000)).unwrap();
        let mean = pts
            .iter()
            .map(|p| geodesy::haversine_distance(*p, stop, &M))
            .sum::<f64>()
            / pts.len() as f64;
        assert!((mean - 1600.0 / 3.0).abs() < 5.0, "{mean}");
    }

    #[test]
    fn single_stop_coverage_is_disc_ratio() {
        let r = area_coverage(&one_stop(), &cfg(10_000)).unwrap();
        assert!((r.mean_stops_within_threshold - 0.25).abs() < 0.02, "{r:?}");
        assert!(r.mean_distance_to_closest_stop_m <= 800.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let net = two_stop();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| area_coverage(&net, &cfg(3000)).unwrap())
        };
        assert_eq!(run(1), run(7));
    }

    fn region(id: &str, lat: f64, lon: f64, pop: u64, side: f64) -> PopulationRegion {
        PopulationRegion {
            region_id: id.into(),
            name: id.into(),
            centroid: GeoPoint::new(lat, lon).unwrap(),
            population: pop,
            side_m: side,
        }
    }

    #[test]
    fn population_shares_follow_weights() {
        let map = PopulationMap::new(vec![
            region("a", 43.60, -79.40, 900, 1000.0),
            region("b", 43.70, -79.40, 100, 1000.0),
        ])
        .unwrap();
        let pts = sample_population_points(&map, &cfg(10_000)).unwrap();
        let in_a = pts.iter().filter(|p| map.square(0).contains(**p)).count();
        let in_b = pts.iter().filter(|p| map.square(1).contains(**p)).count();
        assert_eq!(in_a + in_b, pts.len());
        assert!((in_a as f64 / 1e4 - 0.9).abs() < 0.01);
    }

    #[test]
    fn population_map_rejects_empty() {
        assert!(PopulationMap::new(vec![region("a", 43.6, -79.4, 0, 100.0)]).is_err());
    }

    #[test]
    fn small_square_on_stop_bounds_distance() {
        let net = one_stop();
        let s = net.stops()[0].location;
        let map = PopulationMap::new(vec![region("a", s.lat(), s.lon(), 10, 100.0)]).unwrap();
        let r = population_coverage(&net, &map, &cfg(2000)).unwrap();
        assert!(r.mean_distance_to_closest_stop_m <= 71.0);
        assert_eq!(r.mean_stops_within_threshold, 1.0);
    }

    #[test]
    fn far_population_saturates_at_service_bound() {
        let net = one_stop();
        let map = PopulationMap::new(vec![region("a", 43.75, -79.38, 10, 200.0)]).unwrap();
        let r = population_coverage(&net, &map, &cfg(500)).unwrap();
        assert_eq!(r.mean_distance_to_closest_stop_m, 800.0);
        assert_eq!(r.mean_stops_within_threshold, 0.0);
    }

    #[test]
    fn two_stop_trips_match_closed_form() {
        let net = two_stop();
        let params = RoutingParams {
            transfer_penalty_sec: 300.0,
            wait_policy: WaitPolicy::HalfHeadway,
        };
        let trips = sample_trips(&net, &cfg(500), PointSource::Area, &params).unwrap();
        let (a, b) = (net.stops()[0].location, net.stops()[1].location);
        let ab = geodesy::haversine_distance(a, b, &M);
        for t in trips.iter().flatten() {
            let near = |p: GeoPoint| {
                let (da, db) = (
                    geodesy::haversine_distance(p, a, &M),
                    geodesy::haversine_distance(p, b, &M),
                );
                if da <= db {
                    (0, da)
                } else {
                    (1, db)
                }
            };
            let (os, ow) = near(t.origin);
            let (ds, dw) = near(t.destination);
            let ride = if os == ds {
                (0.0, 0.0)
            } else {
                (300.0 + 300.0, ab)
            };
            let time = (ow + dw) / 80.0 + ride.0 / 60.0;
            assert!((t.trip_time_min - time).abs() < 1e-9);
            assert!((t.trip_length_km - (ow + ride.1 + dw) / 1000.0).abs() < 1e-12);
        }
        let s = summarize_trips(&trips).unwrap();
        assert_eq!(
            s.trip_length_ratio,
            s.mean_trip_length_km / s.mean_straight_distance_km
        );
        assert_eq!(
            s.trip_time_per_straight_km_min,
            s.mean_trip_time_min / s.mean_straight_distance_km
        );
        assert_eq!(
            s.transfers_per_straight_km,
            s.mean_transfers / s.mean_straight_distance_km
        );
    }

    #[test]
    fn published_city_means_normalize() {
        let sf = TripSummary::from_means(64.0, 17.0, 1.5, 7.0);
        assert!((sf.trip_time_per_straight_km_min - 9.142857).abs() < 1e-6);
        let to = TripSummary::from_means(88.0, 38.0, 2.6, 16.0);
        assert_eq!(to.trip_time_per_straight_km_min, 5.5);
        assert!((to.transfers_per_straight_km - 0.1625).abs() < 1e-12);
    }

    #[test]
    fn unreachable_trips_reported() {
        let a = GeoPoint::new(43.65, -79.38).unwrap();
        let far = GeoPoint::new(43.75, -79.38).unwrap();
        let far2 = GeoPoint::new(43.751, -79.38).unwrap();
        let near = GeoPoint::new(43.651, -79.38).unwrap();
        let set = |r: &str| BTreeSet::from([r.to_string()]);
        let stops = vec![
            Stop::new("A", "A", a),
            Stop::new("B", "B", near),
            Stop::new("C", "C", far),
            Stop::new("D", "D", far2),
        ];
        let conns = vec![
            Connection::new("A", "B", set("1"), 111.0, 60.0),
            Connection::new("C", "D", set("1"), 111.0, 60.0),
        ];
        let r = Route {
            id: "1".into(),
            name: "1".into(),
            headway_min: 5.0,
            directions: vec![],
        };
        let net = build_network("t", stops, conns, vec![r], M).unwrap();
        let err = trip_metrics(
            &net,
            &cfg(400),
            PointSource::Area,
            &RoutingParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoverageError::DataQuality { .. }));
    }

    #[test]
    fn poi_at_nearest_stop_costs_only_the_walk() {
        let net = two_stop();
        let params = RoutingParams {
            transfer_penalty_sec: 300.0,
            wait_policy: WaitPolicy::Zero,
        };
        let pois: Vec<PointOfInterest> = net
            .stops()
            .iter()
            .map(|s| PointOfInterest {
                poi_id: s.id.clone(),
                name: s.name.clone(),
                location: s.location,
            })
            .collect();
        let c = SampleConfig {
            poi_start_count: 300,
            ..cfg(10)
        };
        let samples = sample_access(&net, &pois, &c, PointSource::Area, &params).unwrap();
        let locs = net.locations();
        for (start, best) in &samples {
            let walk = locs
                .iter()
                .map(|l| geodesy::haversine_distance(*start, *l, &M))
                .fold(f64::INFINITY, f64::min);
            assert!((best.unwrap().time_min - walk / 80.0).abs() < 1e-9);
        }
        assert!(poi_access(&net, &[], &c, PointSource::Area, &params).is_err());
    }

    #[test]
    fn empty_network_and_bad_config() {
        let empty = build_network("t", vec![], vec![], vec![], M).unwrap();
        assert_eq!(
            area_coverage(&empty, &cfg(10)).unwrap_err(),
            CoverageError::EmptyNetwork
        );
        let bad = SampleConfig {
            walk_threshold_m: 900.0,
            ..cfg(10)
        };
        assert!(matches!(
            area_coverage(&one_stop(), &bad),
            Err(CoverageError::InvalidArgument(_))
        ));
    }
}
