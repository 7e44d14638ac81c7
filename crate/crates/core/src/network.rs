//! The transit graph: stops as vertices, route-colored undirected connections
//! as edges. Also connectivity normalization by stop merging, components,
//! bridges and city-wide structural totals.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{self, EarthModel, GeoPoint, SpatialGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("connection from stop {0:?} to itself")]
    SelfLoop(String),
    #[error("duplicate stop id {0:?}")]
    DuplicateStop(String),
    #[error("duplicate route id {0:?}")]
    DuplicateRoute(String),
    #[error("unknown stop {0:?}")]
    UnknownStop(String),
    #[error("unknown route {0:?}")]
    UnknownRoute(String),
    #[error("connection {a:?}-{b:?} has no routes")]
    EmptyRouteSet { a: String, b: String },
    #[error("route {route:?} direction {direction}: {reason}")]
    BadDirection {
        route: String,
        direction: usize,
        reason: String,
    },
    #[error("total travel time is zero but total length is {length_km} km; speed undefined")]
    UndefinedSpeed { length_km: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub id: String,
    pub name: String,
    pub location: GeoPoint,
    pub routes: BTreeSet<String>,
    /// Original stop ids folded into this one; `{id}` when unmerged.
    pub merged_from: BTreeSet<String>,
}

impl Stop {
    pub fn new(id: impl Into<String>, name: impl Into<String>, location: GeoPoint) -> Stop {
        let id = id.into();
        Stop {
            merged_from: BTreeSet::from([id.clone()]),
            id,
            name: name.into(),
            location,
            routes: BTreeSet::new(),
        }
    }
}

/// Undirected edge. Endpoints are stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub a: String,
    pub b: String,
    pub routes: BTreeSet<String>,
    pub straight_distance_m: f64,
    pub road_distance_m: Option<f64>,
    pub travel_time_sec: f64,
}

impl Connection {
    pub fn new(
        u: impl Into<String>,
        v: impl Into<String>,
        routes: BTreeSet<String>,
        straight_distance_m: f64,
        travel_time_sec: f64,
    ) -> Connection {
        let (u, v) = (u.into(), v.into());
        let (a, b) = if u <= v { (u, v) } else { (v, u) };
        Connection {
            a,
            b,
            routes,
            straight_distance_m,
            road_distance_m: None,
            travel_time_sec,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.a, &self.b)
    }

    pub fn touches(&self, stop: &str) -> bool {
        self.a == stop || self.b == stop
    }

    /// The endpoint opposite `stop`, if `stop` is an endpoint.
    pub fn other(&self, stop: &str) -> Option<&str> {
        if self.a == stop {
            Some(&self.b)
        } else if self.b == stop {
            Some(&self.a)
        } else {
            None
        }
    }

    /// Road distance when known, else straight-line distance.
    pub fn length_m(&self) -> f64 {
        self.road_distance_m.unwrap_or(self.straight_distance_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDirection {
    pub stops: Vec<String>,
    /// One entry per leg; `stops.len() - 1` long.
    pub leg_times_sec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub name: String,
    pub headway_min: f64,
    pub directions: Vec<RouteDirection>,
}

pub type StopIdx = usize;
pub type ConnIdx = usize;

/// Immutable transit graph. Stops are kept sorted by id, so stop indices
/// order the same way as stop ids.
#[derive(Debug, Clone)]
pub struct TransitNetwork {
    city: String,
    model: EarthModel,
    stops: Vec<Stop>,
    index: HashMap<String, StopIdx>,
    connections: Vec<Connection>,
    ends: Vec<(StopIdx, StopIdx)>,
    adjacency: Vec<Vec<(StopIdx, ConnIdx)>>,
    routes: BTreeMap<String, Route>,
}

impl PartialEq for TransitNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.city == other.city
            && self.stops == other.stops
            && self.connections == other.connections
            && self.routes == other.routes
    }
}

/// Assembles a network, merging duplicate pairs (route union, minimum travel
/// time) and rejecting self-loops.
pub fn build_network(
    city: impl Into<String>,
    stops: Vec<Stop>,
    connections: Vec<Connection>,
    routes: Vec<Route>,
    model: EarthModel,
) -> Result<TransitNetwork, NetworkError> {
    let mut stops = stops;
    stops.sort_by(|x, y| x.id.cmp(&y.id));
    for w in stops.windows(2) {
        if w[0].id == w[1].id {
            return Err(NetworkError::DuplicateStop(w[0].id.clone()));
        }
    }
    let index: HashMap<String, StopIdx> = stops
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i))
        .collect();

    let mut route_map = BTreeMap::new();
    for r in routes {
        for (d, dir) in r.directions.iter().enumerate() {
            let bad = |reason: String| NetworkError::BadDirection {
                route: r.id.clone(),
                direction: d,
                reason,
            };
            if dir.stops.len() < 2 {
                return Err(bad("fewer than 2 stops".into()));
            }
            if dir.leg_times_sec.len() + 1 != dir.stops.len() {
                return Err(bad(format!(
                    "{} leg times for {} stops",
                    dir.leg_times_sec.len(),
                    dir.stops.len()
                )));
            }
            if let Some(s) = dir.stops.iter().find(|s| !index.contains_key(*s)) {
                return Err(NetworkError::UnknownStop(s.clone()));
            }
        }
        let id = r.id.clone();
        if route_map.insert(id.clone(), r).is_some() {
            return Err(NetworkError::DuplicateRoute(id));
        }
    }

    let mut merged: BTreeMap<(String, String), Connection> = BTreeMap::new();
    for c in connections {
        let c = Connection::new(c.a, c.b, c.routes, c.straight_distance_m, c.travel_time_sec)
            .with_road(c.road_distance_m);
        if c.a == c.b {
            return Err(NetworkError::SelfLoop(c.a));
        }
        for end in [&c.a, &c.b] {
            if !index.contains_key(end) {
                return Err(NetworkError::UnknownStop(end.clone()));
            }
        }
        if c.routes.is_empty() {
            return Err(NetworkError::EmptyRouteSet { a: c.a, b: c.b });
        }
        if let Some(r) = c.routes.iter().find(|r| !route_map.contains_key(*r)) {
            return Err(NetworkError::UnknownRoute(r.clone()));
        }
        match merged.get_mut(&(c.a.clone(), c.b.clone())) {
            Some(existing) => {
                existing.routes.extend(c.routes);
                existing.travel_time_sec = existing.travel_time_sec.min(c.travel_time_sec);
                existing.road_distance_m = match (existing.road_distance_m, c.road_distance_m) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                };
            }
            None => {
                merged.insert((c.a.clone(), c.b.clone()), c);
            }
        }
    }
    let connections: Vec<Connection> = merged.into_values().collect();
    let ends: Vec<(StopIdx, StopIdx)> = connections
        .iter()
        .map(|c| (index[&c.a], index[&c.b]))
        .collect();
    let mut adjacency = vec![Vec::new(); stops.len()];
    for (ci, &(u, v)) in ends.iter().enumerate() {
        adjacency[u].push((v, ci));
        adjacency[v].push((u, ci));
    }
    Ok(TransitNetwork {
        city: city.into(),
        model,
        stops,
        index,
        connections,
        ends,
        adjacency,
        routes: route_map,
    })
}

impl Connection {
    fn with_road(mut self, road: Option<f64>) -> Connection {
        self.road_distance_m = road;
        self
    }
}

impl TransitNetwork {
    pub fn city(&self) -> &str {
        &self.city
    }

    pub fn model(&self) -> &EarthModel {
        &self.model
    }

    pub fn stops(&self) -> &[Stop] {
        &self.stops
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn routes(&self) -> &BTreeMap<String, Route> {
        &self.routes
    }

    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    pub fn stop_index(&self, id: &str) -> Option<StopIdx> {
        self.index.get(id).copied()
    }

    pub fn stop(&self, id: &str) -> Option<&Stop> {
        self.stop_index(id).map(|i| &self.stops[i])
    }

    /// `(neighbor, connection)` pairs incident to `stop`.
    pub fn neighbors(&self, stop: StopIdx) -> &[(StopIdx, ConnIdx)] {
        &self.adjacency[stop]
    }

    pub fn connection_ends(&self, conn: ConnIdx) -> (StopIdx, StopIdx) {
        self.ends[conn]
    }

    pub fn connection_between(&self, u: &str, v: &str) -> Option<ConnIdx> {
        let (ui, vi) = (self.stop_index(u)?, self.stop_index(v)?);
        self.adjacency[ui]
            .iter()
            .find(|&&(n, _)| n == vi)
            .map(|&(_, c)| c)
    }

    pub fn locations(&self) -> Vec<GeoPoint> {
        self.stops.iter().map(|s| s.location).collect()
    }

    pub fn degree(&self, stop: StopIdx) -> usize {
        self.adjacency[stop].len()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        match self.rank[rx].cmp(&self.rank[ry]) {
            std::cmp::Ordering::Less => self.parent[rx] = ry,
            std::cmp::Ordering::Greater => self.parent[ry] = rx,
            std::cmp::Ordering::Equal => {
                self.parent[ry] = rx;
                self.rank[rx] += 1;
            }
        }
        true
    }
}

pub const DEFAULT_MERGE_THRESHOLD_M: f64 = 30.0;

/// Merges stops closer than `threshold_m` into single stops.
///
/// Clusters are the single-linkage components of the "closer than threshold"
/// relation. A merged stop sits at the centroid of all its original members,
/// keeps the lowest member id, and carries the union of member routes.
/// Because a new centroid can land within the threshold of a third stop, the
/// clustering is repeated until no pair is closer than the threshold.
pub fn merge_nearby_stops(
    network: &TransitNetwork,
    threshold_m: f64,
) -> Result<TransitNetwork, NetworkError> {
    if !(threshold_m.is_finite() && threshold_m > 0.0) {
        return Err(NetworkError::InvalidArgument(format!(
            "merge threshold {threshold_m} must be positive"
        )));
    }
    let model = network.model;
    // Weight = number of original stops represented, so centroids of
    // centroids stay centroids of originals.
    let mut current: Vec<(Stop, f64)> = network
        .stops
        .iter()
        .map(|s| (s.clone(), s.merged_from.len().max(1) as f64))
        .collect();
    let mut rename: HashMap<String, String> = network
        .stops
        .iter()
        .map(|s| (s.id.clone(), s.id.clone()))
        .collect();
    let mut changed = false;

    loop {
        let pts: Vec<GeoPoint> = current.iter().map(|(s, _)| s.location).collect();
        let mean_lat = pts.iter().map(|p| p.lat()).sum::<f64>() / pts.len().max(1) as f64;
        let cell = geodesy::meters_to_lat_degrees(
            threshold_m.max(SpatialGrid::DEFAULT_CELL_M),
            mean_lat,
            &model,
        );
        let grid = SpatialGrid::build(&pts, cell).expect("positive cell");
        let mut dsu = DisjointSet::new(pts.len());
        let mut any = false;
        for (i, p) in pts.iter().enumerate() {
            let near = geodesy::stops_within_radius(&grid, &pts, *p, threshold_m, &model)
                .map_err(|e| NetworkError::InvalidArgument(e.to_string()))?;
            for (j, d) in near {
                if j > i && d < threshold_m {
                    any |= dsu.union(i, j);
                }
            }
        }
        if !any {
            break;
        }
        changed = true;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..pts.len() {
            groups.entry(dsu.find(i)).or_default().push(i);
        }
        let mut next = Vec::with_capacity(groups.len());
        for members in groups.into_values() {
            if members.len() == 1 {
                next.push(current[members[0]].clone());
                continue;
            }
            let rep = members
                .iter()
                .copied()
                .min_by(|&x, &y| current[x].0.id.cmp(&current[y].0.id))
                .expect("nonempty cluster");
            let total_w: f64 = members.iter().map(|&m| current[m].1).sum();
            let lat = members
                .iter()
                .map(|&m| current[m].0.location.lat() * current[m].1)
                .sum::<f64>()
                / total_w;
            let lon = members
                .iter()
                .map(|&m| current[m].0.location.lon() * current[m].1)
                .sum::<f64>()
                / total_w;
            let mut stop = current[rep].0.clone();
            stop.location = GeoPoint::clamped(lat, lon);
            for &m in &members {
                stop.routes.extend(current[m].0.routes.iter().cloned());
                stop.merged_from
                    .extend(current[m].0.merged_from.iter().cloned());
            }
            for &m in &members {
                let old = &current[m].0.id;
                for target in rename.values_mut() {
                    if target == old {
                        *target = stop.id.clone();
                    }
                }
            }
            next.push((stop, total_w));
        }
        current = next;
    }

    if !changed {
        return Ok(network.clone());
    }

    let stops: Vec<Stop> = current.into_iter().map(|(s, _)| s).collect();
    let loc: HashMap<&str, GeoPoint> = stops.iter().map(|s| (s.id.as_str(), s.location)).collect();

    let mut connections = Vec::with_capacity(network.connections.len());
    for c in &network.connections {
        let (a, b) = (&rename[&c.a], &rename[&c.b]);
        if a == b {
            continue;
        }
        let (la, lb) = (loc[a.as_str()], loc[b.as_str()]);
        let moved = |orig: &str, now: GeoPoint| network.stop(orig).map(|s| s.location) != Some(now);
        let d = if !moved(&c.a, la) && !moved(&c.b, lb) {
            c.straight_distance_m
        } else {
            geodesy::haversine_distance(la, lb, &model)
        };
        let mut nc = Connection::new(a.clone(), b.clone(), c.routes.clone(), d, c.travel_time_sec);
        nc.road_distance_m = c.road_distance_m;
        connections.push(nc);
    }

    let routes = network
        .routes
        .values()
        .map(|r| {
            let directions = r
                .directions
                .iter()
                .filter_map(|dir| {
                    let mut stops = vec![rename[&dir.stops[0]].clone()];
                    let mut legs = Vec::new();
                    for (k, s) in dir.stops.iter().enumerate().skip(1) {
                        let id = &rename[s];
                        if id != stops.last().expect("nonempty") {
                            stops.push(id.clone());
                            legs.push(dir.leg_times_sec[k - 1]);
                        }
                    }
                    (stops.len() >= 2).then_some(RouteDirection {
                        stops,
                        leg_times_sec: legs,
                    })
                })
                .collect();
            Route {
                directions,
                ..r.clone()
            }
        })
        .collect();

    build_network(network.city.clone(), stops, connections, routes, model)
}

/// Connected components as sorted stop-id lists, ordered by first id.
pub fn connected_components(network: &TransitNetwork) -> Vec<Vec<String>> {
    let labels = component_labels(network);
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups
            .entry(l)
            .or_default()
            .push(network.stops[i].id.clone());
    }
    // Stops are id-sorted, so each group is sorted and labels follow first id.
    groups.into_values().collect()
}

/// Component label per stop index; labels are assigned in index order.
pub fn component_labels(network: &TransitNetwork) -> Vec<usize> {
    let n = network.stops.len();
    let mut dsu = DisjointSet::new(n);
    for &(u, v) in &network.ends {
        dsu.union(u, v);
    }
    let mut label_of_root = HashMap::new();
    (0..n)
        .map(|i| {
            let r = dsu.find(i);
            let next = label_of_root.len();
            *label_of_root.entry(r).or_insert(next)
        })
        .collect()
}

/// Indices of bridge connections, ascending. Iterative low-link DFS.
pub fn find_bridges(network: &TransitNetwork) -> Vec<ConnIdx> {
    let n = network.stops.len();
    const UNSEEN: usize = usize::MAX;
    let mut tin = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut timer = 0usize;
    let mut bridges = Vec::new();
    // (vertex, edge used to enter, next adjacency cursor)
    let mut stack: Vec<(StopIdx, Option<ConnIdx>, usize)> = Vec::new();

    for root in 0..n {
        if tin[root] != UNSEEN {
            continue;
        }
        tin[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, None, 0));
        while let Some(&mut (v, via, ref mut cursor)) = stack.last_mut() {
            if let Some(&(w, e)) = network.adjacency[v].get(*cursor) {
                *cursor += 1;
                if Some(e) == via {
                    continue;
                }
                if tin[w] == UNSEEN {
                    tin[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, Some(e), 0));
                } else {
                    low[v] = low[v].min(tin[w]);
                }
            } else {
                stack.pop();
                if let (Some(e), Some(&(parent, _, _))) = (via, stack.last()) {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > tin[parent] {
                        bridges.push(e);
                    }
                }
            }
        }
    }
    bridges.sort_unstable();
    bridges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralMetrics {
    pub total_length_km: f64,
    pub total_travel_time_h: f64,
    pub mean_speed_kmh: f64,
    pub stop_count: usize,
    pub route_count: usize,
    pub connected_pair_count: usize,
    pub component_count: usize,
    pub bridge_count: usize,
    /// Mean hop distance within the largest component.
    pub avg_shortest_path_hops: Option<f64>,
    /// Mean local clustering coefficient within the largest component.
    pub avg_clustering: Option<f64>,
    /// Whether `avg_shortest_path_hops` was computed from sampled sources.
    pub shortest_path_sampled: bool,
}

/// All-pairs hop distances are exact up to this many stops in the largest
/// component; above it, `SAMPLED_SOURCES` seeded BFS sources are used.
pub const EXACT_PATH_STATS_LIMIT: usize = 3000;
pub const SAMPLED_SOURCES: usize = 500;
const PATH_STATS_SEED: u64 = 0x5eed_7a11;

/// City-wide totals. Length and time sum every leg of every route direction.
pub fn structural_metrics(network: &TransitNetwork) -> Result<StructuralMetrics, NetworkError> {
    let mut length_m = 0.0;
    let mut time_s = 0.0;
    for r in network.routes.values() {
        for dir in &r.directions {
            for (k, pair) in dir.stops.windows(2).enumerate() {
                let c = network
                    .connection_between(&pair[0], &pair[1])
                    .ok_or_else(|| NetworkError::UnknownStop(pair[1].clone()))?;
                length_m += network.connections[c].length_m();
                time_s += dir.leg_times_sec[k];
            }
        }
    }
    let total_length_km = length_m / 1000.0;
    let total_travel_time_h = time_s / 3600.0;
    let mean_speed_kmh = if total_travel_time_h > 0.0 {
        total_length_km / total_travel_time_h
    } else if total_length_km > 0.0 {
        return Err(NetworkError::UndefinedSpeed {
            length_km: total_length_km,
        });
    } else {
        0.0
    };
    let labels = component_labels(network);
    let component_count = labels.iter().max().map_or(0, |m| m + 1);
    let (avg_sp, sampled, avg_cc) = largest_component_stats(network, &labels, component_count);
    Ok(StructuralMetrics {
        total_length_km,
        total_travel_time_h,
        mean_speed_kmh,
        stop_count: network.stops.len(),
        route_count: network.routes.len(),
        connected_pair_count: network.connections.len(),
        component_count,
        bridge_count: find_bridges(network).len(),
        avg_shortest_path_hops: avg_sp,
        avg_clustering: avg_cc,
        shortest_path_sampled: sampled,
    })
}

fn largest_component_stats(
    network: &TransitNetwork,
    labels: &[usize],
    count: usize,
) -> (Option<f64>, bool, Option<f64>) {
    if count == 0 {
        return (None, false, None);
    }
    let mut sizes = vec![0usize; count];
    for &l in labels {
        sizes[l] += 1;
    }
    // First label wins ties, i.e. the component holding the lowest stop id.
    let (big, &size) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("count > 0");
    if size < 2 {
        return (None, false, None);
    }
    let members: Vec<StopIdx> = (0..labels.len()).filter(|&i| labels[i] == big).collect();

    let mut neighbor_sets: Vec<BTreeSet<StopIdx>> = vec![BTreeSet::new(); labels.len()];
    for &v in &members {
        neighbor_sets[v] = network.adjacency[v].iter().map(|&(w, _)| w).collect();
    }
    let clustering: f64 = members
        .iter()
        .map(|&v| {
            let nb = &neighbor_sets[v];
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let links: usize = nb
                .iter()
                .map(|&u| neighbor_sets[u].iter().filter(|w| nb.contains(w)).count())
                .sum::<usize>()
                / 2;
            links as f64 / (k * (k - 1) / 2) as f64
        })
        .sum::<f64>()
        / size as f64;

    let (sources, sampled): (Vec<StopIdx>, bool) = if size <= EXACT_PATH_STATS_LIMIT {
        (members.clone(), false)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(PATH_STATS_SEED);
        let mut picked: Vec<StopIdx> = sample(&mut rng, size, SAMPLED_SOURCES)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        (picked, true)
    };
    let mut dist = vec![usize::MAX; labels.len()];
    let mut total = 0u64;
    for &s in &sources {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &(w, _) in &network.adjacency[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    total += dist[w] as u64;
                    q.push_back(w);
                }
            }
        }
    }
    let pairs = sources.len() as f64 * (size - 1) as f64;
    (Some(total as f64 / pairs), sampled, Some(clustering))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) const M: EarthModel = EarthModel::WGS84;

    pub(crate) fn stop(id: &str, lat: f64, lon: f64) -> Stop {
        Stop::new(id, id, GeoPoint::new(lat, lon).unwrap())
    }

    pub(crate) fn routes_of(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn route(id: &str) -> Route {
        Route {
            id: id.into(),
            name: id.into(),
            headway_min: 10.0,
            directions: vec![],
        }
    }

    /// Graph with stops on a line of latitude, `spacing_deg` apart, and the
    /// given edges on route "r".
    pub(crate) fn graph(n: usize, edges: &[(usize, usize)]) -> TransitNetwork {
        let stops = (0..n)
            .map(|i| stop(&format!("s{i:03}"), 40.0, -75.0 + 0.01 * i as f64))
            .collect();
        let conns = edges
            .iter()
            .map(|&(u, v)| {
                Connection::new(
                    format!("s{u:03}"),
                    format!("s{v:03}"),
                    routes_of(&["r"]),
                    100.0,
                    60.0,
                )
            })
            .collect();
        build_network("t", stops, conns, vec![route("r")], M).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, max_edges: usize) -> TransitNetwork {
        let n = rng.random_range(1..40);
        let m = rng.random_range(0..=max_edges);
        let mut edges = BTreeSet::new();
        for _ in 0..m {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        graph(n, &edges.into_iter().collect::<Vec<_>>())
    }

    fn bfs_component_count(net: &TransitNetwork, skip: Option<ConnIdx>) -> usize {
        let n = net.stops.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut q = vec![s];
            while let Some(v) = q.pop() {
                for &(w, e) in net.neighbors(v) {
                    if Some(e) != skip && !seen[w] {
                        seen[w] = true;
                        q.push(w);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn single_edge_network() {
        let net = graph(2, &[(0, 1)]);
        assert_eq!(net.connections().len(), 1);
        assert_eq!(find_bridges(&net), vec![0]);
    }

    #[test]
    fn duplicate_pairs_merge_route_sets() {
        let stops = vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01)];
        let conns = vec![
            Connection::new("A", "B", routes_of(&["1"]), 1000.0, 120.0),
            Connection::new("B", "A", routes_of(&["2"]), 1000.0, 90.0),
        ];
        let net = build_network("t", stops, conns, vec![route("1"), route("2")], M).unwrap();
        assert_eq!(net.connections().len(), 1);
        assert_eq!(net.connections()[0].routes, routes_of(&["1", "2"]));
        assert_eq!(net.connections()[0].travel_time_sec, 90.0);
    }

    #[test]
    fn self_loop_rejected() {
        let stops = vec![stop("A", 0.0, 0.0)];
        let conns = vec![Connection::new("A", "A", routes_of(&["1"]), 0.0, 0.0)];
        let err = build_network("t", stops, conns, vec![route("1")], M).unwrap_err();
        assert_eq!(err, NetworkError::SelfLoop("A".into()));
    }

    #[test]
    fn components_basic() {
        assert!(connected_components(&graph(0, &[])).is_empty());
        let comps = connected_components(&graph(4, &[(0, 1), (2, 3)]));
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], vec!["s000", "s001"]);
    }

    #[test]
    fn components_match_traversal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 100;
            let mut edges = BTreeSet::new();
            for _ in 0..rng.random_range(0..120) {
                let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
                if u != v {
                    edges.insert((u.min(v), u.max(v)));
                }
            }
            let net = graph(n, &edges.into_iter().collect::<Vec<_>>());
            assert_eq!(
                connected_components(&net).len(),
                bfs_component_count(&net, None)
            );
            // Same partition: every edge stays inside one component.
            let labels = component_labels(&net);
            for c in net.connections() {
                assert_eq!(
                    labels[net.stop_index(&c.a).unwrap()],
                    labels[net.stop_index(&c.b).unwrap()]
                );
            }
        }
    }

    #[test]
    fn triangle_has_no_bridges() {
        assert!(find_bridges(&graph(3, &[(0, 1), (1, 2), (0, 2)])).is_empty());
    }

    #[test]
    fn bridges_match_edge_removal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let net = random_graph(&mut rng, 200);
            let base = bfs_component_count(&net, None);
            let oracle: Vec<ConnIdx> = (0..net.connections().len())
                .filter(|&e| bfs_component_count(&net, Some(e)) > base)
                .collect();
            assert_eq!(find_bridges(&net), oracle);
        }
    }

    #[test]
    fn structural_single_route() {
        // 1 km leg at 4 minutes.
        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let deg = 1000.0 / (6_378_137.0 * std::f64::consts::PI / 180.0);
        let b = GeoPoint::new(0.0, deg).unwrap();
        let d = geodesy::haversine_distance(a, b, &M);
        let stops = vec![Stop::new("A", "A", a), Stop::new("B", "B", b)];
        let conns = vec![Connection::new("A", "B", routes_of(&["1"]), d, 240.0)];
        let r = Route {
            id: "1".into(),
            name: "1".into(),
            headway_min: 10.0,
            directions: vec![RouteDirection {
                stops: vec!["A".into(), "B".into()],
                leg_times_sec: vec![240.0],
            }],
        };
        let net = build_network("t", stops, conns, vec![r], M).unwrap();
        let m = structural_metrics(&net).unwrap();
        assert!((m.total_length_km - 1.0).abs() < 1e-9);
        assert!((m.total_travel_time_h - 1.0 / 15.0).abs() < 1e-12);
        assert!((m.mean_speed_kmh - 15.0).abs() < 1e-6);
        assert_eq!(
            (m.stop_count, m.route_count, m.connected_pair_count),
            (2, 1, 1)
        );
        assert_eq!((m.component_count, m.bridge_count), (1, 1));
        assert_eq!(m.avg_shortest_path_hops, Some(1.0));
        assert_eq!(m.avg_clustering, Some(0.0));
    }

    #[test]
    fn structural_empty() {
        let m = structural_metrics(&graph(0, &[])).unwrap();
        assert_eq!(m.total_length_km, 0.0);
        assert_eq!(m.mean_speed_kmh, 0.0);
        assert_eq!(m.component_count, 0);
        assert_eq!(m.avg_shortest_path_hops, None);
    }

    #[test]
    fn zero_time_with_length_is_undefined_speed() {
        let stops = vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01)];
        let conns = vec![Connection::new("A", "B", routes_of(&["1"]), 1000.0, 0.0)];
        let r = Route {
            id: "1".into(),
            name: "1".into(),
            headway_min: 10.0,
            directions: vec![RouteDirection {
                stops: vec!["A".into(), "B".into()],
                leg_times_sec: vec![0.0],
            }],
        };
        let net = build_network("t", stops, conns, vec![r], M).unwrap();
        assert!(matches!(
            structural_metrics(&net),
            Err(NetworkError::UndefinedSpeed { .. })
        ));
    }

    #[test]
    fn clustering_of_triangle_with_tail() {
        // Triangle 0-1-2 plus tail 2-3: c = [1, 1, 1/3, 0].
        let m = structural_metrics(&graph(4, &[(0, 1), (1, 2), (0, 2), (2, 3)])).unwrap();
        let expect = (1.0 + 1.0 + 1.0 / 3.0) / 4.0;
        assert!((m.avg_clustering.unwrap() - expect).abs() < 1e-12);
        // Hop sums: 0:{1,1,2}=4 1:4 2:3 3:{1,2,2}=5 -> 16 / 12.
        assert!((m.avg_shortest_path_hops.unwrap() - 16.0 / 12.0).abs() < 1e-12);
    }

    fn offset(base: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
        let dlat = geodesy::meters_to_lat_degrees(north_m, base.lat(), &M);
        let dlon =
            geodesy::meters_to_lat_degrees(east_m, base.lat(), &M) / base.lat().to_radians().cos();
        GeoPoint::new(base.lat() + dlat, base.lon() + dlon).unwrap()
    }

    fn line_network(points: &[GeoPoint], route_per_stop: bool) -> TransitNetwork {
        let stops: Vec<Stop> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut s = Stop::new(format!("p{i}"), format!("P{i}"), *p);
                s.routes = routes_of(&[&format!("r{}", if route_per_stop { i } else { 0 })]);
                s
            })
            .collect();
        let rs: Vec<Route> = if route_per_stop {
            (0..points.len()).map(|i| route(&format!("r{i}"))).collect()
        } else {
            vec![route("r0")]
        };
        build_network("t", stops, vec![], rs, M).unwrap()
    }

    #[test]
    fn two_close_stops_merge_to_midpoint() {
        let a = GeoPoint::new(43.65, -79.38).unwrap();
        let b = offset(a, 10.0, 0.0);
        let net = line_network(&[a, b], true);
        let merged = merge_nearby_stops(&net, 30.0).unwrap();
        assert_eq!(merged.stops().len(), 1);
        let s = &merged.stops()[0];
        assert_eq!(s.id, "p0");
        assert_eq!(s.routes, routes_of(&["r0", "r1"]));
        assert_eq!(s.merged_from, routes_of(&["p0", "p1"]));
        assert!((s.location.lat() - (a.lat() + b.lat()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn far_stops_unchanged() {
        let a = GeoPoint::new(43.65, -79.38).unwrap();
        let net = line_network(&[a, offset(a, 100.0, 0.0), offset(a, 0.0, 100.0)], true);
        assert_eq!(merge_nearby_stops(&net, 30.0).unwrap(), net);
    }

    #[test]
    fn chain_merges_transitively_to_three_point_centroid() {
        let a = GeoPoint::new(43.65, -79.38).unwrap();
        let pts = [a, offset(a, 20.0, 0.0), offset(a, 40.0, 0.0)];
        let net = line_network(&pts, true);
        let merged = merge_nearby_stops(&net, 30.0).unwrap();
        assert_eq!(merged.stops().len(), 1);
        let c = GeoPoint::centroid(pts.iter()).unwrap();
        assert!((merged.stops()[0].location.lat() - c.lat()).abs() < 1e-12);
        assert!((merged.stops()[0].location.lon() - c.lon()).abs() < 1e-12);
    }

    #[test]
    fn merge_retargets_connections_and_routes() {
        // A -- B ~~ B' -- C with B, B' 5 m apart on different routes.
        let a = GeoPoint::new(43.65, -79.38).unwrap();
        let b = offset(a, 500.0, 0.0);
        let b2 = offset(b, 5.0, 0.0);
        let c = offset(b2, 500.0, 0.0);
        let mk = |id: &str, p: GeoPoint, r: &str| {
            let mut s = Stop::new(id, id, p);
            s.routes = routes_of(&[r]);
            s
        };
        let stops = vec![
            mk("A", a, "1"),
            mk("B", b, "1"),
            mk("B2", b2, "2"),
            mk("C", c, "2"),
        ];
        let dir = |x: &str, y: &str| RouteDirection {
            stops: vec![x.into(), y.into()],
            leg_times_sec: vec![100.0],
        };
        let routes = vec![
            Route {
                id: "1".into(),
                name: "1".into(),
                headway_min: 5.0,
                directions: vec![dir("A", "B")],
            },
            Route {
                id: "2".into(),
                name: "2".into(),
                headway_min: 5.0,
                directions: vec![dir("B2", "C")],
            },
        ];
        let conns = vec![
            Connection::new("A", "B", routes_of(&["1"]), 500.0, 100.0),
            Connection::new("B2", "C", routes_of(&["2"]), 500.0, 100.0),
        ];
        let net = build_network("t", stops, conns, routes, M).unwrap();
        assert_eq!(connected_components(&net).len(), 2);
        let merged = merge_nearby_stops(&net, 30.0).unwrap();
        assert_eq!(merged.stops().len(), 3);
        assert_eq!(connected_components(&merged).len(), 1);
        assert_eq!(merged.routes()["2"].directions[0].stops, vec!["B", "C"]);
        assert!(merged.connection_between("B", "C").is_some());
    }

    #[test]
    fn merge_properties_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..60 {
            let base = GeoPoint::new(
                rng.random_range(25.0..55.0),
                rng.random_range(-120.0..-70.0),
            )
            .unwrap();
            let n = rng.random_range(2..40);
            let pts: Vec<_> = (0..n)
                .map(|_| {
                    offset(
                        base,
                        rng.random_range(-300.0..300.0),
                        rng.random_range(-300.0..300.0),
                    )
                })
                .collect();
            let net = line_network(&pts, true);
            let threshold = rng.random_range(10.0..80.0);
            let once = merge_nearby_stops(&net, threshold).unwrap();
            let twice = merge_nearby_stops(&once, threshold).unwrap();
            assert_eq!(once, twice);
            for (i, s) in once.stops().iter().enumerate() {
                for t in &once.stops()[i + 1..] {
                    assert!(geodesy::haversine_distance(s.location, t.location, &M) >= threshold);
                }
            }
            let before: BTreeSet<_> = net
                .stops()
                .iter()
                .flat_map(|s| s.routes.iter().cloned())
                .collect();
            let after: BTreeSet<_> = once
                .stops()
                .iter()
                .flat_map(|s| s.routes.iter().cloned())
                .collect();
            assert_eq!(before, after);
            let originals: usize = once.stops().iter().map(|s| s.merged_from.len()).sum();
            assert_eq!(originals, n);
        }
    }

    #[test]
    fn merge_rejects_nonpositive_threshold() {
        assert!(merge_nearby_stops(&graph(2, &[(0, 1)]), 0.0).is_err());
    }
}
