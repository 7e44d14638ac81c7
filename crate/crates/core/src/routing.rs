//! Travel-time shortest paths with a static transfer surcharge, and transfer
//! counting over route-colored paths.
//!
//! The search is a single-label Dijkstra: each stop keeps one label holding
//! its cost and the set of routes that could have carried the rider since the
//! last change. Relaxing an edge intersects that set with the edge's routes;
//! an empty intersection is a transfer, which costs the configured penalty
//! and restarts the set from the edge. This is cheaper than searching the
//! full (stop, route) product graph and can miss the optimum when a costlier
//! label would have led to fewer transfers downstream.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ConnIdx, StopIdx, TransitNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("unknown stop {0:?}")]
    UnknownStop(String),
    #[error("edge {position} does not continue the walk")]
    NonContiguous { position: usize },
    #[error("path of {len} edges exceeds the brute-force limit of {max}")]
    PathTooLong { len: usize, max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WaitPolicy {
    /// Expected wait of half a headway at first boarding and at each transfer.
    #[default]
    HalfHeadway,
    Zero,
}

pub const DEFAULT_TRANSFER_PENALTY_SEC: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingParams {
    pub transfer_penalty_sec: f64,
    pub wait_policy: WaitPolicy,
}

impl Default for RoutingParams {
    fn default() -> Self {
        RoutingParams {
            transfer_penalty_sec: DEFAULT_TRANSFER_PENALTY_SEC,
            wait_policy: WaitPolicy::HalfHeadway,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathQuery {
    pub origin_stop: String,
    pub destination_stop: String,
    pub params: RoutingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// Stop ids visited, origin first. A single stop for the empty path.
    pub stops: Vec<String>,
    /// Connection indices in travel order.
    pub edges: Vec<ConnIdx>,
    /// In-vehicle time plus transfer penalties plus boarding waits.
    pub total_time_sec: f64,
    pub in_vehicle_time_sec: f64,
    pub wait_time_sec: f64,
    pub total_length_m: f64,
    pub transfers: usize,
    /// One route per maximal single-route segment.
    pub chosen_routes: Vec<String>,
}

/// A maximal run of edges `[start, end)` that one route can serve, and the
/// routes able to serve all of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub start: usize,
    pub end: usize,
    pub candidates: BTreeSet<T>,
}

/// Greedy candidate-set segmentation of a sequence of edge route sets.
///
/// Candidates start as the first edge's routes and are narrowed edge by edge;
/// when nothing survives, a new segment starts from the current edge's routes.
/// Extending each segment as far as possible yields the minimum number of
/// segments.
pub fn transfer_segments<T: Ord + Clone>(sets: &[BTreeSet<T>]) -> Vec<Segment<T>> {
    let mut out = Vec::new();
    let Some(first) = sets.first() else {
        return out;
    };
    let mut cur = Segment {
        start: 0,
        end: 1,
        candidates: first.clone(),
    };
    for (i, s) in sets.iter().enumerate().skip(1) {
        let narrowed: BTreeSet<T> = cur.candidates.intersection(s).cloned().collect();
        if narrowed.is_empty() {
            out.push(std::mem::replace(
                &mut cur,
                Segment {
                    start: i,
                    end: i + 1,
                    candidates: s.clone(),
                },
            ));
        } else {
            cur.candidates = narrowed;
            cur.end = i + 1;
        }
    }
    out.push(cur);
    out
}

/// Number of route changes the greedy segmentation needs.
pub fn count_transfers_in_sets<T: Ord + Clone>(sets: &[BTreeSet<T>]) -> usize {
    transfer_segments(sets).len().saturating_sub(1)
}

/// Stops visited walking `path` from `start`, or the position of the first
/// edge that does not continue the walk.
fn walk_from(
    network: &TransitNetwork,
    start: StopIdx,
    path: &[ConnIdx],
) -> Result<Vec<StopIdx>, usize> {
    let mut walk = vec![start];
    let mut cur = start;
    for (pos, &e) in path.iter().enumerate() {
        let (u, v) = network.connection_ends(e);
        cur = if cur == u {
            v
        } else if cur == v {
            u
        } else {
            return Err(pos);
        };
        walk.push(cur);
    }
    Ok(walk)
}

/// Stops visited by an edge sequence, or the first edge that breaks the walk.
/// Either end of the first edge may be the start.
pub fn walk_stops(
    network: &TransitNetwork,
    path: &[ConnIdx],
) -> Result<Vec<StopIdx>, RoutingError> {
    let Some(&first) = path.first() else {
        return Ok(Vec::new());
    };
    let (a, b) = network.connection_ends(first);
    walk_from(network, a, path)
        .or_else(|_| walk_from(network, b, path))
        .map_err(|position| RoutingError::NonContiguous { position })
}

/// Transfers needed along a contiguous path of connections.
pub fn count_transfers(network: &TransitNetwork, path: &[ConnIdx]) -> Result<usize, RoutingError> {
    walk_stops(network, path)?;
    let sets: Vec<BTreeSet<String>> = path
        .iter()
        .map(|&e| network.connections()[e].routes.clone())
        .collect();
    Ok(count_transfers_in_sets(&sets))
}

pub const BRUTE_FORCE_MAX_EDGES: usize = 12;

/// Exact minimum number of route changes over every assignment of one route
/// per edge. Exponential; refuses paths over [`BRUTE_FORCE_MAX_EDGES`].
pub fn min_transfers_bruteforce<T: Ord + Clone>(
    sets: &[BTreeSet<T>],
) -> Result<usize, RoutingError> {
    if sets.len() > BRUTE_FORCE_MAX_EDGES {
        return Err(RoutingError::PathTooLong {
            len: sets.len(),
            max: BRUTE_FORCE_MAX_EDGES,
        });
    }
    if sets.iter().any(BTreeSet::is_empty) {
        return Err(RoutingError::InvalidArgument("edge with no routes".into()));
    }
    let options: Vec<Vec<&T>> = sets.iter().map(|s| s.iter().collect()).collect();
    let mut choice = vec![0usize; sets.len()];
    let mut best = usize::MAX;
    loop {
        let changes = choice
            .windows(2)
            .enumerate()
            .filter(|(i, w)| options[*i][w[0]] != options[i + 1][w[1]])
            .count();
        best = best.min(changes);
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == choice.len() {
                return Ok(if sets.is_empty() { 0 } else { best });
            }
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Precomputed per-network routing tables; reuse across many queries.
pub struct Router<'a> {
    network: &'a TransitNetwork,
    route_ids: Vec<&'a str>,
    headway_min: Vec<f64>,
    conn_routes: Vec<Vec<u32>>,
}

/// Settled labels of one single-source search.
pub struct SearchTree {
    origin: StopIdx,
    cost: Vec<f64>,
    pred: Vec<Option<(StopIdx, ConnIdx)>>,
}

impl SearchTree {
    pub fn reached(&self, stop: StopIdx) -> bool {
        self.cost[stop].is_finite()
    }

    pub fn cost(&self, stop: StopIdx) -> f64 {
        self.cost[stop]
    }

    /// Connections from the origin to `stop`, in travel order.
    pub fn edges_to(&self, stop: StopIdx) -> Option<Vec<ConnIdx>> {
        if !self.reached(stop) {
            return None;
        }
        let mut edges = Vec::new();
        let mut cur = stop;
        while let Some((p, e)) = self.pred[cur] {
            edges.push(e);
            cur = p;
        }
        debug_assert_eq!(cur, self.origin);
        edges.reverse();
        Some(edges)
    }
}

fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

struct Cost(f64);

impl PartialEq for Cost {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl<'a> Router<'a> {
    pub fn new(network: &'a TransitNetwork) -> Router<'a> {
        let route_ids: Vec<&str> = network.routes().keys().map(String::as_str).collect();
        let pos: HashMap<&str, u32> = route_ids
            .iter()
            .enumerate()
            .map(|(i, r)| (*r, i as u32))
            .collect();
        let headway_min = network.routes().values().map(|r| r.headway_min).collect();
        // BTreeSet iteration is sorted, and so are the positions.
        let conn_routes = network
            .connections()
            .iter()
            .map(|c| c.routes.iter().map(|r| pos[r.as_str()]).collect())
            .collect();
        Router {
            network,
            route_ids,
            headway_min,
            conn_routes,
        }
    }

    pub fn network(&self) -> &'a TransitNetwork {
        self.network
    }

    /// Single-source search from `origin`, optionally stopping once `target`
    /// is settled. Labels of settled stops do not depend on `target`.
    pub fn search(
        &self,
        origin: StopIdx,
        transfer_penalty_sec: f64,
        target: Option<StopIdx>,
    ) -> SearchTree {
        let n = self.network.stops().len();
        let mut cost = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut cand: Vec<Option<Vec<u32>>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        cost[origin] = 0.0;
        heap.push(Reverse((Cost(0.0), origin)));
        while let Some(Reverse((Cost(c), u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if Some(u) == target {
                break;
            }
            for &(v, e) in self.network.neighbors(u) {
                if done[v] {
                    continue;
                }
                let routes = &self.conn_routes[e];
                let (next, penalty) = match &cand[u] {
                    None => (routes.clone(), 0.0),
                    Some(cs) => {
                        let inter = intersect_sorted(cs, routes);
                        if inter.is_empty() {
                            (routes.clone(), transfer_penalty_sec)
                        } else {
                            (inter, 0.0)
                        }
                    }
                };
                let nd = c + self.network.connections()[e].travel_time_sec + penalty;
                if nd < cost[v] {
                    cost[v] = nd;
                    pred[v] = Some((u, e));
                    cand[v] = Some(next);
                    heap.push(Reverse((Cost(nd), v)));
                }
            }
        }
        SearchTree { origin, cost, pred }
    }

    /// Assembles the result for a path found by `search`.
    pub fn finish(
        &self,
        tree: &SearchTree,
        dest: StopIdx,
        params: &RoutingParams,
    ) -> Option<PathResult> {
        let edges = tree.edges_to(dest)?;
        let net = self.network;
        let walk = walk_from(net, tree.origin, &edges).expect("search tree paths are contiguous");
        let stops = walk.iter().map(|&s| net.stops()[s].id.clone()).collect();
        let sets: Vec<BTreeSet<u32>> = edges
            .iter()
            .map(|&e| self.conn_routes[e].iter().copied().collect())
            .collect();
        let segments = transfer_segments(&sets);
        let chosen: Vec<u32> = segments
            .iter()
            .map(|s| {
                *s.candidates
                    .iter()
                    .min_by(|&&x, &&y| {
                        self.headway_min[x as usize]
                            .total_cmp(&self.headway_min[y as usize])
                            .then(x.cmp(&y))
                    })
                    .expect("segments have candidates")
            })
            .collect();
        let wait_time_sec = match params.wait_policy {
            WaitPolicy::Zero => 0.0,
            WaitPolicy::HalfHeadway => chosen
                .iter()
                .map(|&r| self.headway_min[r as usize] * 30.0)
                .sum(),
        };
        let conns = net.connections();
        Some(PathResult {
            stops,
            in_vehicle_time_sec: edges.iter().map(|&e| conns[e].travel_time_sec).sum(),
            total_length_m: edges.iter().map(|&e| conns[e].length_m()).sum(),
            total_time_sec: tree.cost(dest) + wait_time_sec,
            wait_time_sec,
            transfers: segments.len().saturating_sub(1),
            chosen_routes: chosen
                .iter()
                .map(|&r| self.route_ids[r as usize].to_string())
                .collect(),
            edges,
        })
    }

    pub fn path(
        &self,
        origin: StopIdx,
        dest: StopIdx,
        params: &RoutingParams,
    ) -> Option<PathResult> {
        let tree = self.search(origin, params.transfer_penalty_sec, Some(dest));
        self.finish(&tree, dest, params)
    }
}

/// Fastest path by in-vehicle time plus transfer penalties, then boarding
/// waits added for the routes picked per segment. `Ok(None)` when the
/// destination cannot be reached.
pub fn shortest_time_path(
    network: &TransitNetwork,
    query: &PathQuery,
) -> Result<Option<PathResult>, RoutingError> {
    let idx = |id: &str| {
        network
            .stop_index(id)
            .ok_or_else(|| RoutingError::UnknownStop(id.to_string()))
    };
    let (o, d) = (idx(&query.origin_stop)?, idx(&query.destination_stop)?);
    let p = query.params.transfer_penalty_sec;
    if !(p.is_finite() && p >= 0.0) {
        return Err(RoutingError::InvalidArgument(format!(
            "transfer penalty {p} must be nonnegative"
        )));
    }
    Ok(Router::new(network).path(o, d, &query.params))
}
