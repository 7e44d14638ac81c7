//! Shared workloads for the criterion benches.

use transitnet_core::ingest::{self, IngestOptions};
use transitnet_core::network;
use transitnet_core::synth::{synth_city, SynthParams};
use transitnet_core::{EarthModel, PointOfInterest, PopulationMap, RawFeed, TransitNetwork};

pub struct Workload {
    pub feed: RawFeed,
    /// Network before merging, for timing the merge alone.
    pub unmerged: TransitNetwork,
    pub network: TransitNetwork,
    pub population: PopulationMap,
    pub pois: Vec<PointOfInterest>,
}

/// A connected synthetic city on a `side` x `side` lattice. Routes are added
/// until every stop is reachable, so trip sampling never hits the
/// unreachable-pair limit.
pub fn workload(side: usize) -> Workload {
    let opts = IngestOptions::default();
    let mut route_count = side + side / 5;
    let (city, network) = loop {
        let city = synth_city(&SynthParams {
            rows: side,
            cols: side,
            route_count,
            route_len: side + 5,
            ..SynthParams::default()
        });
        let network = ingest::normalize(city.feed.clone(), EarthModel::WGS84, &opts, 30.0)
            .expect("synthetic feed is valid");
        if network::connected_components(&network).len() == 1 {
            break (city, network);
        }
        route_count += side / 4 + 1;
    };
    let unmerged = ingest::network_from_feed(city.feed.clone(), EarthModel::WGS84, &opts)
        .expect("synthetic feed is valid");
    let population = PopulationMap::new(city.population).expect("synthetic population is nonempty");
    Workload {
        feed: city.feed,
        unmerged,
        network,
        population,
        pois: city.pois,
    }
}
