//! Transit networks as route-colored graphs, with the metrics needed to
//! compare cities: structural totals, transfer-aware travel times, Monte
//! Carlo area and population coverage, and access to points of interest.
//!
//! The usual flow is [`ingest::load_snapshot`] then [`ingest::normalize`]
//! (prune isolated stops, merge near-coincident ones), followed by the
//! analyses in [`network`], [`routing`] and [`coverage`], assembled into a
//! [`report::CityReport`].

pub mod coverage;
pub mod geodesy;
pub mod ingest;
pub mod network;
pub mod report;
pub mod routing;
pub mod synth;

pub use coverage::{
    AccessResult, CoverageResult, PointSource, PopulationMap, SampleConfig, TripSummary,
};
pub use geodesy::{EarthModel, GeoBounds, GeoPoint, SpatialGrid};
pub use ingest::{IngestOptions, PointOfInterest, PopulationRegion, RawFeed};
pub use network::{Connection, Route, RouteDirection, Stop, StructuralMetrics, TransitNetwork};
pub use report::{CityReport, ComparisonTable, ConnectionSummary, ReportConfig, TableFormat};
pub use routing::{PathQuery, PathResult, RoutingParams, WaitPolicy};
