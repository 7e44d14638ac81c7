//! Great-circle distances on a latitude-dependent Earth radius, bounding
//! squares around a point, and a uniform grid index for radius queries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bounds around ({lat}, {lon}) cross a pole or the antimeridian")]
    UnsupportedRegion { lat: f64, lon: f64 },
}

/// WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(p: RawPoint) -> Result<Self, GeoError> {
        GeoPoint::new(p.lat, p.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint {
            lat: p.lat,
            lon: p.lon,
        }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if ok {
            Ok(GeoPoint { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    /// Clamps into the valid range. Used for derived points (centroids,
    /// samples) whose inputs were already valid.
    pub(crate) fn clamped(lat: f64, lon: f64) -> Self {
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: lon.clamp(-180.0, 180.0),
        }
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Arithmetic mean of coordinates. Fine for the small clusters it is
    /// used on; not meaningful across the antimeridian.
    pub fn centroid<'a, I>(points: I) -> Option<GeoPoint>
    where
        I: IntoIterator<Item = &'a GeoPoint>,
    {
        let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
        for p in points {
            lat += p.lat;
            lon += p.lon;
            n += 1;
        }
        (n > 0).then(|| GeoPoint::clamped(lat / n as f64, lon / n as f64))
    }
}

/// Spheroid constants used for the local radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub equatorial_radius_m: f64,
    pub polar_radius_m: f64,
}

impl EarthModel {
    pub const WGS84: EarthModel = EarthModel {
        equatorial_radius_m: 6_378_137.0,
        polar_radius_m: 6_356_752.0,
    };
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel::WGS84
    }
}

/// sin/cos of an angle in degrees, exact at 0 and ±90.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    if deg == 90.0 {
        (1.0, 0.0)
    } else if deg == -90.0 {
        (-1.0, 0.0)
    } else {
        deg.to_radians().sin_cos()
    }
}

fn radius_unchecked(lat: f64, model: &EarthModel) -> f64 {
    let (s, c) = sin_cos_deg(lat);
    let a = model.equatorial_radius_m;
    let b = model.polar_radius_m;
    let num = (a * a * c).powi(2) + (b * b * s).powi(2);
    let den = (a * c).powi(2) + (b * s).powi(2);
    (num / den).sqrt()
}

/// Geocentric radius at geodetic latitude `lat` (degrees).
///
/// Reduces to the equatorial radius at 0 and the polar radius at ±90.
pub fn earth_radius(lat: f64, model: &EarthModel) -> Result<f64, GeoError> {
    if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(GeoError::InvalidArgument(format!(
            "latitude {lat} outside [-90, 90]"
        )));
    }
    Ok(radius_unchecked(lat, model))
}

#[inline]
fn hav(theta: f64) -> f64 {
    let s = (theta * 0.5).sin();
    s * s
}

/// Haversine distance in meters. The radius is taken at the mean latitude of
/// the two endpoints so the result is symmetric.
pub fn haversine_distance(p1: GeoPoint, p2: GeoPoint, model: &EarthModel) -> f64 {
    if p1 == p2 {
        return 0.0;
    }
    let phi1 = p1.lat.to_radians();
    let phi2 = p2.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (p2.lon - p1.lon).to_radians();
    let h = hav(dphi) + phi1.cos() * phi2.cos() * hav(dlambda);
    let r = radius_unchecked((p1.lat + p2.lat) * 0.5, model);
    2.0 * r * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Axis-aligned lat/lon box. Never spans the antimeridian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl GeoBounds {
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat
            && p.lat <= self.max_lat
            && p.lon >= self.min_lon
            && p.lon <= self.max_lon
    }

    /// Smallest box containing all points, or `None` when empty.
    pub fn enclosing<'a, I>(points: I) -> Option<GeoBounds>
    where
        I: IntoIterator<Item = &'a GeoPoint>,
    {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = GeoBounds {
            min_lat: first.lat,
            max_lat: first.lat,
            min_lon: first.lon,
            max_lon: first.lon,
        };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lat = b.max_lat.max(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lon = b.max_lon.max(p.lon);
        }
        Some(b)
    }

    /// Grows the box by `margin_m` on every side, measuring longitude at the
    /// more poleward edge so the margin is never short.
    pub fn expanded(&self, margin_m: f64, model: &EarthModel) -> Result<GeoBounds, GeoError> {
        let poleward = if self.max_lat.abs() > self.min_lat.abs() {
            self.max_lat
        } else {
            self.min_lat
        };
        let (dlat, _) = square_deltas(poleward, margin_m, model);
        let edge = poleward.abs() + dlat;
        if edge >= 90.0 {
            return Err(GeoError::UnsupportedRegion {
                lat: poleward,
                lon: self.min_lon,
            });
        }
        let dlon = dlat / edge.to_radians().cos();
        let out = GeoBounds {
            min_lat: self.min_lat - dlat,
            max_lat: self.max_lat + dlat,
            min_lon: self.min_lon - dlon,
            max_lon: self.max_lon + dlon,
        };
        check_bounds(&out, poleward, self.min_lon)?;
        Ok(out)
    }
}

/// Outward rounding applied to bounding squares. Covers the change of local
/// radius across the square and the curvature of small circles for squares
/// up to ~20 km at mid latitudes.
const SQUARE_PAD: f64 = 1e-5;

fn square_deltas(lat: f64, half_side_m: f64, model: &EarthModel) -> (f64, f64) {
    let r = radius_unchecked(lat, model);
    let dlat = half_side_m * (1.0 + SQUARE_PAD) / (r * std::f64::consts::PI / 180.0);
    let (_, c) = sin_cos_deg(lat);
    (dlat, dlat / c)
}

fn check_bounds(b: &GeoBounds, lat: f64, lon: f64) -> Result<(), GeoError> {
    if b.min_lat < -90.0 || b.max_lat > 90.0 || b.min_lon < -180.0 || b.max_lon > 180.0 {
        return Err(GeoError::UnsupportedRegion { lat, lon });
    }
    Ok(())
}

/// Square of half-side `half_side_m` centered on `center`.
///
/// `Δlat = h / (r·π/180)` with `r` the local radius, `Δlon = Δlat / cos(lat)`,
/// both rounded outward by a relative 1e-5 so the great-circle disc of radius
/// `h` always fits inside.
pub fn bounding_square(
    center: GeoPoint,
    half_side_m: f64,
    model: &EarthModel,
) -> Result<GeoBounds, GeoError> {
    if !half_side_m.is_finite() || half_side_m < 0.0 {
        return Err(GeoError::InvalidArgument(format!(
            "half side {half_side_m} must be a nonnegative finite length"
        )));
    }
    if center.lat.abs() == 90.0 && half_side_m > 0.0 {
        return Err(GeoError::UnsupportedRegion {
            lat: center.lat,
            lon: center.lon,
        });
    }
    let (dlat, dlon) = square_deltas(center.lat, half_side_m, model);
    let b = GeoBounds {
        min_lat: center.lat - dlat,
        max_lat: center.lat + dlat,
        min_lon: center.lon - dlon,
        max_lon: center.lon + dlon,
    };
    check_bounds(&b, center.lat, center.lon)?;
    Ok(b)
}

/// Degree length of `meters` along a meridian at `lat`.
pub fn meters_to_lat_degrees(meters: f64, lat: f64, model: &EarthModel) -> f64 {
    meters / (radius_unchecked(lat, model) * std::f64::consts::PI / 180.0)
}

/// Uniform lat/lon bucket index over a point slice. Buckets hold indices into
/// the slice the grid was built from.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell_size_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    len: usize,
}

impl SpatialGrid {
    /// Default cell: 800 m of latitude at the mean latitude of the points.
    pub const DEFAULT_CELL_M: f64 = 800.0;

    pub fn build(points: &[GeoPoint], cell_size_deg: f64) -> Result<SpatialGrid, GeoError> {
        if !(cell_size_deg.is_finite() && cell_size_deg > 0.0) {
            return Err(GeoError::InvalidArgument(format!(
                "cell size {cell_size_deg} must be positive"
            )));
        }
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(*p, cell_size_deg)).or_default().push(i);
        }
        Ok(SpatialGrid {
            cell_size_deg,
            cells,
            len: points.len(),
        })
    }

    pub fn with_default_cells(points: &[GeoPoint], model: &EarthModel) -> SpatialGrid {
        let mean_lat = if points.is_empty() {
            0.0
        } else {
            points.iter().map(|p| p.lat).sum::<f64>() / points.len() as f64
        };
        let deg = meters_to_lat_degrees(Self::DEFAULT_CELL_M, mean_lat, model);
        Self::build(points, deg).expect("positive cell size")
    }

    pub fn cell_size_deg(&self) -> f64 {
        self.cell_size_deg
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        cell_of(p, self.cell_size_deg)
    }

    pub fn cell_members(&self, cell: (i64, i64)) -> &[usize] {
        self.cells.get(&cell).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Indices of all points in cells overlapping `bounds`.
    pub fn candidates(&self, bounds: &GeoBounds) -> Vec<usize> {
        let lo = cell_of_raw(bounds.min_lat, bounds.min_lon, self.cell_size_deg);
        let hi = cell_of_raw(bounds.max_lat, bounds.max_lon, self.cell_size_deg);
        let span = (hi.0 - lo.0 + 1) as u128 * (hi.1 - lo.1 + 1) as u128;
        let mut out = Vec::new();
        if span > self.cells.len() as u128 {
            for (&(r, c), members) in &self.cells {
                if (lo.0..=hi.0).contains(&r) && (lo.1..=hi.1).contains(&c) {
                    out.extend_from_slice(members);
                }
            }
        } else {
            for r in lo.0..=hi.0 {
                for c in lo.1..=hi.1 {
                    if let Some(members) = self.cells.get(&(r, c)) {
                        out.extend_from_slice(members);
                    }
                }
            }
        }
        out
    }
}

fn cell_of_raw(lat: f64, lon: f64, size: f64) -> (i64, i64) {
    ((lat / size).floor() as i64, (lon / size).floor() as i64)
}

fn cell_of(p: GeoPoint, size: f64) -> (i64, i64) {
    cell_of_raw(p.lat, p.lon, size)
}

/// Points of `points` within `radius_m` of `center`, as `(index, distance)`
/// ascending by distance then index. `grid` must have been built over
/// `points`.
pub fn stops_within_radius(
    grid: &SpatialGrid,
    points: &[GeoPoint],
    center: GeoPoint,
    radius_m: f64,
    model: &EarthModel,
) -> Result<Vec<(usize, f64)>, GeoError> {
    if !(radius_m.is_finite() && radius_m > 0.0) {
        return Err(GeoError::InvalidArgument(format!(
            "radius {radius_m} must be positive"
        )));
    }
    debug_assert_eq!(grid.len(), points.len());
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let bounds = bounding_square(center, radius_m, model)?;
    let mut hits: Vec<(usize, f64)> = grid
        .candidates(&bounds)
        .into_iter()
        .filter(|&i| bounds.contains(points[i]))
        .map(|i| (i, haversine_distance(center, points[i], model)))
        .filter(|&(_, d)| d <= radius_m)
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(hits)
}

/// Closest point to `center`: grid lookup within `hint_radius_m`, falling back
/// to a linear scan when nothing is in range. Ties go to the lower index.
pub fn nearest_point(
    grid: &SpatialGrid,
    points: &[GeoPoint],
    center: GeoPoint,
    hint_radius_m: f64,
    model: &EarthModel,
) -> Option<(usize, f64)> {
    if points.is_empty() {
        return None;
    }
    if let Ok(hits) = stops_within_radius(grid, points, center, hint_radius_m, model) {
        if let Some(&first) = hits.first() {
            return Some(first);
        }
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, haversine_distance(center, *p, model)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}
