//! Regional hexagonal tiling in geographic degrees and route polygons.
//!
//! Hexagons are flat-top with the configured circumradius (degrees), anchored
//! so that one cell is centred on the bounding-box centre. Every hexagon with
//! positive-area overlap of the box is kept; ids are assigned row-major
//! (south to north, then west to east). Points on shared edges belong to the
//! lowest claiming id.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub type CellId = u32;
pub type RouteId = u32;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Boundary tolerance, relative to the cell size, for containment tests.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        let b = Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.min_lat, self.min_lon, self.max_lat, self.max_lon];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateBbox("non-finite bound".into()));
        }
        if self.max_lat <= self.min_lat || self.max_lon <= self.min_lon {
            return Err(Error::DegenerateBbox(format!("{self:?} has zero area")));
        }
        if self.min_lat < -90.0 || self.max_lat > 90.0 {
            return Err(Error::DegenerateBbox(format!(
                "{self:?} exceeds latitude range"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat
            && p.lat <= self.max_lat
            && p.lon >= self.min_lon
            && p.lon <= self.max_lon
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: 0.5 * (self.min_lat + self.max_lat),
            lon: 0.5 * (self.min_lon + self.max_lon),
        }
    }

    pub fn area(&self) -> f64 {
        (self.max_lat - self.min_lat) * (self.max_lon - self.min_lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexCell {
    pub id: CellId,
    /// Axial column.
    pub q: i64,
    /// Axial row.
    pub r: i64,
    pub center: GeoPoint,
    pub ring: [GeoPoint; 6],
}

impl HexCell {
    /// Inclusive containment with a small boundary tolerance.
    fn contains(&self, p: GeoPoint, radius: f64) -> bool {
        let dx = (p.lon - self.center.lon).abs();
        let dy = (p.lat - self.center.lat).abs();
        let tol = EDGE_EPS * radius;
        let half_h = 0.5 * SQRT3 * radius;
        dy <= half_h + tol && SQRT3 * dx + dy <= SQRT3 * radius + 2.0 * tol
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.ring).abs()
    }
}

#[derive(Debug, Clone)]
pub struct HexGrid {
    bbox: BBox,
    cell_size: f64,
    origin: GeoPoint,
    cells: Vec<HexCell>,
    index: HashMap<(i64, i64), CellId>,
}

impl PartialEq for HexGrid {
    fn eq(&self, other: &Self) -> bool {
        self.bbox == other.bbox && self.cell_size == other.cell_size && self.cells == other.cells
    }
}

/// Hexagon vertices for a flat-top cell centred at `(x, y)`.
fn hex_ring(x: f64, y: f64, radius: f64) -> [GeoPoint; 6] {
    let mut ring = [GeoPoint { lat: 0.0, lon: 0.0 }; 6];
    for (k, v) in ring.iter_mut().enumerate() {
        let a = (60.0 * k as f64).to_radians();
        *v = GeoPoint {
            lat: y + radius * a.sin(),
            lon: x + radius * a.cos(),
        };
    }
    ring
}

fn axial_center(origin: GeoPoint, radius: f64, q: i64, r: i64) -> (f64, f64) {
    let x = origin.lon + 1.5 * radius * q as f64;
    let y = origin.lat + SQRT3 * radius * (r as f64 + 0.5 * q as f64);
    (x, y)
}

/// Strict positive-area overlap of a flat-top hexagon and a box (separating axes).
fn hex_overlaps_box(cx: f64, cy: f64, radius: f64, bbox: &BBox) -> bool {
    let tol = EDGE_EPS * radius;
    let ring = hex_ring(cx, cy, radius);
    let corners = [
        (bbox.min_lon, bbox.min_lat),
        (bbox.max_lon, bbox.min_lat),
        (bbox.max_lon, bbox.max_lat),
        (bbox.min_lon, bbox.max_lat),
    ];
    let axes = [
        (1.0, 0.0),
        (0.0, 1.0),
        (0.5 * SQRT3, 0.5),
        (-0.5 * SQRT3, 0.5),
    ];
    axes.iter().all(|&(ax, ay)| {
        let (mut hmin, mut hmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &ring {
            let s = v.lon * ax + v.lat * ay;
            hmin = hmin.min(s);
            hmax = hmax.max(s);
        }
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &corners {
            let s = x * ax + y * ay;
            bmin = bmin.min(s);
            bmax = bmax.max(s);
        }
        hmax > bmin + tol && bmax > hmin + tol
    })
}

fn cube_round(qf: f64, rf: f64) -> (i64, i64) {
    let sf = -qf - rf;
    let (mut q, mut r, s) = (qf.round(), rf.round(), sf.round());
    let (dq, dr, ds) = ((q - qf).abs(), (r - rf).abs(), (s - sf).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    (q as i64, r as i64)
}

const NEIGHBOURS: [(i64, i64); 7] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

impl HexGrid {
    /// Tiles `bbox` with flat-top hexagons of circumradius `cell_size_deg`.
    pub fn build(bbox: BBox, cell_size_deg: f64) -> Result<Self> {
        bbox.validate()?;
        if !(cell_size_deg > 0.0) || !cell_size_deg.is_finite() {
            return Err(Error::InvalidCellSize(cell_size_deg));
        }
        let radius = cell_size_deg;
        let origin = bbox.center();
        let q_lo = ((bbox.min_lon - origin.lon - radius) / (1.5 * radius)).floor() as i64 - 1;
        let q_hi = ((bbox.max_lon - origin.lon + radius) / (1.5 * radius)).ceil() as i64 + 1;

        let mut found = Vec::new();
        for q in q_lo..=q_hi {
            let r_lo = ((bbox.min_lat - origin.lat - radius) / (SQRT3 * radius) - 0.5 * q as f64)
                .floor() as i64
                - 1;
            let r_hi = ((bbox.max_lat - origin.lat + radius) / (SQRT3 * radius) - 0.5 * q as f64)
                .ceil() as i64
                + 1;
            for r in r_lo..=r_hi {
                let (x, y) = axial_center(origin, radius, q, r);
                if hex_overlaps_box(x, y, radius, &bbox) {
                    let row = r + q.div_euclid(2);
                    found.push((row, q, r, x, y));
                }
            }
        }
        found.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut cells = Vec::with_capacity(found.len());
        let mut index = HashMap::with_capacity(found.len());
        for (id, &(_, q, r, x, y)) in found.iter().enumerate() {
            let id = id as CellId;
            index.insert((q, r), id);
            cells.push(HexCell {
                id,
                q,
                r,
                center: GeoPoint { lat: y, lon: x },
                ring: hex_ring(x, y, radius),
            });
        }
        Ok(Self {
            bbox,
            cell_size: cell_size_deg,
            origin,
            cells,
            index,
        })
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[HexCell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> Result<&HexCell> {
        self.cells.get(id as usize).ok_or(Error::UnknownCell(id))
    }

    /// Cell containing `p`, or `None` outside the bounding box.
    pub fn locate(&self, p: GeoPoint) -> Option<CellId> {
        if !self.bbox.contains(p) {
            return None;
        }
        let x = (p.lon - self.origin.lon) / self.cell_size;
        let y = (p.lat - self.origin.lat) / self.cell_size;
        let qf = 2.0 / 3.0 * x;
        let rf = -x / 3.0 + SQRT3 / 3.0 * y;
        let (q0, r0) = cube_round(qf, rf);
        NEIGHBOURS
            .iter()
            .filter_map(|&(dq, dr)| self.index.get(&(q0 + dq, r0 + dr)).copied())
            .filter(|&id| self.cells[id as usize].contains(p, self.cell_size))
            .min()
    }

    /// Linear-scan reference for [`HexGrid::locate`].
    pub fn locate_scan(&self, p: GeoPoint) -> Option<CellId> {
        if !self.bbox.contains(p) {
            return None;
        }
        self.cells
            .iter()
            .find(|c| c.contains(p, self.cell_size))
            .map(|c| c.id)
    }

    /// Vertex-average centroid of a cell.
    pub fn cell_centroid(&self, id: CellId) -> Result<GeoPoint> {
        let cell = self.cell(id)?;
        let n = cell.ring.len() as f64;
        let (lat, lon) = cell
            .ring
            .iter()
            .fold((0.0, 0.0), |(a, b), v| (a + v.lat, b + v.lon));
        Ok(GeoPoint {
            lat: lat / n,
            lon: lon / n,
        })
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .cells
            .iter()
            .map(|c| {
                json!({
                    "type": "Feature",
                    "properties": { "cell_id": c.id },
                    "geometry": { "type": "Polygon", "coordinates": [closed_ring(&c.ring)] },
                })
            })
            .collect();
        json!({
            "type": "FeatureCollection",
            "bbox": [self.bbox.min_lon, self.bbox.min_lat, self.bbox.max_lon, self.bbox.max_lat],
            "cell_size_deg": self.cell_size,
            "features": features,
        })
    }

    /// Rebuilds a grid from [`HexGrid::to_geojson`] output and checks the
    /// stored cells agree with the regenerated tiling.
    pub fn from_geojson(v: &Value) -> Result<Self> {
        let bbox = v
            .get("bbox")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 4)
            .ok_or_else(|| Error::GeoJson("grid collection needs a 4-element bbox".into()))?;
        let num = |i: usize| {
            bbox[i]
                .as_f64()
                .ok_or_else(|| Error::GeoJson("bbox entries must be numbers".into()))
        };
        let bbox = BBox::new(num(1)?, num(0)?, num(3)?, num(2)?)?;
        let size = v
            .get("cell_size_deg")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::GeoJson("missing cell_size_deg".into()))?;
        let grid = Self::build(bbox, size)?;
        let features = v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::GeoJson("missing features".into()))?;
        if features.len() != grid.cell_count() {
            return Err(Error::GeoJson(format!(
                "{} cells stored, tiling yields {}",
                features.len(),
                grid.cell_count()
            )));
        }
        for f in features {
            let id = f
                .pointer("/properties/cell_id")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::GeoJson("feature without cell_id".into()))?;
            let ring = parse_ring(f)?;
            let cell = grid.cell(id as CellId)?;
            let close = ring
                .iter()
                .zip(cell.ring.iter())
                .all(|(a, b)| (a.lat - b.lat).abs() < 1e-9 && (a.lon - b.lon).abs() < 1e-9);
            if !close {
                return Err(Error::GeoJson(format!(
                    "cell {id} geometry disagrees with tiling"
                )));
            }
        }
        Ok(grid)
    }
}

fn closed_ring(ring: &[GeoPoint]) -> Vec<[f64; 2]> {
    let mut coords: Vec<[f64; 2]> = ring.iter().map(|p| [p.lon, p.lat]).collect();
    coords.push([ring[0].lon, ring[0].lat]);
    coords
}

fn parse_ring(feature: &Value) -> Result<Vec<GeoPoint>> {
    let coords = feature
        .pointer("/geometry/coordinates/0")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("polygon feature without outer ring".into()))?;
    let mut ring = Vec::with_capacity(coords.len());
    for c in coords {
        let pair = c.as_array().filter(|a| a.len() >= 2);
        let (lon, lat) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
            Some((Some(lon), Some(lat))) => (lon, lat),
            _ => return Err(Error::GeoJson("coordinate must be [lon, lat]".into())),
        };
        ring.push(GeoPoint::new(lat, lon)?);
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    Ok(ring)
}

/// Signed shoelace area in squared degrees (positive for counter-clockwise).
pub fn polygon_area(ring: &[GeoPoint]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        acc += a.lon * b.lat - b.lon * a.lat;
    }
    0.5 * acc
}

fn cross(o: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon)
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint, tol: f64) -> bool {
    let len = ((b.lon - a.lon).powi(2) + (b.lat - a.lat).powi(2)).sqrt();
    if len == 0.0 {
        return (p.lon - a.lon).abs() <= tol && (p.lat - a.lat).abs() <= tol;
    }
    if (cross(a, b, p) / len).abs() > tol {
        return false;
    }
    let dot = (p.lon - a.lon) * (b.lon - a.lon) + (p.lat - a.lat) * (b.lat - a.lat);
    dot >= -tol * len && dot <= len * len + tol * len
}

/// Proper or touching intersection of segments `ab` and `cd`.
pub fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d, 0.0))
        || (d2 == 0.0 && on_segment(b, c, d, 0.0))
        || (d3 == 0.0 && on_segment(c, a, b, 0.0))
        || (d4 == 0.0 && on_segment(d, a, b, 0.0))
}

/// Inclusive point-in-polygon: boundary points count as inside.
pub fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    for i in 0..n {
        if on_segment(p, ring[i], ring[(i + 1) % n], 1e-12) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// A hand-placed high-traffic polygon whose crossing marks a lane commitment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePolygon {
    pub id: RouteId,
    pub ring: Vec<GeoPoint>,
    pub centroid: GeoPoint,
}

impl RoutePolygon {
    /// Validates a simple ring of at least three vertices; a closing
    /// duplicate vertex is dropped.
    pub fn new(id: RouteId, mut ring: Vec<GeoPoint>) -> Result<Self> {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "route {id} has {} vertices",
                ring.len()
            )));
        }
        let area = polygon_area(&ring);
        if area.abs() < 1e-15 {
            return Err(Error::InvalidPolygon(format!("route {id} has zero area")));
        }
        let n = ring.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                    return Err(Error::InvalidPolygon(format!("route {id} self-intersects")));
                }
            }
        }
        let centroid = area_centroid(&ring, area);
        Ok(Self { id, ring, centroid })
    }

    /// Axis-aligned rectangle helper.
    pub fn rect(
        id: RouteId,
        min_lat: f64,
        min_lon: f64,
        max_lat: f64,
        max_lon: f64,
    ) -> Result<Self> {
        Self::new(
            id,
            vec![
                GeoPoint::new(min_lat, min_lon)?,
                GeoPoint::new(min_lat, max_lon)?,
                GeoPoint::new(max_lat, max_lon)?,
                GeoPoint::new(max_lat, min_lon)?,
            ],
        )
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        point_in_ring(p, &self.ring)
    }
}

fn area_centroid(ring: &[GeoPoint], area: f64) -> GeoPoint {
    let n = ring.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        let f = a.lon * b.lat - b.lon * a.lat;
        cx += (a.lon + b.lon) * f;
        cy += (a.lat + b.lat) * f;
    }
    GeoPoint {
        lat: cy / (6.0 * area),
        lon: cx / (6.0 * area),
    }
}

/// Lowest-id route polygon containing `p`.
pub fn which_route(routes: &[RoutePolygon], p: GeoPoint) -> Option<RouteId> {
    routes.iter().filter(|r| r.contains(p)).map(|r| r.id).min()
}

pub fn routes_to_geojson(routes: &[RoutePolygon]) -> Value {
    let features: Vec<Value> = routes
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "properties": { "route_id": r.id },
                "geometry": { "type": "Polygon", "coordinates": [closed_ring(&r.ring)] },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn routes_from_geojson(v: &Value) -> Result<Vec<RoutePolygon>> {
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("missing features".into()))?;
    let mut routes = Vec::with_capacity(features.len());
    for f in features {
        let id = f
            .pointer("/properties/route_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::GeoJson("feature without route_id".into()))?;
        routes.push(RoutePolygon::new(id as RouteId, parse_ring(f)?)?);
    }
    routes.sort_by_key(|r| r.id);
    Ok(routes)
}
