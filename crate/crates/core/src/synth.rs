//! Seeded synthetic traffic on lane graphs, with ground-truth labels.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, haversine_km, GeoPoint, KM_PER_NMI};
use crate::grid::{BBox, CellId, HexGrid, RouteId, RoutePolygon};
use crate::ingest::{AisMessage, VesselType};

/// One origin-to-destination waypoint chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub route_id: Option<RouteId>,
    pub waypoints: Vec<GeoPoint>,
    /// Probability of a voyage picking this lane; lanes sum to 1.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneWorld {
    pub seed: u64,
    pub bbox: BBox,
    pub cell_size: f64,
    pub routes: Vec<RoutePolygon>,
    pub ports: Vec<(String, GeoPoint)>,
    pub lanes: Vec<Lane>,
    pub vessels: usize,
    pub voyages_per_vessel: usize,
    /// Standard deviation of the per-voyage lateral offset from the lane.
    pub cross_track_sigma_km: f64,
    /// Standard deviation of the per-message lateral jitter.
    pub jitter_km: f64,
    pub speed_knots: (f64, f64),
    pub speed_sigma_knots: f64,
    pub interval_minutes: (f64, f64),
    pub start_epoch: i64,
}

/// Ground truth for one generated voyage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoyageLabel {
    pub track_id: u64,
    pub mmsi: u32,
    pub route_id: Option<RouteId>,
    pub dest_cell: CellId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub messages: Vec<AisMessage>,
    pub labels: Vec<VoyageLabel>,
}

const FORK_A: (f64, f64) = (48.0, -65.5);
const FORK_B_LON: f64 = -64.5;
const FORK_C: (f64, f64) = (48.0, -58.8);

/// Smooth lane from `from` to `to` bulging by `height` degrees of latitude.
fn bump_lane(from: GeoPoint, to: GeoPoint, height: f64, steps: usize) -> Vec<GeoPoint> {
    (0..=steps)
        .map(|i| {
            let f = i as f64 / steps as f64;
            let bulge = height * (std::f64::consts::PI * f).sin().powi(2);
            GeoPoint {
                lat: from.lat + f * (to.lat - from.lat) + bulge,
                lon: from.lon + f * (to.lon - from.lon),
            }
        })
        .collect()
}

impl LaneWorld {
    pub fn grid(&self) -> Result<HexGrid> {
        HexGrid::build(self.bbox, self.cell_size)
    }

    pub fn port_points(&self) -> Vec<GeoPoint> {
        self.ports.iter().map(|p| p.1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let total: f64 = self.lanes.iter().map(|l| l.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("lane probabilities sum to {total}")));
        }
        for lane in &self.lanes {
            if lane.waypoints.len() < 2 {
                return Err(Error::Config("lane needs at least two waypoints".into()));
            }
            for end in [lane.waypoints[0], lane.waypoints[lane.waypoints.len() - 1]] {
                if grid.locate(end).is_none() {
                    return Err(Error::Config(format!(
                        "lane endpoint {end:?} outside the grid"
                    )));
                }
            }
        }
        let (lo, hi) = self.speed_knots;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid speed range {lo}..{hi}")));
        }
        let (lo, hi) = self.interval_minutes;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid interval range {lo}..{hi}")));
        }
        Ok(())
    }

    /// A→B shared prefix, then a northern branch through route 1 (2/3 of
    /// voyages) or a southern branch through route 2 (1/3) to C.
    pub fn fork_world(seed: u64) -> Result<Self> {
        let bbox = BBox::new(46.0, -66.0, 50.0, -58.0)?;
        let cell_size = 0.3;
        let grid = HexGrid::build(bbox, cell_size)?;
        let snap = |(lat, lon): (f64, f64)| -> Result<GeoPoint> {
            let p = GeoPoint::new(lat, lon)?;
            let id = grid
                .locate(p)
                .ok_or_else(|| Error::Config(format!("{p:?} outside grid")))?;
            grid.cell_centroid(id)
        };
        let a = snap(FORK_A)?;
        let c = snap(FORK_C)?;
        let b = GeoPoint {
            lat: a.lat,
            lon: FORK_B_LON,
        };

        let branch = |height: f64| {
            let mut w = vec![a];
            w.extend(bump_lane(b, c, height, 48));
            w
        };
        let peak_lon = (b.lon + c.lon) / 2.0;
        let north = a.lat + 1.2;
        let south = a.lat - 1.3;
        let routes = vec![
            RoutePolygon::rect(1, north - 0.3, peak_lon - 0.6, north + 0.3, peak_lon + 0.6)?,
            RoutePolygon::rect(2, south - 0.3, peak_lon - 0.6, south + 0.3, peak_lon + 0.6)?,
        ];
        Ok(Self {
            seed,
            bbox,
            cell_size,
            routes,
            ports: vec![("A".into(), a), ("C".into(), c)],
            lanes: vec![
                Lane {
                    route_id: Some(1),
                    waypoints: branch(1.2),
                    probability: 2.0 / 3.0,
                },
                Lane {
                    route_id: Some(2),
                    waypoints: branch(-1.3),
                    probability: 1.0 / 3.0,
                },
            ],
            vessels: 1000,
            voyages_per_vessel: 3,
            cross_track_sigma_km: 2.0,
            jitter_km: 0.05,
            speed_knots: (10.0, 18.0),
            speed_sigma_knots: 0.3,
            interval_minutes: (3.0, 9.0),
            start_epoch: 1_577_836_800,
        })
    }

    pub fn zero_noise(mut self) -> Self {
        self.cross_track_sigma_km = 0.0;
        self.jitter_km = 0.0;
        self.speed_sigma_knots = 0.0;
        self
    }

    fn pick_lane(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, lane) in self.lanes.iter().enumerate() {
            acc += lane.probability;
            if u < acc {
                return i;
            }
        }
        self.lanes.len() - 1
    }
}

/// Position at `dist_km` along a polyline, linear in lat/lon within each
/// segment, and the segment's bearing in degrees.
fn along(poly: &[GeoPoint], cum: &[f64], dist_km: f64) -> (GeoPoint, f64) {
    let i = match cum.iter().position(|&c| c >= dist_km) {
        Some(0) => 1,
        Some(i) => i,
        None => cum.len() - 1,
    };
    let (a, b) = (poly[i - 1], poly[i]);
    let seg = cum[i] - cum[i - 1];
    let f = if seg > 0.0 {
        ((dist_km - cum[i - 1]) / seg).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p = GeoPoint {
        lat: a.lat + f * (b.lat - a.lat),
        lon: a.lon + f * (b.lon - a.lon),
    };
    (p, geo::bearing_deg(a, b).unwrap_or(0.0))
}

fn offset(p: GeoPoint, bearing: f64, km: f64) -> GeoPoint {
    if km == 0.0 {
        p
    } else {
        geo::destination(p, bearing + 90.0, km)
    }
}

fn vessel_seed(seed: u64, vessel: usize) -> u64 {
    seed ^ (vessel as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Generates every vessel's voyages. Voyages of one vessel are separated by
/// 10–20 h so they segment apart.
pub fn generate(world: &LaneWorld) -> Result<SynthCorpus> {
    world.validate()?;
    let grid = world.grid()?;
    let cumulative: Vec<Vec<f64>> = world
        .lanes
        .iter()
        .map(|l| {
            let mut c = vec![0.0];
            for w in l.waypoints.windows(2) {
                c.push(c[c.len() - 1] + haversine_km(w[0], w[1]));
            }
            c
        })
        .collect();
    let dest_cells: Vec<CellId> = world
        .lanes
        .iter()
        .map(|l| {
            grid.locate(l.waypoints[l.waypoints.len() - 1])
                .expect("validated")
        })
        .collect();

    let per_vessel: Vec<(Vec<AisMessage>, Vec<(usize, u32)>)> = (0..world.vessels)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(vessel_seed(world.seed, v));
            let mmsi = 316_000_000 + v as u32;
            let vessel_type = if rng.random_bool(0.5) {
                VesselType::Cargo
            } else {
                VesselType::Tanker
            };
            let mut t = world.start_epoch + rng.random_range(0..86_400);
            let mut msgs = Vec::new();
            let mut voyages = Vec::new();
            for _ in 0..world.voyages_per_vessel {
                let li = world.pick_lane(&mut rng);
                let lane = &world.lanes[li];
                let cum = &cumulative[li];
                let total = cum[cum.len() - 1];
                let speed = rng.random_range(world.speed_knots.0..=world.speed_knots.1);
                let lateral = normal(&mut rng, world.cross_track_sigma_km);
                let mut dist = 0.0f64;
                loop {
                    let (p, bearing) = along(&lane.waypoints, cum, dist.min(total));
                    let pos = offset(p, bearing, lateral + normal(&mut rng, world.jitter_km));
                    msgs.push(AisMessage {
                        mmsi,
                        timestamp: t,
                        pos,
                        sog: Some(speed),
                        cog: Some(bearing),
                        vessel_type,
                    });
                    if dist >= total {
                        break;
                    }
                    let dt = rng.random_range(world.interval_minutes.0..=world.interval_minutes.1)
                        * 60.0;
                    let dt = dt.round().max(1.0);
                    let v = (speed + normal(&mut rng, world.speed_sigma_knots)).max(1.0);
                    dist += v * KM_PER_NMI * dt / 3600.0;
                    t += dt as i64;
                }
                voyages.push((li, mmsi));
                t += rng.random_range(36_000..72_000);
            }
            (msgs, voyages)
        })
        .collect();

    let mut corpus = SynthCorpus {
        messages: Vec::new(),
        labels: Vec::new(),
    };
    for (msgs, voyages) in per_vessel {
        corpus.messages.extend(msgs);
        for (li, mmsi) in voyages {
            corpus.labels.push(VoyageLabel {
                track_id: corpus.labels.len() as u64,
                mmsi,
                route_id: world.lanes[li].route_id,
                dest_cell: dest_cells[li],
            });
        }
    }
    Ok(corpus)
}

/// Writes `track_id,route_id,dest_cell`; a missing route is left empty.
pub fn write_labels_csv<W: Write>(w: W, labels: &[VoyageLabel]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["track_id", "route_id", "dest_cell"])?;
    for l in labels {
        wtr.write_record([
            l.track_id.to_string(),
            l.route_id.map(|r| r.to_string()).unwrap_or_default(),
            l.dest_cell.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Writes a ports file `name,lat,lon`.
pub fn write_ports_csv<W: Write>(w: W, ports: &[(String, GeoPoint)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["name", "lat", "lon"])?;
    for (name, p) in ports {
        wtr.write_record([name.clone(), p.lat.to_string(), p.lon.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, vessels: usize) -> LaneWorld {
        let mut w = LaneWorld::fork_world(seed).unwrap();
        w.vessels = vessels;
        w
    }

    #[test]
    fn fork_world_shape() {
        let w = LaneWorld::fork_world(1).unwrap();
        assert_eq!(w.routes.len(), 2);
        assert_eq!(w.lanes.len(), 2);
        assert_eq!(w.lanes[0].waypoints[..2], w.lanes[1].waypoints[..2]);
        for lane in &w.lanes {
            assert!(lane.waypoints.iter().all(|p| w.bbox.contains(*p)));
        }
        w.validate().unwrap();
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small(5, 20)).unwrap();
        let b = generate(&small(5, 20)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(6, 20)).unwrap();
        assert_ne!(a.messages, c.messages);
        assert_eq!(a.labels.len(), 60);
    }

    #[test]
    fn zero_noise_lies_on_lane() {
        let w = small(3, 4).zero_noise();
        let corpus = generate(&w).unwrap();
        for m in &corpus.messages {
            let on_some_lane = w.lanes.iter().any(|lane| {
                lane.waypoints.windows(2).any(|s| {
                    let (a, b) = (s[0], s[1]);
                    let cross = (b.lon - a.lon) * (m.pos.lat - a.lat)
                        - (b.lat - a.lat) * (m.pos.lon - a.lon);
                    let within = m.pos.lon >= a.lon.min(b.lon) - 1e-12
                        && m.pos.lon <= a.lon.max(b.lon) + 1e-12;
                    cross.abs() < 1e-9 && within
                })
            });
            assert!(on_some_lane, "{:?} off lane", m.pos);
        }
    }
}
