//! Feature sets, normalization and sliding-window samples.

use std::fmt;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::grid::BBox;
use crate::ingest::Track;
use crate::probmodel::ProbFeatures;

/// Input rows per sample: 3 h at 10-minute spacing plus the shared boundary row.
pub const INPUT_ROWS: usize = 19;
/// Target rows per sample: 12 h at 10-minute spacing.
pub const TARGET_ROWS: usize = 72;
/// Rows between consecutive window anchors (30 minutes).
pub const STRIDE_ROWS: usize = 3;
/// Fewest real rows an input window may hold before padding.
pub const MIN_INPUT_ROWS: usize = 3;

pub const WINDOWS_SCHEMA: &str = "windows.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Standard,
    Probabilistic,
    Trigonometric,
}

const STANDARD_NAMES: [&str; 6] = ["lon", "lat", "v", "dv", "theta", "dtheta"];

const PROBABILISTIC_NAMES: [&str; 12] = [
    "lon", "lat", "v", "dv", "theta", "dtheta", "lon_r", "lat_r", "lon_n", "lat_n", "lon_d",
    "lat_d",
];

const TRIGONOMETRIC_NAMES: [&str; 30] = [
    "lon",
    "lat",
    "alpha",
    "beta",
    "gamma",
    "v",
    "dv",
    "theta",
    "dtheta",
    "v_log",
    "dv_log",
    "cos_theta",
    "sin_theta",
    "cos_dtheta",
    "sin_dtheta",
    "lon_r",
    "lat_r",
    "alpha_r",
    "beta_r",
    "gamma_r",
    "lon_n",
    "lat_n",
    "alpha_n",
    "beta_n",
    "gamma_n",
    "lon_d",
    "lat_d",
    "alpha_d",
    "beta_d",
    "gamma_d",
];

impl FeatureSet {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Self::Standard => &STANDARD_NAMES,
            Self::Probabilistic => &PROBABILISTIC_NAMES,
            Self::Trigonometric => &TRIGONOMETRIC_NAMES,
        }
    }

    pub fn arity(self) -> usize {
        self.names().len()
    }

    pub fn needs_probabilistic(self) -> bool {
        self != Self::Standard
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "probabilistic" => Ok(Self::Probabilistic),
            "trigonometric" | "trig" => Ok(Self::Trigonometric),
            other => Err(Error::Config(format!(
                "unknown feature set `{other}` (expected standard, probabilistic or trigonometric)"
            ))),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Probabilistic => "probabilistic",
            Self::Trigonometric => "trigonometric",
        })
    }
}

/// `(lon, lat, v, dv, theta, dtheta)` per message.
pub fn standard_features(track: &Track) -> Result<Vec<[f64; 6]>> {
    if track.points.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: track.points.len(),
        });
    }
    Ok(track
        .points
        .iter()
        .map(|p| {
            [
                p.pos.lon,
                p.pos.lat,
                p.kin.v,
                p.kin.dv,
                p.kin.theta,
                p.kin.dtheta,
            ]
        })
        .collect())
}

/// Standard features followed by the route, cell and destination centroids.
pub fn probabilistic_features(track: &Track, prob: &[ProbFeatures]) -> Result<Vec<[f64; 12]>> {
    let std_rows = standard_features(track)?;
    if prob.len() != std_rows.len() {
        return Err(Error::LengthMismatch(std_rows.len(), prob.len()));
    }
    Ok(std_rows
        .iter()
        .zip(prob)
        .map(|(s, p)| {
            let mut row = [0.0; 12];
            row[..6].copy_from_slice(s);
            row[6..].copy_from_slice(&[
                p.route.lon,
                p.route.lat,
                p.cell.lon,
                p.cell.lat,
                p.dest.lon,
                p.dest.lat,
            ]);
            row
        })
        .collect())
}

/// Unit-sphere projection `(α, β, γ)` of a coordinate given in degrees.
pub fn sphere(lon_deg: f64, lat_deg: f64) -> [f64; 3] {
    let (lon, lat) = (lon_deg.to_radians(), lat_deg.to_radians());
    [lon.cos() * lat.cos(), lon.sin() * lat.cos(), lat.sin()]
}

/// Extends a probabilistic row with unit-sphere coordinates, log speed and
/// sinusoidal bearings. `previous_log_speed` is `v'` of the preceding message
/// (`None` for the first one, giving `Δv' = 0`).
pub fn trig_features(row: &[f64; 12], previous_log_speed: Option<f64>) -> [f64; 30] {
    let [lon, lat, v, dv, theta, dtheta, lon_r, lat_r, lon_n, lat_n, lon_d, lat_d] = *row;
    let v_log = (1.0 + v.abs()).ln();
    let dv_log = previous_log_speed.map_or(0.0, |prev| v_log - prev);
    let (th, dth) = (
        theta * std::f64::consts::PI / 200.0,
        dtheta * std::f64::consts::PI / 200.0,
    );
    let s = sphere(lon, lat);
    let r = sphere(lon_r, lat_r);
    let n = sphere(lon_n, lat_n);
    let d = sphere(lon_d, lat_d);
    [
        lon,
        lat,
        s[0],
        s[1],
        s[2],
        v,
        dv,
        theta,
        dtheta,
        v_log,
        dv_log,
        th.cos(),
        th.sin(),
        dth.cos(),
        dth.sin(),
        lon_r,
        lat_r,
        r[0],
        r[1],
        r[2],
        lon_n,
        lat_n,
        n[0],
        n[1],
        n[2],
        lon_d,
        lat_d,
        d[0],
        d[1],
        d[2],
    ]
}

/// Raw (unnormalized) feature rows for a track.
pub fn track_features(
    track: &Track,
    set: FeatureSet,
    prob: Option<&[ProbFeatures]>,
) -> Result<Vec<Vec<f64>>> {
    match set {
        FeatureSet::Standard => Ok(standard_features(track)?
            .into_iter()
            .map(|r| r.to_vec())
            .collect()),
        FeatureSet::Probabilistic | FeatureSet::Trigonometric => {
            let prob = prob.ok_or_else(|| {
                Error::Config(format!("feature set `{set}` needs probabilistic features"))
            })?;
            let rows = probabilistic_features(track, prob)?;
            if set == FeatureSet::Probabilistic {
                return Ok(rows.into_iter().map(|r| r.to_vec()).collect());
            }
            let mut prev = None;
            Ok(rows
                .iter()
                .map(|r| {
                    let t = trig_features(r, prev);
                    prev = Some(t[9]);
                    t.to_vec()
                })
                .collect())
        }
    }
}

/// Caps used for features whose range is not tied to the study area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerCaps {
    pub speed_max_knots: f64,
    pub accel_max_knots_per_hour: f64,
    /// Latitude decode range of the output head.
    pub head_lat: (f64, f64),
    /// Longitude decode range of the output head.
    pub head_lon: (f64, f64),
}

impl Default for NormalizerCaps {
    fn default() -> Self {
        Self {
            speed_max_knots: 30.0,
            accel_max_knots_per_hour: 60.0,
            head_lat: (-68.0, 45.0),
            head_lon: (-58.0, 50.0),
        }
    }
}

/// Per-feature affine map onto [0, 1], plus the coordinate ranges of the output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_set: FeatureSet,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub head_lat: (f64, f64),
    pub head_lon: (f64, f64),
}

/// Range of one unit-sphere component over the box, from a dense lattice.
fn sphere_range(bbox: &BBox, k: usize) -> (f64, f64) {
    const STEPS: usize = 32;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=STEPS {
        for j in 0..=STEPS {
            let lat = bbox.min_lat + (bbox.max_lat - bbox.min_lat) * i as f64 / STEPS as f64;
            let lon = bbox.min_lon + (bbox.max_lon - bbox.min_lon) * j as f64 / STEPS as f64;
            let v = sphere(lon, lat)[k];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let pad = ((hi - lo) * 0.01).max(1e-9);
    ((lo - pad).max(-1.0), (hi + pad).min(1.0))
}

impl Normalizer {
    pub fn fit(set: FeatureSet, bbox: &BBox, caps: &NormalizerCaps) -> Result<Self> {
        bbox.validate()?;
        let log_cap = (1.0 + caps.speed_max_knots).ln();
        let range = |name: &str| -> (f64, f64) {
            let base = name
                .trim_end_matches("_r")
                .trim_end_matches("_n")
                .trim_end_matches("_d");
            match base {
                "lon" => (bbox.min_lon, bbox.max_lon),
                "lat" => (bbox.min_lat, bbox.max_lat),
                "alpha" => sphere_range(bbox, 0),
                "beta" => sphere_range(bbox, 1),
                "gamma" => sphere_range(bbox, 2),
                "v" => (0.0, caps.speed_max_knots),
                "dv" => (
                    -caps.accel_max_knots_per_hour,
                    caps.accel_max_knots_per_hour,
                ),
                "theta" => (0.0, 400.0),
                "dtheta" => (-200.0, 200.0),
                "v_log" => (0.0, log_cap),
                "dv_log" => (-log_cap, log_cap),
                _ => (-1.0, 1.0),
            }
        };
        let (mut min, mut max) = (Vec::new(), Vec::new());
        for &name in set.names() {
            let (lo, hi) = range(name);
            if !(hi > lo) {
                return Err(Error::DegenerateRange {
                    feature: name.into(),
                    min: lo,
                    max: hi,
                });
            }
            min.push(lo);
            max.push(hi);
        }
        for (name, (lo, hi)) in [("head_lat", caps.head_lat), ("head_lon", caps.head_lon)] {
            if !(hi > lo) {
                return Err(Error::DegenerateRange {
                    feature: name.into(),
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(Self {
            feature_set: set,
            min,
            max,
            head_lat: caps.head_lat,
            head_lon: caps.head_lon,
        })
    }

    pub fn arity(&self) -> usize {
        self.min.len()
    }

    /// Maps a raw row into [0, 1], clamping out-of-range values.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&y, (&lo, &hi))| lo + y * (hi - lo))
            .collect()
    }

    /// Target coordinate `(lat, lon)` scaled by the head ranges.
    pub fn encode_target(&self, p: GeoPoint) -> [f64; 2] {
        [
            (p.lat - self.head_lat.0) / (self.head_lat.1 - self.head_lat.0),
            (p.lon - self.head_lon.0) / (self.head_lon.1 - self.head_lon.0),
        ]
    }

    pub fn decode_target(&self, y: [f64; 2]) -> GeoPoint {
        GeoPoint {
            lat: self.head_lat.0 + y[0] * (self.head_lat.1 - self.head_lat.0),
            lon: self.head_lon.0 + y[1] * (self.head_lon.1 - self.head_lon.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub mmsi: u32,
    pub track_id: u64,
    /// Timestamp of the last input row, shared with the first target row.
    pub anchor_time: i64,
    /// Route and destination truth labels, when known.
    pub route_id: Option<u32>,
    pub dest_cell: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// `INPUT_ROWS × arity`, row-major, normalized.
    pub input: Vec<f64>,
    /// `TARGET_ROWS × 2` normalized `(lat, lon)`.
    pub target: Vec<f64>,
    pub weight: f64,
    pub meta: SampleMeta,
}

/// Row indices of window anchors: the last input row and first target row.
pub fn window_anchors(n_rows: usize) -> Vec<usize> {
    let first = MIN_INPUT_ROWS - 1;
    (first..)
        .step_by(STRIDE_ROWS)
        .take_while(|a| a + TARGET_ROWS <= n_rows)
        .collect()
}

/// Cuts windows from normalized rows and encoded targets of one track.
/// Inputs shorter than `INPUT_ROWS` are left-padded by repeating the earliest row.
pub fn sliding_windows(
    rows: &[Vec<f64>],
    targets: &[[f64; 2]],
    timestamps: &[i64],
    weight: f64,
    meta: &SampleMeta,
) -> Result<Vec<WindowSample>> {
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch(rows.len(), targets.len()));
    }
    if rows.len() != timestamps.len() {
        return Err(Error::LengthMismatch(rows.len(), timestamps.len()));
    }
    let arity = rows.first().map_or(0, Vec::len);
    Ok(window_anchors(rows.len())
        .into_iter()
        .map(|a| {
            let start = (a + 1).saturating_sub(INPUT_ROWS);
            let real = a + 1 - start;
            let mut input = Vec::with_capacity(INPUT_ROWS * arity);
            for _ in 0..(INPUT_ROWS - real) {
                input.extend_from_slice(&rows[start]);
            }
            for r in &rows[start..=a] {
                input.extend_from_slice(r);
            }
            let target = targets[a..a + TARGET_ROWS]
                .iter()
                .flatten()
                .copied()
                .collect();
            WindowSample {
                input,
                target,
                weight,
                meta: SampleMeta {
                    anchor_time: timestamps[a],
                    ..meta.clone()
                },
            }
        })
        .collect())
}

/// Normalized windows of a set of tracks, cut in parallel and kept in input order.
pub fn windows_for_tracks(
    tracks: &[Track],
    prob: Option<&[Vec<ProbFeatures>]>,
    labels: &[(Option<u32>, Option<u32>)],
    normalizer: &Normalizer,
) -> Result<Vec<WindowSample>> {
    if labels.len() != tracks.len() {
        return Err(Error::LengthMismatch(tracks.len(), labels.len()));
    }
    if let Some(p) = prob {
        if p.len() != tracks.len() {
            return Err(Error::LengthMismatch(tracks.len(), p.len()));
        }
    }
    let per_track: Vec<Vec<WindowSample>> = tracks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let raw = track_features(t, normalizer.feature_set, prob.map(|p| p[i].as_slice()))?;
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| normalizer.apply(r)).collect();
            let targets: Vec<[f64; 2]> = t
                .points
                .iter()
                .map(|p| normalizer.encode_target(p.pos))
                .collect();
            let times: Vec<i64> = t.points.iter().map(|p| p.timestamp).collect();
            let meta = SampleMeta {
                mmsi: t.mmsi,
                track_id: t.track_id,
                anchor_time: 0,
                route_id: labels[i].0,
                dest_cell: labels[i].1,
            };
            sliding_windows(&rows, &targets, &times, t.weight, &meta)
        })
        .collect::<Result<_>>()?;
    Ok(per_track.into_iter().flatten().collect())
}

/// Sidecar describing a binary window tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsSidecar {
    pub schema: String,
    pub feature_set: FeatureSet,
    pub samples: usize,
    pub input_rows: usize,
    pub features: usize,
    pub target_rows: usize,
    pub normalizer: Normalizer,
    pub meta: Vec<SampleMeta>,
    pub weights: Vec<f64>,
    /// Layout of the `.bin` file.
    pub layout: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub normalizer: Normalizer,
    pub samples: Vec<WindowSample>,
}

impl WindowDataset {
    /// Writes `<stem>.bin` (little-endian f64: all inputs, then all targets)
    /// and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let bin = dir.join(format!("{stem}.bin"));
        let file = std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&bin, e);
        for s in &self.samples {
            for x in &s.input {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        for s in &self.samples {
            for x in &s.target {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        let sidecar = WindowsSidecar {
            schema: WINDOWS_SCHEMA.into(),
            feature_set: self.normalizer.feature_set,
            samples: self.samples.len(),
            input_rows: INPUT_ROWS,
            features: self.normalizer.arity(),
            target_rows: TARGET_ROWS,
            normalizer: self.normalizer.clone(),
            meta: self.samples.iter().map(|s| s.meta.clone()).collect(),
            weights: self.samples.iter().map(|s| s.weight).collect(),
            layout: "f64le inputs[samples][input_rows][features] then targets[samples][target_rows][2] (lat, lon)".into(),
        };
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let side: WindowsSidecar = serde_json::from_str(&text)?;
        if side.schema != WINDOWS_SCHEMA {
            return Err(Error::Schema {
                found: side.schema,
                expected: WINDOWS_SCHEMA.into(),
            });
        }
        let bin = dir.join(format!("{stem}.bin"));
        let mut bytes = Vec::new();
        std::fs::File::open(&bin)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&bin, e))?;
        let in_len = side.input_rows * side.features;
        let out_len = side.target_rows * 2;
        let expected = side.samples * (in_len + out_len) * 8;
        if bytes.len() != expected {
            return Err(Error::LengthMismatch(expected, bytes.len()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (inputs, targets) = values.split_at(side.samples * in_len);
        let samples = (0..side.samples)
            .map(|i| WindowSample {
                input: inputs[i * in_len..(i + 1) * in_len].to_vec(),
                target: targets[i * out_len..(i + 1) * out_len].to_vec(),
                weight: side.weights[i],
                meta: side.meta[i].clone(),
            })
            .collect();
        Ok(Self {
            normalizer: side.normalizer,
            samples,
        })
    }

    /// One CSV line per sample row: `sample,kind,row,<values>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let mut header = vec!["sample".to_string(), "kind".into(), "row".into()];
        header.extend(
            self.normalizer
                .feature_set
                .names()
                .iter()
                .map(|s| s.to_string()),
        );
        wtr.write_record(&header)?;
        let arity = self.normalizer.arity();
        for (i, s) in self.samples.iter().enumerate() {
            for (r, chunk) in s.input.chunks(arity).enumerate() {
                let mut rec = vec![i.to_string(), "input".into(), r.to_string()];
                rec.extend(chunk.iter().map(f64::to_string));
                wtr.write_record(&rec)?;
            }
            for (r, chunk) in s.target.chunks(2).enumerate() {
                let mut rec = vec![i.to_string(), "target".into(), r.to_string()];
                rec.extend(chunk.iter().map(f64::to_string));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
