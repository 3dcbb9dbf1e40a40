//! AIS ingestion and track curation.
//!
//! The pipeline runs: parse → [`segment`] → [`clean`] (port scrub,
//! 10-minute interpolation, self-intersection and same-port removal, stratum
//! outliers) → [`augment_reverse`] → [`split_on_turn`] → [`stratify_and_split`].
//! [`curate`] wires the middle stages with a [`CurationConfig`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, haversine_km, GeoPoint, Kinematics};
use crate::grid::{segments_intersect, CellId, HexGrid};

pub const CSV_HEADER: [&str; 7] = [
    "mmsi",
    "timestamp_iso8601",
    "lat",
    "lon",
    "sog_knots",
    "cog_deg",
    "vessel_type",
];

/// Resampling step in seconds.
pub const STEP_SECONDS: i64 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselType {
    Cargo,
    Tanker,
    Other,
}

impl FromStr for VesselType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cargo" => Ok(Self::Cargo),
            "tanker" => Ok(Self::Tanker),
            "other" | "" => Ok(Self::Other),
            other => Err(Error::Config(format!("unknown vessel type `{other}`"))),
        }
    }
}

impl fmt::Display for VesselType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cargo => "cargo",
            Self::Tanker => "tanker",
            Self::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisMessage {
    pub mmsi: u32,
    /// UTC seconds since the Unix epoch.
    pub timestamp: i64,
    pub pos: GeoPoint,
    pub sog: Option<f64>,
    pub cog: Option<f64>,
    pub vessel_type: VesselType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub timestamp: i64,
    pub pos: GeoPoint,
    pub kin: Kinematics,
}

/// Start and end cell of a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub start: CellId,
    pub end: CellId,
}

/// Time-ordered message run of one vessel, before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub mmsi: u32,
    pub vessel_type: VesselType,
    pub messages: Vec<AisMessage>,
}

/// A resampled voyage segment of one vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub mmsi: u32,
    pub vessel_type: VesselType,
    pub reversed: bool,
    pub points: Vec<TrackPoint>,
    pub stratum: Option<Stratum>,
    pub weight: f64,
}

impl Track {
    /// Builds a track from positions, computing kinematics.
    pub fn from_positions(
        mmsi: u32,
        vessel_type: VesselType,
        positions: &[(i64, GeoPoint)],
    ) -> Result<Self> {
        let kin = geo::kinematics(positions)?;
        let points = positions
            .iter()
            .zip(kin)
            .map(|(&(timestamp, pos), kin)| TrackPoint {
                timestamp,
                pos,
                kin,
            })
            .collect();
        Ok(Self {
            track_id: 0,
            mmsi,
            vessel_type,
            reversed: false,
            points,
            stratum: None,
            weight: 1.0,
        })
    }

    pub fn positions(&self) -> Vec<(i64, GeoPoint)> {
        self.points.iter().map(|p| (p.timestamp, p.pos)).collect()
    }

    pub fn start_time(&self) -> i64 {
        self.points.first().map_or(0, |p| p.timestamp)
    }

    pub fn duration_seconds(&self) -> i64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0,
        }
    }

    fn with_positions(&self, positions: &[(i64, GeoPoint)]) -> Result<Self> {
        let mut t = Self::from_positions(self.mmsi, self.vessel_type, positions)?;
        t.track_id = self.track_id;
        t.reversed = self.reversed;
        t.weight = self.weight;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMode {
    #[default]
    Linear,
    GreatCircle,
}

/// Result of [`parse_csv`]: accepted messages plus the number of rejected rows.
#[derive(Debug, Clone, Default)]
pub struct ParsedCsv {
    pub messages: Vec<AisMessage>,
    pub skipped: usize,
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(t: i64) -> String {
    Utc.timestamp_opt(t, 0)
        .single()
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| t.to_string())
}

fn parse_optional(field: &str) -> std::result::Result<Option<f64>, ()> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

fn parse_row(rec: &csv::StringRecord) -> Option<AisMessage> {
    let mmsi = rec.get(0)?.trim().parse::<u32>().ok()?;
    let timestamp = parse_timestamp(rec.get(1)?)?;
    let lat = rec.get(2)?.trim().parse::<f64>().ok()?;
    let lon = rec.get(3)?.trim().parse::<f64>().ok()?;
    if !(-180.0..=180.0).contains(&lon) {
        return None;
    }
    let pos = GeoPoint::new(lat, lon).ok()?;
    let sog = parse_optional(rec.get(4)?).ok()?;
    let cog = parse_optional(rec.get(5)?).ok()?;
    let vessel_type = rec.get(6)?.parse().ok()?;
    Some(AisMessage {
        mmsi,
        timestamp,
        pos,
        sog,
        cog,
        vessel_type,
    })
}

/// Parses messages from a reader; see [`parse_csv`].
pub fn parse_reader<R: Read>(reader: R, source: &Path) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(ParsedCsv::default()),
        Some(h) => h?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != CSV_HEADER {
        return Err(Error::Header {
            path: source.to_path_buf(),
            expected: CSV_HEADER.join(","),
        });
    }
    let mut out = ParsedCsv::default();
    for rec in records {
        match rec.ok().as_ref().and_then(parse_row) {
            Some(m) => out.messages.push(m),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Reads an AIS CSV with header
/// `mmsi,timestamp_iso8601,lat,lon,sog_knots,cog_deg,vessel_type`.
/// Rows that fail to parse or carry invalid positions are skipped and counted.
pub fn parse_csv(path: &Path) -> Result<ParsedCsv> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(std::io::BufReader::new(file), path)
}

fn message_record(m: &AisMessage) -> [String; 7] {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    [
        m.mmsi.to_string(),
        format_timestamp(m.timestamp),
        m.pos.lat.to_string(),
        m.pos.lon.to_string(),
        opt(m.sog),
        opt(m.cog),
        m.vessel_type.to_string(),
    ]
}

/// Writes messages in the input schema read by [`parse_csv`].
pub fn write_ais_csv<'a, W: std::io::Write>(
    w: W,
    messages: impl IntoIterator<Item = &'a AisMessage>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_HEADER)?;
    for m in messages {
        wtr.write_record(message_record(m))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Writes messages in the input schema with an extra `track_id` column.
pub fn write_messages_csv<W: std::io::Write>(
    w: W,
    rows: impl IntoIterator<Item = (u64, AisMessage)>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    header.push("track_id");
    wtr.write_record(&header)?;
    for (track_id, m) in rows {
        let mut rec = message_record(&m).to_vec();
        rec.push(track_id.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Track points as messages (speed and course from the kinematics).
pub fn track_messages(track: &Track) -> impl Iterator<Item = (u64, AisMessage)> + '_ {
    track.points.iter().map(move |p| {
        (
            track.track_id,
            AisMessage {
                mmsi: track.mmsi,
                timestamp: p.timestamp,
                pos: p.pos,
                sog: Some(p.kin.v),
                cog: Some(geo::from_gradian(p.kin.theta)),
                vessel_type: track.vessel_type,
            },
        )
    })
}

#[derive(Debug, Clone, Deserialize)]
struct PortRow {
    #[allow(dead_code)]
    name: String,
    lat: f64,
    lon: f64,
}

/// Reads a ports CSV with header `name,lat,lon`.
pub fn parse_ports(path: &Path) -> Result<Vec<GeoPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["name", "lat", "lon"] {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: "name,lat,lon".into(),
        });
    }
    let mut ports = Vec::new();
    for row in rdr.deserialize::<PortRow>() {
        let row = row?;
        ports.push(GeoPoint::new(row.lat, row.lon)?);
    }
    Ok(ports)
}

/// Groups messages by vessel, sorts by time and starts a new track whenever
/// consecutive messages are more than `gap_hours` or `gap_km` apart.
pub fn segment(messages: &[AisMessage], gap_hours: f64, gap_km: f64) -> Vec<RawTrack> {
    let mut by_vessel: BTreeMap<u32, Vec<&AisMessage>> = BTreeMap::new();
    for m in messages {
        by_vessel.entry(m.mmsi).or_default().push(m);
    }
    let gap_seconds = gap_hours * 3600.0;
    let mut out = Vec::new();
    for (mmsi, mut msgs) in by_vessel {
        msgs.sort_by_key(|m| m.timestamp);
        let mut current: Vec<AisMessage> = Vec::new();
        for m in msgs {
            if let Some(prev) = current.last() {
                let dt = (m.timestamp - prev.timestamp) as f64;
                if dt > gap_seconds || haversine_km(prev.pos, m.pos) > gap_km {
                    out.push(raw_track(mmsi, std::mem::take(&mut current)));
                }
            }
            current.push(m.clone());
        }
        if !current.is_empty() {
            out.push(raw_track(mmsi, current));
        }
    }
    out
}

fn raw_track(mmsi: u32, messages: Vec<AisMessage>) -> RawTrack {
    let vessel_type = messages[0].vessel_type;
    RawTrack {
        mmsi,
        vessel_type,
        messages,
    }
}

fn slerp(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    let to_vec = |p: GeoPoint| {
        let (la, lo) = (p.lat_rad(), p.lon_rad());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (va, vb) = (to_vec(a), to_vec(b));
    let dot = (va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-12 {
        return GeoPoint {
            lat: a.lat + f * (b.lat - a.lat),
            lon: a.lon + f * (b.lon - a.lon),
        };
    }
    let (wa, wb) = (
        ((1.0 - f) * omega).sin() / omega.sin(),
        (f * omega).sin() / omega.sin(),
    );
    let v: Vec<f64> = (0..3).map(|k| wa * va[k] + wb * vb[k]).collect();
    GeoPoint {
        lat: v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt()).to_degrees(),
        lon: v[1].atan2(v[0]).to_degrees(),
    }
}

/// Resamples positions onto a 10-minute grid anchored at the first timestamp.
///
/// Messages sharing a timestamp keep the first occurrence. The last grid
/// point lies within one step of the original end.
pub fn resample(
    positions: &[(i64, GeoPoint)],
    mode: InterpolationMode,
) -> Result<Vec<(i64, GeoPoint)>> {
    let mut pts: Vec<(i64, GeoPoint)> = Vec::with_capacity(positions.len());
    for &(t, p) in positions {
        match pts.last() {
            Some(&(lt, _)) if t <= lt => continue,
            _ => pts.push((t, p)),
        }
    }
    if pts.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: pts.len(),
        });
    }
    let t0 = pts[0].0;
    let t_end = pts[pts.len() - 1].0;
    let steps = (t_end - t0) / STEP_SECONDS;
    if steps < 1 {
        return Err(Error::TooFewPoints { need: 2, got: 1 });
    }
    let mut out = Vec::with_capacity(steps as usize + 1);
    let mut seg = 0;
    for k in 0..=steps {
        let t = t0 + k * STEP_SECONDS;
        while seg + 1 < pts.len() - 1 && pts[seg + 1].0 < t {
            seg += 1;
        }
        let (ta, a) = pts[seg];
        let (tb, b) = pts[seg + 1];
        let f = ((t - ta) as f64 / (tb - ta) as f64).clamp(0.0, 1.0);
        let p = match mode {
            InterpolationMode::Linear => GeoPoint {
                lat: a.lat + f * (b.lat - a.lat),
                lon: a.lon + f * (b.lon - a.lon),
            },
            InterpolationMode::GreatCircle => slerp(a, b, f),
        };
        out.push((t, p));
    }
    Ok(out)
}

/// Piecewise-linear resampling of a message run onto the 10-minute grid.
pub fn interpolate_10min(track: &RawTrack, mode: InterpolationMode) -> Result<Track> {
    let positions: Vec<(i64, GeoPoint)> = track
        .messages
        .iter()
        .map(|m| (m.timestamp, m.pos))
        .collect();
    let resampled = resample(&positions, mode)?;
    Track::from_positions(track.mmsi, track.vessel_type, &resampled)
}

/// True when any two non-adjacent segments of the polyline touch or cross.
/// Consecutive duplicate points are collapsed first.
pub fn is_self_intersecting(points: &[GeoPoint]) -> bool {
    let mut pts: Vec<GeoPoint> = Vec::with_capacity(points.len());
    for &p in points {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    if pts.len() < 4 {
        return false;
    }
    let segs: Vec<(GeoPoint, GeoPoint, [f64; 4])> = pts
        .windows(2)
        .map(|w| {
            let bb = [
                w[0].lat.min(w[1].lat),
                w[0].lat.max(w[1].lat),
                w[0].lon.min(w[1].lon),
                w[0].lon.max(w[1].lon),
            ];
            (w[0], w[1], bb)
        })
        .collect();
    for i in 0..segs.len() {
        for j in (i + 2)..segs.len() {
            let (a, b) = (&segs[i].2, &segs[j].2);
            if a[1] < b[0] || b[1] < a[0] || a[3] < b[2] || b[3] < a[2] {
                continue;
            }
            if segments_intersect(segs[i].0, segs[i].1, segs[j].0, segs[j].1) {
                return true;
            }
        }
    }
    false
}

fn near_port(p: GeoPoint, ports: &[GeoPoint], radius_km: f64) -> bool {
    ports.iter().any(|&q| haversine_km(p, q) <= radius_km)
}

fn nearest_port(p: GeoPoint, ports: &[GeoPoint], within_km: f64) -> Option<usize> {
    ports
        .iter()
        .enumerate()
        .map(|(i, &q)| (i, haversine_km(p, q)))
        .filter(|&(_, d)| d <= within_km)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Splits a position run wherever points were removed by the port scrub.
fn scrub_runs<T: Clone>(
    items: &[T],
    pos: impl Fn(&T) -> GeoPoint,
    ports: &[GeoPoint],
    radius_km: f64,
) -> Vec<Vec<T>> {
    let mut runs = Vec::new();
    let mut current = Vec::new();
    for it in items {
        if near_port(pos(it), ports, radius_km) {
            if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(it.clone());
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub port_radius_km: f64,
    /// A track end within this distance of a port is attributed to it.
    pub port_match_km: f64,
    pub min_pattern_count: usize,
    pub interpolation: InterpolationMode,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            port_radius_km: 1.0,
            port_match_km: 10.0,
            min_pattern_count: 5,
            interpolation: InterpolationMode::Linear,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input_tracks: usize,
    pub too_short: usize,
    pub self_intersecting: usize,
    pub same_port: usize,
    pub outside_grid: usize,
    pub rare_pattern: usize,
    pub kept: usize,
}

/// Start and end cells, or `None` when either end lies outside the grid.
pub fn stratum_of(track: &Track, grid: &HexGrid) -> Option<Stratum> {
    let start = grid.locate(track.points.first()?.pos)?;
    let end = grid.locate(track.points.last()?.pos)?;
    Some(Stratum { start, end })
}

enum Verdict {
    Keep(Track),
    TooShort,
    SelfIntersecting,
    SamePort,
}

fn clean_one(
    raw: &RawTrack,
    ports: &[GeoPoint],
    grid: &HexGrid,
    cfg: &CleanConfig,
) -> Vec<Verdict> {
    let mut out = Vec::new();
    for run in scrub_runs(&raw.messages, |m| m.pos, ports, cfg.port_radius_km) {
        let piece = RawTrack {
            mmsi: raw.mmsi,
            vessel_type: raw.vessel_type,
            messages: run,
        };
        let Ok(track) = interpolate_10min(&piece, cfg.interpolation) else {
            out.push(Verdict::TooShort);
            continue;
        };
        // chords between surviving messages can pass close to a port again
        for run in scrub_runs(&track.positions(), |p| p.1, ports, cfg.port_radius_km) {
            let Ok(t) = track.with_positions(&run) else {
                out.push(Verdict::TooShort);
                continue;
            };
            let line: Vec<GeoPoint> = t.points.iter().map(|p| p.pos).collect();
            if is_self_intersecting(&line) {
                out.push(Verdict::SelfIntersecting);
                continue;
            }
            let (first, last) = (line[0], line[line.len() - 1]);
            let same_port = if ports.is_empty() {
                matches!((grid.locate(first), grid.locate(last)), (Some(a), Some(b)) if a == b)
            } else {
                matches!(
                    (nearest_port(first, ports, cfg.port_match_km), nearest_port(last, ports, cfg.port_match_km)),
                    (Some(a), Some(b)) if a == b
                )
            };
            if same_port {
                out.push(Verdict::SamePort);
                continue;
            }
            out.push(Verdict::Keep(t));
        }
    }
    out
}

/// Port scrub, resampling, self-intersection, same-port and rare-pattern
/// filters. Tracks whose ends fall outside the grid are dropped.
pub fn clean(
    tracks: &[RawTrack],
    ports: &[GeoPoint],
    grid: &HexGrid,
    cfg: &CleanConfig,
) -> (Vec<Track>, CleanReport) {
    let verdicts: Vec<Vec<Verdict>> = tracks
        .par_iter()
        .map(|raw| clean_one(raw, ports, grid, cfg))
        .collect();
    let mut report = CleanReport {
        input_tracks: tracks.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for v in verdicts.into_iter().flatten() {
        match v {
            Verdict::TooShort => report.too_short += 1,
            Verdict::SelfIntersecting => report.self_intersecting += 1,
            Verdict::SamePort => report.same_port += 1,
            Verdict::Keep(mut t) => match stratum_of(&t, grid) {
                Some(s) => {
                    t.stratum = Some(s);
                    kept.push(t);
                }
                None => report.outside_grid += 1,
            },
        }
    }
    let mut counts: BTreeMap<Stratum, usize> = BTreeMap::new();
    for t in &kept {
        *counts
            .entry(t.stratum.expect("assigned above"))
            .or_default() += 1;
    }
    let before = kept.len();
    kept.retain(|t| counts[&t.stratum.expect("assigned above")] > cfg.min_pattern_count);
    report.rare_pattern = before - kept.len();
    report.kept = kept.len();
    (kept, report)
}

/// Splits a track between consecutive points whose bearing change exceeds
/// `limit_gradian` in magnitude. Fragments shorter than two points are dropped.
pub fn split_on_turn(track: &Track, limit_gradian: f64) -> Vec<Track> {
    let mut cuts = vec![0];
    for (i, p) in track.points.iter().enumerate().skip(1) {
        if p.kin.dtheta.abs() > limit_gradian {
            cuts.push(i);
        }
    }
    if cuts.len() == 1 {
        return vec![track.clone()];
    }
    cuts.push(track.points.len());
    let positions = track.positions();
    cuts.windows(2)
        .filter_map(|w| {
            let piece = &positions[w[0]..w[1]];
            let mut t = track.with_positions(piece).ok()?;
            t.stratum = None;
            Some(t)
        })
        .collect()
}

/// Time-reversed copy with recomputed kinematics. Timestamps are mirrored
/// within the original span so they stay increasing.
pub fn reverse_track(track: &Track) -> Result<Track> {
    let (t0, t1) = (
        track.start_time(),
        track.start_time() + track.duration_seconds(),
    );
    let positions: Vec<(i64, GeoPoint)> = track
        .points
        .iter()
        .rev()
        .map(|p| (t0 + (t1 - p.timestamp), p.pos))
        .collect();
    let mut r = track.with_positions(&positions)?;
    r.reversed = !track.reversed;
    r.stratum = track.stratum.map(|s| Stratum {
        start: s.end,
        end: s.start,
    });
    Ok(r)
}

/// Each track followed by its reversed copy.
pub fn augment_reverse(tracks: &[Track]) -> Result<Vec<Track>> {
    let mut out = Vec::with_capacity(tracks.len() * 2);
    for t in tracks {
        out.push(t.clone());
        out.push(reverse_track(t)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Track>,
    pub val: Vec<Track>,
    pub test: Vec<Track>,
}

/// Balancing weight per stratum: `N / (S * count)`, so every stratum carries
/// the same total weight and all weights sum to `N`.
pub fn stratum_weights(tracks: &[Track]) -> BTreeMap<Option<Stratum>, f64> {
    let mut counts: BTreeMap<Option<Stratum>, usize> = BTreeMap::new();
    for t in tracks {
        *counts.entry(t.stratum).or_default() += 1;
    }
    let n = tracks.len() as f64;
    let s = counts.len() as f64;
    counts
        .into_iter()
        .map(|(k, c)| (k, n / (s * c as f64)))
        .collect()
}

/// Vessel-level stratified split. Each vessel is assigned to its most
/// frequent stratum; within each stratum the vessels are shuffled and
/// `round(n * test)` go to test, then `round(rest * val_of_rest)` to
/// validation. Balancing weights are attached to every track.
pub fn stratify_and_split(
    tracks: &[Track],
    test: f64,
    val_of_rest: f64,
    seed: u64,
) -> Result<Splits> {
    if tracks.is_empty() {
        return Err(Error::Empty("track corpus"));
    }
    if !(0.0..1.0).contains(&test) || !(0.0..1.0).contains(&val_of_rest) {
        return Err(Error::Config(format!(
            "split fractions {test}/{val_of_rest} outside [0, 1)"
        )));
    }
    let weights = stratum_weights(tracks);

    let mut per_vessel: BTreeMap<u32, BTreeMap<Option<Stratum>, usize>> = BTreeMap::new();
    for t in tracks {
        *per_vessel
            .entry(t.mmsi)
            .or_default()
            .entry(t.stratum)
            .or_default() += 1;
    }
    let mut groups: BTreeMap<Option<Stratum>, Vec<u32>> = BTreeMap::new();
    for (mmsi, counts) in &per_vessel {
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(s, _)| *s)
            .expect("vessel has tracks");
        groups.entry(best).or_default().push(*mmsi);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_set = BTreeSet::new();
    let mut val_set = BTreeSet::new();
    for vessels in groups.values_mut() {
        vessels.shuffle(&mut rng);
        let n = vessels.len();
        let n_test = (n as f64 * test).round() as usize;
        let n_val = ((n - n_test) as f64 * val_of_rest).round() as usize;
        test_set.extend(vessels[..n_test].iter().copied());
        val_set.extend(vessels[n_test..n_test + n_val].iter().copied());
    }

    let mut splits = Splits::default();
    for t in tracks {
        let mut t = t.clone();
        t.weight = weights[&t.stratum];
        if test_set.contains(&t.mmsi) {
            splits.test.push(t);
        } else if val_set.contains(&t.mmsi) {
            splits.val.push(t);
        } else {
            splits.train.push(t);
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub gap_hours: f64,
    pub gap_km: f64,
    pub turn_limit_gradian: f64,
    pub clean: CleanConfig,
    /// Vessel types kept; empty keeps all.
    pub vessel_types: Vec<VesselType>,
    pub augment_reverse: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            gap_hours: 8.0,
            gap_km: 50.0,
            turn_limit_gradian: 45.0,
            clean: CleanConfig::default(),
            vessel_types: vec![VesselType::Cargo, VesselType::Tanker],
            augment_reverse: true,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gap_hours", self.gap_hours),
            ("gap_km", self.gap_km),
            ("turn_limit_gradian", self.turn_limit_gradian),
            ("port_radius_km", self.clean.port_radius_km),
            ("port_match_km", self.clean.port_match_km),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub messages: usize,
    pub messages_filtered_by_type: usize,
    pub raw_tracks: usize,
    pub clean: CleanReport,
    pub after_reverse: usize,
    pub after_turn_split: usize,
    pub dropped_outside_grid: usize,
    pub tracks: usize,
}

/// Segments, cleans, augments and turn-splits a message corpus. Output
/// tracks carry strata and sequential ids ordered by (mmsi, start, reversed).
pub fn curate(
    messages: &[AisMessage],
    ports: &[GeoPoint],
    grid: &HexGrid,
    cfg: &CurationConfig,
) -> Result<(Vec<Track>, CurationReport)> {
    cfg.validate()?;
    let mut report = CurationReport {
        messages: messages.len(),
        ..Default::default()
    };
    let kept: Vec<AisMessage> = messages
        .iter()
        .filter(|m| cfg.vessel_types.is_empty() || cfg.vessel_types.contains(&m.vessel_type))
        .cloned()
        .collect();
    report.messages_filtered_by_type = messages.len() - kept.len();

    let raw = segment(&kept, cfg.gap_hours, cfg.gap_km);
    report.raw_tracks = raw.len();
    let (cleaned, clean_report) = clean(&raw, ports, grid, &cfg.clean);
    report.clean = clean_report;

    let augmented = if cfg.augment_reverse {
        augment_reverse(&cleaned)?
    } else {
        cleaned
    };
    report.after_reverse = augmented.len();

    let split: Vec<Track> = augmented
        .iter()
        .flat_map(|t| split_on_turn(t, cfg.turn_limit_gradian))
        .collect();
    report.after_turn_split = split.len();

    let mut tracks = Vec::with_capacity(split.len());
    for mut t in split {
        match stratum_of(&t, grid) {
            Some(s) => {
                t.stratum = Some(s);
                tracks.push(t);
            }
            None => report.dropped_outside_grid += 1,
        }
    }
    tracks.sort_by_key(|t| (t.mmsi, t.start_time(), t.reversed));
    for (i, t) in tracks.iter_mut().enumerate() {
        t.track_id = i as u64;
    }
    report.tracks = tracks.len();
    Ok((tracks, report))
}

pub const TRACKS_CSV_HEADER: [&str; 11] = [
    "track_id",
    "split",
    "mmsi",
    "vessel_type",
    "reversed",
    "stratum_start",
    "stratum_end",
    "weight",
    "timestamp",
    "lat",
    "lon",
];

/// Writes curated splits one point per row; kinematics are recomputed on read.
pub fn write_splits_csv<W: std::io::Write>(w: W, splits: &Splits) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRACKS_CSV_HEADER)?;
    let parts = [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ];
    for (name, tracks) in parts {
        for t in tracks.iter() {
            let (ss, se) = match t.stratum {
                Some(s) => (s.start.to_string(), s.end.to_string()),
                None => (String::new(), String::new()),
            };
            for p in &t.points {
                wtr.write_record([
                    t.track_id.to_string(),
                    name.to_string(),
                    t.mmsi.to_string(),
                    t.vessel_type.to_string(),
                    t.reversed.to_string(),
                    ss.clone(),
                    se.clone(),
                    t.weight.to_string(),
                    p.timestamp.to_string(),
                    p.pos.lat.to_string(),
                    p.pos.lon.to_string(),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TrackRow {
    track_id: u64,
    split: String,
    mmsi: u32,
    vessel_type: String,
    reversed: bool,
    stratum_start: Option<CellId>,
    stratum_end: Option<CellId>,
    weight: f64,
    timestamp: i64,
    lat: f64,
    lon: f64,
}

/// Reads the output of [`write_splits_csv`].
pub fn read_splits_csv<R: Read>(reader: R, source: &Path) -> Result<Splits> {
    let mut rdr = csv::Reader::from_reader(reader);
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names != TRACKS_CSV_HEADER {
        return Err(Error::Header {
            path: source.to_path_buf(),
            expected: TRACKS_CSV_HEADER.join(","),
        });
    }
    let mut splits = Splits::default();
    let mut current: Option<(TrackRow, Vec<(i64, GeoPoint)>)> = None;
    let finish =
        |cur: Option<(TrackRow, Vec<(i64, GeoPoint)>)>, splits: &mut Splits| -> Result<()> {
            let Some((head, positions)) = cur else {
                return Ok(());
            };
            let mut t = Track::from_positions(head.mmsi, head.vessel_type.parse()?, &positions)?;
            t.track_id = head.track_id;
            t.reversed = head.reversed;
            t.weight = head.weight;
            t.stratum = match (head.stratum_start, head.stratum_end) {
                (Some(start), Some(end)) => Some(Stratum { start, end }),
                _ => None,
            };
            match head.split.as_str() {
                "train" => splits.train.push(t),
                "val" => splits.val.push(t),
                "test" => splits.test.push(t),
                other => {
                    return Err(Error::Config(format!(
                        "unknown split `{other}` in {}",
                        source.display()
                    )))
                }
            }
            Ok(())
        };
    for row in rdr.deserialize::<TrackRow>() {
        let row = row?;
        let pos = GeoPoint::new(row.lat, row.lon)?;
        match &mut current {
            Some((head, pts)) if head.track_id == row.track_id => pts.push((row.timestamp, pos)),
            _ => {
                let ts = row.timestamp;
                finish(current.take(), &mut splits)?;
                current = Some((row, vec![(ts, pos)]));
            }
        }
    }
    finish(current.take(), &mut splits)?;
    Ok(splits)
}
