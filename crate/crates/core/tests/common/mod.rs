//! Fork-world fixtures and a brute-force probability oracle shared by the
//! integration tests. The acceptance suite includes this file by path.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rayon::prelude::*;

use voyagecast::grid::HexGrid;
use voyagecast::ingest::{curate, stratify_and_split, CurationConfig, Splits, Track, TrackPoint};
use voyagecast::probmodel::{statistics_of, MotionStatistics, ProbConfig, ProbabilityStore};
use voyagecast::synth::{generate, LaneWorld, SynthCorpus};
use voyagecast::{CellId, RouteId, RoutePolygon};

pub struct Fork {
    pub world: LaneWorld,
    pub grid: HexGrid,
    pub corpus: SynthCorpus,
    pub splits: Splits,
}

/// Fork world with `vessels` vessels (the full world when `None`), curated
/// with default settings and split 20% test / 20% of the rest validation.
pub fn fork(seed: u64, vessels: Option<usize>) -> Fork {
    let mut world = LaneWorld::fork_world(seed).unwrap();
    if let Some(v) = vessels {
        world.vessels = v;
    }
    let grid = world.grid().unwrap();
    let corpus = generate(&world).unwrap();
    let (tracks, _) = curate(
        &corpus.messages,
        &world.port_points(),
        &grid,
        &CurationConfig::default(),
    )
    .unwrap();
    let splits = stratify_and_split(&tracks, 0.2, 0.2, seed).unwrap();
    Fork {
        world,
        grid,
        corpus,
        splits,
    }
}

/// Store with exact (unsampled) quartile thresholds.
pub fn exact_store(f: &Fork) -> ProbabilityStore {
    let cfg = ProbConfig {
        pair_cap: usize::MAX,
        ..ProbConfig::default()
    };
    ProbabilityStore::build(&f.splits.train, &f.grid, &f.world.routes, cfg).unwrap()
}

/// Membership in an axis-aligned route rectangle, from its vertex extent.
pub fn in_rect(r: &RoutePolygon, lat: f64, lon: f64) -> bool {
    let (mut lo_lat, mut hi_lat, mut lo_lon, mut hi_lon) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for v in &r.ring {
        lo_lat = lo_lat.min(v.lat);
        hi_lat = hi_lat.max(v.lat);
        lo_lon = lo_lon.min(v.lon);
        hi_lon = hi_lon.max(v.lon);
    }
    lat > lo_lat && lat < hi_lat && lon > lo_lon && lon < hi_lon
}

pub struct OracleEntry {
    pub stats: MotionStatistics,
    pub routes: Vec<RouteId>,
    pub dest: CellId,
}

/// Historical entries per cell, enumerated with a linear cell scan, with
/// per-cell component extents and scaled entries.
pub struct Oracle {
    pub cells: BTreeMap<CellId, Vec<OracleEntry>>,
    extents: BTreeMap<CellId, ([f64; 6], [f64; 6])>,
    scaled: BTreeMap<CellId, Vec<[f64; 6]>>,
}

/// In-cell points of a track per cell, found by linear scan.
pub fn points_by_cell(track: &Track, grid: &HexGrid) -> BTreeMap<CellId, Vec<TrackPoint>> {
    let mut m: BTreeMap<CellId, Vec<TrackPoint>> = BTreeMap::new();
    for p in &track.points {
        if let Some(c) = grid.locate_scan(p.pos) {
            m.entry(c).or_default().push(p.clone());
        }
    }
    m
}

fn components(s: &MotionStatistics) -> [f64; 6] {
    [
        s.l_first.lat,
        s.l_first.lon,
        s.l_last.lat,
        s.l_last.lon,
        s.theta_median,
        s.theta_entropy,
    ]
}

impl Oracle {
    pub fn build(train: &[Track], grid: &HexGrid, routes: &[RoutePolygon]) -> Self {
        let mut cells: BTreeMap<CellId, Vec<OracleEntry>> = BTreeMap::new();
        for t in train {
            let last = t.points.last().unwrap().pos;
            let Some(dest) = grid.locate_scan(last) else {
                continue;
            };
            let mut crossed: Vec<RouteId> = routes
                .iter()
                .filter(|r| t.points.iter().any(|p| in_rect(r, p.pos.lat, p.pos.lon)))
                .map(|r| r.id)
                .collect();
            crossed.sort();
            for (c, pts) in points_by_cell(t, grid) {
                cells.entry(c).or_default().push(OracleEntry {
                    stats: statistics_of(&pts).unwrap(),
                    routes: crossed.clone(),
                    dest,
                });
            }
        }
        let mut extents = BTreeMap::new();
        let mut scaled = BTreeMap::new();
        for (&c, entries) in &cells {
            let mut lo = [f64::INFINITY; 6];
            let mut hi = [f64::NEG_INFINITY; 6];
            for e in entries {
                for (k, v) in components(&e.stats).into_iter().enumerate() {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
            scaled.insert(
                c,
                entries
                    .iter()
                    .map(|e| Self::scale(&lo, &hi, &e.stats))
                    .collect(),
            );
            extents.insert(c, (lo, hi));
        }
        Oracle {
            cells,
            extents,
            scaled,
        }
    }

    fn scale(lo: &[f64; 6], hi: &[f64; 6], s: &MotionStatistics) -> [f64; 6] {
        let x = components(s);
        std::array::from_fn(|k| {
            if hi[k] > lo[k] {
                ((x[k] - lo[k]) / (hi[k] - lo[k])).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
    }

    fn dist(a: &[f64; 6], b: &[f64; 6]) -> f64 {
        let d = |k: usize| a[k] - b[k];
        (0.5 * (d(0) * d(0) + d(1) * d(1))
            + 0.5 * (d(2) * d(2) + d(3) * d(3))
            + d(4) * d(4)
            + d(5) * d(5))
        .sqrt()
    }

    /// Distances from `s` to every entry of `cell`.
    pub fn distances(&self, cell: CellId, s: &MotionStatistics) -> Vec<f64> {
        let (lo, hi) = &self.extents[&cell];
        let q = Self::scale(lo, hi, s);
        self.scaled[&cell]
            .iter()
            .map(|x| Self::dist(x, &q))
            .collect()
    }

    /// First quartile (linear interpolation) of all pairwise distances.
    pub fn delta(&self, cell: CellId) -> f64 {
        let scaled = &self.scaled[&cell];
        if scaled.len() < 2 {
            return f64::INFINITY;
        }
        let mut d = Vec::new();
        for i in 0..scaled.len() {
            for j in (i + 1)..scaled.len() {
                d.push(Self::dist(&scaled[i], &scaled[j]));
            }
        }
        d.sort_by(f64::total_cmp);
        let pos = 0.25 * (d.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
    }

    /// Counts entries within `delta` that satisfy `den`, and those that also
    /// satisfy `num`; the probability is their ratio, or 0 without support.
    pub fn ratio(
        &self,
        cell: CellId,
        dists: &[f64],
        delta: f64,
        num: impl Fn(&OracleEntry) -> bool,
        den: impl Fn(&OracleEntry) -> bool,
    ) -> f64 {
        let mut n = 0u64;
        let mut d = 0u64;
        for (e, &x) in self.cells[&cell].iter().zip(dists) {
            let similar = if x <= delta { 1 } else { 0 };
            let in_den = if den(e) { 1 } else { 0 };
            let in_num = if num(e) { 1 } else { 0 };
            d += similar * in_den;
            n += similar * in_den * in_num;
        }
        if d == 0 {
            0.0
        } else {
            n as f64 / d as f64
        }
    }

    /// Top-k destinations: per-destination minimum distance, threshold at
    /// the mean of minima, score `min · (1 − share)`, ascending.
    pub fn possible_destinations(
        &self,
        cell: CellId,
        dists: &[f64],
        k: usize,
    ) -> Vec<(CellId, f64)> {
        let entries = &self.cells[&cell];
        let mut minima: BTreeMap<CellId, f64> = BTreeMap::new();
        let mut counts: BTreeMap<CellId, usize> = BTreeMap::new();
        for (e, &x) in entries.iter().zip(dists) {
            let m = minima.entry(e.dest).or_insert(f64::INFINITY);
            if x < *m {
                *m = x;
            }
            *counts.entry(e.dest).or_insert(0) += 1;
        }
        let mean = minima.values().fold(0.0, |a, &b| a + b) / minima.len() as f64;
        let any_below = minima.values().any(|&m| m < mean);
        let mut out: Vec<(CellId, f64)> = minima
            .iter()
            .filter(|(_, &m)| if any_below { m < mean } else { m <= mean })
            .map(|(&d, &m)| (d, m * (1.0 - counts[&d] as f64 / entries.len() as f64)))
            .collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }
}

/// Outcome of comparing the store against the oracle.
#[derive(Debug, Default)]
pub struct OracleCheck {
    pub queries: usize,
    pub values: usize,
    /// Cells whose threshold the store estimated from sampled pairs; the
    /// oracle adopts the stored threshold there.
    pub sampled_cells: usize,
    pub mismatches: Vec<String>,
}

/// Threshold per cell: the exact quartile when the store enumerated every
/// pair (which must then match bit for bit), else the stored estimate.
fn thresholds(
    store: &ProbabilityStore,
    oracle: &Oracle,
    out: &mut OracleCheck,
) -> BTreeMap<CellId, f64> {
    let cap = store.config.pair_cap;
    let cells: Vec<CellId> = oracle.cells.keys().copied().collect();
    let exact: Vec<Option<f64>> = cells
        .par_iter()
        .map(|c| {
            let n = oracle.cells[c].len();
            (n * n.saturating_sub(1) / 2 <= cap).then(|| oracle.delta(*c))
        })
        .collect();
    let mut m = BTreeMap::new();
    for (c, e) in cells.into_iter().zip(exact) {
        let stored = store
            .history(c)
            .and_then(|h| h.delta)
            .unwrap_or(f64::INFINITY);
        match e {
            Some(d) => {
                if d.to_bits() != stored.to_bits() {
                    out.mismatches
                        .push(format!("cell {c} threshold: {stored} vs {d}"));
                }
                m.insert(c, d);
            }
            None => {
                out.sampled_cells += 1;
                m.insert(c, stored);
            }
        }
    }
    m
}

/// Compares every probability and Algorithm 1 output for queries drawn from
/// `queries` (full and half in-cell runs of each visited cell).
pub fn compare(
    store: &ProbabilityStore,
    oracle: &Oracle,
    grid: &HexGrid,
    queries: &[Track],
) -> OracleCheck {
    let mut out = OracleCheck::default();
    for (c, h) in &store.cells {
        match oracle.cells.get(c) {
            Some(e) if e.len() == h.entries.len() => {}
            other => out.mismatches.push(format!(
                "cell {c}: store has {} entries, oracle {}",
                h.entries.len(),
                other.map_or(0, Vec::len)
            )),
        }
    }
    if store.cells.len() != oracle.cells.len() {
        out.mismatches.push(format!(
            "store has {} cells, oracle {}",
            store.cells.len(),
            oracle.cells.len()
        ));
    }
    let deltas = thresholds(store, oracle, &mut out);
    let parts: Vec<OracleCheck> = queries
        .par_iter()
        .map(|t| compare_track(store, oracle, grid, &deltas, t))
        .collect();
    for p in parts {
        out.queries += p.queries;
        out.values += p.values;
        out.mismatches.extend(p.mismatches);
    }
    out
}

fn compare_track(
    store: &ProbabilityStore,
    oracle: &Oracle,
    grid: &HexGrid,
    deltas: &BTreeMap<CellId, f64>,
    t: &Track,
) -> OracleCheck {
    let mut out = OracleCheck::default();
    let route_ids: [RouteId; 3] = [1, 2, 99];
    for (cell, pts) in points_by_cell(t, grid) {
        let Some(entries) = oracle.cells.get(&cell) else {
            if store.history(cell).is_some() {
                out.mismatches
                    .push(format!("cell {cell}: store has history the oracle lacks"));
            }
            continue;
        };
        let mut dests: Vec<CellId> = entries.iter().map(|e| e.dest).collect();
        dests.sort();
        dests.dedup();
        dests.push(u32::MAX);
        let delta = deltas[&cell];
        for run in [&pts[..], &pts[..pts.len().div_ceil(2)]] {
            let s = statistics_of(run).unwrap();
            let dists = oracle.distances(cell, &s);
            let q = store.query(cell, &s).expect("cell has history");
            out.queries += 1;
            let mut check = |what: String, got: f64, want: f64| {
                out.values += 1;
                if got.to_bits() != want.to_bits() {
                    out.mismatches.push(format!(
                        "track {} cell {cell} {what}: {got} vs {want}",
                        t.track_id
                    ));
                }
            };
            check(
                "p_route(1) via store".into(),
                store.p_route(cell, &s, 1),
                q.p_route(1),
            );
            for &r in &route_ids {
                let want = oracle.ratio(cell, &dists, delta, |e| e.routes.contains(&r), |_| true);
                check(format!("p_route({r})"), q.p_route(r), want);
                for &d in &dests {
                    let want = oracle.ratio(
                        cell,
                        &dists,
                        delta,
                        |e| e.dest == d,
                        |e| e.routes.contains(&r),
                    );
                    check(
                        format!("p_dest_given_route({r}, {d})"),
                        q.p_dest_given_route(r, d),
                        want,
                    );
                }
            }
            for &d in &dests {
                let want = oracle.ratio(cell, &dists, delta, |e| e.dest == d, |_| true);
                check(format!("p_dest({d})"), q.p_dest(d), want);
            }
            let got = store.possible_destinations(cell, &s, 3);
            let want = oracle.possible_destinations(cell, &dists, 3);
            out.values += 1;
            let same = got.len() == want.len()
                && got
                    .iter()
                    .zip(&want)
                    .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());
            if !same {
                out.mismatches.push(format!(
                    "track {} cell {cell} possible_destinations: {got:?} vs {want:?}",
                    t.track_id
                ));
            }
        }
    }
    out
}

// ------------------------------------------------------------------ ingest invariants

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voyagecast::features::{WindowSample, INPUT_ROWS, TARGET_ROWS};
use voyagecast::geo::{destination, haversine_km};
use voyagecast::ingest::{AisMessage, RawTrack, VesselType};
use voyagecast::GeoPoint;

/// Random multi-vessel message stream: wandering headings, 2–20 minute
/// reporting intervals, and occasional long silences and position jumps.
pub fn random_messages(seed: u64, vessels: usize) -> Vec<AisMessage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for v in 0..vessels {
        let mut t = 1_600_000_000 + rng.random_range(0..86_400);
        let mut p = GeoPoint {
            lat: rng.random_range(46.5..49.5),
            lon: rng.random_range(-65.5..-58.5),
        };
        let mut heading: f64 = rng.random_range(0.0..360.0);
        for _ in 0..rng.random_range(20..120) {
            let roll: f64 = rng.random();
            let dt = if roll < 0.03 {
                rng.random_range(8 * 3600 + 1..20 * 3600)
            } else {
                rng.random_range(120..1200)
            };
            t += dt;
            let km = if rng.random::<f64>() < 0.03 {
                rng.random_range(51.0..90.0)
            } else {
                12.0 * 1.852 * dt as f64 / 3600.0
            };
            heading += rng.random_range(-40.0..40.0);
            p = destination(p, heading.rem_euclid(360.0), km.min(45.0 * 1.852));
            p.lat = p.lat.clamp(46.1, 49.9);
            p.lon = p.lon.clamp(-65.9, -58.1);
            out.push(AisMessage {
                mmsi: 200_000_000 + v as u32,
                timestamp: t,
                pos: p,
                sog: Some(12.0),
                cog: Some(heading.rem_euclid(360.0)),
                vessel_type: if v % 2 == 0 {
                    VesselType::Cargo
                } else {
                    VesselType::Tanker
                },
            });
        }
    }
    out
}

pub type Check = std::result::Result<(), String>;

pub fn check_segmentation(
    messages: &[AisMessage],
    raw: &[RawTrack],
    gap_hours: f64,
    gap_km: f64,
) -> Check {
    let total: usize = raw.iter().map(|r| r.messages.len()).sum();
    if total != messages.len() {
        return Err(format!("{} messages in, {total} out", messages.len()));
    }
    let broken = |a: &AisMessage, b: &AisMessage| {
        (b.timestamp - a.timestamp) as f64 > gap_hours * 3600.0
            || haversine_km(a.pos, b.pos) > gap_km
    };
    for r in raw {
        for w in r.messages.windows(2) {
            if w[1].timestamp < w[0].timestamp {
                return Err(format!("vessel {} out of order", r.mmsi));
            }
            if broken(&w[0], &w[1]) {
                return Err(format!("vessel {}: gap inside a track", r.mmsi));
            }
        }
    }
    // consecutive tracks of one vessel must be separated by a gap
    for w in raw.windows(2) {
        if w[0].mmsi == w[1].mmsi {
            let a = w[0].messages.last().unwrap();
            let b = &w[1].messages[0];
            if !broken(a, b) {
                return Err(format!("vessel {}: split without a gap", a.mmsi));
            }
        }
    }
    Ok(())
}

pub fn check_port_scrub(tracks: &[Track], ports: &[GeoPoint], radius_km: f64) -> Check {
    for t in tracks {
        for p in &t.points {
            for port in ports {
                let d = haversine_km(p.pos, *port);
                if d <= radius_km {
                    return Err(format!("track {} point {d:.4} km from a port", t.track_id));
                }
            }
        }
    }
    Ok(())
}

pub fn check_spacing(tracks: &[Track]) -> Check {
    for t in tracks {
        if t.points.len() < 2 {
            return Err(format!(
                "track {} has {} points",
                t.track_id,
                t.points.len()
            ));
        }
        for w in t.points.windows(2) {
            if w[1].timestamp - w[0].timestamp != 600 {
                return Err(format!(
                    "track {}: step of {} s",
                    t.track_id,
                    w[1].timestamp - w[0].timestamp
                ));
            }
        }
    }
    Ok(())
}

/// Pieces must tile the original (minus dropped single points), start
/// exactly at violations of the turn limit and contain none inside.
pub fn check_turn_split(original: &Track, pieces: &[Track], limit: f64) -> Check {
    let cuts: Vec<usize> = (1..original.points.len())
        .filter(|&i| original.points[i].kin.dtheta.abs() > limit)
        .collect();
    let mut bounds = vec![0];
    bounds.extend(&cuts);
    bounds.push(original.points.len());
    let expected: Vec<&[TrackPoint]> = bounds
        .windows(2)
        .map(|w| &original.points[w[0]..w[1]])
        .filter(|s| s.len() >= 2)
        .collect();
    if expected.len() != pieces.len() {
        return Err(format!(
            "{} pieces, expected {}",
            pieces.len(),
            expected.len()
        ));
    }
    for (piece, want) in pieces.iter().zip(expected) {
        let same = piece.points.len() == want.len()
            && piece
                .points
                .iter()
                .zip(want)
                .all(|(a, b)| a.timestamp == b.timestamp && a.pos == b.pos);
        if !same {
            return Err("piece does not match the original run".into());
        }
    }
    Ok(())
}

pub fn check_reversal(t: &Track) -> Check {
    use voyagecast::ingest::reverse_track;
    let r = reverse_track(t).map_err(|e| e.to_string())?;
    let rr = reverse_track(&r).map_err(|e| e.to_string())?;
    if rr.positions() != t.positions() || rr.reversed != t.reversed {
        return Err(format!("track {}: reversing twice changed it", t.track_id));
    }
    if r.points.first().unwrap().pos != t.points.last().unwrap().pos {
        return Err("reversed track does not start at the original end".into());
    }
    Ok(())
}

/// Vessels never straddle splits and each stratum's vessels are divided
/// with `round(n · test)` in test.
pub fn check_split(tracks: &[Track], s: &Splits, test: f64) -> Check {
    use std::collections::BTreeSet;
    let ids = |v: &[Track]| v.iter().map(|t| t.mmsi).collect::<BTreeSet<_>>();
    let (a, b, c) = (ids(&s.train), ids(&s.val), ids(&s.test));
    if !a.is_disjoint(&b) || !a.is_disjoint(&c) || !b.is_disjoint(&c) {
        return Err("a vessel appears in two splits".into());
    }
    if s.train.len() + s.val.len() + s.test.len() != tracks.len() {
        return Err("splits lose or duplicate tracks".into());
    }
    let vessels = ids(tracks).len() as f64;
    let share = c.len() as f64 / vessels;
    let strata = tracks
        .iter()
        .map(|t| t.stratum)
        .collect::<BTreeSet<_>>()
        .len() as f64;
    // each stratum's rounding moves at most half a vessel
    if (share - test).abs() > 0.5 * strata / vessels + 1e-9 {
        return Err(format!("test share {share:.3} of vessels, wanted {test}"));
    }
    Ok(())
}

/// Shapes of windows and the shared anchor row between input and target.
pub fn check_windows(samples: &[WindowSample], arity: usize, tracks: &[Track]) -> Check {
    let by_id: BTreeMap<u64, &Track> = tracks.iter().map(|t| (t.track_id, t)).collect();
    for s in samples {
        if s.input.len() != INPUT_ROWS * arity || s.target.len() != TARGET_ROWS * 2 {
            return Err(format!(
                "window shapes {} / {}",
                s.input.len(),
                s.target.len()
            ));
        }
        let t = by_id[&s.meta.track_id];
        let a = t
            .points
            .iter()
            .position(|p| p.timestamp == s.meta.anchor_time)
            .ok_or("anchor not in track")?;
        if a + TARGET_ROWS > t.points.len() {
            return Err("target runs past the track".into());
        }
        if t.points[a + TARGET_ROWS - 1].timestamp - t.points[a].timestamp
            != (TARGET_ROWS as i64 - 1) * 600
        {
            return Err("target does not span 71 steps".into());
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ metric fixtures

fn close(what: &str, got: f64, want: f64) -> Check {
    if (got - want).abs() <= 1e-12 * want.abs().max(1.0) {
        Ok(())
    } else {
        Err(format!("{what}: {got} vs hand-computed {want}"))
    }
}

/// Hand-computed classification, regression and percentile fixtures.
pub fn metric_fixtures() -> Check {
    use voyagecast::eval::{error_report, r2_score, regression_metrics, weighted_prf1};

    // per class (tp, predicted, support): a (2,2,3), b (1,2,2), c (1,2,1)
    let truth = ["a", "a", "a", "b", "b", "c"];
    let pred = ["a", "a", "b", "b", "c", "c"];
    let m = weighted_prf1(&truth, &pred).map_err(|e| e.to_string())?;
    close(
        "precision",
        m.precision,
        3.0 / 6.0 * 1.0 + 2.0 / 6.0 * 0.5 + 1.0 / 6.0 * 0.5,
    )?;
    close(
        "recall",
        m.recall,
        3.0 / 6.0 * (2.0 / 3.0) + 2.0 / 6.0 * 0.5 + 1.0 / 6.0 * 1.0,
    )?;
    close("f1", m.f1, 61.0 / 90.0)?;

    let t = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
    let p = [[1.0, 3.0], [2.0, 4.0], [5.0, 8.0]];
    let r = regression_metrics(&t, &p).map_err(|e| e.to_string())?;
    close("mae", r.mae, 4.0 / 6.0)?;
    close("mse", r.mse, 1.0)?;
    // columns: 1 - 1/8 and 1 - 5/8
    close("r2", r.r2, 0.625)?;

    let perfect = r2_score(&[2.0, 2.0, 2.0], &[2.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    let off = r2_score(&[2.0, 2.0, 2.0], &[2.0, 2.5, 2.0]).map_err(|e| e.to_string())?;
    if perfect != 1.0 || off != 0.0 {
        return Err(format!("degenerate R²: {perfect} / {off}"));
    }
    if r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).map_err(|e| e.to_string())? != 1.0 {
        return Err("perfect R² is not exactly 1".into());
    }

    // errors of 1..4 equatorial degrees
    let k = 6371.0 * std::f64::consts::PI / 180.0;
    let origin = vec![GeoPoint { lat: 0.0, lon: 0.0 }; 4];
    let far: Vec<GeoPoint> = (1..=4)
        .map(|i| GeoPoint {
            lat: 0.0,
            lon: i as f64,
        })
        .collect();
    let zeros = vec![[0.0, 0.0]; 4];
    let e = error_report(&origin, &far, &zeros, &zeros).map_err(|e| e.to_string())?;
    close("mean km", e.mean_km, 2.5 * k)?;
    close("p25 km", e.p25_km, 1.75 * k)?;
    close("p50 km", e.p50_km, 2.5 * k)?;
    close("p75 km", e.p75_km, 3.25 * k)?;
    close("std km", e.std_km, 1.25f64.sqrt() * k)?;
    Ok(())
}

// ------------------------------------------------------------------ geodesy oracle
//
// Unit-vector spherical geometry, sharing no formula with the library.

use voyagecast::geo::{bearing_deg, speed_knots, EARTH_RADIUS_KM, KM_PER_NMI};

pub fn unit(p: GeoPoint) -> [f64; 3] {
    let (phi, lam) = (p.lat.to_radians(), p.lon.to_radians());
    [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn oracle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (u, v) = (unit(a), unit(b));
    let c = cross(u, v);
    dot(c, c).sqrt().atan2(dot(u, v)) * EARTH_RADIUS_KM
}

/// Initial bearing from the tangent direction at `a` projected on the local
/// north and east axes.
pub fn oracle_bearing(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi, lam) = (a.lat.to_radians(), a.lon.to_radians());
    let north = [-phi.sin() * lam.cos(), -phi.sin() * lam.sin(), phi.cos()];
    let east = [-lam.sin(), lam.cos(), 0.0];
    let d = cross(cross(unit(a), unit(b)), unit(a));
    dot(d, east)
        .atan2(dot(d, north))
        .to_degrees()
        .rem_euclid(360.0)
}

pub fn random_pairs(n: usize, seed: u64) -> Vec<(GeoPoint, GeoPoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = GeoPoint {
                lat: rng.random_range(-80.0..80.0),
                lon: rng.random_range(-180.0..180.0),
            };
            // Half the pairs are regional (up to ~2 degrees apart), half global.
            let b = if i % 2 == 0 {
                GeoPoint {
                    lat: (a.lat + rng.random_range(-2.0..2.0)).clamp(-89.0, 89.0),
                    lon: a.lon + rng.random_range(-2.0..2.0),
                }
            } else {
                GeoPoint {
                    lat: rng.random_range(-80.0..80.0),
                    lon: rng.random_range(-180.0..180.0),
                }
            };
            (a, b)
        })
        .collect()
}

/// Distance, bearing and speed on `n` random pairs within 1e-6 relative.
pub fn geodesy_check(n: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (a, b) in random_pairs(n, seed) {
        let want = oracle_km(a, b);
        let got = haversine_km(a, b);
        if (got - want).abs() > 1e-6 * want {
            return Err(format!("distance {a:?} {b:?}: {got} vs {want}"));
        }
        let dt: f64 = rng.random_range(0.05..24.0);
        let v = speed_knots(a, b, dt).map_err(|e| e.to_string())?;
        let v_want = want / KM_PER_NMI / dt;
        if (v - v_want).abs() > 1e-6 * v_want {
            return Err(format!("speed {a:?} {b:?}: {v} vs {v_want}"));
        }
        let th = bearing_deg(a, b).map_err(|e| e.to_string())?;
        let th_want = oracle_bearing(a, b);
        let diff = (th - th_want + 180.0).rem_euclid(360.0) - 180.0;
        if diff.abs() > 1e-6 * th_want.max(1.0) {
            return Err(format!("bearing {a:?} {b:?}: {th} vs {th_want}"));
        }
    }
    Ok(())
}
