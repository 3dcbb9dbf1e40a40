//! Per-cell motion statistics and the route / destination probability model.
//!
//! Every training track contributes one [`Entry`] per visited cell: its
//! [`MotionStatistics`] inside that cell, the route polygons it crosses
//! anywhere, and its destination cell. Grouping the entries of a cell by route
//! gives the route matrix `M`; grouping by destination gives `M̃`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{weighted_prf1, Prf1};
use crate::geo::GeoPoint;
use crate::grid::{CellId, HexGrid, RouteId, RoutePolygon};
use crate::ingest::{Track, TrackPoint};
use crate::stats;

pub const STORE_SCHEMA: &str = "probstore.v1";

/// How a track moved through one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionStatistics {
    pub l_first: GeoPoint,
    pub l_last: GeoPoint,
    /// Median bearing in gradians.
    pub theta_median: f64,
    /// Gaussian-KDE entropy of the bearings, in nats.
    pub theta_entropy: f64,
}

impl MotionStatistics {
    fn components(&self) -> [f64; 6] {
        [
            self.l_first.lat,
            self.l_first.lon,
            self.l_last.lat,
            self.l_last.lon,
            self.theta_median,
            self.theta_entropy,
        ]
    }
}

/// Resubstitution entropy `-mean(log p̂(xᵢ))` of a Gaussian KDE with Scott's
/// bandwidth. Zero for fewer than two samples or zero variance; negative
/// differential entropies are clamped to zero.
pub fn kde_entropy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("bearing sample"));
    }
    let n = values.len();
    if n < 2 {
        return Ok(0.0);
    }
    let sigma = stats::std_dev(values, 1).unwrap_or(0.0);
    if !(sigma > 0.0) {
        return Ok(0.0);
    }
    let h = sigma * (n as f64).powf(-0.2);
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = 0.0;
    for &xi in values {
        let density: f64 = values
            .iter()
            .map(|&xj| (-0.5 * ((xi - xj) / h).powi(2)).exp())
            .sum::<f64>()
            * norm;
        acc += density.ln();
    }
    Ok((-acc / n as f64).max(0.0))
}

/// Statistics of a run of points that all lie in one cell.
pub fn statistics_of(points: &[TrackPoint]) -> Result<MotionStatistics> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Empty("in-cell points")),
    };
    let bearings: Vec<f64> = points.iter().map(|p| p.kin.theta).collect();
    Ok(MotionStatistics {
        l_first: first.pos,
        l_last: last.pos,
        theta_median: stats::median(&bearings).expect("non-empty"),
        theta_entropy: kde_entropy(&bearings)?,
    })
}

/// Statistics over all points of `track` located in `cell`.
pub fn motion_statistics(track: &Track, grid: &HexGrid, cell: CellId) -> Result<MotionStatistics> {
    let inside: Vec<TrackPoint> = track
        .points
        .iter()
        .filter(|p| grid.locate(p.pos) == Some(cell))
        .cloned()
        .collect();
    if inside.is_empty() {
        return Err(Error::NoPointsInCell(cell));
    }
    statistics_of(&inside)
}

/// Per-component min/max of the statistics stored in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatNorms {
    pub min: [f64; 6],
    pub max: [f64; 6],
}

impl StatNorms {
    pub fn fit<'a>(stats: impl IntoIterator<Item = &'a MotionStatistics>) -> Option<Self> {
        let mut it = stats.into_iter();
        let first = it.next()?.components();
        let (mut min, mut max) = (first, first);
        for s in it {
            for (k, v) in s.components().into_iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Some(Self { min, max })
    }

    /// Min-max scaled components, clamped to [0, 1]; constant components map to 0.
    pub fn normalize(&self, s: &MotionStatistics) -> [f64; 6] {
        let mut out = s.components();
        for (k, v) in out.iter_mut().enumerate() {
            let span = self.max[k] - self.min[k];
            *v = if span > 0.0 {
                ((*v - self.min[k]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }
}

/// Euclidean distance between normalized statistics. Each endpoint pair
/// contributes half its squared lat/lon difference, so the result lies in [0, 2].
pub fn stat_distance(a: &MotionStatistics, b: &MotionStatistics, norms: &StatNorms) -> f64 {
    normalized_distance(&norms.normalize(a), &norms.normalize(b))
}

/// [`stat_distance`] on already normalized components.
pub fn normalized_distance(x: &[f64; 6], y: &[f64; 6]) -> f64 {
    let d: [f64; 6] = std::array::from_fn(|k| x[k] - y[k]);
    (0.5 * (d[0] * d[0] + d[1] * d[1])
        + 0.5 * (d[2] * d[2] + d[3] * d[3])
        + d[4] * d[4]
        + d[5] * d[5])
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub track_id: u64,
    pub stats: MotionStatistics,
    /// Route polygons the track crosses anywhere along its length.
    pub routes: Vec<RouteId>,
    pub dest: CellId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellHistory {
    pub entries: Vec<Entry>,
    pub norms: StatNorms,
    /// First quartile of pairwise entry distances; `None` when the cell has a
    /// single entry, in which case every query counts as similar.
    pub delta: Option<f64>,
    #[serde(skip)]
    normalized: Vec<[f64; 6]>,
}

impl CellHistory {
    /// Fits the norms and caches normalized entry statistics.
    pub fn new(entries: Vec<Entry>, delta: Option<f64>) -> Result<Self> {
        let norms =
            StatNorms::fit(entries.iter().map(|e| &e.stats)).ok_or(Error::Empty("cell entries"))?;
        let mut h = Self {
            entries,
            norms,
            delta,
            normalized: Vec::new(),
        };
        h.refresh_cache();
        Ok(h)
    }

    fn refresh_cache(&mut self) {
        self.normalized = self
            .entries
            .iter()
            .map(|e| self.norms.normalize(&e.stats))
            .collect();
    }

    /// Distance from every entry to `s`, in entry order.
    pub fn distances(&self, s: &MotionStatistics) -> Vec<f64> {
        let q = self.norms.normalize(s);
        self.normalized
            .iter()
            .map(|x| normalized_distance(x, &q))
            .collect()
    }
}

/// Threshold used by the indicator functions of the probability estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// First quartile of pairwise historical distances in the cell.
    #[default]
    FirstQuartile,
    /// Mean over destinations of the minimum distance to the query.
    MeanOfMinima,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbConfig {
    pub delta_mode: DeltaMode,
    /// Upper bound on pairs sampled per cell when estimating the quartile.
    pub pair_cap: usize,
    pub seed: u64,
}

impl Default for ProbConfig {
    fn default() -> Self {
        Self {
            delta_mode: DeltaMode::FirstQuartile,
            pair_cap: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityStore {
    pub schema: String,
    pub config: ProbConfig,
    pub cells: BTreeMap<CellId, CellHistory>,
}

fn pairwise_q1(entries: &[Entry], norms: &StatNorms, cap: usize, seed: u64) -> Option<f64> {
    let n = entries.len();
    if n < 2 {
        return None;
    }
    let total = n * (n - 1) / 2;
    let mut d = Vec::with_capacity(total.min(cap));
    if total <= cap {
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(stat_distance(&entries[i].stats, &entries[j].stats, norms));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while d.len() < cap {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                d.push(stat_distance(&entries[i].stats, &entries[j].stats, norms));
            }
        }
    }
    stats::quantile(&d, 0.25)
}

/// Cells visited by a track, in order of first visit, with their point runs.
fn cell_visits(track: &Track, grid: &HexGrid) -> BTreeMap<CellId, Vec<TrackPoint>> {
    let mut visits: BTreeMap<CellId, Vec<TrackPoint>> = BTreeMap::new();
    for p in &track.points {
        if let Some(c) = grid.locate(p.pos) {
            visits.entry(c).or_default().push(p.clone());
        }
    }
    visits
}

/// Routes crossed anywhere along the track, ascending.
pub fn routes_crossed(track: &Track, routes: &[RoutePolygon]) -> Vec<RouteId> {
    let set: BTreeSet<RouteId> = routes
        .iter()
        .filter(|r| track.points.iter().any(|p| r.contains(p.pos)))
        .map(|r| r.id)
        .collect();
    set.into_iter().collect()
}

/// Grid cell of the track's final point.
pub fn destination_cell(track: &Track, grid: &HexGrid) -> Option<CellId> {
    grid.locate(track.points.last()?.pos)
}

impl ProbabilityStore {
    /// Builds `M` / `M̃` from training tracks. Tracks ending outside the grid
    /// are skipped.
    pub fn build(
        tracks: &[Track],
        grid: &HexGrid,
        routes: &[RoutePolygon],
        config: ProbConfig,
    ) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::Empty("training tracks"));
        }
        let per_track: Vec<Vec<(CellId, Entry)>> = tracks
            .par_iter()
            .map(|t| {
                let Some(dest) = destination_cell(t, grid) else {
                    return Ok(Vec::new());
                };
                let crossed = routes_crossed(t, routes);
                cell_visits(t, grid)
                    .into_iter()
                    .map(|(c, pts)| {
                        let stats = statistics_of(&pts)?;
                        Ok((
                            c,
                            Entry {
                                track_id: t.track_id,
                                stats,
                                routes: crossed.clone(),
                                dest,
                            },
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let mut grouped: BTreeMap<CellId, Vec<Entry>> = BTreeMap::new();
        for (c, e) in per_track.into_iter().flatten() {
            grouped.entry(c).or_default().push(e);
        }
        let cells: BTreeMap<CellId, CellHistory> = grouped
            .into_par_iter()
            .map(|(c, entries)| {
                let mut h = CellHistory::new(entries, None)?;
                let seed = config.seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                h.delta = pairwise_q1(&h.entries, &h.norms, config.pair_cap, seed);
                Ok((c, h))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema: STORE_SCHEMA.to_string(),
            config,
            cells,
        })
    }

    pub fn history(&self, cell: CellId) -> Option<&CellHistory> {
        self.cells.get(&cell)
    }

    /// Entries of `M` for (cell, route).
    pub fn m(&self, cell: CellId, route: RouteId) -> impl Iterator<Item = &Entry> {
        self.cells
            .get(&cell)
            .into_iter()
            .flat_map(|h| h.entries.iter())
            .filter(move |e| e.routes.contains(&route))
    }

    /// Entries of `M̃` for (cell, destination).
    pub fn m_tilde(&self, cell: CellId, dest: CellId) -> impl Iterator<Item = &Entry> {
        self.cells
            .get(&cell)
            .into_iter()
            .flat_map(|h| h.entries.iter())
            .filter(move |e| e.dest == dest)
    }

    /// Distances of every stored entry in `cell` to `s_new` and the
    /// threshold in force. `None` when the cell has no history.
    pub fn query(&self, cell: CellId, s_new: &MotionStatistics) -> Option<CellQuery<'_>> {
        let history = self.cells.get(&cell)?;
        let dists = history.distances(s_new);
        let delta = match self.config.delta_mode {
            DeltaMode::FirstQuartile => history.delta.unwrap_or(f64::INFINITY),
            DeltaMode::MeanOfMinima => mean_of_minima(&history.entries, &dists),
        };
        Some(CellQuery {
            history,
            dists,
            delta,
        })
    }

    pub fn p_route(&self, cell: CellId, s_new: &MotionStatistics, route: RouteId) -> f64 {
        self.query(cell, s_new).map_or(0.0, |q| q.p_route(route))
    }

    pub fn p_dest_given_route(
        &self,
        cell: CellId,
        route: RouteId,
        s_new: &MotionStatistics,
        dest: CellId,
    ) -> f64 {
        self.query(cell, s_new)
            .map_or(0.0, |q| q.p_dest_given_route(route, dest))
    }

    pub fn p_dest(&self, cell: CellId, s_new: &MotionStatistics, dest: CellId) -> f64 {
        self.query(cell, s_new).map_or(0.0, |q| q.p_dest(dest))
    }

    pub fn score_destination(&self, cell: CellId, s_new: &MotionStatistics) -> Vec<(CellId, f64)> {
        self.query(cell, s_new)
            .map_or_else(Vec::new, |q| q.score_destination())
    }

    pub fn score_route(&self, cell: CellId, s_new: &MotionStatistics) -> Option<RouteChoice> {
        self.query(cell, s_new)?.score_route()
    }

    pub fn possible_destinations(
        &self,
        cell: CellId,
        s_new: &MotionStatistics,
        k: usize,
    ) -> Vec<(CellId, f64)> {
        self.query(cell, s_new)
            .map_or_else(Vec::new, |q| q.possible_destinations(k))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut store: Self = serde_json::from_str(text)?;
        if store.schema != STORE_SCHEMA {
            return Err(Error::Schema {
                found: store.schema,
                expected: STORE_SCHEMA.into(),
            });
        }
        for h in store.cells.values_mut() {
            h.refresh_cache();
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn per_dest_minima(entries: &[Entry], dists: &[f64]) -> BTreeMap<CellId, f64> {
    let mut minima: BTreeMap<CellId, f64> = BTreeMap::new();
    for (e, &d) in entries.iter().zip(dists) {
        minima
            .entry(e.dest)
            .and_modify(|m| *m = m.min(d))
            .or_insert(d);
    }
    minima
}

fn mean_of_minima(entries: &[Entry], dists: &[f64]) -> f64 {
    let minima: Vec<f64> = per_dest_minima(entries, dists).into_values().collect();
    stats::mean(&minima).unwrap_or(f64::INFINITY)
}

/// Winner of the route score, or the best destination when no route scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteChoice {
    pub id: u32,
    pub score: f64,
    /// `true` when `id` is a route polygon, `false` when it is a destination cell.
    pub is_route: bool,
}

/// Distances from one query to all entries of a cell.
#[derive(Debug, Clone)]
pub struct CellQuery<'a> {
    pub history: &'a CellHistory,
    pub dists: Vec<f64>,
    pub delta: f64,
}

fn xi(min_dist: f64) -> f64 {
    (1.0 - min_dist).clamp(0.0, 1.0)
}

/// Descending score, ascending id.
fn rank(mut scores: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores
}

impl CellQuery<'_> {
    /// Indices of entries with distance ≤ δ.
    pub fn similar(&self) -> impl Iterator<Item = (&Entry, f64)> + '_ {
        self.history
            .entries
            .iter()
            .zip(&self.dists)
            .filter(|(_, &d)| d <= self.delta)
            .map(|(e, &d)| (e, d))
    }

    fn ratio(&self, num: impl Fn(&Entry) -> bool, den: impl Fn(&Entry) -> bool) -> f64 {
        let (mut n, mut d) = (0usize, 0usize);
        for (e, _) in self.similar() {
            if den(e) {
                d += 1;
                if num(e) {
                    n += 1;
                }
            }
        }
        if d == 0 {
            0.0
        } else {
            n as f64 / d as f64
        }
    }

    pub fn p_route(&self, route: RouteId) -> f64 {
        self.ratio(|e| e.routes.contains(&route), |_| true)
    }

    pub fn p_dest_given_route(&self, route: RouteId, dest: CellId) -> f64 {
        self.ratio(|e| e.dest == dest, |e| e.routes.contains(&route))
    }

    pub fn p_dest(&self, dest: CellId) -> f64 {
        self.ratio(|e| e.dest == dest, |_| true)
    }

    /// `ξ · P(Rₖ | Cᵢ)` for every route seen among similar entries, where ξ
    /// uses the closest similar entry crossing the route.
    pub fn route_scores(&self) -> Vec<(RouteId, f64)> {
        let mut closest: BTreeMap<RouteId, f64> = BTreeMap::new();
        for (e, d) in self.similar() {
            for &r in &e.routes {
                closest.entry(r).and_modify(|m| *m = m.min(d)).or_insert(d);
            }
        }
        rank(
            closest
                .into_iter()
                .map(|(r, d)| (r, xi(d) * self.p_route(r)))
                .collect(),
        )
    }

    fn dest_scores(&self, route: Option<RouteId>) -> Vec<(CellId, f64)> {
        let mut closest: BTreeMap<CellId, f64> = BTreeMap::new();
        for (e, d) in self.similar() {
            if route.is_some_and(|r| !e.routes.contains(&r)) {
                continue;
            }
            closest
                .entry(e.dest)
                .and_modify(|m| *m = m.min(d))
                .or_insert(d);
        }
        let scores = closest
            .into_iter()
            .map(|(j, d)| {
                let p = match route {
                    Some(r) => self.p_dest_given_route(r, j),
                    None => self.p_dest(j),
                };
                (j, xi(d) * p)
            })
            .collect();
        rank(scores)
    }

    /// Destination ranking: conditioned on the best route when some route
    /// scores above zero, route-free otherwise.
    pub fn score_destination(&self) -> Vec<(CellId, f64)> {
        match self.route_scores().first() {
            Some(&(r, s)) if s > 0.0 => self.dest_scores(Some(r)),
            _ => self.dest_scores(None),
        }
    }

    pub fn score_route(&self) -> Option<RouteChoice> {
        if let Some(&(id, score)) = self.route_scores().first() {
            if score > 0.0 {
                return Some(RouteChoice {
                    id,
                    score,
                    is_route: true,
                });
            }
        }
        self.dest_scores(None)
            .first()
            .map(|&(id, score)| RouteChoice {
                id,
                score,
                is_route: false,
            })
    }

    /// Top-k destinations by `min distance · (1 − share)`, ascending. Only
    /// destinations whose minimum distance is below the mean of minima take
    /// part; when none is strictly below (all minima equal) those at the mean do.
    pub fn possible_destinations(&self, k: usize) -> Vec<(CellId, f64)> {
        let entries = &self.history.entries;
        let minima = per_dest_minima(entries, &self.dists);
        let Some(delta) = stats::mean(&minima.values().copied().collect::<Vec<_>>()) else {
            return Vec::new();
        };
        let mut counts: BTreeMap<CellId, usize> = BTreeMap::new();
        for e in entries {
            *counts.entry(e.dest).or_default() += 1;
        }
        let strict: Vec<CellId> = minima
            .iter()
            .filter(|(_, &m)| m < delta)
            .map(|(&d, _)| d)
            .collect();
        let chosen = if strict.is_empty() {
            minima
                .iter()
                .filter(|(_, &m)| m <= delta)
                .map(|(&d, _)| d)
                .collect()
        } else {
            strict
        };
        let total = entries.len() as f64;
        let mut scored: Vec<(CellId, f64)> = chosen
            .into_iter()
            .map(|d| (d, minima[&d] * (1.0 - counts[&d] as f64 / total)))
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// Probabilistic features of one message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbFeatures {
    /// Centroid of the predicted route polygon, or of the best destination
    /// when no route is predicted.
    pub route: GeoPoint,
    /// Centroid of the current cell.
    pub cell: GeoPoint,
    /// Centroid of the predicted destination cell.
    pub dest: GeoPoint,
    pub route_id: Option<RouteId>,
    pub dest_cell: Option<CellId>,
    pub in_grid: bool,
}

/// Per-message route, current-cell and destination centroids.
///
/// Statistics are accumulated causally over the messages seen so far in the
/// current cell. Cells without history reuse the previous message's features
/// (or the current-cell centroid at the start of a track). Cells with history
/// but no similar entry fall back to the previous features, then to the best
/// destination of [`CellQuery::possible_destinations`]. Messages outside the
/// grid repeat the previous row and are flagged.
pub fn emit_probabilistic_features(
    store: &ProbabilityStore,
    grid: &HexGrid,
    routes: &[RoutePolygon],
    track: &Track,
) -> Result<Vec<ProbFeatures>> {
    let route_centroids: BTreeMap<RouteId, GeoPoint> =
        routes.iter().map(|r| (r.id, r.centroid)).collect();
    let mut out: Vec<ProbFeatures> = Vec::with_capacity(track.points.len());
    let mut run: Option<(CellId, usize)> = None;

    for (i, p) in track.points.iter().enumerate() {
        let prev = out.last().copied();
        let Some(cell) = grid.locate(p.pos) else {
            run = None;
            out.push(match prev {
                Some(f) => ProbFeatures {
                    in_grid: false,
                    ..f
                },
                None => ProbFeatures {
                    route: p.pos,
                    cell: p.pos,
                    dest: p.pos,
                    route_id: None,
                    dest_cell: None,
                    in_grid: false,
                },
            });
            continue;
        };
        let start = match run {
            Some((c, s)) if c == cell => s,
            _ => i,
        };
        run = Some((cell, start));
        let here = grid.cell_centroid(cell)?;
        let s_new = statistics_of(&track.points[start..=i])?;

        let fallback = prev.unwrap_or(ProbFeatures {
            route: here,
            cell: here,
            dest: here,
            route_id: None,
            dest_cell: None,
            in_grid: true,
        });
        let Some(q) = store.query(cell, &s_new) else {
            out.push(ProbFeatures {
                cell: here,
                in_grid: true,
                ..fallback
            });
            continue;
        };

        let (dest, dest_cell) = match q.score_destination().first() {
            Some(&(d, _)) => (grid.cell_centroid(d)?, Some(d)),
            None => match (prev, q.possible_destinations(1).first()) {
                (Some(f), _) => (f.dest, f.dest_cell),
                (None, Some(&(d, _))) => (grid.cell_centroid(d)?, Some(d)),
                (None, None) => (here, None),
            },
        };
        let (route, route_id) = match q.score_route() {
            Some(c) if c.is_route => match route_centroids.get(&c.id) {
                Some(&g) => (g, Some(c.id)),
                None => (dest, None),
            },
            Some(c) => (grid.cell_centroid(c.id)?, None),
            None => match prev {
                Some(f) => (f.route, f.route_id),
                None => (dest, None),
            },
        };
        out.push(ProbFeatures {
            route,
            cell: here,
            dest,
            route_id,
            dest_cell,
            in_grid: true,
        });
    }
    Ok(out)
}

/// Features of many tracks, emitted in parallel and kept in input order.
pub fn emit_for_tracks(
    store: &ProbabilityStore,
    grid: &HexGrid,
    routes: &[RoutePolygon],
    tracks: &[Track],
) -> Result<Vec<Vec<ProbFeatures>>> {
    tracks
        .par_iter()
        .map(|t| emit_probabilistic_features(store, grid, routes, t))
        .collect()
}

/// Geometric truth of a track: the first route polygon it crosses and the
/// cell of its final point.
pub fn track_labels(
    track: &Track,
    grid: &HexGrid,
    routes: &[RoutePolygon],
) -> (Option<RouteId>, Option<CellId>) {
    (
        routes_crossed(track, routes).first().copied(),
        destination_cell(track, grid),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub messages: usize,
    pub route: Prf1,
    pub destination: Prf1,
}

/// Per-message route and destination predictions scored against track
/// labels. A missing prediction or label is its own class.
pub fn classification_report(
    features: &[Vec<ProbFeatures>],
    labels: &[(Option<RouteId>, Option<CellId>)],
) -> Result<ClassificationReport> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch(features.len(), labels.len()));
    }
    let (mut rt, mut rp, mut dt, mut dp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (f, &(route, dest)) in features.iter().zip(labels) {
        for m in f {
            rt.push(route);
            rp.push(m.route_id);
            dt.push(dest);
            dp.push(m.dest_cell);
        }
    }
    Ok(ClassificationReport {
        messages: rt.len(),
        route: weighted_prf1(&rt, &rp)?,
        destination: weighted_prf1(&dt, &dp)?,
    })
}
