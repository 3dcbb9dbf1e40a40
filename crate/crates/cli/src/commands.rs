//! One function per pipeline stage. Each reads its inputs from the output
//! directory, writes its artifacts there, records them in the manifest and
//! returns a one-line summary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use voyagecast::eval::{error_report, ErrorReport};
use voyagecast::features::{
    windows_for_tracks, FeatureSet, Normalizer, WindowDataset, INPUT_ROWS, TARGET_ROWS,
};
use voyagecast::grid::{routes_from_geojson, routes_to_geojson, HexGrid, RoutePolygon};
use voyagecast::ingest::{self, Splits, Track};
use voyagecast::probmodel::{
    self, classification_report, emit_for_tracks, track_labels, ProbabilityStore,
};
use voyagecast::synth;
use voyagecast::GeoPoint;
use voyagecast_nn::{checkpoint, train, Ablation, Dataset, Model, Tensor};

use crate::config::PipelineConfig;
use crate::manifest::{config_hash, Workspace};

pub const PREDICTIONS_SCHEMA: &str = "voyagecast.predictions.v1";
pub const REPORT_SCHEMA: &str = "voyagecast.report.v1";

pub const MESSAGES: &str = "messages.csv";
pub const PORTS: &str = "ports.csv";
pub const ROUTES: &str = "routes.geojson";
pub const LABELS: &str = "labels.csv";
pub const WORLD: &str = "world.json";
pub const GRID: &str = "grid.geojson";
pub const TRACKS: &str = "tracks.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const STORE: &str = "probstore.json";
pub const PROB_REPORT: &str = "prob_report.json";

fn abl(a: Ablation) -> String {
    a.to_string().to_lowercase()
}

pub fn windows_stem(set: FeatureSet, split: &str) -> String {
    format!("windows-{set}-{split}")
}

pub fn model_file(set: FeatureSet, a: Ablation) -> String {
    format!("model-{set}-{}.ckpt", abl(a))
}

pub fn train_log_file(set: FeatureSet, a: Ablation) -> String {
    format!("train-log-{set}-{}.csv", abl(a))
}

pub fn predictions_file(set: FeatureSet, a: Ablation, ext: &str) -> String {
    format!("predictions-{set}-{}.{ext}", abl(a))
}

pub fn report_file(set: FeatureSet, a: Ablation, ext: &str) -> String {
    format!("report-{set}-{}.{ext}", abl(a))
}

fn featurize_stage(set: FeatureSet) -> String {
    format!("featurize:{set}")
}

fn train_stage(set: FeatureSet, a: Ablation) -> String {
    format!("train:{set}:{}", abl(a))
}

/// Configuration hash of every stage under the current configuration.
pub fn stage_hashes(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    m.insert("synth".into(), config_hash(&cfg.world()?));
    m.insert("grid".into(), config_hash(&cfg.grid));
    m.insert(
        "ingest".into(),
        config_hash(&(&cfg.grid, &cfg.curation, &cfg.split, cfg.seed)),
    );
    m.insert(
        "fit-prob".into(),
        config_hash(&(&cfg.grid, cfg.prob_config())),
    );
    let set = cfg.feature_set;
    m.insert(
        featurize_stage(set),
        config_hash(&(set, &cfg.grid, cfg.normalizer_caps())),
    );
    m.insert(
        train_stage(set, cfg.ablation),
        config_hash(&(cfg.model_config(), cfg.train_config())),
    );
    Ok(m)
}

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub ws: Workspace,
    expected: BTreeMap<String, String>,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, out: &Path) -> Result<Self> {
        let expected = stage_hashes(&cfg)?;
        Ok(Ctx {
            cfg,
            ws: Workspace::open(out)?,
            expected,
        })
    }

    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.ws.path(name)
    }

    fn require(&mut self, path: &Path) -> Result<()> {
        self.ws.require(path, &self.expected).map(|_| ())
    }

    fn record(&mut self, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let h = self
            .expected
            .get(stage)
            .cloned()
            .unwrap_or_else(|| config_hash(&json!({})));
        self.ws.record(stage, h, inputs, outputs)
    }

    fn grid(&self) -> Result<HexGrid> {
        Ok(self.cfg.grid.build()?)
    }

    fn routes_path(&self) -> PathBuf {
        self.path(
            self.cfg
                .paths
                .routes
                .clone()
                .unwrap_or_else(|| ROUTES.into()),
        )
    }

    fn load_routes(&mut self) -> Result<(PathBuf, Vec<RoutePolygon>)> {
        let p = self.routes_path();
        self.require(&p)?;
        let v: Value = read_json(&p)?;
        Ok((p, routes_from_geojson(&v)?))
    }

    fn load_splits(&mut self) -> Result<(PathBuf, Splits)> {
        let p = self.path(TRACKS);
        self.require(&p)?;
        let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        Ok((p.clone(), ingest::read_splits_csv(BufReader::new(f), &p)?))
    }

    fn load_windows(&mut self, split: &str) -> Result<(Vec<PathBuf>, WindowDataset)> {
        let stem = windows_stem(self.cfg.feature_set, split);
        let files = vec![
            self.path(format!("{stem}.json")),
            self.path(format!("{stem}.bin")),
        ];
        for f in &files {
            self.require(f)?;
        }
        Ok((files, WindowDataset::load(&self.ws.dir, &stem)?))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

// ---------------------------------------------------------------- synth

pub fn synth(ctx: &mut Ctx) -> Result<String> {
    let world = ctx.cfg.world()?;
    world.validate()?;
    let corpus = synth::generate(&world)?;
    let out: Vec<PathBuf> = [MESSAGES, PORTS, ROUTES, LABELS, WORLD]
        .iter()
        .map(|f| ctx.path(f))
        .collect();
    ingest::write_ais_csv(create(&out[0])?, &corpus.messages)?;
    synth::write_ports_csv(create(&out[1])?, &world.ports)?;
    write_json(&out[2], &routes_to_geojson(&world.routes))?;
    synth::write_labels_csv(create(&out[3])?, &corpus.labels)?;
    write_json(&out[4], &world)?;
    ctx.record("synth", &[], &out)?;
    Ok(format!(
        "synth: {} messages from {} voyages of {} vessels -> {}",
        corpus.messages.len(),
        corpus.labels.len(),
        world.vessels,
        ctx.ws.dir.display()
    ))
}

// ---------------------------------------------------------------- grid

pub fn grid(ctx: &mut Ctx) -> Result<String> {
    let grid = ctx.grid()?;
    let p = ctx.path(GRID);
    write_json(&p, &grid.to_geojson())?;
    ctx.record("grid", &[], &[p])?;
    Ok(format!(
        "grid: {} hexagonal cells of {}° -> {GRID}",
        grid.cell_count(),
        grid.cell_size()
    ))
}

// ---------------------------------------------------------------- ingest

#[derive(Serialize)]
struct IngestReport {
    skipped_rows: usize,
    curation: ingest::CurationReport,
    train: usize,
    val: usize,
    test: usize,
}

pub fn ingest(ctx: &mut Ctx) -> Result<String> {
    let grid = ctx.grid()?;
    let msg_path = ctx.path(
        ctx.cfg
            .paths
            .messages
            .clone()
            .unwrap_or_else(|| MESSAGES.into()),
    );
    ctx.require(&msg_path)?;
    let mut inputs = vec![msg_path.clone()];
    let ports_path = match &ctx.cfg.paths.ports {
        Some(p) => Some(ctx.path(p)),
        None => Some(ctx.path(PORTS)).filter(|p| p.exists()),
    };
    let ports = match &ports_path {
        Some(p) => {
            ctx.require(p)?;
            inputs.push(p.clone());
            ingest::parse_ports(p)?
        }
        None => Vec::new(),
    };
    let parsed = ingest::parse_csv(&msg_path)?;
    let (tracks, report) =
        ingest::curate(&parsed.messages, &ports, &grid, &ctx.cfg.curation.to_core())?;
    if tracks.is_empty() {
        bail!(
            "no tracks survived curation ({} messages read)",
            parsed.messages.len()
        );
    }
    let splits =
        ingest::stratify_and_split(&tracks, ctx.cfg.split.test, ctx.cfg.split.val, ctx.cfg.seed)?;
    let out = vec![ctx.path(TRACKS), ctx.path(INGEST_REPORT)];
    let mut w = create(&out[0])?;
    ingest::write_splits_csv(&mut w, &splits)?;
    w.flush()?;
    let rep = IngestReport {
        skipped_rows: parsed.skipped,
        curation: report,
        train: splits.train.len(),
        val: splits.val.len(),
        test: splits.test.len(),
    };
    write_json(&out[1], &rep)?;
    ctx.record("ingest", &inputs, &out)?;
    Ok(format!(
        "ingest: {} messages ({} rows skipped) -> {} tracks (train {} / val {} / test {})",
        parsed.messages.len(),
        parsed.skipped,
        tracks.len(),
        rep.train,
        rep.val,
        rep.test
    ))
}

// ---------------------------------------------------------------- fit-prob

fn labels_of(
    tracks: &[Track],
    grid: &HexGrid,
    routes: &[RoutePolygon],
) -> Vec<(Option<u32>, Option<u32>)> {
    tracks
        .iter()
        .map(|t| track_labels(t, grid, routes))
        .collect()
}

pub fn fit_prob(ctx: &mut Ctx) -> Result<String> {
    let grid = ctx.grid()?;
    let (tracks_path, splits) = ctx.load_splits()?;
    let (routes_path, routes) = ctx.load_routes()?;
    let store = ProbabilityStore::build(&splits.train, &grid, &routes, ctx.cfg.prob_config())?;
    let out = vec![ctx.path(STORE), ctx.path(PROB_REPORT)];
    store.save(&out[0])?;
    let (name, held_out) = if splits.test.is_empty() {
        ("val", &splits.val)
    } else {
        ("test", &splits.test)
    };
    let report = if held_out.is_empty() {
        None
    } else {
        let feats = emit_for_tracks(&store, &grid, &routes, held_out)?;
        Some(classification_report(
            &feats,
            &labels_of(held_out, &grid, &routes),
        )?)
    };
    write_json(
        &out[1],
        &json!({ "split": name, "tracks": held_out.len(), "report": report }),
    )?;
    ctx.record("fit-prob", &[tracks_path, routes_path], &out)?;
    let scores = report
        .map(|r| {
            format!(
                "; {name} route F1 {:.4}, destination F1 {:.4}",
                r.route.f1, r.destination.f1
            )
        })
        .unwrap_or_default();
    Ok(format!(
        "fit-prob: {} cells with history from {} training tracks{scores}",
        store.cells.len(),
        splits.train.len()
    ))
}

// ---------------------------------------------------------------- featurize

pub fn featurize(ctx: &mut Ctx) -> Result<String> {
    let grid = ctx.grid()?;
    let set = ctx.cfg.feature_set;
    let (tracks_path, splits) = ctx.load_splits()?;
    let mut inputs = vec![tracks_path];
    let routes_prob = if set.needs_probabilistic() {
        let store_path = ctx.path(STORE);
        ctx.require(&store_path)?;
        let store = ProbabilityStore::load(&store_path)?;
        let (routes_path, routes) = ctx.load_routes()?;
        inputs.push(store_path);
        inputs.push(routes_path);
        Some((store, routes))
    } else {
        None
    };
    let routes: Vec<RoutePolygon> = match &routes_prob {
        Some((_, r)) => r.clone(),
        None => {
            let p = ctx.routes_path();
            if p.exists() {
                ctx.require(&p)?;
                inputs.push(p.clone());
                routes_from_geojson(&read_json(&p)?)?
            } else {
                Vec::new()
            }
        }
    };
    let normalizer = Normalizer::fit(set, &grid.bbox(), &ctx.cfg.normalizer_caps())?;
    let mut outputs = Vec::new();
    let mut counts = Vec::new();
    for (name, tracks) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        let prob = match &routes_prob {
            Some((store, r)) => Some(emit_for_tracks(store, &grid, r, tracks)?),
            None => None,
        };
        let labels = labels_of(tracks, &grid, &routes);
        let samples = windows_for_tracks(tracks, prob.as_deref(), &labels, &normalizer)?;
        counts.push(format!("{name} {}", samples.len()));
        let stem = windows_stem(set, name);
        WindowDataset {
            normalizer: normalizer.clone(),
            samples,
        }
        .save(&ctx.ws.dir, &stem)?;
        outputs.push(ctx.path(format!("{stem}.json")));
        outputs.push(ctx.path(format!("{stem}.bin")));
    }
    ctx.record(&featurize_stage(set), &inputs, &outputs)?;
    Ok(format!(
        "featurize: {set} features ({} per step), {INPUT_ROWS}-in/{TARGET_ROWS}-out windows: {}",
        set.arity(),
        counts.join(" / ")
    ))
}

// ---------------------------------------------------------------- train

/// Converts windows into network tensors.
pub fn to_dataset(ds: &WindowDataset) -> Result<Dataset> {
    let n = ds.samples.len();
    let f = ds.normalizer.arity();
    let inputs: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| s.input.iter().copied())
        .collect();
    let targets: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| s.target.iter().copied())
        .collect();
    let weights = ds.samples.iter().map(|s| s.weight).collect();
    Ok(Dataset::new(
        Array3::from_shape_vec((n, INPUT_ROWS, f), inputs)?,
        Array3::from_shape_vec((n, TARGET_ROWS, 2), targets)?,
        weights,
    )?)
}

fn check_compatible(model: &Model, norm: &Normalizer) -> Result<()> {
    let c = &model.config;
    if c.features != norm.arity() || c.head_lat != norm.head_lat || c.head_lon != norm.head_lon {
        bail!(
            "model expects {} features with output ranges {:?}/{:?}, windows have {} with {:?}/{:?}; re-run featurize",
            c.features,
            c.head_lat,
            c.head_lon,
            norm.arity(),
            norm.head_lat,
            norm.head_lon
        );
    }
    Ok(())
}

pub fn train_model(ctx: &mut Ctx) -> Result<String> {
    let (set, a) = (ctx.cfg.feature_set, ctx.cfg.ablation);
    let (mut inputs, train_ds) = ctx.load_windows("train")?;
    let (val_files, val_ds) = ctx.load_windows("val")?;
    inputs.extend(val_files);
    let mut model = Model::new(ctx.cfg.model_config())?;
    check_compatible(&model, &train_ds.normalizer)?;
    let report = train(
        &mut model,
        &to_dataset(&train_ds)?,
        &to_dataset(&val_ds)?,
        &ctx.cfg.train_config(),
    )?;
    let out = vec![
        ctx.path(model_file(set, a)),
        ctx.path(train_log_file(set, a)),
    ];
    checkpoint::save(&model, &out[0])?;
    let mut w = create(&out[1])?;
    report.write_csv(&mut w)?;
    w.flush()?;
    ctx.record(&train_stage(set, a), &inputs, &out)?;
    Ok(format!(
        "train: {a} on {set} features, {} parameters, {} epochs, best epoch {} (validation loss {:.6})",
        model.param_count(),
        report.history.len(),
        report.best_epoch,
        report.best_val_loss
    ))
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSample {
    pub track_id: u64,
    pub mmsi: u32,
    pub anchor_time: i64,
    /// `(lat, lon)` of the input window.
    pub input: Vec<[f64; 2]>,
    pub truth: Vec<[f64; 2]>,
    pub prediction: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub schema: String,
    pub feature_set: FeatureSet,
    pub ablation: Ablation,
    pub head_lat: (f64, f64),
    pub head_lon: (f64, f64),
    pub samples: Vec<PredictionSample>,
}

impl Predictions {
    pub fn load(path: &Path) -> Result<Self> {
        let p: Predictions = read_json(path)?;
        if p.schema != PREDICTIONS_SCHEMA {
            bail!(
                "{}: schema `{}`, expected `{PREDICTIONS_SCHEMA}`",
                path.display(),
                p.schema
            );
        }
        Ok(p)
    }

    pub fn to_geojson(&self) -> Value {
        let line = |pts: &[[f64; 2]]| pts.iter().map(|p| json!([p[1], p[0]])).collect::<Vec<_>>();
        let mut features = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            for (role, pts) in [
                ("input", &s.input),
                ("truth", &s.truth),
                ("prediction", &s.prediction),
            ] {
                features.push(json!({
                    "type": "Feature",
                    "properties": { "sample": i, "track_id": s.track_id, "mmsi": s.mmsi, "role": role },
                    "geometry": { "type": "LineString", "coordinates": line(pts) },
                }));
            }
        }
        json!({ "type": "FeatureCollection", "features": features })
    }
}

pub fn predict(ctx: &mut Ctx) -> Result<String> {
    let (set, a) = (ctx.cfg.feature_set, ctx.cfg.ablation);
    let model_path = ctx.path(model_file(set, a));
    ctx.require(&model_path)?;
    let (mut inputs, test) = ctx.load_windows("test")?;
    inputs.push(model_path.clone());
    let mut model = checkpoint::load(&model_path)?;
    check_compatible(&model, &test.normalizer)?;
    let data = to_dataset(&test)?;
    let out = if data.is_empty() {
        Tensor::zeros((0, TARGET_ROWS, 2))
    } else {
        model.predict(&data.inputs, 256)?
    };
    let norm = &test.normalizer;
    let arity = norm.arity();
    let samples = test
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let input = s
                .input
                .chunks(arity)
                .map(|row| {
                    let raw = norm.invert(row);
                    [raw[1], raw[0]]
                })
                .collect();
            let truth = s
                .target
                .chunks(2)
                .map(|y| {
                    let p = norm.decode_target([y[0], y[1]]);
                    [p.lat, p.lon]
                })
                .collect();
            let prediction = (0..TARGET_ROWS)
                .map(|t| [out[[i, t, 0]], out[[i, t, 1]]])
                .collect();
            PredictionSample {
                track_id: s.meta.track_id,
                mmsi: s.meta.mmsi,
                anchor_time: s.meta.anchor_time,
                input,
                truth,
                prediction,
            }
        })
        .collect::<Vec<_>>();
    let preds = Predictions {
        schema: PREDICTIONS_SCHEMA.into(),
        feature_set: set,
        ablation: a,
        head_lat: model.config.head_lat,
        head_lon: model.config.head_lon,
        samples,
    };
    let files = vec![
        ctx.path(predictions_file(set, a, "json")),
        ctx.path(predictions_file(set, a, "geojson")),
    ];
    write_json(&files[0], &preds)?;
    write_json(&files[1], &preds.to_geojson())?;
    ctx.record(&format!("predict:{set}:{}", abl(a)), &inputs, &files)?;
    Ok(format!(
        "predict: {} test windows x {TARGET_ROWS} steps -> {}",
        preds.samples.len(),
        files[1].display()
    ))
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: String,
    pub label: String,
    pub samples: usize,
    pub points: usize,
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
    pub mean_km: f64,
    pub p25_km: f64,
    pub p50_km: f64,
    pub p75_km: f64,
    pub std_km: f64,
    pub max_km: f64,
}

/// Error report of a predictions file. Regression metrics use coordinates
/// scaled by the output ranges.
pub fn evaluate_predictions(p: &Predictions) -> Result<ErrorReport> {
    let scale = |v: [f64; 2]| {
        [
            (v[0] - p.head_lat.0) / (p.head_lat.1 - p.head_lat.0),
            (v[1] - p.head_lon.0) / (p.head_lon.1 - p.head_lon.0),
        ]
    };
    let (mut t, mut q, mut ts, mut qs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in &p.samples {
        if s.truth.len() != s.prediction.len() {
            bail!(
                "sample of track {} has {} truth and {} predicted points",
                s.track_id,
                s.truth.len(),
                s.prediction.len()
            );
        }
        for (a, b) in s.truth.iter().zip(&s.prediction) {
            t.push(GeoPoint {
                lat: a[0],
                lon: a[1],
            });
            q.push(GeoPoint {
                lat: b[0],
                lon: b[1],
            });
            ts.push(scale(*a));
            qs.push(scale(*b));
        }
    }
    Ok(error_report(&t, &q, &ts, &qs)?)
}

pub fn evaluate(ctx: &mut Ctx, predictions: Option<PathBuf>) -> Result<String> {
    let (set, a) = (ctx.cfg.feature_set, ctx.cfg.ablation);
    let path = match predictions {
        Some(p) => p,
        None => ctx.path(predictions_file(set, a, "json")),
    };
    ctx.require(&path)?;
    let preds = Predictions::load(&path)?;
    let rep = evaluate_predictions(&preds)?;
    let label = format!("{} ({})", preds.ablation, preds.feature_set);
    let file = ReportFile {
        schema: REPORT_SCHEMA.into(),
        label: label.clone(),
        samples: preds.samples.len(),
        points: rep.errors_km.len(),
        r2: rep.r2,
        mae: rep.mae,
        mse: rep.mse,
        mean_km: rep.mean_km,
        p25_km: rep.p25_km,
        p50_km: rep.p50_km,
        p75_km: rep.p75_km,
        std_km: rep.std_km,
        max_km: rep.errors_km.iter().copied().fold(0.0, f64::max),
    };
    let (ps, pa) = (preds.feature_set, preds.ablation);
    let out = vec![
        ctx.path(report_file(ps, pa, "json")),
        ctx.path(report_file(ps, pa, "md")),
    ];
    write_json(&out[0], &file)?;
    std::fs::write(
        &out[1],
        ErrorReport::markdown_table(&[(label.clone(), &rep)]),
    )
    .with_context(|| format!("writing {}", out[1].display()))?;
    ctx.record(&format!("evaluate:{ps}:{}", abl(pa)), &[path], &out)?;
    Ok(format!(
        "evaluate: {label}: mean error {:.3} km (median {:.3}), R² {:.4} over {} points",
        rep.mean_km, rep.p50_km, rep.r2, file.points
    ))
}

/// Probabilistic store statistics used by the acceptance suite.
pub fn store_cells(path: &Path) -> Result<usize> {
    Ok(probmodel::ProbabilityStore::load(path)?.cells.len())
}
