//! TOML pipeline configuration. Every field has a default, so an empty file
//! (or no file) describes the synthetic fork-world run at full model size.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voyagecast::features::{FeatureSet, NormalizerCaps};
use voyagecast::grid::{BBox, HexGrid};
use voyagecast::ingest::{CleanConfig, CurationConfig, InterpolationMode, VesselType};
use voyagecast::probmodel::{DeltaMode, ProbConfig};
use voyagecast::synth::LaneWorld;
use voyagecast_nn::{Ablation, AdamConfig, ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub feature_set: FeatureSet,
    pub ablation: Ablation,
    pub paths: Paths,
    pub grid: GridSection,
    pub curation: CurationSection,
    pub split: SplitSection,
    pub prob: ProbSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            feature_set: FeatureSet::Trigonometric,
            ablation: Ablation::C1,
            paths: Paths::default(),
            grid: GridSection::default(),
            curation: CurationSection::default(),
            split: SplitSection::default(),
            prob: ProbSection::default(),
            features: FeatureSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Input files. Relative paths resolve against the output directory; unset
/// paths default to the files written by `synth`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub messages: Option<PathBuf>,
    pub ports: Option<PathBuf>,
    pub routes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
    pub cell_size: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            min_lat: 46.0,
            min_lon: -66.0,
            max_lat: 50.0,
            max_lon: -58.0,
            cell_size: 0.3,
        }
    }
}

impl GridSection {
    pub fn bbox(&self) -> voyagecast::Result<BBox> {
        BBox::new(self.min_lat, self.min_lon, self.max_lat, self.max_lon)
    }

    pub fn build(&self) -> voyagecast::Result<HexGrid> {
        HexGrid::build(self.bbox()?, self.cell_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub gap_hours: f64,
    pub gap_km: f64,
    pub turn_limit_gradian: f64,
    pub port_radius_km: f64,
    pub port_match_km: f64,
    pub min_pattern_count: usize,
    pub interpolation: InterpolationMode,
    pub vessel_types: Vec<VesselType>,
    pub augment_reverse: bool,
}

impl Default for CurationSection {
    fn default() -> Self {
        let c = CurationConfig::default();
        CurationSection {
            gap_hours: c.gap_hours,
            gap_km: c.gap_km,
            turn_limit_gradian: c.turn_limit_gradian,
            port_radius_km: c.clean.port_radius_km,
            port_match_km: c.clean.port_match_km,
            min_pattern_count: c.clean.min_pattern_count,
            interpolation: c.clean.interpolation,
            vessel_types: c.vessel_types,
            augment_reverse: c.augment_reverse,
        }
    }
}

impl CurationSection {
    pub fn to_core(&self) -> CurationConfig {
        CurationConfig {
            gap_hours: self.gap_hours,
            gap_km: self.gap_km,
            turn_limit_gradian: self.turn_limit_gradian,
            clean: CleanConfig {
                port_radius_km: self.port_radius_km,
                port_match_km: self.port_match_km,
                min_pattern_count: self.min_pattern_count,
                interpolation: self.interpolation,
            },
            vessel_types: self.vessel_types.clone(),
            augment_reverse: self.augment_reverse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Share of vessels held out for testing.
    pub test: f64,
    /// Share of the remaining vessels used for validation.
    pub val: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test: 0.2,
            val: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbSection {
    pub delta_mode: DeltaMode,
    pub pair_cap: usize,
}

impl Default for ProbSection {
    fn default() -> Self {
        let c = ProbConfig::default();
        ProbSection {
            delta_mode: c.delta_mode,
            pair_cap: c.pair_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub speed_max_knots: f64,
    pub accel_max_knots_per_hour: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let c = NormalizerCaps::default();
        FeatureSection {
            speed_max_knots: c.speed_max_knots,
            accel_max_knots_per_hour: c.accel_max_knots_per_hour,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    #[default]
    Full,
    Toy,
}

/// Architecture: a preset plus optional overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: ModelPreset,
    pub filters: Option<Vec<usize>>,
    pub kernels: Option<Vec<usize>>,
    pub dilation: Option<usize>,
    pub pool: Option<usize>,
    pub dropout: Option<f64>,
    pub lstm_units: Option<usize>,
    pub encoder_dense: Option<usize>,
    pub omega: Option<f64>,
    pub dense: Option<Vec<usize>>,
    pub l2: Option<f64>,
    /// Output decode ranges; default to the grid's bounding box.
    pub head_lat: Option<(f64, f64)>,
    pub head_lon: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lr: t.adam.lr,
            weight_decay: t.adam.weight_decay,
        }
    }
}

/// Overrides of the fork-world generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub vessels: Option<usize>,
    pub voyages_per_vessel: Option<usize>,
    pub cross_track_sigma_km: Option<f64>,
    pub jitter_km: Option<f64>,
    pub speed_sigma_knots: Option<f64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.grid.build().map_err(|e| format!("grid: {e}"))?;
        self.curation
            .to_core()
            .validate()
            .map_err(|e| format!("curation: {e}"))?;
        if self.curation.min_pattern_count == 0 {
            return Err("curation: min_pattern_count must be positive".into());
        }
        for (name, v) in [
            ("split.test", self.split.test),
            ("split.val", self.split.val),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if self.prob.pair_cap == 0 {
            return Err("prob.pair_cap must be positive".into());
        }
        if !(self.features.speed_max_knots > 0.0 && self.features.accel_max_knots_per_hour > 0.0) {
            return Err("feature caps must be positive".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || t.max_epochs == 0 || !(t.lr > 0.0) || !(t.weight_decay >= 0.0) {
            return Err(
                "train: batch_size, max_epochs and lr must be positive, weight_decay non-negative"
                    .into(),
            );
        }
        self.model_config().validate().map_err(|e| e.to_string())?;
        self.world()
            .map_err(|e| format!("synth: {e}"))?
            .validate()
            .map_err(|e| format!("synth: {e}"))?;
        Ok(())
    }

    pub fn head_ranges(&self) -> ((f64, f64), (f64, f64)) {
        let g = &self.grid;
        (
            self.model.head_lat.unwrap_or((g.min_lat, g.max_lat)),
            self.model.head_lon.unwrap_or((g.min_lon, g.max_lon)),
        )
    }

    pub fn normalizer_caps(&self) -> NormalizerCaps {
        let (head_lat, head_lon) = self.head_ranges();
        NormalizerCaps {
            speed_max_knots: self.features.speed_max_knots,
            accel_max_knots_per_hour: self.features.accel_max_knots_per_hour,
            head_lat,
            head_lon,
        }
    }

    pub fn prob_config(&self) -> ProbConfig {
        ProbConfig {
            delta_mode: self.prob.delta_mode,
            pair_cap: self.prob.pair_cap,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let features = self.feature_set.arity();
        let base = match self.model.preset {
            ModelPreset::Full => ModelConfig::full(features, self.ablation),
            ModelPreset::Toy => ModelConfig::toy(features, self.ablation),
        };
        let m = &self.model;
        let (head_lat, head_lon) = self.head_ranges();
        ModelConfig {
            filters: m.filters.clone().unwrap_or(base.filters),
            kernels: m.kernels.clone().unwrap_or(base.kernels),
            dilation: m.dilation.unwrap_or(base.dilation),
            pool: m.pool.unwrap_or(base.pool),
            dropout: m.dropout.unwrap_or(base.dropout),
            lstm_units: m.lstm_units.unwrap_or(base.lstm_units),
            encoder_dense: m.encoder_dense.unwrap_or(base.encoder_dense),
            omega: m.omega.unwrap_or(base.omega),
            dense: m.dense.clone().unwrap_or(base.dense),
            l2: m.l2.unwrap_or(base.l2),
            head_lat,
            head_lon,
            seed: self.seed,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.seed,
            adam: AdamConfig {
                lr: t.lr,
                weight_decay: t.weight_decay,
                ..AdamConfig::default()
            },
        }
    }

    pub fn world(&self) -> voyagecast::Result<LaneWorld> {
        let mut w = LaneWorld::fork_world(self.seed)?;
        let s = &self.synth;
        w.vessels = s.vessels.unwrap_or(w.vessels);
        w.voyages_per_vessel = s.voyages_per_vessel.unwrap_or(w.voyages_per_vessel);
        w.cross_track_sigma_km = s.cross_track_sigma_km.unwrap_or(w.cross_track_sigma_km);
        w.jitter_km = s.jitter_km.unwrap_or(w.jitter_km);
        w.speed_sigma_knots = s.speed_sigma_knots.unwrap_or(w.speed_sigma_knots);
        Ok(w)
    }
}
