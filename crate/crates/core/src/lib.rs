//! Vessel trajectory forecasting pipeline: AIS track curation, hexagonal-grid
//! route and destination inference, feature engineering, evaluation metrics
//! and a synthetic traffic generator.

pub mod error;
pub mod eval;
pub mod features;
pub mod geo;
pub mod grid;
pub mod ingest;
pub mod probmodel;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use geo::{GeoPoint, Kinematics};
pub use grid::{BBox, CellId, HexGrid, RouteId, RoutePolygon};
