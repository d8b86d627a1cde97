//! Dynamic linear model for freeway speed fields and travel-time forecasts.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the bottom fix the scalar to `f64`, with `*32` variants for `f32`.

pub mod scalar;
pub mod error;
pub mod linalg;
pub mod domain;
pub mod dlm;
pub mod predict;
pub mod traveltime;
pub mod baselines;
pub mod ingest;
pub mod eval;

pub use domain::{
    forgetting_weights, DaySet, DayVelocityMatrix, PeriodMask, PeriodWindow, SensorLayout, TimeGrid, ALL_DAYS,
    WEEKDAYS,
};
pub use dlm::{decode_model, encode_model, load_model, save_model, DlmModel, Hyperparams, TransitionState};
pub use error::{DlmError, FormatError, Result};
pub use baselines::{instantaneous_field, knn_predict, nearest_days, DistanceWindow, KnnConfig};
pub use eval::{
    ape, evaluate, grid_search, improvement_rate, mape, period_masks_builtin, DlmPredictor, EvalConfig, EvalReport,
    FieldPredictor, Freeway, GridSearchTable, InstantaneousPredictor, KnnPredictor, Route, TripPlan, TripRecord, TripSpec,
};
pub use ingest::{
    generate_synthetic, identity_transitions, load_dataset, load_layout, load_partial_day, mixing_transitions, split_dataset,
    write_dataset, write_layout, DatasetSchema, InitialSpeeds, LoadReport, MilepostOrder, SyntheticSpec,
};
pub use linalg::{Cholesky, Matrix};
pub use predict::{post_process, predict_linear, predict_steps, ColumnSource, PostProcessParams, PredictedField};
pub use scalar::Real;
pub use traveltime::{experienced_travel_time, interpolate_field, travel_time, GriddedField, VelocityFieldFn};

pub type Model = DlmModel<f64>;
pub type Model32 = DlmModel<f32>;
pub type Velocities = DayVelocityMatrix<f64>;
pub type Velocities32 = DayVelocityMatrix<f32>;
pub type Days = DaySet<f64>;
pub type Days32 = DaySet<f32>;
pub type Layout = SensorLayout<f64>;
pub type Layout32 = SensorLayout<f32>;
pub type PostProcess = PostProcessParams<f64>;
pub type PostProcess32 = PostProcessParams<f32>;
pub type Field = GriddedField<f64>;
pub type Field32 = GriddedField<f32>;
pub type Config = EvalConfig<f64>;
pub type Config32 = EvalConfig<f32>;
