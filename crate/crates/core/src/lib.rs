//! Multiple-instance perceptrons (MI-max, MaxOfMax, MI-max-HL) for weakly
//! supervised object detection on pre-extracted region feature bags.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The type
//! aliases at the crate root fix the scalar to `f64`, which is what the CLI
//! uses; the `*32` aliases exist for memory-bound callers.

pub mod bagdata;
pub mod baselines;
mod binio;
pub mod cli;
pub mod detector;
pub mod error;
pub mod evaluator;
pub mod milmodels;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = bagdata::Dataset<f64>;
pub type Dataset32 = bagdata::Dataset<f32>;
pub type FeatureBag = bagdata::FeatureBag<f64>;
pub type RegionInstance = bagdata::RegionInstance<f64>;
pub type BoundingBox = bagdata::BoundingBox<f64>;
pub type PlantedTruth = bagdata::PlantedTruth<f64>;

pub type LinearModel = milmodels::LinearModel<f64>;
pub type PolyhedralModel = milmodels::PolyhedralModel<f64>;
pub type HiddenLayerModel = milmodels::HiddenLayerModel<f64>;
pub type ModelVariant = milmodels::ModelVariant<f64>;
pub type ModelVariant32 = milmodels::ModelVariant<f32>;
pub type LossConfig = milmodels::LossConfig<f64>;

pub type TrainedClassModel = trainer::TrainedClassModel<f64>;
pub type ModelSet = trainer::ModelSet<f64>;
pub type Detection = detector::Detection<f64>;
