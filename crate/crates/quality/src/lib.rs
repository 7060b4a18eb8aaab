//! Blind image quality: BRISQUE-style natural-scene-statistics features, a
//! loadable regression scorer, and the relative quality change between an
//! input image and the frames synthesized from it.
//!
//! No pretrained scorer ships with this crate; callers supply a model file.

pub mod error;
pub mod gray;
pub mod model;
pub mod nss;
pub mod report;

pub use error::{QualityError, Result};
pub use gray::GrayImage;
pub use model::{ModelKind, RegressionModel, SupportVector};
pub use nss::{brisque_features, fit_aggd, fit_ggd, mscn, AggdFit, GgdFit, NssFeatures, FEATURES};
pub use report::{evaluate, riqa, score_image, QualityReport};
