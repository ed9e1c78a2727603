pub mod autodiff;
pub mod dataio;
mod binio;
pub mod error;
pub mod evalmetrics;
pub mod layers;
pub mod models;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, GradCheckOptions, GradCheckReport, Gradients, NormState, Tape, Var};
pub use models::{Architecture, Checkpoint, Model, ModelConfig};
pub use error::{Error, FormatReason, Result};
pub use params::{Mode, ModelState, ParamStore};
pub use tensor::{Shape, Tensor};
