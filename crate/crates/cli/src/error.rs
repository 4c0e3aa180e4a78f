use std::path::PathBuf;

use efk_core::dataset::DatasetError;
use efk_core::eval::EvalError;
use efk_core::event::{CodecError, EventError, SimError};
use efk_core::fusion::FusionError;
use efk_core::represent::{RenderError, RepresentError};
use efk_core::structure::LossError;
use efk_core::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Codec { path: PathBuf, source: CodecError },
    #[error("{}: {source}", path.display())]
    Tensor { path: PathBuf, source: TensorError },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{}: {source}", path.display())]
    Annotations { path: PathBuf, source: DatasetError },
    #[error("{}: {source}", path.display())]
    Detections { path: PathBuf, source: EvalError },
    #[error("{}: {source}", path.display())]
    Weights { path: PathBuf, source: FusionError },
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Represent(#[from] RepresentError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    /// Stable identifier printed as `error[CODE]` on stderr.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "E_IO",
            CliError::Codec { .. } => "E_CODEC",
            CliError::Tensor { .. } => "E_TENSOR",
            CliError::Image { .. } => "E_IMAGE",
            CliError::Annotations { .. } => "E_ANNOTATION",
            CliError::Detections { .. } => "E_DETECTION",
            CliError::Weights { source: FusionError::MissingTensor(_), .. } => "E_WEIGHT_MISSING",
            CliError::Weights { .. } => "E_WEIGHTS",
            CliError::Event(_) => "E_EVENT",
            CliError::Represent(_) => "E_REPRESENT",
            CliError::Render(_) => "E_RENDER",
            CliError::Loss(LossError::ShapeMismatch { .. }) => "E_SHAPE",
            CliError::Loss(_) => "E_LOSS",
            CliError::Fusion(FusionError::Shape(_)) => "E_SHAPE",
            CliError::Fusion(_) => "E_FUSION",
            CliError::Dataset(_) => "E_DATASET",
            CliError::Sim(_) => "E_SIMULATE",
            CliError::Config(_) => "E_CONFIG",
        }
    }
}

pub fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub fn tensor_at(path: impl Into<PathBuf>) -> impl FnOnce(TensorError) -> CliError {
    let path = path.into();
    move |source| CliError::Tensor { path, source }
}
