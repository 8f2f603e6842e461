use thiserror::Error;

use crate::advi::FitError;
use crate::analysis::AnalysisError;
use crate::calibrate::CalibrationError;
use crate::data::DataError;
use crate::filter::FilterError;
use crate::model::ModelError;
use crate::study::StudyError;
use crate::synth::SynthError;

pub type Result<T> = std::result::Result<T, Error>;

/// Umbrella error for callers that drive several stages of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used in CLI error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Filter(_) => "filter",
            Error::Calibration(_) => "calibration",
            Error::Model(_) => "model",
            Error::Fit(_) => "fit",
            Error::Analysis(_) => "analysis",
            Error::Synth(_) => "synth",
            Error::Study(_) => "study",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
