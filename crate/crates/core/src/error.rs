use thiserror::Error;

use crate::datapath::CompileError;
use crate::model_ir::ModelError;
use crate::perf_model::PerfError;
use crate::quantize::{FormatError, QuantError};
use crate::stream_engine::StreamError;

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
