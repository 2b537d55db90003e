use thiserror::Error;

use crate::evaluation::EvalError;
use crate::flow::FlowError;
use crate::geometry::GeometryError;
use crate::io::FormatError;
use crate::losses::LossError;
use crate::pointmap::PointmapError;
use crate::recovery::RecoveryError;
use crate::synth::SynthError;

/// Any error produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pointmap(#[from] PointmapError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Format(#[from] FormatError),
}
