use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Forward,
    Perturb,
    Partition,
    Catalog,
    Metric,
    Potential,
    Evaluate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Forward => "forward",
            Stage::Perturb => "perturb",
            Stage::Partition => "partition",
            Stage::Catalog => "catalog",
            Stage::Metric => "metric",
            Stage::Potential => "potential",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid manifold: {0}")]
    Manifold(String),

    #[error("radius {radius} is not below the injectivity radius {injectivity}")]
    BeyondInjectivity { radius: f64, injectivity: f64 },

    #[error("invalid potential: {0}")]
    Potential(String),

    #[error("matrix assembly is not symmetric at ({row}, {col})")]
    NonSymmetric { row: usize, col: usize },

    #[error("LAPACK {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("spectral data: {0}")]
    Spectral(String),

    #[error("lower bound for the first eigenfunction is not positive ({0})")]
    NonPositiveLowerBound(f64),

    #[error("negative radius {0}")]
    NegativeRadius(f64),

    #[error("minimizer stopped after {iterations} iterations with KKT residual {residual:e}")]
    MinimizerStalled {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("partition: {0}")]
    Partition(String),

    #[error("catalog: {0}")]
    Catalog(String),

    #[error("metric graph is disconnected; isolated entries: {0:?}")]
    Disconnected(Vec<usize>),

    #[error("potential recovery: {0}")]
    Recovery(String),

    #[error("label mismatch between reconstructions: {0}")]
    LabelMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("archive format: {0}")]
    Archive(String),

    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a stage id unless the error already carries one.
    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::StageFailed { .. } => e,
            e => Error::StageFailed {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for configuration errors, also when wrapped in a stage failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::StageFailed { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::StageFailed { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
