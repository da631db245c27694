use std::path::PathBuf;

use crate::image::RgbImage;
use crate::pipeline::manifest::RunManifest;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The segmentor found no head in the stage-1 image. The image is kept so
    /// callers can inspect or save it.
    #[error("no head region found in the layout image")]
    NoHeadFound { image: Box<RgbImage> },

    #[error("reference image has no detectable face")]
    InvalidReference,

    #[error("adapter failure: {0}")]
    Adapter(String),

    /// A generation run aborted part-way; the manifest records the failed step.
    #[error("run aborted at step {step}: {source}")]
    RunAborted {
        step: usize,
        manifest: Box<RunManifest>,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] ::image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
