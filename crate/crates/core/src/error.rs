use std::path::PathBuf;

use crate::Vec3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A parameter lies outside the range where shielding is proven.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("field evaluated at or inside the shielded region (shield distance {distance:e})")]
    Singularity { distance: f64 },

    #[error("particle {id} penetrated the shield at t = {t} (x = {x:?}, v = {v:?})")]
    Penetration { id: usize, t: f64, x: Vec3, v: Vec3 },

    #[error("particle {id} hit the sub-step floor {hits} consecutive times at t = {t} (x = {x:?}, v = {v:?})")]
    Stiffness {
        id: usize,
        t: f64,
        hits: usize,
        x: Vec3,
        v: Vec3,
    },

    #[error("local energy is undefined for mixed-sign plasmas")]
    MixedSign,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
