use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value {value} in loss term `{term}`")]
    NonFinite { term: &'static str, value: f64 },

    #[error("incompatible configuration, differing fields: {}", fields.join(", "))]
    Incompatible { fields: Vec<String> },

    #[error("unpaired files: {}", orphans.join(", "))]
    Pairing { orphans: Vec<String> },

    #[error("{path}: expected {expected} channel(s), found {found}")]
    Channel {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("resource unavailable: {0}")]
    Resource(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("item `{item}`: {source}")]
    Item {
        item: String,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn item(item: impl Into<String>, source: Error) -> Self {
        Error::Item {
            item: item.into(),
            source: Box::new(source),
        }
    }
}
