use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Tensors that must be congruent are not; names the offending layer.
    Shape { layer: String, detail: String },
    /// A non-finite value appeared during training.
    Numeric { iteration: u64, detail: String },
    /// A caller violated an operation's precondition.
    Contract(String),
    /// Malformed binary input (IDX files, mask files).
    Format { offset: u64, detail: String },
    Io { path: PathBuf, source: io::Error },
    NotACheckpoint,
    VersionMismatch { found: u32, supported: u32 },
    ArchitectureMismatch,
    CorruptPayload(String),
    UndefinedAngle,
    UndefinedRatio,
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { layer, detail } => write!(f, "shape mismatch in layer `{layer}`: {detail}"),
            Error::Numeric { iteration, detail } => {
                write!(f, "numeric error at iteration {iteration}: {detail}")
            }
            Error::Contract(detail) => write!(f, "contract violation: {detail}"),
            Error::Format { offset, detail } => write!(f, "format error at byte {offset}: {detail}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::NotACheckpoint => f.write_str("not a checkpoint"),
            Error::VersionMismatch { found, supported } => write!(
                f,
                "version mismatch: file has version {found}, newest supported is {supported}"
            ),
            Error::ArchitectureMismatch => f.write_str("architecture mismatch"),
            Error::CorruptPayload(detail) => write!(f, "corrupt payload: {detail}"),
            Error::UndefinedAngle => f.write_str("undefined angle: a masked vector is zero"),
            Error::UndefinedRatio => f.write_str("undefined ratio: IMP mean is zero"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
