use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("code descriptor: {0}")]
    CodeDescriptor(String),
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} is not differentiable")]
    NotDifferentiable(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("WGAN training diverged at step {step}")]
    WganDiverged {
        step: usize,
        trace: Box<crate::wgan::WganTrace>,
    },
    #[error("WGAN generator collapsed to single modes: {0:?}")]
    WganCollapsed(Box<crate::wgan::ModeDiagnostic>),
    #[error("unknown system id {0:?}")]
    UnknownSystem(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(std::path::PathBuf),
    #[error("config file: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error(transparent)]
    Nn(#[from] aircomm_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Length {
            what,
            expected,
            got,
        })
    }
}
