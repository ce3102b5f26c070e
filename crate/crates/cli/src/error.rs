use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sketch_core::Error),
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("cannot parse spec: {0}")]
    SpecParse(#[from] toml::de::Error),
    #[error("cannot serialise: {0}")]
    SpecWrite(#[from] toml::ser::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
