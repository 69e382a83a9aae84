use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("recruitment failed: {0}")]
    Recruitment(String),
    #[error("link failed: {0}")]
    Link(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("no common root")]
    NoCommonRoot,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
