use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration at `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("estimation failed: {0}")]
    Estimation(mwradar::Error),

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed sample file {path}: {message}")]
    SampleFile { path: String, message: String },
}

impl CliError {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } | CliError::SampleFile { .. } => 2,
            CliError::Estimation(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "validation",
            3 => "estimation",
            _ => "io",
        }
    }
}

impl From<mwradar::Error> for CliError {
    fn from(e: mwradar::Error) -> Self {
        use mwradar::Error as E;
        match e {
            E::Estimation(_) | E::Singular { .. } | E::NotConverged { .. } => {
                CliError::Estimation(e)
            }
            other => CliError::Validation {
                key: "<input>".into(),
                message: other.to_string(),
            },
        }
    }
}
