use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Runtime,
    CheckFailed,
}

/// Command failure. Printed as one JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Validation, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Runtime, message: message.into() }
    }

    pub fn check_failed(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::CheckFailed, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Runtime => 2,
            ErrorKind::CheckFailed => 3,
        }
    }

    pub fn to_json_line(&self) -> String {
        let kind = match self.kind {
            ErrorKind::Validation => "validation",
            ErrorKind::Runtime => "runtime",
            ErrorKind::CheckFailed => "check_failed",
        };
        serde_json::json!({ "error": kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Input problems are validation errors; anything raised while sampling is a runtime error.
macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    spatial_factor::graph::GraphError,
    spatial_factor::data::DataError,
    spatial_factor::simulate::SimulationError,
    spatial_factor::diagnostics::DiagnosticsError
);

impl From<spatial_factor::sampler::SamplerError> for CliError {
    fn from(e: spatial_factor::sampler::SamplerError) -> Self {
        match e {
            spatial_factor::sampler::SamplerError::Config(m) => CliError::validation(m),
            other => CliError::runtime(other.to_string()),
        }
    }
}

impl From<spatial_factor::conditionals::ConditionalError> for CliError {
    fn from(e: spatial_factor::conditionals::ConditionalError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<spatial_factor::checks::CheckError> for CliError {
    fn from(e: spatial_factor::checks::CheckError) -> Self {
        use spatial_factor::checks::CheckError;
        match e {
            CheckError::Sampler(s) => s.into(),
            CheckError::Config(m) => CliError::validation(m),
            other => CliError::validation(other.to_string()),
        }
    }
}
