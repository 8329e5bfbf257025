use acr_core::Error;

/// Exit codes shared by every command.
pub const INPUT: u8 = 2;
pub const FILESYSTEM: u8 = 3;
pub const NUMERICAL: u8 = 4;
pub const COMPATIBILITY: u8 = 5;
pub const INTERRUPTED: u8 = 130;
const INTERNAL: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    pub fn fs(context: &str, e: impl std::fmt::Display) -> Self {
        Failure::new(FILESYSTEM, format!("{context}: {e}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::Contract(_)
            | Error::DegenerateGeometry(_)
            | Error::BadMagic { .. }
            | Error::Truncated(_)
            | Error::Format(_) => INPUT,
            Error::Io(_) => FILESYSTEM,
            Error::NonFinite { .. } | Error::NumericalAbort { .. } => NUMERICAL,
            Error::Compatibility(_) | Error::VersionMismatch { .. } => COMPATIBILITY,
            Error::Dimension { .. } | Error::Domain(_) => INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
