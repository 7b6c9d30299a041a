//! Command implementations behind the `peekaboo` binary.

use std::fmt;
use std::path::Path;

pub mod commands;
pub mod config;

/// Bad arguments or configuration. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Well-formed request over malformed data. Exit code 3.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for ValidationError {}

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;

/// Map an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use peekaboo_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<ValidationError>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => EXIT_USAGE,
                E::Io(_) => EXIT_INTERNAL,
                E::ShapeMismatch(_) | E::Format(_) | E::Validation(_) | E::Json(_) => EXIT_VALIDATION,
            };
        }
    }
    EXIT_INTERNAL
}

pub fn require_exists(path: &Path) -> Result<(), UsageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("{} does not exist", path.display())))
    }
}

/// Parse `WxH`.
pub fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn dims() {
        assert_eq!(parse_dims("256x128"), Ok((256, 128)));
        assert_eq!(parse_dims("16X16"), Ok((16, 16)));
        assert!(parse_dims("16").is_err());
        assert!(parse_dims("ax4").is_err());
    }

    #[test]
    fn exit_codes_follow_the_cause() {
        let usage = anyhow::Error::from(UsageError("x".into())).context("outer");
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let bad: Result<(), _> = Err(peekaboo_core::Error::Format("magic".into()));
        assert_eq!(exit_code(&bad.context("decoding").unwrap_err()), EXIT_VALIDATION);
        let arg = anyhow::Error::from(peekaboo_core::Error::InvalidArgument("grid".into()));
        assert_eq!(exit_code(&arg), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), EXIT_INTERNAL);
    }
}
