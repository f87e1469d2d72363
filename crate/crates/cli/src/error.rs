use raven_core::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    /// A single-request stage whose request failed.
    #[error("provider: {0}")]
    Provider(String),
    #[error("{failed} of {total} {unit} failed ({rate:.1}%), above the allowed {limit:.1}%")]
    FailureBudget {
        failed: usize,
        total: usize,
        unit: &'static str,
        rate: f64,
        limit: f64,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) | CliError::FailureBudget { .. } => 3,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Fails when more than `limit` of `total` items failed.
pub fn check_budget(failed: usize, total: usize, limit: f64, unit: &'static str) -> Result<(), CliError> {
    if total == 0 {
        return Ok(());
    }
    let rate = failed as f64 / total as f64;
    if rate > limit {
        return Err(CliError::FailureBudget {
            failed,
            total,
            unit,
            rate: rate * 100.0,
            limit: limit * 100.0,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_boundary() {
        assert!(check_budget(2, 10, 0.2, "clips").is_ok());
        let err = check_budget(3, 10, 0.2, "clips").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert_eq!(err.to_string(), "3 of 10 clips failed (30.0%), above the allowed 20.0%");
        assert!(check_budget(0, 0, 0.0, "clips").is_ok());
    }
}
