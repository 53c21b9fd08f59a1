use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{name} = {value} is outside the admissible range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("lateral position {x2} lies outside the corridor [{right}, {left}]")]
    OutsideCorridor { x2: f64, right: f64, left: f64 },

    #[error("horizon mismatch: expected at least {expected} samples, found {found} ({what})")]
    HorizonMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("world snapshot at step {snapshot} is stale for a plan at step {now}")]
    StaleSnapshot { snapshot: u64, now: u64 },

    #[error("emergency replan for vehicle {vehicle} still collides with obstacle {obstacle} ({kind})")]
    EmergencyFailed {
        vehicle: usize,
        obstacle: usize,
        kind: &'static str,
        dump: String,
    },

    #[error("audit failure at step {step}: {what}")]
    Audit {
        step: u64,
        what: String,
        dump: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
