use thiserror::Error;

/// Errors reported by the estimators, calibration and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A numeric parameter is outside the domain where the operation is defined.
    #[error("invalid {name} = {value}: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// A Morris counter was asked to advance past its cap.
    #[error("morris counter saturated at state {cap}")]
    Saturated { cap: u32 },

    /// An input symbol lies outside the machine's alphabet.
    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    /// A calibration built for one estimator was handed to the other.
    #[error("calibration variant mismatch: expected {expected}")]
    VariantMismatch { expected: &'static str },

    /// An exact computation was requested outside its tractable range.
    #[error("{what} is intractable for {name} = {value} (limit {limit})")]
    Intractable {
        what: &'static str,
        name: &'static str,
        value: f64,
        limit: f64,
    },

    /// A textual distribution description could not be understood.
    #[error("cannot parse distribution spec `{spec}`: {reason}")]
    Spec { spec: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::Domain {
        name,
        value,
        reason,
    }
}
