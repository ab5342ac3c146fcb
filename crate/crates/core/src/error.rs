use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that raises
/// them; everything is surfaced through `Result<T, Error>`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("kernel timing must be positive: {0}")]
    InvalidTiming(String),

    #[error("value {value} outside {transform} domain for indicator {key}")]
    TransformDomain {
        key: String,
        transform: String,
        value: f64,
    },

    #[error("unknown indicator key {0}")]
    UnknownIndicator(String),

    #[error("unknown event id {0}")]
    UnknownEvent(String),

    #[error("horizon {0} too short, need at least {1} days")]
    HorizonTooShort(i64, i64),

    #[error("policy decision failed: {0}")]
    Policy(String),

    #[error("event instantiation failed: {0}")]
    Instantiate(String),

    #[error("bundle schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("device log truncated: expected {expected} day records, found {found} (first missing day {first_missing})")]
    TruncatedDeviceLog {
        expected: i64,
        found: i64,
        first_missing: i64,
    },

    #[error("query generation failed: {0}")]
    Query(String),

    #[error("response parse error: {0}")]
    ResponseParse(String),

    #[error("judge endpoint failed: {0}")]
    Judge(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn schema(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            message: message.into(),
        }
    }
}
