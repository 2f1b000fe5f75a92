use thiserror::Error;

/// Failures raised by the JOSE layer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JoseError {
    #[error("malformed token: {0}")]
    MalformedToken(String),

    /// Signature, MAC or AEAD tag did not verify.
    #[error("integrity check failed")]
    IntegrityFailure,

    #[error("token expired")]
    Expired,

    #[error("token not yet valid")]
    NotYetValid,

    /// The key cannot be used the way it was asked to be used.
    #[error("key configuration error: {0}")]
    KeyConfig(String),
}

/// Startup-time configuration failures. The message always names the
/// offending entry.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Schema(String),

    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },

    #[error("{context}: {source}")]
    Key {
        context: String,
        #[source]
        source: JoseError,
    },

    #[error("unknown trusted issuer `{0}`")]
    UnknownIssuer(String),
}
