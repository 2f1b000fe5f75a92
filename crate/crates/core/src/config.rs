//! On-disk configuration for one identity provider instance.
//!
//! One JSON document per instance. Unknown fields are rejected everywhere.
//! Secrets may be given in clear (`client_secret`, `password`) for demos,
//! in which case they are hashed at load and the clear value is dropped, or
//! as pre-computed hashes (`client_secret_hash`, `password_hash`).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdpConfig {
    /// Self-identifier; written as `iss` into every token this instance signs.
    pub issuer: String,
    /// Socket address for `serve`, e.g. `127.0.0.1:8081`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    pub signing_keys: SigningKeysConfig,
    #[serde(default)]
    pub trusted_issuers: Vec<TrustedIssuerConfig>,
    #[serde(default)]
    pub clients: Vec<ClientConfig>,
    #[serde(default)]
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub policy: PolicyConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigningKeysConfig {
    /// PKCS#8 PEM, inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs256_private_pem: Option<String>,
    /// PKCS#8 PEM file, relative to the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs256_private_pem_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kid: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustedIssuerConfig {
    pub issuer: String,
    pub verification_key: VerificationKeyConfig,
    #[serde(default)]
    pub sdata: SdataConfig,
    #[serde(default = "default_mandatory_claims")]
    pub mandatory_claims: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scim: Option<ScimConfig>,
    #[serde(default)]
    pub provisioning: ProvisioningConfig,
}

pub fn default_mandatory_claims() -> Vec<String> {
    vec!["subject".into(), "email".into()]
}

/// Key used to check tokens from the peer. An HS256 secret is shared by the
/// pair and also signs the tokens this side sends to that peer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum VerificationKeyConfig {
    /// base64url-encoded shared secret, at least 32 bytes.
    Hs256Secret(String),
    /// RSA public JWK of the peer.
    Rs256Jwk(Value),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "snake_case")]
pub enum SdataConfig {
    #[default]
    Plain,
    /// `key` is a base64url-encoded 32-byte AES-256-GCM key.
    Sealed { key: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScimConfig {
    /// Base of the peer's SCIM surface; users are read at `{base_url}/Users/{subject}`.
    pub base_url: String,
    pub client_id: String,
    pub client_secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "snake_case")]
pub enum ProvisioningConfig {
    None,
    Temporary { ttl: i64 },
    Permanent,
}

impl Default for ProvisioningConfig {
    fn default() -> Self {
        ProvisioningConfig::Temporary { ttl: 24 * 3600 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub client_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_secret: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_secret_hash: Option<String>,
    #[serde(default)]
    pub redirect_uris: Vec<String>,
    #[serde(default)]
    pub grant_types: Vec<String>,
    #[serde(default = "default_client_scopes")]
    pub scopes: Vec<String>,
    /// Peers this client may request identity-share tokens for. All trusted
    /// peers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share_targets: Option<Vec<String>>,
}

fn default_client_scopes() -> Vec<String> {
    vec!["openid".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub username: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password_hash: Option<String>,
    pub subject: String,
    pub email: String,
    #[serde(default)]
    pub claims: Map<String, Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub code_ttl: i64,
    pub access_token_ttl: i64,
    pub share_token_ttl: i64,
    pub id_token_ttl: i64,
    pub refresh_token_ttl: i64,
    pub issue_refresh_tokens: bool,
    pub clock_skew: i64,
    /// Scope granted to access tokens obtained through a share grant.
    pub federated_scope: String,
    pub scim_timeout_ms: u64,
    /// Accept grants when the peer's SCIM endpoint cannot be reached.
    pub scim_fail_open: bool,
    pub login_ttl: i64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            code_ttl: 60,
            access_token_ttl: 3600,
            share_token_ttl: 300,
            id_token_ttl: 600,
            refresh_token_ttl: 24 * 3600,
            issue_refresh_tokens: false,
            clock_skew: 60,
            federated_scope: "openid".into(),
            scim_timeout_ms: 3000,
            scim_fail_open: false,
            login_ttl: 300,
        }
    }
}
