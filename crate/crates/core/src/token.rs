//! Wire and record types for everything the protocol exchanges, plus the
//! pure constructors and validators that go with them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::error::JoseError;
use crate::jwt::{b64url_encode, check_time_bounds, fill_random};

pub const GRANT_AUTHORIZATION_CODE: &str = "authorization_code";
pub const GRANT_IDENTITY_SHARE: &str = "identity_share_token";
pub const GRANT_REFRESH_TOKEN: &str = "refresh_token";

pub const SCOPE_OPENID: &str = "openid";
pub const SCOPE_IDENTITY_SHARE: &str = "identity_share";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("at least one audience is required")]
    EmptyAudience,
    #[error("ttl must be positive")]
    NonPositiveTtl,
    #[error("`{0}` is not an absolute URI")]
    NotAbsoluteUri(String),
    #[error("subject must be a non-empty string")]
    EmptySubject,
    #[error("extra claim `{0}` would shadow a reserved claim")]
    ReservedExtra(String),
    #[error("invalid subject data: {0}")]
    InvalidSubjectData(String),
}

/// `scheme ":" rest` with an RFC 3986 scheme and a non-empty remainder.
pub fn is_absolute_uri(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        && !rest.is_empty()
        && !s.chars().any(char::is_whitespace)
}

/// 256 bits from the system CSPRNG, base64url encoded.
pub fn generate_opaque_token() -> String {
    let mut buf = [0u8; 32];
    fill_random(&mut buf);
    b64url_encode(buf)
}

/// Space-delimited OAuth scope, kept as a sorted set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Scope(BTreeSet<String>);

impl Scope {
    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn is_subset(&self, other: &Scope) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn without(&self, token: &str) -> Scope {
        Scope(self.0.iter().filter(|t| *t != token).cloned().collect())
    }
}

impl FromStr for Scope {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Scope(
            s.split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect(),
        ))
    }
}

impl<'a> FromIterator<&'a str> for Scope {
    fn from_iter<I: IntoIterator<Item = &'a str>>(iter: I) -> Self {
        Scope(iter.into_iter().map(str::to_owned).collect())
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.0 {
            if !first {
                f.write_str(" ")?;
            }
            f.write_str(t)?;
            first = false;
        }
        Ok(())
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_default())
    }
}

/// `aud` claim: a single identifier or an array of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Audience {
    One(String),
    Many(Vec<String>),
}

impl Audience {
    pub fn contains(&self, id: &str) -> bool {
        match self {
            Audience::One(a) => a == id,
            Audience::Many(v) => v.iter().any(|a| a == id),
        }
    }

    pub fn first(&self) -> Option<&str> {
        match self {
            Audience::One(a) => Some(a),
            Audience::Many(v) => v.first().map(String::as_str),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        let slice: &[String] = match self {
            Audience::One(a) => std::slice::from_ref(a),
            Audience::Many(v) => v,
        };
        slice.iter().map(String::as_str)
    }
}

/// `sdata` as carried in the token: a plain object or a sealed blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sdata {
    Plain(Map<String, Value>),
    Sealed(String),
}

/// End-user claims shared across domains.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject: String,
    pub email: Option<String>,
    pub extras: Map<String, Value>,
}

impl SubjectData {
    pub fn new(subject: impl Into<String>, email: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            email: Some(email.into()),
            extras: Map::new(),
        }
    }

    pub fn with_extra(mut self, name: &str, value: impl Into<Value>) -> Result<Self, ModelError> {
        if name == "subject" || name == "email" {
            return Err(ModelError::ReservedExtra(name.to_owned()));
        }
        self.extras.insert(name.to_owned(), value.into());
        Ok(self)
    }

    /// Flat JSON form: `subject`, `email`, then the extras.
    pub fn to_map(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("subject".into(), self.subject.clone().into());
        if let Some(email) = &self.email {
            m.insert("email".into(), email.clone().into());
        }
        for (k, v) in &self.extras {
            m.insert(k.clone(), v.clone());
        }
        m
    }

    pub fn from_map(mut m: Map<String, Value>) -> Result<Self, ModelError> {
        let subject = match m.remove("subject") {
            Some(Value::String(s)) if !s.is_empty() => s,
            _ => return Err(ModelError::EmptySubject),
        };
        let email = match m.remove("email") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                return Err(ModelError::InvalidSubjectData(
                    "email must be a string".into(),
                ))
            }
        };
        Ok(Self {
            subject,
            email,
            extras: m,
        })
    }
}

impl Serialize for SubjectData {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SubjectData {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = Map::deserialize(d)?;
        SubjectData::from_map(m).map_err(serde::de::Error::custom)
    }
}

/// Payload of an identity-share token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityShareClaims {
    pub iss: String,
    pub aud: Audience,
    pub iat: i64,
    pub exp: i64,
    pub sdata: Sdata,
}

impl IdentityShareClaims {
    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("claims serialize") {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }
}

/// Assembles share-token claims. `sdata` is left plain; sealing is the
/// issuer's decision and happens afterwards.
pub fn build_identity_share_claims(
    issuer: &str,
    targets: &[String],
    subject_data: &SubjectData,
    now: i64,
    ttl: i64,
) -> Result<IdentityShareClaims, ModelError> {
    if targets.is_empty() {
        return Err(ModelError::EmptyAudience);
    }
    if ttl <= 0 {
        return Err(ModelError::NonPositiveTtl);
    }
    for uri in std::iter::once(issuer).chain(targets.iter().map(String::as_str)) {
        if !is_absolute_uri(uri) {
            return Err(ModelError::NotAbsoluteUri(uri.to_owned()));
        }
    }
    if subject_data.subject.is_empty() {
        return Err(ModelError::EmptySubject);
    }
    let aud = match targets {
        [one] => Audience::One(one.clone()),
        many => Audience::Many(many.to_vec()),
    };
    Ok(IdentityShareClaims {
        iss: issuer.to_owned(),
        aud,
        iat: now,
        exp: now + ttl,
        sdata: Sdata::Plain(subject_data.to_map()),
    })
}

/// Ok iff `iat <= now + skew` and `exp > now - skew`. Errors are limited to
/// [`JoseError::Expired`] and [`JoseError::NotYetValid`].
pub fn validate_temporal(
    claims: &IdentityShareClaims,
    now: i64,
    skew: i64,
) -> Result<(), JoseError> {
    check_time_bounds(Some(claims.iat), Some(claims.exp), now, skew)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    InvalidClient,
    InvalidGrant,
    UnsupportedGrantType,
    UnsupportedResponseType,
    InvalidScope,
    InvalidGrantToken,
    ServerError,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::InvalidClient => "invalid_client",
            ErrorCode::InvalidGrant => "invalid_grant",
            ErrorCode::UnsupportedGrantType => "unsupported_grant_type",
            ErrorCode::UnsupportedResponseType => "unsupported_response_type",
            ErrorCode::InvalidScope => "invalid_scope",
            ErrorCode::InvalidGrantToken => "invalid_grant_token",
            ErrorCode::ServerError => "server_error",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{error}{}", error_description.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
pub struct OAuthError {
    pub error: ErrorCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_description: Option<String>,
}

impl OAuthError {
    pub fn new(error: ErrorCode) -> Self {
        Self {
            error,
            error_description: None,
        }
    }

    pub fn with_description(error: ErrorCode, description: impl Into<String>) -> Self {
        Self {
            error,
            error_description: Some(description.into()),
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.error {
            ErrorCode::InvalidClient => 401,
            ErrorCode::ServerError => 500,
            _ => 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub expires_in: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_share_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

impl TokenResponse {
    pub fn bearer(access_token: String, expires_in: i64) -> Self {
        Self {
            access_token,
            token_type: "Bearer".into(),
            expires_in,
            refresh_token: None,
            id_token: None,
            identity_share_token: None,
            scope: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationCodeRecord {
    pub code: String,
    pub client_id: String,
    pub redirect_uri: String,
    pub scope: Scope,
    pub subject: String,
    pub nonce: Option<String>,
    pub identity_share_target: Option<String>,
    pub issued_at: i64,
    pub ttl: i64,
    pub redeemed: bool,
}

impl AuthorizationCodeRecord {
    pub fn is_expired(&self, now: i64) -> bool {
        now > self.issued_at + self.ttl
    }
}

/// How an access token came to exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum TokenOrigin {
    LocalLogin,
    IdentityShareGrant { origin_issuer: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTokenRecord {
    pub token: String,
    pub subject: String,
    pub client_id: String,
    pub scope: Scope,
    pub issuer: String,
    pub issued_at: i64,
    pub expires_at: i64,
    #[serde(flatten)]
    pub origin: TokenOrigin,
}

impl AccessTokenRecord {
    pub fn is_active(&self, now: i64) -> bool {
        now < self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshTokenRecord {
    pub token: String,
    pub subject: String,
    pub client_id: String,
    pub scope: Scope,
    pub issued_at: i64,
    pub expires_at: i64,
    #[serde(flatten)]
    pub origin: TokenOrigin,
}

/// Parsed token endpoint request. Unknown parameters are kept in `extra`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenRequest {
    pub grant_type: Option<String>,
    pub shared_token: Option<String>,
    pub code: Option<String>,
    pub redirect_uri: Option<String>,
    pub client_id: Option<String>,
    pub client_secret: Option<String>,
    pub refresh_token: Option<String>,
    pub scope: Option<String>,
    pub extra: BTreeMap<String, String>,
}

/// Unreserved characters stay literal, everything else is percent-encoded.
const FORM_VALUE: &percent_encoding::AsciiSet = &percent_encoding::NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

/// Encodes one name or value for a form body or query string.
pub fn form_encode(raw: &str) -> String {
    percent_encoding::utf8_percent_encode(raw, FORM_VALUE).to_string()
}

/// Builds `application/x-www-form-urlencoded` data from pairs.
pub fn encode_form<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    pairs
        .into_iter()
        .map(|(k, v)| format!("{}={}", form_encode(k), form_encode(v)))
        .collect::<Vec<_>>()
        .join("&")
}

/// Decodes one form component (`+` is a space).
pub fn form_decode(raw: &str) -> Result<String, OAuthError> {
    let spaced = raw.replace('+', " ");
    percent_encoding::percent_decode_str(&spaced)
        .decode_utf8()
        .map(|c| c.into_owned())
        .map_err(|_| {
            OAuthError::with_description(ErrorCode::InvalidRequest, "parameter is not valid UTF-8")
        })
}

/// Decodes `application/x-www-form-urlencoded` data (also used for query
/// strings). Any parameter given twice is an `invalid_request`.
pub fn parse_form(body: &str) -> Result<BTreeMap<String, String>, OAuthError> {
    let mut out = BTreeMap::new();
    for pair in body.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        let k = form_decode(k)?;
        let v = form_decode(v)?;
        if out.contains_key(&k) {
            return Err(OAuthError::with_description(
                ErrorCode::InvalidRequest,
                format!("duplicate parameter `{k}`"),
            ));
        }
        out.insert(k, v);
    }
    Ok(out)
}

pub fn parse_token_request(body: &str) -> Result<TokenRequest, OAuthError> {
    let mut params = parse_form(body)?;
    let mut take = |k: &str| params.remove(k);
    Ok(TokenRequest {
        grant_type: take("grant_type"),
        shared_token: take("shared_token"),
        code: take("code"),
        redirect_uri: take("redirect_uri"),
        client_id: take("client_id"),
        client_secret: take("client_secret"),
        refresh_token: take("refresh_token"),
        scope: take("scope"),
        extra: params,
    })
}
