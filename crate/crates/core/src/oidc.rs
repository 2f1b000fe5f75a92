//! Authorization-code flow with the `identity_share` scope and the
//! `identity_share_target` request parameter.
//!
//! Only the code flow is wired up. Share-token minting lives in
//! [`crate::share_grant`] and takes nothing flow-specific, so an implicit or
//! hybrid response could call it the same way [`redeem_authorization_code`]
//! does.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::JoseError;
use crate::jwt::{encode_jwt, JoseHeader, KeyMaterial};
use crate::registry::{ClientRegistration, CodeError, RefreshError, Registry};
use crate::share_grant::{issue_identity_share_token, share_audience};
use crate::token::{
    form_encode, generate_opaque_token, parse_form, AuthorizationCodeRecord, ErrorCode, OAuthError,
    Scope, TokenOrigin, TokenRequest, TokenResponse, GRANT_AUTHORIZATION_CODE, GRANT_REFRESH_TOKEN,
    SCOPE_IDENTITY_SHARE, SCOPE_OPENID,
};

/// Query parameters of an authorization request, as received.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationRequest {
    pub response_type: Option<String>,
    pub client_id: Option<String>,
    pub redirect_uri: Option<String>,
    pub scope: Option<String>,
    pub state: Option<String>,
    pub nonce: Option<String>,
    pub identity_share_target: Option<String>,
}

impl AuthorizationRequest {
    pub fn from_query(query: &str) -> Result<Self, OAuthError> {
        Ok(Self::from_params(parse_form(query)?))
    }

    pub fn from_params(mut p: BTreeMap<String, String>) -> Self {
        Self {
            response_type: p.remove("response_type"),
            client_id: p.remove("client_id"),
            redirect_uri: p.remove("redirect_uri"),
            scope: p.remove("scope"),
            state: p.remove("state"),
            nonce: p.remove("nonce"),
            identity_share_target: p.remove("identity_share_target"),
        }
    }
}

/// A request that passed every check and only waits for the end user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedAuthorization {
    pub client_id: String,
    pub redirect_uri: String,
    pub scope: Scope,
    pub state: Option<String>,
    pub nonce: Option<String>,
    pub identity_share_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthorizationResponse {
    Code {
        redirect_uri: String,
        code: String,
        state: Option<String>,
    },
    ErrorRedirect {
        redirect_uri: String,
        error: OAuthError,
        state: Option<String>,
    },
    /// Client or redirect URI could not be trusted; shown to the user agent
    /// instead of redirecting.
    Direct(OAuthError),
}

fn append_query(base: &str, params: &[(&str, &str)]) -> String {
    let mut out = base.to_owned();
    let mut sep = if base.contains('?') { '&' } else { '?' };
    for (k, v) in params {
        out.push(sep);
        out.push_str(k);
        out.push('=');
        out.push_str(&form_encode(v));
        sep = '&';
    }
    out
}

impl AuthorizationResponse {
    /// Redirect target with the response parameters, `None` for direct errors.
    pub fn location(&self) -> Option<String> {
        match self {
            AuthorizationResponse::Code {
                redirect_uri,
                code,
                state,
            } => {
                let mut params = vec![("code", code.as_str())];
                if let Some(s) = state {
                    params.push(("state", s));
                }
                Some(append_query(redirect_uri, &params))
            }
            AuthorizationResponse::ErrorRedirect {
                redirect_uri,
                error,
                state,
            } => {
                let mut params = vec![("error", error.error.as_str())];
                if let Some(d) = &error.error_description {
                    params.push(("error_description", d));
                }
                if let Some(s) = state {
                    params.push(("state", s));
                }
                Some(append_query(redirect_uri, &params))
            }
            AuthorizationResponse::Direct(_) => None,
        }
    }
}

/// All checks that do not need the end user, in order: client, redirect URI
/// (both answered directly), response type, scope, share target (redirected).
pub fn validate_authorization_request(
    req: &AuthorizationRequest,
    registry: &Registry,
) -> Result<ValidatedAuthorization, AuthorizationResponse> {
    let direct =
        |code, msg: &str| AuthorizationResponse::Direct(OAuthError::with_description(code, msg));
    let client: &ClientRegistration = req
        .client_id
        .as_deref()
        .and_then(|id| registry.client(id))
        .ok_or_else(|| direct(ErrorCode::InvalidClient, "unknown client_id"))?;
    let redirect_uri = req
        .redirect_uri
        .as_deref()
        .filter(|u| client.has_redirect_uri(u))
        .ok_or_else(|| {
            direct(
                ErrorCode::InvalidRequest,
                "redirect_uri is not registered for this client",
            )
        })?;

    let redirect = |code, msg: String| AuthorizationResponse::ErrorRedirect {
        redirect_uri: redirect_uri.to_owned(),
        error: OAuthError::with_description(code, msg),
        state: req.state.clone(),
    };

    match req.response_type.as_deref() {
        Some("code") => {}
        None => {
            return Err(redirect(
                ErrorCode::InvalidRequest,
                "response_type is required".into(),
            ))
        }
        Some(other) => {
            return Err(redirect(
                ErrorCode::UnsupportedResponseType,
                format!("response_type `{other}` is not supported"),
            ))
        }
    }

    let scope: Scope = req
        .scope
        .as_deref()
        .unwrap_or("")
        .parse()
        .unwrap_or_default();
    if !scope.contains(SCOPE_OPENID) {
        return Err(redirect(
            ErrorCode::InvalidScope,
            "scope must include openid".into(),
        ));
    }
    if !scope.is_subset(&client.allowed_scopes) {
        return Err(redirect(
            ErrorCode::InvalidScope,
            "scope exceeds what the client may request".into(),
        ));
    }

    let mut target = None;
    if scope.contains(SCOPE_IDENTITY_SHARE) {
        if let Some(t) = req.identity_share_target.as_deref() {
            if registry.lookup_issuer(t).is_none() || !client.may_target(t) {
                return Err(redirect(
                    ErrorCode::InvalidRequest,
                    format!("identity_share_target `{t}` is not a trusted identity provider"),
                ));
            }
            target = Some(t.to_owned());
        } else if share_audience(registry, None, Some(client)).is_err() {
            return Err(redirect(
                ErrorCode::InvalidRequest,
                "no identity share target available".into(),
            ));
        }
    }

    Ok(ValidatedAuthorization {
        client_id: client.client_id.clone(),
        redirect_uri: redirect_uri.to_owned(),
        scope,
        state: req.state.clone(),
        nonce: req.nonce.clone(),
        identity_share_target: target,
    })
}

/// Mints the single-use code for an authenticated subject.
pub fn complete_authorization(
    validated: &ValidatedAuthorization,
    subject: &str,
    registry: &Registry,
    now: i64,
) -> AuthorizationResponse {
    let code = generate_opaque_token();
    registry.insert_code(AuthorizationCodeRecord {
        code: code.clone(),
        client_id: validated.client_id.clone(),
        redirect_uri: validated.redirect_uri.clone(),
        scope: validated.scope.clone(),
        subject: subject.to_owned(),
        nonce: validated.nonce.clone(),
        identity_share_target: validated.identity_share_target.clone(),
        issued_at: now,
        ttl: registry.policy().code_ttl,
        redeemed: false,
    });
    AuthorizationResponse::Code {
        redirect_uri: validated.redirect_uri.clone(),
        code,
        state: validated.state.clone(),
    }
}

pub fn handle_authorization_request(
    req: &AuthorizationRequest,
    registry: &Registry,
    authenticated_subject: &str,
    now: i64,
) -> AuthorizationResponse {
    match validate_authorization_request(req, registry) {
        Ok(v) => complete_authorization(&v, authenticated_subject, registry, now),
        Err(resp) => resp,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdTokenClaims {
    pub iss: String,
    pub sub: String,
    pub aud: String,
    pub iat: i64,
    pub exp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<String>,
}

pub fn issue_id_token(
    issuer: &str,
    subject: &str,
    client_id: &str,
    nonce: Option<&str>,
    now: i64,
    ttl: i64,
    signing_key: &KeyMaterial,
) -> Result<String, JoseError> {
    let claims = IdTokenClaims {
        iss: issuer.to_owned(),
        sub: subject.to_owned(),
        aud: client_id.to_owned(),
        iat: now,
        exp: now + ttl,
        nonce: nonce.map(str::to_owned),
    };
    let Value::Object(map) = serde_json::to_value(&claims).expect("claims serialize") else {
        unreachable!()
    };
    encode_jwt(&map, &JoseHeader::for_key(signing_key)?, signing_key)
}

fn authenticate<'r>(
    req: &TokenRequest,
    registry: &'r Registry,
) -> Result<&'r ClientRegistration, OAuthError> {
    let (Some(id), Some(secret)) = (req.client_id.as_deref(), req.client_secret.as_deref()) else {
        return Err(OAuthError::with_description(
            ErrorCode::InvalidClient,
            "client credentials missing",
        ));
    };
    registry.authenticate_client(id, secret).map_err(|_| {
        OAuthError::with_description(ErrorCode::InvalidClient, "client authentication failed")
    })
}

fn server_error(msg: impl std::fmt::Display) -> OAuthError {
    tracing::error!("token endpoint: {msg}");
    OAuthError::new(ErrorCode::ServerError)
}

/// Token endpoint, `grant_type=authorization_code`.
pub fn redeem_authorization_code(
    req: &TokenRequest,
    registry: &Registry,
    now: i64,
) -> Result<TokenResponse, OAuthError> {
    let client = authenticate(req, registry)?;
    if !client.allows_grant(GRANT_AUTHORIZATION_CODE) {
        return Err(OAuthError::with_description(
            ErrorCode::UnsupportedGrantType,
            "grant type not allowed for this client",
        ));
    }
    let code = req.code.as_deref().ok_or_else(|| {
        OAuthError::with_description(ErrorCode::InvalidRequest, "code is required")
    })?;
    let record = registry
        .redeem_code(code, &client.client_id, req.redirect_uri.as_deref(), now)
        .map_err(|e: CodeError| {
            OAuthError::with_description(ErrorCode::InvalidGrant, e.to_string())
        })?;

    let user = registry
        .local_user_by_subject(&record.subject)
        .ok_or_else(|| server_error(format!("subject {} vanished", record.subject)))?;

    let access = registry.issue_access_token(
        &record.subject,
        &client.client_id,
        record.scope.clone(),
        TokenOrigin::LocalLogin,
        now,
    );
    let mut response = TokenResponse::bearer(access.token.clone(), access.expires_at - now);
    response.scope = Some(record.scope.to_string());

    if record.scope.contains(SCOPE_OPENID) {
        let id_token = issue_id_token(
            registry.issuer(),
            &record.subject,
            &client.client_id,
            record.nonce.as_deref(),
            now,
            registry.policy().id_token_ttl,
            registry.signing_key(),
        )
        .map_err(server_error)?;
        response.id_token = Some(id_token);
    }

    if record.scope.contains(SCOPE_IDENTITY_SHARE) {
        let audience = share_audience(
            registry,
            record.identity_share_target.as_deref(),
            Some(client),
        )
        .map_err(server_error)?;
        let token = issue_identity_share_token(&user.claims, &audience, registry, now)
            .map_err(server_error)?;
        response.identity_share_token = Some(token);
    }

    if registry.policy().issue_refresh_tokens && client.allows_grant(GRANT_REFRESH_TOKEN) {
        response.refresh_token = Some(registry.issue_refresh_token(&access, now).token);
    }
    Ok(response)
}

/// Token endpoint, `grant_type=refresh_token`. The presented refresh token is
/// consumed and a new pair issued with the same scope and origin. A refresh
/// never yields an id_token or identity-share token.
pub fn refresh_access_token(
    req: &TokenRequest,
    registry: &Registry,
    now: i64,
) -> Result<TokenResponse, OAuthError> {
    let client = authenticate(req, registry)?;
    if !client.allows_grant(GRANT_REFRESH_TOKEN) {
        return Err(OAuthError::with_description(
            ErrorCode::UnsupportedGrantType,
            "grant type not allowed for this client",
        ));
    }
    let presented = req.refresh_token.as_deref().ok_or_else(|| {
        OAuthError::with_description(ErrorCode::InvalidRequest, "refresh_token is required")
    })?;
    let old = registry
        .take_refresh_token(presented, &client.client_id, now)
        .map_err(|e: RefreshError| {
            OAuthError::with_description(ErrorCode::InvalidGrant, e.to_string())
        })?;
    let access = registry.issue_access_token(
        &old.subject,
        &old.client_id,
        old.scope.clone(),
        old.origin,
        now,
    );
    let mut response = TokenResponse::bearer(access.token.clone(), access.expires_at - now);
    if !access.scope.is_empty() {
        response.scope = Some(access.scope.to_string());
    }
    response.refresh_token = Some(registry.issue_refresh_token(&access, now).token);
    Ok(response)
}
