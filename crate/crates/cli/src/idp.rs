//! Identity provider over HTTP.
//!
//! | route                      | purpose                                   |
//! |----------------------------|-------------------------------------------|
//! | `GET /authorize`           | validate, then show the login form        |
//! | `GET /login`, `POST /login`| end-user authentication, resumes the flow |
//! | `POST /token`              | code, identity-share and refresh grants   |
//! | `POST /introspect`         | token status for registered callers       |
//! | `GET /scim/Users/{sub}`    | local user record for peer IdPs           |
//! | `GET /jwks`                | public signing key                        |

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fedgrant_core::clock::SharedClock;
use fedgrant_core::oidc::{
    complete_authorization, redeem_authorization_code, refresh_access_token,
    validate_authorization_request, AuthorizationRequest, AuthorizationResponse,
    ValidatedAuthorization,
};
use fedgrant_core::registry::{ClientRegistration, Registry};
use fedgrant_core::share_grant::{grant_to_token_response, validate_share_grant, GrantDecision};
use fedgrant_core::token::{
    generate_opaque_token, parse_form, parse_token_request, ErrorCode, OAuthError, TokenRequest,
    TokenResponse, GRANT_AUTHORIZATION_CODE, GRANT_IDENTITY_SHARE, GRANT_REFRESH_TOKEN,
};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::http::{
    basic_credentials, form_body, method_not_allowed, no_store_json, not_found, oauth_error,
    oauth_error_with_status, ServiceHandle,
};
use crate::scim_client::HttpScim;

struct PendingLogin {
    request: ValidatedAuthorization,
    expires_at: i64,
}

pub struct IdpState {
    registry: Registry,
    clock: SharedClock,
    scim: HttpScim,
    logins: Mutex<HashMap<String, PendingLogin>>,
    scim_hits: AtomicU64,
}

impl IdpState {
    pub fn new(registry: Registry, clock: SharedClock) -> Arc<Self> {
        let scim = HttpScim::new(Duration::from_millis(registry.policy().scim_timeout_ms));
        Arc::new(Self {
            registry,
            clock,
            scim,
            logins: Mutex::default(),
            scim_hits: AtomicU64::new(0),
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// SCIM reads served to peers since start.
    pub fn scim_hits(&self) -> u64 {
        self.scim_hits.load(Ordering::Relaxed)
    }

    fn now(&self) -> i64 {
        self.clock.now()
    }

    fn new_login(&self, request: ValidatedAuthorization) -> String {
        let now = self.now();
        let handle = generate_opaque_token();
        let mut logins = self.logins.lock();
        logins.retain(|_, p| p.expires_at > now);
        logins.insert(
            handle.clone(),
            PendingLogin {
                request,
                expires_at: now + self.registry.policy().login_ttl,
            },
        );
        handle
    }

    fn peek_login(&self, handle: &str) -> Option<ValidatedAuthorization> {
        let now = self.now();
        self.logins
            .lock()
            .get(handle)
            .filter(|p| p.expires_at > now)
            .map(|p| p.request.clone())
    }

    fn take_login(&self, handle: &str) -> Option<ValidatedAuthorization> {
        let now = self.now();
        self.logins
            .lock()
            .remove(handle)
            .filter(|p| p.expires_at > now)
            .map(|p| p.request)
    }
}

/// Inactive answers serialize to exactly `{"active":false}`.
#[derive(Debug, Serialize)]
pub struct IntrospectionResponse {
    pub active: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sub: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iss: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_id: Option<String>,
}

impl IntrospectionResponse {
    fn inactive() -> Self {
        Self {
            active: false,
            sub: None,
            scope: None,
            iss: None,
            exp: None,
            client_id: None,
        }
    }
}

pub fn router(state: Arc<IdpState>) -> Router {
    Router::new()
        .route("/authorize", get(authorize))
        .route("/login", get(login_form).post(login_submit))
        .route("/token", post(token))
        .route("/introspect", post(introspect))
        .route("/scim/Users/{subject}", get(scim_user))
        .route("/jwks", get(jwks))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

pub fn spawn(state: Arc<IdpState>, listener: TcpListener) -> std::io::Result<ServiceHandle> {
    let addr = listener.local_addr()?;
    tracing::info!(issuer = state.registry.issuer(), %addr, "identity provider listening");
    ServiceHandle::spawn(listener, router(state))
}

fn redirect(location: &str) -> Response {
    let mut resp = StatusCode::FOUND.into_response();
    if let Ok(v) = location.parse() {
        resp.headers_mut().insert(header::LOCATION, v);
    }
    resp.headers_mut().insert(
        header::CACHE_CONTROL,
        header::HeaderValue::from_static("no-store"),
    );
    resp
}

fn authorization_response(resp: AuthorizationResponse) -> Response {
    match (&resp, resp.location()) {
        (AuthorizationResponse::Direct(err), _) => oauth_error(err),
        (_, Some(location)) => redirect(&location),
        (_, None) => oauth_error(&OAuthError::new(ErrorCode::ServerError)),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn login_page(handle: &str, request: &ValidatedAuthorization, notice: Option<&str>) -> Response {
    let notice = notice
        .map(|n| format!("<p class=\"notice\">{}</p>\n", escape(n)))
        .unwrap_or_default();
    let page = format!(
        "<!doctype html>\n<html><head><title>Sign in</title></head><body>\n\
         <h1>Sign in</h1>\n<p>Client <code>{client}</code> requests <code>{scope}</code>.</p>\n{notice}\
         <form method=\"post\" action=\"/login\">\n\
         <input type=\"hidden\" name=\"handle\" value=\"{handle}\">\n\
         <label>Username <input name=\"username\" autocomplete=\"username\"></label>\n\
         <label>Password <input name=\"password\" type=\"password\" autocomplete=\"current-password\"></label>\n\
         <button type=\"submit\">Sign in</button>\n</form>\n</body></html>\n",
        client = escape(&request.client_id),
        scope = escape(&request.scope.to_string()),
        handle = escape(handle),
    );
    let mut resp = Html(page).into_response();
    resp.headers_mut().insert(
        header::CACHE_CONTROL,
        header::HeaderValue::from_static("no-store"),
    );
    resp
}

fn login_expired() -> Response {
    oauth_error(&OAuthError::with_description(
        ErrorCode::InvalidRequest,
        "login session expired or already used; restart the authorization request",
    ))
}

async fn authorize(State(state): State<Arc<IdpState>>, RawQuery(query): RawQuery) -> Response {
    let req = match AuthorizationRequest::from_query(query.as_deref().unwrap_or("")) {
        Ok(r) => r,
        Err(e) => return oauth_error(&e),
    };
    match validate_authorization_request(&req, &state.registry) {
        Ok(validated) => {
            let handle = state.new_login(validated.clone());
            login_page(&handle, &validated, None)
        }
        Err(resp) => authorization_response(resp),
    }
}

async fn login_form(State(state): State<Arc<IdpState>>, RawQuery(query): RawQuery) -> Response {
    let params = match parse_form(query.as_deref().unwrap_or("")) {
        Ok(p) => p,
        Err(e) => return oauth_error(&e),
    };
    let handle = params.get("handle").map(String::as_str).unwrap_or("");
    match state.peek_login(handle) {
        Some(request) => login_page(handle, &request, None),
        None => login_expired(),
    }
}

async fn login_submit(
    State(state): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let params = match form_body(&headers, &body).and_then(|b| parse_form(&b)) {
        Ok(p) => p,
        Err(e) => return oauth_error(&e),
    };
    let field = |k: &str| params.get(k).map(String::as_str).unwrap_or("");
    let handle = field("handle");
    let Some(request) = state.peek_login(handle) else {
        return login_expired();
    };
    let Some(user) = state
        .registry
        .authenticate_user(field("username"), field("password"))
    else {
        return login_page(handle, &request, Some("Invalid username or password."));
    };
    // Two racing submissions: only the one that removes the handle proceeds.
    let Some(request) = state.take_login(handle) else {
        return login_expired();
    };
    let subject = user.subject.clone();
    authorization_response(complete_authorization(
        &request,
        &subject,
        &state.registry,
        state.now(),
    ))
}

/// Merges Basic credentials into the request. Using both Basic and body
/// credentials is refused.
fn with_client_credentials(
    mut req: TokenRequest,
    headers: &HeaderMap,
) -> Result<TokenRequest, OAuthError> {
    if let Some((id, secret)) = basic_credentials(headers)? {
        if req.client_id.is_some() || req.client_secret.is_some() {
            return Err(OAuthError::with_description(
                ErrorCode::InvalidRequest,
                "client credentials given twice",
            ));
        }
        req.client_id = Some(id);
        req.client_secret = Some(secret);
    }
    Ok(req)
}

async fn token(State(state): State<Arc<IdpState>>, headers: HeaderMap, body: Bytes) -> Response {
    match handle_token(&state, &headers, &body).await {
        Ok(resp) => no_store_json(StatusCode::OK, &resp),
        Err(e) => {
            tracing::info!(
                issuer = state.registry.issuer(),
                "token request refused: {e}"
            );
            oauth_error(&e)
        }
    }
}

async fn handle_token(
    state: &IdpState,
    headers: &HeaderMap,
    body: &[u8],
) -> Result<TokenResponse, OAuthError> {
    let body = form_body(headers, body)?;
    let req = with_client_credentials(parse_token_request(&body)?, headers)?;
    let now = state.now();
    match req.grant_type.as_deref() {
        Some(GRANT_AUTHORIZATION_CODE) => redeem_authorization_code(&req, &state.registry, now),
        Some(GRANT_REFRESH_TOKEN) => refresh_access_token(&req, &state.registry, now),
        Some(GRANT_IDENTITY_SHARE) => {
            let decision = validate_share_grant(&req, &state.registry, &state.scim, now).await;
            match &decision {
                GrantDecision::Accepted {
                    subject_data,
                    origin_issuer,
                    ..
                } => {
                    tracing::info!(subject = %subject_data.subject, origin = %origin_issuer, "identity share grant accepted");
                }
                GrantDecision::Rejected { error, .. } => return Err(error.clone()),
            }
            grant_to_token_response(&decision, &state.registry, now)
                .ok_or_else(|| OAuthError::new(ErrorCode::ServerError))
        }
        Some(other) => Err(OAuthError::with_description(
            ErrorCode::UnsupportedGrantType,
            format!("grant_type `{other}` is not supported"),
        )),
        None => Err(OAuthError::with_description(
            ErrorCode::InvalidRequest,
            "grant_type is required",
        )),
    }
}

fn authenticate_caller<'r>(
    registry: &'r Registry,
    headers: &HeaderMap,
    params: &std::collections::BTreeMap<String, String>,
) -> Result<&'r ClientRegistration, OAuthError> {
    let creds = match basic_credentials(headers)? {
        Some(c) => Some(c),
        None => match (params.get("client_id"), params.get("client_secret")) {
            (Some(id), Some(secret)) => Some((id.clone(), secret.clone())),
            _ => None,
        },
    };
    let (id, secret) = creds.ok_or_else(|| {
        OAuthError::with_description(ErrorCode::InvalidClient, "caller authentication required")
    })?;
    registry.authenticate_client(&id, &secret).map_err(|_| {
        OAuthError::with_description(ErrorCode::InvalidClient, "caller authentication failed")
    })
}

async fn introspect(
    State(state): State<Arc<IdpState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let params = match form_body(&headers, &body).and_then(|b| parse_form(&b)) {
        Ok(p) => p,
        Err(e) => return oauth_error(&e),
    };
    if let Err(e) = authenticate_caller(&state.registry, &headers, &params) {
        return oauth_error(&e);
    }
    let Some(token) = params.get("token") else {
        return oauth_error(&OAuthError::with_description(
            ErrorCode::InvalidRequest,
            "token is required",
        ));
    };
    let now = state.now();
    let resp = match state
        .registry
        .access_token(token)
        .filter(|r| r.is_active(now))
    {
        Some(rec) => IntrospectionResponse {
            active: true,
            sub: Some(rec.subject),
            scope: Some(rec.scope.to_string()),
            iss: Some(rec.issuer),
            exp: Some(rec.expires_at),
            client_id: Some(rec.client_id),
        },
        None => IntrospectionResponse::inactive(),
    };
    no_store_json(StatusCode::OK, &resp)
}

async fn scim_user(
    State(state): State<Arc<IdpState>>,
    headers: HeaderMap,
    Path(subject): Path<String>,
) -> Response {
    let creds = match basic_credentials(&headers) {
        Ok(Some(c)) => c,
        Ok(None) => {
            return oauth_error(&OAuthError::with_description(
                ErrorCode::InvalidClient,
                "caller authentication required",
            ))
        }
        Err(e) => return oauth_error(&e),
    };
    if state
        .registry
        .authenticate_client(&creds.0, &creds.1)
        .is_err()
    {
        return oauth_error(&OAuthError::with_description(
            ErrorCode::InvalidClient,
            "caller authentication failed",
        ));
    }
    state.scim_hits.fetch_add(1, Ordering::Relaxed);
    match state.registry.local_user_by_subject(&subject) {
        Some(user) => no_store_json(StatusCode::OK, &user.claims.to_map()),
        None => oauth_error_with_status(
            StatusCode::NOT_FOUND,
            ErrorCode::InvalidRequest,
            "no such user",
        ),
    }
}

async fn jwks(State(state): State<Arc<IdpState>>) -> Response {
    let keys: Vec<_> = state
        .registry
        .signing_key()
        .public_jwk()
        .into_iter()
        .collect();
    Json(json!({ "keys": keys })).into_response()
}
