//! Protected resource that trusts exactly one IdP, checking every bearer
//! token through that IdP's introspection endpoint.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use fedgrant_core::clock::SharedClock;
use fedgrant_core::token::encode_form;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::http::{basic_header, method_not_allowed, not_found, ServiceHandle};

const CACHE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    pub introspection_url: String,
    pub client_id: String,
    pub client_secret: String,
    pub label: String,
    #[serde(default = "default_timeout_ms")]
    pub introspection_timeout_ms: u64,
    #[serde(default = "default_cache_ttl")]
    pub cache_ttl: i64,
}

fn default_timeout_ms() -> u64 {
    3000
}

fn default_cache_ttl() -> i64 {
    10
}

#[derive(Debug, Clone, Deserialize)]
struct Introspection {
    active: bool,
    #[serde(default)]
    sub: Option<String>,
    #[serde(default)]
    iss: Option<String>,
    #[serde(default)]
    exp: Option<i64>,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    until: i64,
    sub: String,
    iss: String,
}

pub struct ResourceState {
    config: ResourceConfig,
    http: reqwest::Client,
    clock: SharedClock,
    cache: Mutex<HashMap<String, CacheEntry>>,
}

impl ResourceState {
    pub fn new(config: ResourceConfig, clock: SharedClock) -> Arc<Self> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.introspection_timeout_ms))
            .build()
            .expect("reqwest client with default TLS-less config");
        Arc::new(Self {
            config,
            http,
            clock,
            cache: Mutex::default(),
        })
    }

    pub fn config(&self) -> &ResourceConfig {
        &self.config
    }

    fn cached(&self, token: &str, now: i64) -> Option<CacheEntry> {
        self.cache
            .lock()
            .get(token)
            .filter(|e| e.until > now)
            .cloned()
    }

    fn remember(&self, token: &str, entry: CacheEntry, now: i64) {
        let mut cache = self.cache.lock();
        if cache.len() >= CACHE_CAPACITY {
            cache.retain(|_, e| e.until > now);
            if cache.len() >= CACHE_CAPACITY {
                cache.clear();
            }
        }
        cache.insert(token.to_owned(), entry);
    }

    async fn introspect(&self, token: &str) -> Result<Introspection, String> {
        let resp = self
            .http
            .post(&self.config.introspection_url)
            .header(
                header::AUTHORIZATION.as_str(),
                basic_header(&self.config.client_id, &self.config.client_secret),
            )
            .header(
                header::CONTENT_TYPE.as_str(),
                "application/x-www-form-urlencoded",
            )
            .body(encode_form([("token", token)]))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("introspection answered {}", resp.status()));
        }
        resp.json::<Introspection>()
            .await
            .map_err(|e| e.to_string())
    }
}

pub fn router(state: Arc<ResourceState>) -> Router {
    Router::new()
        .route("/resource", get(resource))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

pub fn spawn(state: Arc<ResourceState>, listener: TcpListener) -> std::io::Result<ServiceHandle> {
    let addr = listener.local_addr()?;
    tracing::info!(label = %state.config.label, %addr, "resource server listening");
    ServiceHandle::spawn(listener, router(state))
}

fn challenge(status: StatusCode, label: &str, error: &str, description: &str) -> Response {
    let mut resp = (
        status,
        Json(json!({"error": error, "error_description": description})),
    )
        .into_response();
    let value = format!("Bearer realm=\"{label}\", error=\"{error}\"");
    if let Ok(v) = HeaderValue::from_str(&value) {
        resp.headers_mut().insert(header::WWW_AUTHENTICATE, v);
    }
    resp
}

/// RFC 6750 `b64token`.
fn bearer_token(headers: &HeaderMap) -> Option<&str> {
    let raw = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = raw.split_once(' ')?;
    let token = token.trim();
    let ok = scheme.eq_ignore_ascii_case("bearer")
        && !token.is_empty()
        && token
            .trim_end_matches('=')
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"-._~+/".contains(&b));
    ok.then_some(token)
}

async fn resource(State(state): State<Arc<ResourceState>>, headers: HeaderMap) -> Response {
    let label = state.config.label.as_str();
    let Some(token) = bearer_token(&headers) else {
        return challenge(
            StatusCode::UNAUTHORIZED,
            label,
            "invalid_request",
            "bearer token required",
        );
    };
    let now = state.clock.now();
    let entry = match state.cached(token, now) {
        Some(e) => e,
        None => match state.introspect(token).await {
            Err(e) => {
                tracing::warn!(label, "introspection failed: {e}");
                return challenge(
                    StatusCode::SERVICE_UNAVAILABLE,
                    label,
                    "temporarily_unavailable",
                    "token introspection unavailable",
                );
            }
            Ok(i) if i.active && i.exp.is_none_or(|exp| exp > now) => {
                let until = (now + state.config.cache_ttl).min(i.exp.unwrap_or(i64::MAX));
                let entry = CacheEntry {
                    until,
                    sub: i.sub.unwrap_or_default(),
                    iss: i.iss.unwrap_or_default(),
                };
                state.remember(token, entry.clone(), now);
                entry
            }
            Ok(_) => {
                return challenge(
                    StatusCode::UNAUTHORIZED,
                    label,
                    "invalid_token",
                    "token is not active",
                );
            }
        },
    };
    Json(json!({"resource": label, "sub": entry.sub, "iss": entry.iss})).into_response()
}
