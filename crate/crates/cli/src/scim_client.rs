use std::time::Duration;

use fedgrant_core::registry::ScimSettings;
use fedgrant_core::share_grant::{ScimFetcher, ScimUnavailable};
use fedgrant_core::token::form_encode;
use reqwest::StatusCode;
use serde_json::{Map, Value};

use crate::http::basic_header;

/// SCIM lookups against a peer IdP's `/scim/Users/{subject}`.
#[derive(Debug, Clone)]
pub struct HttpScim {
    client: reqwest::Client,
}

impl HttpScim {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client with default TLS-less config");
        Self { client }
    }
}

impl ScimFetcher for HttpScim {
    async fn fetch_user(
        &self,
        settings: &ScimSettings,
        subject: &str,
    ) -> Result<Option<Map<String, Value>>, ScimUnavailable> {
        let url = format!("{}/Users/{}", settings.base_url, form_encode(subject));
        let resp = self
            .client
            .get(&url)
            .header(
                reqwest::header::AUTHORIZATION,
                basic_header(&settings.client_id, &settings.client_secret),
            )
            .send()
            .await
            .map_err(|e| ScimUnavailable(e.to_string()))?;
        match resp.status() {
            StatusCode::OK => resp
                .json::<Map<String, Value>>()
                .await
                .map(Some)
                .map_err(|e| ScimUnavailable(format!("unreadable SCIM record: {e}"))),
            StatusCode::NOT_FOUND => Ok(None),
            other => Err(ScimUnavailable(format!("peer answered {other}"))),
        }
    }
}
