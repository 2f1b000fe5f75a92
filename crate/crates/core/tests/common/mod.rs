#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use fedgrant_core::config::IdpConfig;
use fedgrant_core::jwt::{b64url_encode, KeyMaterial};
use fedgrant_core::registry::{Registry, ScimSettings};
use fedgrant_core::share_grant::{ScimFetcher, ScimUnavailable};
use fedgrant_core::token::TokenRequest;
use serde_json::{json, Map, Value};

pub const A: &str = "https://Domain_A/idp";
pub const B: &str = "https://Domain_B/idp";
pub const C: &str = "https://Domain_C/idp";

pub const PEM_A: &str = include_str!("../fixtures/test_rs256.pem");
pub const PEM_B: &str = include_str!("../fixtures/test_rs256_b.pem");

pub const CLIENT_A: &str = "jdf0Plm_op";
pub const SECRET_A: &str = "sEcr3t-for-domain-a";
pub const CLIENT_B: &str = "8UyfGho2pLqCmNb";
pub const SECRET_B: &str = "uTbC67PqAmbrS1Mx9j2";
pub const REDIRECT: &str = "http://sample.com/redirect/";

pub const SHARED_SECRET: [u8; 32] = [0x5a; 32];
pub const SEAL_KEY: [u8; 32] = [0x3c; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Hs256,
    Rs256,
}

#[derive(Debug, Clone)]
pub struct LinkOpts {
    pub link: Link,
    pub sealed: bool,
    pub scim: bool,
    pub mandatory: Option<Vec<&'static str>>,
}

impl Default for LinkOpts {
    fn default() -> Self {
        Self {
            link: Link::Hs256,
            sealed: false,
            scim: false,
            mandatory: None,
        }
    }
}

pub fn public_jwk(pem: &str) -> Value {
    KeyMaterial::rsa_private_pem(pem)
        .unwrap()
        .public_jwk()
        .unwrap()
}

/// Trust entry for `peer` as seen from the other side of the link.
pub fn peer_entry(peer: &str, peer_pem: &str, opts: &LinkOpts) -> Value {
    let mut e = json!({
        "issuer": peer,
        "verification_key": match opts.link {
            Link::Hs256 => json!({"hs256_secret": b64url_encode(SHARED_SECRET)}),
            Link::Rs256 => json!({"rs256_jwk": public_jwk(peer_pem)}),
        },
        "sdata": if opts.sealed {
            json!({"mode": "sealed", "key": b64url_encode(SEAL_KEY)})
        } else {
            json!({"mode": "plain"})
        },
    });
    if let Some(m) = &opts.mandatory {
        e["mandatory_claims"] = json!(m);
    }
    if opts.scim {
        e["scim"] = json!({"base_url": "http://domain-a.test/scim", "client_id": "b-scim", "client_secret": "scim-secret"});
    }
    e
}

pub fn config_a(opts: &LinkOpts) -> Value {
    json!({
        "issuer": A,
        "signing_keys": {"rs256_private_pem": PEM_A, "kid": "a-1"},
        "trusted_issuers": [peer_entry(B, PEM_B, opts)],
        "clients": [{
            "client_id": CLIENT_A,
            "client_secret": SECRET_A,
            "redirect_uris": [REDIRECT],
            "grant_types": ["authorization_code", "refresh_token"],
            "scopes": ["openid", "identity_share"]
        }],
        "users": [
            {"username": "alice", "password": "wonderland", "subject": "user1", "email": "sample@sample.com",
             "claims": {"age": 30}}
        ]
    })
}

pub fn config_b(opts: &LinkOpts) -> Value {
    json!({
        "issuer": B,
        "signing_keys": {"rs256_private_pem": PEM_B, "kid": "b-1"},
        "trusted_issuers": [peer_entry(A, PEM_A, opts)],
        "clients": [{
            "client_id": CLIENT_B,
            "client_secret": SECRET_B,
            "redirect_uris": [REDIRECT],
            "grant_types": ["identity_share_token", "refresh_token"],
            "scopes": ["openid"]
        }]
    })
}

pub fn registry(cfg: Value) -> Registry {
    let cfg: IdpConfig = serde_json::from_value(cfg).unwrap();
    Registry::from_config(cfg, Path::new(".")).unwrap()
}

pub fn pair(opts: &LinkOpts) -> (Registry, Registry) {
    (registry(config_a(opts)), registry(config_b(opts)))
}

pub fn grant_request(shared_token: Option<&str>) -> TokenRequest {
    TokenRequest {
        grant_type: Some("identity_share_token".into()),
        shared_token: shared_token.map(str::to_owned),
        client_id: Some(CLIENT_B.into()),
        client_secret: Some(SECRET_B.into()),
        ..TokenRequest::default()
    }
}

/// In-memory SCIM peer.
#[derive(Debug, Default)]
pub struct MapScim {
    pub users: HashMap<String, Map<String, Value>>,
    pub down: bool,
}

impl MapScim {
    pub fn with_user(subject: &str, email: &str) -> Self {
        let mut users = HashMap::new();
        let rec = json!({"subject": subject, "email": email});
        users.insert(subject.to_owned(), rec.as_object().unwrap().clone());
        Self { users, down: false }
    }

    pub fn down() -> Self {
        Self {
            users: HashMap::new(),
            down: true,
        }
    }
}

impl ScimFetcher for MapScim {
    async fn fetch_user(
        &self,
        _: &ScimSettings,
        subject: &str,
    ) -> Result<Option<Map<String, Value>>, ScimUnavailable> {
        if self.down {
            return Err(ScimUnavailable("connection refused".into()));
        }
        Ok(self.users.get(subject).cloned())
    }
}

pub fn block_on<F: std::future::Future>(f: F) -> F::Output {
    futures::executor::block_on(f)
}
