//! Fixtures shared by the benchmarks: a linked pair of IdP registries.

use std::path::Path;

use fedgrant_core::config::IdpConfig;
use fedgrant_core::jwt::{b64url_encode, KeyMaterial};
use fedgrant_core::registry::Registry;
use fedgrant_core::token::{SubjectData, TokenRequest};
use serde_json::{json, Value};

pub const ISSUER_A: &str = "https://Domain_A/idp";
pub const ISSUER_B: &str = "https://Domain_B/idp";
pub const CLIENT_B: &str = "8UyfGho2pLqCmNb";
pub const SECRET_B: &str = "uTbC67PqAmbrS1Mx9j2";
pub const NOW: i64 = 1_700_000_000;

pub const PEM_A: &str = include_str!("../../cli/demo/domain_a_rs256.pem");
pub const PEM_B: &str = include_str!("../../cli/demo/domain_b_rs256.pem");

#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub hs256: bool,
    pub sealed: bool,
}

impl Link {
    pub const ALL: [Link; 4] = [
        Link {
            hs256: true,
            sealed: false,
        },
        Link {
            hs256: true,
            sealed: true,
        },
        Link {
            hs256: false,
            sealed: false,
        },
        Link {
            hs256: false,
            sealed: true,
        },
    ];

    pub fn label(self) -> &'static str {
        match (self.hs256, self.sealed) {
            (true, false) => "hs256/plain",
            (true, true) => "hs256/sealed",
            (false, false) => "rs256/plain",
            (false, true) => "rs256/sealed",
        }
    }
}

fn peer_entry(peer: &str, peer_pem: &str, link: Link) -> Value {
    let key = if link.hs256 {
        json!({"hs256_secret": b64url_encode([0x5a; 32])})
    } else {
        json!({"rs256_jwk": KeyMaterial::rsa_private_pem(peer_pem).unwrap().public_jwk().unwrap()})
    };
    let sdata = if link.sealed {
        json!({"mode": "sealed", "key": b64url_encode([0x3c; 32])})
    } else {
        json!({"mode": "plain"})
    };
    json!({"issuer": peer, "verification_key": key, "sdata": sdata})
}

fn registry(cfg: Value) -> Registry {
    let cfg: IdpConfig = serde_json::from_value(cfg).expect("fixture config");
    Registry::from_config(cfg, Path::new(".")).expect("fixture registry")
}

/// Domain A (issuer) and domain B (validator) linked as described by `link`.
pub fn pair(link: Link) -> (Registry, Registry) {
    let a = registry(json!({
        "issuer": ISSUER_A,
        "signing_keys": {"rs256_private_pem": PEM_A, "kid": "a-1"},
        "trusted_issuers": [peer_entry(ISSUER_B, PEM_B, link)],
    }));
    let b = registry(json!({
        "issuer": ISSUER_B,
        "signing_keys": {"rs256_private_pem": PEM_B, "kid": "b-1"},
        "trusted_issuers": [peer_entry(ISSUER_A, PEM_A, link)],
        "clients": [{
            "client_id": CLIENT_B,
            "client_secret": SECRET_B,
            "grant_types": ["identity_share_token"],
            "scopes": ["openid"]
        }]
    }));
    (a, b)
}

pub fn subject() -> SubjectData {
    SubjectData::new("user1", "sample@sample.com")
}

pub fn grant_request(shared_token: &str) -> TokenRequest {
    TokenRequest {
        grant_type: Some("identity_share_token".into()),
        shared_token: Some(shared_token.to_owned()),
        client_id: Some(CLIENT_B.into()),
        client_secret: Some(SECRET_B.into()),
        ..TokenRequest::default()
    }
}
