mod common;

use std::sync::Arc;

use common::*;
use fedgrant_core::jwt::{decode_unverified, verify_and_decode, KeyMaterial};
use fedgrant_core::oidc::{
    handle_authorization_request, redeem_authorization_code, refresh_access_token,
    AuthorizationRequest, AuthorizationResponse,
};
use fedgrant_core::registry::Registry;
use fedgrant_core::share_grant::{validate_share_grant, NoScim};
use fedgrant_core::token::{parse_form, ErrorCode, TokenRequest};
use serde_json::json;

const FIG5_TARGET: &str = "http://Domain_B.com/idp";

const FIG5_QUERY: &str = "response_type=code\
&client_id=jdf0Plm_op\
&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F\
&scope=openid%20identity_share\
&identity_share_target=http%3A%2F%2FDomain_B.com/idp\
&state=pTl987HmQ\
&nonce=12_90oPls";

/// Domain A trusting B under the identifier used in the example request.
fn fig5_pair() -> (Registry, Registry) {
    let opts = LinkOpts::default();
    let mut a = config_a(&opts);
    a["trusted_issuers"][0]["issuer"] = json!(FIG5_TARGET);
    let mut b = config_b(&opts);
    b["issuer"] = json!(FIG5_TARGET);
    (registry(a), registry(b))
}

fn code_of(resp: &AuthorizationResponse) -> String {
    match resp {
        AuthorizationResponse::Code { code, .. } => code.clone(),
        other => panic!("{other:?}"),
    }
}

fn redeem_req(code: &str) -> TokenRequest {
    TokenRequest {
        grant_type: Some("authorization_code".into()),
        code: Some(code.into()),
        redirect_uri: Some(REDIRECT.into()),
        client_id: Some(CLIENT_A.into()),
        client_secret: Some(SECRET_A.into()),
        ..TokenRequest::default()
    }
}

fn redirect_error(resp: &AuthorizationResponse) -> ErrorCode {
    match resp {
        AuthorizationResponse::ErrorRedirect { error, .. } => error.error,
        other => panic!("{other:?}"),
    }
}

#[test]
fn example_request_yields_code_and_state() {
    let (a, _) = fig5_pair();
    let req = AuthorizationRequest::from_query(FIG5_QUERY).unwrap();
    assert_eq!(req.identity_share_target.as_deref(), Some(FIG5_TARGET));
    let resp = handle_authorization_request(&req, &a, "user1", 1000);
    let location = resp.location().unwrap();
    assert!(location.starts_with("http://sample.com/redirect/?code="));
    assert!(location.ends_with("&state=pTl987HmQ"));
    let params = parse_form(location.split_once('?').unwrap().1).unwrap();
    assert_eq!(params["code"], code_of(&resp));
}

#[test]
fn example_flow_end_to_end() {
    let (a, b) = fig5_pair();
    let req = AuthorizationRequest::from_query(FIG5_QUERY).unwrap();
    let code = code_of(&handle_authorization_request(&req, &a, "user1", 1000));
    let resp = redeem_authorization_code(&redeem_req(&code), &a, 1001).unwrap();
    assert_eq!(resp.token_type, "Bearer");
    assert!(!resp.access_token.is_empty());

    let id = verify_and_decode(
        resp.id_token.as_deref().unwrap(),
        &a.signing_key().to_public(),
        1001,
        0,
    )
    .unwrap();
    assert_eq!(id["iss"], A);
    assert_eq!(id["sub"], "user1");
    assert_eq!(id["aud"], CLIENT_A);
    assert_eq!(id["nonce"], "12_90oPls");
    assert_eq!(
        decode_unverified(resp.id_token.as_deref().unwrap())
            .unwrap()
            .header
            .alg,
        "RS256"
    );

    let share = resp.identity_share_token.unwrap();
    let claims = decode_unverified(&share).unwrap().claims;
    assert_eq!(claims["aud"], FIG5_TARGET);
    assert_eq!(claims["iss"], A);
    assert_eq!(
        claims["sdata"],
        json!({"subject": "user1", "email": "sample@sample.com", "age": 30})
    );

    let decision = block_on(validate_share_grant(
        &grant_request(Some(&share)),
        &b,
        &NoScim,
        1002,
    ));
    assert!(decision.is_accepted(), "{decision}");
}

#[test]
fn untrusted_target_redirects_invalid_request() {
    let (a, _) = pair(&LinkOpts::default());
    let req = AuthorizationRequest::from_query(FIG5_QUERY).unwrap();
    let resp = handle_authorization_request(&req, &a, "user1", 0);
    assert_eq!(redirect_error(&resp), ErrorCode::InvalidRequest);
    let loc = resp.location().unwrap();
    assert!(loc.starts_with(REDIRECT));
    assert!(loc.contains("error=invalid_request"));
    assert!(loc.ends_with("state=pTl987HmQ"));
}

#[test]
fn openid_only_issues_no_share_token() {
    let (a, _) = pair(&LinkOpts::default());
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    let resp = redeem_authorization_code(&redeem_req(&code), &a, 1).unwrap();
    assert!(resp.id_token.is_some());
    assert!(resp.identity_share_token.is_none());
    assert_eq!(resp.scope.as_deref(), Some("openid"));
}

#[test]
fn share_scope_without_target_addresses_the_only_peer() {
    let (a, b) = pair(&LinkOpts::default());
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid+identity_share";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    let share = redeem_authorization_code(&redeem_req(&code), &a, 1)
        .unwrap()
        .identity_share_token
        .unwrap();
    assert_eq!(decode_unverified(&share).unwrap().claims["aud"], B);
    assert!(block_on(validate_share_grant(
        &grant_request(Some(&share)),
        &b,
        &NoScim,
        2
    ))
    .is_accepted());
}

#[test]
fn authorization_error_paths() {
    let (a, _) = pair(&LinkOpts::default());
    let base = "client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&state=s1";
    let run = |q: &str| {
        handle_authorization_request(
            &AuthorizationRequest::from_query(q).unwrap(),
            &a,
            "user1",
            0,
        )
    };

    assert_eq!(
        redirect_error(&run(&format!("{base}&response_type=token&scope=openid"))),
        ErrorCode::UnsupportedResponseType
    );
    assert_eq!(
        redirect_error(&run(&format!("{base}&scope=openid"))),
        ErrorCode::InvalidRequest
    );
    assert_eq!(
        redirect_error(&run(&format!(
            "{base}&response_type=code&scope=identity_share"
        ))),
        ErrorCode::InvalidScope
    );
    assert_eq!(
        redirect_error(&run(&format!(
            "{base}&response_type=code&scope=openid+admin"
        ))),
        ErrorCode::InvalidScope
    );

    let resp = run("client_id=nobody&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&response_type=code&scope=openid");
    assert!(
        matches!(&resp, AuthorizationResponse::Direct(e) if e.error == ErrorCode::InvalidClient)
    );
    assert!(resp.location().is_none());

    let resp = run("client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fevil.example%2F&response_type=code&scope=openid");
    assert!(
        matches!(&resp, AuthorizationResponse::Direct(e) if e.error == ErrorCode::InvalidRequest)
    );
    let resp = run("client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2Fx&response_type=code&scope=openid");
    assert!(matches!(resp, AuthorizationResponse::Direct(_)));
}

#[test]
fn code_is_single_use() {
    let (a, _) = pair(&LinkOpts::default());
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    assert!(redeem_authorization_code(&redeem_req(&code), &a, 1).is_ok());
    let err = redeem_authorization_code(&redeem_req(&code), &a, 2).unwrap_err();
    assert_eq!(err.error, ErrorCode::InvalidGrant);
}

#[test]
fn code_is_bound_to_client_and_redirect() {
    let (a, _) = pair(&LinkOpts::default());
    let mut cfg = config_a(&LinkOpts::default());
    cfg["clients"].as_array_mut().unwrap().push(json!({
        "client_id": "other", "client_secret": "other-secret",
        "redirect_uris": [REDIRECT], "grant_types": ["authorization_code"]
    }));
    let a2 = registry(cfg);
    for reg in [&a, &a2] {
        let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid";
        let code = code_of(&handle_authorization_request(
            &AuthorizationRequest::from_query(q).unwrap(),
            reg,
            "user1",
            0,
        ));

        let mut wrong_redirect = redeem_req(&code);
        wrong_redirect.redirect_uri = Some("http://sample.com/other/".into());
        assert_eq!(
            redeem_authorization_code(&wrong_redirect, reg, 1)
                .unwrap_err()
                .error,
            ErrorCode::InvalidGrant
        );

        if reg.client("other").is_some() {
            let mut other = redeem_req(&code);
            other.client_id = Some("other".into());
            other.client_secret = Some("other-secret".into());
            assert_eq!(
                redeem_authorization_code(&other, reg, 1).unwrap_err().error,
                ErrorCode::InvalidGrant
            );
        }

        let mut bad_secret = redeem_req(&code);
        bad_secret.client_secret = Some("nope".into());
        assert_eq!(
            redeem_authorization_code(&bad_secret, reg, 1)
                .unwrap_err()
                .error,
            ErrorCode::InvalidClient
        );

        // Mismatches leave the code usable by its rightful owner.
        assert!(redeem_authorization_code(&redeem_req(&code), reg, 1).is_ok());
    }
}

#[test]
fn code_expires() {
    let (a, _) = pair(&LinkOpts::default());
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    assert_eq!(
        redeem_authorization_code(&redeem_req(&code), &a, 61)
            .unwrap_err()
            .error,
        ErrorCode::InvalidGrant
    );
}

#[test]
fn concurrent_redemption_succeeds_once() {
    let (a, _) = pair(&LinkOpts::default());
    let a = Arc::new(a);
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    let barrier = Arc::new(std::sync::Barrier::new(16));
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let (a, code, barrier) = (a.clone(), code.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                redeem_authorization_code(&redeem_req(&code), &a, 1).is_ok()
            })
        })
        .collect();
    let wins = handles
        .into_iter()
        .map(|h| h.join().unwrap())
        .filter(|ok| *ok)
        .count();
    assert_eq!(wins, 1);
}

#[test]
fn refresh_rotates() {
    let mut cfg = config_a(&LinkOpts::default());
    cfg["policy"] = json!({"issue_refresh_tokens": true});
    let a = registry(cfg);
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    let first = redeem_authorization_code(&redeem_req(&code), &a, 1).unwrap();
    let rt = first.refresh_token.unwrap();

    let req = TokenRequest {
        grant_type: Some("refresh_token".into()),
        refresh_token: Some(rt.clone()),
        client_id: Some(CLIENT_A.into()),
        client_secret: Some(SECRET_A.into()),
        ..TokenRequest::default()
    };
    let second = refresh_access_token(&req, &a, 10).unwrap();
    assert_ne!(second.access_token, first.access_token);
    assert_ne!(second.refresh_token.as_deref(), Some(rt.as_str()));
    assert!(second.id_token.is_none());
    assert!(a.access_token(&second.access_token).is_some());
    assert_eq!(
        refresh_access_token(&req, &a, 11).unwrap_err().error,
        ErrorCode::InvalidGrant
    );
}

#[test]
fn id_token_verifies_only_with_issuer_key() {
    let (a, b) = pair(&LinkOpts::default());
    let q = "response_type=code&client_id=jdf0Plm_op&redirect_uri=http%3A%2F%2Fsample.com%2Fredirect%2F&scope=openid&nonce=n-0";
    let code = code_of(&handle_authorization_request(
        &AuthorizationRequest::from_query(q).unwrap(),
        &a,
        "user1",
        0,
    ));
    let id = redeem_authorization_code(&redeem_req(&code), &a, 1)
        .unwrap()
        .id_token
        .unwrap();
    assert!(verify_and_decode(&id, &b.signing_key().to_public(), 1, 0).is_err());
    let jwk = a.signing_key().public_jwk().unwrap();
    let key = KeyMaterial::rsa_public_jwk(&jwk).unwrap();
    assert_eq!(verify_and_decode(&id, &key, 1, 0).unwrap()["nonce"], "n-0");
}
