use fedgrant::harness::{DemoOptions, Domain, Service, Topology};
use fedgrant::resource::{self, ResourceConfig, ResourceState};
use fedgrant_core::clock::{FrozenClock, SharedClock};
use serde_json::Value;
use std::sync::Arc;
use tokio::net::TcpListener;

const T0: i64 = 1_700_000_000;

async fn frozen() -> Topology {
    Topology::boot(&DemoOptions {
        frozen_time: Some(T0),
        ..DemoOptions::default()
    })
    .await
    .unwrap()
}

async fn get(url: &str, auth: Option<&str>) -> reqwest::Response {
    let mut req = reqwest::Client::new().get(url);
    if let Some(a) = auth {
        req = req.header("authorization", a);
    }
    req.send().await.unwrap()
}

fn challenge(resp: &reqwest::Response) -> String {
    resp.headers()["www-authenticate"]
        .to_str()
        .unwrap()
        .to_owned()
}

fn config(introspection_url: String, cache_ttl: i64) -> ResourceConfig {
    ResourceConfig {
        listen: None,
        introspection_url,
        client_id: "resource-b".into(),
        client_secret: "resource-b-secret".into(),
        label: "probe".into(),
        introspection_timeout_ms: 1000,
        cache_ttl,
    }
}

#[tokio::test]
async fn missing_or_malformed_credentials() {
    let topo = frozen().await;
    let url = topo.url(Service::ResourceB, "/resource");
    for auth in [
        None,
        Some("Bearer"),
        Some("Bearer "),
        Some("Basic dXNlcjpwdw=="),
        Some("Bearer a b"),
        Some("Bearer a\"b"),
    ] {
        let resp = get(&url, auth).await;
        assert_eq!(resp.status(), 401, "{auth:?}");
        let header = challenge(&resp);
        assert!(
            header.starts_with("Bearer realm=\"domain-B-resource\""),
            "{header}"
        );
        assert!(
            header.contains("error=\"invalid_request\""),
            "{auth:?}: {header}"
        );
    }
    topo.shutdown().await;
}

#[tokio::test]
async fn inactive_token_is_invalid_token() {
    let topo = frozen().await;
    let resp = get(
        &topo.url(Service::ResourceB, "/resource"),
        Some("Bearer bm90LWEtdG9rZW4"),
    )
    .await;
    assert_eq!(resp.status(), 401);
    assert!(challenge(&resp).contains("error=\"invalid_token\""));
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "invalid_token");
    topo.shutdown().await;
}

#[tokio::test]
async fn tokens_are_bound_to_their_domain() {
    let topo = frozen().await;
    let run = topo.run_flow().await;
    assert!(run.transcript.passed(), "{}", run.transcript.to_text());
    let a_access = run.artifacts.a_tokens.unwrap().access_token;
    let b_access = run.artifacts.b_tokens.unwrap().access_token;

    let ok = topo.get_resource(Domain::A, Some(&a_access)).await.unwrap();
    assert_eq!(ok.status, 200);
    assert_eq!(ok.body["resource"], "domain-A-resource");
    assert_eq!(ok.body["sub"], "user1");
    assert_eq!(
        topo.get_resource(Domain::B, Some(&a_access))
            .await
            .unwrap()
            .status,
        401
    );
    assert_eq!(
        topo.get_resource(Domain::A, Some(&b_access))
            .await
            .unwrap()
            .status,
        401
    );
    topo.shutdown().await;
}

#[tokio::test]
async fn introspection_outage_is_503() {
    let dead = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let dead_addr = dead.local_addr().unwrap();
    drop(dead);
    let clock: SharedClock = Arc::new(FrozenClock::new(T0));
    let state = ResourceState::new(config(format!("http://{dead_addr}/introspect"), 10), clock);
    let handle = resource::spawn(state, TcpListener::bind("127.0.0.1:0").await.unwrap()).unwrap();
    let resp = get(&handle.url("/resource"), Some("Bearer abc")).await;
    assert_eq!(resp.status(), 503);
    assert!(challenge(&resp).contains("error=\"temporarily_unavailable\""));
    handle.shutdown().await;
}

#[tokio::test]
async fn cache_never_outlives_token_expiry() {
    let topo = frozen().await;
    let run = topo.run_flow().await;
    let tokens = run.artifacts.b_tokens.unwrap();
    let state = ResourceState::new(
        config(topo.url(Service::IdpB, "/introspect"), 1_000_000),
        topo.clock(),
    );
    let handle = resource::spawn(state, TcpListener::bind("127.0.0.1:0").await.unwrap()).unwrap();
    let bearer = format!("Bearer {}", tokens.access_token);

    assert_eq!(
        get(&handle.url("/resource"), Some(&bearer)).await.status(),
        200
    );
    topo.advance(tokens.expires_in - 1).unwrap();
    assert_eq!(
        get(&handle.url("/resource"), Some(&bearer)).await.status(),
        200
    );
    topo.advance(1).unwrap();
    let resp = get(&handle.url("/resource"), Some(&bearer)).await;
    assert_eq!(resp.status(), 401);
    assert!(challenge(&resp).contains("invalid_token"));
    handle.shutdown().await;
    topo.shutdown().await;
}

#[tokio::test]
async fn unknown_path_is_json_404() {
    let topo = frozen().await;
    let resp = get(&topo.url(Service::ResourceA, "/elsewhere"), None).await;
    assert_eq!(resp.status(), 404);
    assert!(resp.json::<Value>().await.unwrap()["error"].is_string());
    topo.shutdown().await;
}
