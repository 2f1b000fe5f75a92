//! Boots domain A and domain B (each an IdP plus a resource server) in this
//! process and drives the five-step federation flow against them over HTTP.
//!
//! 1. authorization request at A with `openid identity_share`, scripted login
//! 2. code redemption at A, which must return an `identity_share_token`
//! 3. `grant_type=identity_share_token` at B
//! 4. B's view afterwards: introspection, shadow account, SCIM lookups at A
//! 5. B's access token at B's resource server

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use fedgrant_core::clock::{FrozenClock, SharedClock, SystemClock};
use fedgrant_core::config::IdpConfig;
use fedgrant_core::jwt::{b64url_encode, decode_unverified, fill_random};
use fedgrant_core::registry::Registry;
use fedgrant_core::token::{encode_form, parse_form, TokenResponse};
use reqwest::redirect::Policy;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::http::{basic_header, ServiceHandle};
use crate::idp::IdpState;
use crate::resource::{ResourceConfig, ResourceState};
use crate::{idp, resource};

pub const IDP_A_CONFIG: &str = include_str!("../demo/idp_a.json");
pub const IDP_B_CONFIG: &str = include_str!("../demo/idp_b.json");
pub const RESOURCE_A_CONFIG: &str = include_str!("../demo/resource_a.json");
pub const RESOURCE_B_CONFIG: &str = include_str!("../demo/resource_b.json");
const PEM_A: &str = include_str!("../demo/domain_a_rs256.pem");
const PEM_B: &str = include_str!("../demo/domain_b_rs256.pem");

pub const CLIENT_A: &str = "jdf0Plm_op";
pub const SECRET_A: &str = "a-client-secret";
pub const CLIENT_B: &str = "8UyfGho2pLqCmNb";
pub const SECRET_B: &str = "uTbC67PqAmbrS1Mx9j2";
pub const REDIRECT_URI: &str = "http://sample.com/redirect/";
pub const USERNAME: &str = "alice";
pub const PASSWORD: &str = "wonderland";
pub const STATE: &str = "pTl987HmQ";
pub const NONCE: &str = "12_90oPls";
const SCIM_CLIENT: (&str, &str) = ("domain-b-scim", "domain-b-scim-secret");

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub sealed: bool,
    pub scim: bool,
    /// Start every service on a shared clock frozen at this instant.
    pub frozen_time: Option<i64>,
    /// When false, B's trust list is emptied.
    pub b_trusts_a: bool,
    /// Link the domains with a shared HS256 secret instead of RS256 keys.
    pub hs256: bool,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            sealed: false,
            scim: false,
            frozen_time: None,
            b_trusts_a: true,
            hs256: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    fn resource_credentials(self) -> (&'static str, &'static str) {
        match self {
            Domain::A => ("resource-a", "resource-a-secret"),
            Domain::B => ("resource-b", "resource-b-secret"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: u8,
    pub title: String,
    pub request: String,
    pub response: String,
    pub ok: bool,
    pub duration_ms: f64,
}

/// Ordered step records. A failed step is always the last one.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FlowTranscript {
    pub steps: Vec<StepRecord>,
    #[serde(skip)]
    randoms: Vec<String>,
}

impl FlowTranscript {
    pub const STEPS: usize = 5;

    pub fn passed(&self) -> bool {
        self.steps.len() == Self::STEPS && self.steps.iter().all(|s| s.ok)
    }

    pub fn failed_step(&self) -> Option<&StepRecord> {
        self.steps.iter().find(|s| !s.ok)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let verdict = if s.ok { "ok" } else { "FAILED" };
            let _ = writeln!(
                out,
                "step {}  {}  [{verdict}, {:.1} ms]",
                s.step, s.title, s.duration_ms
            );
            for line in s.request.lines() {
                let _ = writeln!(out, "  > {line}");
            }
            for line in s.response.lines() {
                let _ = writeln!(out, "  < {line}");
            }
        }
        let passed = self.steps.iter().filter(|s| s.ok).count();
        let _ = writeln!(out, "result: {passed}/{} steps passed", Self::STEPS);
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "passed": self.passed(),
            "steps": self.steps,
        })
    }

    /// Copy with generated values replaced by numbered placeholders and
    /// durations zeroed, for comparing runs.
    pub fn redacted(&self) -> Self {
        let mut randoms: Vec<&String> = self.randoms.iter().filter(|r| !r.is_empty()).collect();
        randoms.sort_by_key(|r| std::cmp::Reverse(r.len()));
        let scrub = |text: &str| {
            randoms
                .iter()
                .enumerate()
                .fold(text.to_owned(), |acc, (i, r)| {
                    acc.replace(r.as_str(), &format!("<random-{i}>"))
                })
        };
        let steps = self
            .steps
            .iter()
            .map(|s| StepRecord {
                request: scrub(&s.request),
                response: scrub(&s.response),
                duration_ms: 0.0,
                ..s.clone()
            })
            .collect();
        Self {
            steps,
            randoms: Vec::new(),
        }
    }

    fn push(
        &mut self,
        step: u8,
        title: &str,
        request: String,
        started: Instant,
        outcome: &Result<String, String>,
    ) {
        let (response, ok) = match outcome {
            Ok(r) => (r.clone(), true),
            Err(r) => (r.clone(), false),
        };
        self.steps.push(StepRecord {
            step,
            title: title.to_owned(),
            request,
            response,
            ok,
            duration_ms: started.elapsed().as_secs_f64() * 1000.0,
        });
    }
}

/// Values produced along the way, for callers that keep probing.
#[derive(Debug, Clone, Default)]
pub struct FlowArtifacts {
    pub code: Option<String>,
    pub a_tokens: Option<TokenResponse>,
    pub share_token: Option<String>,
    pub b_tokens: Option<TokenResponse>,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub transcript: FlowTranscript,
    pub artifacts: FlowArtifacts,
}

/// Reply from one of the services: status and JSON body (`Null` if the body
/// was not JSON).
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

pub struct Topology {
    clock: SharedClock,
    frozen: Option<FrozenClock>,
    idp_a: Arc<IdpState>,
    idp_b: Arc<IdpState>,
    services: Vec<(Service, ServiceHandle)>,
    http: reqwest::Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Service {
    IdpA,
    IdpB,
    ResourceA,
    ResourceB,
}

impl Service {
    pub fn idp(domain: Domain) -> Self {
        match domain {
            Domain::A => Service::IdpA,
            Domain::B => Service::IdpB,
        }
    }

    pub fn resource(domain: Domain) -> Self {
        match domain {
            Domain::A => Service::ResourceA,
            Domain::B => Service::ResourceB,
        }
    }
}

fn with_inline_key(mut cfg: Value, pem: &str) -> Value {
    let keys = &mut cfg["signing_keys"];
    if let Some(obj) = keys.as_object_mut() {
        obj.remove("rs256_private_pem_file");
        obj.insert("rs256_private_pem".into(), pem.into());
    }
    cfg
}

/// IdP configs for both domains with keys inlined and the link shaped by
/// `opts`. Listen addresses and SCIM endpoints are left to the caller.
pub fn demo_idp_configs(opts: &DemoOptions) -> anyhow::Result<(Value, Value)> {
    let mut a = with_inline_key(serde_json::from_str(IDP_A_CONFIG)?, PEM_A);
    let mut b = with_inline_key(serde_json::from_str(IDP_B_CONFIG)?, PEM_B);
    let random_key = || {
        let mut key = [0u8; 32];
        fill_random(&mut key);
        b64url_encode(key)
    };
    if opts.hs256 {
        let secret = json!({"hs256_secret": random_key()});
        a["trusted_issuers"][0]["verification_key"] = secret.clone();
        b["trusted_issuers"][0]["verification_key"] = secret;
    }
    if opts.sealed {
        let sdata = json!({"mode": "sealed", "key": random_key()});
        a["trusted_issuers"][0]["sdata"] = sdata.clone();
        b["trusted_issuers"][0]["sdata"] = sdata;
    }
    if !opts.b_trusts_a {
        b["trusted_issuers"] = json!([]);
    }
    Ok((a, b))
}

pub fn registry_from(cfg: Value) -> anyhow::Result<Registry> {
    let cfg: IdpConfig = serde_json::from_value(cfg)?;
    Ok(Registry::from_config(cfg, Path::new("."))?)
}

impl Topology {
    pub async fn boot(opts: &DemoOptions) -> anyhow::Result<Self> {
        let mut listeners = Vec::new();
        for _ in 0..4 {
            listeners.push(
                TcpListener::bind("127.0.0.1:0")
                    .await
                    .context("binding loopback port")?,
            );
        }
        let addr = |i: usize| listeners[i].local_addr().map(|a| a.to_string());
        let (addr_a, addr_b, addr_ra, addr_rb) = (addr(0)?, addr(1)?, addr(2)?, addr(3)?);

        let (mut a, mut b) = demo_idp_configs(opts)?;
        a["listen"] = addr_a.clone().into();
        b["listen"] = addr_b.clone().into();
        if opts.scim && opts.b_trusts_a {
            b["trusted_issuers"][0]["scim"] = json!({
                "base_url": format!("http://{addr_a}/scim"),
                "client_id": SCIM_CLIENT.0,
                "client_secret": SCIM_CLIENT.1,
            });
        }

        let mut ra: ResourceConfig = serde_json::from_str(RESOURCE_A_CONFIG)?;
        let mut rb: ResourceConfig = serde_json::from_str(RESOURCE_B_CONFIG)?;
        ra.listen = Some(addr_ra);
        ra.introspection_url = format!("http://{addr_a}/introspect");
        rb.listen = Some(addr_rb);
        rb.introspection_url = format!("http://{addr_b}/introspect");

        let frozen = opts.frozen_time.map(FrozenClock::new);
        let clock: SharedClock = match &frozen {
            Some(f) => Arc::new(f.clone()),
            None => Arc::new(SystemClock),
        };

        let idp_a = IdpState::new(registry_from(a).context("domain A config")?, clock.clone());
        let idp_b = IdpState::new(registry_from(b).context("domain B config")?, clock.clone());
        let mut it = listeners.into_iter();
        let mut next = || it.next().expect("four listeners");
        let services = vec![
            (Service::IdpA, idp::spawn(idp_a.clone(), next())?),
            (Service::IdpB, idp::spawn(idp_b.clone(), next())?),
            (
                Service::ResourceA,
                resource::spawn(ResourceState::new(ra, clock.clone()), next())?,
            ),
            (
                Service::ResourceB,
                resource::spawn(ResourceState::new(rb, clock.clone()), next())?,
            ),
        ];
        let http = reqwest::Client::builder()
            .redirect(Policy::none())
            .build()?;
        Ok(Self {
            clock,
            frozen,
            idp_a,
            idp_b,
            services,
            http,
        })
    }

    pub fn url(&self, service: Service, path: &str) -> String {
        let handle = &self
            .services
            .iter()
            .find(|(s, _)| *s == service)
            .expect("all services booted")
            .1;
        handle.url(path)
    }

    pub fn idp(&self, domain: Domain) -> &Arc<IdpState> {
        match domain {
            Domain::A => &self.idp_a,
            Domain::B => &self.idp_b,
        }
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn clock(&self) -> SharedClock {
        self.clock.clone()
    }

    /// Moves the shared clock. Fails unless booted with a frozen time.
    pub fn advance(&self, secs: i64) -> anyhow::Result<()> {
        let frozen = self
            .frozen
            .as_ref()
            .ok_or_else(|| anyhow!("topology runs on the system clock"))?;
        frozen.advance(secs);
        Ok(())
    }

    pub fn http(&self) -> &reqwest::Client {
        &self.http
    }

    async fn reply(resp: reqwest::Response) -> anyhow::Result<Reply> {
        let status = resp.status().as_u16();
        let text = resp.text().await?;
        Ok(Reply {
            status,
            body: serde_json::from_str(&text).unwrap_or(Value::Null),
        })
    }

    /// Form POST to an IdP's token endpoint with Basic client credentials.
    pub async fn post_token(
        &self,
        domain: Domain,
        client: (&str, &str),
        params: &[(&str, &str)],
    ) -> anyhow::Result<Reply> {
        let resp = self
            .http
            .post(self.url(Service::idp(domain), "/token"))
            .header("authorization", basic_header(client.0, client.1))
            .header("content-type", "application/x-www-form-urlencoded")
            .body(encode_form(params.iter().copied()))
            .send()
            .await?;
        Self::reply(resp).await
    }

    /// Introspection at a domain's IdP, authenticated as that domain's
    /// resource server.
    pub async fn introspect(&self, domain: Domain, token: &str) -> anyhow::Result<Reply> {
        let (id, secret) = domain.resource_credentials();
        let resp = self
            .http
            .post(self.url(Service::idp(domain), "/introspect"))
            .header("authorization", basic_header(id, secret))
            .header("content-type", "application/x-www-form-urlencoded")
            .body(encode_form([("token", token)]))
            .send()
            .await?;
        Self::reply(resp).await
    }

    pub async fn get_resource(&self, domain: Domain, token: Option<&str>) -> anyhow::Result<Reply> {
        let mut req = self
            .http
            .get(self.url(Service::resource(domain), "/resource"));
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        Self::reply(req.send().await?).await
    }

    pub async fn shutdown(self) {
        for (_, handle) in self.services {
            handle.shutdown().await;
        }
    }

    pub async fn run_flow(&self) -> FlowRun {
        let mut t = FlowTranscript::default();
        let mut art = FlowArtifacts::default();
        let issuer_a = self.idp_a.registry().issuer().to_owned();
        let issuer_b = self.idp_b.registry().issuer().to_owned();

        // Step 1
        let query = encode_form([
            ("response_type", "code"),
            ("client_id", CLIENT_A),
            ("redirect_uri", REDIRECT_URI),
            ("scope", "openid identity_share"),
            ("identity_share_target", issuer_b.as_str()),
            ("state", STATE),
            ("nonce", NONCE),
        ]);
        let request = format!("GET /authorize?{query} at domain A\nPOST /login as {USERNAME}");
        let started = Instant::now();
        let outcome = self.authorize_and_login(&query, &mut t).await;
        let outcome = outcome.map(|(location, code)| {
            art.code = Some(code);
            format!("302 Location: {location}")
        });
        t.push(
            1,
            "authorization request at domain A",
            request,
            started,
            &outcome,
        );
        if outcome.is_err() {
            return FlowRun {
                transcript: t,
                artifacts: art,
            };
        }
        let code = art.code.clone().unwrap_or_default();

        // Step 2
        let request =
            "POST /token at domain A (grant_type=authorization_code, client jdf0Plm_op)".to_owned();
        let started = Instant::now();
        let outcome = async {
            let reply = self
                .post_token(
                    Domain::A,
                    (CLIENT_A, SECRET_A),
                    &[
                        ("grant_type", "authorization_code"),
                        ("code", &code),
                        ("redirect_uri", REDIRECT_URI),
                    ],
                )
                .await
                .map_err(|e| format!("transport error: {e}"))?;
            let body = serde_json::to_string_pretty(&reply.body).unwrap_or_default();
            if reply.status != 200 {
                return Err(format!("{} {body}", reply.status));
            }
            let tokens: TokenResponse = serde_json::from_value(reply.body.clone())
                .map_err(|e| format!("bad token response: {e}"))?;
            let Some(share) = tokens.identity_share_token.clone() else {
                return Err(format!("200 without identity_share_token\n{body}"));
            };
            let payload = decode_unverified(&share)
                .map(|j| serde_json::to_string_pretty(&Value::Object(j.claims)).unwrap_or_default())
                .map_err(|e| format!("identity_share_token does not decode: {e}"))?;
            Ok((
                tokens,
                format!("200 {body}\nidentity_share_token payload {payload}"),
            ))
        }
        .await;
        let outcome = outcome.map(|(tokens, summary)| {
            t.randoms.push(tokens.access_token.clone());
            t.randoms.extend(tokens.refresh_token.clone());
            t.randoms.extend(tokens.id_token.clone());
            t.randoms.extend(tokens.identity_share_token.clone());
            art.share_token = tokens.identity_share_token.clone();
            art.a_tokens = Some(tokens);
            summary
        });
        t.push(2, "code redemption at domain A", request, started, &outcome);
        if outcome.is_err() {
            return FlowRun {
                transcript: t,
                artifacts: art,
            };
        }
        let share = art.share_token.clone().unwrap_or_default();

        // Step 3
        let request = format!(
            "POST /token at domain B (grant_type=identity_share_token, client {CLIENT_B}, shared_token from step 2)"
        );
        let started = Instant::now();
        let outcome = async {
            let reply = self
                .post_token(
                    Domain::B,
                    (CLIENT_B, SECRET_B),
                    &[
                        ("grant_type", "identity_share_token"),
                        ("shared_token", &share),
                    ],
                )
                .await
                .map_err(|e| format!("transport error: {e}"))?;
            let body = serde_json::to_string_pretty(&reply.body).unwrap_or_default();
            if reply.status != 200 {
                return Err(format!("{} {body}", reply.status));
            }
            let tokens: TokenResponse = serde_json::from_value(reply.body.clone())
                .map_err(|e| format!("bad token response: {e}"))?;
            Ok((tokens, format!("200 {body}")))
        }
        .await;
        let outcome = outcome.map(|(tokens, summary)| {
            t.randoms.push(tokens.access_token.clone());
            t.randoms.extend(tokens.refresh_token.clone());
            art.b_tokens = Some(tokens);
            summary
        });
        t.push(
            3,
            "identity share grant at domain B",
            request,
            started,
            &outcome,
        );
        if outcome.is_err() {
            return FlowRun {
                transcript: t,
                artifacts: art,
            };
        }
        let b_token = art
            .b_tokens
            .as_ref()
            .map(|r| r.access_token.clone())
            .unwrap_or_default();

        // Step 4
        let request =
            "introspect the new token at domain B; read B's shadow account and A's SCIM counter"
                .to_owned();
        let started = Instant::now();
        let outcome = async {
            let reply = self
                .introspect(Domain::B, &b_token)
                .await
                .map_err(|e| format!("transport error: {e}"))?;
            let body = &reply.body;
            if reply.status != 200 || body["active"] != true {
                return Err(format!("introspection at B: {} {body}", reply.status));
            }
            let sub = body["sub"].as_str().unwrap_or_default();
            let mut summary = format!(
                "introspection: active, sub={sub}, iss={}",
                body["iss"].as_str().unwrap_or("")
            );
            let Some(shadow) = self.idp_b.registry().shadow_user(&issuer_a, sub) else {
                return Err(format!(
                    "{summary}\nno shadow account for {sub} from {issuer_a}"
                ));
            };
            let until = shadow
                .shadow_expires()
                .map(|e| format!("until {e}"))
                .unwrap_or_else(|| "permanent".into());
            let _ = write!(
                summary,
                "\nshadow account: {} from {issuer_a} ({until})",
                shadow.subject
            );
            let hits = self.idp_a.scim_hits();
            let _ = write!(summary, "\nSCIM lookups served by domain A: {hits}");
            let scim_on = self
                .idp_b
                .registry()
                .lookup_issuer(&issuer_a)
                .is_some_and(|p| p.scim.is_some());
            if scim_on && hits == 0 {
                return Err(format!(
                    "{summary}\nSCIM verification enabled but A saw no lookup"
                ));
            }
            Ok(summary)
        }
        .await;
        t.push(4, "validation at domain B", request, started, &outcome);
        if outcome.is_err() {
            return FlowRun {
                transcript: t,
                artifacts: art,
            };
        }

        // Step 5
        let request =
            "GET /resource at domain B's resource server with B's access token".to_owned();
        let started = Instant::now();
        let outcome = match self.get_resource(Domain::B, Some(&b_token)).await {
            Ok(r) if r.status == 200 => Ok(format!("200 {}", r.body)),
            Ok(r) => Err(format!("{} {}", r.status, r.body)),
            Err(e) => Err(format!("transport error: {e}")),
        };
        t.push(
            5,
            "resource request at domain B",
            request,
            started,
            &outcome,
        );
        FlowRun {
            transcript: t,
            artifacts: art,
        }
    }

    /// Authorization request at A as the demo client, logged in as the demo
    /// user. Returns the code.
    pub async fn authorization_code(
        &self,
        scope: &str,
        target: Option<&str>,
    ) -> Result<String, String> {
        let mut params = vec![
            ("response_type", "code"),
            ("client_id", CLIENT_A),
            ("redirect_uri", REDIRECT_URI),
            ("scope", scope),
            ("state", STATE),
        ];
        params.extend(target.map(|t| ("identity_share_target", t)));
        let mut scratch = FlowTranscript::default();
        self.authorize_and_login(&encode_form(params), &mut scratch)
            .await
            .map(|(_, code)| code)
    }

    /// GET /authorize, then the login form POST. Returns the redirect
    /// location and the code.
    async fn authorize_and_login(
        &self,
        query: &str,
        t: &mut FlowTranscript,
    ) -> Result<(String, String), String> {
        let transport = |e: reqwest::Error| format!("transport error: {e}");
        let resp = self
            .http
            .get(format!("{}?{query}", self.url(Service::IdpA, "/authorize")))
            .send()
            .await
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let page = resp.text().await.map_err(transport)?;
        if status != 200 {
            return Err(format!("/authorize answered {status}: {page}"));
        }
        let handle = page
            .split("name=\"handle\" value=\"")
            .nth(1)
            .and_then(|rest| rest.split('"').next())
            .ok_or("login form without a handle")?
            .to_owned();
        let resp = self
            .http
            .post(self.url(Service::IdpA, "/login"))
            .header("content-type", "application/x-www-form-urlencoded")
            .body(encode_form([
                ("handle", handle.as_str()),
                ("username", USERNAME),
                ("password", PASSWORD),
            ]))
            .send()
            .await
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let location = resp
            .headers()
            .get("location")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let Some(location) = location.filter(|_| status == 302) else {
            let body = resp.text().await.unwrap_or_default();
            return Err(format!("/login answered {status}: {body}"));
        };
        let params = location
            .split_once('?')
            .map(|(_, q)| parse_form(q))
            .transpose()
            .map_err(|e| e.to_string())?
            .unwrap_or_default();
        if let Some(err) = params.get("error") {
            return Err(format!("302 Location: {location} ({err})"));
        }
        let code = params
            .get("code")
            .cloned()
            .ok_or_else(|| format!("302 without code: {location}"))?;
        if params.get("state").map(String::as_str) != Some(STATE) {
            return Err(format!("state not echoed: {location}"));
        }
        t.randoms.push(code.clone());
        Ok((location, code))
    }
}

/// Boots, runs the flow once, tears everything down.
pub async fn run_demo(opts: &DemoOptions) -> anyhow::Result<FlowRun> {
    let topology = Topology::boot(opts).await?;
    let run = topology.run_flow().await;
    topology.shutdown().await;
    Ok(run)
}

/// Shorthand used by the CLI for exit status.
pub fn ensure_passed(run: &FlowRun) -> anyhow::Result<()> {
    match run.transcript.failed_step() {
        None if run.transcript.passed() => Ok(()),
        Some(s) => bail!("step {} ({}) failed", s.step, s.title),
        None => bail!("flow stopped early"),
    }
}
