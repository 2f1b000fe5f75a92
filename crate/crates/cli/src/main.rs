use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use fedgrant::harness::{self, DemoOptions};
use fedgrant::resource::ResourceState;
use fedgrant::scim_client::HttpScim;
use fedgrant::{idp, load_service_config, resource, ServiceConfig};
use fedgrant_core::clock::{Clock, SharedClock, SystemClock};
use fedgrant_core::jwt::{b64url_decode, decode_unverified};
use fedgrant_core::registry::load_config;
use fedgrant_core::share_grant::{
    issue_identity_share_token, share_audience, verify_shared_token, GrantDecision,
};
use fedgrant_core::token::SubjectData;
use serde_json::Value;
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "fedgrant",
    version,
    about = "Identity-share token federation between two OAuth/OIDC domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one identity provider or resource server.
    Serve {
        #[arg(long, env = "FEDGRANT_CONFIG")]
        config: PathBuf,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Boot both domains in-process and run the five-step flow.
    Demo {
        #[arg(long)]
        sealed: bool,
        #[arg(long)]
        scim: bool,
        #[arg(long)]
        json: bool,
        /// Freeze every service clock at this unix time.
        #[arg(long, value_name = "UNIX_SECONDS")]
        frozen_time: Option<i64>,
        /// Start domain B with an empty trust list.
        #[arg(long)]
        without_trust: bool,
        /// Link the domains with a shared HS256 secret.
        #[arg(long)]
        hs256: bool,
    },
    /// Print an identity-share token issued by the configured IdP.
    Mint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        subject: String,
        /// Audience; all trusted peers when omitted.
        #[arg(long)]
        target: Option<String>,
        /// Mint for a subject that is not a local user.
        #[arg(long)]
        email: Option<String>,
        #[arg(long, value_name = "UNIX_SECONDS")]
        now: Option<i64>,
    },
    /// Show a token's header and claims without verifying it.
    Inspect { token: String },
    /// Run the validation stages of the configured IdP against a token.
    Validate {
        #[arg(long)]
        config: PathBuf,
        token: String,
        #[arg(long, value_name = "UNIX_SECONDS")]
        now: Option<i64>,
    },
}

fn init_tracing(default: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

async fn serve(config: PathBuf, listen: Option<String>) -> anyhow::Result<()> {
    let clock: SharedClock = Arc::new(SystemClock);
    let (handle, addr) = match load_service_config(&config)? {
        ServiceConfig::Idp(registry) => {
            let addr = listen
                .or_else(|| registry.listen().map(str::to_owned))
                .unwrap_or("127.0.0.1:8080".into());
            let listener = TcpListener::bind(&addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            (
                idp::spawn(idp::IdpState::new(*registry, clock), listener)?,
                addr,
            )
        }
        ServiceConfig::Resource(cfg) => {
            let addr = listen
                .or_else(|| cfg.listen.clone())
                .unwrap_or("127.0.0.1:8081".into());
            let listener = TcpListener::bind(&addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            (
                resource::spawn(ResourceState::new(cfg, clock), listener)?,
                addr,
            )
        }
    };
    eprintln!("listening on http://{addr}");
    shutdown_signal().await;
    handle.shutdown().await;
    Ok(())
}

async fn demo(opts: DemoOptions, json: bool) -> anyhow::Result<()> {
    let run = harness::run_demo(&opts).await?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&run.transcript.to_json())?
        );
    } else {
        print!("{}", run.transcript.to_text());
    }
    harness::ensure_passed(&run)
}

fn mint(
    config: PathBuf,
    subject: String,
    target: Option<String>,
    email: Option<String>,
    now: Option<i64>,
) -> anyhow::Result<()> {
    let registry = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    let data = match (registry.local_user_by_subject(&subject), email) {
        (_, Some(email)) => SubjectData::new(subject, email),
        (Some(user), None) => user.claims.clone(),
        (None, None) => {
            bail!("no local user with subject `{subject}` (pass --email to mint anyway)")
        }
    };
    let audience = share_audience(&registry, target.as_deref(), None)?;
    let now = now.unwrap_or_else(|| SystemClock.now());
    println!(
        "{}",
        issue_identity_share_token(&data, &audience, &registry, now)?
    );
    Ok(())
}

fn inspect(token: &str) -> anyhow::Result<()> {
    let jwt = decode_unverified(token).map_err(|e| anyhow!("not a JWT: {e}"))?;
    let raw_header = token.split('.').next().unwrap_or_default();
    let header: Value = serde_json::from_slice(&b64url_decode(raw_header)?)?;
    println!("header {}", serde_json::to_string_pretty(&header)?);
    println!(
        "claims {}",
        serde_json::to_string_pretty(&Value::Object(jwt.claims.clone()))?
    );
    match jwt.claims.get("sdata") {
        Some(Value::String(blob)) => {
            let len = b64url_decode(blob).map(|b| b.len()).unwrap_or(0);
            println!("sdata: sealed ({len} bytes), readable only with the trust link key");
        }
        Some(Value::Object(_)) => println!("sdata: plain"),
        _ => println!("sdata: absent"),
    }
    println!("signature: not verified");
    Ok(())
}

async fn validate(config: PathBuf, token: String, now: Option<i64>) -> anyhow::Result<bool> {
    let registry = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    let scim = HttpScim::new(Duration::from_millis(registry.policy().scim_timeout_ms));
    let now = now.unwrap_or_else(|| SystemClock.now());
    match verify_shared_token(Some(&token), &registry, &scim, now).await {
        Ok(v) => {
            println!(
                "accepted: subject {} from {}",
                v.subject_data.subject, v.origin_issuer
            );
            println!("{}", serde_json::to_string_pretty(&v.subject_data)?);
            Ok(true)
        }
        Err(decision) => {
            println!("{decision}");
            if let Some(d) = decision_description(&decision) {
                println!("{d}");
            }
            Ok(false)
        }
    }
}

fn decision_description(decision: &GrantDecision) -> Option<String> {
    match decision {
        GrantDecision::Rejected { error, .. } => error.error_description.clone(),
        _ => None,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, listen } => {
            init_tracing("info");
            serve(config, listen).await.map(|_| true)
        }
        Command::Demo {
            sealed,
            scim,
            json,
            frozen_time,
            without_trust,
            hs256,
        } => {
            init_tracing("warn");
            let opts = DemoOptions {
                sealed,
                scim,
                frozen_time,
                b_trusts_a: !without_trust,
                hs256,
            };
            demo(opts, json).await.map(|_| true)
        }
        Command::Mint {
            config,
            subject,
            target,
            email,
            now,
        } => {
            init_tracing("warn");
            mint(config, subject, target, email, now).map(|_| true)
        }
        Command::Inspect { token } => inspect(token.trim()).map(|_| true),
        Command::Validate { config, token, now } => {
            init_tracing("warn");
            validate(config, token.trim().to_owned(), now).await
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
