//! HTTP services for the identity-share federation testbed and the harness
//! that runs two domains against each other.

pub mod harness;
pub mod http;
pub mod idp;
pub mod resource;
pub mod scim_client;

use std::path::Path;

use anyhow::{bail, Context};
use fedgrant_core::registry::{load_config, Registry};
use serde_json::Value;

use crate::resource::ResourceConfig;

pub enum ServiceConfig {
    Idp(Box<Registry>),
    Resource(ResourceConfig),
}

/// Reads a service config; an `issuer` key means an IdP, an
/// `introspection_url` key a resource server.
pub fn load_service_config(path: &Path) -> anyhow::Result<ServiceConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("issuer").is_some() {
        let registry = load_config(path).with_context(|| format!("loading {}", path.display()))?;
        Ok(ServiceConfig::Idp(Box::new(registry)))
    } else if value.get("introspection_url").is_some() {
        let cfg =
            serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(ServiceConfig::Resource(cfg))
    } else {
        bail!(
            "{}: neither an IdP config (issuer) nor a resource server config (introspection_url)",
            path.display()
        )
    }
}
