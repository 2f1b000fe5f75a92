pub mod clock;
pub mod config;
pub mod error;
pub mod jwt;
pub mod oidc;
pub mod registry;
pub mod secret;
pub mod share_grant;
pub mod token;
