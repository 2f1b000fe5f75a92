//! Identity-share tokens: minting them at the user's home domain and the
//! ordered validation pipeline that exchanges them for an access token at a
//! trusting peer.
//!
//! The pipeline stops at the first failing stage and reports it, so callers
//! (and tests) can see exactly where a request was turned away:
//!
//! | # | stage            | error                    |
//! |---|------------------|--------------------------|
//! | 1 | client auth      | `invalid_client`         |
//! | 2 | grant type       | `unsupported_grant_type` |
//! | 3 | shared_token     | `invalid_grant_token`    |
//! | 4 | issuer           | `invalid_grant`          |
//! | 5 | audience         | `invalid_grant`          |
//! | 6 | iat / exp        | `invalid_grant`          |
//! | 7 | signature        | `invalid_grant`          |
//! | 8 | sdata extraction | `invalid_grant`          |
//! | 9 | mandatory claims | `invalid_grant`          |
//! | 10| SCIM check       | `invalid_grant`          |
//!
//! Claims are read before the signature is checked (stages 4-6 work on the
//! unverified payload) because the issuer decides which key to use.

use std::fmt;
use std::future::Future;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::error::JoseError;
use crate::jwt::{
    check_time_bounds, decode_unverified, encode_jwt, int_claim, open_sdata, seal_sdata,
    JoseHeader, KeyKind,
};
use crate::registry::{
    ClientRegistration, Provisioning, Registry, ScimSettings, SdataMode, TrustedIssuerProfile,
};
use crate::token::{
    build_identity_share_claims, Audience, ErrorCode, ModelError, OAuthError, Scope, Sdata,
    SubjectData, TokenOrigin, TokenRequest, TokenResponse, GRANT_IDENTITY_SHARE,
    SCOPE_IDENTITY_SHARE,
};

#[derive(Debug, Error)]
pub enum IssueError {
    #[error("identity share target `{0}` is not a trusted identity provider")]
    UntrustedTarget(String),
    #[error("no trusted identity providers are configured")]
    NoTrustedIssuers,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Jose(#[from] JoseError),
}

/// Audience for a share token: the explicit target when given, otherwise
/// every trusted peer in configuration order (narrowed to the client's
/// `share_targets` when it has any).
pub fn share_audience(
    registry: &Registry,
    target: Option<&str>,
    client: Option<&ClientRegistration>,
) -> Result<Vec<String>, IssueError> {
    if let Some(t) = target {
        if registry.lookup_issuer(t).is_none() {
            return Err(IssueError::UntrustedTarget(t.to_owned()));
        }
        return Ok(vec![t.to_owned()]);
    }
    let all: Vec<String> = registry
        .trusted_issuers()
        .iter()
        .filter(|p| client.is_none_or(|c| c.may_target(&p.issuer)))
        .map(|p| p.issuer.clone())
        .collect();
    if all.is_empty() {
        return Err(IssueError::NoTrustedIssuers);
    }
    Ok(all)
}

/// Signs a share token for `audience`. The first audience's trust link
/// decides the details: an HS256 link signs with the shared secret, an RS256
/// link with this instance's own key, and a sealed link seals `sdata`.
pub fn issue_identity_share_token(
    subject_data: &SubjectData,
    audience: &[String],
    registry: &Registry,
    now: i64,
) -> Result<String, IssueError> {
    let profiles = audience
        .iter()
        .map(|a| {
            registry
                .lookup_issuer(a)
                .ok_or_else(|| IssueError::UntrustedTarget(a.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let link = profiles.first().ok_or(IssueError::NoTrustedIssuers)?;

    let mut claims = build_identity_share_claims(
        registry.issuer(),
        audience,
        subject_data,
        now,
        registry.policy().share_token_ttl,
    )?;
    if let SdataMode::Sealed(key) = &link.sdata_mode {
        claims.sdata = Sdata::Sealed(seal_sdata(&subject_data.to_map(), key)?);
    }
    let key = match link.verification_key.kind() {
        KeyKind::Symmetric => &link.verification_key,
        _ => registry.signing_key(),
    };
    Ok(encode_jwt(
        &claims.to_map(),
        &JoseHeader::for_key(key)?,
        key,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PipelineStage {
    ClientAuthentication = 1,
    GrantType = 2,
    SharedToken = 3,
    Issuer = 4,
    Audience = 5,
    Temporal = 6,
    Integrity = 7,
    SubjectData = 8,
    MandatoryClaims = 9,
    ScimVerification = 10,
}

impl PipelineStage {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::ClientAuthentication => "client authentication",
            PipelineStage::GrantType => "grant type",
            PipelineStage::SharedToken => "shared token",
            PipelineStage::Issuer => "issuer",
            PipelineStage::Audience => "audience",
            PipelineStage::Temporal => "temporal validity",
            PipelineStage::Integrity => "integrity",
            PipelineStage::SubjectData => "subject data",
            PipelineStage::MandatoryClaims => "mandatory claims",
            PipelineStage::ScimVerification => "SCIM verification",
        }
    }

    fn error_code(self) -> ErrorCode {
        match self {
            PipelineStage::ClientAuthentication => ErrorCode::InvalidClient,
            PipelineStage::GrantType => ErrorCode::UnsupportedGrantType,
            PipelineStage::SharedToken => ErrorCode::InvalidGrantToken,
            _ => ErrorCode::InvalidGrant,
        }
    }

    fn reject(self, detail: impl fmt::Display) -> GrantDecision {
        GrantDecision::Rejected {
            error: OAuthError::with_description(
                self.error_code(),
                format!("stage {} ({}): {detail}", self.index(), self.name()),
            ),
            stage: self,
        }
    }

    #[allow(clippy::result_large_err)]
    fn fail<T>(self, detail: impl fmt::Display) -> Result<T, GrantDecision> {
        Err(self.reject(detail))
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} ({})", self.index(), self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GrantDecision {
    Accepted {
        client_id: String,
        subject_data: SubjectData,
        origin_issuer: String,
    },
    Rejected {
        error: OAuthError,
        stage: PipelineStage,
    },
}

impl GrantDecision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, GrantDecision::Accepted { .. })
    }

    pub fn stage(&self) -> Option<PipelineStage> {
        match self {
            GrantDecision::Rejected { stage, .. } => Some(*stage),
            GrantDecision::Accepted { .. } => None,
        }
    }
}

impl fmt::Display for GrantDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrantDecision::Accepted {
                subject_data,
                origin_issuer,
                ..
            } => {
                write!(
                    f,
                    "accepted: subject {} from {origin_issuer}",
                    subject_data.subject
                )
            }
            GrantDecision::Rejected { error, stage } => {
                write!(f, "rejected: {} (stage {})", error.error, stage.index())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SCIM endpoint unavailable: {0}")]
pub struct ScimUnavailable(pub String);

/// Reads a user resource from a peer's SCIM surface.
pub trait ScimFetcher: Sync {
    /// `Ok(None)` when the peer answers that the user does not exist.
    fn fetch_user(
        &self,
        settings: &ScimSettings,
        subject: &str,
    ) -> impl Future<Output = Result<Option<Map<String, Value>>, ScimUnavailable>> + Send;
}

/// Fetcher for deployments without SCIM; every lookup is unavailable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoScim;

impl ScimFetcher for NoScim {
    async fn fetch_user(
        &self,
        _: &ScimSettings,
        _: &str,
    ) -> Result<Option<Map<String, Value>>, ScimUnavailable> {
        Err(ScimUnavailable("SCIM is not configured".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScimOutcome {
    Match,
    Mismatch,
    Unavailable,
}

/// Match iff the peer knows the subject and its email equals the token's
/// email exactly.
pub async fn scim_verify<F: ScimFetcher>(
    subject_data: &SubjectData,
    profile: &TrustedIssuerProfile,
    fetcher: &F,
) -> ScimOutcome {
    let Some(settings) = &profile.scim else {
        return ScimOutcome::Unavailable;
    };
    match fetcher.fetch_user(settings, &subject_data.subject).await {
        Err(_) => ScimOutcome::Unavailable,
        Ok(None) => ScimOutcome::Mismatch,
        Ok(Some(record)) => {
            let email = record.get("email").and_then(Value::as_str);
            if email.is_some() && email == subject_data.email.as_deref() {
                ScimOutcome::Match
            } else {
                ScimOutcome::Mismatch
            }
        }
    }
}

fn claim_present(sdata: &Map<String, Value>, name: &str) -> bool {
    match sdata.get(name) {
        None | Some(Value::Null) => false,
        Some(Value::String(s)) => !s.is_empty(),
        Some(_) => true,
    }
}

/// Runs the validation pipeline for an `identity_share_token` grant. Never
/// fails on untrusted input: every outcome is a [`GrantDecision`]. On
/// acceptance the subject is provisioned according to the issuer profile.
pub async fn validate_share_grant<F: ScimFetcher>(
    req: &TokenRequest,
    registry: &Registry,
    scim: &F,
    now: i64,
) -> GrantDecision {
    use PipelineStage as S;

    let (Some(client_id), Some(secret)) = (req.client_id.as_deref(), req.client_secret.as_deref())
    else {
        return S::ClientAuthentication.reject("client credentials missing");
    };
    let Ok(client) = registry.authenticate_client(client_id, secret) else {
        return S::ClientAuthentication.reject("unknown client or bad secret");
    };

    if req.grant_type.as_deref() != Some(GRANT_IDENTITY_SHARE) {
        return S::GrantType.reject(format!("grant_type must be {GRANT_IDENTITY_SHARE}"));
    }
    if !client.allows_grant(GRANT_IDENTITY_SHARE) {
        return S::GrantType.reject("grant type not allowed for this client");
    }

    match verify_shared_token(req.shared_token.as_deref(), registry, scim, now).await {
        Ok(v) => {
            registry.provision_shadow_user(&v.subject_data, &v.origin_issuer, v.provisioning, now);
            GrantDecision::Accepted {
                client_id: client.client_id.clone(),
                subject_data: v.subject_data,
                origin_issuer: v.origin_issuer,
            }
        }
        Err(rejected) => rejected,
    }
}

/// Outcome of stages 3 to 10 for a token that passed all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedShare {
    pub subject_data: SubjectData,
    pub origin_issuer: String,
    pub provisioning: Provisioning,
}

/// Stages 3 to 10 alone: everything about the shared token itself, with no
/// client in the picture and no provisioning side effect.
pub async fn verify_shared_token<F: ScimFetcher>(
    shared: Option<&str>,
    registry: &Registry,
    scim: &F,
    now: i64,
) -> Result<VerifiedShare, GrantDecision> {
    use PipelineStage as S;

    let Some(shared) = shared.filter(|t| !t.is_empty()) else {
        return S::SharedToken.fail("shared_token parameter is missing");
    };
    let jwt = match decode_unverified(shared) {
        Ok(jwt) => jwt,
        Err(e) => return S::SharedToken.fail(format!("shared_token is not a JWT: {e}")),
    };

    let Some(iss) = jwt.claims.get("iss").and_then(Value::as_str) else {
        return S::Issuer.fail("`iss` claim missing");
    };
    let Some(profile) = registry.lookup_issuer(iss) else {
        return S::Issuer.fail(format!("`{iss}` is not a trusted identity provider"));
    };

    let audience: Option<Audience> = jwt
        .claims
        .get("aud")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok());
    match audience {
        Some(aud) if aud.contains(registry.issuer()) => {}
        Some(_) => return S::Audience.fail("token is not addressed to this identity provider"),
        None => return S::Audience.fail("`aud` claim missing or malformed"),
    }

    let (iat, exp) = match (int_claim(&jwt.claims, "iat"), int_claim(&jwt.claims, "exp")) {
        (Ok(Some(iat)), Ok(Some(exp))) => (iat, exp),
        _ => return S::Temporal.fail("`iat` and `exp` must be integers"),
    };
    if exp <= iat {
        return S::Temporal.fail(JoseError::Expired);
    }
    if let Err(e) = check_time_bounds(Some(iat), Some(exp), now, registry.policy().clock_skew) {
        return S::Temporal.fail(e);
    }

    if let Err(e) = jwt.verify(&profile.verification_key) {
        return S::Integrity.fail(e);
    }

    let sdata = match (&profile.sdata_mode, jwt.claims.get("sdata")) {
        (SdataMode::Plain, Some(Value::Object(m))) => m.clone(),
        (SdataMode::Sealed(key), Some(Value::String(blob))) => match open_sdata(blob, key) {
            Ok(m) => m,
            Err(e) => return S::SubjectData.fail(format!("cannot unseal sdata: {e}")),
        },
        (_, None) => return S::SubjectData.fail("`sdata` claim missing"),
        (SdataMode::Plain, Some(_)) => return S::SubjectData.fail("expected a plain sdata object"),
        (SdataMode::Sealed(_), Some(_)) => return S::SubjectData.fail("expected sealed sdata"),
    };

    if let Some(missing) = profile
        .mandatory_claims
        .iter()
        .find(|c| !claim_present(&sdata, c))
    {
        return S::MandatoryClaims.fail(format!("mandatory claim `{missing}` missing"));
    }
    let subject_data = match SubjectData::from_map(sdata) {
        Ok(s) => s,
        Err(e) => return S::MandatoryClaims.fail(e),
    };

    if profile.scim.is_some() {
        match scim_verify(&subject_data, profile, scim).await {
            ScimOutcome::Match => {}
            ScimOutcome::Mismatch => {
                return S::ScimVerification.fail("peer record does not match token claims")
            }
            ScimOutcome::Unavailable if registry.policy().scim_fail_open => {
                tracing::warn!(issuer = %profile.issuer, "SCIM unavailable, accepting per policy");
            }
            ScimOutcome::Unavailable => {
                return S::ScimVerification.fail("peer SCIM endpoint unavailable")
            }
        }
    }

    Ok(VerifiedShare {
        subject_data,
        origin_issuer: profile.issuer.clone(),
        provisioning: profile.provisioning,
    })
}

/// Turns an accepted decision into a token response. The access token is
/// an ordinary opaque token with the federated scope from policy; never an
/// id_token or a further identity-share token. Returns `None` for a
/// rejected decision.
pub fn grant_to_token_response(
    decision: &GrantDecision,
    registry: &Registry,
    now: i64,
) -> Option<TokenResponse> {
    let GrantDecision::Accepted {
        client_id,
        subject_data,
        origin_issuer,
    } = decision
    else {
        return None;
    };
    let scope = registry
        .policy()
        .federated_scope
        .parse::<Scope>()
        .unwrap_or_default()
        .without(SCOPE_IDENTITY_SHARE);
    let access = registry.issue_access_token(
        &subject_data.subject,
        client_id,
        scope,
        TokenOrigin::IdentityShareGrant {
            origin_issuer: origin_issuer.clone(),
        },
        now,
    );
    let mut response = TokenResponse::bearer(access.token.clone(), access.expires_at - now);
    if !access.scope.is_empty() {
        response.scope = Some(access.scope.to_string());
    }
    if registry.policy().issue_refresh_tokens {
        response.refresh_token = Some(registry.issue_refresh_token(&access, now).token);
    }
    Some(response)
}
