//! The three trust legs of a federation member: trusted peer identity
//! providers, registered clients and local user accounts. Also owns the
//! runtime stores (codes, tokens, shadow accounts) so that every mutation
//! goes through one place.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use serde_json::{json, Map, Value};

use crate::config::{
    IdpConfig, PolicyConfig, ProvisioningConfig, SdataConfig, VerificationKeyConfig,
};
use crate::error::ConfigError;
use crate::jwt::{b64url_decode, KeyKind, KeyMaterial};
use crate::secret::SecretHash;
use crate::token::{
    generate_opaque_token, is_absolute_uri, AccessTokenRecord, AuthorizationCodeRecord,
    RefreshTokenRecord, Scope, SubjectData, TokenOrigin, SCOPE_IDENTITY_SHARE,
};

#[derive(Debug, Clone)]
pub enum SdataMode {
    Plain,
    Sealed(KeyMaterial),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provisioning {
    None,
    Temporary { ttl: i64 },
    Permanent,
}

#[derive(Debug, Clone)]
pub struct ScimSettings {
    pub base_url: String,
    pub client_id: String,
    pub client_secret: String,
}

/// Everything this instance knows about one trusted peer.
#[derive(Debug, Clone)]
pub struct TrustedIssuerProfile {
    pub issuer: String,
    pub verification_key: KeyMaterial,
    pub sdata_mode: SdataMode,
    pub mandatory_claims: Vec<String>,
    pub scim: Option<ScimSettings>,
    pub provisioning: Provisioning,
}

#[derive(Debug, Clone)]
pub struct ClientRegistration {
    pub client_id: String,
    pub client_secret_hash: SecretHash,
    pub redirect_uris: Vec<String>,
    pub allowed_grant_types: BTreeSet<String>,
    pub allowed_scopes: Scope,
    pub share_targets: Option<Vec<String>>,
}

impl ClientRegistration {
    /// Exact string comparison, no normalization.
    pub fn has_redirect_uri(&self, uri: &str) -> bool {
        self.redirect_uris.iter().any(|r| r == uri)
    }

    pub fn allows_grant(&self, grant_type: &str) -> bool {
        self.allowed_grant_types.contains(grant_type)
    }

    pub fn may_target(&self, issuer: &str) -> bool {
        self.share_targets
            .as_ref()
            .is_none_or(|t| t.iter().any(|x| x == issuer))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccountKind {
    Local {
        password_hash: SecretHash,
    },
    /// Materialized from a peer domain's subject data. Never has a password.
    Shadow {
        origin: String,
        expires: Option<i64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserAccount {
    pub username: String,
    pub subject: String,
    pub claims: SubjectData,
    pub kind: AccountKind,
}

impl UserAccount {
    pub fn is_shadow(&self) -> bool {
        matches!(self.kind, AccountKind::Shadow { .. })
    }

    pub fn shadow_origin(&self) -> Option<&str> {
        match &self.kind {
            AccountKind::Shadow { origin, .. } => Some(origin),
            AccountKind::Local { .. } => None,
        }
    }

    pub fn shadow_expires(&self) -> Option<i64> {
        match &self.kind {
            AccountKind::Shadow { expires, .. } => *expires,
            AccountKind::Local { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid client")]
pub struct InvalidClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CodeError {
    #[error("unknown authorization code")]
    Unknown,
    #[error("authorization code expired")]
    Expired,
    #[error("authorization code already used")]
    Redeemed,
    #[error("authorization code was issued to another client")]
    ClientMismatch,
    #[error("redirect_uri does not match the authorization request")]
    RedirectMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RefreshError {
    #[error("unknown refresh token")]
    Unknown,
    #[error("refresh token expired")]
    Expired,
    #[error("refresh token was issued to another client")]
    ClientMismatch,
}

#[derive(Debug)]
pub struct Registry {
    issuer: String,
    listen: Option<String>,
    signing_key: KeyMaterial,
    policy: PolicyConfig,
    trusted: Vec<TrustedIssuerProfile>,
    clients: HashMap<String, ClientRegistration>,
    /// Local accounts by username.
    users: HashMap<String, UserAccount>,
    /// Shadow accounts by (origin issuer, subject).
    shadows: RwLock<HashMap<(String, String), UserAccount>>,
    codes: Mutex<HashMap<String, AuthorizationCodeRecord>>,
    access_tokens: RwLock<HashMap<String, AccessTokenRecord>>,
    refresh_tokens: Mutex<HashMap<String, RefreshTokenRecord>>,
    /// Compared against for unknown client ids so both failure paths cost
    /// one hash verification.
    dummy_hash: SecretHash,
}

fn schema(msg: impl Into<String>) -> ConfigError {
    ConfigError::Schema(msg.into())
}

fn key_err(context: impl Into<String>) -> impl FnOnce(crate::error::JoseError) -> ConfigError {
    let context = context.into();
    move |source| ConfigError::Key { context, source }
}

fn hash_from(
    clear: Option<&str>,
    hashed: Option<&str>,
    what: &str,
) -> Result<SecretHash, ConfigError> {
    match (clear, hashed) {
        (Some(c), None) => Ok(SecretHash::new(c)),
        (None, Some(h)) => h.parse().map_err(|e| schema(format!("{what}: {e}"))),
        _ => Err(schema(format!(
            "{what}: give exactly one of the clear and hashed forms"
        ))),
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<Registry, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg: IdpConfig =
        serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))?;
    Registry::from_config(cfg, path.parent().unwrap_or(Path::new(".")))
}

impl Registry {
    /// Builds a registry from parsed configuration. Relative key file paths
    /// resolve against `base_dir`.
    pub fn from_config(cfg: IdpConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        if !is_absolute_uri(&cfg.issuer) {
            return Err(schema(format!(
                "issuer `{}` is not an absolute URI",
                cfg.issuer
            )));
        }
        let policy = cfg.policy;
        for (name, v) in [
            ("code_ttl", policy.code_ttl),
            ("access_token_ttl", policy.access_token_ttl),
            ("share_token_ttl", policy.share_token_ttl),
            ("id_token_ttl", policy.id_token_ttl),
            ("refresh_token_ttl", policy.refresh_token_ttl),
            ("login_ttl", policy.login_ttl),
        ] {
            if v <= 0 {
                return Err(schema(format!("policy.{name} must be positive")));
            }
        }
        if policy.clock_skew < 0 {
            return Err(schema("policy.clock_skew must not be negative"));
        }
        let federated: Scope = policy.federated_scope.parse().unwrap_or_default();
        if federated.contains(SCOPE_IDENTITY_SHARE) {
            return Err(schema(
                "policy.federated_scope must not include identity_share",
            ));
        }

        let pem = match (
            &cfg.signing_keys.rs256_private_pem,
            &cfg.signing_keys.rs256_private_pem_file,
        ) {
            (Some(pem), None) => pem.clone(),
            (None, Some(file)) => {
                let p = base_dir.join(file);
                std::fs::read_to_string(&p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?
            }
            _ => return Err(schema(
                "signing_keys: give exactly one of rs256_private_pem and rs256_private_pem_file",
            )),
        };
        let mut signing_key =
            KeyMaterial::rsa_private_pem(&pem).map_err(key_err("signing_keys"))?;
        if let Some(kid) = cfg.signing_keys.kid {
            signing_key = signing_key.with_key_id(kid);
        }

        let mut trusted: Vec<TrustedIssuerProfile> = Vec::new();
        for t in cfg.trusted_issuers {
            let ctx = format!("trusted issuer `{}`", t.issuer);
            if trusted.iter().any(|p| p.issuer == t.issuer) {
                return Err(ConfigError::Duplicate {
                    kind: "trusted issuer",
                    id: t.issuer,
                });
            }
            if !is_absolute_uri(&t.issuer) {
                return Err(schema(format!("{ctx}: not an absolute URI")));
            }
            if t.issuer == cfg.issuer {
                return Err(schema(format!("{ctx}: an instance cannot trust itself")));
            }
            let verification_key = match &t.verification_key {
                VerificationKeyConfig::Hs256Secret(s) => {
                    let bytes = b64url_decode(s).map_err(key_err(ctx.clone()))?;
                    KeyMaterial::symmetric(bytes).map_err(key_err(ctx.clone()))?
                }
                VerificationKeyConfig::Rs256Jwk(jwk) => {
                    KeyMaterial::rsa_public_jwk(jwk).map_err(key_err(ctx.clone()))?
                }
            };
            let sdata_mode = match &t.sdata {
                SdataConfig::Plain => SdataMode::Plain,
                SdataConfig::Sealed { key } => {
                    let bytes = b64url_decode(key).map_err(key_err(ctx.clone()))?;
                    if bytes.len() != 32 {
                        return Err(schema(format!("{ctx}: sealing key must be 32 bytes")));
                    }
                    SdataMode::Sealed(KeyMaterial::symmetric(bytes).map_err(key_err(ctx.clone()))?)
                }
            };
            let scim = match t.scim {
                Some(s) if !is_absolute_uri(&s.base_url) => {
                    return Err(schema(format!(
                        "{ctx}: scim.base_url is not an absolute URI"
                    )))
                }
                Some(s) => Some(ScimSettings {
                    base_url: s.base_url.trim_end_matches('/').to_owned(),
                    client_id: s.client_id,
                    client_secret: s.client_secret,
                }),
                None => None,
            };
            let provisioning = match t.provisioning {
                ProvisioningConfig::None => Provisioning::None,
                ProvisioningConfig::Temporary { ttl } if ttl > 0 => Provisioning::Temporary { ttl },
                ProvisioningConfig::Temporary { .. } => {
                    return Err(schema(format!("{ctx}: provisioning ttl must be positive")))
                }
                ProvisioningConfig::Permanent => Provisioning::Permanent,
            };
            trusted.push(TrustedIssuerProfile {
                issuer: t.issuer,
                verification_key,
                sdata_mode,
                mandatory_claims: t.mandatory_claims,
                scim,
                provisioning,
            });
        }

        let mut clients = HashMap::new();
        for c in cfg.clients {
            if clients.contains_key(&c.client_id) {
                return Err(ConfigError::Duplicate {
                    kind: "client",
                    id: c.client_id,
                });
            }
            let ctx = format!("client `{}`", c.client_id);
            let client_secret_hash = hash_from(
                c.client_secret.as_deref(),
                c.client_secret_hash.as_deref(),
                &ctx,
            )?;
            if let Some(bad) = c.redirect_uris.iter().find(|u| !is_absolute_uri(u)) {
                return Err(schema(format!(
                    "{ctx}: redirect URI `{bad}` is not absolute"
                )));
            }
            if let Some(targets) = &c.share_targets {
                if let Some(unknown) = targets
                    .iter()
                    .find(|t| !trusted.iter().any(|p| &p.issuer == *t))
                {
                    return Err(ConfigError::UnknownIssuer(unknown.clone()));
                }
            }
            clients.insert(
                c.client_id.clone(),
                ClientRegistration {
                    client_id: c.client_id,
                    client_secret_hash,
                    redirect_uris: c.redirect_uris,
                    allowed_grant_types: c.grant_types.into_iter().collect(),
                    allowed_scopes: c.scopes.iter().map(String::as_str).collect(),
                    share_targets: c.share_targets,
                },
            );
        }

        let mut users = HashMap::new();
        let mut subjects = BTreeSet::new();
        for u in cfg.users {
            if users.contains_key(&u.username) {
                return Err(ConfigError::Duplicate {
                    kind: "user",
                    id: u.username,
                });
            }
            if !subjects.insert(u.subject.clone()) {
                return Err(ConfigError::Duplicate {
                    kind: "user subject",
                    id: u.subject,
                });
            }
            let ctx = format!("user `{}`", u.username);
            let password_hash = hash_from(u.password.as_deref(), u.password_hash.as_deref(), &ctx)?;
            let mut claims = SubjectData::new(u.subject.clone(), u.email);
            for (k, v) in u.claims {
                claims = claims
                    .with_extra(&k, v)
                    .map_err(|e| schema(format!("{ctx}: {e}")))?;
            }
            if claims.subject.is_empty() {
                return Err(schema(format!("{ctx}: empty subject")));
            }
            users.insert(
                u.username.clone(),
                UserAccount {
                    username: u.username,
                    subject: u.subject,
                    claims,
                    kind: AccountKind::Local { password_hash },
                },
            );
        }

        Ok(Self {
            issuer: cfg.issuer,
            listen: cfg.listen,
            signing_key,
            policy,
            trusted,
            clients,
            users,
            shadows: RwLock::default(),
            codes: Mutex::default(),
            access_tokens: RwLock::default(),
            refresh_tokens: Mutex::default(),
            dummy_hash: SecretHash::new("not-a-client-secret"),
        })
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn listen(&self) -> Option<&str> {
        self.listen.as_deref()
    }

    pub fn signing_key(&self) -> &KeyMaterial {
        &self.signing_key
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    pub fn trusted_issuers(&self) -> &[TrustedIssuerProfile] {
        &self.trusted
    }

    /// Exact string match; no URI normalization.
    pub fn lookup_issuer(&self, issuer: &str) -> Option<&TrustedIssuerProfile> {
        self.trusted.iter().find(|p| p.issuer == issuer)
    }

    pub fn client(&self, client_id: &str) -> Option<&ClientRegistration> {
        self.clients.get(client_id)
    }

    /// Unknown id and wrong secret are indistinguishable to the caller and
    /// both perform exactly one hash verification.
    pub fn authenticate_client(
        &self,
        client_id: &str,
        client_secret: &str,
    ) -> Result<&ClientRegistration, InvalidClient> {
        match self.clients.get(client_id) {
            Some(c) if c.client_secret_hash.verify(client_secret) => Ok(c),
            Some(_) => Err(InvalidClient),
            None => {
                let _ = self.dummy_hash.verify(client_secret);
                Err(InvalidClient)
            }
        }
    }

    pub fn authenticate_user(&self, username: &str, password: &str) -> Option<&UserAccount> {
        let user = self.users.get(username)?;
        match &user.kind {
            AccountKind::Local { password_hash } if password_hash.verify(password) => Some(user),
            _ => None,
        }
    }

    /// Local (non-shadow) account by subject identifier.
    pub fn local_user_by_subject(&self, subject: &str) -> Option<&UserAccount> {
        self.users.values().find(|u| u.subject == subject)
    }

    /// Creates or refreshes the shadow account for `(origin, subject)`.
    /// Returns `None` when the policy is [`Provisioning::None`].
    pub fn provision_shadow_user(
        &self,
        subject_data: &SubjectData,
        origin: &str,
        policy: Provisioning,
        now: i64,
    ) -> Option<UserAccount> {
        let expires = match policy {
            Provisioning::None => return None,
            Provisioning::Temporary { ttl } => Some(now + ttl),
            Provisioning::Permanent => None,
        };
        let key = (origin.to_owned(), subject_data.subject.clone());
        let mut shadows = self.shadows.write();
        let account = shadows.entry(key).or_insert_with(|| UserAccount {
            username: format!("{}@{}", subject_data.subject, origin),
            subject: subject_data.subject.clone(),
            claims: subject_data.clone(),
            kind: AccountKind::Shadow {
                origin: origin.to_owned(),
                expires,
            },
        });
        account.claims = subject_data.clone();
        account.kind = AccountKind::Shadow {
            origin: origin.to_owned(),
            expires,
        };
        Some(account.clone())
    }

    pub fn shadow_user(&self, origin: &str, subject: &str) -> Option<UserAccount> {
        self.shadows
            .read()
            .get(&(origin.to_owned(), subject.to_owned()))
            .cloned()
    }

    pub fn shadow_count(&self) -> usize {
        self.shadows.read().len()
    }

    pub fn insert_code(&self, record: AuthorizationCodeRecord) {
        self.codes.lock().insert(record.code.clone(), record);
    }

    /// Checks and consumes a code in one critical section.
    pub fn redeem_code(
        &self,
        code: &str,
        client_id: &str,
        redirect_uri: Option<&str>,
        now: i64,
    ) -> Result<AuthorizationCodeRecord, CodeError> {
        let mut codes = self.codes.lock();
        let rec = codes.get_mut(code).ok_or(CodeError::Unknown)?;
        if rec.redeemed {
            return Err(CodeError::Redeemed);
        }
        if rec.is_expired(now) {
            return Err(CodeError::Expired);
        }
        if rec.client_id != client_id {
            return Err(CodeError::ClientMismatch);
        }
        if redirect_uri != Some(rec.redirect_uri.as_str()) {
            return Err(CodeError::RedirectMismatch);
        }
        rec.redeemed = true;
        Ok(rec.clone())
    }

    /// Mints and stores an opaque access token using the configured ttl.
    pub fn issue_access_token(
        &self,
        subject: &str,
        client_id: &str,
        scope: Scope,
        origin: TokenOrigin,
        now: i64,
    ) -> AccessTokenRecord {
        let record = AccessTokenRecord {
            token: generate_opaque_token(),
            subject: subject.to_owned(),
            client_id: client_id.to_owned(),
            scope,
            issuer: self.issuer.clone(),
            issued_at: now,
            expires_at: now + self.policy.access_token_ttl,
            origin,
        };
        self.store_access_token(record.clone());
        record
    }

    pub fn issue_refresh_token(&self, access: &AccessTokenRecord, now: i64) -> RefreshTokenRecord {
        let record = RefreshTokenRecord {
            token: generate_opaque_token(),
            subject: access.subject.clone(),
            client_id: access.client_id.clone(),
            scope: access.scope.clone(),
            issued_at: now,
            expires_at: now + self.policy.refresh_token_ttl,
            origin: access.origin.clone(),
        };
        self.store_refresh_token(record.clone());
        record
    }

    pub fn store_access_token(&self, record: AccessTokenRecord) {
        self.access_tokens
            .write()
            .insert(record.token.clone(), record);
    }

    pub fn access_token(&self, token: &str) -> Option<AccessTokenRecord> {
        self.access_tokens.read().get(token).cloned()
    }

    pub fn store_refresh_token(&self, record: RefreshTokenRecord) {
        self.refresh_tokens
            .lock()
            .insert(record.token.clone(), record);
    }

    /// Removes and returns a live refresh token bound to `client_id`.
    pub fn take_refresh_token(
        &self,
        token: &str,
        client_id: &str,
        now: i64,
    ) -> Result<RefreshTokenRecord, RefreshError> {
        let mut store = self.refresh_tokens.lock();
        let rec = store.get(token).ok_or(RefreshError::Unknown)?;
        if rec.client_id != client_id {
            return Err(RefreshError::ClientMismatch);
        }
        if now >= rec.expires_at {
            store.remove(token);
            return Err(RefreshError::Expired);
        }
        Ok(store.remove(token).expect("present"))
    }

    /// Secret-free snapshot for diagnostics. Only hashes and public key
    /// parameters appear.
    pub fn dump(&self) -> Value {
        let trusted: Vec<Value> = self
            .trusted
            .iter()
            .map(|p| {
                json!({
                    "issuer": p.issuer,
                    "verification_key": match p.verification_key.kind() {
                        KeyKind::Symmetric => json!("hs256-shared-secret"),
                        _ => p.verification_key.public_jwk().unwrap_or(Value::Null),
                    },
                    "sdata": match p.sdata_mode { SdataMode::Plain => "plain", SdataMode::Sealed(_) => "sealed" },
                    "mandatory_claims": p.mandatory_claims,
                    "scim": p.scim.as_ref().map(|s| json!({"base_url": s.base_url, "client_id": s.client_id})),
                    "provisioning": format!("{:?}", p.provisioning),
                })
            })
            .collect();
        let mut clients: Vec<&ClientRegistration> = self.clients.values().collect();
        clients.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        let clients: Vec<Value> = clients
            .into_iter()
            .map(|c| {
                json!({
                    "client_id": c.client_id,
                    "client_secret_hash": c.client_secret_hash.to_string(),
                    "redirect_uris": c.redirect_uris,
                    "grant_types": c.allowed_grant_types,
                    "scopes": c.allowed_scopes,
                })
            })
            .collect();
        let mut users: Vec<&UserAccount> = self.users.values().collect();
        users.sort_by(|a, b| a.username.cmp(&b.username));
        let users: Vec<Value> = users
            .into_iter()
            .map(|u| {
                let hash = match &u.kind {
                    AccountKind::Local { password_hash } => Value::from(password_hash.to_string()),
                    AccountKind::Shadow { .. } => Value::Null,
                };
                json!({"username": u.username, "subject": u.subject, "password_hash": hash, "claims": u.claims})
            })
            .collect();
        let mut out = Map::new();
        out.insert("issuer".into(), self.issuer.clone().into());
        out.insert(
            "signing_key".into(),
            self.signing_key.public_jwk().unwrap_or(Value::Null),
        );
        out.insert("trusted_issuers".into(), trusted.into());
        out.insert("clients".into(), clients.into());
        out.insert("users".into(), users.into());
        out.insert("shadow_users".into(), self.shadow_count().into());
        Value::Object(out)
    }
}
