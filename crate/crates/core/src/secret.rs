//! Salted PBKDF2-HMAC-SHA256 hashes for client secrets and user passwords.
//!
//! Stored form: `pbkdf2-sha256$<iterations>$<salt b64url>$<hash b64url>`.

use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use ring::pbkdf2;

use crate::jwt::{b64url_decode, b64url_encode, fill_random};

pub const DEFAULT_ITERATIONS: u32 = 10_000;
const PREFIX: &str = "pbkdf2-sha256";
const HASH_LEN: usize = 32;

#[derive(Clone, PartialEq, Eq)]
pub struct SecretHash {
    iterations: NonZeroU32,
    salt: Vec<u8>,
    hash: Vec<u8>,
}

impl fmt::Debug for SecretHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretHash(..)")
    }
}

impl SecretHash {
    pub fn new(secret: &str) -> Self {
        Self::with_iterations(secret, DEFAULT_ITERATIONS)
    }

    pub fn with_iterations(secret: &str, iterations: u32) -> Self {
        let iterations = NonZeroU32::new(iterations.max(1)).unwrap();
        let mut salt = vec![0u8; 16];
        fill_random(&mut salt);
        let mut hash = vec![0u8; HASH_LEN];
        pbkdf2::derive(
            pbkdf2::PBKDF2_HMAC_SHA256,
            iterations,
            &salt,
            secret.as_bytes(),
            &mut hash,
        );
        Self {
            iterations,
            salt,
            hash,
        }
    }

    /// Constant-time comparison.
    pub fn verify(&self, candidate: &str) -> bool {
        pbkdf2::verify(
            pbkdf2::PBKDF2_HMAC_SHA256,
            self.iterations,
            &self.salt,
            candidate.as_bytes(),
            &self.hash,
        )
        .is_ok()
    }
}

impl fmt::Display for SecretHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{PREFIX}${}${}${}",
            self.iterations,
            b64url_encode(&self.salt),
            b64url_encode(&self.hash)
        )
    }
}

impl FromStr for SecretHash {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('$').collect();
        let [prefix, iterations, salt, hash] = parts.as_slice() else {
            return Err("expected pbkdf2-sha256$<iterations>$<salt>$<hash>".into());
        };
        if *prefix != PREFIX {
            return Err(format!("unsupported hash scheme `{prefix}`"));
        }
        let iterations = iterations
            .parse::<u32>()
            .ok()
            .and_then(NonZeroU32::new)
            .ok_or("bad iteration count")?;
        let salt = b64url_decode(salt).map_err(|_| "bad salt")?;
        let hash = b64url_decode(hash).map_err(|_| "bad hash")?;
        if salt.is_empty() || hash.len() != HASH_LEN {
            return Err("bad salt or hash length".into());
        }
        Ok(Self {
            iterations,
            salt,
            hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_and_reject() {
        let h = SecretHash::with_iterations("uTbC67PqAmbrS1Mx9j2", 100);
        assert!(h.verify("uTbC67PqAmbrS1Mx9j2"));
        assert!(!h.verify("uTbC67PqAmbrS1Mx9j3"));
        assert!(!h.verify(""));
    }

    #[test]
    fn salted() {
        let a = SecretHash::with_iterations("same", 100);
        let b = SecretHash::with_iterations("same", 100);
        assert_ne!(a.to_string(), b.to_string());
    }

    #[test]
    fn string_form_round_trips() {
        let h = SecretHash::with_iterations("pw", 100);
        let s = h.to_string();
        assert!(s.starts_with("pbkdf2-sha256$100$"));
        assert!(!s.contains("pw$"));
        let back: SecretHash = s.parse().unwrap();
        assert!(back.verify("pw"));
        assert!("md5$1$a$b".parse::<SecretHash>().is_err());
    }
}
