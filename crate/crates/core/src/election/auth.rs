//! Password hashing and session tokens.

use std::time::{Duration, SystemTime};

use pbkdf2::pbkdf2_hmac;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;

pub const MIN_PASSWORD_LEN: usize = 8;
pub const DEFAULT_PASSWORD_ITERATIONS: u32 = 100_000;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(30 * 60);

/// PBKDF2-HMAC-SHA256 over a per-voter salt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordHash {
    #[serde(with = "hex::serde")]
    pub salt: [u8; 16],
    #[serde(with = "hex::serde")]
    pub hash: [u8; 32],
    pub iterations: u32,
}

impl PasswordHash {
    pub fn new(password: &str, iterations: u32) -> Self {
        let mut salt = [0u8; 16];
        OsRng.fill_bytes(&mut salt);
        Self {
            hash: derive(password, &salt, iterations),
            salt,
            iterations,
        }
    }

    pub fn verify(&self, password: &str) -> bool {
        let candidate = derive(password, &self.salt, self.iterations);
        candidate.ct_eq(&self.hash).into()
    }

    /// Burns the same work as a real check; used for unknown voter ids so
    /// that failures take the same time either way.
    pub fn dummy_verify(password: &str, iterations: u32) {
        let _ = derive(password, &[0u8; 16], iterations);
    }
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations.max(1), &mut out);
    out
}

pub fn random_token() -> String {
    let mut bytes = [0u8; 32];
    OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub voter_id: String,
    /// UTC milliseconds since the epoch.
    pub expires_at: u64,
}

impl SessionToken {
    pub fn issue(voter_id: &str, ttl: Duration) -> Self {
        let expires = SystemTime::now() + ttl;
        Self {
            token: random_token(),
            voter_id: voter_id.to_string(),
            expires_at: expires
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }

    pub fn is_expired(&self, now_millis: u64) -> bool {
        now_millis >= self.expires_at
    }
}

/// Constant-time string comparison for admin credentials.
pub fn credentials_match(expected: &str, given: &str) -> bool {
    expected.len() == given.len() && bool::from(expected.as_bytes().ct_eq(given.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_verifies_only_the_right_password() {
        let h = PasswordHash::new("correct horse", 1000);
        assert!(h.verify("correct horse"));
        assert!(!h.verify("correct horsE"));
        let again = PasswordHash::new("correct horse", 1000);
        assert_ne!(h.salt, again.salt);
        assert_ne!(h.hash, again.hash);
    }

    #[test]
    fn pbkdf2_matches_reference_vector() {
        // RFC 7914 section 11, PBKDF2-HMAC-SHA256("passwd", "salt", c=1)
        let mut out = [0u8; 64];
        pbkdf2_hmac::<Sha256>(b"passwd", b"salt", 1, &mut out);
        assert_eq!(hex::encode(&out[..16]), "55ac046e56e3089fec1691c22544b605");
    }

    #[test]
    fn session_expiry() {
        let t = SessionToken::issue("v", Duration::ZERO);
        assert!(t.is_expired(t.expires_at));
        let t = SessionToken::issue("v", DEFAULT_SESSION_TTL);
        assert!(!t.is_expired(t.expires_at - 1));
        assert_eq!(t.token.len(), 64);
    }

    #[test]
    fn credential_comparison() {
        assert!(credentials_match("secret-admin", "secret-admin"));
        assert!(!credentials_match("secret-admin", "secret-admiN"));
        assert!(!credentials_match("secret-admin", "secret"));
    }
}
