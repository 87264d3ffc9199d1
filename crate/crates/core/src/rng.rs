//! Per-run randomness derived from the institution's secret seed.
//!
//! Each stream is keyed by `HMAC-SHA256(secret, stay ‖ variable ‖ nonce ‖
//! scope ‖ purpose)` and drives a ChaCha20 generator. The secret is held in
//! memory only; it has no `Serialize` impl and its `Debug` output is
//! redacted.

use std::fmt;
use std::sync::Arc;

use hmac::{Hmac, Mac};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// Opaque secret bytes.
#[derive(Clone)]
pub struct SecretSeed(Vec<u8>);

impl SecretSeed {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    /// Reads the seed from the named environment variable.
    pub fn from_env(name: &str) -> Option<Self> {
        std::env::var(name)
            .ok()
            .filter(|s| !s.is_empty())
            .map(|s| Self(s.into_bytes()))
    }

    pub fn expose(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SecretSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretSeed(<redacted>)")
    }
}

#[derive(Clone, Debug)]
pub struct RandomnessContext {
    secret: Arc<SecretSeed>,
    stay_id: String,
    variable: String,
    run_nonce: u64,
    scope: String,
}

impl RandomnessContext {
    pub fn new(
        secret: Arc<SecretSeed>,
        stay_id: impl Into<String>,
        variable: impl Into<String>,
        run_nonce: u64,
    ) -> Self {
        Self {
            secret,
            stay_id: stay_id.into(),
            variable: variable.into(),
            run_nonce,
            scope: String::new(),
        }
    }

    /// Convenience constructor for tests and examples.
    pub fn from_parts(seed: &[u8], stay_id: &str, variable: &str, run_nonce: u64) -> Self {
        Self::new(
            Arc::new(SecretSeed::new(seed)),
            stay_id,
            variable,
            run_nonce,
        )
    }

    pub fn stay_id(&self) -> &str {
        &self.stay_id
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }

    pub fn run_nonce(&self) -> u64 {
        self.run_nonce
    }

    /// Same secret, variable and nonce, different stay.
    pub fn for_stay(&self, stay_id: &str) -> Self {
        Self {
            stay_id: stay_id.to_string(),
            ..self.clone()
        }
    }

    /// A context whose streams are independent of this one's.
    pub fn scoped(&self, label: &str) -> Self {
        let mut scope = self.scope.clone();
        scope.push('/');
        scope.push_str(label);
        Self {
            scope,
            ..self.clone()
        }
    }

    /// Deterministic generator for one purpose inside this context.
    pub fn stream(&self, purpose: &str) -> ChaCha20Rng {
        let mut mac = HmacSha256::new_from_slice(self.secret.expose())
            .expect("HMAC accepts keys of any length");
        for part in [
            self.stay_id.as_bytes(),
            self.variable.as_bytes(),
            &self.run_nonce.to_le_bytes(),
            self.scope.as_bytes(),
            purpose.as_bytes(),
        ] {
            mac.update(&(part.len() as u64).to_le_bytes());
            mac.update(part);
        }
        let key: [u8; 32] = mac.finalize().into_bytes().into();
        ChaCha20Rng::from_seed(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn first(ctx: &RandomnessContext, p: &str) -> u64 {
        ctx.stream(p).gen()
    }

    #[test]
    fn streams_are_deterministic_and_separated() {
        let a = RandomnessContext::from_parts(b"k", "s1", "HR", 1);
        let b = RandomnessContext::from_parts(b"k", "s1", "HR", 1);
        assert_eq!(first(&a, "t1"), first(&b, "t1"));
        assert_ne!(first(&a, "t1"), first(&a, "t2"));
        assert_ne!(first(&a, "t1"), first(&a.for_stay("s2"), "t1"));
        assert_ne!(first(&a, "t1"), first(&a.scoped("inner"), "t1"));
        let other_key = RandomnessContext::from_parts(b"k2", "s1", "HR", 1);
        assert_ne!(first(&a, "t1"), first(&other_key, "t1"));
        let other_nonce = RandomnessContext::from_parts(b"k", "s1", "HR", 2);
        assert_ne!(first(&a, "t1"), first(&other_nonce, "t1"));
    }

    #[test]
    fn length_prefix_prevents_field_shifting() {
        let a = RandomnessContext::from_parts(b"k", "ab", "c", 0);
        let b = RandomnessContext::from_parts(b"k", "a", "bc", 0);
        assert_ne!(first(&a, "x"), first(&b, "x"));
    }

    #[test]
    fn debug_hides_secret() {
        let ctx = RandomnessContext::from_parts(b"super-secret-value", "s", "v", 0);
        let dbg = format!("{ctx:?}");
        assert!(!dbg.contains("super-secret-value"));
        assert!(dbg.contains("redacted"));
    }
}
