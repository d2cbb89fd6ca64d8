//! Pluggable authenticity tags.
//!
//! The default scheme is a keyed hash: every principal's key is derived
//! from its identity and the tag is `H(key || message)`. It is only sound
//! inside a closed simulation where no participant forges keys, which is
//! the environment this crate models. Real asymmetric schemes implement
//! the same trait.

use serde::{Deserialize, Serialize};

use crate::hash::Hash256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Principal {
    Account(u64),
    Node(u32),
}

impl Principal {
    fn key(self) -> Hash256 {
        match self {
            Principal::Account(a) => Hash256::digest_parts(&[b"chainbench/account-key", &a.to_be_bytes()]),
            Principal::Node(n) => Hash256::digest_parts(&[b"chainbench/node-key", &n.to_be_bytes()]),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(pub Hash256);

pub trait Signer: Send + Sync {
    fn name(&self) -> &'static str;
    fn sign(&self, who: Principal, message: &Hash256) -> Signature;
    fn verify(&self, who: Principal, message: &Hash256, sig: &Signature) -> bool;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KeyedHashSigner;

impl Signer for KeyedHashSigner {
    fn name(&self) -> &'static str {
        "keyed-sha256"
    }

    fn sign(&self, who: Principal, message: &Hash256) -> Signature {
        Signature(Hash256::digest_parts(&[&who.key().0, &message.0]))
    }

    fn verify(&self, who: Principal, message: &Hash256, sig: &Signature) -> bool {
        self.sign(who, message) == *sig
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_bind_principal_and_message() {
        let s = KeyedHashSigner;
        let m = Hash256::digest(b"m");
        let sig = s.sign(Principal::Node(1), &m);
        assert!(s.verify(Principal::Node(1), &m, &sig));
        assert!(!s.verify(Principal::Node(2), &m, &sig));
        assert!(!s.verify(Principal::Account(1), &m, &sig));
        assert!(!s.verify(Principal::Node(1), &Hash256::digest(b"n"), &sig));
    }
}
