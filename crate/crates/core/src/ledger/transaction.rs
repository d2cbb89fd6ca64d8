use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::hash::Hash256;
use crate::ledger::signer::{Principal, Signature, Signer};

/// Account that originates transactions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub u64);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acct{}", self.0)
    }
}

/// Typed contract argument.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Value {
    Int(i64),
    Bytes(#[serde(with = "hex_bytes")] Vec<u8>),
    Str(String),
}

impl Value {
    const TAG_INT: u8 = 0;
    const TAG_BYTES: u8 = 1;
    const TAG_STR: u8 = 2;

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            Value::Str(s) => Some(s.as_bytes()),
            _ => None,
        }
    }

    pub fn encode(&self, e: &mut Encoder) {
        match self {
            Value::Int(v) => {
                e.u8(Self::TAG_INT).i64(*v);
            }
            Value::Bytes(b) => {
                e.u8(Self::TAG_BYTES).bytes(b);
            }
            Value::Str(s) => {
                e.u8(Self::TAG_STR).str(s);
            }
        }
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let offset = d.offset();
        match d.u8()? {
            Self::TAG_INT => Ok(Value::Int(d.i64()?)),
            Self::TAG_BYTES => Ok(Value::Bytes(d.bytes()?)),
            Self::TAG_STR => Ok(Value::Str(d.str()?)),
            tag => Err(DecodeError::BadTag { tag, offset }),
        }
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// A signed contract invocation.
///
/// `id` is the hash of the canonical encoding of every other field except
/// the signature, and the signature is taken over `id`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: Hash256,
    pub sender: AccountId,
    pub contract: String,
    pub method: String,
    pub args: Vec<Value>,
    /// Per-sender sequence number; keeps otherwise identical requests distinct.
    pub nonce: u64,
    pub submit_time: u64,
    pub signature: Signature,
}

impl Transaction {
    pub fn new(
        sender: AccountId,
        contract: impl Into<String>,
        method: impl Into<String>,
        args: Vec<Value>,
        nonce: u64,
        submit_time: u64,
        signer: &dyn Signer,
    ) -> Self {
        let mut txn = Transaction {
            id: Hash256::ZERO,
            sender,
            contract: contract.into(),
            method: method.into(),
            args,
            nonce,
            submit_time,
            signature: Signature::default(),
        };
        txn.id = txn.compute_id();
        txn.signature = signer.sign(Principal::Account(sender.0), &txn.id);
        txn
    }

    fn encode_body(&self, e: &mut Encoder) {
        e.u64(self.sender.0)
            .str(&self.contract)
            .str(&self.method)
            .u32(self.args.len() as u32);
        for a in &self.args {
            a.encode(e);
        }
        e.u64(self.nonce).u64(self.submit_time);
    }

    pub fn compute_id(&self) -> Hash256 {
        let mut e = Encoder::with_capacity(96);
        self.encode_body(&mut e);
        Hash256::digest(e.as_slice())
    }

    /// Checks both the id binding and the sender's signature.
    pub fn verify(&self, signer: &dyn Signer) -> bool {
        self.compute_id() == self.id
            && signer.verify(Principal::Account(self.sender.0), &self.id, &self.signature)
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.digest(&self.id);
        self.encode_body(e);
        e.digest(&self.signature.0);
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let id = d.digest()?;
        let sender = AccountId(d.u64()?);
        let contract = d.str()?;
        let method = d.str()?;
        let n = d.u32()? as usize;
        let mut args = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            args.push(Value::decode(d)?);
        }
        let nonce = d.u64()?;
        let submit_time = d.u64()?;
        let signature = Signature(d.digest()?);
        Ok(Transaction { id, sender, contract, method, args, nonce, submit_time, signature })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(160);
        self.encode(&mut e);
        e.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(b);
        let t = Self::decode(&mut d)?;
        d.finish()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::signer::KeyedHashSigner;

    fn sample() -> Transaction {
        Transaction::new(
            AccountId(7),
            "kvstore",
            "write",
            vec![Value::Str("k".into()), Value::Bytes(vec![1, 2, 3])],
            0,
            42,
            &KeyedHashSigner,
        )
    }

    #[test]
    fn id_covers_fields_and_signature_verifies() {
        let t = sample();
        assert!(t.verify(&KeyedHashSigner));
        let mut other = t.clone();
        other.args[0] = Value::Str("j".into());
        assert!(!other.verify(&KeyedHashSigner));
        let mut forged = t.clone();
        forged.sender = AccountId(8);
        forged.id = forged.compute_id();
        assert!(!forged.verify(&KeyedHashSigner));
    }

    #[test]
    fn binary_roundtrip() {
        let t = sample();
        assert_eq!(Transaction::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}
