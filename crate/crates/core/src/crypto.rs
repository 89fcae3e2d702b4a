//! Simulated signatures, threshold signatures and hashing.
//!
//! Signatures are tamper-evident records: a share's tag is derived from the
//! signer's secret, which lives only in the [`Crypto`] registry and in the
//! [`KeyPair`] handed to that replica (or to the adversary once the replica is
//! corrupted). Verification recomputes the tag, so nothing can be forged
//! without holding the key. Wire sizes of digests and signatures are exactly
//! κ bits.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::{ProtocolParams, ReplicaId};

/// Default security parameter in bits.
pub const DEFAULT_KAPPA: u32 = 256;

/// A κ-bit digest. Stored in a 32-byte buffer; bytes past κ/8 are always zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    /// Significant bytes for a given κ.
    pub fn significant(&self, kappa: u32) -> &[u8] {
        &self.0[..(kappa / 8) as usize]
    }

    /// Number of leading significant bits that can be non-zero.
    pub fn bit_len(&self, kappa: u32) -> u32 {
        self.significant(kappa).len() as u32 * 8
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Digest {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn truncate(mut raw: [u8; 32], kappa: u32) -> Digest {
    for b in raw.iter_mut().skip((kappa / 8) as usize) {
        *b = 0;
    }
    Digest(raw)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("insufficient shares: {distinct} distinct signers, need {needed}")]
    InsufficientShares { distinct: usize, needed: usize },
    #[error("shares sign different messages")]
    MixedMessages,
    #[error("kappa must be a multiple of 8 in 64..=256, got {0}")]
    BadKappa(u32),
}

/// Public half of a replica key. Verification goes through [`Crypto::verify`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub replica: ReplicaId,
    pub token: Digest,
}

/// A replica's signing key.
#[derive(Clone)]
pub struct KeyPair {
    pub replica: ReplicaId,
    secret: [u8; 32],
    pub public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("replica", &self.replica).finish_non_exhaustive()
    }
}

/// One replica's signature over a message digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: ReplicaId,
    pub message: Digest,
    tag: Digest,
}

impl Signature {
    /// κ-bit wire form.
    pub fn tag(&self) -> Digest {
        self.tag
    }
}

/// Aggregate of n−f shares over one message. Wire size is κ bits; the signer
/// list is simulation provenance and is not serialized.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ThresholdSignature {
    pub signers: Vec<ReplicaId>,
    pub message: Digest,
    tag: Digest,
}

impl ThresholdSignature {
    /// κ-bit wire form.
    pub fn tag(&self) -> Digest {
        self.tag
    }
}

/// Per-run crypto context: key registry plus the hash collision registry.
pub struct Crypto {
    kappa: u32,
    secrets: Vec<[u8; 32]>,
    seen: RefCell<HashMap<Digest, Box<[u8]>>>,
    collision: Cell<Option<Digest>>,
}

impl fmt::Debug for Crypto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Crypto")
            .field("kappa", &self.kappa)
            .field("replicas", &self.secrets.len())
            .finish_non_exhaustive()
    }
}

impl Crypto {
    pub fn new(n: u32, kappa: u32, seed: u64) -> Result<Self, CryptoError> {
        if !kappa.is_multiple_of(8) || !(64..=256).contains(&kappa) {
            return Err(CryptoError::BadKappa(kappa));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_7973);
        let secrets = (0..n)
            .map(|_| {
                let mut s = [0u8; 32];
                rng.fill_bytes(&mut s);
                s
            })
            .collect();
        Ok(Crypto { kappa, secrets, seen: RefCell::new(HashMap::new()), collision: Cell::new(None) })
    }

    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn keypair(&self, replica: ReplicaId) -> KeyPair {
        let secret = self.secrets[replica.0 as usize];
        KeyPair { replica, secret, public: self.public_key(replica) }
    }

    pub fn public_key(&self, replica: ReplicaId) -> PublicKey {
        let secret = &self.secrets[replica.0 as usize];
        PublicKey { replica, token: truncate(sha256_parts(&[b"pub", secret]), self.kappa) }
    }

    /// Collision-registered hash. A collision is recorded and surfaced by
    /// [`Crypto::collision`]; the simulator aborts the run when it sees one.
    pub fn hash(&self, message: &[u8]) -> Digest {
        let d = truncate(sha256_parts(&[b"h", message]), self.kappa);
        let mut seen = self.seen.borrow_mut();
        match seen.get(&d) {
            Some(prev) if **prev != *message => self.collision.set(Some(d)),
            Some(_) => {}
            None => {
                seen.insert(d, message.into());
            }
        }
        d
    }

    pub fn collision(&self) -> Option<Digest> {
        self.collision.get()
    }

    fn share_tag(&self, secret: &[u8; 32], message: &Digest) -> Digest {
        truncate(sha256_parts(&[b"sig", secret, &message.0]), self.kappa)
    }

    pub fn sign(&self, key: &KeyPair, message: &[u8]) -> Signature {
        let digest = self.hash(message);
        self.sign_digest(key, digest)
    }

    pub fn sign_digest(&self, key: &KeyPair, message: Digest) -> Signature {
        Signature { signer: key.replica, message, tag: self.share_tag(&key.secret, &message) }
    }

    pub fn verify(&self, key: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        let digest = self.hash(message);
        self.verify_digest(key, digest, sig)
    }

    pub fn verify_digest(&self, key: &PublicKey, message: Digest, sig: &Signature) -> bool {
        let Some(secret) = self.secrets.get(key.replica.0 as usize) else {
            return false;
        };
        if self.public_key(key.replica) != *key || sig.signer != key.replica || sig.message != message {
            return false;
        }
        sig.tag == self.share_tag(secret, &message)
    }

    fn combine(&self, signers: &[ReplicaId], tags: impl Iterator<Item = Digest>, message: &Digest) -> Digest {
        let mut h = Sha256::new();
        h.update(b"thr");
        h.update(message.0);
        for (s, t) in signers.iter().zip(tags) {
            h.update(s.0.to_be_bytes());
            h.update(t.0);
        }
        truncate(h.finalize().into(), self.kappa)
    }

    /// Combines the first n−f distinct signers (in the given order) into one
    /// threshold signature.
    pub fn aggregate(&self, shares: &[Signature], params: &ProtocolParams) -> Result<ThresholdSignature, CryptoError> {
        let needed = params.quorum() as usize;
        let Some(first) = shares.first() else {
            return Err(CryptoError::InsufficientShares { distinct: 0, needed });
        };
        if shares.iter().any(|s| s.message != first.message) {
            return Err(CryptoError::MixedMessages);
        }
        let mut picked: Vec<&Signature> = Vec::with_capacity(needed);
        for s in shares {
            if picked.len() == needed {
                break;
            }
            if !picked.iter().any(|p| p.signer == s.signer) {
                picked.push(s);
            }
        }
        if picked.len() < needed {
            return Err(CryptoError::InsufficientShares { distinct: picked.len(), needed });
        }
        picked.sort_by_key(|s| s.signer);
        let signers: Vec<ReplicaId> = picked.iter().map(|s| s.signer).collect();
        let tag = self.combine(&signers, picked.iter().map(|s| s.tag), &first.message);
        Ok(ThresholdSignature { signers, message: first.message, tag })
    }

    /// Checks signer count, distinctness, message binding and every share.
    pub fn verify_threshold(&self, message: Digest, sig: &ThresholdSignature, params: &ProtocolParams) -> bool {
        if sig.message != message || sig.signers.len() != params.quorum() as usize {
            return false;
        }
        if sig.signers.windows(2).any(|w| w[0] >= w[1]) {
            return false;
        }
        let mut tags = Vec::with_capacity(sig.signers.len());
        for s in &sig.signers {
            let Some(secret) = self.secrets.get(s.0 as usize) else {
                return false;
            };
            tags.push(self.share_tag(secret, &message));
        }
        sig.tag == self.combine(&sig.signers, tags.into_iter(), &message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Crypto, ProtocolParams) {
        (Crypto::new(4, DEFAULT_KAPPA, 7).unwrap(), ProtocolParams::new(4, 1, 10, DEFAULT_KAPPA).unwrap())
    }

    #[test]
    fn sign_verify_round_trip() {
        let (c, _) = setup();
        let k = c.keypair(ReplicaId(2));
        let sig = c.sign(&k, b"hello");
        assert!(c.verify(&k.public, b"hello", &sig));
        assert!(!c.verify(&k.public, b"hellp", &sig));
        assert!(!c.verify(&c.public_key(ReplicaId(1)), b"hello", &sig));
    }

    #[test]
    fn aggregate_threshold_rules() {
        let (c, p) = setup();
        let shares: Vec<_> = (0..3).map(|i| c.sign(&c.keypair(ReplicaId(i)), b"m")).collect();
        let t = c.aggregate(&shares, &p).unwrap();
        assert!(c.verify_threshold(c.hash(b"m"), &t, &p));
        assert!(!c.verify_threshold(c.hash(b"x"), &t, &p));

        assert_eq!(
            c.aggregate(&shares[..2], &p),
            Err(CryptoError::InsufficientShares { distinct: 2, needed: 3 })
        );

        let mut dup = shares.clone();
        dup.insert(1, shares[0]);
        let t2 = c.aggregate(&dup, &p).unwrap();
        assert_eq!(t2.signers.len(), 3);

        let mixed = vec![shares[0], shares[1], c.sign(&c.keypair(ReplicaId(2)), b"other")];
        assert_eq!(c.aggregate(&mixed, &p), Err(CryptoError::MixedMessages));
    }

    #[test]
    fn tampered_threshold_rejected() {
        let (c, p) = setup();
        let shares: Vec<_> = (0..3).map(|i| c.sign(&c.keypair(ReplicaId(i)), b"m")).collect();
        let mut t = c.aggregate(&shares, &p).unwrap();
        t.signers[2] = ReplicaId(3);
        assert!(!c.verify_threshold(c.hash(b"m"), &t, &p));
    }

    #[test]
    fn hash_is_deterministic_and_kappa_sized() {
        let (c, _) = setup();
        assert_eq!(c.hash(b"a"), c.hash(b"a"));
        assert_ne!(c.hash(b"a"), c.hash(b"b"));
        assert_eq!(c.hash(b"a").bit_len(256), 256);
        let short = Crypto::new(4, 128, 1).unwrap();
        let d = short.hash(b"a");
        assert_eq!(d.bit_len(128), 128);
        assert!(d.0[16..].iter().all(|b| *b == 0));
        assert!(c.collision().is_none());
    }

    #[test]
    fn rejects_bad_kappa() {
        assert_eq!(Crypto::new(4, 100, 0).unwrap_err(), CryptoError::BadKappa(100));
    }

    #[test]
    fn forged_share_fails() {
        let (c, _) = setup();
        let corrupt = c.keypair(ReplicaId(0));
        // signed with replica 0's key but claiming replica 3
        let mut sig = c.sign(&corrupt, b"vote");
        sig.signer = ReplicaId(3);
        assert!(!c.verify(&c.public_key(ReplicaId(3)), b"vote", &sig));
    }
}
