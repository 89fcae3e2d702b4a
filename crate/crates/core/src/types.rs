//! Blocks, votes, certificates and round identifiers.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ba;
use crate::crypto::{Crypto, Digest, KeyPair, Signature, ThresholdSignature};
use crate::wire::{Encode, WireSize, Writer, ID_BITS, LEN_BITS, REQUEST_BITS, ROUND_BITS, TAG_BITS};

/// Simulation time in ticks.
pub type Time = u64;

/// Upper bound on requests carried by one block.
pub const MAX_REQUESTS_PER_BLOCK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("need n >= 3f + 1, got n={n} f={f}")]
    Resiliency { n: u32, f: u32 },
    #[error("delta must be positive")]
    ZeroDelta,
    #[error("kappa must be a multiple of 8 in 64..=256, got {0}")]
    Kappa(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub n: u32,
    pub f: u32,
    pub delta: u64,
    pub kappa: u32,
}

impl ProtocolParams {
    pub fn new(n: u32, f: u32, delta: u64, kappa: u32) -> Result<Self, ParamsError> {
        if n < 3 * f + 1 {
            return Err(ParamsError::Resiliency { n, f });
        }
        if delta == 0 {
            return Err(ParamsError::ZeroDelta);
        }
        if !kappa.is_multiple_of(8) || !(64..=256).contains(&kappa) {
            return Err(ParamsError::Kappa(kappa));
        }
        Ok(ProtocolParams { n, f, delta, kappa })
    }

    /// f = ⌊(n−1)/3⌋.
    pub fn default_f(n: u32) -> u32 {
        n.saturating_sub(1) / 3
    }

    pub fn quorum(&self) -> u32 {
        self.n - self.f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Smr,
    Ba,
    SuperEpoch,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Smr => "smr",
            Mode::Ba => "ba",
            Mode::SuperEpoch => "super_epoch",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smr" => Ok(Mode::Smr),
            "ba" => Ok(Mode::Ba),
            "super_epoch" | "super-epoch" => Ok(Mode::SuperEpoch),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Position in the protocol. The derived order is lexicographic over
/// (super_epoch, epoch, view, stage). Blocks carry stage 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RoundId {
    pub super_epoch: u64,
    pub epoch: u64,
    pub view: u64,
    pub stage: u8,
}

impl RoundId {
    pub const GENESIS: RoundId = RoundId { super_epoch: 0, epoch: 0, view: 0, stage: 0 };

    pub fn new(super_epoch: u64, epoch: u64, view: u64) -> Self {
        RoundId { super_epoch, epoch, view, stage: 0 }
    }

    pub fn with_stage(self, stage: u8) -> Self {
        RoundId { stage, ..self }
    }

    pub fn view_key(&self) -> (u64, u64, u64) {
        (self.super_epoch, self.epoch, self.view)
    }

    pub fn epoch_key(&self) -> (u64, u64) {
        (self.super_epoch, self.epoch)
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.u64(self.super_epoch).u64(self.epoch).u64(self.view).u8(self.stage);
    }
}

pub fn compare_rounds(a: &RoundId, b: &RoundId) -> Ordering {
    a.cmp(b)
}

impl fmt::Display for RoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}.{}", self.super_epoch, self.epoch, self.view, self.stage)
    }
}

impl FromStr for RoundId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != 4 {
            return Err(format!("bad round `{s}`"));
        }
        let num = |p: &str| p.parse::<u64>().map_err(|e| format!("bad round `{s}`: {e}"));
        Ok(RoundId {
            super_epoch: num(parts[0])?,
            epoch: num(parts[1])?,
            view: num(parts[2])?,
            stage: u8::try_from(num(parts[3])?).map_err(|e| e.to_string())?,
        })
    }
}

impl Serialize for RoundId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoundId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Opaque client request token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Request(pub u64);

/// κ-bit agreement value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(pub Digest);

impl Value {
    pub fn from_token(token: u64) -> Self {
        let mut raw = [0u8; 32];
        raw[..8].copy_from_slice(&token.to_be_bytes());
        Value(Digest(raw))
    }

    pub fn token(&self) -> u64 {
        u64::from_be_bytes(self.0 .0[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token())
    }
}

/// Signed agreement input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaInput {
    pub replica: ReplicaId,
    pub value: Value,
    pub signature: Signature,
}

impl BaInput {
    pub fn signing_bytes(value: &Value, kappa: u32) -> Vec<u8> {
        let mut w = Writer::new(kappa);
        w.u8(b'I').kappa(&value.0);
        w.finish()
    }

    pub fn new(crypto: &Crypto, key: &KeyPair, value: Value) -> Self {
        let signature = crypto.sign(key, &Self::signing_bytes(&value, crypto.kappa()));
        BaInput { replica: key.replica, value, signature }
    }

    pub fn verify(&self, crypto: &Crypto) -> bool {
        crypto.verify(
            &crypto.public_key(self.replica),
            &Self::signing_bytes(&self.value, crypto.kappa()),
            &self.signature,
        )
    }
}

impl WireSize for BaInput {
    fn wire_bits(&self, kappa: u32) -> u64 {
        ID_BITS + 2 * kappa as u64
    }
}

impl Encode for BaInput {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.replica.0).kappa(&self.value.0).kappa(&self.signature.tag());
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockPayload {
    Genesis,
    /// SMR and super-epoch modes.
    Requests(Vec<Request>),
    /// Agreement mode, parent is genesis: n−f signed inputs and their decision.
    BaInputs { inputs: Vec<BaInput>, decision: Value },
    /// Agreement mode, parent is not genesis.
    BaDecision(Value),
}

impl BlockPayload {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            BlockPayload::Genesis => {
                w.u8(0);
            }
            BlockPayload::Requests(rs) => {
                w.u8(1).len(rs.len());
                for r in rs {
                    w.u64(r.0);
                }
            }
            BlockPayload::BaInputs { inputs, decision } => {
                w.u8(2).len(inputs.len());
                for i in inputs {
                    i.encode(w);
                }
                w.kappa(&decision.0);
            }
            BlockPayload::BaDecision(v) => {
                w.u8(3).kappa(&v.0);
            }
        }
    }

    fn bits(&self, kappa: u32) -> u64 {
        let k = kappa as u64;
        TAG_BITS
            + match self {
                BlockPayload::Genesis => 0,
                BlockPayload::Requests(rs) => LEN_BITS + REQUEST_BITS * rs.len() as u64,
                BlockPayload::BaInputs { inputs, .. } => {
                    LEN_BITS + inputs.iter().map(|i| i.wire_bits(kappa)).sum::<u64>() + k
                }
                BlockPayload::BaDecision(_) => k,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub hash: Digest,
    pub parent: Option<Digest>,
    pub round: RoundId,
    pub payload: BlockPayload,
    pub proposer: ReplicaId,
    pub signature: Option<Signature>,
}

impl Block {
    fn content_bytes(
        parent: Option<&Digest>,
        round: &RoundId,
        proposer: ReplicaId,
        payload: &BlockPayload,
        kappa: u32,
    ) -> Vec<u8> {
        let mut w = Writer::new(kappa);
        w.u8(b'B');
        match parent {
            Some(p) => {
                w.u8(1).kappa(p);
            }
            None => {
                w.u8(0);
            }
        }
        round.encode_into(&mut w);
        w.u32(proposer.0);
        payload.encode_into(&mut w);
        w.finish()
    }

    pub fn genesis(crypto: &Crypto) -> Block {
        let round = RoundId::GENESIS;
        let bytes = Self::content_bytes(None, &round, ReplicaId(0), &BlockPayload::Genesis, crypto.kappa());
        Block {
            hash: crypto.hash(&bytes),
            parent: None,
            round,
            payload: BlockPayload::Genesis,
            proposer: ReplicaId(0),
            signature: None,
        }
    }

    pub fn propose(crypto: &Crypto, key: &KeyPair, parent: &Digest, round: RoundId, payload: BlockPayload) -> Block {
        let bytes = Self::content_bytes(Some(parent), &round, key.replica, &payload, crypto.kappa());
        let hash = crypto.hash(&bytes);
        let signature = crypto.sign_digest(key, hash);
        Block { hash, parent: Some(*parent), round, payload, proposer: key.replica, signature: Some(signature) }
    }

    pub fn is_genesis(&self) -> bool {
        self.parent.is_none()
    }

    pub fn requests(&self) -> &[Request] {
        match &self.payload {
            BlockPayload::Requests(r) => r,
            _ => &[],
        }
    }

    pub fn decision(&self) -> Option<Value> {
        match &self.payload {
            BlockPayload::BaInputs { decision, .. } => Some(*decision),
            BlockPayload::BaDecision(v) => Some(*v),
            _ => None,
        }
    }

    /// Hash and proposer signature check, without any chain or payload rule.
    pub fn verify_integrity(&self, crypto: &Crypto) -> bool {
        match &self.signature {
            Some(sig) => {
                self.recompute_hash(crypto) == self.hash
                    && crypto.verify_digest(&crypto.public_key(self.proposer), self.hash, sig)
            }
            None => false,
        }
    }

    fn recompute_hash(&self, crypto: &Crypto) -> Digest {
        crypto.hash(&Self::content_bytes(
            self.parent.as_ref(),
            &self.round,
            self.proposer,
            &self.payload,
            crypto.kappa(),
        ))
    }
}

impl WireSize for Block {
    fn wire_bits(&self, kappa: u32) -> u64 {
        let k = kappa as u64;
        // parent marker + parent + round + proposer + payload + signature
        TAG_BITS + if self.parent.is_some() { k } else { 0 } + ROUND_BITS + ID_BITS + self.payload.bits(kappa) + k
    }
}

impl Encode for Block {
    fn encode(&self, w: &mut Writer) {
        match &self.parent {
            Some(p) => {
                w.u8(1).kappa(p);
            }
            None => {
                w.u8(0);
            }
        }
        self.round.encode_into(w);
        w.u32(self.proposer.0);
        self.payload.encode_into(w);
        w.kappa(&self.signature.map(|s| s.tag()).unwrap_or_default());
    }
}

pub fn epoch_message_bytes(super_epoch: u64, epoch: u64, kappa: u32) -> Vec<u8> {
    let mut w = Writer::new(kappa);
    w.u8(b'E').u64(super_epoch).u64(epoch);
    w.finish()
}

pub fn view_message_bytes(super_epoch: u64, epoch: u64, view: u64, kappa: u32) -> Vec<u8> {
    let mut w = Writer::new(kappa);
    w.u8(b'V').u64(super_epoch).u64(epoch).u64(view);
    w.finish()
}

pub fn vote_bytes(round: &RoundId, block: &Digest, kappa: u32) -> Vec<u8> {
    let mut w = Writer::new(kappa);
    w.u8(b'S');
    round.encode_into(&mut w);
    w.kappa(block);
    w.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub voter: ReplicaId,
    pub round: RoundId,
    pub block: Digest,
    pub signature: Signature,
}

impl Vote {
    pub fn new(crypto: &Crypto, key: &KeyPair, round: RoundId, block: Digest) -> Vote {
        let signature = crypto.sign(key, &vote_bytes(&round, &block, crypto.kappa()));
        Vote { voter: key.replica, round, block, signature }
    }

    pub fn verify(&self, crypto: &Crypto) -> bool {
        (1..=3).contains(&self.round.stage)
            && crypto.verify(
                &crypto.public_key(self.voter),
                &vote_bytes(&self.round, &self.block, crypto.kappa()),
                &self.signature,
            )
    }
}

impl WireSize for Vote {
    fn wire_bits(&self, kappa: u32) -> u64 {
        ID_BITS + ROUND_BITS + 2 * kappa as u64
    }
}

impl Encode for Vote {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.voter.0);
        self.round.encode_into(w);
        w.kappa(&self.block).kappa(&self.signature.tag());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CertKind {
    Qc,
    Vc,
    Ec,
}

/// QC, VC or EC: a threshold signature over n−f matching messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub kind: CertKind,
    pub round: RoundId,
    pub block: Option<Digest>,
    /// `None` only for the implicit genesis QC.
    pub sig: Option<ThresholdSignature>,
}

impl Certificate {
    /// The genesis block is treated as carrying a stage-3 QC at the genesis round.
    pub fn genesis_qc(genesis: Digest) -> Self {
        Certificate { kind: CertKind::Qc, round: RoundId::GENESIS.with_stage(3), block: Some(genesis), sig: None }
    }

    pub fn is_genesis(&self) -> bool {
        self.sig.is_none()
    }

    pub fn signed_bytes(&self, kappa: u32) -> Vec<u8> {
        let r = &self.round;
        match self.kind {
            CertKind::Qc => vote_bytes(r, &self.block.unwrap_or_default(), kappa),
            CertKind::Vc => view_message_bytes(r.super_epoch, r.epoch, r.view, kappa),
            CertKind::Ec => epoch_message_bytes(r.super_epoch, r.epoch, kappa),
        }
    }

    pub fn verify(&self, crypto: &Crypto, params: &ProtocolParams, genesis: &Digest) -> bool {
        let shape_ok = match self.kind {
            CertKind::Qc => self.block.is_some() && (1..=3).contains(&self.round.stage),
            CertKind::Vc => self.block.is_none() && self.round.stage == 0,
            CertKind::Ec => self.block.is_none() && self.round.stage == 0 && self.round.view == 0,
        };
        if !shape_ok {
            return false;
        }
        match &self.sig {
            None => *self == Certificate::genesis_qc(*genesis),
            Some(sig) => {
                let digest = crypto.hash(&self.signed_bytes(crypto.kappa()));
                crypto.verify_threshold(digest, sig, params)
            }
        }
    }
}

impl WireSize for Certificate {
    fn wire_bits(&self, kappa: u32) -> u64 {
        let k = kappa as u64;
        TAG_BITS + ROUND_BITS + if self.block.is_some() { k } else { 0 } + k
    }
}

impl Encode for Certificate {
    fn encode(&self, w: &mut Writer) {
        w.u8(match self.kind {
            CertKind::Qc => 0,
            CertKind::Vc => 1,
            CertKind::Ec => 2,
        });
        self.round.encode_into(w);
        if let Some(b) = &self.block {
            w.kappa(b);
        }
        let tag = self.sig.as_ref().map(|s| s.tag()).unwrap_or_default();
        w.kappa(&tag);
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum AncestryError {
    #[error("missing ancestry: block {0:?} not in store")]
    Missing(Digest),
}

/// Content-addressed store of blocks known to one party.
#[derive(Clone, Debug)]
pub struct BlockStore {
    blocks: HashMap<Digest, Arc<Block>>,
    genesis: Digest,
}

impl BlockStore {
    pub fn new(genesis: Arc<Block>) -> Self {
        let g = genesis.hash;
        let mut blocks = HashMap::new();
        blocks.insert(g, genesis);
        BlockStore { blocks, genesis: g }
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn get(&self, h: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(h)
    }

    pub fn contains(&self, h: &Digest) -> bool {
        self.blocks.contains_key(h)
    }

    /// Returns false if the block was already present.
    pub fn insert(&mut self, b: Arc<Block>) -> bool {
        if self.blocks.contains_key(&b.hash) {
            return false;
        }
        self.blocks.insert(b.hash, b);
        true
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// All blocks ordered by (round, hash).
    pub fn sorted(&self) -> Vec<Arc<Block>> {
        let mut v: Vec<Arc<Block>> = self.blocks.values().cloned().collect();
        v.sort_by_key(|a| (a.round, a.hash));
        v
    }

    /// Strict: true iff `a` is reached by following parent links from `b`.
    pub fn is_predecessor(&self, a: &Digest, b: &Digest) -> Result<bool, AncestryError> {
        let target = self.blocks.get(a).ok_or(AncestryError::Missing(*a))?;
        let mut cur = self.blocks.get(b).ok_or(AncestryError::Missing(*b))?;
        loop {
            let Some(p) = cur.parent else {
                return Ok(false);
            };
            if p == *a {
                return Ok(true);
            }
            let pb = self.blocks.get(&p).ok_or(AncestryError::Missing(p))?;
            // rounds strictly increase along valid chains
            if pb.round < target.round {
                return Ok(false);
            }
            cur = pb;
        }
    }

    pub fn is_incompatible(&self, a: &Digest, b: &Digest) -> Result<bool, AncestryError> {
        if a == b {
            return Ok(false);
        }
        Ok(!self.is_predecessor(a, b)? && !self.is_predecessor(b, a)?)
    }

    /// Ancestors of `b` (excluding `b`) that are present, nearest first; stops
    /// at the first gap.
    pub fn ancestors<'a>(&'a self, b: &Digest) -> impl Iterator<Item = &'a Arc<Block>> + 'a {
        let mut cur = self.blocks.get(b).and_then(|blk| blk.parent);
        std::iter::from_fn(move || {
            let h = cur?;
            let blk = self.blocks.get(&h)?;
            cur = blk.parent;
            Some(blk)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InvalidReason {
    #[error("missing-ancestry")]
    MissingAncestry,
    #[error("bad-hash")]
    BadHash,
    #[error("bad-signature")]
    BadSignature,
    #[error("second-genesis")]
    SecondGenesis,
    #[error("round-not-after-parent")]
    RoundNotAfterParent,
    #[error("payload-too-large")]
    PayloadTooLarge,
    #[error("wrong-payload-kind")]
    WrongPayloadKind,
    #[error("bad-inputs")]
    BadInputs,
    #[error("decision-mismatch")]
    DecisionMismatch,
    #[error("requests-differ-from-parent")]
    RequestsDiffer,
    #[error("repeated-request")]
    RepeatedRequest,
    #[error("unknown-prior-requests")]
    UnknownPriorRequests,
}

impl InvalidReason {
    /// Reasons that may clear once more blocks are learned.
    pub fn is_retryable(&self) -> bool {
        matches!(self, InvalidReason::MissingAncestry | InvalidReason::UnknownPriorRequests)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Request sets of confirmed blocks, one per super-epoch, as known locally.
pub trait SuperEpochRequests {
    fn confirmed_requests(&self, super_epoch: u64) -> Option<&[Request]>;
}

#[derive(Clone, Copy)]
pub enum ValidationMode<'a> {
    Smr,
    Ba,
    SuperEpoch(&'a dyn SuperEpochRequests),
}

impl ValidationMode<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            ValidationMode::Smr => Mode::Smr,
            ValidationMode::Ba => Mode::Ba,
            ValidationMode::SuperEpoch(_) => Mode::SuperEpoch,
        }
    }
}

/// Structural validity of a non-genesis block against the local store.
pub fn validate_block(
    b: &Block,
    store: &BlockStore,
    mode: ValidationMode<'_>,
    crypto: &Crypto,
    params: &ProtocolParams,
) -> Validity {
    use InvalidReason::*;
    let invalid = Validity::Invalid;

    let Some(parent_hash) = b.parent else {
        return if b.hash == store.genesis() { Validity::Valid } else { invalid(SecondGenesis) };
    };
    let Some(parent) = store.get(&parent_hash) else {
        return invalid(MissingAncestry);
    };
    if b.recompute_hash(crypto) != b.hash {
        return invalid(BadHash);
    }
    match &b.signature {
        Some(sig) if crypto.verify_digest(&crypto.public_key(b.proposer), b.hash, sig) => {}
        _ => return invalid(BadSignature),
    }
    if b.round.stage != 0 || b.round.epoch == 0 || b.round <= parent.round {
        return invalid(RoundNotAfterParent);
    }

    match mode {
        ValidationMode::Smr => match &b.payload {
            BlockPayload::Requests(rs) if rs.len() <= MAX_REQUESTS_PER_BLOCK => Validity::Valid,
            BlockPayload::Requests(_) => invalid(PayloadTooLarge),
            _ => invalid(WrongPayloadKind),
        },
        ValidationMode::Ba => match (&b.payload, parent.is_genesis()) {
            (BlockPayload::BaInputs { inputs, decision }, true) => {
                match ba::decision_value(inputs, params, crypto) {
                    Ok(d) if d == *decision => Validity::Valid,
                    Ok(_) => invalid(DecisionMismatch),
                    Err(_) => invalid(BadInputs),
                }
            }
            (BlockPayload::BaDecision(v), false) => {
                if parent.decision() == Some(*v) {
                    Validity::Valid
                } else {
                    invalid(DecisionMismatch)
                }
            }
            _ => invalid(WrongPayloadKind),
        },
        ValidationMode::SuperEpoch(known) => {
            let BlockPayload::Requests(rs) = &b.payload else {
                return invalid(WrongPayloadKind);
            };
            if rs.len() > MAX_REQUESTS_PER_BLOCK {
                return invalid(PayloadTooLarge);
            }
            let se = b.round.super_epoch;
            let parent_se = parent.round.super_epoch;
            if !parent.is_genesis() && parent_se == se {
                return if parent.requests() == rs.as_slice() { Validity::Valid } else { invalid(RequestsDiffer) };
            }
            if parent.requests().iter().any(|r| rs.contains(r)) {
                return invalid(RepeatedRequest);
            }
            for s in 1..se {
                if s == parent_se {
                    continue;
                }
                match known.confirmed_requests(s) {
                    Some(prior) if prior.iter().any(|r| rs.contains(r)) => return invalid(RepeatedRequest),
                    Some(_) => {}
                    None => return invalid(UnknownPriorRequests),
                }
            }
            Validity::Valid
        }
    }
}
