//! Byzantine Agreement variant: decision values and genesis-child payloads.
//!
//! The replica state machine drives the mode-specific behavior (input
//! broadcast, trimmed attachments, wait-then-omit, terminate on confirmation);
//! this module holds the pure rules it relies on.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::crypto::Crypto;
use crate::types::{BaInput, BlockPayload, ProtocolParams, ReplicaId, Value};
use crate::wire::Writer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaError {
    #[error("expected {expected} inputs, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("duplicate input from replica {0}")]
    DuplicateSigner(ReplicaId),
    #[error("input from replica {0} fails verification")]
    BadSignature(ReplicaId),
}

fn value_hash(crypto: &Crypto, v: &Value) -> crate::crypto::Digest {
    let mut w = Writer::new(crypto.kappa());
    w.u8(b'U').kappa(&v.0);
    crypto.hash(&w.finish())
}

/// Most common value among exactly n−f verified distinct-signer inputs; ties
/// go to the value with the least hash.
pub fn decision_value(inputs: &[BaInput], params: &ProtocolParams, crypto: &Crypto) -> Result<Value, BaError> {
    let expected = params.quorum() as usize;
    if inputs.len() != expected {
        return Err(BaError::WrongCount { expected, got: inputs.len() });
    }
    let mut signers = Vec::with_capacity(inputs.len());
    for i in inputs {
        if signers.contains(&i.replica) {
            return Err(BaError::DuplicateSigner(i.replica));
        }
        if !i.verify(crypto) {
            return Err(BaError::BadSignature(i.replica));
        }
        signers.push(i.replica);
    }
    let mut counts: HashMap<Value, usize> = HashMap::new();
    for i in inputs {
        *counts.entry(i.value).or_default() += 1;
    }
    let top = *counts.values().max().expect("nonempty");
    let winner = counts
        .into_iter()
        .filter(|(_, c)| *c == top)
        .map(|(v, _)| (value_hash(crypto, &v), v))
        .min()
        .expect("nonempty")
        .1;
    Ok(winner)
}

/// Payload for a block extending genesis, built from the first n−f inputs by
/// replica id. `None` if fewer than n−f inputs are known.
pub fn genesis_child_payload(
    known: &BTreeMap<ReplicaId, BaInput>,
    params: &ProtocolParams,
    crypto: &Crypto,
) -> Option<BlockPayload> {
    let inputs: Vec<BaInput> = known.values().take(params.quorum() as usize).cloned().collect();
    let decision = decision_value(&inputs, params, crypto).ok()?;
    Some(BlockPayload::BaInputs { inputs, decision })
}
