//! Super-epoch variant: leader rotation per super-epoch and the per-super-epoch
//! record of confirmed request sets used to check request inheritance.

use std::collections::BTreeMap;

use crate::types::{ProtocolParams, ReplicaId, Request, SuperEpochRequests, MAX_REQUESTS_PER_BLOCK};

/// Leader of view `v` of epoch `e` of super-epoch `s`: (s + e − 1 + v) mod n.
/// Epoch 1 of super-epoch s is led by s, …, s+f mod n; later epochs keep rotating.
pub fn leader(s: u64, e: u64, v: u64, params: &ProtocolParams) -> ReplicaId {
    ReplicaId(((s + e - 1 + v) % params.n as u64) as u32)
}

pub fn leaders_of_epoch(s: u64, e: u64, params: &ProtocolParams) -> Vec<ReplicaId> {
    (0..=params.f as u64).map(|v| leader(s, e, v, params)).collect()
}

/// Request set of one known confirmed block per super-epoch.
#[derive(Clone, Debug, Default)]
pub struct SuperEpochLedger {
    confirmed: BTreeMap<u64, Vec<Request>>,
}

impl SuperEpochLedger {
    /// Records the first confirmed request set seen for `super_epoch`.
    /// Returns true if this super-epoch was new.
    pub fn record(&mut self, super_epoch: u64, requests: &[Request]) -> bool {
        if self.confirmed.contains_key(&super_epoch) {
            return false;
        }
        self.confirmed.insert(super_epoch, requests.to_vec());
        true
    }

    pub fn len(&self) -> usize {
        self.confirmed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confirmed.is_empty()
    }

    /// Requests in super-epoch order, for the super-epochs known so far.
    pub fn linearized(&self) -> Vec<Request> {
        self.confirmed.values().flatten().copied().collect()
    }
}

impl SuperEpochRequests for SuperEpochLedger {
    fn confirmed_requests(&self, super_epoch: u64) -> Option<&[Request]> {
        self.confirmed.get(&super_epoch).map(Vec::as_slice)
    }
}

/// Issues run-unique request tokens for one proposer.
#[derive(Clone, Debug)]
pub struct RequestSource {
    replica: ReplicaId,
    next: u64,
}

impl RequestSource {
    pub fn new(replica: ReplicaId) -> Self {
        RequestSource { replica, next: 0 }
    }

    pub fn fresh_batch(&mut self) -> Vec<Request> {
        (0..MAX_REQUESTS_PER_BLOCK)
            .map(|_| {
                self.next += 1;
                Request(((self.replica.0 as u64 + 1) << 40) | self.next)
            })
            .collect()
    }
}
