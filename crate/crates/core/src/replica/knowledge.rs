//! What one replica knows about blocks and QCs, and which blocks it regards
//! as confirmed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use crate::crypto::{Crypto, Digest};
use crate::message::MessageState;
use crate::super_epoch::SuperEpochLedger;
use crate::types::{
    validate_block, Block, BlockStore, CertKind, Certificate, InvalidReason, Mode, ProtocolParams, RoundId,
    ValidationMode, Validity,
};

#[derive(Debug)]
pub struct Knowledge {
    store: BlockStore,
    /// Highest-stage QC per block, including blocks not yet in the store.
    best_qc: HashMap<Digest, Certificate>,
    /// Highest QC whose block is in the store.
    highest_qc: Certificate,
    confirmed: HashSet<Digest>,
    /// Missing ancestors of confirmed blocks.
    gaps: HashSet<Digest>,
    confirmed_views: HashSet<(u64, u64, u64)>,
    /// First block per super-epoch for which a stage-3 QC was seen directly.
    first_confirmed: BTreeMap<u64, Digest>,
    ledger: SuperEpochLedger,
    fresh: Vec<(Digest, RoundId)>,
    snapshot: Option<Arc<MessageState>>,
}

impl Knowledge {
    pub fn new(genesis: Arc<Block>) -> Self {
        let g = genesis.hash;
        let gqc = Certificate::genesis_qc(g);
        let mut best_qc = HashMap::new();
        best_qc.insert(g, gqc.clone());
        let mut confirmed = HashSet::new();
        confirmed.insert(g);
        Knowledge {
            store: BlockStore::new(genesis),
            best_qc,
            highest_qc: gqc,
            confirmed,
            gaps: HashSet::new(),
            confirmed_views: HashSet::new(),
            first_confirmed: BTreeMap::new(),
            ledger: SuperEpochLedger::default(),
            fresh: Vec::new(),
            snapshot: None,
        }
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn genesis(&self) -> Digest {
        self.store.genesis()
    }

    pub fn block(&self, h: &Digest) -> Option<&Arc<Block>> {
        self.store.get(h)
    }

    pub fn highest_qc(&self) -> &Certificate {
        &self.highest_qc
    }

    pub fn best_qc(&self, h: &Digest) -> Option<&Certificate> {
        self.best_qc.get(h)
    }

    fn best_stage(&self, h: &Digest) -> u8 {
        self.best_qc.get(h).map_or(0, |q| q.round.stage)
    }

    pub fn is_confirmed(&self, h: &Digest) -> bool {
        self.confirmed.contains(h)
    }

    pub fn confirmed(&self) -> &HashSet<Digest> {
        &self.confirmed
    }

    pub fn view_confirmed(&self, super_epoch: u64, epoch: u64, view: u64) -> bool {
        self.confirmed_views.contains(&(super_epoch, epoch, view))
    }

    pub fn first_confirmed(&self) -> &BTreeMap<u64, Digest> {
        &self.first_confirmed
    }

    pub fn ledger(&self) -> &SuperEpochLedger {
        &self.ledger
    }

    pub(crate) fn drain_confirmed(&mut self) -> Vec<(Digest, RoundId)> {
        std::mem::take(&mut self.fresh)
    }

    /// Highest QC among `b` and its known predecessors.
    pub fn justify(&self, b: &Digest) -> Option<&Certificate> {
        let mut cur = *b;
        loop {
            if let Some(q) = self.best_qc.get(&cur) {
                return Some(q);
            }
            cur = self.store.get(&cur)?.parent?;
        }
    }

    /// True iff `b` is `ancestor` or extends it.
    pub fn extends(&self, ancestor: &Digest, b: &Digest) -> bool {
        ancestor == b || *ancestor == self.genesis() || self.store.is_predecessor(ancestor, b).unwrap_or(false)
    }

    fn insert_block(&mut self, b: Arc<Block>) {
        let h = b.hash;
        if !self.store.insert(b) {
            return;
        }
        self.snapshot = None;
        if let Some(q) = self.best_qc.get(&h).cloned() {
            self.raise_highest(&q);
            if q.round.stage == 3 {
                self.confirm_direct(h);
            }
        }
        if self.gaps.remove(&h) {
            self.mark_chain(h);
        }
    }

    fn raise_highest(&mut self, q: &Certificate) {
        if (q.round, q.block) > (self.highest_qc.round, self.highest_qc.block) {
            self.highest_qc = q.clone();
        }
    }

    fn confirm_direct(&mut self, h: Digest) {
        let Some(b) = self.store.get(&h) else {
            return;
        };
        self.first_confirmed.entry(b.round.super_epoch).or_insert(h);
        self.mark_chain(h);
    }

    fn mark_chain(&mut self, h: Digest) {
        let mut newly = Vec::new();
        let mut cur = h;
        while !self.confirmed.contains(&cur) {
            let Some(b) = self.store.get(&cur) else {
                self.gaps.insert(cur);
                break;
            };
            self.confirmed.insert(cur);
            self.confirmed_views.insert(b.round.view_key());
            self.ledger.record(b.round.super_epoch, b.requests());
            newly.push((cur, b.round));
            match b.parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        newly.reverse();
        self.fresh.extend(newly);
    }

    /// Records an already verified QC. Returns true if it improves on the best
    /// QC known for its block.
    fn insert_qc(&mut self, q: Certificate) -> bool {
        let Some(h) = q.block else {
            return false;
        };
        if self.best_stage(&h) >= q.round.stage && self.best_qc.contains_key(&h) {
            return false;
        }
        let stage = q.round.stage;
        self.best_qc.insert(h, q.clone());
        self.snapshot = None;
        if self.store.contains(&h) {
            self.raise_highest(&q);
            if stage == 3 {
                self.confirm_direct(h);
            }
        }
        true
    }

    /// Verifies and records a QC. `Err` if it fails verification.
    pub fn learn_qc(&mut self, q: &Certificate, crypto: &Crypto, params: &ProtocolParams) -> Result<bool, ()> {
        if q.kind != CertKind::Qc {
            return Err(());
        }
        let Some(h) = q.block else {
            return Err(());
        };
        if self.best_qc.contains_key(&h) && self.best_stage(&h) >= q.round.stage {
            return Ok(false);
        }
        if !q.verify(crypto, params, &self.genesis()) {
            return Err(());
        }
        Ok(self.insert_qc(q.clone()))
    }

    /// Full validation against the local store; inserts on success.
    pub fn admit(&mut self, b: &Arc<Block>, mode: Mode, crypto: &Crypto, params: &ProtocolParams) -> Validity {
        if self.store.contains(&b.hash) {
            return Validity::Valid;
        }
        let v = {
            let vm = match mode {
                Mode::Smr => ValidationMode::Smr,
                Mode::Ba => ValidationMode::Ba,
                Mode::SuperEpoch => ValidationMode::SuperEpoch(&self.ledger),
            };
            validate_block(b, &self.store, vm, crypto, params)
        };
        if v.is_valid() {
            self.insert_block(b.clone());
        }
        v
    }

    /// Accepts a block vouched for by a QC even if its ancestry is unknown:
    /// some correct replica must have validated it to vote.
    pub fn admit_certified(&mut self, b: &Arc<Block>, q: &Certificate, crypto: &Crypto, params: &ProtocolParams) -> bool {
        if q.block != Some(b.hash) {
            return false;
        }
        if !self.store.contains(&b.hash) && (b.is_genesis() || !b.verify_integrity(crypto)) {
            return false;
        }
        if self.learn_qc(q, crypto, params).is_err() {
            return false;
        }
        self.insert_block(b.clone());
        true
    }

    pub fn merge_state(&mut self, st: &MessageState, mode: Mode, crypto: &Crypto, params: &ProtocolParams) {
        let mut by_block: Option<HashMap<Digest, &Certificate>> = None;
        for b in &st.blocks {
            if self.store.contains(&b.hash) {
                continue;
            }
            if let Validity::Invalid(r) = self.admit(b, mode, crypto, params) {
                if r == InvalidReason::MissingAncestry || r == InvalidReason::UnknownPriorRequests {
                    let map = by_block.get_or_insert_with(|| {
                        st.qcs.iter().filter_map(|q| q.block.map(|h| (h, q))).collect()
                    });
                    if let Some(q) = map.get(&b.hash) {
                        self.admit_certified(b, q, crypto, params);
                    }
                }
            }
        }
        for q in &st.qcs {
            let _ = self.learn_qc(q, crypto, params);
        }
    }

    /// Shared view of everything known, rebuilt only after a change.
    pub fn snapshot(&mut self) -> Arc<MessageState> {
        if let Some(s) = &self.snapshot {
            return s.clone();
        }
        let blocks = self.store.sorted();
        let mut qcs: Vec<Certificate> =
            self.best_qc.values().filter(|q| !q.is_genesis() && self.store.contains(&q.block.unwrap_or_default())).cloned().collect();
        qcs.sort_by_key(|q| (q.round, q.block));
        let s = Arc::new(MessageState { blocks, qcs });
        self.snapshot = Some(s.clone());
        s
    }
}
