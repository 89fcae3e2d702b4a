//! Network messages exchanged between replicas.

use std::sync::Arc;

use crate::crypto::{Digest, Signature};
use crate::types::{BaInput, Block, Certificate, RoundId, Vote};
use crate::wire::{Encode, WireSize, Writer, LEN_BITS, TAG_BITS};

/// A sender's full block and QC knowledge, shared by reference. Stands in for
/// attaching the whole received-message log; it costs one marker byte on the
/// wire because bit accounting is only meaningful in the trimmed modes.
#[derive(Debug, Default)]
pub struct MessageState {
    /// Sorted by (round, hash) so parents precede children.
    pub blocks: Vec<Arc<Block>>,
    /// Best QC known per block.
    pub qcs: Vec<Certificate>,
}

#[derive(Clone, Debug)]
pub enum Attachment {
    None,
    State(Arc<MessageState>),
    /// A block together with a QC for it.
    Certified { block: Arc<Block>, qc: Certificate },
}

#[derive(Clone, Debug)]
pub enum Message {
    Epoch { super_epoch: u64, epoch: u64, sig: Signature },
    EpochCert(Certificate),
    View { super_epoch: u64, epoch: u64, view: u64, sig: Signature, attachment: Attachment },
    Proposal { block: Arc<Block>, vc: Certificate, attachment: Attachment },
    Vote(Vote),
    Qc(Certificate),
    /// A confirmed block with its stage-3 QC.
    Confirmed { block: Arc<Block>, qc: Certificate },
    Input(BaInput),
    /// Unparseable bytes; correct replicas drop these.
    Garbage(Vec<u8>),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Epoch { .. } => "epoch",
            Message::EpochCert(_) => "ec",
            Message::View { .. } => "view",
            Message::Proposal { .. } => "proposal",
            Message::Vote(_) => "vote",
            Message::Qc(_) => "qc",
            Message::Confirmed { .. } => "confirmed",
            Message::Input(_) => "input",
            Message::Garbage(_) => "garbage",
        }
    }

    pub fn round(&self) -> Option<RoundId> {
        match self {
            Message::Epoch { super_epoch, epoch, .. } => Some(RoundId::new(*super_epoch, *epoch, 0)),
            Message::EpochCert(c) | Message::Qc(c) => Some(c.round),
            Message::View { super_epoch, epoch, view, .. } => Some(RoundId::new(*super_epoch, *epoch, *view)),
            Message::Proposal { block, .. } => Some(block.round),
            Message::Vote(v) => Some(v.round),
            Message::Confirmed { qc, .. } => Some(qc.round),
            Message::Input(_) | Message::Garbage(_) => None,
        }
    }

    pub fn block(&self) -> Option<Digest> {
        match self {
            Message::Proposal { block, .. } | Message::Confirmed { block, .. } => Some(block.hash),
            Message::Vote(v) => Some(v.block),
            Message::Qc(c) => c.block,
            _ => None,
        }
    }

    /// Blocks carried in the message body or a trimmed attachment.
    pub fn carried_blocks(&self) -> Vec<&Arc<Block>> {
        let mut out = Vec::new();
        let att = match self {
            Message::Proposal { block, attachment, .. } => {
                out.push(block);
                Some(attachment)
            }
            Message::Confirmed { block, .. } => {
                out.push(block);
                None
            }
            Message::View { attachment, .. } => Some(attachment),
            _ => None,
        };
        if let Some(Attachment::Certified { block, .. }) = att {
            out.push(block);
        }
        out
    }
}

impl WireSize for Attachment {
    fn wire_bits(&self, kappa: u32) -> u64 {
        TAG_BITS
            + match self {
                Attachment::None | Attachment::State(_) => 0,
                Attachment::Certified { block, qc } => block.wire_bits(kappa) + qc.wire_bits(kappa),
            }
    }
}

impl Encode for Attachment {
    fn encode(&self, w: &mut Writer) {
        match self {
            Attachment::None => {
                w.u8(0);
            }
            Attachment::State(_) => {
                w.u8(1);
            }
            Attachment::Certified { block, qc } => {
                w.u8(2);
                block.encode(w);
                qc.encode(w);
            }
        }
    }
}

impl WireSize for Message {
    fn wire_bits(&self, kappa: u32) -> u64 {
        let k = kappa as u64;
        TAG_BITS
            + match self {
                Message::Epoch { .. } => 128 + k,
                Message::EpochCert(c) | Message::Qc(c) => c.wire_bits(kappa),
                Message::View { attachment, .. } => 192 + k + attachment.wire_bits(kappa),
                Message::Proposal { block, vc, attachment } => {
                    block.wire_bits(kappa) + vc.wire_bits(kappa) + attachment.wire_bits(kappa)
                }
                Message::Vote(v) => v.wire_bits(kappa),
                Message::Confirmed { block, qc } => block.wire_bits(kappa) + qc.wire_bits(kappa),
                Message::Input(i) => i.wire_bits(kappa),
                Message::Garbage(g) => LEN_BITS + 8 * g.len() as u64,
            }
    }
}

impl Encode for Message {
    fn encode(&self, w: &mut Writer) {
        match self {
            Message::Epoch { super_epoch, epoch, sig } => {
                w.u8(0).u64(*super_epoch).u64(*epoch).kappa(&sig.tag());
            }
            Message::EpochCert(c) => {
                w.u8(1);
                c.encode(w);
            }
            Message::View { super_epoch, epoch, view, sig, attachment } => {
                w.u8(2).u64(*super_epoch).u64(*epoch).u64(*view).kappa(&sig.tag());
                attachment.encode(w);
            }
            Message::Proposal { block, vc, attachment } => {
                w.u8(3);
                block.encode(w);
                vc.encode(w);
                attachment.encode(w);
            }
            Message::Vote(v) => {
                w.u8(4);
                v.encode(w);
            }
            Message::Qc(c) => {
                w.u8(5);
                c.encode(w);
            }
            Message::Confirmed { block, qc } => {
                w.u8(6);
                block.encode(w);
                qc.encode(w);
            }
            Message::Input(i) => {
                w.u8(7);
                i.encode(w);
            }
            Message::Garbage(g) => {
                w.u8(8).len(g.len());
                for b in g {
                    w.u8(*b);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Crypto, DEFAULT_KAPPA};
    use crate::types::{BlockPayload, CertKind, ProtocolParams, ReplicaId, Request, Value};

    #[test]
    fn encoded_length_matches_accounted_bits() {
        let c = Crypto::new(4, DEFAULT_KAPPA, 5).unwrap();
        let p = ProtocolParams::new(4, 1, 10, DEFAULT_KAPPA).unwrap();
        let g = Arc::new(Block::genesis(&c));
        let k = c.keypair(ReplicaId(1));
        let b = Arc::new(Block::propose(
            &c,
            &k,
            &g.hash,
            RoundId::new(1, 1, 0),
            BlockPayload::Requests(vec![Request(1)]),
        ));
        let r = RoundId::new(1, 1, 0).with_stage(1);
        let shares: Vec<_> = (0..3)
            .map(|i| c.sign(&c.keypair(ReplicaId(i)), &crate::types::vote_bytes(&r, &b.hash, 256)))
            .collect();
        let qc = Certificate { kind: CertKind::Qc, round: r, block: Some(b.hash), sig: Some(c.aggregate(&shares, &p).unwrap()) };
        let vc = Certificate { kind: CertKind::Vc, round: RoundId::new(1, 1, 0), block: None, sig: qc.sig.clone() };
        let msgs = vec![
            Message::Epoch { super_epoch: 1, epoch: 2, sig: shares[0] },
            Message::EpochCert(vc.clone()),
            Message::View {
                super_epoch: 1,
                epoch: 1,
                view: 1,
                sig: shares[1],
                attachment: Attachment::Certified { block: b.clone(), qc: qc.clone() },
            },
            Message::Proposal { block: b.clone(), vc: vc.clone(), attachment: Attachment::None },
            Message::Vote(Vote::new(&c, &k, r, b.hash)),
            Message::Qc(qc.clone()),
            Message::Confirmed { block: b.clone(), qc },
            Message::Input(BaInput::new(&c, &k, Value::from_token(3))),
            Message::Garbage(vec![1, 2, 3]),
        ];
        for m in msgs {
            assert_eq!(m.to_bytes(DEFAULT_KAPPA).len() as u64 * 8, m.wire_bits(DEFAULT_KAPPA), "{}", m.kind());
        }
    }
}
