//! Canonical byte encoding.
//!
//! Fixed field order, big-endian integers, 32-bit length prefixes for lists.
//! Digests, signatures and κ-bit values are written as exactly κ/8 bytes.
//! Every type that goes on the wire also reports its size arithmetically via
//! [`WireSize`]; the two must always agree.

use crate::crypto::Digest;

pub const ID_BITS: u64 = 32;
pub const LEN_BITS: u64 = 32;
pub const TAG_BITS: u64 = 8;
pub const ROUND_BITS: u64 = 3 * 64 + 8;
pub const REQUEST_BITS: u64 = 64;

pub struct Writer {
    buf: Vec<u8>,
    kappa_bytes: usize,
}

impl Writer {
    pub fn new(kappa: u32) -> Self {
        Writer { buf: Vec::with_capacity(96), kappa_bytes: (kappa / 8) as usize }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        self.u32(n as u32)
    }

    /// κ-bit field.
    pub fn kappa(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0[..self.kappa_bytes]);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer);

    fn to_bytes(&self, kappa: u32) -> Vec<u8> {
        let mut w = Writer::new(kappa);
        self.encode(&mut w);
        w.finish()
    }
}

pub trait WireSize {
    fn wire_bits(&self, kappa: u32) -> u64;
}
