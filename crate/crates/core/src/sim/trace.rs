//! Execution trace: one structured record per event, exported as JSON lines.

use std::borrow::Cow;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;
use crate::types::{Mode, RoundId, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Config,
    Gst,
    Send,
    Deliver,
    Block,
    WishEpoch,
    EnterEpoch,
    EnterSuperEpoch,
    WishView,
    EnterView,
    Omit,
    Confirm,
    Corrupt,
    Terminate,
    Clamp,
    Drop,
    End,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub n: u32,
    pub f: u32,
    pub delta: u64,
    pub kappa: u32,
    pub gst: Time,
    pub horizon: Time,
    pub seed: u64,
    pub mode: Mode,
    pub strategy: String,
    pub genesis: Digest,
    /// BA inputs by replica, as value tokens.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub time: Time,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<RoundId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Digest>,
    /// Send time of a delivered message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent: Option<Time>,
    /// Scheduled delivery time of a sent message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<Cow<'static, str>>,
    /// Decision or output value token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
    /// Request tokens of a block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<Cow<'static, str>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TraceHeader>,
}

impl Record {
    pub fn new(time: Time, kind: Kind) -> Self {
        Record {
            time,
            kind,
            from: None,
            to: None,
            bits: None,
            round: None,
            block: None,
            parent: None,
            sent: None,
            at: None,
            msg: None,
            value: None,
            requests: None,
            note: None,
            config: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: trace is truncated (no end record)")]
    Truncated { line: usize },
    #[error("trace has no config header")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn header(&self) -> Option<&TraceHeader> {
        self.records.first().and_then(|r| r.config.as_ref())
    }

    pub fn gst(&self) -> Option<Time> {
        self.records.iter().find(|r| r.kind == Kind::Gst).map(|r| r.time)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    /// Parses a JSON-lines trace. A trace must end with an `end` record.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut records = Vec::new();
        let mut line_no = 0;
        for line in r.lines() {
            line_no += 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| TraceError::Parse { line: line_no, message: e.to_string() })?;
            records.push(rec);
        }
        match records.last() {
            Some(r) if r.kind == Kind::End => {}
            _ => return Err(TraceError::Truncated { line: line_no + 1 }),
        }
        if records.first().and_then(|r| r.config.as_ref()).is_none() {
            return Err(TraceError::MissingHeader);
        }
        Ok(Trace { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut head = Record::new(0, Kind::Config);
        head.config = Some(TraceHeader {
            n: 4,
            f: 1,
            delta: 10,
            kappa: 256,
            gst: 0,
            horizon: 100,
            seed: 1,
            mode: Mode::Smr,
            strategy: "none".into(),
            genesis: Digest::ZERO,
            inputs: vec![],
        });
        let mut send = Record::new(3, Kind::Send);
        send.from = Some(1);
        send.to = Some(2);
        send.bits = Some(400);
        send.round = Some(RoundId::new(1, 1, 0).with_stage(2));
        send.msg = Some("vote".into());
        Trace { records: vec![head, send, Record::new(100, Kind::End)] }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample();
        let bytes = t.to_jsonl();
        let back = Trace::read_jsonl(&bytes[..]).unwrap();
        assert_eq!(back, t);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"round\":\"1.1.0.2\""));
    }

    #[test]
    fn truncated_file_reports_line() {
        let bytes = sample().to_jsonl();
        let text = String::from_utf8(bytes).unwrap();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        match Trace::read_jsonl(cut.as_bytes()) {
            Err(TraceError::Truncated { line }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let partial = &text[..text.len() - 10];
        match Trace::read_jsonl(partial.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
