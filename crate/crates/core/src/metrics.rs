//! Complexity measures computed from a finished trace.
//!
//! A replica is correct here if the trace has no corruption record for it.
//! Self-deliveries never appear as sends, so they are never counted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::crypto::Digest;
use crate::sim::{Kind, Record, Trace, TraceHeader};
use crate::types::{Mode, Time};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("trace has no config header")]
    MissingHeader,
    #[error("trace has no gst marker")]
    MissingGst,
    #[error("no confirmation at or after gst")]
    NoConfirmation,
    #[error("only {found} blocks confirmed after gst+delta, need {needed}")]
    InsufficientConfirmations { found: usize, needed: usize },
    #[error("bit accounting is not meaningful in {0} mode")]
    ModeMismatch(Mode),
}

/// Half-open interval (after, until].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub after: Time,
    pub until: Time,
}

impl Window {
    pub fn contains(&self, t: Time) -> bool {
        t > self.after && t <= self.until
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorstCase {
    pub window: Window,
    pub messages: u64,
    pub bits: u64,
    /// False if no confirmation was seen and the window ran to the horizon.
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanMessages {
    /// Sends in (c_i, c_i+1] for consecutive first-confirmation times c_i.
    pub per_block: Vec<u64>,
    pub mean: f64,
}

/// Read-only index over a trace.
pub struct TraceView<'a> {
    trace: &'a Trace,
    header: &'a TraceHeader,
    gst: Time,
    corrupted: BTreeSet<u32>,
    end: Time,
}

impl<'a> TraceView<'a> {
    pub fn new(trace: &'a Trace) -> Result<Self, MetricsError> {
        let header = trace.header().ok_or(MetricsError::MissingHeader)?;
        let gst = trace.gst().ok_or(MetricsError::MissingGst)?;
        let corrupted = trace
            .records
            .iter()
            .filter(|r| r.kind == Kind::Corrupt)
            .filter_map(|r| r.from)
            .collect();
        let end = trace.records.last().map_or(0, |r| r.time);
        Ok(TraceView { trace, header, gst, corrupted, end })
    }

    pub fn header(&self) -> &TraceHeader {
        self.header
    }

    pub fn gst(&self) -> Time {
        self.gst
    }

    pub fn corrupted(&self) -> &BTreeSet<u32> {
        &self.corrupted
    }

    pub fn is_correct(&self, r: u32) -> bool {
        !self.corrupted.contains(&r)
    }

    fn of_correct(&self, kind: Kind) -> impl Iterator<Item = &'a Record> + '_ {
        self.trace
            .records
            .iter()
            .filter(move |r| r.kind == kind && r.from.is_some_and(|f| !self.corrupted.contains(&f)))
    }

    pub fn correct_sends(&self) -> impl Iterator<Item = &'a Record> + '_ {
        self.of_correct(Kind::Send)
    }

    pub fn correct_confirms(&self) -> impl Iterator<Item = &'a Record> + '_ {
        self.of_correct(Kind::Confirm)
    }

    pub fn first_confirmation(&self) -> Option<Time> {
        self.correct_confirms().map(|r| r.time).min()
    }

    /// Blocks in the order some correct replica first confirmed them, with
    /// that time.
    pub fn confirmation_order(&self) -> Vec<(Digest, Time)> {
        let mut seen = HashMap::new();
        let mut order = Vec::new();
        for r in self.correct_confirms() {
            let Some(b) = r.block else { continue };
            if seen.insert(b, r.time).is_none() {
                order.push((b, r.time));
            }
        }
        order
    }

    pub fn worst_case(&self) -> WorstCase {
        let after = self.gst + self.header.delta;
        // the first confirmation that the window can end on
        let first = self.correct_confirms().map(|r| r.time).filter(|t| *t > after).min();
        let (until, complete) = match first {
            Some(t) => (t, true),
            None => (self.end, false),
        };
        let window = Window { after, until };
        let (mut messages, mut bits) = (0, 0);
        for s in self.correct_sends().filter(|s| window.contains(s.time)) {
            messages += 1;
            bits += s.bits.unwrap_or(0);
        }
        WorstCase { window, messages, bits, complete }
    }

    pub fn time_to_first_confirmation(&self) -> Result<Time, MetricsError> {
        self.correct_confirms()
            .map(|r| r.time)
            .filter(|t| *t >= self.gst)
            .min()
            .map(|t| t - self.gst)
            .ok_or(MetricsError::NoConfirmation)
    }

    pub fn mean_messages(&self, k_min: usize) -> Result<MeanMessages, MetricsError> {
        let after = self.gst + self.header.delta;
        let times: Vec<Time> = self.confirmation_order().into_iter().map(|(_, t)| t).filter(|t| *t > after).collect();
        if times.len() < k_min.max(2) {
            return Err(MetricsError::InsufficientConfirmations { found: times.len(), needed: k_min.max(2) });
        }
        let sends: Vec<Time> = self.correct_sends().map(|r| r.time).collect();
        let per_block: Vec<u64> = times
            .windows(2)
            .map(|w| {
                let lo = sends.partition_point(|t| *t <= w[0]);
                let hi = sends.partition_point(|t| *t <= w[1]);
                hi.saturating_sub(lo) as u64
            })
            .collect();
        let mean = per_block.iter().sum::<u64>() as f64 / per_block.len() as f64;
        Ok(MeanMessages { per_block, mean })
    }

    pub fn communication_bits(&self, window: Window) -> Result<u64, MetricsError> {
        if self.header.mode == Mode::Smr {
            return Err(MetricsError::ModeMismatch(Mode::Smr));
        }
        Ok(self.correct_sends().filter(|s| window.contains(s.time)).filter_map(|s| s.bits).sum())
    }

    /// Correct epoch and EC sends per (super-epoch, epoch) they name.
    pub fn epoch_change_counts(&self) -> BTreeMap<(u64, u64), u64> {
        let mut out = BTreeMap::new();
        for s in self.correct_sends() {
            if matches!(s.msg.as_deref(), Some("epoch") | Some("ec")) {
                if let Some(r) = s.round {
                    *out.entry((r.super_epoch, r.epoch)).or_default() += 1;
                }
            }
        }
        out
    }
}

/// n(f+1) + 2n².
pub fn epoch_change_bound(n: u32, f: u32) -> u64 {
    let n = n as u64;
    n * (f as u64 + 1) + 2 * n * n
}

/// One report row per run.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub mode: Mode,
    pub n: u32,
    pub f: u32,
    pub delta: u64,
    pub gst: Time,
    pub strategy: String,
    pub seed: u64,
    pub wc_messages: u64,
    /// Only in modes with meaningful bit accounting.
    pub wc_bits: Option<u64>,
    pub wc_complete: bool,
    pub ttfc: Option<Time>,
    pub k: usize,
    pub mean_messages: Option<f64>,
    pub max_epoch_change: u64,
    pub confirmed_blocks: usize,
    pub total_sends: u64,
}

pub const CSV_HEADER: &str = "mode,n,f,delta,gst,strategy,seed,wc_messages,wc_bits,wc_complete,ttfc,k,mean_messages,max_epoch_change,confirmed_blocks,total_sends";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComplexityReport {
    pub fn from_trace(trace: &Trace) -> Result<Self, MetricsError> {
        let v = TraceView::new(trace)?;
        let h = v.header();
        let wc = v.worst_case();
        let mean = v.mean_messages(2).ok();
        Ok(ComplexityReport {
            mode: h.mode,
            n: h.n,
            f: h.f,
            delta: h.delta,
            gst: v.gst(),
            strategy: h.strategy.clone(),
            seed: h.seed,
            wc_messages: wc.messages,
            wc_bits: v.communication_bits(wc.window).ok(),
            wc_complete: wc.complete,
            ttfc: v.time_to_first_confirmation().ok(),
            k: mean.as_ref().map_or(0, |m| m.per_block.len()),
            mean_messages: mean.map(|m| m.mean),
            max_epoch_change: v.epoch_change_counts().values().copied().max().unwrap_or(0),
            confirmed_blocks: v.confirmation_order().len(),
            total_sends: v.correct_sends().count() as u64,
        })
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.n,
            self.f,
            self.delta,
            self.gst,
            self.strategy,
            self.seed,
            self.wc_messages,
            opt(self.wc_bits),
            self.wc_complete,
            opt(self.ttfc),
            self.k,
            opt(self.mean_messages.map(|m| format!("{m:.3}"))),
            self.max_epoch_change,
            self.confirmed_blocks,
            self.total_sends,
        )
        .expect("writing to a string");
        s
    }
}

/// Least-squares slope of log y against log x. Points with y = 0 are skipped.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RoundId;

    fn header(mode: Mode) -> Record {
        let mut r = Record::new(0, Kind::Config);
        r.config = Some(TraceHeader {
            n: 4,
            f: 1,
            delta: 10,
            kappa: 256,
            gst: 100,
            horizon: 1000,
            seed: 0,
            mode,
            strategy: "none".into(),
            genesis: Digest::ZERO,
            inputs: vec![],
        });
        r
    }

    fn send(t: Time, from: u32, bits: u64) -> Record {
        let mut r = Record::new(t, Kind::Send);
        r.from = Some(from);
        r.to = Some((from + 1) % 4);
        r.bits = Some(bits);
        r.msg = Some("vote".into());
        r
    }

    fn confirm(t: Time, from: u32, b: u8) -> Record {
        let mut r = Record::new(t, Kind::Confirm);
        r.from = Some(from);
        r.block = Some(Digest([b; 32]));
        r
    }

    fn corrupt(t: Time, who: u32) -> Record {
        let mut r = Record::new(t, Kind::Corrupt);
        r.from = Some(who);
        r
    }

    fn trace(mode: Mode, mut body: Vec<Record>) -> Trace {
        let mut records = vec![header(mode), Record::new(100, Kind::Gst)];
        records.append(&mut body);
        records.sort_by_key(|r| r.time);
        records.push(Record::new(1000, Kind::End));
        Trace { records }
    }

    #[test]
    fn window_excludes_gst_plus_delta_and_includes_confirmation_instant() {
        let t = trace(
            Mode::Ba,
            vec![send(110, 0, 5), send(111, 0, 7), send(150, 2, 11), send(151, 1, 13), confirm(150, 3, 1)],
        );
        let wc = TraceView::new(&t).unwrap().worst_case();
        assert_eq!(wc.window, Window { after: 110, until: 150 });
        assert_eq!((wc.messages, wc.bits, wc.complete), (2, 18, true));
    }

    #[test]
    fn corrupted_senders_and_confirmers_are_ignored() {
        let t = trace(Mode::Ba, vec![corrupt(500, 2), send(120, 2, 5), confirm(130, 2, 1), send(140, 1, 1), confirm(160, 0, 1)]);
        let v = TraceView::new(&t).unwrap();
        assert_eq!(v.first_confirmation(), Some(160));
        assert_eq!(v.worst_case().messages, 1);
    }

    #[test]
    fn window_ends_at_first_confirmation_after_gst_plus_delta() {
        let t = trace(Mode::Smr, vec![confirm(50, 0, 1), send(120, 0, 1), confirm(130, 1, 2), send(131, 0, 1)]);
        let v = TraceView::new(&t).unwrap();
        assert_eq!(v.worst_case().window, Window { after: 110, until: 130 });
        assert_eq!(v.worst_case().messages, 1);
        assert_eq!(v.time_to_first_confirmation(), Ok(30));
        assert_eq!(v.communication_bits(v.worst_case().window), Err(MetricsError::ModeMismatch(Mode::Smr)));
    }

    #[test]
    fn no_confirmation_runs_to_end_and_flags() {
        let t = trace(Mode::Ba, vec![send(200, 0, 1)]);
        let v = TraceView::new(&t).unwrap();
        let wc = v.worst_case();
        assert!(!wc.complete);
        assert_eq!(wc.messages, 1);
        assert_eq!(v.time_to_first_confirmation(), Err(MetricsError::NoConfirmation));
    }

    #[test]
    fn mean_counts_sends_up_to_the_next_confirmation() {
        let t = trace(
            Mode::Smr,
            vec![
                confirm(120, 0, 1),
                send(120, 0, 1),
                send(121, 1, 1),
                send(125, 1, 1),
                confirm(130, 2, 2),
                send(130, 3, 1),
                confirm(131, 0, 2),
                confirm(140, 1, 3),
            ],
        );
        let m = TraceView::new(&t).unwrap().mean_messages(3).unwrap();
        assert_eq!(m.per_block, vec![3, 0]);
        assert_eq!(m.mean, 1.5);
        let err = TraceView::new(&t).unwrap().mean_messages(4).unwrap_err();
        assert_eq!(err, MetricsError::InsufficientConfirmations { found: 3, needed: 4 });
    }

    #[test]
    fn empty_gaps_give_zero_mean() {
        let t = trace(Mode::Smr, vec![confirm(120, 0, 1), confirm(130, 0, 2)]);
        assert_eq!(TraceView::new(&t).unwrap().mean_messages(2).unwrap().mean, 0.0);
    }

    #[test]
    fn epoch_change_counts_group_by_epoch() {
        let mut a = send(120, 0, 1);
        a.msg = Some("epoch".into());
        a.round = Some(RoundId::new(1, 2, 0));
        let mut b = a.clone();
        b.msg = Some("ec".into());
        let t = trace(Mode::Smr, vec![a, b]);
        let c = TraceView::new(&t).unwrap().epoch_change_counts();
        assert_eq!(c.get(&(1, 2)), Some(&2));
        assert_eq!(epoch_change_bound(4, 1), 40);
    }

    #[test]
    fn missing_gst_is_an_error() {
        let t = Trace { records: vec![header(Mode::Smr), Record::new(5, Kind::End)] };
        assert!(matches!(TraceView::new(&t), Err(MetricsError::MissingGst)));
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [4.0, 7.0, 10.0, 13.0].iter().map(|&n: &f64| (n, 3.0 * n * n)).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(loglog_slope(&[(4.0, 1.0)]), None);
    }
}
