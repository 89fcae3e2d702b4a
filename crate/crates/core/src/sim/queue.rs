//! Deterministic event queue ordered by (fire time, insertion sequence).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::types::Time;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event queue is empty")]
pub struct EmptyQueue;

struct Entry<E> {
    at: Time,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the sequence number assigned to the event.
    pub fn push(&mut self, at: Time, event: E) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, event }));
        seq
    }

    /// Removes the earliest event, ties going to the lower sequence number.
    pub fn pop(&mut self) -> Result<(Time, u64, E), EmptyQueue> {
        let Reverse(e) = self.heap.pop().ok_or(EmptyQueue)?;
        Ok((e.at, e.seq, e.event))
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_breaks_ties() {
        let mut q = EventQueue::new();
        let a = q.push(5, "first");
        let b = q.push(5, "second");
        assert!(a < b);
        assert_eq!(q.pop().unwrap().2, "first");
        assert_eq!(q.pop().unwrap().2, "second");
    }

    #[test]
    fn earlier_time_first() {
        let mut q = EventQueue::new();
        q.push(5, 'b');
        q.push(3, 'a');
        assert_eq!(q.pop().unwrap(), (3, 1, 'a'));
    }

    #[test]
    fn singleton_and_empty() {
        let mut q = EventQueue::new();
        q.push(9, ());
        assert_eq!(q.pop().unwrap().0, 9);
        assert_eq!(q.pop(), Err(EmptyQueue));
    }
}
