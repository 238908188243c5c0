//! Two-cursor chain recovery planner.
//!
//! Starting from the header block, a forward cursor follows unlocked `next`
//! pointers while a backward cursor follows `previous` pointers around the
//! circle. Each round the planner hands out at most one address per cursor;
//! the caller fetches them concurrently and reports back. A cursor stops when
//! its next address is already claimed or when the expected block count is
//! reached. With only the forward cursor the same planner gives the
//! unidirectional baseline.
//!
//! For an `N`-block chain the bidirectional plan needs `ceil((N - 1) / 2)`
//! rounds after the header; the unidirectional one needs `N - 1`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::digest::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchMode {
    Bidirectional,
    Unidirectional,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("chain incomplete: {fetched} of {expected} blocks recovered, {} addresses unresolved", missing.len())]
    Incomplete { expected: usize, fetched: usize, missing: Vec<Digest> },
    #[error("recovered blocks do not close into a circle of {0} blocks")]
    Broken(usize),
}

#[derive(Debug, Clone)]
struct Entry<T> {
    next: Digest,
    item: T,
}

/// Cursor state for one recovery.
#[derive(Debug, Clone)]
pub struct FetchPlan<T> {
    header: Digest,
    expected: usize,
    entries: BTreeMap<Digest, Entry<T>>,
    claimed: BTreeSet<Digest>,
    forward: Option<Digest>,
    backward: Option<Digest>,
    missing: Vec<Digest>,
    rounds: usize,
}

impl<T> FetchPlan<T> {
    /// Seeds the plan with the already-fetched, unlocked header block.
    pub fn new(header: Digest, previous: Digest, next: Digest, item: T, expected: usize, mode: FetchMode) -> FetchPlan<T> {
        let mut entries = BTreeMap::new();
        entries.insert(header, Entry { next, item });
        let mut claimed = BTreeSet::new();
        claimed.insert(header);
        FetchPlan {
            header,
            expected,
            entries,
            claimed,
            forward: Some(next),
            backward: match mode {
                FetchMode::Bidirectional => Some(previous),
                FetchMode::Unidirectional => None,
            },
            missing: Vec::new(),
            rounds: 0,
        }
    }

    fn cursor(&mut self, dir: Direction) -> &mut Option<Digest> {
        match dir {
            Direction::Forward => &mut self.forward,
            Direction::Backward => &mut self.backward,
        }
    }

    /// Claims the next address for each live cursor. An empty result means
    /// the plan is finished.
    pub fn next_targets(&mut self) -> Vec<(Direction, Digest)> {
        let mut out = Vec::with_capacity(2);
        for dir in [Direction::Forward, Direction::Backward] {
            let Some(target) = *self.cursor(dir) else { continue };
            if self.claimed.len() >= self.expected || self.claimed.contains(&target) {
                *self.cursor(dir) = None;
                continue;
            }
            self.claimed.insert(target);
            out.push((dir, target));
        }
        if !out.is_empty() {
            self.rounds += 1;
        }
        out
    }

    /// Records a fetched block and moves its cursor to the neighbour in the
    /// cursor's direction.
    pub fn deliver(&mut self, dir: Direction, address: Digest, previous: Digest, next: Digest, item: T) {
        self.entries.insert(address, Entry { next, item });
        *self.cursor(dir) = Some(match dir {
            Direction::Forward => next,
            Direction::Backward => previous,
        });
    }

    /// Records that `address` could not be obtained; its cursor stops.
    pub fn fail(&mut self, dir: Direction, address: Digest) {
        self.missing.push(address);
        *self.cursor(dir) = None;
    }

    pub fn is_done(&self) -> bool {
        self.forward.is_none() && self.backward.is_none()
    }

    pub fn fetched(&self) -> usize {
        self.entries.len()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn missing(&self) -> &[Digest] {
        &self.missing
    }

    /// Returns the blocks in chain order, walking `next` pointers from the
    /// header.
    pub fn finish(mut self) -> Result<Vec<(Digest, T)>, FetchError> {
        if !self.missing.is_empty() || self.entries.len() < self.expected {
            return Err(FetchError::Incomplete {
                expected: self.expected,
                fetched: self.entries.len(),
                missing: self.missing,
            });
        }
        let mut out = Vec::with_capacity(self.expected);
        let mut at = self.header;
        for _ in 0..self.expected {
            let entry = self.entries.remove(&at).ok_or(FetchError::Broken(self.expected))?;
            out.push((at, entry.item));
            at = entry.next;
        }
        if at != self.header {
            return Err(FetchError::Broken(self.expected));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("baseline access time must be positive, got {0}")]
pub struct SpeedupError(pub f64);

/// Relative reduction in access time: `1 - bidirectional / unidirectional`.
pub fn speedup(bidirectional: f64, unidirectional: f64) -> Result<f64, SpeedupError> {
    if !(unidirectional > 0.0) {
        return Err(SpeedupError(unidirectional));
    }
    Ok(1.0 - bidirectional / unidirectional)
}
