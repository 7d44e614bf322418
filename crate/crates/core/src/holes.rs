//! Reassembly bookkeeping over a 128-bit byte space.
//!
//! [`RangeSet`] is an ordered set of disjoint, non-adjacent half-open ranges.
//! [`HoleTracker`] wraps one to record what a receiver holds and to produce
//! the hole lists carried in Status packets.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: u128,
    pub end: u128,
}

impl ByteRange {
    pub fn new(start: u128, end: u128) -> Self {
        debug_assert!(start < end, "empty byte range {start}..{end}");
        Self { start, end }
    }

    pub fn len(&self) -> u128 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn intersect(&self, other: &ByteRange) -> Option<ByteRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(ByteRange { start, end })
    }
}

impl fmt::Display for ByteRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// Ordered set of disjoint ranges; touching ranges are merged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    // start -> end
    ranges: BTreeMap<u128, u128>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Number of maximal ranges.
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = ByteRange> + '_ {
        self.ranges
            .iter()
            .map(|(&start, &end)| ByteRange { start, end })
    }

    pub fn first(&self) -> Option<ByteRange> {
        self.ranges
            .first_key_value()
            .map(|(&start, &end)| ByteRange { start, end })
    }

    /// Total bytes covered.
    pub fn covered(&self) -> u128 {
        self.iter().map(|r| r.len()).sum()
    }

    /// Largest end, 0 when empty.
    pub fn max_end(&self) -> u128 {
        self.ranges.last_key_value().map_or(0, |(_, &e)| e)
    }

    pub fn contains(&self, offset: u128) -> bool {
        self.ranges
            .range(..=offset)
            .next_back()
            .is_some_and(|(_, &e)| offset < e)
    }

    /// Adds `r`, returning the parts that were not already present.
    pub fn insert(&mut self, r: ByteRange) -> Vec<ByteRange> {
        if r.is_empty() {
            return Vec::new();
        }
        let added = self.uncovered_within(r);
        if added.is_empty() {
            return added;
        }
        let mut start = r.start;
        let mut end = r.end;
        // A range that ends at or after `start` and begins before it may merge.
        if let Some((&s, &e)) = self.ranges.range(..=start).next_back() {
            if e >= start {
                start = s;
                end = end.max(e);
            }
        }
        let overlapping: Vec<u128> = self.ranges.range(start..=end).map(|(&s, _)| s).collect();
        for s in overlapping {
            if let Some(e) = self.ranges.remove(&s) {
                end = end.max(e);
            }
        }
        self.ranges.insert(start, end);
        added
    }

    /// Removes `r` from the set.
    pub fn remove(&mut self, r: ByteRange) {
        if r.is_empty() {
            return;
        }
        let mut touched: Vec<(u128, u128)> = Vec::new();
        if let Some((&s, &e)) = self.ranges.range(..r.start).next_back() {
            if e > r.start {
                touched.push((s, e));
            }
        }
        touched.extend(self.ranges.range(r.start..r.end).map(|(&s, &e)| (s, e)));
        for (s, e) in touched {
            self.ranges.remove(&s);
            if s < r.start {
                self.ranges.insert(s, r.start);
            }
            if e > r.end {
                self.ranges.insert(r.end, e);
            }
        }
    }

    /// Parts of `r` not covered by the set, ascending.
    pub fn uncovered_within(&self, r: ByteRange) -> Vec<ByteRange> {
        self.gaps(r.start, r.end, usize::MAX)
    }

    /// Ranges of the set clipped to `r`, ascending.
    pub fn covered_within(&self, r: ByteRange) -> Vec<ByteRange> {
        let mut out = Vec::new();
        if let Some((&s, &e)) = self.ranges.range(..r.start).next_back() {
            if let Some(x) = (ByteRange { start: s, end: e }).intersect(&r) {
                out.push(x);
            }
        }
        for (&s, &e) in self.ranges.range(r.start..r.end) {
            if let Some(x) = (ByteRange { start: s, end: e }).intersect(&r) {
                out.push(x);
            }
        }
        out
    }

    /// Up to `max` gaps of the set inside `[lo, hi)`, ascending.
    pub fn gaps(&self, lo: u128, hi: u128, max: usize) -> Vec<ByteRange> {
        let mut out = Vec::new();
        if lo >= hi || max == 0 {
            return out;
        }
        let mut cursor = lo;
        if let Some((_, &e)) = self.ranges.range(..=lo).next_back() {
            cursor = cursor.max(e);
        }
        for (&s, &e) in self.ranges.range(lo..hi) {
            if s > cursor {
                out.push(ByteRange {
                    start: cursor,
                    end: s,
                });
                if out.len() == max {
                    return out;
                }
            }
            cursor = cursor.max(e);
        }
        if cursor < hi {
            out.push(ByteRange {
                start: cursor,
                end: hi,
            });
        }
        out
    }

    /// End of the range starting at `from`, or `from` if `from` is not covered.
    pub fn contiguous_from(&self, from: u128) -> u128 {
        match self.ranges.range(..=from).next_back() {
            Some((_, &e)) if e > from => e,
            _ => from,
        }
    }

    /// Drops everything below `floor`.
    pub fn trim_below(&mut self, floor: u128) {
        if floor == 0 {
            return;
        }
        self.remove(ByteRange {
            start: 0,
            end: floor,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HoleError {
    #[error("range {offset}+{len} extends beyond the transfer size {size}")]
    RangeBeyondEnd { offset: u128, len: u128, size: u128 },
    #[error("range {offset}+{len} overflows the 128-bit byte space")]
    Overflow { offset: u128, len: u128 },
    #[error("empty range")]
    Empty,
}

/// Records which bytes of a transfer have arrived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleTracker {
    received: RangeSet,
    expected_size: Option<u128>,
    high_water: u128,
}

impl HoleTracker {
    /// Tracker for a transfer of known size.
    pub fn with_size(size: u128) -> Self {
        Self {
            received: RangeSet::new(),
            expected_size: Some(size),
            high_water: 0,
        }
    }

    /// Tracker for an open-ended stream.
    pub fn unbounded() -> Self {
        Self {
            received: RangeSet::new(),
            expected_size: None,
            high_water: 0,
        }
    }

    pub fn expected_size(&self) -> Option<u128> {
        self.expected_size
    }

    /// One past the highest received byte, 0 if nothing arrived.
    pub fn high_water(&self) -> u128 {
        self.high_water
    }

    pub fn received(&self) -> &RangeSet {
        &self.received
    }

    /// Lowest byte not yet contiguously received from offset 0.
    pub fn contiguous_end(&self) -> u128 {
        self.received.contiguous_from(0)
    }

    /// Records `[offset, offset + len)` and returns the sub-ranges that were
    /// new. Marking already-received bytes is a no-op.
    pub fn mark_received(&mut self, offset: u128, len: u128) -> Result<Vec<ByteRange>, HoleError> {
        if len == 0 {
            return Err(HoleError::Empty);
        }
        let end = offset
            .checked_add(len)
            .ok_or(HoleError::Overflow { offset, len })?;
        if let Some(size) = self.expected_size {
            if end > size {
                return Err(HoleError::RangeBeyondEnd { offset, len, size });
            }
        }
        let added = self.received.insert(ByteRange { start: offset, end });
        self.high_water = self.high_water.max(end);
        Ok(added)
    }

    /// The first `max` holes below the reporting bound: the transfer size
    /// when known, otherwise the high-water mark.
    pub fn hole_list(&self, max: usize) -> Vec<ByteRange> {
        self.hole_list_from(0, max)
    }

    /// Like [`hole_list`](Self::hole_list) but ignoring everything below `floor`.
    pub fn hole_list_from(&self, floor: u128, max: usize) -> Vec<ByteRange> {
        let bound = self.expected_size.unwrap_or(self.high_water);
        self.received.gaps(floor, bound, max)
    }

    pub fn is_complete(&self) -> bool {
        match self.expected_size {
            None => false,
            Some(0) => true,
            Some(size) => self.contiguous_end() == size,
        }
    }
}
