use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Set of bidder indices stored as a 64-bit mask.
///
/// Bit `i` is the bidder at position `i` of the market (displayed as id `i + 1`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BidderSet(u64);

pub const MAX_BIDDERS: usize = 64;

impl BidderSet {
    pub const EMPTY: BidderSet = BidderSet(0);

    pub fn from_bits(bits: u64) -> Self {
        BidderSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_BIDDERS, "at most {MAX_BIDDERS} bidders");
        if n == MAX_BIDDERS {
            BidderSet(u64::MAX)
        } else {
            BidderSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        BidderSet(1u64 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(it: I) -> Self {
        it.into_iter().fold(BidderSet::EMPTY, |s, i| s.with(i))
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_BIDDERS && self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        BidderSet(self.0 | 1u64 << i)
    }

    pub fn without(self, i: usize) -> Self {
        BidderSet(self.0 & !(1u64 << i))
    }

    pub fn union(self, o: Self) -> Self {
        BidderSet(self.0 | o.0)
    }

    pub fn intersection(self, o: Self) -> Self {
        BidderSet(self.0 & o.0)
    }

    pub fn difference(self, o: Self) -> Self {
        BidderSet(self.0 & !o.0)
    }

    pub fn is_subset(self, o: Self) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> Members {
        Members(self.0)
    }

    /// All subsets of `self`, in increasing order of their bit patterns.
    pub fn subsets(self) -> Subsets {
        Subsets { mask: self.0, next: Some(0) }
    }

    /// 1-based ids, as shown in reports.
    pub fn ids(self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }

    pub fn from_ids(ids: &[usize]) -> Self {
        BidderSet::from_indices(ids.iter().map(|&i| i - 1))
    }
}

pub struct Members(u64);

impl Iterator for Members {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }
}

pub struct Subsets {
    mask: u64,
    next: Option<u64>,
}

impl Iterator for Subsets {
    type Item = BidderSet;

    fn next(&mut self) -> Option<BidderSet> {
        let cur = self.next?;
        self.next = if cur == self.mask { None } else { Some((cur.wrapping_sub(self.mask)) & self.mask) };
        Some(BidderSet(cur))
    }
}

impl fmt::Debug for BidderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for BidderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, id) in self.ids().iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for BidderSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.ids().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BidderSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(d)?;
        if ids.iter().any(|&i| i == 0 || i > MAX_BIDDERS) {
            return Err(serde::de::Error::custom("bidder ids must be in 1..=64"));
        }
        Ok(BidderSet::from_ids(&ids))
    }
}
