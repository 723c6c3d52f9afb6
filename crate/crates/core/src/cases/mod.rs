//! Instance library: the 800 MW block-bid example, the IEEE test systems,
//! case modifications and random bid profiles.

mod matpower;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use matpower::{parse_matpower_case, parse_matpower_case_with, ParseOptions, ParsedCase};

use crate::bidset::BidderSet;
use crate::error::{Error, Result};
use crate::market::{BidFunction, BidProfile, Bidder, MarketInstance};

/// Single bus, 800 MW demand; one 800 MW block at $600 and two 400 MW blocks
/// at $300 + `epsilon`.
pub fn simple_example(epsilon: f64) -> Result<(MarketInstance, BidProfile)> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut m = MarketInstance::single_bus(
        "simple-800mw",
        800.0,
        vec![
            BidFunction::Block { quantity: 800.0, price: 600.0 },
            BidFunction::Block { quantity: 400.0, price: 300.0 + epsilon },
            BidFunction::Block { quantity: 400.0, price: 300.0 + epsilon },
        ],
    );
    m.meta.notes.push(format!("epsilon = {epsilon}"));
    let truthful = m.truthful_profile();
    Ok((m, truthful))
}

const CASE14: &str = include_str!("../../data/case14.m");
const CASE30: &str = include_str!("../../data/case30.m");
const CASE118: &str = include_str!("../../data/case118.m");
const CASE_IEEE30: &str = include_str!("../../data/case_ieee30.m");

/// `case30` is the MATPOWER optimal-power-flow variant with line ratings;
/// `case_ieee30` is the archive 30-bus system, which carries no ratings.
pub const IEEE_CASES: [&str; 4] = ["case14", "case30", "case_ieee30", "case118"];

/// MATPOWER text of a bundled IEEE case.
pub fn ieee_text(name: &str) -> Option<&'static str> {
    match name {
        "case14" => Some(CASE14),
        "case30" => Some(CASE30),
        "case118" => Some(CASE118),
        "case_ieee30" => Some(CASE_IEEE30),
        _ => None,
    }
}

pub fn ieee_case(name: &str) -> Result<ParsedCase> {
    let text = ieee_text(name).ok_or_else(|| Error::Precondition(format!("unknown bundled case {name:?}")))?;
    parse_matpower_case(text)
}

/// Replacement limit for every line between two buses (either direction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineLimit {
    pub from: usize,
    pub to: usize,
    /// MW; `None` removes the limit.
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedBidder {
    pub bus: usize,
    pub true_cost: BidFunction,
    #[serde(default = "one")]
    pub supply_type: usize,
    #[serde(default)]
    pub owner: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseOverride {
    #[serde(default)]
    pub line_limits: Vec<LineLimit>,
    #[serde(default)]
    pub added_bidders: Vec<AddedBidder>,
    /// Multiplies every bus demand.
    #[serde(default)]
    pub demand_scale: Option<f64>,
}

pub fn apply_overrides(instance: &MarketInstance, ov: &CaseOverride) -> Result<MarketInstance> {
    let mut m = instance.clone();
    for ll in &ov.line_limits {
        let mut hit = false;
        for line in m.lines.iter_mut() {
            if (line.from == ll.from && line.to == ll.to) || (line.from == ll.to && line.to == ll.from) {
                line.limit = ll.limit;
                hit = true;
            }
        }
        if !hit {
            return Err(Error::UnknownLine { from: ll.from, to: ll.to });
        }
    }
    for ab in &ov.added_bidders {
        if m.bus_index(ab.bus).is_none() {
            return Err(Error::UnknownBus(ab.bus));
        }
        let id = m.bidders.len() + 1;
        m.bidders.push(Bidder { id, bus: ab.bus, true_cost: ab.true_cost.clone(), supply_type: ab.supply_type, owner: ab.owner });
        if let Some(d) = m.d_linear.as_mut() {
            d.x.push(0.0);
        }
    }
    if let Some(f) = ov.demand_scale {
        if !(f >= 0.0) {
            return Err(Error::Precondition(format!("demand scale must be nonnegative, got {f}")));
        }
        for b in m.buses.iter_mut() {
            b.demand *= f;
        }
    }
    Ok(m)
}

/// Shape of sampled bids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidShape {
    Quadratic,
    /// Convex curve with `pieces` equal-length segments whose slopes are
    /// sorted draws from the linear range.
    PiecewiseLinear { pieces: usize },
    /// All-or-nothing at the bidder's capacity, priced at a drawn average price.
    Block,
    /// Same variant as the bidder's true cost.
    SameAsTrue,
}

/// Uniform sampling of bid coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidSampler {
    /// Range of the quadratic coefficient `a` ($/MW^2).
    pub quad: (f64, f64),
    /// Range of the linear coefficient `b` ($/MW).
    pub linear: (f64, f64),
    /// Range of capacities (MW); `None` keeps each bidder's true capacity.
    pub cap: Option<(f64, f64)>,
    pub shape: BidShape,
    pub seed: u64,
}

impl Default for BidSampler {
    fn default() -> Self {
        BidSampler { quad: (0.0, 0.1), linear: (10.0, 50.0), cap: None, shape: BidShape::Quadratic, seed: 0 }
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl BidSampler {
    /// Seed of the `index`-th profile in a stream.
    pub fn stream_seed(&self, index: u64) -> u64 {
        self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
    }

    pub fn sample_bid<R: Rng>(&self, rng: &mut R, truth: &BidFunction) -> BidFunction {
        let cap = match self.cap {
            Some(r) => draw(rng, r),
            None => truth.capacity(),
        };
        let shape = match self.shape {
            BidShape::SameAsTrue => match truth {
                BidFunction::Block { .. } | BidFunction::Menu { .. } => BidShape::Block,
                BidFunction::PiecewiseLinear { breakpoints } => BidShape::PiecewiseLinear { pieces: breakpoints.len() - 1 },
                _ => BidShape::Quadratic,
            },
            s => s,
        };
        match shape {
            BidShape::Quadratic => BidFunction::Quadratic { a: draw(rng, self.quad), b: draw(rng, self.linear), cap },
            BidShape::PiecewiseLinear { pieces } => {
                let pieces = pieces.max(1);
                let mut slopes: Vec<f64> = (0..pieces).map(|_| draw(rng, self.linear)).collect();
                slopes.sort_by(f64::total_cmp);
                let mut bp = vec![(0.0, 0.0)];
                let step = cap / pieces as f64;
                for (i, s) in slopes.iter().enumerate() {
                    let prev = bp[i];
                    let q = if i + 1 == pieces { cap } else { step * (i + 1) as f64 };
                    bp.push((q, prev.1 + s * (q - prev.0)));
                }
                BidFunction::PiecewiseLinear { breakpoints: bp }
            }
            BidShape::Block => BidFunction::Block { quantity: cap, price: draw(rng, self.linear) * cap },
            BidShape::SameAsTrue => unreachable!(),
        }
    }

    /// Profile with every bidder's bid drawn from this sampler's seed.
    pub fn sample_profile(&self, instance: &MarketInstance) -> BidProfile {
        self.sample_with_seed(instance, self.seed)
    }

    /// The `index`-th profile of the stream defined by this sampler's seed.
    pub fn sample_indexed(&self, instance: &MarketInstance, index: u64) -> BidProfile {
        let mut p = self.sample_with_seed(instance, self.stream_seed(index));
        p.label = format!("sample-{index}");
        p
    }

    fn sample_with_seed(&self, instance: &MarketInstance, seed: u64) -> BidProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bids: BTreeMap<usize, BidFunction> =
            instance.bidders.iter().map(|b| (b.id, self.sample_bid(&mut rng, &b.true_cost))).collect();
        BidProfile { label: format!("seed-{seed}"), bids }
    }
}

/// One profile drawn from `sampler`.
pub fn sample_profile(instance: &MarketInstance, sampler: &BidSampler) -> BidProfile {
    sampler.sample_profile(instance)
}

/// Up to `count` bidders closest (in hops) to the endpoints of `lines`,
/// ties broken by bidder id. Used to pick the players of a sub-market on large
/// cases; all other bidders stay active in the background.
pub fn players_near(instance: &MarketInstance, lines: &[(usize, usize)], count: usize) -> BidderSet {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for l in &instance.lines {
        adj.entry(l.from).or_default().push(l.to);
        adj.entry(l.to).or_default().push(l.from);
    }
    let mut dist: HashMap<usize, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let seeds: Vec<usize> = if lines.is_empty() {
        vec![instance.meta.reference_bus]
    } else {
        lines.iter().flat_map(|&(a, b)| [a, b]).collect()
    };
    for s in seeds {
        if dist.insert(s, 0).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(b) = queue.pop_front() {
        let d = dist[&b];
        for &n in adj.get(&b).map(|v| v.as_slice()).unwrap_or(&[]) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(n) {
                e.insert(d + 1);
                queue.push_back(n);
            }
        }
    }
    let mut order: Vec<(usize, usize)> = instance
        .bidders
        .iter()
        .enumerate()
        .map(|(i, b)| (dist.get(&b.bus).copied().unwrap_or(usize::MAX), i))
        .collect();
    order.sort();
    let mut seen = HashSet::new();
    BidderSet::from_indices(order.into_iter().filter(|p| seen.insert(p.1)).take(count).map(|p| p.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_example_shape() {
        let (m, c) = simple_example(0.01).unwrap();
        assert!(m.validate().is_empty());
        assert_eq!(m.total_demand(), 800.0);
        assert_eq!(c.bids[&2], BidFunction::Block { quantity: 400.0, price: 300.01 });
        assert!(simple_example(0.0).is_err());
    }

    #[test]
    fn ieee_counts() {
        let expect = [("case14", 14, 20, 5), ("case30", 30, 41, 6), ("case_ieee30", 30, 41, 6), ("case118", 118, 186, 54)];
        for (name, nb, nl, ng) in expect {
            let p = ieee_case(name).unwrap();
            assert_eq!(p.instance.buses.len(), nb, "{name}");
            assert_eq!(p.instance.lines.len(), nl, "{name}");
            assert_eq!(p.instance.bidders.len(), ng, "{name}");
            assert!(p.instance.validate().is_empty(), "{name}");
        }
    }

    #[test]
    fn overrides() {
        let m = ieee_case("case14").unwrap().instance;
        assert_eq!(apply_overrides(&m, &CaseOverride::default()).unwrap(), m);
        let ov = CaseOverride {
            line_limits: vec![LineLimit { from: 1, to: 2, limit: Some(10.0) }, LineLimit { from: 5, to: 1, limit: Some(10.0) }],
            ..Default::default()
        };
        let m2 = apply_overrides(&m, &ov).unwrap();
        assert_eq!(m2.lines.iter().filter(|l| l.limit == Some(10.0)).count(), 2);
        let bad = CaseOverride { line_limits: vec![LineLimit { from: 1, to: 14, limit: Some(1.0) }], ..Default::default() };
        assert!(matches!(apply_overrides(&m, &bad), Err(Error::UnknownLine { from: 1, to: 14 })));
        let bad_bus = CaseOverride {
            added_bidders: vec![AddedBidder { bus: 99, true_cost: BidFunction::Block { quantity: 1.0, price: 1.0 }, supply_type: 1, owner: None }],
            ..Default::default()
        };
        assert!(matches!(apply_overrides(&m, &bad_bus), Err(Error::UnknownBus(99))));
    }

    #[test]
    fn sampler_is_deterministic_and_valid() {
        let m = ieee_case("case30").unwrap().instance;
        for shape in [BidShape::Quadratic, BidShape::PiecewiseLinear { pieces: 3 }, BidShape::Block, BidShape::SameAsTrue] {
            let s = BidSampler { shape, seed: 11, ..Default::default() };
            assert_eq!(s.sample_profile(&m), s.sample_profile(&m));
            for i in 0..50 {
                assert!(s.sample_indexed(&m, i).violations(&m).is_empty());
            }
        }
    }

    #[test]
    fn collapsed_ranges_reproduce_truth() {
        let m = MarketInstance::single_bus(
            "t",
            10.0,
            vec![BidFunction::Quadratic { a: 0.5, b: 3.0, cap: 20.0 }, BidFunction::Quadratic { a: 0.5, b: 3.0, cap: 15.0 }],
        );
        let s = BidSampler { quad: (0.5, 0.5), linear: (3.0, 3.0), ..Default::default() };
        assert_eq!(s.sample_profile(&m).bids, m.truthful_profile().bids);
    }

    #[test]
    fn players_near_limited_lines() {
        let m = ieee_case("case14").unwrap().instance;
        let p = players_near(&m, &[(1, 2), (1, 5)], 3);
        assert_eq!(p.len(), 3);
        // generators at buses 1 and 2 sit on the limited lines
        assert!(p.contains(0) && p.contains(1));
    }
}
