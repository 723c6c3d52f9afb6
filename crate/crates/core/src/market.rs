//! Reverse-auction market data: bid curves, bidders, the transmission network
//! and bid profiles.
//!
//! Quantities are MW, costs are $, marginal prices $/MW and line susceptances
//! per unit on `meta.base_mva`. Every bid curve satisfies `b(0) = 0`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bidset::MAX_BIDDERS;
use crate::error::{Error, Result};

/// Piece of a convex curve whose marginal price moves linearly from `start` to
/// `end` over `length` MW. A flat piece (`start == end`) is linear cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalSegment {
    pub length: f64,
    pub start: f64,
    pub end: f64,
}

impl MarginalSegment {
    fn cost(&self, s: f64) -> f64 {
        self.start * s + 0.5 * (self.end - self.start) / self.length * s * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidFunction {
    /// All-or-nothing offer: accepted at exactly `quantity` or not at all.
    Block { quantity: f64, price: f64 },
    /// Convex piecewise-linear cost through `breakpoints` `(MW, $)`, starting at `(0, 0)`.
    PiecewiseLinear { breakpoints: Vec<(f64, f64)> },
    /// `a q^2 + b q` on `[0, cap]`.
    Quadratic { a: f64, b: f64, cap: f64 },
    /// Convex curve with piecewise-affine marginal price; produced by merging
    /// continuous bids.
    PiecewiseQuadratic { segments: Vec<MarginalSegment> },
    /// Discrete menu of `(MW, $)` options including `(0, 0)`; produced by
    /// merging block bids.
    Menu { options: Vec<(f64, f64)> },
}

fn domain_tol(cap: f64) -> f64 {
    1e-9 * (1.0 + cap.abs())
}

impl BidFunction {
    pub fn is_discrete(&self) -> bool {
        matches!(self, BidFunction::Block { .. } | BidFunction::Menu { .. })
    }

    /// Largest quantity in the domain.
    pub fn capacity(&self) -> f64 {
        match self {
            BidFunction::Block { quantity, .. } => *quantity,
            BidFunction::PiecewiseLinear { breakpoints } => breakpoints.last().map_or(0.0, |p| p.0),
            BidFunction::Quadratic { cap, .. } => *cap,
            BidFunction::PiecewiseQuadratic { segments } => segments.iter().map(|s| s.length).sum(),
            BidFunction::Menu { options } => options.iter().map(|o| o.0).fold(0.0, f64::max),
        }
    }

    /// Cost of supplying `q`.
    pub fn eval(&self, q: f64) -> Result<f64> {
        let cap = self.capacity();
        let tol = domain_tol(cap);
        let out = |detail: &str| Error::Domain { quantity: q, detail: detail.to_string() };
        if !q.is_finite() {
            return Err(out("non-finite quantity"));
        }
        if let Some(opts) = self.options() {
            return opts
                .iter()
                .find(|o| (o.0 - q).abs() <= tol)
                .map(|o| o.1)
                .ok_or_else(|| out("not one of the offered discrete quantities"));
        }
        if q < -tol || q > cap + tol {
            return Err(out(&format!("outside [0, {cap}]")));
        }
        let q = q.clamp(0.0, cap);
        Ok(match self {
            BidFunction::Quadratic { a, b, .. } => a * q * q + b * q,
            BidFunction::PiecewiseLinear { breakpoints } => {
                let mut prev = (0.0, 0.0);
                for &(bq, bc) in breakpoints.iter().skip(1) {
                    if q <= bq {
                        return Ok(prev.1 + (bc - prev.1) * (q - prev.0) / (bq - prev.0));
                    }
                    prev = (bq, bc);
                }
                prev.1
            }
            BidFunction::PiecewiseQuadratic { segments } => {
                let mut left = q;
                let mut total = 0.0;
                for s in segments {
                    let take = left.min(s.length);
                    total += s.cost(take);
                    left -= take;
                    if left <= 0.0 {
                        break;
                    }
                }
                total
            }
            BidFunction::Block { .. } | BidFunction::Menu { .. } => unreachable!(),
        })
    }

    /// Pieces of a continuous curve in fill order; `None` for discrete bids.
    pub fn marginal_segments(&self) -> Option<Vec<MarginalSegment>> {
        match self {
            BidFunction::Quadratic { a, b, cap } => {
                if *cap <= 0.0 {
                    return Some(Vec::new());
                }
                Some(vec![MarginalSegment { length: *cap, start: *b, end: b + 2.0 * a * cap }])
            }
            BidFunction::PiecewiseLinear { breakpoints } => Some(
                breakpoints
                    .windows(2)
                    .map(|w| {
                        let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                        MarginalSegment { length: w[1].0 - w[0].0, start: slope, end: slope }
                    })
                    .collect(),
            ),
            BidFunction::PiecewiseQuadratic { segments } => Some(segments.clone()),
            _ => None,
        }
    }

    /// Options `(MW, $)` of a discrete bid sorted by quantity; `None` otherwise.
    pub fn options(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            BidFunction::Block { quantity, price } => Some(vec![(0.0, 0.0), (*quantity, *price)]),
            BidFunction::Menu { options } => {
                let mut o = options.clone();
                o.sort_by(|a, b| a.0.total_cmp(&b.0));
                Some(o)
            }
            _ => None,
        }
    }

    /// Same quantity domain with every price multiplied by `factor`.
    pub fn scale_price(&self, factor: f64) -> BidFunction {
        match self {
            BidFunction::Block { quantity, price } => BidFunction::Block { quantity: *quantity, price: price * factor },
            BidFunction::PiecewiseLinear { breakpoints } => BidFunction::PiecewiseLinear {
                breakpoints: breakpoints.iter().map(|&(q, c)| (q, c * factor)).collect(),
            },
            BidFunction::Quadratic { a, b, cap } => BidFunction::Quadratic { a: a * factor, b: b * factor, cap: *cap },
            BidFunction::PiecewiseQuadratic { segments } => BidFunction::PiecewiseQuadratic {
                segments: segments
                    .iter()
                    .map(|s| MarginalSegment { length: s.length, start: s.start * factor, end: s.end * factor })
                    .collect(),
            },
            BidFunction::Menu { options } => BidFunction::Menu {
                options: options.iter().map(|&(q, c)| (q, c * factor)).collect(),
            },
        }
    }

    /// The zero bid over the same domain: `b(x) = 0` for every feasible `x`.
    pub fn zero_price(&self) -> BidFunction {
        self.scale_price(0.0)
    }

    /// Adds `delta` $/MW to the marginal price everywhere (clamped so prices
    /// stay nonnegative).
    pub fn shift_price(&self, delta: f64) -> BidFunction {
        match self {
            BidFunction::Block { quantity, price } => BidFunction::Block {
                quantity: *quantity,
                price: (price + delta * quantity).max(0.0),
            },
            BidFunction::Menu { options } => BidFunction::Menu {
                options: options.iter().map(|&(q, c)| (q, (c + delta * q).max(0.0))).collect(),
            },
            BidFunction::Quadratic { a, b, cap } => BidFunction::Quadratic { a: *a, b: (b + delta).max(0.0), cap: *cap },
            BidFunction::PiecewiseLinear { breakpoints } => {
                let shift = delta.max(-min_slope(breakpoints));
                BidFunction::PiecewiseLinear { breakpoints: breakpoints.iter().map(|&(q, c)| (q, c + shift * q)).collect() }
            }
            BidFunction::PiecewiseQuadratic { segments } => {
                let lowest = segments.first().map_or(0.0, |s| s.start);
                let shift = delta.max(-lowest);
                BidFunction::PiecewiseQuadratic {
                    segments: segments
                        .iter()
                        .map(|s| MarginalSegment { length: s.length, start: s.start + shift, end: s.end + shift })
                        .collect(),
                }
            }
        }
    }

    /// Withholds capacity above `cap`. Discrete options above `cap` are dropped.
    pub fn truncate(&self, cap: f64) -> BidFunction {
        match self {
            BidFunction::Block { quantity, .. } => {
                if *quantity <= cap {
                    self.clone()
                } else {
                    BidFunction::Menu { options: vec![(0.0, 0.0)] }
                }
            }
            BidFunction::Menu { options } => BidFunction::Menu {
                options: options.iter().copied().filter(|o| o.0 <= cap).collect(),
            },
            BidFunction::Quadratic { a, b, cap: c } => BidFunction::Quadratic { a: *a, b: *b, cap: cap.min(*c).max(0.0) },
            BidFunction::PiecewiseLinear { .. } | BidFunction::PiecewiseQuadratic { .. } => {
                let cap = cap.clamp(0.0, self.capacity());
                let segs = self.marginal_segments().unwrap_or_default();
                let mut out = Vec::new();
                let mut left = cap;
                for s in segs {
                    if left <= 0.0 {
                        break;
                    }
                    let take = left.min(s.length);
                    let end = s.start + (s.end - s.start) * take / s.length;
                    out.push(MarginalSegment { length: take, start: s.start, end });
                    left -= take;
                }
                if let BidFunction::PiecewiseLinear { .. } = self {
                    let mut bp = vec![(0.0, 0.0)];
                    let mut acc = (0.0, 0.0);
                    for s in &out {
                        acc = (acc.0 + s.length, acc.1 + s.start * s.length);
                        bp.push(acc);
                    }
                    if bp.len() == 1 {
                        return BidFunction::Menu { options: vec![(0.0, 0.0)] };
                    }
                    BidFunction::PiecewiseLinear { breakpoints: bp }
                } else {
                    BidFunction::PiecewiseQuadratic { segments: out }
                }
            }
        }
    }

    /// Invariant violations, each prefixed with `path`.
    pub fn violations(&self, path: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |m: String| v.push(Violation { path: path.to_string(), message: m });
        let finite = |x: f64| x.is_finite();
        match self {
            BidFunction::Block { quantity, price } => {
                if !finite(*quantity) || *quantity <= 0.0 {
                    bad(format!("block quantity must be positive, got {quantity}"));
                }
                if !finite(*price) || *price < 0.0 {
                    bad(format!("block price must be nonnegative, got {price}"));
                }
            }
            BidFunction::PiecewiseLinear { breakpoints } => {
                if breakpoints.len() < 2 {
                    bad("piecewise-linear bid needs at least two breakpoints".into());
                } else if breakpoints[0] != (0.0, 0.0) {
                    bad("piecewise-linear bid must start at (0, 0)".into());
                }
                let mut last_slope = f64::NEG_INFINITY;
                for w in breakpoints.windows(2) {
                    if !(finite(w[1].0) && finite(w[1].1)) {
                        bad("non-finite breakpoint".into());
                        break;
                    }
                    if w[1].0 <= w[0].0 {
                        bad("breakpoint quantities must be strictly increasing".into());
                        break;
                    }
                    if w[1].1 < w[0].1 {
                        bad("breakpoint costs must be nondecreasing".into());
                        break;
                    }
                    let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                    if slope < last_slope - 1e-12 * (1.0 + last_slope.abs()) {
                        bad("non-convex bid: marginal price decreases".into());
                        break;
                    }
                    last_slope = slope;
                }
            }
            BidFunction::Quadratic { a, b, cap } => {
                if !finite(*a) || *a < 0.0 {
                    bad(format!("quadratic coefficient must be nonnegative, got {a}"));
                }
                if !finite(*b) || *b < 0.0 {
                    bad(format!("linear coefficient must be nonnegative, got {b}"));
                }
                if !finite(*cap) || *cap <= 0.0 {
                    bad(format!("capacity must be positive, got {cap}"));
                }
            }
            BidFunction::PiecewiseQuadratic { segments } => {
                let mut last = f64::NEG_INFINITY;
                if segments.is_empty() {
                    bad("piecewise-quadratic bid needs a segment".into());
                }
                for s in segments {
                    if !(finite(s.length) && finite(s.start) && finite(s.end)) || s.length <= 0.0 {
                        bad("segment lengths must be positive and finite".into());
                        break;
                    }
                    if s.start < 0.0 || s.end < s.start || s.start < last - 1e-12 * (1.0 + last.abs()) {
                        bad("non-convex bid: marginal price decreases".into());
                        break;
                    }
                    last = s.end;
                }
            }
            BidFunction::Menu { options } => {
                if !options.iter().any(|o| o.0 == 0.0 && o.1 == 0.0) {
                    bad("menu must contain the (0, 0) option".into());
                }
                let mut qs: Vec<f64> = options.iter().map(|o| o.0).collect();
                qs.sort_by(f64::total_cmp);
                if qs.windows(2).any(|w| w[0] == w[1]) {
                    bad("menu quantities must be distinct".into());
                }
                if options.iter().any(|o| !(finite(o.0) && finite(o.1)) || o.0 < 0.0 || o.1 < 0.0) {
                    bad("menu options must be finite and nonnegative".into());
                }
            }
        }
        v
    }
}

fn min_slope(bp: &[(f64, f64)]) -> f64 {
    bp.windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .fold(f64::INFINITY, f64::min)
        .min(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Per-unit susceptance `1 / x`.
    pub susceptance: f64,
    /// Thermal limit in MW; `None` is unlimited.
    pub limit: Option<f64>,
}

fn default_type() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bidder {
    /// 1-based position in the market.
    pub id: usize,
    pub bus: usize,
    pub true_cost: BidFunction,
    #[serde(default = "default_type")]
    pub supply_type: usize,
    /// Owning bidder id for synthetic identities (shills, multi-type splits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<usize>,
}

/// Linear additional cost `d(x, y) = x_cost . x + angle_cost . theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCost {
    /// $/MW per bidder.
    pub x: Vec<f64>,
    /// $/rad per bus, in bus order.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub name: String,
    pub base_mva: f64,
    pub reference_bus: usize,
    pub types: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// A market: the operator procures the bus demands from the bidders subject
/// to DC power-flow constraints. A single bus without lines is the
/// network-free auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub bidders: Vec<Bidder>,
    pub d_linear: Option<LinearCost>,
    pub meta: CaseMeta,
}

impl MarketInstance {
    /// One bus (id 0) carrying `demand`, no lines.
    pub fn single_bus(name: &str, demand: f64, costs: Vec<BidFunction>) -> Self {
        MarketInstance {
            buses: vec![Bus { id: 0, demand }],
            lines: Vec::new(),
            bidders: costs
                .into_iter()
                .enumerate()
                .map(|(i, c)| Bidder { id: i + 1, bus: 0, true_cost: c, supply_type: 1, owner: None })
                .collect(),
            d_linear: None,
            meta: CaseMeta { name: name.to_string(), base_mva: 100.0, reference_bus: 0, types: 1, notes: Vec::new() },
        }
    }

    pub fn num_bidders(&self) -> usize {
        self.bidders.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.demand).sum()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn truthful_profile(&self) -> BidProfile {
        BidProfile {
            label: "truthful".into(),
            bids: self.bidders.iter().map(|b| (b.id, b.true_cost.clone())).collect(),
        }
    }

    /// Appends a bidder and returns its id.
    pub fn push_bidder(&mut self, bus: usize, true_cost: BidFunction, owner: Option<usize>) -> usize {
        let id = self.bidders.len() + 1;
        self.bidders.push(Bidder { id, bus, true_cost, supply_type: 1, owner });
        if let Some(d) = self.d_linear.as_mut() {
            d.x.push(0.0);
        }
        id
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Every invariant violation; an empty list means the instance is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bid_issues = Vec::new();
        let mut bad = |path: String, m: String| v.push(Violation { path, message: m });
        if self.meta.types < 1 {
            bad("meta.types".into(), "at least one supply type required".into());
        }
        if !(self.meta.base_mva > 0.0) {
            bad("meta.base_mva".into(), "base MVA must be positive".into());
        }
        if self.buses.is_empty() {
            bad("buses".into(), "at least one bus required".into());
        }
        let mut ids = HashSet::new();
        for (i, b) in self.buses.iter().enumerate() {
            if !ids.insert(b.id) {
                bad(format!("buses[{i}].id"), format!("duplicate bus id {}", b.id));
            }
            if !(b.demand >= 0.0) || !b.demand.is_finite() {
                bad(format!("buses[{i}].demand"), format!("demand must be finite and nonnegative, got {}", b.demand));
            }
        }
        if !ids.contains(&self.meta.reference_bus) {
            bad("meta.reference_bus".into(), format!("reference bus {} does not exist", self.meta.reference_bus));
        }
        for (i, l) in self.lines.iter().enumerate() {
            for end in [l.from, l.to] {
                if !ids.contains(&end) {
                    bad(format!("lines[{i}]"), format!("line endpoint {end} is not a bus"));
                }
            }
            if l.from == l.to {
                bad(format!("lines[{i}]"), "line connects a bus to itself".into());
            }
            if !(l.susceptance > 0.0) || !l.susceptance.is_finite() {
                bad(format!("lines[{i}].susceptance"), format!("susceptance must be positive, got {}", l.susceptance));
            }
            if let Some(lim) = l.limit {
                if !(lim > 0.0) {
                    bad(format!("lines[{i}].limit"), format!("limit must be positive, got {lim}"));
                }
            }
        }
        if !self.is_connected() {
            bad("lines".into(), "network is not connected".into());
        }
        if self.bidders.len() > MAX_BIDDERS {
            bad("bidders".into(), format!("at most {MAX_BIDDERS} bidders are supported"));
        }
        for (i, b) in self.bidders.iter().enumerate() {
            if b.id != i + 1 {
                bad(format!("bidders[{i}].id"), format!("bidder ids must be 1..n in order, got {}", b.id));
            }
            if !ids.contains(&b.bus) {
                bad(format!("bidders[{i}].bus"), format!("bidder on nonexistent bus {}", b.bus));
            }
            if b.supply_type < 1 || b.supply_type > self.meta.types {
                bad(format!("bidders[{i}].supply_type"), format!("type {} outside 1..={}", b.supply_type, self.meta.types));
            }
            if let Some(o) = b.owner {
                if o == b.id || o == 0 || o > self.bidders.len() {
                    bad(format!("bidders[{i}].owner"), format!("owner {o} is not another bidder"));
                }
            }
            bid_issues.extend(b.true_cost.violations(&format!("bidders[{i}].true_cost")));
        }
        v.extend(bid_issues);
        if let Some(d) = &self.d_linear {
            if d.x.len() != self.bidders.len() {
                v.push(Violation { path: "d_linear.x".into(), message: "one coefficient per bidder required".into() });
            }
            if d.y.len() != self.buses.len() {
                v.push(Violation { path: "d_linear.y".into(), message: "one coefficient per bus required".into() });
            }
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return true;
        }
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for l in &self.lines {
            adj.entry(l.from).or_default().push(l.to);
            adj.entry(l.to).or_default().push(l.from);
        }
        let mut seen = HashSet::from([self.buses[0].id]);
        let mut queue = VecDeque::from([self.buses[0].id]);
        while let Some(b) = queue.pop_front() {
            for &n in adj.get(&b).map(|v| v.as_slice()).unwrap_or(&[]) {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        self.buses.iter().all(|b| seen.contains(&b.id))
    }
}

/// Submitted bids keyed by bidder id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidProfile {
    pub label: String,
    pub bids: BTreeMap<usize, BidFunction>,
}

impl BidProfile {
    pub fn get(&self, id: usize) -> Result<&BidFunction> {
        self.bids.get(&id).ok_or(Error::MissingBid(id))
    }

    /// Bids in bidder order.
    pub fn aligned<'a>(&'a self, instance: &MarketInstance) -> Result<Vec<&'a BidFunction>> {
        instance.bidders.iter().map(|b| self.get(b.id)).collect()
    }

    pub fn with_bid(&self, id: usize, bid: BidFunction) -> BidProfile {
        let mut p = self.clone();
        p.bids.insert(id, bid);
        p
    }

    pub fn violations(&self, instance: &MarketInstance) -> Vec<Violation> {
        let mut v = Vec::new();
        for b in &instance.bidders {
            match self.bids.get(&b.id) {
                None => v.push(Violation { path: format!("bids.{}", b.id), message: "missing bid".into() }),
                Some(f) => v.extend(f.violations(&format!("bids.{}", b.id))),
            }
        }
        for id in self.bids.keys() {
            if *id == 0 || *id > instance.bidders.len() {
                v.push(Violation { path: format!("bids.{id}"), message: "bid for unknown bidder".into() });
            }
        }
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
