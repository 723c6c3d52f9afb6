//! Coalitional analysis of VCG outcomes: core membership, collusion among
//! losing bidders and bidding under several identities (shills).
//!
//! Both manipulation bounds scale with `1/gamma - 1`, so they vanish when the
//! market objective is supermodular.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidset::BidderSet;
use crate::dispatch::Dispatcher;
use crate::error::{Error, Result};
use crate::market::{BidFunction, BidProfile, MarginalSegment, MarketInstance};
use crate::setfunc::ObjectiveOracle;
use crate::vcg::{run_vcg, VcgOutcome};

/// Largest bidder count for which every coalition is checked.
pub const CORE_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionSlack {
    pub coalition: BidderSet,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreCheck {
    pub in_core: bool,
    /// Coalitions with `slack < -tol`.
    pub blocking: Vec<CoalitionSlack>,
    /// Coalitions with `|slack| <= tol`.
    pub tight: Vec<CoalitionSlack>,
    /// `u0 + sum(u) + J(C)`, zero for an efficient outcome.
    pub efficiency_residual: f64,
    pub coalitions_checked: usize,
}

/// Checks `u0 + sum_{l in S} u_l >= -J(C_S)` for every proper subset `S` of the
/// bidders, where `oracle` evaluates `J` under the true costs.
pub fn check_core(oracle: &ObjectiveOracle, outcome: &VcgOutcome, tol: f64) -> Result<CoreCheck> {
    let ground = oracle.ground();
    if ground.len() > CORE_CAP {
        return Err(Error::CapExceeded { size: ground.len(), cap: CORE_CAP });
    }
    let sets: Vec<BidderSet> = ground.subsets().collect();
    oracle.prefill(&sets)?;
    let full = oracle.evaluate(ground)?;
    let mut blocking = Vec::new();
    let mut tight = Vec::new();
    let mut checked = 0;
    for &s in &sets {
        if s == ground {
            continue;
        }
        let j = oracle.evaluate(s)?;
        checked += 1;
        if j.is_infinite() {
            continue;
        }
        let slack = outcome.operator_utility + outcome.coalition_utility(s) + j;
        let scale = tol * (1.0 + j.abs());
        if slack < -scale {
            blocking.push(CoalitionSlack { coalition: s, slack });
        } else if slack.abs() <= scale {
            tight.push(CoalitionSlack { coalition: s, slack });
        }
    }
    let residual = outcome.operator_utility + outcome.coalition_utility(ground) + full;
    Ok(CoreCheck {
        in_core: blocking.is_empty() && residual.abs() <= tol * (1.0 + full.abs()),
        blocking,
        tight,
        efficiency_residual: residual,
        coalitions_checked: checked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationKind {
    Collusion,
    Shill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationBound {
    pub kind: ManipulationKind,
    /// The colluding coalition, or the owner of the shills.
    pub actor: BidderSet,
    pub gamma: f64,
    /// Bound for the submitted deviation, if one was given.
    #[serde(with = "crate::report::extended_real_opt")]
    pub bound_specific: Option<f64>,
    /// Bound over every deviation with the same quantity domains.
    #[serde(with = "crate::report::extended_real")]
    pub bound_worstcase: f64,
    /// Realised gain of the submitted deviation: coalition utility for
    /// collusion, profit over truthful bidding for shills.
    pub achieved: Option<f64>,
}

fn slack_factor(gamma: f64) -> f64 {
    if gamma <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / gamma - 1.0
    }
}

fn scaled_gap(gamma: f64, gap: f64) -> f64 {
    // a supermodular market admits no gain even when the gap is unbounded
    if gamma >= 1.0 {
        0.0
    } else {
        slack_factor(gamma) * gap
    }
}

fn alloc_tol(cap: f64) -> f64 {
    1e-9 * (1.0 + cap.abs())
}

/// Replaces the bids of `members` (positions) with bids taken from `from`.
fn overlay(base: &BidProfile, instance: &MarketInstance, members: BidderSet, from: &BidProfile) -> Result<BidProfile> {
    let mut p = base.clone();
    for l in members.iter() {
        let id = instance.bidders[l].id;
        p.bids.insert(id, from.get(id)?.clone());
    }
    Ok(p)
}

/// Bound on what the coalition `coalition` of truthful losers can gain by
/// jointly bidding `deviation` (only the coalition's entries are used).
/// `truthful` holds every bidder's true cost.
pub fn collusion_bound(
    dispatcher: &Dispatcher,
    truthful: &BidProfile,
    coalition: BidderSet,
    gamma: f64,
    deviation: Option<&BidProfile>,
) -> Result<ManipulationBound> {
    let inst = dispatcher.instance();
    let n = inst.num_bidders();
    let all = BidderSet::full(n);
    let base = dispatcher.solve(truthful, all)?;
    if !base.is_optimal() {
        return Err(Error::Precondition("the truthful market is infeasible".into()));
    }
    for l in coalition.iter() {
        let cap = inst.bidders[l].true_cost.capacity();
        if base.allocation[l] > alloc_tol(cap) {
            return Err(Error::Precondition(format!(
                "bidder {} wins {} MW under truthful bidding; collusion bounds need losers",
                inst.bidders[l].id, base.allocation[l]
            )));
        }
    }
    let mut zero = truthful.clone();
    for l in coalition.iter() {
        let id = inst.bidders[l].id;
        zero.bids.insert(id, truthful.get(id)?.zero_price());
    }
    let j_zero = dispatcher.solve(&zero, all)?.objective;
    let (bound_specific, achieved) = match deviation {
        Some(dev) => {
            let b = overlay(truthful, inst, coalition, dev)?;
            let j_dev = dispatcher.solve(&b, all)?.objective;
            let outcome = run_vcg(dispatcher, &b, truthful)?;
            (Some(scaled_gap(gamma, base.objective - j_dev)), Some(outcome.coalition_utility(coalition)))
        }
        None => (None, None),
    };
    Ok(ManipulationBound {
        kind: ManipulationKind::Collusion,
        actor: coalition,
        gamma,
        bound_specific,
        bound_worstcase: scaled_gap(gamma, base.objective - j_zero),
        achieved,
    })
}

/// Copy of `instance` with one extra bidder per entry of `bids`, located at the
/// owner's bus and tagged with the owner id. Returns the new instance and the
/// shill ids. Shills inherit the owner's linear extra cost.
pub fn with_shills(instance: &MarketInstance, owner: usize, bids: &[BidFunction]) -> Result<(MarketInstance, Vec<usize>)> {
    let pos = instance.bidders.iter().position(|b| b.id == owner).ok_or(Error::MissingBid(owner))?;
    let mut ext = instance.clone();
    let (bus, supply_type) = (instance.bidders[pos].bus, instance.bidders[pos].supply_type);
    let owner_dx = instance.d_linear.as_ref().map(|d| d.x[pos]);
    let mut ids = Vec::with_capacity(bids.len());
    for b in bids {
        let id = ext.push_bidder(bus, b.clone(), Some(owner));
        ext.bidders[id - 1].supply_type = supply_type;
        if let (Some(d), Some(dx)) = (ext.d_linear.as_mut(), owner_dx) {
            d.x[id - 1] = dx;
        }
        ids.push(id);
    }
    Ok((ext, ids))
}

/// Profile over a shill market: the base bids plus one bid per shill.
pub fn shill_profile(truthful: &BidProfile, shill_ids: &[usize], bids: &[BidFunction]) -> BidProfile {
    let mut p = truthful.clone();
    for (id, b) in shill_ids.iter().zip(bids) {
        p.bids.insert(*id, b.clone());
    }
    p.label = format!("{}+shills", truthful.label);
    p
}

/// Bound on the extra profit the owner `owner` (id) can make by withdrawing its
/// truthful bid and bidding `shill_bids` under separate identities.
///
/// `achieved` is `None` when the shills' total accepted quantity lies outside
/// the owner's true cost domain (for example a split block accepted in part).
pub fn shill_bound(
    dispatcher: &Dispatcher,
    truthful: &BidProfile,
    owner: usize,
    gamma: f64,
    shill_bids: Option<&[BidFunction]>,
) -> Result<ManipulationBound> {
    let inst = dispatcher.instance();
    let n = inst.num_bidders();
    let pos = inst.bidders.iter().position(|b| b.id == owner).ok_or(Error::MissingBid(owner))?;
    let all = BidderSet::full(n);
    let j_minus = dispatcher.solve(truthful, all.without(pos))?.objective;
    let truth = truthful.get(owner)?;
    let j_zero = dispatcher.solve(&truthful.with_bid(owner, truth.zero_price()), all)?.objective;
    let bound_worstcase = if j_minus.is_infinite() { f64::INFINITY } else { scaled_gap(gamma, j_minus - j_zero) };
    let (bound_specific, achieved) = match shill_bids {
        Some(bids) => {
            let (ext, ids) = with_shills(inst, owner, bids)?;
            let d = Dispatcher::new(&ext)?.with_options(dispatcher.options);
            let p = shill_profile(truthful, &ids, bids);
            let active = BidderSet::full(ext.num_bidders()).without(pos);
            let r = d.solve(&p, active)?;
            let specific = if j_minus.is_infinite() { f64::INFINITY } else { scaled_gap(gamma, j_minus - r.objective) };
            (Some(specific), shill_advantage(dispatcher, &d, truthful, &p, owner, &ids)?)
        }
        None => (None, None),
    };
    Ok(ManipulationBound {
        kind: ManipulationKind::Shill,
        actor: BidderSet::singleton(pos),
        gamma,
        bound_specific,
        bound_worstcase,
        achieved,
    })
}

/// Shill profit minus the owner's truthful VCG utility.
fn shill_advantage(
    base: &Dispatcher,
    ext: &Dispatcher,
    truthful: &BidProfile,
    profile: &BidProfile,
    owner: usize,
    shill_ids: &[usize],
) -> Result<Option<f64>> {
    let n = base.instance().num_bidders();
    let pos = owner - 1;
    let all = BidderSet::full(n);
    let honest_full = base.solve(truthful, all)?;
    let honest_minus = base.solve(truthful, all.without(pos))?;
    if honest_minus.objective.is_infinite() {
        return Err(Error::PivotUndefined(owner));
    }
    let truth = truthful.get(owner)?;
    let x_own = honest_full.allocation[pos];
    let honest = honest_minus.objective - honest_full.objective + truthful.get(owner)?.eval(x_own)? - truth.eval(x_own)?;

    let active = BidderSet::full(ext.instance().num_bidders()).without(pos);
    let r = ext.solve(profile, active)?;
    let minus = shill_ids
        .par_iter()
        .map(|&id| ext.solve(profile, active.without(id - 1)).map(|s| s.objective))
        .collect::<Result<Vec<f64>>>()?;
    let mut paid = 0.0;
    let mut supplied = 0.0;
    for (&id, &jm) in shill_ids.iter().zip(&minus) {
        if jm.is_infinite() {
            return Err(Error::PivotUndefined(id));
        }
        let x = r.allocation[id - 1];
        paid += profile.get(id)?.eval(x)? + jm - r.objective;
        supplied += x;
    }
    Ok(truth.eval(supplied).ok().map(|c| paid - c - honest))
}

/// A single bid equivalent to the joint bids of several identities at one bus.
///
/// Continuous bids are merged by adding their supply curves at every marginal
/// price; discrete bids become a menu of every achievable total quantity at its
/// cheapest cost. Mixing discrete and continuous bids is an error.
pub fn merge_bids(bids: &[BidFunction]) -> Result<BidFunction> {
    match bids {
        [] => Err(Error::Merge("nothing to merge".into())),
        [one] => Ok(one.clone()),
        _ if bids.iter().all(BidFunction::is_discrete) => merge_discrete(bids),
        _ if bids.iter().all(|b| !b.is_discrete()) => Ok(merge_continuous(bids)),
        _ => Err(Error::Merge("cannot merge discrete and continuous bids".into())),
    }
}

const MENU_CAP: usize = 1 << 20;

fn merge_discrete(bids: &[BidFunction]) -> Result<BidFunction> {
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    acc.insert(0f64.to_bits(), (0.0, 0.0));
    for b in bids {
        let opts = b.options().unwrap_or_default();
        let mut next: Vec<(f64, f64)> = Vec::with_capacity(acc.len() * opts.len());
        for &(q, c) in acc.values() {
            for &(oq, oc) in &opts {
                next.push((q + oq, c + oc));
            }
        }
        if next.len() > MENU_CAP {
            return Err(Error::Merge(format!("menu would have {} options", next.len())));
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for o in next {
            match merged.last_mut() {
                Some(last) if (o.0 - last.0).abs() <= 1e-9 * (1.0 + last.0.abs()) => last.1 = last.1.min(o.1),
                _ => merged.push(o),
            }
        }
        acc = merged.into_iter().map(|o| (o.0.to_bits(), o)).collect();
    }
    let mut options: Vec<(f64, f64)> = acc.into_values().collect();
    options.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(BidFunction::Menu { options })
}

/// Quantity supplied at marginal price `m`; `upper` includes flat pieces priced at `m`.
fn supply(segs: &[MarginalSegment], m: f64, upper: bool) -> f64 {
    segs.iter()
        .map(|s| {
            let (full, none) = if upper { (s.end <= m, s.start >= m) } else { (s.start < m && s.end <= m, s.start >= m) };
            if full {
                s.length
            } else if none {
                0.0
            } else {
                s.length * (m - s.start) / (s.end - s.start)
            }
        })
        .sum()
}

fn merge_continuous(bids: &[BidFunction]) -> BidFunction {
    let curves: Vec<Vec<MarginalSegment>> = bids
        .iter()
        .map(|b| b.marginal_segments().unwrap_or_default().into_iter().filter(|s| s.length > 0.0).collect())
        .collect();
    let mut prices: Vec<f64> = curves.iter().flatten().flat_map(|s| [s.start, s.end]).collect();
    prices.sort_by(f64::total_cmp);
    prices.dedup();
    let total = |m: f64, upper: bool| curves.iter().map(|c| supply(c, m, upper)).sum::<f64>();
    let tiny = 1e-12 * (1.0 + total(f64::INFINITY, true));
    let mut out: Vec<MarginalSegment> = Vec::new();
    for (i, &m) in prices.iter().enumerate() {
        let jump = total(m, true) - total(m, false);
        if jump > tiny {
            out.push(MarginalSegment { length: jump, start: m, end: m });
        }
        if let Some(&next) = prices.get(i + 1) {
            let len = total(next, false) - total(m, true);
            if len > tiny {
                out.push(MarginalSegment { length: len, start: m, end: next });
            }
        }
    }
    if out.iter().all(|s| s.start == s.end) {
        let mut bp = vec![(0.0, 0.0)];
        let mut acc = (0.0, 0.0);
        for s in &out {
            acc = (acc.0 + s.length, acc.1 + s.start * s.length);
            bp.push(acc);
        }
        return BidFunction::PiecewiseLinear { breakpoints: bp };
    }
    BidFunction::PiecewiseQuadratic { segments: out }
}

/// Random split of `owner_cost` into `parts` shill bids whose capacities add
/// up to the owner's. Prices are the owner's scaled by a factor in `[0, 1.5)`.
pub fn random_shill_split<R: Rng>(rng: &mut R, owner_cost: &BidFunction, parts: usize) -> Vec<BidFunction> {
    let parts = parts.max(1);
    let cap = owner_cost.capacity();
    let mut cuts: Vec<f64> = (0..parts - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    let shares: Vec<f64> = cuts.windows(2).map(|w| (w[1] - w[0]) * cap).filter(|q| *q > 1e-6).collect();
    let avg = if cap > 0.0 { owner_cost.eval(cap).unwrap_or(0.0) / cap } else { 0.0 };
    shares
        .into_iter()
        .map(|q| {
            let factor = rng.gen_range(0.0..1.5);
            if owner_cost.is_discrete() {
                BidFunction::Block { quantity: q, price: avg * q * factor }
            } else {
                owner_cost.truncate(q).scale_price(factor)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollusionSimulation {
    pub coalition: BidderSet,
    /// Largest coalition utility found.
    pub achieved: f64,
    pub best: BidProfile,
    pub evaluated: usize,
    /// Deviations skipped because a pivot was undefined.
    pub skipped: usize,
}

/// Price levels tried for block bids, as fractions of the true price.
const BLOCK_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Joint deviation number `index` of the search: 0 is all zero bids, 1 is
/// truthful, later ones scale each member's prices independently (continuous
/// bids uniformly in `[0, 1]`, block bids on a grid).
pub fn collusion_deviation(instance: &MarketInstance, truthful: &BidProfile, coalition: BidderSet, index: usize, seed: u64) -> Result<BidProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    let mut p = truthful.clone();
    for l in coalition.iter() {
        let id = instance.bidders[l].id;
        let t = truthful.get(id)?;
        let factor = match index {
            0 => 0.0,
            1 => 1.0,
            _ if t.is_discrete() => BLOCK_GRID[rng.gen_range(0..BLOCK_GRID.len())],
            _ => rng.gen_range(0.0..1.0),
        };
        p.bids.insert(id, t.scale_price(factor));
    }
    p.label = format!("collusion-{index}");
    Ok(p)
}

/// Searches joint deviations of `coalition` for the largest coalition utility.
pub fn simulate_collusion(
    dispatcher: &Dispatcher,
    truthful: &BidProfile,
    coalition: BidderSet,
    samples: usize,
    seed: u64,
) -> Result<CollusionSimulation> {
    let inst = dispatcher.instance();
    let found: Vec<Option<(f64, BidProfile)>> = (0..samples.max(1))
        .into_par_iter()
        .map(|i| {
            let b = collusion_deviation(inst, truthful, coalition, i, seed)?;
            match run_vcg(dispatcher, &b, truthful) {
                Ok(o) => Ok(Some((o.coalition_utility(coalition), b))),
                Err(Error::PivotUndefined(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let skipped = found.iter().filter(|f| f.is_none()).count();
    let evaluated = found.len() - skipped;
    let (achieved, best) = found
        .into_iter()
        .flatten()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .ok_or_else(|| Error::Precondition("no deviation had a defined VCG outcome".into()))?;
    Ok(CollusionSimulation { coalition, achieved, best, evaluated, skipped })
}
