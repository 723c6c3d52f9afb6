//! VCG payments with the Clarke pivot.
//!
//! Winner `l` is paid its bid for the accepted quantity plus the cost increase
//! its absence would cause: `p_l = b_l(x_l) + J(B - l) - J(B)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidset::BidderSet;
use crate::dispatch::Dispatcher;
use crate::error::{Error, Result};
use crate::market::{BidFunction, BidProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcgOutcome {
    /// Active bidders (positions), usually all of them.
    pub participants: BidderSet,
    /// Per bidder, in bidder order; zero for non-participants.
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub operator_utility: f64,
    pub j_full: f64,
    /// `J(B - l)` per participant, `None` for non-participants.
    pub j_minus: Vec<Option<f64>>,
    pub allocation: Vec<f64>,
    /// `b_l(x_l)` per bidder.
    pub bid_costs: Vec<f64>,
    /// `c_l(x_l)` per bidder.
    pub true_costs: Vec<f64>,
    /// Linear additional cost `d(x, y)`.
    pub extra_cost: f64,
}

impl VcgOutcome {
    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }

    pub fn coalition_utility(&self, s: BidderSet) -> f64 {
        s.iter().map(|l| self.utilities[l]).sum()
    }
}

/// VCG over `participants` (bidders outside it are excluded from the market).
pub fn run_vcg_among(
    dispatcher: &Dispatcher,
    profile: &BidProfile,
    true_costs: &BidProfile,
    participants: BidderSet,
) -> Result<VcgOutcome> {
    let inst = dispatcher.instance();
    let n = inst.num_bidders();
    let full = dispatcher.solve(profile, participants)?;
    if !full.is_optimal() {
        return Err(Error::Precondition("the market is infeasible under this profile".into()));
    }
    let members: Vec<usize> = participants.iter().collect();
    let minus: Vec<f64> = members
        .par_iter()
        .map(|&l| dispatcher.solve(profile, participants.without(l)).map(|r| r.objective))
        .collect::<Result<_>>()?;
    let mut j_minus = vec![None; n];
    let (mut payments, mut utilities, mut bid_costs, mut costs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (&l, &jm) in members.iter().zip(&minus) {
        let id = inst.bidders[l].id;
        if jm.is_infinite() {
            return Err(Error::PivotUndefined(id));
        }
        let x = full.allocation[l];
        bid_costs[l] = profile.get(id)?.eval(x)?;
        costs[l] = true_costs.get(id)?.eval(x)?;
        payments[l] = bid_costs[l] + (jm - full.objective);
        utilities[l] = payments[l] - costs[l];
        j_minus[l] = Some(jm);
    }
    let extra_cost = dispatcher.extra_cost(&full.allocation);
    Ok(VcgOutcome {
        participants,
        operator_utility: -payments.iter().sum::<f64>() - extra_cost,
        payments,
        utilities,
        j_full: full.objective,
        j_minus,
        allocation: full.allocation,
        bid_costs,
        true_costs: costs,
        extra_cost,
    })
}

/// VCG with every bidder participating; utilities use `true_costs`.
pub fn run_vcg(dispatcher: &Dispatcher, profile: &BidProfile, true_costs: &BidProfile) -> Result<VcgOutcome> {
    run_vcg_among(dispatcher, profile, true_costs, BidderSet::full(dispatcher.instance().num_bidders()))
}

/// True iff every utility is at least `-tol`. Meaningful for truthful outcomes.
pub fn check_individual_rationality(outcome: &VcgOutcome, tol: f64) -> bool {
    outcome.participants.iter().all(|l| outcome.utilities[l] >= -tol)
}

/// Unilateral misreport applied to a true cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deviation {
    Truthful,
    ScalePrice { factor: f64 },
    ShiftPrice { delta: f64 },
    Truncate { fraction: f64 },
    ZeroPrice,
}

impl Deviation {
    pub fn apply(&self, truth: &BidFunction) -> BidFunction {
        match *self {
            Deviation::Truthful => truth.clone(),
            Deviation::ScalePrice { factor } => truth.scale_price(factor),
            Deviation::ShiftPrice { delta } => truth.shift_price(delta),
            Deviation::Truncate { fraction } => truth.truncate(fraction * truth.capacity()),
            Deviation::ZeroPrice => truth.zero_price(),
        }
    }

    pub fn sample<R: Rng>(rng: &mut R, typical_price: f64) -> Deviation {
        match rng.gen_range(0..5) {
            0 => Deviation::Truthful,
            1 => Deviation::ScalePrice { factor: rng.gen_range(0.0..2.0) },
            2 => Deviation::ShiftPrice { delta: rng.gen_range(-0.5..0.5) * typical_price },
            3 => Deviation::Truncate { fraction: rng.gen_range(0.0..1.0) },
            _ => Deviation::ZeroPrice,
        }
    }
}

/// Average price of a bid over its full capacity, a scale for shifts.
fn typical_price(f: &BidFunction) -> f64 {
    let cap = f.capacity();
    if cap > 0.0 {
        f.eval(cap).map(|c| c / cap).unwrap_or(1.0)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    pub bidder: usize,
    pub deviation: Deviation,
    pub gain: f64,
    pub truthful_utility: f64,
    pub deviating_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsicReport {
    pub max_gain: f64,
    pub samples: usize,
    /// Samples skipped because removing the bidder left the market infeasible.
    pub skipped: usize,
    pub worst: Option<DeviationRecord>,
}

/// Utility of bidder `l` (position) under `profile`, measured with `truth`.
fn utility_of(dispatcher: &Dispatcher, profile: &BidProfile, l: usize, truth: &BidFunction, j_minus: f64) -> Result<f64> {
    let n = dispatcher.instance().num_bidders();
    let r = dispatcher.solve(profile, BidderSet::full(n))?;
    let x = r.allocation[l];
    let id = dispatcher.instance().bidders[l].id;
    Ok(profile.get(id)?.eval(x)? + j_minus - r.objective - truth.eval(x)?)
}

/// Samples unilateral deviations against random opponent profiles and reports
/// the largest utility gain over truthful bidding.
pub fn check_dsic_sample(dispatcher: &Dispatcher, true_costs: &BidProfile, n_deviations: usize, seed: u64) -> Result<DsicReport> {
    let inst = dispatcher.instance();
    let n = inst.num_bidders();
    let results: Vec<Option<DeviationRecord>> = (0..n_deviations)
        .into_par_iter()
        .map(|i| -> Result<Option<DeviationRecord>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let l = rng.gen_range(0..n);
            let mut opp = true_costs.clone();
            for (k, b) in inst.bidders.iter().enumerate() {
                if k != l {
                    let t = true_costs.get(b.id)?;
                    let dev = Deviation::sample(&mut rng, typical_price(t));
                    opp.bids.insert(b.id, dev.apply(t));
                }
            }
            let id = inst.bidders[l].id;
            let truth = true_costs.get(id)?.clone();
            let deviation = if i == 0 { Deviation::Truthful } else { Deviation::sample(&mut rng, typical_price(&truth)) };
            let j_minus = dispatcher.solve(&opp, BidderSet::full(n).without(l))?.objective;
            if j_minus.is_infinite() {
                return Ok(None);
            }
            let honest = opp.with_bid(id, truth.clone());
            let lying = opp.with_bid(id, deviation.apply(&truth));
            let u_true = utility_of(dispatcher, &honest, l, &truth, j_minus)?;
            let u_dev = utility_of(dispatcher, &lying, l, &truth, j_minus)?;
            Ok(Some(DeviationRecord { bidder: id, deviation, gain: u_dev - u_true, truthful_utility: u_true, deviating_utility: u_dev }))
        })
        .collect::<Result<_>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let worst = results.into_iter().flatten().max_by(|a, b| a.gain.total_cmp(&b.gain));
    Ok(DsicReport { max_gain: worst.as_ref().map_or(f64::NEG_INFINITY, |w| w.gain), samples: n_deviations, skipped, worst })
}
