//! Three-bidder single-bus market where two losers can collude.
//!
//! Demand is 800 MW. Bidder 1 offers an 800 MW block for $600; bidders 2 and 3
//! each offer a 400 MW block for $300 + epsilon. Truthful bidding is supermodular, but profiles
//! where 2 and 3 undercut 1 are not, and the market-level ratio drops to 1/2.

use vcg_market::bidset::BidderSet;
use vcg_market::cases::{simple_example, BidSampler, BidShape};
use vcg_market::coalition::collusion_bound;
use vcg_market::dispatch::{make_oracle, Dispatcher};
use vcg_market::setfunc::{ratio_exhaustive, ratio_market_estimate, RatioConfig, RatioMethod};
use vcg_market::vcg::run_vcg;

fn main() -> vcg_market::error::Result<()> {
    let (market, truthful) = simple_example(0.01)?;
    let d = Dispatcher::new(&market)?;
    let config = RatioConfig::default();

    let v = run_vcg(&d, &truthful, &truthful)?;
    println!("J(C) = {:.2}", v.j_full);
    for (b, (p, u)) in market.bidders.iter().zip(v.payments.iter().zip(&v.utilities)) {
        println!("  bidder {}: x = {:>5.1}  payment = {:>7.2}  utility = {:.2}", b.id, v.allocation[b.id - 1], p, u);
    }

    let truthful_ratio = ratio_exhaustive(&make_oracle(&d, &truthful), &config)?;
    println!("truthful gamma = {}, k_feas = {}", truthful_ratio.gamma, truthful_ratio.k_feas);

    let sampler = BidSampler { shape: BidShape::SameAsTrue, seed: 1, ..BidSampler::default() };
    let market_ratio = ratio_market_estimate(&d, &sampler, 20, None, RatioMethod::Exhaustive, &config)?;
    println!("gamma over 20 sampled profiles = {} (lower bound {})", market_ratio.gamma, market_ratio.lower_bound);

    let losers = BidderSet::from_ids(&[2, 3]);
    let zero = truthful.with_bid(2, truthful.bids[&2].zero_price()).with_bid(3, truthful.bids[&3].zero_price());
    let bound = collusion_bound(&d, &truthful, losers, market_ratio.gamma, Some(&zero))?;
    println!(
        "coalition {{2,3}}: worst-case bound {:.2}, zero-bid collusion gains {:.2}",
        bound.bound_worstcase,
        bound.achieved.unwrap_or(f64::NAN)
    );
    Ok(())
}
