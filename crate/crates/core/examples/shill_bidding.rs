//! A bidder splits its supply across shill identities at its own bus.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vcg_market::bidset::BidderSet;
use vcg_market::coalition::{merge_bids, random_shill_split, shill_bound, shill_profile, with_shills};
use vcg_market::dispatch::Dispatcher;
use vcg_market::market::{BidFunction, MarketInstance};
use vcg_market::setfunc::{ratio_exhaustive, ObjectiveOracle, RatioConfig};

fn main() -> vcg_market::error::Result<()> {
    let market = MarketInstance::single_bus(
        "shills",
        60.0,
        vec![
            BidFunction::Quadratic { a: 0.1, b: 10.0, cap: 50.0 },
            BidFunction::Quadratic { a: 0.05, b: 15.0, cap: 50.0 },
            BidFunction::PiecewiseLinear { breakpoints: vec![(0.0, 0.0), (20.0, 400.0), (40.0, 1000.0)] },
        ],
    );
    let truthful = market.truthful_profile();
    let d = Dispatcher::new(&market)?;
    let owner = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let bids = random_shill_split(&mut rng, &market.bidders[0].true_cost, 2 + trial % 2);
        let (ext, ids) = with_shills(&market, owner, &bids)?;
        let de = Dispatcher::new(&ext)?;
        let p = shill_profile(&truthful, &ids, &bids);
        let ground = BidderSet::full(ext.num_bidders()).without(0);
        let oracle = ObjectiveOracle::new(ground, |s| de.solve(&p, s).map(|r| r.objective));
        let gamma = ratio_exhaustive(&oracle, &RatioConfig::default())?.gamma;

        // a single bidder offering the merged supply curve clears at the same cost
        let merged = merge_bids(&bids)?;
        let j_merged = d.solve(&truthful.with_bid(owner, merged), BidderSet::full(3))?.objective;

        let b = shill_bound(&d, &truthful, owner, gamma, Some(&bids))?;
        println!(
            "split into {}: J split {:.4} = merged {:.4}  gain {:>8.3} <= bound {:.3}  (gamma {:.3})",
            bids.len(),
            oracle.evaluate(ground)?,
            j_merged,
            b.achieved.unwrap_or(f64::NAN),
            b.bound_specific.unwrap_or(f64::INFINITY),
            gamma
        );
    }
    Ok(())
}
