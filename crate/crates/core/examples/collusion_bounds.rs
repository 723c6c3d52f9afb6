//! Collusion among losing bidders: searched deviations against the bound
//! `(1/gamma - 1) (J(C) - J(B))`.

use vcg_market::bidset::BidderSet;
use vcg_market::cases::simple_example;
use vcg_market::coalition::{collusion_bound, simulate_collusion};
use vcg_market::dispatch::{make_oracle, Dispatcher};
use vcg_market::market::{BidFunction, MarketInstance};
use vcg_market::setfunc::{ratio_exhaustive, RatioConfig};

fn report(label: &str, market: &MarketInstance, coalition: &[usize]) -> vcg_market::error::Result<()> {
    let truthful = market.truthful_profile();
    let d = Dispatcher::new(market)?;
    let k = BidderSet::from_ids(coalition);
    let sim = simulate_collusion(&d, &truthful, k, 200, 3)?;
    // the bound holds with the ratio of the profile actually submitted
    let gamma = ratio_exhaustive(&make_oracle(&d, &sim.best), &RatioConfig::default())?.gamma;
    let b = collusion_bound(&d, &truthful, k, gamma, Some(&sim.best))?;
    println!(
        "{label}: coalition {coalition:?}  best found {:.3}  bound {:.3}  (gamma {:.3}, {} deviations, {} skipped)",
        sim.achieved,
        b.bound_specific.unwrap_or(f64::INFINITY),
        gamma,
        sim.evaluated,
        sim.skipped
    );
    Ok(())
}

fn main() -> vcg_market::error::Result<()> {
    let (simple, _) = simple_example(0.01)?;
    report("simple", &simple, &[2, 3])?;

    let blocks = MarketInstance::single_bus(
        "blocks",
        30.0,
        vec![
            BidFunction::Block { quantity: 30.0, price: 600.0 },
            BidFunction::Block { quantity: 15.0, price: 305.0 },
            BidFunction::Block { quantity: 15.0, price: 310.0 },
            BidFunction::Quadratic { a: 0.2, b: 30.0, cap: 20.0 },
        ],
    );
    report("blocks", &blocks, &[2, 3])?;
    report("blocks", &blocks, &[2, 3, 4])?;
    Ok(())
}
