//! Is the VCG outcome in the core? Blocking coalitions appear exactly when the
//! market is not supermodular.

use vcg_market::coalition::check_core;
use vcg_market::dispatch::{make_oracle, Dispatcher};
use vcg_market::market::{BidFunction, MarketInstance};
use vcg_market::setfunc::{is_supermodular, RatioConfig};
use vcg_market::vcg::run_vcg;

fn show(market: &MarketInstance) -> vcg_market::error::Result<()> {
    let truthful = market.truthful_profile();
    let d = Dispatcher::new(market)?;
    let v = run_vcg(&d, &truthful, &truthful)?;
    let oracle = make_oracle(&d, &truthful);
    let core = check_core(&oracle, &v, 1e-7)?;
    let supermodular = is_supermodular(&oracle, &RatioConfig::default())?.is_none();
    println!(
        "{}: supermodular {supermodular}, in core {}, {} coalitions checked, efficiency residual {:.1e}",
        market.meta.name, core.in_core, core.coalitions_checked, core.efficiency_residual
    );
    for b in core.blocking.iter().take(3) {
        println!("  blocking {}  slack {:.3}", b.coalition, b.slack);
    }
    Ok(())
}

fn main() -> vcg_market::error::Result<()> {
    show(&MarketInstance::single_bus(
        "substitutes",
        40.0,
        vec![
            BidFunction::Quadratic { a: 0.1, b: 10.0, cap: 30.0 },
            BidFunction::Quadratic { a: 0.1, b: 12.0, cap: 30.0 },
            BidFunction::Quadratic { a: 0.1, b: 14.0, cap: 30.0 },
        ],
    ))?;
    show(&MarketInstance::single_bus(
        "complements",
        20.0,
        vec![
            BidFunction::Block { quantity: 20.0, price: 420.0 },
            BidFunction::Block { quantity: 10.0, price: 100.0 },
            BidFunction::Block { quantity: 10.0, price: 100.0 },
        ],
    ))?;
    Ok(())
}
