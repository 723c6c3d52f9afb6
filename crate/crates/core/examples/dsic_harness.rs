//! Random unilateral misreports never beat truthful bidding under VCG.
//!
//! `cargo run --release --example dsic_harness -- [case] [deviations]`

use vcg_market::cases::ieee_case;
use vcg_market::dispatch::Dispatcher;
use vcg_market::vcg::check_dsic_sample;

fn main() -> vcg_market::error::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("case14", String::as_str);
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let inst = ieee_case(name)?.instance;
    let d = Dispatcher::new(&inst)?;
    let r = check_dsic_sample(&d, &inst.truthful_profile(), n, 42)?;
    println!("{name}: {} deviations, {} skipped, max gain {:.3e}", r.samples, r.skipped, r.max_gain);
    if let Some(w) = &r.worst {
        println!("  closest: bidder {} {:?}, utility {:.4} vs truthful {:.4}", w.bidder, w.deviation, w.deviating_utility, w.truthful_utility);
    }
    Ok(())
}
