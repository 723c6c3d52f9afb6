//! DC-OPF dispatch of a bundled IEEE case, with optional line limits.
//!
//! `cargo run --release --example dispatch_case -- case14 1-2:10 1-5:10`

use vcg_market::bidset::BidderSet;
use vcg_market::cases::{apply_overrides, ieee_case, CaseOverride, LineLimit};
use vcg_market::dispatch::Dispatcher;

fn main() -> vcg_market::error::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("case14", String::as_str);
    let mut inst = ieee_case(name)?.instance;
    let limits: Vec<LineLimit> = args
        .iter()
        .skip(1)
        .filter_map(|a| {
            let (pair, mw) = a.split_once(':')?;
            let (from, to) = pair.split_once('-')?;
            Some(LineLimit { from: from.parse().ok()?, to: to.parse().ok()?, limit: Some(mw.parse().ok()?) })
        })
        .collect();
    if !limits.is_empty() {
        inst = apply_overrides(&inst, &CaseOverride { line_limits: limits, ..CaseOverride::default() })?;
    }

    let d = Dispatcher::new(&inst)?;
    let r = d.solve(&inst.truthful_profile(), BidderSet::full(inst.num_bidders()))?;
    if !r.is_optimal() {
        println!("{name}: infeasible");
        return Ok(());
    }
    println!("{name}: J = {:.4}, duality gap {:.1e}", r.objective, r.duality_gap);
    for (b, x) in inst.bidders.iter().zip(&r.allocation) {
        println!("  gen {:>3} at bus {:>3}: {:>8.3} MW", b.id, b.bus, x);
    }
    let congested: Vec<String> = inst
        .lines
        .iter()
        .zip(&r.flows)
        .filter(|(l, f)| l.limit.is_some_and(|cap| f.abs() >= cap - 1e-6))
        .map(|(l, f)| format!("{}-{} ({f:.2} MW)", l.from, l.to))
        .collect();
    println!("binding lines: {}", if congested.is_empty() { "none".to_string() } else { congested.join(", ") });
    Ok(())
}
