//! Supermodularity ratio of the bundled IEEE systems under random quadratic bids.
//!
//! Run with `cargo run --release --example ieee_ratio -- [case] [profiles]`.

use std::time::Instant;

use vcg_market::cases::{apply_overrides, ieee_case, players_near, BidSampler, CaseOverride, LineLimit};
use vcg_market::dispatch::Dispatcher;
use vcg_market::setfunc::{ratio_market_estimate, RatioConfig, RatioMethod};

fn limits(pairs: &[(usize, usize)], mw: f64) -> CaseOverride {
    CaseOverride {
        line_limits: pairs.iter().map(|&(from, to)| LineLimit { from, to, limit: Some(mw) }).collect(),
        ..CaseOverride::default()
    }
}

fn main() -> vcg_market::error::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let only = args.get(1).cloned();
    let profiles: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let scenarios: Vec<(&str, &str, Option<(Vec<(usize, usize)>, f64)>)> = vec![
        ("case14-limited", "case14", Some((vec![(1, 2), (1, 5)], 10.0))),
        ("case30", "case30", None),
        ("case_ieee30", "case_ieee30", None),
        ("case118", "case118", None),
        ("case118-limited", "case118", Some((vec![(5, 6), (9, 10)], 50.0))),
    ];
    let config = RatioConfig::default();
    for (label, case, mods) in scenarios {
        if only.as_deref().is_some_and(|o| o != label) {
            continue;
        }
        let mut inst = ieee_case(case)?.instance;
        let mut focus = Vec::new();
        if let Some((pairs, mw)) = &mods {
            inst = apply_overrides(&inst, &limits(pairs, *mw))?;
            focus = pairs.clone();
        }
        let players = players_near(&inst, &focus, config.exhaustive_cap);
        let d = Dispatcher::new(&inst)?;
        let sampler = BidSampler { seed: 7, ..BidSampler::default() };
        let t = Instant::now();
        let r = ratio_market_estimate(&d, &sampler, profiles, Some(players), RatioMethod::ConstraintGeneration, &config)?;
        println!(
            "{label:>16}: gamma {:.6}  k_feas {}  1/k_feas {:.4}  players {}  profiles {} (skipped {})  {:.1}s",
            r.gamma,
            r.k_feas,
            r.lower_bound,
            r.players,
            r.per_profile.len(),
            r.profiles_skipped,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
