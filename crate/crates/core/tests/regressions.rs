mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vcg_market::bidset::BidderSet;
use vcg_market::cases::{apply_overrides, ieee_case, BidSampler, CaseOverride, LineLimit};
use vcg_market::coalition::{merge_bids, random_shill_split, shill_profile, with_shills};
use vcg_market::dispatch::Dispatcher;
use vcg_market::market::BidFunction;

/// Reference objective from an independent interior-point solve.
#[test]
fn case118_limited_sampled_submarket() {
    let base = ieee_case("case118").unwrap().instance;
    let ov = CaseOverride {
        line_limits: [(5, 6), (9, 10)].iter().map(|&(from, to)| LineLimit { from, to, limit: Some(50.0) }).collect(),
        ..CaseOverride::default()
    };
    let inst = apply_overrides(&base, &ov).unwrap();
    let players = [1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 14];
    let kept = [2, 4, 5, 6, 7, 11];
    let active = BidderSet::from_indices(
        inst.bidders.iter().enumerate().filter(|(_, b)| !players.contains(&b.id) || kept.contains(&b.id)).map(|(i, _)| i),
    );
    let p = BidSampler { seed: 7, ..BidSampler::default() }.sample_indexed(&inst, 0);
    let r = Dispatcher::new(&inst).unwrap().solve(&p, active).unwrap();
    let want = 127041.22163988839;
    assert!((r.objective - want).abs() <= 1e-9 * want, "{}", r.objective);
}

#[test]
fn merged_bid_clears_like_its_shills() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..40 {
        let m = common::random_instance(seed);
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).unwrap();
        let owner = m.bidders[0].id;
        let bids = random_shill_split(&mut rng, &m.bidders[0].true_cost, 3);
        let (ext, ids) = with_shills(&m, owner, &bids).unwrap();
        let p = shill_profile(&c, &ids, &bids);
        let split = Dispatcher::new(&ext).unwrap().solve(&p, BidderSet::full(ext.num_bidders()).without(0)).unwrap().objective;
        let merged = d.solve(&c.with_bid(owner, merge_bids(&bids).unwrap()), BidderSet::full(m.num_bidders())).unwrap().objective;
        assert!((split - merged).abs() <= 1e-7 * (1.0 + merged.abs()) || (split.is_infinite() && merged.is_infinite()), "seed {seed}: {split} vs {merged}");
    }
}

#[test]
fn mixed_merge_is_rejected() {
    let bids = [BidFunction::Block { quantity: 5.0, price: 10.0 }, BidFunction::Quadratic { a: 0.1, b: 1.0, cap: 5.0 }];
    assert!(merge_bids(&bids).is_err());
}
