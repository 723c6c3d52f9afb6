mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vcg_market::bidset::BidderSet;
use vcg_market::dispatch::Dispatcher;
use vcg_market::market::{BidFunction, MarketInstance};
use vcg_market::vcg::run_vcg;
use vcg_market::error::Error;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn instance_json_round_trip(seed in 0u64..10_000) {
        let m = common::random_instance(seed);
        let back = MarketInstance::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn continuous_bids_are_convex(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = common::random_bid(&mut rng);
        prop_assume!(!f.is_discrete());
        let cap = f.capacity();
        for i in 1..20 {
            let (a, b, c) = (cap * (i - 1) as f64 / 20.0, cap * i as f64 / 20.0, cap * (i + 1) as f64 / 20.0);
            let mid = f.eval(b).unwrap();
            prop_assert!(mid <= (f.eval(a).unwrap() + f.eval(c).unwrap()) / 2.0 + 1e-9 * (1.0 + mid.abs()));
        }
    }

    #[test]
    fn objective_is_monotone(seed in 0u64..10_000) {
        let m = common::random_instance(seed);
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).unwrap();
        let full = BidderSet::full(m.num_bidders());
        for s in full.subsets() {
            let j = d.solve(&c, s).unwrap().objective;
            for l in full.difference(s).iter() {
                let jl = d.solve(&c, s.with(l)).unwrap().objective;
                prop_assert!(jl <= j + 1e-7 * (1.0 + j.abs()) || j.is_infinite());
            }
        }
    }

    #[test]
    fn vcg_utilities_sum_to_minus_cost(seed in 0u64..10_000) {
        let m = common::random_instance(seed);
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).unwrap();
        match run_vcg(&d, &c, &c) {
            Ok(v) => {
                let total = v.utilities.iter().sum::<f64>() + v.operator_utility;
                prop_assert!((total + v.j_full).abs() <= 1e-7 * (1.0 + v.j_full.abs()));
            }
            Err(Error::PivotUndefined(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn discrete_bid_has_two_options() {
    let f = BidFunction::Block { quantity: 10.0, price: 50.0 };
    assert_eq!(f.options().unwrap(), vec![(0.0, 0.0), (10.0, 50.0)]);
    assert!(f.eval(5.0).is_err());
}
