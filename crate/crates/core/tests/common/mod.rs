#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vcg_market::bidset::BidderSet;
use vcg_market::dispatch::Dispatcher;
use vcg_market::market::{BidFunction, Bus, CaseMeta, Line, LinearCost, MarketInstance};

pub fn random_bid<R: Rng>(rng: &mut R) -> BidFunction {
    match rng.gen_range(0..3) {
        0 => BidFunction::Quadratic { a: rng.gen_range(0.0..0.1), b: rng.gen_range(10.0..50.0), cap: rng.gen_range(20.0..80.0) },
        1 => {
            let pieces = rng.gen_range(1..=3);
            let mut slopes: Vec<f64> = (0..pieces).map(|_| rng.gen_range(10.0..50.0)).collect();
            slopes.sort_by(f64::total_cmp);
            let mut bp = vec![(0.0, 0.0)];
            for s in slopes {
                let (q, c) = *bp.last().unwrap();
                let len = rng.gen_range(10.0..30.0);
                bp.push((q + len, c + s * len));
            }
            BidFunction::PiecewiseLinear { breakpoints: bp }
        }
        _ => {
            let q = rng.gen_range(10.0..60.0);
            BidFunction::Block { quantity: q, price: q * rng.gen_range(10.0..50.0) }
        }
    }
}

/// Random market with 3 to 6 bidders on one bus or a 3-bus ring, mixing
/// quadratic, piecewise-linear and block bids. The full market is feasible.
pub fn random_instance(seed: u64) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(3..=6);
        let costs: Vec<BidFunction> = (0..n).map(|_| random_bid(&mut rng)).collect();
        let cap: f64 = costs.iter().map(|c| c.capacity()).sum();
        let demand = cap * rng.gen_range(0.3..0.8);
        let mut m = if rng.gen_bool(0.5) {
            MarketInstance::single_bus(&format!("random-{seed}"), demand, costs)
        } else {
            let shares: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = shares.iter().sum();
            let mut m = MarketInstance::single_bus(&format!("random-{seed}"), 0.0, costs);
            m.buses = (1..=3).map(|id| Bus { id, demand: demand * shares[id - 1] / total }).collect();
            m.meta = CaseMeta { name: m.meta.name.clone(), base_mva: 100.0, reference_bus: 1, types: 1, notes: Vec::new() };
            m.lines = [(1, 2), (2, 3), (1, 3)]
                .iter()
                .map(|&(from, to)| Line {
                    from,
                    to,
                    susceptance: rng.gen_range(5.0..20.0),
                    limit: if rng.gen_bool(0.5) { Some(rng.gen_range(10.0..60.0)) } else { None },
                })
                .collect();
            for b in m.bidders.iter_mut() {
                b.bus = rng.gen_range(1..=3);
            }
            if rng.gen_bool(0.3) {
                m.d_linear = Some(LinearCost {
                    x: (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
                    y: (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                });
            }
            m
        };
        m.meta.notes.push(format!("generated from seed {seed}"));
        let d = Dispatcher::new(&m).unwrap();
        if d.solve(&m.truthful_profile(), BidderSet::full(n)).unwrap().is_optimal() {
            return m;
        }
    }
}

/// Positions of bidders allocated nothing under `profile`.
pub fn losers(d: &Dispatcher, profile: &vcg_market::market::BidProfile) -> Vec<usize> {
    let n = d.instance().num_bidders();
    let r = d.solve(profile, BidderSet::full(n)).unwrap();
    (0..n).filter(|&l| r.allocation[l] <= 1e-9 * (1.0 + d.instance().bidders[l].true_cost.capacity())).collect()
}
