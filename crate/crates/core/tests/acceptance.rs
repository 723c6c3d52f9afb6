//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vcg_market::bidset::BidderSet;
use vcg_market::cases::{apply_overrides, ieee_case, players_near, simple_example, BidSampler, BidShape, CaseOverride, LineLimit};
use vcg_market::coalition::{collusion_bound, collusion_deviation, merge_bids, random_shill_split, shill_bound, shill_profile, with_shills};
use vcg_market::dispatch::{make_oracle, DispatchOptions, Dispatcher};
use vcg_market::error::Error;
use vcg_market::market::{BidFunction, MarketInstance};
use vcg_market::setfunc::{
    is_supermodular, k_feas, ratio_constraint_generation, ratio_exhaustive, ratio_market_estimate, ObjectiveOracle, RatioConfig, RatioMethod,
    RatioReport,
};
use vcg_market::vcg::{check_dsic_sample, run_vcg};

use common::random_instance;

type Outcome = Result<String, String>;

const INSTANCES: u64 = 200;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let (m, c) = simple_example(0.01).map_err(|e| e.to_string())?;
    let d = Dispatcher::new(&m).map_err(|e| e.to_string())?;
    let tol = 1e-9;
    let full = d.solve(&c, BidderSet::full(3)).map_err(|e| e.to_string())?;
    check(near(full.objective, 600.0, tol), format!("J(C) = {}", full.objective))?;
    let v = run_vcg(&d, &c, &c).map_err(|e| e.to_string())?;
    check(near(v.payments[0], 600.02, tol), format!("p1 = {}", v.payments[0]))?;
    for (u, want) in v.utilities.iter().zip([0.02, 0.0, 0.0]) {
        check(near(*u, want, tol), format!("utilities {:?}", v.utilities))?;
    }
    let truthful_ratio = ratio_exhaustive(&make_oracle(&d, &c), &RatioConfig::default()).map_err(|e| e.to_string())?;
    check(truthful_ratio.k_feas == 2, format!("k_feas = {}", truthful_ratio.k_feas))?;
    let sampler = BidSampler { shape: BidShape::SameAsTrue, seed: 1, ..BidSampler::default() };
    let market = ratio_market_estimate(&d, &sampler, 20, None, RatioMethod::Exhaustive, &RatioConfig::default()).map_err(|e| e.to_string())?;
    check(near(market.gamma, 0.5, tol), format!("sampled gamma = {}", market.gamma))?;
    let k = BidderSet::from_ids(&[2, 3]);
    let zero = c.with_bid(2, c.bids[&2].zero_price()).with_bid(3, c.bids[&3].zero_price());
    let b = collusion_bound(&d, &c, k, market.gamma, Some(&zero)).map_err(|e| e.to_string())?;
    check(near(b.bound_worstcase, 600.0, tol), format!("bound = {}", b.bound_worstcase))?;
    let achieved = b.achieved.unwrap_or(f64::NAN);
    check(near(achieved, 599.98, tol) && achieved <= b.bound_worstcase, format!("achieved = {achieved}"))?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 1.0, format!("took {secs:.2}s"))?;
    Ok(format!(
        "J = {:.2}, p1 = {:.2}, k_feas = {}, gamma = {}, bound = {:.2}, achieved = {:.2}, {:.3}s",
        full.objective, v.payments[0], truthful_ratio.k_feas, market.gamma, b.bound_worstcase, achieved, secs
    ))
}

struct InstanceRatios {
    exhaustive: RatioReport,
    cg: RatioReport,
    supermodular: bool,
    k_feas: usize,
}

fn instance_ratios() -> Result<(Vec<InstanceRatios>, f64), String> {
    let t = Instant::now();
    let config = RatioConfig::default();
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        let m = random_instance(seed);
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).map_err(|e| e.to_string())?;
        let oracle = make_oracle(&d, &c);
        let exhaustive = ratio_exhaustive(&oracle, &config).map_err(|e| format!("seed {seed}: {e}"))?;
        let cg = ratio_constraint_generation(&make_oracle(&d, &c), &config).map_err(|e| format!("seed {seed}: {e}"))?;
        let supermodular = is_supermodular(&oracle, &config).map_err(|e| e.to_string())?.is_none();
        let k = k_feas(&oracle, &config).map_err(|e| e.to_string())?;
        out.push(InstanceRatios { exhaustive, cg, supermodular, k_feas: k });
    }
    Ok((out, t.elapsed().as_secs_f64()))
}

fn criterion_2(data: &[InstanceRatios], secs: f64) -> Outcome {
    let mut worst = 0.0f64;
    for (i, r) in data.iter().enumerate() {
        let diff = (r.exhaustive.gamma - r.cg.gamma).abs();
        worst = worst.max(diff);
        check(diff <= 1e-9, format!("instance {i}: exhaustive {} vs cg {}", r.exhaustive.gamma, r.cg.gamma))?;
    }
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    let below = data.iter().filter(|r| r.exhaustive.gamma < 1.0).count();
    Ok(format!("{} instances ({below} with gamma < 1), max |diff| = {worst:.1e}, {secs:.1}s", data.len()))
}

fn criterion_3(data: &[InstanceRatios]) -> Outcome {
    let mut both = 0;
    for (i, r) in data.iter().enumerate() {
        let g = r.exhaustive.gamma;
        check((0.0..=1.0).contains(&g), format!("instance {i}: gamma {g}"))?;
        let one = g >= 1.0 - 1e-9;
        check(one == r.supermodular, format!("instance {i}: gamma {g} but supermodular = {}", r.supermodular))?;
        both += usize::from(one);
    }
    Ok(format!("gamma in [0,1] on all {}; {both} supermodular, {} not, matching gamma = 1", data.len(), data.len() - both))
}

fn criterion_4(data: &[InstanceRatios], ieee: &[IeeeResult]) -> Outcome {
    let mut tightest = f64::INFINITY;
    for (i, r) in data.iter().enumerate() {
        let lb = 1.0 / r.k_feas.max(1) as f64;
        check(r.exhaustive.gamma >= lb - 1e-9, format!("instance {i}: gamma {} < 1/k_feas {lb}", r.exhaustive.gamma))?;
        check(r.exhaustive.k_feas == r.k_feas, format!("instance {i}: k_feas mismatch"))?;
        tightest = tightest.min(r.exhaustive.gamma - lb);
    }
    for r in ieee {
        for (p, g) in r.report.per_profile.iter().enumerate() {
            check(*g >= r.report.lower_bound - 1e-9, format!("{} profile {p}: gamma {g} < {}", r.label, r.report.lower_bound))?;
        }
    }
    Ok(format!("random instances (min gamma - 1/k_feas = {tightest:.4}) and {} IEEE scenarios", ieee.len()))
}

fn criterion_5() -> Outcome {
    let config = RatioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut collusions, mut shills, mut skipped) = (0usize, 0usize, 0usize);
    let (mut worst_c, mut worst_s, mut worst_merge) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut seed = 0u64;
    while collusions < 1000 || shills < 200 {
        let m = random_instance(seed);
        seed += 1;
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).map_err(|e| e.to_string())?;
        let n = m.num_bidders();
        let lose = common::losers(&d, &c);
        for _ in 0..8 {
            if collusions >= 1000 || lose.is_empty() {
                break;
            }
            let size = rng.gen_range(1..=lose.len().min(3));
            let k = BidderSet::from_indices(lose.choose_multiple(&mut rng, size).copied());
            let b = collusion_deviation(&m, &c, k, rng.gen_range(0..64), rng.gen()).map_err(|e| e.to_string())?;
            let gamma = ratio_exhaustive(&make_oracle(&d, &b), &config).map_err(|e| e.to_string())?.gamma;
            match collusion_bound(&d, &c, k, gamma, Some(&b)) {
                Ok(r) => {
                    let excess = r.achieved.unwrap() - r.bound_specific.unwrap();
                    worst_c = worst_c.max(excess);
                    check(excess <= 1e-7, format!("instance {seed}: coalition {k} exceeds bound by {excess}"))?;
                    collusions += 1;
                }
                Err(Error::PivotUndefined(_)) => skipped += 1,
                Err(e) => return Err(format!("instance {seed}: {e}")),
            }
        }
        for _ in 0..2 {
            if shills >= 200 {
                break;
            }
            let owner = rng.gen_range(0..n);
            let owner_id = m.bidders[owner].id;
            let parts = rng.gen_range(2..=3);
            let bids = random_shill_split(&mut rng, &m.bidders[owner].true_cost, parts);
            if bids.len() < 2 {
                continue;
            }
            let (ext, ids) = with_shills(&m, owner_id, &bids).map_err(|e| e.to_string())?;
            let de = Dispatcher::new(&ext).map_err(|e| e.to_string())?;
            let p = shill_profile(&c, &ids, &bids);
            let ground = BidderSet::full(ext.num_bidders()).without(owner);
            let oracle = ObjectiveOracle::new(ground, |s| de.solve(&p, s).map(|r| r.objective));
            let gamma = ratio_exhaustive(&oracle, &config).map_err(|e| e.to_string())?.gamma;
            // merged-bid equivalence
            let merged = merge_bids(&bids).map_err(|e| e.to_string())?;
            let j_merged = d.solve(&c.with_bid(owner_id, merged), BidderSet::full(n)).map_err(|e| e.to_string())?.objective;
            let j_split = oracle.evaluate(ground).map_err(|e| e.to_string())?;
            let gap = if j_merged.is_infinite() && j_split.is_infinite() { 0.0 } else { (j_merged - j_split).abs() };
            worst_merge = worst_merge.max(gap);
            check(gap <= 1e-7, format!("instance {seed}: merged J {j_merged} vs split J {j_split}"))?;
            match shill_bound(&d, &c, owner_id, gamma, Some(&bids)) {
                Ok(r) => {
                    if let (Some(a), Some(b)) = (r.achieved, r.bound_specific) {
                        worst_s = worst_s.max(a - b);
                        check(a <= b + 1e-7, format!("instance {seed}: shill gain {a} exceeds bound {b}"))?;
                        shills += 1;
                    } else {
                        skipped += 1;
                    }
                }
                Err(Error::PivotUndefined(_)) => skipped += 1,
                Err(e) => return Err(format!("instance {seed}: {e}")),
            }
        }
    }
    Ok(format!(
        "{collusions} collusions (max achieved - bound {worst_c:.2e}), {shills} shill splits (max {worst_s:.2e}), merged-bid max |dJ| {worst_merge:.1e}; {skipped} skipped, {seed} instances"
    ))
}

fn criterion_6() -> Outcome {
    let mut worst_gain = f64::NEG_INFINITY;
    let mut min_utility = f64::INFINITY;
    let (mut deviations, mut skipped) = (0usize, 0usize);
    for seed in 0..INSTANCES {
        let m = random_instance(seed);
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).map_err(|e| e.to_string())?;
        let r = check_dsic_sample(&d, &c, 10, seed).map_err(|e| e.to_string())?;
        deviations += r.samples - r.skipped;
        skipped += r.skipped;
        worst_gain = worst_gain.max(r.max_gain);
        match run_vcg(&d, &c, &c) {
            Ok(v) => min_utility = v.utilities.iter().copied().fold(min_utility, f64::min),
            Err(Error::PivotUndefined(_)) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    check(deviations >= 1000, format!("only {deviations} evaluated deviations"))?;
    check(worst_gain <= 1e-9, format!("max gain {worst_gain}"))?;
    check(min_utility >= -1e-9, format!("min truthful utility {min_utility}"))?;
    Ok(format!("{deviations} deviations ({skipped} skipped), max gain {worst_gain:.2e}, min truthful utility {min_utility:.2e}"))
}

struct IeeeResult {
    label: String,
    report: RatioReport,
    supermodular: Option<bool>,
    secs: f64,
}

fn limited(inst: &MarketInstance, pairs: &[(usize, usize)], mw: f64) -> MarketInstance {
    let ov = CaseOverride {
        line_limits: pairs.iter().map(|&(from, to)| LineLimit { from, to, limit: Some(mw) }).collect(),
        ..CaseOverride::default()
    };
    apply_overrides(inst, &ov).expect("override")
}

fn ieee_results() -> Result<Vec<IeeeResult>, String> {
    let config = RatioConfig::default();
    let base = |name: &str| ieee_case(name).map(|p| p.instance).map_err(|e| e.to_string());
    let scenarios: Vec<(&str, MarketInstance, Vec<(usize, usize)>, usize, bool)> = vec![
        ("case14 + 10 MW on (1,2),(1,5)", limited(&base("case14")?, &[(1, 2), (1, 5)], 10.0), vec![(1, 2), (1, 5)], 20, false),
        ("case_ieee30", base("case_ieee30")?, vec![], 50, false),
        ("case30 (OPF ratings)", base("case30")?, vec![], 20, false),
        ("case118", base("case118")?, vec![], 20, true),
        ("case118 + 50 MW on (5,6),(9,10)", limited(&base("case118")?, &[(5, 6), (9, 10)], 50.0), vec![(5, 6), (9, 10)], 20, false),
    ];
    let mut out = Vec::new();
    for (label, inst, focus, profiles, test_supermodular) in scenarios {
        let t = Instant::now();
        let players = players_near(&inst, &focus, config.exhaustive_cap);
        let d = Dispatcher::new(&inst).map_err(|e| e.to_string())?;
        let sampler = BidSampler { seed: 7, ..BidSampler::default() };
        let report = ratio_market_estimate(&d, &sampler, profiles, Some(players), RatioMethod::ConstraintGeneration, &config)
            .map_err(|e| format!("{label}: {e}"))?;
        let supermodular = if test_supermodular {
            let mut all = true;
            for i in 0..3 {
                let p = sampler.sample_indexed(&inst, i);
                all &= is_supermodular(&make_oracle(&d, &p).restrict(players), &config).map_err(|e| e.to_string())?.is_none();
            }
            Some(all)
        } else {
            None
        };
        out.push(IeeeResult { label: label.to_string(), report, supermodular, secs: t.elapsed().as_secs_f64() });
    }
    Ok(out)
}

fn criterion_7(ieee: &[IeeeResult]) -> Outcome {
    let get = |label: &str| ieee.iter().find(|r| r.label.starts_with(label)).ok_or(format!("missing {label}"));
    let mut lines = Vec::new();
    for r in ieee {
        check(r.secs <= 600.0, format!("{} took {:.0}s", r.label, r.secs))?;
        lines.push(format!("{}: gamma {:.4} (k_feas {}, {:.0}s)", r.label, r.report.gamma, r.report.k_feas, r.secs));
    }
    let c14 = get("case14")?;
    check(c14.report.gamma < 1.0 && c14.report.gamma >= c14.report.lower_bound - 1e-9, format!("case14: {}", c14.report.gamma))?;
    let c30 = get("case_ieee30")?;
    check(near(c30.report.gamma, 1.0, 1e-6), format!("case_ieee30: {}", c30.report.gamma))?;
    let c118 = get("case118")?;
    check(near(c118.report.gamma, 1.0, 1e-6) && c118.supermodular == Some(true), format!("case118: {} {:?}", c118.report.gamma, c118.supermodular))?;
    let c118l = get("case118 + 50")?;
    check(c118l.report.gamma < 1.0, format!("case118 limited: {}", c118l.report.gamma))?;
    Ok(lines.join("; "))
}

fn criterion_8() -> Outcome {
    let mut solves = 0usize;
    let mut worst = 0.0f64;
    let mut gap_ok = |r: &vcg_market::dispatch::DispatchResult| -> Result<(), String> {
        if r.is_optimal() {
            solves += 1;
            let rel = r.duality_gap.abs() / (1.0 + r.objective.abs());
            worst = worst.max(rel);
            check(rel <= 1e-7, format!("gap {} at J = {}", r.duality_gap, r.objective))?;
        }
        Ok(())
    };
    for seed in 0..INSTANCES {
        let m = random_instance(seed);
        let c = m.truthful_profile();
        let d = Dispatcher::new(&m).map_err(|e| e.to_string())?;
        for s in BidderSet::full(m.num_bidders()).subsets() {
            gap_ok(&d.solve(&c, s).map_err(|e| e.to_string())?)?;
        }
    }
    for name in ["case14", "case30", "case_ieee30", "case118"] {
        let m = ieee_case(name).map_err(|e| e.to_string())?.instance;
        let d = Dispatcher::new(&m).map_err(|e| e.to_string())?;
        gap_ok(&d.solve(&m.truthful_profile(), BidderSet::full(m.num_bidders())).map_err(|e| e.to_string())?)?;
    }

    // branch and bound against full enumeration of acceptance patterns
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut compared = 0;
    for inst_seed in 0..30u64 {
        let mut m = random_instance(1000 + inst_seed);
        let blocks = rng.gen_range(6..=12);
        for _ in 0..blocks {
            let q = rng.gen_range(5.0..40.0);
            let bus = m.bidders[0].bus;
            m.push_bidder(bus, BidFunction::Block { quantity: q, price: q * rng.gen_range(10.0..50.0) }, None);
        }
        let blocks_now = m.bidders.iter().filter(|b| b.true_cost.is_discrete()).count();
        check(blocks_now <= 12 + 6, "block count")?;
        let c = m.truthful_profile();
        let bb = Dispatcher::new(&m).map_err(|e| e.to_string())?;
        let en = Dispatcher::new(&m).map_err(|e| e.to_string())?.with_options(DispatchOptions { enumerate_blocks: true, ..DispatchOptions::default() });
        let n = m.num_bidders();
        for _ in 0..10 {
            let s = BidderSet::from_indices((0..n).filter(|_| rng.gen_bool(0.8)));
            let discrete = s.iter().filter(|&l| m.bidders[l].true_cost.is_discrete()).count();
            if discrete > 12 {
                continue;
            }
            let (a, b) = (bb.solve(&c, s).map_err(|e| e.to_string())?, en.solve(&c, s).map_err(|e| e.to_string())?);
            gap_ok(&a)?;
            let same = (a.objective.is_infinite() && b.objective.is_infinite()) || near(a.objective, b.objective, 1e-9 * (1.0 + b.objective.abs()));
            check(same, format!("instance {inst_seed} {s}: branch and bound {} vs enumeration {}", a.objective, b.objective))?;
            compared += 1;
        }
    }
    Ok(format!("{solves} optimal solves, max relative gap {worst:.1e}; branch and bound = enumeration on {compared} markets with up to 12 blocks"))
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    results.push((1, criterion_1()));
    match instance_ratios() {
        Ok((data, secs)) => {
            results.push((2, criterion_2(&data, secs)));
            results.push((3, criterion_3(&data)));
            let ieee = ieee_results();
            match &ieee {
                Ok(ieee) => results.push((4, criterion_4(&data, ieee))),
                Err(e) => results.push((4, Err(e.clone()))),
            }
            results.push((5, criterion_5()));
            results.push((6, criterion_6()));
            results.push((7, ieee.and_then(|r| criterion_7(&r))));
        }
        Err(e) => {
            for k in 2..=7 {
                results.push((k, Err(e.clone())));
            }
        }
    }
    results.push((8, criterion_8()));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (k, r) in &results {
        match r {
            Ok(msg) => println!("criterion {k}: PASS  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {k}: FAIL  {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
