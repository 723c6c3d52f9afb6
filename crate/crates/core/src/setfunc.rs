//! Set-function analytics over the market objective `S -> J(S)`.
//!
//! `J` is nonincreasing and may be `+inf` when the bidders in `S` cannot meet
//! demand. The supermodularity ratio is the largest `gamma` with
//!
//! ```text
//!     gamma * sum_{l in K} [J(S - l) - J(S)]  <=  J(S - K) - J(S)   for all K ⊆ S ⊆ L
//! ```
//!
//! Pairs whose removal is infeasible are ignored and `0/0` pairs hold
//! vacuously. Differences below a relative snap tolerance are treated as zero
//! so solver rounding cannot create spurious ratios.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidset::BidderSet;
use crate::error::{Error, Result};

type EvalFn<'a> = dyn Fn(BidderSet) -> Result<f64> + Send + Sync + 'a;

/// Memoised evaluation of `J` over subsets of a ground set of players.
///
/// Bidders in `background` are always active: `evaluate(S)` solves for
/// `S ∪ background`. This restricts analytics to a sub-market of players on
/// large cases.
pub struct ObjectiveOracle<'a> {
    eval: Box<EvalFn<'a>>,
    ground: BidderSet,
    background: BidderSet,
    cache: Mutex<HashMap<BidderSet, f64>>,
    evals: AtomicUsize,
}

impl<'a> ObjectiveOracle<'a> {
    pub fn new(ground: BidderSet, eval: impl Fn(BidderSet) -> Result<f64> + Send + Sync + 'a) -> Self {
        ObjectiveOracle {
            eval: Box::new(eval),
            ground,
            background: BidderSet::EMPTY,
            cache: Mutex::new(HashMap::new()),
            evals: AtomicUsize::new(0),
        }
    }

    /// Oracle over an explicit table; sets missing from the table are `+inf`.
    pub fn from_table(ground: BidderSet, table: HashMap<BidderSet, f64>) -> ObjectiveOracle<'static> {
        ObjectiveOracle::new(ground, move |s| Ok(table.get(&s).copied().unwrap_or(f64::INFINITY)))
    }

    /// Players outside `players` become background bidders.
    pub fn restrict(mut self, players: BidderSet) -> Self {
        let all = self.ground.union(self.background);
        self.ground = players.intersection(all);
        self.background = all.difference(self.ground);
        self.cache.get_mut().unwrap().clear();
        self
    }

    pub fn ground(&self) -> BidderSet {
        self.ground
    }

    pub fn background(&self) -> BidderSet {
        self.background
    }

    /// `J(S ∪ background)` for `S ⊆ ground`.
    pub fn evaluate(&self, s: BidderSet) -> Result<f64> {
        if !s.is_subset(self.ground) {
            return Err(Error::Precondition(format!("{s} is not a subset of the ground set {}", self.ground)));
        }
        if let Some(v) = self.cache.lock().unwrap().get(&s) {
            return Ok(*v);
        }
        let v = (self.eval)(s.union(self.background))?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        // first writer wins; evaluation is deterministic so racing writers agree
        Ok(*self.cache.lock().unwrap().entry(s).or_insert(v))
    }

    /// Evaluates many sets in parallel.
    pub fn prefill(&self, sets: &[BidderSet]) -> Result<()> {
        sets.par_iter().try_for_each(|&s| self.evaluate(s).map(|_| ()))
    }

    /// Number of underlying evaluations (cache misses).
    pub fn eval_count(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn cached(&self) -> Vec<(BidderSet, f64)> {
        let mut v: Vec<_> = self.cache.lock().unwrap().iter().map(|(k, v)| (*k, *v)).collect();
        v.sort_by_key(|p| p.0);
        v
    }

    /// First cached pair `S ⊆ R` with `J(R) > J(S) + tol`.
    pub fn monotonicity_violation(&self, rel_tol: f64) -> Option<(BidderSet, BidderSet)> {
        let c = self.cached();
        for &(s, js) in &c {
            for &(r, jr) in &c {
                if s != r && s.is_subset(r) && jr > js + rel_tol * (1.0 + js.abs().min(jr.abs())) {
                    return Some((s, r));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioMethod {
    Exhaustive,
    ConstraintGeneration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separation {
    /// Enumerate every `(S, K)` pair.
    Exact,
    /// Random pairs; the result is an upper estimate of the ratio.
    Sampled { pairs_per_round: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct RatioConfig {
    pub exhaustive_cap: usize,
    pub tol_ratio: f64,
    /// Differences `|J(A) - J(B)| <= snap_tol * (1 + |J(A)| + |J(B)|)` count as zero.
    pub snap_tol: f64,
    pub separation: Separation,
    pub max_rounds: usize,
    /// Witnesses kept per report.
    pub max_witnesses: usize,
}

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig {
            exhaustive_cap: 12,
            tol_ratio: 1e-9,
            snap_tol: 1e-10,
            separation: Separation::Exact,
            max_rounds: 1000,
            max_witnesses: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioWitness {
    pub s: BidderSet,
    pub k: BidderSet,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub gamma: f64,
    pub witnesses: Vec<RatioWitness>,
    pub method: RatioMethod,
    pub k_feas: usize,
    pub lower_bound: f64,
    pub evaluations_used: usize,
    /// Separation rounds (constraint generation only).
    pub rounds: usize,
    /// True when `gamma` may overestimate the ratio (sampled separation or
    /// round budget exhausted).
    pub upper_estimate: bool,
    pub players: BidderSet,
    /// Ratio of each sampled bid profile, when several were aggregated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_profile: Vec<f64>,
    #[serde(default)]
    pub profiles_skipped: usize,
}

fn snap(d: f64, a: f64, b: f64, tol: f64) -> f64 {
    if d.abs() <= tol * (1.0 + a.abs() + b.abs()) {
        0.0
    } else {
        d
    }
}

/// All values of `J` over the subsets of the ground set, indexed by compact
/// bit pattern (bit `i` = `i`-th member of the ground set).
struct Table {
    members: Vec<usize>,
    values: Vec<f64>,
}

impl Table {
    fn build(oracle: &ObjectiveOracle, cap: usize) -> Result<Table> {
        let members: Vec<usize> = oracle.ground.iter().collect();
        if members.len() > cap {
            return Err(Error::CapExceeded { size: members.len(), cap });
        }
        let sets: Vec<BidderSet> = (0..1u64 << members.len()).map(|c| expand(&members, c)).collect();
        oracle.prefill(&sets)?;
        let values = sets.iter().map(|&s| oracle.evaluate(s)).collect::<Result<Vec<_>>>()?;
        Ok(Table { members, values })
    }

    fn set(&self, c: u64) -> BidderSet {
        expand(&self.members, c)
    }
}

fn expand(members: &[usize], c: u64) -> BidderSet {
    BidderSet::from_indices(members.iter().enumerate().filter(|(i, _)| c >> i & 1 == 1).map(|(_, &m)| m))
}

/// Violating triple `(S, R, l)` of increasing differences, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupermodularityViolation {
    pub s: BidderSet,
    pub r: BidderSet,
    pub bidder: usize,
}

/// Checks `J(S) - J(S - l) <= J(R) - J(R - l)` for all `S ⊆ R`, `l ∈ S`,
/// skipping quadruples that touch an infinite value.
pub fn is_supermodular(oracle: &ObjectiveOracle, config: &RatioConfig) -> Result<Option<SupermodularityViolation>> {
    let t = Table::build(oracle, config.exhaustive_cap)?;
    let n = t.members.len();
    let full = (1u64 << n) - 1;
    let v = &t.values;
    // loss(S, l) = J(S - l) - J(S), snapped; None when either side is infinite
    let loss = |s: u64, i: usize| -> Option<f64> {
        let (a, b) = (v[(s & !(1 << i)) as usize], v[s as usize]);
        (a.is_finite() && b.is_finite()).then(|| snap(a - b, a, b, config.snap_tol))
    };
    for r in 0..=full {
        for i in 0..n {
            if r >> i & 1 == 0 {
                continue;
            }
            let Some(lr) = loss(r, i) else { continue };
            let mut s = 0u64;
            loop {
                if s >> i & 1 == 1 && s != r {
                    if let Some(ls) = loss(s, i) {
                        let tol = config.tol_ratio * (1.0 + ls.abs().max(lr.abs()));
                        if ls < lr - tol {
                            return Ok(Some(SupermodularityViolation { s: t.set(s), r: t.set(r), bidder: t.members[i] + 1 }));
                        }
                    }
                }
                if s == r {
                    break;
                }
                s = s.wrapping_sub(r) & r;
            }
        }
    }
    Ok(None)
}

/// One valid constraint `(S, K)` with its numerator and denominator.
#[derive(Clone, Copy)]
struct Pair {
    s: u64,
    k: u64,
    num: f64,
    den: f64,
}

/// Every pair with positive denominator and feasible `S - K`, visited in
/// increasing order of `S`, then `K`.
fn for_each_pair(t: &Table, snap_tol: f64, mut f: impl FnMut(Pair)) {
    let n = t.members.len();
    let v = &t.values;
    let mut den = vec![0.0f64; 1 << n];
    let mut loss = vec![0.0f64; n];
    for s in 0..1u64 << n {
        let js = v[s as usize];
        if !js.is_finite() {
            continue;
        }
        for (i, li) in loss.iter_mut().enumerate() {
            if s >> i & 1 == 1 {
                let a = v[(s & !(1 << i)) as usize];
                *li = if a.is_finite() { snap(a - js, a, js, snap_tol) } else { f64::INFINITY };
            }
        }
        den[0] = 0.0;
        // nonempty subsets of s in increasing order
        let mut k = 0u64.wrapping_sub(s) & s;
        while k != 0 {
            let low = k.trailing_zeros() as usize;
            den[k as usize] = den[(k & (k - 1)) as usize] + loss[low];
            let rest = v[(s & !k) as usize];
            if rest.is_finite() {
                let num = snap(rest - js, rest, js, snap_tol);
                let d = den[k as usize];
                if d > 0.0 {
                    f(Pair { s, k, num, den: d });
                }
            }
            if k == s {
                break;
            }
            k = k.wrapping_sub(s) & s;
        }
    }
}

fn witness(t: &Table, p: Pair) -> RatioWitness {
    RatioWitness { s: t.set(p.s), k: t.set(p.k), numerator: p.num, denominator: p.den, ratio: p.num / p.den }
}

/// Ratio by enumerating every `(S, K)` pair.
pub fn ratio_exhaustive(oracle: &ObjectiveOracle, config: &RatioConfig) -> Result<RatioReport> {
    let t = Table::build(oracle, config.exhaustive_cap)?;
    let mut gamma = 1.0f64;
    let mut all: Vec<Pair> = Vec::new();
    for_each_pair(&t, config.snap_tol, |p| {
        let r = p.num / p.den;
        if r < gamma - config.tol_ratio {
            gamma = r;
            all.retain(|q| q.num / q.den <= gamma + config.tol_ratio);
        }
        if r <= gamma + config.tol_ratio && r < 1.0 - config.tol_ratio && all.len() < config.max_witnesses {
            all.push(p);
        }
    });
    let gamma = gamma.clamp(0.0, 1.0);
    let k = k_feas_table(&t);
    Ok(RatioReport {
        gamma,
        witnesses: all.into_iter().filter(|p| p.num / p.den <= gamma + config.tol_ratio).map(|p| witness(&t, p)).collect(),
        method: RatioMethod::Exhaustive,
        k_feas: k,
        lower_bound: lower_bound(k),
        evaluations_used: oracle.eval_count(),
        rounds: 0,
        upper_estimate: false,
        players: oracle.ground(),
        per_profile: Vec::new(),
        profiles_skipped: 0,
    })
}

/// Ratio by constraint generation: the master keeps the generated constraints
/// and sets `gamma` to the largest value satisfying them; separation returns
/// the constraint most violated by the current `gamma`.
pub fn ratio_constraint_generation(oracle: &ObjectiveOracle, config: &RatioConfig) -> Result<RatioReport> {
    match config.separation {
        Separation::Exact => cg_exact(oracle, config),
        Separation::Sampled { pairs_per_round, seed } => cg_sampled(oracle, config, pairs_per_round, seed),
    }
}

fn cg_exact(oracle: &ObjectiveOracle, config: &RatioConfig) -> Result<RatioReport> {
    let t = Table::build(oracle, config.exhaustive_cap)?;
    let mut gamma = 1.0f64;
    let mut generated: Vec<Pair> = Vec::new();
    let mut rounds = 0;
    let mut converged = false;
    while rounds < config.max_rounds {
        rounds += 1;
        let mut worst: Option<(f64, Pair)> = None;
        for_each_pair(&t, config.snap_tol, |p| {
            let viol = gamma * p.den - p.num;
            if worst.as_ref().is_none_or(|w| viol > w.0) {
                worst = Some((viol, p));
            }
        });
        match worst {
            Some((viol, p)) if viol / p.den > config.tol_ratio => {
                generated.push(p);
                gamma = generated.iter().map(|q| q.num / q.den).fold(1.0, f64::min);
            }
            _ => {
                converged = true;
                break;
            }
        }
    }
    let gamma = gamma.clamp(0.0, 1.0);
    let k = k_feas_table(&t);
    let witnesses = generated
        .iter()
        .filter(|p| p.num / p.den <= gamma + config.tol_ratio)
        .take(config.max_witnesses)
        .map(|&p| witness(&t, p))
        .collect();
    Ok(RatioReport {
        gamma,
        witnesses,
        method: RatioMethod::ConstraintGeneration,
        k_feas: k,
        lower_bound: lower_bound(k),
        evaluations_used: oracle.eval_count(),
        rounds,
        upper_estimate: !converged,
        players: oracle.ground(),
        per_profile: Vec::new(),
        profiles_skipped: 0,
    })
}

fn cg_sampled(oracle: &ObjectiveOracle, config: &RatioConfig, per_round: usize, seed: u64) -> Result<RatioReport> {
    let members: Vec<usize> = oracle.ground().iter().collect();
    let n = members.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gamma = 1.0f64;
    let mut generated: Vec<RatioWitness> = Vec::new();
    let mut rounds = 0;
    let eval = |s: BidderSet| oracle.evaluate(s);
    while rounds < config.max_rounds {
        rounds += 1;
        let mut worst: Option<(f64, RatioWitness)> = None;
        for _ in 0..per_round {
            let mut order = members.clone();
            order.shuffle(&mut rng);
            let s_size = rng.gen_range(1..=n.max(1));
            let s_members = &order[..s_size.min(n)];
            let k_size = rng.gen_range(2..=s_members.len().max(2)).min(s_members.len());
            if k_size < 2 {
                continue;
            }
            let s = BidderSet::from_indices(s_members.iter().copied());
            let k = BidderSet::from_indices(s_members[..k_size].iter().copied());
            let js = eval(s)?;
            let rest = eval(s.difference(k))?;
            if !js.is_finite() || !rest.is_finite() {
                continue;
            }
            let num = snap(rest - js, rest, js, config.snap_tol);
            let mut den = 0.0;
            for l in k.iter() {
                let a = eval(s.without(l))?;
                den += snap(a - js, a, js, config.snap_tol);
            }
            if den <= 0.0 {
                continue;
            }
            let viol = gamma * den - num;
            if worst.as_ref().is_none_or(|w| viol > w.0) {
                worst = Some((viol, RatioWitness { s, k, numerator: num, denominator: den, ratio: num / den }));
            }
        }
        match worst {
            Some((viol, w)) if viol / w.denominator > config.tol_ratio => {
                generated.push(w);
                gamma = generated.iter().map(|w| w.ratio).fold(1.0, f64::min);
            }
            _ => break,
        }
    }
    let gamma = gamma.clamp(0.0, 1.0);
    let k = k_feas(oracle, config)?;
    Ok(RatioReport {
        gamma,
        witnesses: generated.into_iter().filter(|w| w.ratio <= gamma + config.tol_ratio).take(config.max_witnesses).collect(),
        method: RatioMethod::ConstraintGeneration,
        k_feas: k,
        lower_bound: lower_bound(k),
        evaluations_used: oracle.eval_count(),
        rounds,
        upper_estimate: true,
        players: oracle.ground(),
        per_profile: Vec::new(),
        profiles_skipped: 0,
    })
}

/// `1 / k_feas`, or 1 when no bidder can be removed (then every pair is
/// either vacuous or infeasible).
pub fn lower_bound(k_feas: usize) -> f64 {
    1.0 / k_feas.max(1) as f64
}

fn k_feas_table(t: &Table) -> usize {
    let n = t.members.len();
    let full = (1u64 << n) - 1;
    (0..=full)
        .filter(|&c| t.values[c as usize].is_finite())
        .map(|c| n - c.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

/// Largest number of players whose joint removal keeps `J` finite.
pub fn k_feas(oracle: &ObjectiveOracle, config: &RatioConfig) -> Result<usize> {
    let members: Vec<usize> = oracle.ground().iter().collect();
    let n = members.len();
    if oracle.evaluate(oracle.ground())?.is_infinite() {
        return Ok(0);
    }
    if n <= config.exhaustive_cap {
        return Ok(k_feas_table(&Table::build(oracle, config.exhaustive_cap)?));
    }
    // smallest feasible subset first; sizes grow until one is found
    for size in 0..=n {
        if binomial(n, size) > 1e6 {
            return Err(Error::CapExceeded { size: n, cap: config.exhaustive_cap });
        }
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let s = BidderSet::from_indices(idx.iter().map(|&i| members[i]));
            if oracle.evaluate(s)?.is_finite() {
                return Ok(n - size);
            }
            let Some(i) = (0..size).rev().find(|&i| idx[i] < n - size + i) else { break };
            idx[i] += 1;
            for j in i + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(0)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Ratio with the given method.
pub fn ratio(oracle: &ObjectiveOracle, method: RatioMethod, config: &RatioConfig) -> Result<RatioReport> {
    match method {
        RatioMethod::Exhaustive => ratio_exhaustive(oracle, config),
        RatioMethod::ConstraintGeneration => ratio_constraint_generation(oracle, config),
    }
}

/// Estimate of the market-level ratio: the minimum of the profile ratios over
/// `n_profiles` bid profiles drawn from `sampler`, restricted to `players`
/// (all bidders when `None`). Profiles whose full market is infeasible are
/// skipped. Because only finitely many profiles are seen, the result is an
/// upper estimate of the true market ratio.
pub fn ratio_market_estimate(
    dispatcher: &crate::dispatch::Dispatcher,
    sampler: &crate::cases::BidSampler,
    n_profiles: usize,
    players: Option<BidderSet>,
    method: RatioMethod,
    config: &RatioConfig,
) -> Result<RatioReport> {
    let inst = dispatcher.instance();
    let players = players.unwrap_or_else(|| BidderSet::full(inst.num_bidders()));
    let mut per_profile = Vec::with_capacity(n_profiles);
    let mut skipped = 0;
    let mut best: Option<RatioReport> = None;
    let mut evaluations = 0;
    for i in 0..n_profiles {
        let profile = sampler.sample_indexed(inst, i as u64);
        let oracle = crate::dispatch::make_oracle(dispatcher, &profile).restrict(players);
        if oracle.evaluate(oracle.ground())?.is_infinite() {
            skipped += 1;
            continue;
        }
        let r = ratio(&oracle, method, config)?;
        evaluations += r.evaluations_used;
        per_profile.push(r.gamma);
        let k = best.as_ref().map_or(r.k_feas, |b| b.k_feas.max(r.k_feas));
        let mut keep = match best.take() {
            Some(b) if b.gamma <= r.gamma => b,
            _ => r,
        };
        keep.k_feas = k;
        keep.lower_bound = lower_bound(k);
        best = Some(keep);
    }
    let mut out = best.ok_or_else(|| Error::Precondition("every sampled profile was infeasible".into()))?;
    out.evaluations_used = evaluations;
    out.per_profile = per_profile;
    out.profiles_skipped = skipped;
    out.upper_estimate = true;
    Ok(out)
}
