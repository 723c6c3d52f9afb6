//! Economic dispatch under the DC power-flow model.
//!
//! Bus angles are eliminated through power transfer distribution factors, so
//! the continuous subproblem has one balance row and two rows per limited
//! line. Discrete bids (blocks and menus) are handled by branch-and-bound over
//! ranges of their option lists; each node relaxes the menu to its lower
//! convex envelope, which keeps the subproblem a convex QP.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bidset::BidderSet;
use crate::error::{Error, Result};
use crate::market::{BidFunction, BidProfile, MarketInstance};
use crate::qp::{self, QpOptions, QpProblem, QpStatus, Row};
use crate::setfunc::ObjectiveOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    pub status: DispatchStatus,
    /// Total bid cost plus the linear additional cost; `+inf` when infeasible.
    #[serde(with = "crate::report::extended_real")]
    pub objective: f64,
    /// MW per bidder, in bidder order. Empty when infeasible.
    pub allocation: Vec<f64>,
    /// Radians per bus, in bus order, reference bus at 0.
    pub angles: Vec<f64>,
    /// MW per line (from -> to), in line order.
    pub flows: Vec<f64>,
    pub duality_gap: f64,
    /// Discrete bidders with a nonzero accepted quantity.
    pub block_pattern: BidderSet,
}

impl DispatchResult {
    fn infeasible() -> Self {
        DispatchResult {
            status: DispatchStatus::Infeasible,
            objective: f64::INFINITY,
            allocation: Vec::new(),
            angles: Vec::new(),
            flows: Vec::new(),
            duality_gap: 0.0,
            block_pattern: BidderSet::EMPTY,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == DispatchStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchOptions {
    /// Enumerate every discrete acceptance pattern instead of branching.
    pub enumerate_blocks: bool,
    /// Lexicographic preference for low bidder ids among optimal allocations.
    pub tie_break: bool,
    pub qp: QpOptions,
    /// Relative tolerance on the certified duality gap.
    pub gap_tol: f64,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions { enumerate_blocks: false, tie_break: true, qp: QpOptions::default(), gap_tol: 1e-7 }
    }
}

/// Linear sensitivities of the DC network.
#[derive(Debug, Clone)]
pub struct Network {
    bus_pos: HashMap<usize, usize>,
    /// Inverse of the reduced susceptance matrix, embedded with a zero
    /// reference row and column.
    reactance: DMatrix<f64>,
    /// `ptdf[k][i]`: MW on line k per MW injected at bus i (withdrawn at the reference).
    ptdf: Vec<Vec<f64>>,
    base_mva: f64,
}

impl Network {
    pub fn build(instance: &MarketInstance) -> Result<Self> {
        let n = instance.buses.len();
        let bus_pos: HashMap<usize, usize> = instance.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let r = *bus_pos
            .get(&instance.meta.reference_bus)
            .ok_or(Error::UnknownBus(instance.meta.reference_bus))?;
        let mut b = DMatrix::zeros(n, n);
        for l in &instance.lines {
            let f = *bus_pos.get(&l.from).ok_or(Error::UnknownBus(l.from))?;
            let t = *bus_pos.get(&l.to).ok_or(Error::UnknownBus(l.to))?;
            b[(f, f)] += l.susceptance;
            b[(t, t)] += l.susceptance;
            b[(f, t)] -= l.susceptance;
            b[(t, f)] -= l.susceptance;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
        let red = DMatrix::from_fn(keep.len(), keep.len(), |a, c| b[(keep[a], keep[c])]);
        let inv = if keep.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            red.try_inverse()
                .ok_or_else(|| Error::NumericalFailure("singular susceptance matrix (disconnected network?)".into()))?
        };
        let mut reactance: DMatrix<f64> = DMatrix::zeros(n, n);
        for (a, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                reactance[(i, j)] = inv[(a, c)];
            }
        }
        let ptdf = instance
            .lines
            .iter()
            .map(|l| {
                let (f, t) = (bus_pos[&l.from], bus_pos[&l.to]);
                (0..n)
                    .map(|i| -> f64 { l.susceptance * (reactance[(f, i)] - reactance[(t, i)]) })
                    .map(|v| {
                        if v.abs() < 1e-13 {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Network { bus_pos, reactance, ptdf, base_mva: instance.meta.base_mva })
    }

    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.bus_pos.get(&id).copied()
    }

    pub fn ptdf(&self) -> &[Vec<f64>] {
        &self.ptdf
    }

    /// Line flows for net injections (MW per bus, summing to zero).
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        self.ptdf.iter().map(|row| row.iter().zip(injection).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn angles(&self, injection: &[f64]) -> Vec<f64> {
        let n = injection.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.reactance[(i, j)] * injection[j]).sum::<f64>() / self.base_mva)
            .collect()
    }

    /// `w` with `sum_i y_i theta_i = sum_j w_j injection_j`.
    fn angle_weights(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|j| (0..n).map(|i| y[i] * self.reactance[(i, j)]).sum::<f64>() / self.base_mva)
            .collect()
    }
}

/// Reusable solver for one instance.
#[derive(Debug, Clone)]
pub struct Dispatcher<'a> {
    instance: &'a MarketInstance,
    network: Network,
    bidder_bus: Vec<usize>,
    demand: Vec<f64>,
    /// Marginal additional cost per MW of each bidder, and its constant.
    extra_marginal: Vec<f64>,
    extra_constant: f64,
    pub options: DispatchOptions,
}

/// Lower convex envelope of options `lo..=hi`, as `(length, slope)` pieces.
fn envelope(opts: &[(f64, f64)], lo: usize, hi: usize) -> Vec<(f64, f64)> {
    let mut hull: Vec<usize> = vec![lo];
    for k in lo + 1..=hi {
        while hull.len() >= 2 {
            let (a, b) = (opts[hull[hull.len() - 2]], opts[hull[hull.len() - 1]]);
            let c = opts[k];
            // drop b if it lies on or above the chord a-c
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    hull.windows(2)
        .map(|w| {
            let (a, b) = (opts[w[0]], opts[w[1]]);
            (b.0 - a.0, (b.1 - a.1) / (b.0 - a.0))
        })
        .collect()
}

struct Built {
    problem: QpProblem,
    owner: Vec<usize>,
    base: Vec<f64>,
    constant: f64,
    infeasible: bool,
}

struct Leaf {
    objective: f64,
    allocation: Vec<f64>,
    gap: f64,
    secondary: f64,
    choice: Vec<usize>,
}

impl<'a> Dispatcher<'a> {
    pub fn new(instance: &'a MarketInstance) -> Result<Self> {
        instance.ensure_valid()?;
        let network = Network::build(instance)?;
        let bidder_bus: Vec<usize> = instance
            .bidders
            .iter()
            .map(|b| network.bus_position(b.bus).ok_or(Error::UnknownBus(b.bus)))
            .collect::<Result<_>>()?;
        let demand: Vec<f64> = instance.buses.iter().map(|b| b.demand).collect();
        let (mut extra_marginal, mut extra_constant) = (vec![0.0; instance.bidders.len()], 0.0);
        if let Some(d) = &instance.d_linear {
            let w = network.angle_weights(&d.y);
            for (l, m) in extra_marginal.iter_mut().enumerate() {
                *m = d.x[l] + w[bidder_bus[l]];
            }
            extra_constant = -w.iter().zip(&demand).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(Dispatcher {
            instance,
            network,
            bidder_bus,
            demand,
            extra_marginal,
            extra_constant,
            options: DispatchOptions::default(),
        })
    }

    pub fn with_options(mut self, options: DispatchOptions) -> Self {
        self.options = options;
        self
    }

    pub fn instance(&self) -> &MarketInstance {
        self.instance
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Additional cost `d(x, y)` of an allocation.
    pub fn extra_cost(&self, allocation: &[f64]) -> f64 {
        self.extra_constant + allocation.iter().zip(&self.extra_marginal).map(|(x, m)| x * m).sum::<f64>()
    }

    /// Minimum cost with only the bidders in `active` allowed to supply.
    pub fn solve(&self, profile: &BidProfile, active: BidderSet) -> Result<DispatchResult> {
        let n = self.instance.bidders.len();
        let mut bids: Vec<Option<&BidFunction>> = vec![None; n];
        for l in active.iter() {
            if l >= n {
                return Err(Error::Precondition(format!("active set {active} exceeds the {n} bidders")));
            }
            bids[l] = Some(profile.get(self.instance.bidders[l].id)?);
        }
        let menus: Vec<Option<Vec<(f64, f64)>>> = bids.iter().map(|b| b.and_then(|f| f.options())).collect();
        let discrete: Vec<usize> = (0..n).filter(|&l| menus[l].is_some()).collect();

        let leaf = if discrete.is_empty() {
            self.solve_leaf(&bids, &menus, &vec![0; n])?
        } else if self.options.enumerate_blocks {
            self.enumerate(&bids, &menus, &discrete)?
        } else {
            self.branch_and_bound(&bids, &menus, &discrete)?
        };
        Ok(match leaf {
            None => DispatchResult::infeasible(),
            Some(leaf) => self.finish(leaf, &menus),
        })
    }

    fn finish(&self, leaf: Leaf, menus: &[Option<Vec<(f64, f64)>>]) -> DispatchResult {
        let mut injection: Vec<f64> = self.demand.iter().map(|d| -d).collect();
        for (l, x) in leaf.allocation.iter().enumerate() {
            injection[self.bidder_bus[l]] += x;
        }
        let pattern = BidderSet::from_indices((0..leaf.allocation.len()).filter(|&l| menus[l].is_some() && leaf.allocation[l] > 0.0));
        DispatchResult {
            status: DispatchStatus::Optimal,
            objective: leaf.objective,
            angles: self.network.angles(&injection),
            flows: self.network.flows(&injection),
            allocation: leaf.allocation,
            duality_gap: leaf.gap,
            block_pattern: pattern,
        }
    }

    /// Continuous subproblem with each discrete bidder restricted to options
    /// `ranges[l].0..=ranges[l].1` (relaxed to their convex envelope).
    fn build(&self, bids: &[Option<&BidFunction>], menus: &[Option<Vec<(f64, f64)>>], ranges: &[(usize, usize)]) -> Built {
        let n = bids.len();
        let mut p = QpProblem::default();
        let mut owner = Vec::new();
        let mut base = vec![0.0; n];
        let mut constant = self.extra_constant;
        let mut push = |p: &mut QpProblem, l: usize, len: f64, quad: f64, lin: f64| {
            p.quad.push(quad);
            p.lin.push(lin + self.extra_marginal[l]);
            p.lower.push(0.0);
            p.upper.push(len);
            owner.push(l);
        };
        for l in 0..n {
            let Some(bid) = bids[l] else { continue };
            if let Some(opts) = &menus[l] {
                let (lo, hi) = ranges[l];
                base[l] = opts[lo].0;
                constant += opts[lo].1 + self.extra_marginal[l] * opts[lo].0;
                for (len, slope) in envelope(opts, lo, hi) {
                    push(&mut p, l, len, 0.0, slope);
                }
            } else {
                for s in bid.marginal_segments().unwrap_or_default() {
                    if s.length > 0.0 {
                        push(&mut p, l, s.length, (s.end - s.start) / s.length, s.start);
                    }
                }
            }
        }
        let nv = owner.len();
        let total_demand: f64 = self.demand.iter().sum();
        p.eq.push(Row::new(vec![1.0; nv], total_demand - base.iter().sum::<f64>()));

        let mut infeasible = false;
        for (k, line) in self.instance.lines.iter().enumerate() {
            let Some(limit) = line.limit else { continue };
            let ptdf = &self.network.ptdf[k];
            let offset: f64 = (0..n).map(|l| ptdf[self.bidder_bus[l]] * base[l]).sum::<f64>()
                - ptdf.iter().zip(&self.demand).map(|(a, d)| a * d).sum::<f64>();
            let coef: Vec<f64> = owner.iter().map(|&l| ptdf[self.bidder_bus[l]]).collect();
            let scale = coef.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if scale == 0.0 {
                if offset.abs() > limit + 1e-9 * (1.0 + limit) {
                    infeasible = true;
                }
                continue;
            }
            p.ineq.push(Row::new(coef.iter().map(|c| c / scale).collect(), (limit - offset) / scale));
            p.ineq.push(Row::new(coef.iter().map(|c| -c / scale).collect(), (limit + offset) / scale));
        }
        Built { problem: p, owner, base, constant, infeasible }
    }

    fn run_qp(&self, problem: &QpProblem) -> Result<qp::QpSolution> {
        qp::solve_with(problem, &self.options.qp).map_err(|e| Error::NumericalFailure(e.to_string()))
    }

    fn allocation(built: &Built, x: &[f64]) -> Vec<f64> {
        let mut a = built.base.clone();
        for (v, &l) in built.owner.iter().enumerate() {
            a[l] += x[v];
        }
        a
    }

    fn secondary(allocation: &[f64]) -> f64 {
        allocation.iter().enumerate().map(|(l, x)| (l + 1) as f64 * x).sum()
    }

    /// Exact solve with every discrete bidder fixed to option `choice[l]`.
    fn solve_leaf(
        &self,
        bids: &[Option<&BidFunction>],
        menus: &[Option<Vec<(f64, f64)>>],
        choice: &[usize],
    ) -> Result<Option<Leaf>> {
        let ranges: Vec<(usize, usize)> = choice.iter().map(|&k| (k, k)).collect();
        let built = self.build(bids, menus, &ranges);
        if built.infeasible {
            return Ok(None);
        }
        let sol = self.run_qp(&built.problem)?;
        if sol.status == QpStatus::Infeasible {
            return Ok(None);
        }
        let objective = sol.objective + built.constant;
        let tol = self.options.gap_tol * (1.0 + objective.abs());
        if sol.duality_gap.abs() > tol {
            return Err(Error::NumericalFailure(format!(
                "duality gap {:.3e} exceeds tolerance {:.3e}",
                sol.duality_gap, tol
            )));
        }
        let mut x = sol.x.clone();
        if self.options.tie_break {
            if let Some(tx) = self.tie_break(&built, &sol)? {
                x = tx;
            }
        }
        let allocation = Self::allocation(&built, &x);
        Ok(Some(Leaf {
            objective,
            secondary: Self::secondary(&allocation),
            allocation,
            gap: sol.duality_gap,
            choice: choice.to_vec(),
        }))
    }

    /// Minimises `sum id * x` over the optimal face of `problem`.
    fn tie_break(&self, built: &Built, sol: &qp::QpSolution) -> Result<Option<Vec<f64>>> {
        let problem = &built.problem;
        let nv = problem.num_vars();
        if !(0..nv).any(|v| problem.quad[v] == 0.0 && problem.lower[v] < problem.upper[v]) {
            return Ok(None);
        }
        let dual_scale = 1.0 + problem.lin.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-9 * dual_scale;
        let mut face = problem.clone();
        for v in 0..nv {
            let fix = problem.quad[v] > 0.0 || sol.reduced_costs[v].abs() > tol;
            if fix {
                face.lower[v] = sol.x[v];
                face.upper[v] = sol.x[v];
            }
        }
        let mut ineq = Vec::new();
        for (i, row) in problem.ineq.iter().enumerate() {
            if sol.ineq_duals[i] > tol {
                face.eq.push(row.clone());
            } else {
                ineq.push(row.clone());
            }
        }
        face.ineq = ineq;
        face.quad = vec![0.0; nv];
        face.lin = built.owner.iter().map(|&l| (l + 1) as f64).collect();
        let tb = qp::solve_from(&face, &sol.x, &self.options.qp).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        if tb.max_violation > 1e-7 * (1.0 + problem.eq[0].rhs.abs()) {
            return Ok(None);
        }
        Ok(Some(tb.x))
    }

    fn branch_and_bound(
        &self,
        bids: &[Option<&BidFunction>],
        menus: &[Option<Vec<(f64, f64)>>],
        discrete: &[usize],
    ) -> Result<Option<Leaf>> {
        let n = bids.len();
        let mut root = vec![(0usize, 0usize); n];
        for &l in discrete {
            root[l] = (0, menus[l].as_ref().unwrap().len() - 1);
        }
        let mut stack = vec![root];
        let mut leaves: Vec<Leaf> = Vec::new();
        let mut best = f64::INFINITY;
        while let Some(ranges) = stack.pop() {
            let built = self.build(bids, menus, &ranges);
            if built.infeasible {
                continue;
            }
            let sol = self.run_qp(&built.problem)?;
            if sol.status == QpStatus::Infeasible {
                continue;
            }
            let bound = sol.objective + built.constant;
            if bound > best + 1e-9 * (1.0 + best.abs()) {
                continue;
            }
            let alloc = Self::allocation(&built, &sol.x);
            let mut relaxed_cost = vec![0.0; n];
            for (v, &l) in built.owner.iter().enumerate() {
                relaxed_cost[l] += built.problem.lin[v] * sol.x[v] - self.extra_marginal[l] * sol.x[v];
            }
            let mut branch: Option<(usize, usize)> = None;
            let mut choice = vec![0usize; n];
            for &l in discrete {
                let opts = menus[l].as_ref().unwrap();
                let (lo, hi) = ranges[l];
                let x = alloc[l];
                let tol = 1e-9 * (1.0 + opts[hi].0);
                let cost = opts[lo].1 + relaxed_cost[l];
                let exact = (lo..=hi).find(|&k| (opts[k].0 - x).abs() <= tol && cost >= opts[k].1 - 1e-9 * (1.0 + opts[k].1));
                match exact {
                    Some(k) => choice[l] = k,
                    None => {
                        let k = (lo..=hi).rev().find(|&k| opts[k].0 <= x + tol).unwrap_or(lo);
                        let k = k.min(hi - 1);
                        branch = Some((l, k));
                        break;
                    }
                }
            }
            match branch {
                Some((l, k)) => {
                    let (lo, hi) = ranges[l];
                    let mut right = ranges.clone();
                    right[l] = (k + 1, hi);
                    let mut left = ranges;
                    left[l] = (lo, k);
                    stack.push(right);
                    stack.push(left);
                }
                None => {
                    if let Some(leaf) = self.solve_leaf(bids, menus, &choice)? {
                        best = best.min(leaf.objective);
                        leaves.push(leaf);
                    }
                }
            }
        }
        Ok(self.pick(leaves))
    }

    fn enumerate(
        &self,
        bids: &[Option<&BidFunction>],
        menus: &[Option<Vec<(f64, f64)>>],
        discrete: &[usize],
    ) -> Result<Option<Leaf>> {
        let n = bids.len();
        let sizes: Vec<usize> = discrete.iter().map(|&l| menus[l].as_ref().unwrap().len()).collect();
        let total: f64 = sizes.iter().map(|&s| s as f64).product();
        if total > 1e6 {
            return Err(Error::CapExceeded { size: total as usize, cap: 1_000_000 });
        }
        let mut leaves = Vec::new();
        let mut digits = vec![0usize; discrete.len()];
        loop {
            let mut choice = vec![0usize; n];
            for (a, &l) in discrete.iter().enumerate() {
                choice[l] = digits[a];
            }
            if let Some(leaf) = self.solve_leaf(bids, menus, &choice)? {
                leaves.push(leaf);
            }
            let mut a = 0;
            loop {
                if a == digits.len() {
                    return Ok(self.pick(leaves));
                }
                digits[a] += 1;
                if digits[a] < sizes[a] {
                    break;
                }
                digits[a] = 0;
                a += 1;
            }
        }
    }

    fn pick(&self, leaves: Vec<Leaf>) -> Option<Leaf> {
        let best = leaves.iter().map(|l| l.objective).fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * (1.0 + best.abs());
        leaves
            .into_iter()
            .filter(|l| l.objective <= best + tol)
            .min_by(|a, b| a.secondary.total_cmp(&b.secondary).then_with(|| a.choice.cmp(&b.choice)))
    }
}

/// Memoised `J(S)` under `profile`, over all bidders of the instance.
pub fn make_oracle<'a>(dispatcher: &'a Dispatcher<'a>, profile: &'a BidProfile) -> ObjectiveOracle<'a> {
    let ground = BidderSet::full(dispatcher.instance().num_bidders());
    ObjectiveOracle::new(ground, move |s| Ok(dispatcher.solve(profile, s)?.objective))
}

/// One-shot solve; builds the network sensitivities each call.
pub fn solve(instance: &MarketInstance, profile: &BidProfile, active: BidderSet) -> Result<DispatchResult> {
    Dispatcher::new(instance)?.solve(profile, active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{apply_overrides, ieee_case, simple_example, CaseOverride, LineLimit};
    use crate::market::{Bus, CaseMeta, Line, LinearCost};
    use approx::assert_abs_diff_eq;

    fn ids(v: &[usize]) -> BidderSet {
        BidderSet::from_ids(v)
    }

    #[test]
    fn simple_example_objectives() {
        let (m, c) = simple_example(0.01).unwrap();
        let d = Dispatcher::new(&m).unwrap();
        let full = d.solve(&c, BidderSet::full(3)).unwrap();
        assert_eq!(full.objective, 600.0);
        assert_eq!(full.allocation, vec![800.0, 0.0, 0.0]);
        assert_eq!(full.block_pattern, ids(&[1]));
        let pair = d.solve(&c, ids(&[2, 3])).unwrap();
        assert_abs_diff_eq!(pair.objective, 600.02, epsilon = 1e-9);
        let lone = d.solve(&c, ids(&[2])).unwrap();
        assert_eq!(lone.status, DispatchStatus::Infeasible);
        assert!(lone.objective.is_infinite() && lone.allocation.is_empty());
        assert!(d.solve(&c, BidderSet::EMPTY).unwrap().objective.is_infinite());
    }

    fn two_bus(limit: f64) -> MarketInstance {
        MarketInstance {
            buses: vec![Bus { id: 1, demand: 0.0 }, Bus { id: 2, demand: 100.0 }],
            lines: vec![Line { from: 1, to: 2, susceptance: 10.0, limit: Some(limit) }],
            bidders: vec![Bidder { id: 1, bus: 1, true_cost: BidFunction::Quadratic { a: 0.0, b: 10.0, cap: 200.0 }, supply_type: 1, owner: None }],
            d_linear: None,
            meta: CaseMeta { name: "two-bus".into(), base_mva: 100.0, reference_bus: 1, types: 1, notes: vec![] },
        }
    }
    use crate::market::Bidder;

    #[test]
    fn stranded_demand_is_infeasible() {
        let m = two_bus(50.0);
        let r = solve(&m, &m.truthful_profile(), BidderSet::full(1)).unwrap();
        assert_eq!(r.status, DispatchStatus::Infeasible);
        let m = two_bus(150.0);
        let r = solve(&m, &m.truthful_profile(), BidderSet::full(1)).unwrap();
        assert_abs_diff_eq!(r.objective, 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.flows[0], 100.0, epsilon = 1e-9);
        // theta_2 = -P / (b * base) with P = 100 MW
        assert_abs_diff_eq!(r.angles[1], -0.1, epsilon = 1e-12);
    }

    #[test]
    fn congestion_splits_supply() {
        // cheap supplier behind a 60 MW line, expensive one at the load
        let mut m = two_bus(60.0);
        m.bidders.push(Bidder { id: 2, bus: 2, true_cost: BidFunction::Quadratic { a: 0.0, b: 30.0, cap: 200.0 }, supply_type: 1, owner: None });
        let r = solve(&m, &m.truthful_profile(), BidderSet::full(2)).unwrap();
        assert_abs_diff_eq!(r.allocation[0], 60.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.allocation[1], 40.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.objective, 600.0 + 1200.0, epsilon = 1e-9);
    }

    #[test]
    fn linear_extra_cost() {
        let mut m = two_bus(150.0);
        m.d_linear = Some(LinearCost { x: vec![2.0], y: vec![0.0, 100.0] });
        let r = solve(&m, &m.truthful_profile(), BidderSet::full(1)).unwrap();
        // 100 MW at 10 + 2, plus 100 $/rad times theta_2 = -0.1
        assert_abs_diff_eq!(r.objective, 1200.0 - 10.0, epsilon = 1e-9);
    }

    #[test]
    fn ties_prefer_low_ids() {
        let m = MarketInstance::single_bus(
            "tie",
            50.0,
            vec![
                BidFunction::PiecewiseLinear { breakpoints: vec![(0.0, 0.0), (40.0, 400.0)] },
                BidFunction::PiecewiseLinear { breakpoints: vec![(0.0, 0.0), (40.0, 400.0)] },
            ],
        );
        let r = solve(&m, &m.truthful_profile(), BidderSet::full(2)).unwrap();
        assert_eq!(r.allocation[0], 40.0);
        assert_abs_diff_eq!(r.allocation[1], 10.0, epsilon = 1e-12);
    }

    /// Independent optimum of a single-bus market with quadratic bids: the
    /// clearing price found by bisection.
    fn clearing_cost(bids: &[(f64, f64, f64)], demand: f64) -> f64 {
        let supply = |p: f64| -> Vec<f64> {
            bids.iter()
                .map(|&(a, b, cap)| if a > 0.0 { ((p - b) / (2.0 * a)).clamp(0.0, cap) } else if p > b { cap } else { 0.0 })
                .collect()
        };
        let (mut lo, mut hi) = (0.0, 1e5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if supply(mid).iter().sum::<f64>() < demand {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        supply(hi).iter().zip(bids).map(|(x, &(a, b, _))| a * x * x + b * x).sum()
    }

    #[test]
    fn unconstrained_ieee_matches_clearing_price() {
        for name in ["case14", "case_ieee30", "case118"] {
            let m = ieee_case(name).unwrap().instance;
            let bids: Vec<(f64, f64, f64)> = m
                .bidders
                .iter()
                .map(|b| match b.true_cost {
                    BidFunction::Quadratic { a, b, cap } => (a, b, cap),
                    _ => unreachable!(),
                })
                .collect();
            let r = solve(&m, &m.truthful_profile(), BidderSet::full(m.num_bidders())).unwrap();
            let expect = clearing_cost(&bids, m.total_demand());
            assert_abs_diff_eq!(r.objective, expect, epsilon = 1e-6 * expect);
            assert!(r.duality_gap.abs() <= 1e-7 * (1.0 + r.objective));
        }
    }

    #[test]
    fn congested_ieee_matches_reference_values() {
        // reference optima from an interior-point solve of the angle formulation
        let m30 = ieee_case("case30").unwrap().instance;
        let r = solve(&m30, &m30.truthful_profile(), BidderSet::full(6)).unwrap();
        assert_abs_diff_eq!(r.objective, 565.2059663999231, epsilon = 1e-6);

        let ieee30 = ieee_case("case_ieee30").unwrap().instance;
        let r = solve(&ieee30, &ieee30.truthful_profile(), BidderSet::full(6)).unwrap();
        assert_abs_diff_eq!(r.objective, 8343.402009521338, epsilon = 1e-6);

        let m14 = ieee_case("case14").unwrap().instance;
        let ov = CaseOverride {
            line_limits: vec![LineLimit { from: 1, to: 2, limit: Some(10.0) }, LineLimit { from: 1, to: 5, limit: Some(10.0) }],
            ..Default::default()
        };
        let m14 = apply_overrides(&m14, &ov).unwrap();
        let r = solve(&m14, &m14.truthful_profile(), BidderSet::full(5)).unwrap();
        assert_abs_diff_eq!(r.objective, 9715.206209348702, epsilon = 1e-6);
        assert_abs_diff_eq!(r.allocation[0], 20.0, epsilon = 1e-7);
        for (k, line) in m14.lines.iter().enumerate() {
            if let Some(lim) = line.limit {
                assert!(r.flows[k].abs() <= lim + 1e-7);
            }
        }
    }

    #[test]
    fn excluded_bidders_get_zero() {
        let m = ieee_case("case30").unwrap().instance;
        let c = m.truthful_profile();
        let s = ids(&[1, 2, 4, 5, 6]);
        let r = solve(&m, &c, s).unwrap();
        assert_eq!(r.allocation[2], 0.0);
    }

    #[test]
    fn branch_and_bound_equals_enumeration() {
        let m = MarketInstance::single_bus(
            "blocks",
            230.0,
            vec![
                BidFunction::Block { quantity: 100.0, price: 1200.0 },
                BidFunction::Block { quantity: 80.0, price: 900.0 },
                BidFunction::Block { quantity: 50.0, price: 650.0 },
                BidFunction::Block { quantity: 130.0, price: 1500.0 },
                BidFunction::Quadratic { a: 0.05, b: 9.0, cap: 60.0 },
                BidFunction::Menu { options: vec![(0.0, 0.0), (30.0, 330.0), (70.0, 800.0)] },
            ],
        );
        let d = Dispatcher::new(&m).unwrap();
        let e = Dispatcher::new(&m).unwrap().with_options(DispatchOptions { enumerate_blocks: true, ..Default::default() });
        let c = m.truthful_profile();
        for s in BidderSet::full(6).subsets() {
            let a = d.solve(&c, s).unwrap();
            let b = e.solve(&c, s).unwrap();
            assert_eq!(a.status, b.status, "{s}");
            if a.is_optimal() {
                assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-9 * (1.0 + a.objective));
            }
        }
    }

    #[test]
    fn scaling_prices_scales_objective() {
        let m = ieee_case("case30").unwrap().instance;
        let c = m.truthful_profile();
        let scaled = BidProfile { label: "x3".into(), bids: c.bids.iter().map(|(k, b)| (*k, b.scale_price(3.0))).collect() };
        let d = Dispatcher::new(&m).unwrap();
        let a = d.solve(&c, BidderSet::full(6)).unwrap();
        let b = d.solve(&scaled, BidderSet::full(6)).unwrap();
        assert_abs_diff_eq!(b.objective, 3.0 * a.objective, epsilon = 1e-8 * b.objective);
    }

    #[test]
    fn envelope_of_menu() {
        let opts = [(0.0, 0.0), (10.0, 50.0), (20.0, 60.0), (30.0, 200.0)];
        let e = envelope(&opts, 0, 3);
        assert_eq!(e.len(), 2);
        assert_abs_diff_eq!(e[0].1, 3.0);
        assert_abs_diff_eq!(e[1].1, 14.0);
    }
}
