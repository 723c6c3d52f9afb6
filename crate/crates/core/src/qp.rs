//! Dense primal active-set solver for separable convex quadratic programs.
//!
//! ```text
//!     minimize    sum_j 0.5 q_j x_j^2 + c_j x_j
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//!                 lo <= x <= up
//! ```
//!
//! with `q_j >= 0`, so linear programs are the special case `q = 0`. Feasibility
//! is settled by a phase-1 program over artificial variables; the optimality
//! phase then walks from that point, solving one equality-constrained
//! subproblem per iteration. Directions of zero curvature are followed as rays
//! to the next blocking constraint, which is what turns the method into the
//! bounded-variable simplex on pure LPs.
//!
//! Every optimal solution carries a Lagrangian duality gap computed from the
//! final multipliers, so callers can check optimality without trusting the
//! iteration itself.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// One linear constraint row `coef . x (= or <=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coef: Vec<f64>,
    pub rhs: f64,
}

impl Row {
    pub fn new(coef: Vec<f64>, rhs: f64) -> Self {
        Row { coef, rhs }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.coef.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq: Vec<Row>,
    pub ineq: Vec<Row>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.lin.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, &v)| 0.5 * self.quad[j] * v * v + self.lin[j] * v)
            .sum()
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for r in &self.eq {
            worst = worst.max((r.dot(x) - r.rhs).abs());
        }
        for r in &self.ineq {
            worst = worst.max(r.dot(x) - r.rhs);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.quad.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension("variable vectors differ in length".into()));
        }
        for r in self.eq.iter().chain(&self.ineq) {
            if r.coef.len() != n {
                return Err(QpError::Dimension("constraint row length".into()));
            }
            if !r.rhs.is_finite() || r.coef.iter().any(|a| !a.is_finite()) {
                return Err(QpError::NonFinite);
            }
        }
        for j in 0..n {
            if self.quad[j] < 0.0 || !self.quad[j].is_finite() || !self.lin[j].is_finite() {
                return Err(QpError::NonFinite);
            }
            if !self.lower[j].is_finite() || self.lower[j] > self.upper[j] {
                return Err(QpError::Dimension(format!("bad bounds on variable {j}")));
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        let mut s = 1.0f64;
        for r in self.eq.iter().chain(&self.ineq) {
            s = s.max(r.rhs.abs());
        }
        for j in 0..self.num_vars() {
            s = s.max(self.lower[j].abs());
            if self.upper[j].is_finite() {
                s = s.max(self.upper[j].abs());
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    /// `q x + c + A' lambda` per variable; positive at lower bounds, negative at upper.
    pub reduced_costs: Vec<f64>,
    pub duality_gap: f64,
    pub max_violation: f64,
    /// Optimal phase-1 value (sum of artificial variables).
    pub infeasibility: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("unbounded direction without a blocking constraint")]
    Unbounded,
    #[error("problem dimensions: {0}")]
    Dimension(String),
    #[error("non-finite problem data")]
    NonFinite,
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub feas_tol: f64,
    pub dual_tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { feas_tol: 1e-9, dual_tol: 1e-10, max_iter: None }
    }
}

pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    solve_with(problem, &QpOptions::default())
}

pub fn solve_with(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    problem.check()?;
    let scale = problem.scale();
    let (phase1, start) = phase_one(problem);
    let mut engine = Engine::new(&phase1, start.x, start.bound, start.working, opts);
    engine.run()?;
    let n = problem.num_vars();
    let infeasibility: f64 = engine.x[n..].iter().sum();
    let mut iterations = engine.iterations;
    if infeasibility > opts.feas_tol * scale * 10.0 {
        return Ok(QpSolution {
            status: QpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            reduced_costs: Vec::new(),
            duality_gap: 0.0,
            max_violation: 0.0,
            infeasibility,
            iterations,
        });
    }
    let x0: Vec<f64> = engine.x[..n].to_vec();
    let mut sol = solve_from(problem, &x0, opts)?;
    iterations += sol.iterations;
    sol.iterations = iterations;
    sol.infeasibility = infeasibility;
    Ok(sol)
}

/// Optimality phase only, started from a (near) feasible point.
pub fn solve_from(problem: &QpProblem, start: &[f64], opts: &QpOptions) -> Result<QpSolution, QpError> {
    problem.check()?;
    let scale = problem.scale();
    let n = problem.num_vars();
    let tol = opts.feas_tol * scale;
    let mut x = start.to_vec();
    let mut bound = vec![Bound::Free; n];
    for j in 0..n {
        let (lo, up) = (problem.lower[j], problem.upper[j]);
        if x[j] <= lo + tol {
            x[j] = lo;
            bound[j] = Bound::Lower;
        } else if x[j] >= up - tol {
            x[j] = up;
            bound[j] = Bound::Upper;
        }
    }
    let mut engine = Engine::new(problem, x, bound, Vec::new(), opts);
    let mult = engine.run()?;
    let x = engine.x.clone();
    let iterations = engine.iterations;

    let k_eq = problem.eq.len();
    let eq_duals = mult[..k_eq].to_vec();
    let mut ineq_duals = vec![0.0; problem.ineq.len()];
    for (pos, &i) in engine.working.iter().enumerate() {
        ineq_duals[i] = mult[k_eq + pos].max(0.0);
    }
    let (reduced_costs, duality_gap) = certificate(problem, &x, &eq_duals, &ineq_duals);
    Ok(QpSolution {
        status: QpStatus::Optimal,
        objective: problem.objective(&x),
        max_violation: problem.max_violation(&x),
        x,
        eq_duals,
        ineq_duals,
        reduced_costs,
        duality_gap,
        infeasibility: 0.0,
        iterations,
    })
}

/// Lagrangian gap `f(x) - L(x, lambda, mu)` where the bound multipliers `mu`
/// are chosen so that `x` minimises the Lagrangian exactly. With nonnegative
/// inequality multipliers this is a valid lower-bound certificate.
pub fn certificate(problem: &QpProblem, x: &[f64], eq_duals: &[f64], ineq_duals: &[f64]) -> (Vec<f64>, f64) {
    let n = problem.num_vars();
    let mut r: Vec<f64> = (0..n).map(|j| problem.quad[j] * x[j] + problem.lin[j]).collect();
    for (row, &l) in problem.eq.iter().zip(eq_duals) {
        for j in 0..n {
            r[j] += l * row.coef[j];
        }
    }
    for (row, &l) in problem.ineq.iter().zip(ineq_duals) {
        if l != 0.0 {
            for j in 0..n {
                r[j] += l * row.coef[j];
            }
        }
    }
    let mut gap = 0.0;
    for (row, &l) in problem.eq.iter().zip(eq_duals) {
        gap -= l * (row.dot(x) - row.rhs);
    }
    for (row, &l) in problem.ineq.iter().zip(ineq_duals) {
        gap -= l * (row.dot(x) - row.rhs);
    }
    for j in 0..n {
        if r[j] > 0.0 {
            gap += r[j] * (x[j] - problem.lower[j]);
        } else if r[j] < 0.0 {
            gap += -r[j] * (problem.upper[j] - x[j]);
        }
    }
    (r, gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

struct Start {
    x: Vec<f64>,
    bound: Vec<Bound>,
    working: Vec<usize>,
}

/// Phase-1 program: original variables plus `t+`/`t-` per equality row and a
/// surplus `s` per inequality row, minimising the artificial total. The start
/// is a vertex with every original variable on its lower bound.
fn phase_one(p: &QpProblem) -> (QpProblem, Start) {
    let n = p.num_vars();
    let m_eq = p.eq.len();
    let m_in = p.ineq.len();
    let total = n + 2 * m_eq + m_in;
    let mut q = QpProblem {
        quad: vec![0.0; total],
        lin: vec![0.0; total],
        lower: vec![0.0; total],
        upper: vec![f64::INFINITY; total],
        eq: Vec::with_capacity(m_eq),
        ineq: Vec::with_capacity(m_in),
    };
    q.lower[..n].copy_from_slice(&p.lower);
    q.upper[..n].copy_from_slice(&p.upper);
    for v in q.lin[n..].iter_mut() {
        *v = 1.0;
    }
    let x0: Vec<f64> = p.lower.clone();
    let mut x = vec![0.0; total];
    x[..n].copy_from_slice(&x0);
    let mut bound = vec![Bound::Lower; total];
    let mut working = Vec::new();
    for (i, row) in p.eq.iter().enumerate() {
        let mut coef = vec![0.0; total];
        coef[..n].copy_from_slice(&row.coef);
        let (tp, tm) = (n + 2 * i, n + 2 * i + 1);
        coef[tp] = 1.0;
        coef[tm] = -1.0;
        let r = row.rhs - row.dot(&x0);
        if r >= 0.0 {
            x[tp] = r;
            bound[tp] = Bound::Free;
        } else {
            x[tm] = -r;
            bound[tm] = Bound::Free;
        }
        q.eq.push(Row::new(coef, row.rhs));
    }
    for (i, row) in p.ineq.iter().enumerate() {
        let mut coef = vec![0.0; total];
        coef[..n].copy_from_slice(&row.coef);
        let s = n + 2 * m_eq + i;
        coef[s] = -1.0;
        let v = row.dot(&x0) - row.rhs;
        if v > 0.0 {
            x[s] = v;
            bound[s] = Bound::Free;
            working.push(i);
        }
        q.ineq.push(Row::new(coef, row.rhs));
    }
    (q, Start { x, bound, working })
}

struct Engine<'a> {
    p: &'a QpProblem,
    x: Vec<f64>,
    bound: Vec<Bound>,
    working: Vec<usize>,
    in_working: Vec<bool>,
    opts: QpOptions,
    iterations: usize,
}

enum Dropped {
    Bound(usize),
    Row(usize),
}

impl<'a> Engine<'a> {
    fn new(p: &'a QpProblem, x: Vec<f64>, bound: Vec<Bound>, working: Vec<usize>, opts: &QpOptions) -> Self {
        let mut in_working = vec![false; p.ineq.len()];
        for &i in &working {
            in_working[i] = true;
        }
        Engine { p, x, bound, working, in_working, opts: *opts, iterations: 0 }
    }

    /// Iterates to a KKT point and returns the multipliers of the equality
    /// rows followed by those of the working inequality rows.
    fn run(&mut self) -> Result<Vec<f64>, QpError> {
        let n = self.p.num_vars();
        let max_iter = self.opts.max_iter.unwrap_or(50 * (n + self.p.eq.len() + self.p.ineq.len()) + 500);
        let mut skip: Option<Dropped> = None;
        let mut degenerate_run = 0usize;
        // set after an unblocked full step: x is then the working-set minimiser
        // and any remaining step is round-off
        let mut at_minimiser = false;
        loop {
            if self.iterations >= max_iter {
                return Err(QpError::IterationLimit(max_iter));
            }
            self.iterations += 1;
            let free: Vec<usize> = (0..n).filter(|&j| self.bound[j] == Bound::Free).collect();
            let fq: Vec<usize> = free.iter().copied().filter(|&j| self.p.quad[j] > 0.0).collect();
            let fl: Vec<usize> = free.iter().copied().filter(|&j| self.p.quad[j] == 0.0).collect();
            let rows = self.active_rows();
            let k = rows.len();
            let g: Vec<f64> = (0..n).map(|j| self.p.quad[j] * self.x[j] + self.p.lin[j]).collect();
            let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));

            let c_l = DMatrix::from_fn(k, fl.len(), |i, j| rows[i].coef[fl[j]]);
            let c_q = DMatrix::from_fn(k, fq.len(), |i, j| rows[i].coef[fq[j]]);

            let mut step = vec![0.0; n];
            let mut ray = false;
            if !fl.is_empty() {
                let g_l = DVector::from_iterator(fl.len(), fl.iter().map(|&j| g[j]));
                let d = null_projection(&c_l, &g_l);
                let dn = d.amax();
                if dn > 1e-11 * (1.0 + gnorm) {
                    ray = true;
                    for (a, &j) in fl.iter().enumerate() {
                        step[j] = d[a] / dn;
                    }
                }
            }

            let mut lambda = DVector::zeros(k);
            if !ray {
                let (lam, p_q, p_l) = self.saddle(&c_q, &c_l, &fq, &fl, &g)?;
                lambda = lam;
                for (a, &j) in fq.iter().enumerate() {
                    step[j] = p_q[a];
                }
                for (a, &j) in fl.iter().enumerate() {
                    step[j] = p_l[a];
                }
            }

            let xnorm = self.x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let pnorm = step.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !ray && (at_minimiser || pnorm <= 1e-12 * (1.0 + xnorm)) {
                at_minimiser = false;
                // At the minimiser over the working set: test multiplier signs.
                let bland = degenerate_run > 2 * n + 10;
                match self.pick_drop(&rows, &lambda, &g, gnorm, bland) {
                    None => {
                        // Snap free variables into their boxes.
                        for j in 0..n {
                            self.x[j] = self.x[j].clamp(self.p.lower[j], self.p.upper[j]);
                        }
                        return Ok(lambda.iter().copied().collect());
                    }
                    Some(Dropped::Bound(j)) => {
                        self.bound[j] = Bound::Free;
                        skip = Some(Dropped::Bound(j));
                    }
                    Some(Dropped::Row(i)) => {
                        self.in_working[i] = false;
                        self.working.retain(|&w| w != i);
                        skip = Some(Dropped::Row(i));
                    }
                }
                continue;
            }

            // Ratio test.
            let mut alpha = if ray { f64::INFINITY } else { 1.0 };
            let mut blocking: Option<Dropped> = None;
            let ptol = 1e-13 * pnorm.max(1e-300);
            for &j in &free {
                let pj = step[j];
                if let Some(Dropped::Bound(s)) = skip {
                    // only the side it just left
                    let leaving_lower = self.x[j] <= self.p.lower[j];
                    if s == j && ((leaving_lower && pj < 0.0) || (!leaving_lower && pj > 0.0)) {
                        continue;
                    }
                }
                let a = if pj < -ptol {
                    (self.x[j] - self.p.lower[j]).max(0.0) / -pj
                } else if pj > ptol && self.p.upper[j].is_finite() {
                    (self.p.upper[j] - self.x[j]).max(0.0) / pj
                } else {
                    continue;
                };
                if a < alpha {
                    alpha = a;
                    blocking = Some(Dropped::Bound(j));
                }
            }
            for (i, row) in self.p.ineq.iter().enumerate() {
                if self.in_working[i] {
                    continue;
                }
                if let Some(Dropped::Row(s)) = skip {
                    if s == i {
                        continue;
                    }
                }
                let ap = row.dot(&step);
                let rn = row.coef.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if ap > 1e-12 * pnorm * rn.max(1e-300) {
                    let a = (row.rhs - row.dot(&self.x)).max(0.0) / ap;
                    if a < alpha {
                        alpha = a;
                        blocking = Some(Dropped::Row(i));
                    }
                }
            }
            skip = None;
            at_minimiser = !ray && blocking.is_none();
            if !alpha.is_finite() {
                return Err(QpError::Unbounded);
            }
            if alpha * pnorm <= 1e-14 * (1.0 + xnorm) {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for &j in &free {
                self.x[j] += alpha * step[j];
            }
            match blocking {
                Some(Dropped::Bound(j)) => {
                    if step[j] < 0.0 {
                        self.x[j] = self.p.lower[j];
                        self.bound[j] = Bound::Lower;
                    } else {
                        self.x[j] = self.p.upper[j];
                        self.bound[j] = Bound::Upper;
                    }
                }
                Some(Dropped::Row(i)) => {
                    self.in_working[i] = true;
                    self.working.push(i);
                }
                None => {}
            }
        }
    }

    fn active_rows(&self) -> Vec<&'a Row> {
        let p = self.p;
        p.eq.iter().chain(self.working.iter().map(|&i| &p.ineq[i])).collect()
    }

    /// Solves the equality-constrained step
    ///
    /// ```text
    ///   [ M     -C_l ] [lambda]   [ -C_q D^-1 g_q ]
    ///   [ C_l'    0  ] [ p_l  ] = [ -g_l          ]
    /// ```
    ///
    /// with `M = C_q D^-1 C_q'`, then recovers `p_q = -D^-1 (g_q + C_q' lambda)`.
    fn saddle(
        &self,
        c_q: &DMatrix<f64>,
        c_l: &DMatrix<f64>,
        fq: &[usize],
        fl: &[usize],
        g: &[f64],
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), QpError> {
        let k = c_q.nrows();
        let nl = fl.len();
        let dinv = DVector::from_iterator(fq.len(), fq.iter().map(|&j| 1.0 / self.p.quad[j]));
        let g_q = DVector::from_iterator(fq.len(), fq.iter().map(|&j| g[j]));
        let g_l = DVector::from_iterator(nl, fl.iter().map(|&j| g[j]));
        let dg = g_q.component_mul(&dinv);
        let size = k + nl;
        if size == 0 {
            return Ok((DVector::zeros(0), -dg, DVector::zeros(0)));
        }
        let mut s = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for a in 0..k {
            for b in 0..k {
                let mut v = 0.0;
                for c in 0..fq.len() {
                    v += c_q[(a, c)] * dinv[c] * c_q[(b, c)];
                }
                s[(a, b)] = v;
            }
            for c in 0..nl {
                s[(a, k + c)] = -c_l[(a, c)];
                s[(k + c, a)] = c_l[(a, c)];
            }
            let mut v = 0.0;
            for c in 0..fq.len() {
                v += c_q[(a, c)] * dg[c];
            }
            rhs[a] = -v;
        }
        for c in 0..nl {
            rhs[k + c] = -g_l[c];
        }
        let sol = solve_dense(s, &rhs)?;
        let lambda = sol.rows(0, k).into_owned();
        let p_l = sol.rows(k, nl).into_owned();
        let mut p_q = -(g_q + c_q.transpose() * &lambda);
        p_q.component_mul_assign(&dinv);
        Ok((lambda, p_q, p_l))
    }

    fn pick_drop(&self, rows: &[&Row], lambda: &DVector<f64>, g: &[f64], gnorm: f64, bland: bool) -> Option<Dropped> {
        let n = self.p.num_vars();
        let tol = self.opts.dual_tol * (1.0 + gnorm);
        let mut best: Option<(f64, Dropped)> = None;
        let consider = |viol: f64, d: Dropped, best: &mut Option<(f64, Dropped)>| {
            if viol > tol {
                let better = match best {
                    None => true,
                    Some((v, _)) => !bland && viol > *v,
                };
                if better {
                    *best = Some((viol, d));
                }
            }
        };
        for j in 0..n {
            if self.bound[j] == Bound::Free {
                continue;
            }
            let mut rc = g[j];
            for (i, row) in rows.iter().enumerate() {
                rc += lambda[i] * row.coef[j];
            }
            let viol = match self.bound[j] {
                Bound::Lower => -rc,
                Bound::Upper => rc,
                Bound::Free => unreachable!(),
            };
            if self.p.lower[j] == self.p.upper[j] {
                continue;
            }
            consider(viol, Dropped::Bound(j), &mut best);
        }
        let k_eq = self.p.eq.len();
        for (pos, &i) in self.working.iter().enumerate() {
            consider(-lambda[k_eq + pos], Dropped::Row(i), &mut best);
        }
        best.map(|(_, d)| d)
    }
}

/// Component of `g` orthogonal to the row space of `c`, negated: the steepest
/// descent direction inside `null(c)`.
fn null_projection(c: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if c.nrows() == 0 {
        return -g.clone();
    }
    let svd = c.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors");
    let smax = svd.singular_values.amax();
    let mut proj = g.clone();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-10 * smax.max(1e-300) {
            let v = v_t.row(i).transpose();
            let coef = v.dot(g);
            proj -= coef * v;
        }
    }
    -proj
}

fn solve_dense(s: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, QpError> {
    if let Some(lu) = s.clone().full_piv_lu().try_inverse() {
        let x = &lu * rhs;
        let resid = (&s * &x - rhs).amax();
        if resid <= 1e-9 * (1.0 + rhs.amax()) {
            return Ok(x);
        }
    }
    let svd = s.svd(true, true);
    let smax = svd.singular_values.amax();
    svd.solve(rhs, 1e-12 * smax.max(1e-300))
        .map_err(|e| QpError::LinearAlgebra(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lp(lin: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> QpProblem {
        let n = lin.len();
        QpProblem { quad: vec![0.0; n], lin, lower, upper, eq: vec![], ineq: vec![] }
    }

    #[test]
    fn merit_order_lp() {
        // three suppliers, demand 150
        let mut p = lp(vec![10.0, 20.0, 30.0], vec![0.0; 3], vec![100.0, 100.0, 100.0]);
        p.eq.push(Row::new(vec![1.0, 1.0, 1.0], 150.0));
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[1], 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[2], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, 2000.0, epsilon = 1e-8);
        assert!(s.duality_gap.abs() < 1e-8);
        // marginal price is the dual of the balance row
        assert_abs_diff_eq!(s.eq_duals[0], -20.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = lp(vec![1.0, 1.0], vec![0.0; 2], vec![10.0, 10.0]);
        p.eq.push(Row::new(vec![1.0, 1.0], 30.0));
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(s.objective.is_infinite());
        assert_abs_diff_eq!(s.infeasibility, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn equal_marginal_cost_qp() {
        // 0.5*2*x^2 + 0.5*4*y^2, x + y = 6 -> x = 4, y = 2
        let p = QpProblem {
            quad: vec![2.0, 4.0],
            lin: vec![0.0, 0.0],
            lower: vec![0.0, 0.0],
            upper: vec![10.0, 10.0],
            eq: vec![Row::new(vec![1.0, 1.0], 6.0)],
            ineq: vec![],
        };
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-10);
        assert!(s.duality_gap.abs() < 1e-9);
    }

    #[test]
    fn inequality_becomes_active() {
        // min (x-3)^2 + (y-3)^2 s.t. x + y <= 2
        let p = QpProblem {
            quad: vec![2.0, 2.0],
            lin: vec![-6.0, -6.0],
            lower: vec![-10.0, -10.0],
            upper: vec![10.0, 10.0],
            eq: vec![],
            ineq: vec![Row::new(vec![1.0, 1.0], 2.0)],
        };
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.ineq_duals[0], 4.0, epsilon = 1e-9);
        assert!(s.duality_gap.abs() < 1e-9);
    }

    #[test]
    fn mixed_linear_and_quadratic() {
        // linear supplier at 5 $/MW up to 40, quadratic 0.1x^2 + 1x; demand 60
        let p = QpProblem {
            quad: vec![0.0, 0.2],
            lin: vec![5.0, 1.0],
            lower: vec![0.0, 0.0],
            upper: vec![40.0, 100.0],
            eq: vec![Row::new(vec![1.0, 1.0], 60.0)],
            ineq: vec![],
        };
        let s = solve(&p).unwrap();
        // quadratic marginal 0.2y + 1 reaches 5 at y = 20, linear supplies the rest
        assert_abs_diff_eq!(s.x[1], 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.x[0], 40.0, epsilon = 1e-9);
        assert!(s.duality_gap.abs() < 1e-8);
    }

    #[test]
    fn degenerate_fixed_variable() {
        let mut p = lp(vec![1.0, 2.0], vec![3.0, 0.0], vec![3.0, 5.0]);
        p.eq.push(Row::new(vec![1.0, 1.0], 5.0));
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-9);
    }

    /// Single balance row: the optimum is where the common marginal price
    /// clears demand, found here by bisection on the price.
    fn clearing_oracle(quad: &[f64], lin: &[f64], cap: &[f64], demand: f64) -> f64 {
        let supply = |price: f64| -> f64 {
            (0..quad.len())
                .map(|j| {
                    if quad[j] > 0.0 {
                        ((price - lin[j]) / quad[j]).clamp(0.0, cap[j])
                    } else if price > lin[j] {
                        cap[j]
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let (mut lo, mut hi) = (-1.0, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if supply(mid) < demand {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // fill linear suppliers at the clearing price up to the residual
        let price = hi;
        let mut x: Vec<f64> = (0..quad.len())
            .map(|j| if quad[j] > 0.0 { ((price - lin[j]) / quad[j]).clamp(0.0, cap[j]) } else if lin[j] < price - 1e-9 { cap[j] } else { 0.0 })
            .collect();
        let mut left = demand - x.iter().sum::<f64>();
        for j in 0..quad.len() {
            if quad[j] == 0.0 && (lin[j] - price).abs() <= 1e-6 && left > 0.0 {
                let add = left.min(cap[j] - x[j]);
                x[j] += add;
                left -= add;
            }
        }
        (0..quad.len()).map(|j| 0.5 * quad[j] * x[j] * x[j] + lin[j] * x[j]).sum()
    }

    proptest::proptest! {
        #[test]
        fn matches_clearing_price_oracle(
            units in proptest::collection::vec((0u8..2, 0.01f64..2.0, 1.0f64..60.0, 5.0f64..100.0), 1..7),
            frac in 0.05f64..0.95,
        ) {
            let quad: Vec<f64> = units.iter().map(|u| if u.0 == 0 { 0.0 } else { u.1 }).collect();
            let lin: Vec<f64> = units.iter().map(|u| u.2.round()).collect();
            let cap: Vec<f64> = units.iter().map(|u| u.3).collect();
            let demand = frac * cap.iter().sum::<f64>();
            let n = quad.len();
            let p = QpProblem {
                quad: quad.clone(),
                lin: lin.clone(),
                lower: vec![0.0; n],
                upper: cap.clone(),
                eq: vec![Row::new(vec![1.0; n], demand)],
                ineq: vec![],
            };
            let s = solve(&p).unwrap();
            let expected = clearing_oracle(&quad, &lin, &cap, demand);
            proptest::prop_assert!((s.objective - expected).abs() <= 1e-6 * (1.0 + expected.abs()), "{} vs {}", s.objective, expected);
            proptest::prop_assert!(s.max_violation <= 1e-8);
            proptest::prop_assert!(s.duality_gap.abs() <= 1e-7 * (1.0 + expected.abs()));
        }
    }
}
