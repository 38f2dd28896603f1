//! Bounded revised simplex method.
//!
//! Every row `i` gets a logical variable `s_i` with `A x - s = 0`, so a row
//! sense becomes a bound on `s_i`. The primal method minimizes a composite
//! sum of infeasibilities until the basis is feasible and then the true
//! objective. A dual method is used when a warm-started basis stays dual
//! feasible after a bound change, which is the common case inside
//! branch-and-bound.

#![allow(clippy::needless_range_loop)]

use log::trace;

use crate::lu::Factor;
use crate::model::{LinearProgram, RowSense, Sense};
use crate::SolverError;

/// Tolerances and limits for a single LP solve.
#[derive(Debug, Clone)]
pub struct LpOptions {
    /// Largest accepted bound or row violation.
    pub feasibility_tol: f64,
    /// Largest accepted reduced cost of the wrong sign.
    pub optimality_tol: f64,
    /// Iteration cap; `None` derives one from the model size.
    pub max_iterations: Option<usize>,
    /// Number of column replacements between refactorizations.
    pub refactor_interval: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            optimality_tol: 1e-9,
            max_iterations: None,
            refactor_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`solve_lp`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value in the sense of the model. Meaningful when optimal.
    pub objective: f64,
    /// Primal values of the structural variables.
    pub x: Vec<f64>,
    /// Row multipliers `pi` with `c - A' pi` equal to the reduced costs.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// Objective of the dual solution implied by `duals`.
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Solves `lp` from a slack basis.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, SolverError> {
    solve_lp_with(lp, &LpOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &LpOptions) -> Result<LpSolution, SolverError> {
    let mut spx = Simplex::new(lp, opts.clone())?;
    let status = spx.solve()?;
    Ok(spx.solution(status))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarStatus {
    Basic,
    Lower,
    Upper,
    Free,
}

/// Snapshot of a basis for warm starts.
#[derive(Debug, Clone)]
pub(crate) struct Basis {
    status: Vec<VarStatus>,
    head: Vec<usize>,
}

const PIVOT_TOL: f64 = 1e-9;

pub(crate) struct Simplex {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    status: Vec<VarStatus>,
    head: Vec<usize>,
    pos_of: Vec<usize>,
    factor: Factor,
    opts: LpOptions,
    obj_sign: f64,
    iterations: usize,
    /// Value of `iterations` when the current solve started.
    solve_start: usize,
    needs_refactor: bool,
    /// Original bounds while the primal method works on widened ones.
    saved_bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Simplex {
    pub fn new(lp: &LinearProgram, opts: LpOptions) -> Result<Self, SolverError> {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let obj_sign = match lp.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cols = vec![Vec::new(); n];
        let mut cost = vec![0.0; n + m];
        let mut lo = vec![0.0; n + m];
        let mut up = vec![0.0; n + m];
        for (j, v) in lp.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || !v.objective.is_finite() {
                return Err(SolverError::InvalidModel(format!(
                    "variable {j} has a non-numeric bound or cost"
                )));
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(SolverError::InvalidModel(format!(
                    "variable {j} has an unusable infinite bound"
                )));
            }
            cost[j] = obj_sign * v.objective;
            lo[j] = v.lower;
            up[j] = v.upper;
        }
        for (i, row) in lp.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::InvalidModel(format!(
                    "row {i} has a non-finite right-hand side"
                )));
            }
            for &(j, a) in &row.coeffs {
                if !a.is_finite() {
                    return Err(SolverError::InvalidModel(format!(
                        "row {i} has a non-finite coefficient"
                    )));
                }
                cols[j].push((i, a));
            }
            let (l, u) = match row.sense {
                RowSense::Le => (f64::NEG_INFINITY, row.rhs),
                RowSense::Ge => (row.rhs, f64::INFINITY),
                RowSense::Eq => (row.rhs, row.rhs),
            };
            lo[n + i] = l;
            up[n + i] = u;
        }
        let mut spx = Simplex {
            n,
            m,
            cols,
            cost,
            lo,
            up,
            x: vec![0.0; n + m],
            status: vec![VarStatus::Lower; n + m],
            head: Vec::new(),
            pos_of: Vec::new(),
            factor: Factor::default(),
            opts,
            obj_sign,
            iterations: 0,
            solve_start: 0,
            needs_refactor: true,
            saved_bounds: None,
        };
        spx.slack_basis();
        Ok(spx)
    }

    pub fn num_structural(&self) -> usize {
        self.n
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Resets to the all-logical basis.
    pub fn slack_basis(&mut self) {
        for j in 0..self.n {
            self.snap_nonbasic(j);
        }
        self.head = (self.n..self.n + self.m).collect();
        self.pos_of = vec![usize::MAX; self.n + self.m];
        for (p, &j) in self.head.iter().enumerate() {
            self.status[j] = VarStatus::Basic;
            self.pos_of[j] = p;
        }
        self.needs_refactor = true;
    }

    pub fn basis(&self) -> Basis {
        Basis {
            status: self.status.clone(),
            head: self.head.clone(),
        }
    }

    pub fn set_basis(&mut self, basis: &Basis) {
        self.status.clone_from(&basis.status);
        self.head.clone_from(&basis.head);
        self.pos_of.iter_mut().for_each(|p| *p = usize::MAX);
        for (p, &j) in self.head.iter().enumerate() {
            self.pos_of[j] = p;
        }
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic {
                self.place_nonbasic(j);
            }
        }
        self.needs_refactor = true;
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.up[j])
    }

    /// Changes the bounds of structural variable `j`.
    pub fn set_bounds(&mut self, j: usize, lo: f64, up: f64) {
        if self.lo[j] == lo && self.up[j] == up {
            return;
        }
        self.lo[j] = lo;
        self.up[j] = up;
        if self.status[j] != VarStatus::Basic {
            self.place_nonbasic(j);
            self.needs_refactor = true;
        }
    }

    /// Keeps the nonbasic status of `j` when its bound still exists.
    fn place_nonbasic(&mut self, j: usize) {
        let (l, u) = (self.lo[j], self.up[j]);
        match self.status[j] {
            VarStatus::Lower if l.is_finite() => self.x[j] = l,
            VarStatus::Upper if u.is_finite() => self.x[j] = u,
            VarStatus::Free if !l.is_finite() && !u.is_finite() => self.x[j] = 0.0,
            _ => self.snap_nonbasic(j),
        }
    }

    fn snap_nonbasic(&mut self, j: usize) {
        let (l, u) = (self.lo[j], self.up[j]);
        let cur = self.x[j];
        let (st, v) = match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                if (cur - u).abs() < (cur - l).abs() {
                    (VarStatus::Upper, u)
                } else {
                    (VarStatus::Lower, l)
                }
            }
            (true, false) => (VarStatus::Lower, l),
            (false, true) => (VarStatus::Upper, u),
            (false, false) => (VarStatus::Free, 0.0),
        };
        self.status[j] = st;
        self.x[j] = v;
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(i, a)| a * y[i]).sum()
        } else {
            -y[j - self.n]
        }
    }

    fn scatter_col(&self, j: usize, dense: &mut [f64], scale: f64) {
        if j < self.n {
            for &(i, a) in &self.cols[j] {
                dense[i] += scale * a;
            }
        } else {
            dense[j - self.n] -= scale;
        }
    }

    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            self.cols[j].clone()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    fn refactor(&mut self) -> Result<(), SolverError> {
        let cols: Vec<Vec<(usize, f64)>> = self.head.iter().map(|&j| self.column(j)).collect();
        self.factor = match Factor::new(self.m, &cols) {
            Ok(f) => f,
            Err(sing) => {
                trace!(
                    "singular basis, replacing {} columns by logicals",
                    sing.positions.len()
                );
                for (&pos, &row) in sing.positions.iter().zip(&sing.rows) {
                    let old = self.head[pos];
                    let new = self.n + row;
                    self.pos_of[old] = usize::MAX;
                    self.status[old] = VarStatus::Lower;
                    self.snap_nonbasic(old);
                    self.head[pos] = new;
                    self.pos_of[new] = pos;
                    self.status[new] = VarStatus::Basic;
                }
                let cols: Vec<Vec<(usize, f64)>> =
                    self.head.iter().map(|&j| self.column(j)).collect();
                Factor::new(self.m, &cols).map_err(|_| {
                    SolverError::NumericalFailure("basis repair left a singular matrix".into())
                })?
            }
        };
        self.needs_refactor = false;
        self.recompute_basic();
        Ok(())
    }

    /// Refactor after `refactor_interval` updates, or earlier once the eta
    /// file holds more nonzeros than twice the fresh factors.
    fn eta_file_full(&self) -> bool {
        let etas = self.factor.num_etas();
        etas >= self.opts.refactor_interval
            || (etas >= 16 && self.factor.eta_nonzeros() > 4 * (self.factor.lu_nonzeros() + self.m))
    }

    fn recompute_basic(&mut self) {
        let mut rhs = self.factor.scratch();
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic && self.x[j] != 0.0 {
                self.scatter_col(j, &mut rhs, -self.x[j]);
            }
        }
        let mut xb = vec![0.0; self.m];
        self.factor.ftran(&mut rhs, &mut xb);
        self.factor.return_scratch(rhs);
        for (p, &j) in self.head.iter().enumerate() {
            self.x[j] = xb[p];
        }
    }

    fn ftran_col(&mut self, j: usize) -> Vec<f64> {
        let mut rhs = self.factor.scratch();
        self.scatter_col(j, &mut rhs, 1.0);
        let mut out = vec![0.0; self.m];
        self.factor.ftran(&mut rhs, &mut out);
        self.factor.return_scratch(rhs);
        out
    }

    fn btran(&mut self, mut c: Vec<f64>) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        self.factor.btran(&mut c, &mut y);
        y
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let tol = self.opts.feasibility_tol;
        if self.x[j] < self.lo[j] - tol {
            self.lo[j] - self.x[j]
        } else if self.x[j] > self.up[j] + tol {
            self.x[j] - self.up[j]
        } else {
            0.0
        }
    }

    fn is_primal_feasible(&self) -> bool {
        self.head.iter().all(|&j| self.infeasibility(j) == 0.0)
    }

    fn iteration_cap(&self) -> usize {
        self.opts
            .max_iterations
            .unwrap_or(20_000 + 50 * (self.n + self.m))
    }

    fn phase_costs(&self, phase1: bool) -> Vec<f64> {
        self.head
            .iter()
            .map(|&j| {
                if phase1 {
                    let tol = self.opts.feasibility_tol;
                    if self.x[j] < self.lo[j] - tol {
                        -1.0
                    } else if self.x[j] > self.up[j] + tol {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.cost[j]
                }
            })
            .collect()
    }

    fn nonbasic_cost(&self, j: usize, phase1: bool) -> f64 {
        if phase1 {
            0.0
        } else {
            self.cost[j]
        }
    }

    /// Solves from the current basis.
    pub fn solve(&mut self) -> Result<LpStatus, SolverError> {
        self.solve_start = self.iterations;
        if (0..self.n + self.m).any(|j| self.lo[j] > self.up[j] + self.opts.feasibility_tol) {
            return Ok(LpStatus::Infeasible);
        }
        if self.needs_refactor {
            self.refactor()?;
        }
        if !self.is_primal_feasible() && self.is_dual_feasible() {
            if let Some(status) = self.dual()? {
                return Ok(status);
            }
        }
        self.primal()
    }

    fn is_dual_feasible(&mut self) -> bool {
        let cb = self.phase_costs(false);
        let y = self.btran(cb);
        let tol = self.opts.optimality_tol.max(1e-7);
        (0..self.n + self.m).all(|j| {
            let d = self.cost[j] - self.col_dot(j, &y);
            match self.status[j] {
                VarStatus::Basic => true,
                _ if self.lo[j] == self.up[j] => true,
                VarStatus::Lower => d >= -tol,
                VarStatus::Upper => d <= tol,
                VarStatus::Free => d.abs() <= tol,
            }
        })
    }

    /// Primal simplex. A long run of degenerate pivots triggers a small
    /// widening of the bounds of the basic variables; the original bounds are
    /// restored once the widened problem is solved and the basis is cleaned
    /// up by the dual and then the primal method.
    fn primal(&mut self) -> Result<LpStatus, SolverError> {
        let status = self.primal_loop(true);
        let Some((lo, up)) = self.saved_bounds.take() else {
            return status;
        };
        self.lo = lo;
        self.up = up;
        let status = status?;
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic {
                self.place_nonbasic(j);
            }
        }
        self.recompute_basic();
        if status != LpStatus::Optimal {
            return Ok(status);
        }
        if !self.is_primal_feasible() {
            if let Some(status) = self.dual_iterations()? {
                return Ok(status);
            }
        }
        self.primal_loop(false)
    }

    fn perturb_bounds(&mut self) {
        self.saved_bounds = Some((self.lo.clone(), self.up.clone()));
        for &j in &self.head {
            let (l, u) = (self.lo[j], self.up[j]);
            if l == u {
                continue;
            }
            let r = ((j as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0;
            if l.is_finite() {
                self.lo[j] = l - 1e-6 * (1.0 + r) * (1.0 + l.abs());
            }
            if u.is_finite() {
                self.up[j] = u + 1e-6 * (1.0 + r) * (1.0 + u.abs());
            }
        }
    }

    fn primal_loop(&mut self, allow_perturb: bool) -> Result<LpStatus, SolverError> {
        let cap = self.iteration_cap();
        let total = self.n + self.m;
        let degenerate_limit = 2 * total;
        let mut degenerate_run = 0usize;
        let mut confirmed_optimal = false;
        // Devex reference weights for pricing.
        let mut devex = vec![1.0; total];
        loop {
            if self.iterations - self.solve_start >= cap {
                return Err(SolverError::NumericalFailure(format!(
                    "primal simplex hit the iteration cap of {cap}"
                )));
            }
            if self.eta_file_full() {
                self.refactor()?;
            }
            let phase1 = !self.is_primal_feasible();
            let cb = self.phase_costs(phase1);
            let y = self.btran(cb);

            let bland = degenerate_run > degenerate_limit;
            let dtol = self.opts.optimality_tol;
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..total {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.up[j] {
                    continue;
                }
                let d = self.nonbasic_cost(j, phase1) - self.col_dot(j, &y);
                let dir = match st {
                    VarStatus::Lower if d < -dtol => 1.0,
                    VarStatus::Upper if d > dtol => -1.0,
                    VarStatus::Free if d.abs() > dtol => -d.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                let score = d * d / devex[j];
                if score > best {
                    best = score;
                    entering = Some((j, dir));
                }
            }

            let Some((q, dir)) = entering else {
                // Confirm on a fresh factorization before declaring a result.
                if !confirmed_optimal && self.factor.num_etas() > 0 {
                    self.refactor()?;
                    confirmed_optimal = true;
                    continue;
                }
                return Ok(if phase1 {
                    LpStatus::Infeasible
                } else {
                    LpStatus::Optimal
                });
            };
            confirmed_optimal = false;

            let alpha = self.ftran_col(q);
            let step = self.primal_ratio(&alpha, q, dir, phase1);
            self.iterations += 1;
            match step {
                Step::Unbounded => {
                    if phase1 {
                        self.refactor()?;
                        degenerate_run = degenerate_limit + 1;
                        continue;
                    }
                    return Ok(LpStatus::Unbounded);
                }
                Step::Flip(theta) => {
                    self.apply_move(&alpha, q, dir * theta);
                    self.status[q] = if self.status[q] == VarStatus::Lower {
                        VarStatus::Upper
                    } else {
                        VarStatus::Lower
                    };
                    self.x[q] = if self.status[q] == VarStatus::Lower {
                        self.lo[q]
                    } else {
                        self.up[q]
                    };
                    degenerate_run = 0;
                }
                Step::Pivot {
                    theta,
                    pos,
                    to_upper,
                } => {
                    if theta <= 1e-12 {
                        degenerate_run += 1;
                        if allow_perturb && degenerate_run == 50 && self.saved_bounds.is_none() {
                            self.perturb_bounds();
                        }
                    } else {
                        degenerate_run = 0;
                    }
                    self.update_devex(&mut devex, q, pos, alpha[pos]);
                    self.apply_move(&alpha, q, dir * theta);
                    self.pivot(q, pos, to_upper, &alpha);
                }
            }
        }
    }

    fn update_devex(&mut self, devex: &mut [f64], q: usize, pos: usize, pivot: f64) {
        let mut e = vec![0.0; self.m];
        e[pos] = 1.0;
        let rho = self.btran(e);
        let wq = devex[q];
        let mut largest = 0.0f64;
        for j in 0..self.n + self.m {
            if self.status[j] == VarStatus::Basic || j == q {
                continue;
            }
            let a = self.col_dot(j, &rho);
            if a != 0.0 {
                let r = a / pivot;
                devex[j] = devex[j].max(r * r * wq);
                largest = largest.max(devex[j]);
            }
        }
        devex[self.head[pos]] = (wq / (pivot * pivot)).max(1.0);
        if largest > 1e6 {
            devex.iter_mut().for_each(|w| *w = 1.0);
        }
    }

    fn apply_move(&mut self, alpha: &[f64], q: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.x[q] += delta;
        for (p, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let j = self.head[p];
                self.x[j] -= delta * a;
            }
        }
    }

    fn pivot(&mut self, q: usize, pos: usize, to_upper: bool, alpha: &[f64]) {
        let leaving = self.head[pos];
        self.status[leaving] = if to_upper {
            VarStatus::Upper
        } else {
            VarStatus::Lower
        };
        self.x[leaving] = if to_upper {
            self.up[leaving]
        } else {
            self.lo[leaving]
        };
        self.pos_of[leaving] = usize::MAX;
        self.head[pos] = q;
        self.pos_of[q] = pos;
        self.status[q] = VarStatus::Basic;
        self.factor.push_eta(pos, alpha);
    }

    fn primal_ratio(&self, alpha: &[f64], q: usize, dir: f64, phase1: bool) -> Step {
        let tol = self.opts.feasibility_tol;
        // Harris pass one: largest step with relaxed bounds.
        let mut theta_max = f64::INFINITY;
        let mut ratios: Vec<(usize, f64, bool)> = Vec::new();
        for (p, &a) in alpha.iter().enumerate() {
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let j = self.head[p];
            let rate = -dir * a;
            let (x, l, u) = (self.x[j], self.lo[j], self.up[j]);
            let hit = if phase1 && x < l - tol {
                (rate > 0.0).then(|| ((l - x) / rate, (l + tol - x) / rate, false))
            } else if phase1 && x > u + tol {
                (rate < 0.0).then(|| ((x - u) / -rate, (x - u + tol) / -rate, true))
            } else if rate < 0.0 && l.is_finite() {
                Some(((x - l) / -rate, (x - l + tol) / -rate, false))
            } else if rate > 0.0 && u.is_finite() {
                Some(((u - x) / rate, (u + tol - x) / rate, true))
            } else {
                None
            };
            if let Some((exact, relaxed, to_upper)) = hit {
                theta_max = theta_max.min(relaxed);
                ratios.push((p, exact, to_upper));
            }
        }
        let flip = self.up[q] - self.lo[q];
        if flip.is_finite() && flip <= theta_max {
            return Step::Flip(flip);
        }
        if ratios.is_empty() {
            return Step::Unbounded;
        }
        let mut chosen: Option<(usize, f64, bool)> = None;
        let mut best = 0.0;
        for &(p, exact, to_upper) in &ratios {
            if exact <= theta_max && alpha[p].abs() > best {
                best = alpha[p].abs();
                chosen = Some((p, exact, to_upper));
            }
        }
        let (pos, theta, to_upper) = chosen.unwrap_or(ratios[0]);
        Step::Pivot {
            theta: theta.max(0.0),
            pos,
            to_upper,
        }
    }

    /// Dual simplex from a dual feasible basis. Returns `None` once the basis
    /// is primal feasible. Nonbasic costs are shifted by small amounts in the
    /// dual feasible direction while it runs and restored afterwards, so that
    /// the primal method may need a few cleanup iterations.
    fn dual(&mut self) -> Result<Option<LpStatus>, SolverError> {
        let saved = self.cost.clone();
        for j in 0..self.n + self.m {
            if self.lo[j] == self.up[j] {
                continue;
            }
            let shift = 1e-5
                * (1.0 + ((j as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0)
                * (1.0 + saved[j].abs());
            match self.status[j] {
                VarStatus::Lower => self.cost[j] += shift,
                VarStatus::Upper => self.cost[j] -= shift,
                _ => {}
            }
        }
        let out = self.dual_iterations();
        self.cost = saved;
        out
    }

    /// Reduced costs of the nonbasic variables, zero for basic ones.
    fn reduced_costs(&mut self) -> Vec<f64> {
        let cb = self.phase_costs(false);
        let y = self.btran(cb);
        (0..self.n + self.m)
            .map(|j| {
                if self.status[j] == VarStatus::Basic {
                    0.0
                } else {
                    self.cost[j] - self.col_dot(j, &y)
                }
            })
            .collect()
    }

    fn dual_iterations(&mut self) -> Result<Option<LpStatus>, SolverError> {
        let cap = self.iteration_cap();
        let total = self.n + self.m;
        let dtol = self.opts.optimality_tol.max(1e-9);
        let mut weights = vec![1.0; self.m];
        let mut d = self.reduced_costs();
        let mut row: Vec<(usize, f64)> = Vec::new();
        loop {
            if self.iterations - self.solve_start >= cap {
                return Err(SolverError::NumericalFailure(format!(
                    "dual simplex hit the iteration cap of {cap}"
                )));
            }
            if self.eta_file_full() {
                self.refactor()?;
                d = self.reduced_costs();
            }
            // Leaving row: dual steepest edge pricing.
            let mut leave: Option<(usize, f64)> = None;
            for (p, &j) in self.head.iter().enumerate() {
                let inf = self.infeasibility(j);
                if inf > 0.0 {
                    let score = inf * inf / weights[p];
                    if score > leave.map_or(0.0, |l| l.1) {
                        leave = Some((p, score));
                    }
                }
            }
            let Some((p, _)) = leave else {
                return Ok(None);
            };
            let jp = self.head[p];
            let to_lower = self.x[jp] < self.lo[jp];
            let target = if to_lower { self.lo[jp] } else { self.up[jp] };

            let mut e = vec![0.0; self.m];
            e[p] = 1.0;
            let rho = self.btran(e);

            let mut cands: Vec<(usize, f64, f64)> = Vec::new();
            row.clear();
            for j in 0..total {
                let st = self.status[j];
                if st == VarStatus::Basic {
                    continue;
                }
                let a = self.col_dot(j, &rho);
                if a != 0.0 {
                    row.push((j, a));
                }
                if a.abs() < PIVOT_TOL || self.lo[j] == self.up[j] {
                    continue;
                }
                let d = d[j];
                // Sign of the admissible change of x_j that moves x_p towards target.
                let eligible = match st {
                    VarStatus::Lower => (a < 0.0) == to_lower,
                    VarStatus::Upper => (a > 0.0) == to_lower,
                    VarStatus::Free => true,
                    VarStatus::Basic => false,
                };
                if !eligible {
                    continue;
                }
                let dabs = match st {
                    VarStatus::Lower => d.max(0.0),
                    VarStatus::Upper => (-d).max(0.0),
                    _ => d.abs(),
                };
                cands.push((j, dabs / a.abs(), a));
            }
            // Bound flipping: boxed candidates are passed over by moving them
            // to their opposite bound while the leaving row stays infeasible.
            cands.sort_by(|a, b| a.1.total_cmp(&b.1));
            let mut slope = (self.x[jp] - target).abs();
            let mut first = 0;
            while first < cands.len() {
                let (j, _, a) = cands[first];
                let range = self.up[j] - self.lo[j];
                let drop = a.abs() * range;
                if !range.is_finite() || slope - drop <= self.opts.feasibility_tol {
                    break;
                }
                slope -= drop;
                first += 1;
            }
            if first == cands.len() {
                return Ok(Some(LpStatus::Infeasible));
            }
            let (flips, rest) = cands.split_at(first);
            let t_max = rest
                .iter()
                .fold(f64::INFINITY, |t, c| t.min(c.1 + dtol / c.2.abs()));
            let mut chosen = rest[0];
            let mut best = 0.0;
            for &c in rest {
                if c.1 > t_max {
                    break;
                }
                if c.2.abs() > best {
                    best = c.2.abs();
                    chosen = c;
                }
            }
            let q = chosen.0;
            let alpha = self.ftran_col(q);
            let apq = alpha[p];
            if apq.abs() < PIVOT_TOL || (apq - chosen.2).abs() > 1e-6 * (1.0 + apq.abs()) {
                if self.factor.num_etas() == 0 {
                    return Err(SolverError::NumericalFailure(
                        "unstable dual simplex pivot".into(),
                    ));
                }
                self.refactor()?;
                d = self.reduced_costs();
                continue;
            }
            self.iterations += 1;
            let step = d[q] / chosen.2;
            for &(j, a) in &row {
                d[j] -= step * a;
            }
            d[q] = 0.0;
            d[jp] = -step;
            if !flips.is_empty() {
                let mut rhs = self.factor.scratch();
                for &(j, _, _) in flips {
                    let (from, to) = if self.status[j] == VarStatus::Lower {
                        self.status[j] = VarStatus::Upper;
                        (self.lo[j], self.up[j])
                    } else {
                        self.status[j] = VarStatus::Lower;
                        (self.up[j], self.lo[j])
                    };
                    self.x[j] = to;
                    self.scatter_col(j, &mut rhs, to - from);
                }
                let mut dx = vec![0.0; self.m];
                self.factor.ftran(&mut rhs, &mut dx);
                self.factor.return_scratch(rhs);
                for (i, &d) in dx.iter().enumerate() {
                    self.x[self.head[i]] -= d;
                }
            }
            let mut rhs = rho.clone();
            let mut tau = vec![0.0; self.m];
            self.factor.ftran(&mut rhs, &mut tau);
            let wp = weights[p];
            for (i, w) in weights.iter_mut().enumerate() {
                if i == p || alpha[i] == 0.0 {
                    continue;
                }
                let r = alpha[i] / apq;
                *w = (*w - 2.0 * r * tau[i] + r * r * wp).max(r * r).max(1e-8);
            }
            weights[p] = (wp / (apq * apq)).max(1e-8);
            let delta = (self.x[jp] - target) / apq;
            self.apply_move(&alpha, q, delta);
            self.pivot(q, p, !to_lower, &alpha);
        }
    }

    pub fn objective(&self) -> f64 {
        let internal: f64 = (0..self.n).map(|j| self.cost[j] * self.x[j]).sum();
        self.obj_sign * internal
    }

    pub fn primal_values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn solution(&mut self, status: LpStatus) -> LpSolution {
        let cb = self.phase_costs(false);
        let y = self.btran(cb);
        let mut dual_obj = 0.0;
        let mut reduced = vec![0.0; self.n];
        for j in 0..self.n + self.m {
            let d = if self.status[j] == VarStatus::Basic {
                0.0
            } else {
                self.cost[j] - self.col_dot(j, &y)
            };
            if j < self.n {
                reduced[j] = self.obj_sign * d;
            }
            let b = if d > 0.0 {
                self.lo[j]
            } else if d < 0.0 {
                self.up[j]
            } else {
                0.0
            };
            if d != 0.0 {
                dual_obj += d * b;
            }
        }
        LpSolution {
            status,
            objective: self.objective(),
            x: self.x[..self.n].to_vec(),
            duals: y.iter().map(|v| self.obj_sign * v).collect(),
            reduced_costs: reduced,
            dual_objective: self.obj_sign * dual_obj,
            iterations: self.iterations,
        }
    }
}

enum Step {
    Unbounded,
    Flip(f64),
    Pivot {
        theta: f64,
        pos: usize,
        to_upper: bool,
    },
}
