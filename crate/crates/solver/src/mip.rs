//! Best-bound branch-and-bound over the simplex relaxation. Until a first
//! integer solution is known the search plunges depth first, following the
//! child on the side the branching value rounds to.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, trace};

use crate::model::{MixedIntegerProgram, Sense, VarId};
use crate::simplex::{Basis, LpOptions, LpStatus, Simplex};
use crate::SolverError;

#[derive(Debug, Clone)]
pub struct MipOptions {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<usize>,
    /// Absolute optimality gap at which the search stops.
    pub gap_abs: f64,
    /// Relative optimality gap, measured against the incumbent.
    pub gap_rel: f64,
    pub integrality_tol: f64,
    /// Reoptimize child nodes from the parent basis with the dual simplex.
    pub warm_start: bool,
    pub lp: LpOptions,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
            gap_abs: 1e-6,
            gap_rel: 1e-9,
            integrality_tol: 1e-6,
            warm_start: true,
            lp: LpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MipSolution {
    pub status: MipStatus,
    /// Best integer solution found, if any.
    pub x: Option<Vec<f64>>,
    /// Objective of `x` in the sense of the model.
    pub objective: Option<f64>,
    /// Best proven bound in the sense of the model.
    pub bound: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub elapsed: Duration,
}

impl MipSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == MipStatus::Optimal
    }
}

struct Node {
    /// Bound of the parent relaxation in minimization form.
    bound: f64,
    depth: usize,
    id: usize,
    changes: Vec<(usize, f64, f64)>,
    basis: Option<Arc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: the best node compares greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

pub fn solve_mip(mip: &MixedIntegerProgram) -> Result<MipSolution, SolverError> {
    solve_mip_with(mip, &MipOptions::default())
}

pub fn solve_mip_with(
    mip: &MixedIntegerProgram,
    opts: &MipOptions,
) -> Result<MipSolution, SolverError> {
    solve_mip_with_hint(mip, opts, &[])
}

/// Node budget of the search that completes a hint.
const HINT_NODES: usize = 200;

/// Like [`solve_mip_with`], but first fixes the variables in `hint` to the
/// given values and runs a short search on the restricted model. An integer
/// solution found there becomes the starting incumbent.
pub fn solve_mip_with_hint(
    mip: &MixedIntegerProgram,
    opts: &MipOptions,
    hint: &[(VarId, f64)],
) -> Result<MipSolution, SolverError> {
    let start = Instant::now();
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    if !hint.is_empty() {
        let mut restricted = mip.clone();
        for &(j, v) in hint {
            restricted.lp.vars[j].lower = v;
            restricted.lp.vars[j].upper = v;
        }
        let sub_opts = MipOptions {
            node_limit: Some(opts.node_limit.map_or(HINT_NODES, |l| l.min(HINT_NODES))),
            ..opts.clone()
        };
        match solve_mip_with(&restricted, &sub_opts) {
            Ok(sol) => {
                nodes += sol.nodes;
                if let (Some(x), Some(obj)) = (sol.x, sol.objective) {
                    debug!("hint completed with objective {obj:.9}");
                    incumbent = Some((obj, x));
                }
            }
            Err(e) => debug!("hint search failed: {e}"),
        }
    }

    let sign = match mip.lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut spx = Simplex::new(&mip.lp, opts.lp.clone())?;
    let n = spx.num_structural();
    let ints: Vec<usize> = (0..n).filter(|&j| mip.integer[j]).collect();
    let mut root_bounds = Vec::with_capacity(ints.len());
    for &j in &ints {
        let (l, u) = spx.bounds(j);
        let l = if l.is_finite() {
            (l - opts.integrality_tol).ceil()
        } else {
            l
        };
        let u = if u.is_finite() {
            (u + opts.integrality_tol).floor()
        } else {
            u
        };
        root_bounds.push((j, l, u));
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: 0,
        changes: Vec::new(),
        basis: None,
    });
    let mut next_id = 1;
    let mut incumbent = incumbent.map(|(obj, x)| (sign * obj, x));
    let mut status = None;

    let gap = |inc: f64| opts.gap_abs + opts.gap_rel * inc.abs();

    let mut plunge: Option<Node> = None;
    loop {
        let (node, plunging) = match plunge.take() {
            Some(n) => (n, true),
            None => match heap.pop() {
                Some(n) => (n, false),
                None => break,
            },
        };
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc - gap(*inc) {
                if plunging {
                    continue;
                }
                // Best-bound order: every remaining node is at least as bad.
                heap.clear();
                break;
            }
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() >= t) {
            heap.push(node);
            status = Some(MipStatus::TimeLimit);
            break;
        }
        if opts.node_limit.is_some_and(|l| nodes >= l) {
            heap.push(node);
            status = Some(MipStatus::NodeLimit);
            break;
        }
        nodes += 1;

        for &(j, l, u) in &root_bounds {
            spx.set_bounds(j, l, u);
        }
        for &(j, l, u) in &node.changes {
            spx.set_bounds(j, l, u);
        }
        let lp_status = match (&node.basis, opts.warm_start) {
            (Some(b), true) => {
                spx.set_basis(b);
                match spx.solve() {
                    Ok(s) => s,
                    Err(e) => {
                        debug!("warm start failed at node {}: {e}; resolving cold", node.id);
                        spx.slack_basis();
                        spx.solve()?
                    }
                }
            }
            _ => {
                spx.slack_basis();
                spx.solve()?
            }
        };
        match lp_status {
            LpStatus::Infeasible => {
                trace!("node {} depth {}: infeasible", node.id, node.depth);
                continue;
            }
            LpStatus::Unbounded => {
                return Err(SolverError::UnboundedRelaxation);
            }
            LpStatus::Optimal => {}
        }
        let obj = sign * spx.objective();
        let bound = obj.max(node.bound);
        trace!(
            "node {} depth {}: relaxation {:.9} ({} open)",
            node.id,
            node.depth,
            sign * obj,
            heap.len()
        );
        if let Some((inc, _)) = &incumbent {
            if bound >= inc - gap(*inc) {
                continue;
            }
        }
        let x = spx.primal_values();
        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = opts.integrality_tol;
        for &j in &ints {
            let v = x[j];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > best_frac {
                best_frac = frac;
                branch = Some((j, v));
            }
        }
        match branch {
            None => {
                let mut sol = x.to_vec();
                for &j in &ints {
                    sol[j] = sol[j].round();
                }
                let val = sign * mip.lp.objective_value(&sol);
                trace!("node {}: new incumbent {:.9}", node.id, sign * val);
                if incumbent.as_ref().is_none_or(|(inc, _)| val < *inc) {
                    incumbent = Some((val, sol));
                }
            }
            Some((j, v)) => {
                let basis = opts.warm_start.then(|| Arc::new(spx.basis()));
                let (l, u) = spx.bounds(j);
                let mut down = node.changes.clone();
                down.push((j, l, v.floor()));
                let mut upc = node.changes;
                upc.push((j, v.ceil(), u));
                let up_first = v - v.floor() >= 0.5;
                for (changes, preferred) in [(down, !up_first), (upc, up_first)] {
                    let child = Node {
                        bound,
                        depth: node.depth + 1,
                        id: next_id,
                        changes,
                        basis: basis.clone(),
                    };
                    next_id += 1;
                    if preferred && incumbent.is_none() {
                        plunge = Some(child);
                    } else {
                        heap.push(child);
                    }
                }
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let status = status.unwrap_or(if incumbent.is_some() {
        MipStatus::Optimal
    } else {
        MipStatus::Infeasible
    });
    let bound = match (&incumbent, status) {
        (Some((inc, _)), MipStatus::Optimal) => *inc,
        (Some((inc, _)), _) => open_bound.min(*inc),
        (None, MipStatus::Infeasible) => f64::INFINITY,
        (None, _) => open_bound,
    };
    debug!("branch-and-bound finished: {status:?} after {nodes} nodes");
    Ok(MipSolution {
        status,
        objective: incumbent.as_ref().map(|(v, _)| sign * v),
        x: incumbent.map(|(_, x)| x),
        bound: sign * bound,
        nodes,
        lp_iterations: spx.iterations(),
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RowSense;

    #[test]
    fn knapsack() {
        let values = [15.0, 10.0, 9.0, 5.0, 8.0, 12.0, 7.0, 3.0];
        let weights = [1.0, 5.0, 3.0, 4.0, 2.0, 6.0, 3.0, 1.0];
        let mut mip = MixedIntegerProgram::new(Sense::Maximize);
        let xs: Vec<usize> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| mip.add_binary(format!("x{i}"), v))
            .collect();
        mip.add_row(
            "cap",
            xs.iter().zip(weights).map(|(&x, w)| (x, w)),
            RowSense::Le,
            10.0,
        );
        let sol = solve_mip(&mip).unwrap();
        // Brute force.
        let mut best = 0.0f64;
        for mask in 0u32..256 {
            let (mut w, mut v) = (0.0, 0.0);
            for i in 0..8 {
                if mask >> i & 1 == 1 {
                    w += weights[i];
                    v += values[i];
                }
            }
            if w <= 10.0 {
                best = best.max(v);
            }
        }
        assert_eq!(sol.status, MipStatus::Optimal);
        assert!((sol.objective.unwrap() - best).abs() < 1e-9);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut mip = MixedIntegerProgram::new(Sense::Minimize);
        let x = mip.add_integer("x", 0.0, 10.0, 1.0);
        mip.add_row("a", [(x, 2.0)], RowSense::Eq, 3.0);
        let sol = solve_mip(&mip).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
        assert!(sol.x.is_none());
    }
}
