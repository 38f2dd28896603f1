//! Optimization models: the static robust path MIP, the max-min lower-bound
//! LP, the multistage MIP over attacker response vectors and the posterior
//! worst-case loss LP.

use std::time::{Duration, Instant};

use drsp_solver::{
    solve_lp, solve_mip_with, solve_mip_with_hint, LinearProgram, LpStatus, MipOptions, MipStatus,
    MixedIntegerProgram, RowSense, Sense, SolverError, VarId,
};
use log::debug;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AuxiliaryConstraint, Polyhedron, ResponseVector};
use crate::graph::{Graph, PathIncidence};
use crate::nonanticipativity::{add_acyclic_pair, diff_nodes, EqualityClasses, LabelModel};

/// Default cap on the auxiliary list length of a multistage model.
pub const DEFAULT_SCENARIO_CAP: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum FormulationError {
    #[error("auxiliary list of length {len} exceeds the cap of {cap}")]
    TooManyScenarios { len: usize, cap: usize },
    #[error("expected {expected} partitions, got {got}")]
    PartitionCount { expected: usize, got: usize },
    #[error("acyclic mode requires an acyclic graph")]
    NotAcyclic,
    #[error("the base polyhedron is empty")]
    EmptyBase,
    #[error("the identified partition is empty")]
    PosteriorInfeasible,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Which non-anticipativity rows the multistage model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NaMode {
    Acyclic,
    General,
}

impl NaMode {
    /// Acyclic rows when the graph allows them, unless `force_general`.
    pub fn select(g: &Graph, force_general: bool) -> Self {
        if !force_general && g.is_acyclic() {
            NaMode::Acyclic
        } else {
            NaMode::General
        }
    }
}

/// Adds binary arc variables for one path and the path polytope rows: flow
/// conservation and at most one outgoing arc per node.
fn add_path_vars(mip: &mut MixedIntegerProgram, g: &Graph, tag: &str) -> Vec<VarId> {
    let y: Vec<VarId> = (0..g.num_arcs())
        .map(|a| {
            let (t, h) = g.arc(a);
            mip.add_binary(format!("y{tag}[{t},{h}]"), 0.0)
        })
        .collect();
    for i in g.nodes() {
        let rhs = if i == g.source() {
            1.0
        } else if i == g.sink() {
            -1.0
        } else {
            0.0
        };
        let coeffs = g
            .forward_star(i)
            .iter()
            .map(|&a| (y[a], 1.0))
            .chain(g.reverse_star(i).iter().map(|&a| (y[a], -1.0)));
        mip.add_row(format!("flow{tag}[{i}]"), coeffs, RowSense::Eq, rhs);
        if g.forward_star(i).len() > 1 {
            mip.add_row(
                format!("out{tag}[{i}]"),
                g.forward_star(i).iter().map(|&a| (y[a], 1.0)),
                RowSense::Le,
                1.0,
            );
        }
    }
    y
}

/// Adds `lambda >= 0` for the `<=` system of `s` and the rows
/// `-y + B' lambda = 0`. Returns the multipliers and `b` paired with them.
fn add_dual_block(
    mip: &mut MixedIntegerProgram,
    s: &Polyhedron,
    y: &[VarId],
    tag: &str,
) -> Vec<(VarId, f64)> {
    let system = s.system();
    let lambda: Vec<(VarId, f64)> = system
        .iter()
        .enumerate()
        .map(|(k, r)| {
            (
                mip.add_continuous(format!("lambda{tag}[{k}]"), 0.0, f64::INFINITY, 0.0),
                r.rhs,
            )
        })
        .collect();
    let mut cols: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); y.len()];
    for (k, r) in system.iter().enumerate() {
        for &(a, v) in &r.coeffs {
            cols[a].push((lambda[k].0, v));
        }
    }
    for (a, mut col) in cols.into_iter().enumerate() {
        col.push((y[a], -1.0));
        mip.add_row(format!("dual{tag}[{a}]"), col, RowSense::Eq, 0.0);
    }
    lambda
}

/// The static model and its variables.
#[derive(Debug, Clone)]
pub struct StaticModel {
    pub mip: MixedIntegerProgram,
    pub y: Vec<VarId>,
    pub lambda: Vec<VarId>,
}

/// `min b'lambda` subject to `-y + B' lambda = 0`, `lambda >= 0`, `y` a path.
pub fn build_static_mip(g: &Graph, s0: &Polyhedron) -> StaticModel {
    let mut mip = MixedIntegerProgram::new(Sense::Minimize);
    let y = add_path_vars(&mut mip, g, "");
    let lambda = add_dual_block(&mut mip, s0, &y, "");
    for &(l, b) in &lambda {
        mip.lp.vars[l].objective = b;
    }
    StaticModel {
        mip,
        y,
        lambda: lambda.into_iter().map(|(l, _)| l).collect(),
    }
}

/// The max-min model and its variables.
#[derive(Debug, Clone)]
pub struct MaxMinModel {
    pub lp: LinearProgram,
    pub cbar: Vec<VarId>,
    /// Node potentials indexed by node id; index 0 is unused.
    pub mu: Vec<VarId>,
}

/// Worst expected costs for a user who commits to a shortest path after
/// seeing them: `max mu_s - mu_t` with `mu_tail - mu_head <= c_a` and `c`
/// in `s0`. The sink potential is fixed at zero.
pub fn build_maxmin_lp(g: &Graph, s0: &Polyhedron) -> MaxMinModel {
    let mut lp = LinearProgram::new(Sense::Maximize);
    let cbar: Vec<VarId> = (0..g.num_arcs())
        .map(|a| {
            let (t, h) = g.arc(a);
            lp.add_var(format!("c[{t},{h}]"), s0.lower[a], s0.upper[a], 0.0)
        })
        .collect();
    let mut mu = vec![usize::MAX; g.num_nodes() + 1];
    for i in g.nodes() {
        mu[i] = if i == g.sink() {
            lp.add_var(format!("mu[{i}]"), 0.0, 0.0, 0.0)
        } else {
            let obj = if i == g.source() { 1.0 } else { 0.0 };
            lp.add_var(format!("mu[{i}]"), f64::NEG_INFINITY, f64::INFINITY, obj)
        };
    }
    for (a, &(t, h)) in g.arcs().iter().enumerate() {
        lp.add_row(
            format!("pot[{t},{h}]"),
            [(mu[t], 1.0), (mu[h], -1.0), (cbar[a], -1.0)],
            RowSense::Le,
            0.0,
        );
    }
    for (k, r) in s0.rows.iter().enumerate() {
        lp.add_row(
            format!("s0[{k}]"),
            r.coeffs.iter().map(|&(a, v)| (cbar[a], v)),
            RowSense::Le,
            r.rhs,
        );
    }
    MaxMinModel { lp, cbar, mu }
}

/// The multistage model and its variables.
#[derive(Debug, Clone)]
pub struct MultiStageModel {
    pub mip: MixedIntegerProgram,
    pub mode: NaMode,
    pub z: VarId,
    /// Arc variables per scenario, scenario `j` at index `j - 1`.
    pub y: Vec<Vec<VarId>>,
    pub lambda: Vec<Vec<VarId>>,
    /// Ordering labels per scenario in general mode.
    pub labels: Option<Vec<Vec<VarId>>>,
    /// Scenarios whose partition is empty.
    pub empty: Vec<bool>,
}

/// `min z` over one path per response vector, with `z` bounding every
/// scenario's worst case and paths tied together by non-anticipativity.
pub fn build_multistage_mip(
    g: &Graph,
    partitions: &[Polyhedron],
    list: &[AuxiliaryConstraint],
    mode: NaMode,
    cap: usize,
) -> Result<MultiStageModel, FormulationError> {
    if list.len() > cap {
        return Err(FormulationError::TooManyScenarios {
            len: list.len(),
            cap,
        });
    }
    let count = 1usize << list.len();
    if partitions.len() != count {
        return Err(FormulationError::PartitionCount {
            expected: count,
            got: partitions.len(),
        });
    }
    if mode == NaMode::Acyclic && !g.is_acyclic() {
        return Err(FormulationError::NotAcyclic);
    }
    let mut empty = Vec::with_capacity(count);
    for (j, s) in partitions.iter().enumerate() {
        let is_empty = !s.is_feasible()?;
        if is_empty {
            debug!("partition {} is empty", j + 1);
        }
        empty.push(is_empty);
    }
    if empty.iter().all(|&e| e) {
        return Err(FormulationError::EmptyBase);
    }

    let mut mip = MixedIntegerProgram::new(Sense::Minimize);
    let z = mip.add_continuous("z", f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let mut y = Vec::with_capacity(count);
    let mut lambda = Vec::with_capacity(count);
    for (j, s) in partitions.iter().enumerate() {
        let tag = format!("[{}]", j + 1);
        let yj = add_path_vars(&mut mip, g, &tag);
        let lj = add_dual_block(&mut mip, s, &yj, &tag);
        let mut row = vec![(z, 1.0)];
        row.extend(lj.iter().map(|&(l, b)| (l, -b)));
        mip.add_row(format!("epi{tag}"), row, RowSense::Ge, 0.0);
        y.push(yj);
        lambda.push(lj.into_iter().map(|(l, _)| l).collect::<Vec<_>>());
    }

    let responses = ResponseVector::all(list.len());
    let mut labels = None;
    match mode {
        NaMode::Acyclic => {
            let reach = g.reachability();
            let mut eq = EqualityClasses::new(count, g.num_arcs());
            let mut ineq = 0;
            for j in 0..count {
                for l in j + 1..count {
                    let nodes = diff_nodes(list, &responses[j], &responses[l]);
                    ineq += add_acyclic_pair(&mut mip, g, &reach, &nodes, j, l, &y, &mut eq);
                }
            }
            let eqs = eq.emit(&mut mip, &y);
            debug!("acyclic non-anticipativity: {eqs} equalities, {ineq} inequalities");
        }
        NaMode::General => {
            let mut model = LabelModel::new(&mut mip, g, &y);
            let mut rows = 0;
            for j in 0..count {
                for l in j + 1..count {
                    let nodes = diff_nodes(list, &responses[j], &responses[l]);
                    rows += model.add_pair(&mut mip, g, &nodes, j, l, &y);
                }
            }
            debug!(
                "general non-anticipativity: {rows} arc rows, {} indicators",
                model.num_indicators()
            );
            labels = Some(model.labels().to_vec());
        }
    }
    Ok(MultiStageModel {
        mip,
        mode,
        z,
        y,
        lambda,
        labels,
        empty,
    })
}

/// `max c'y` over `s`.
pub fn build_posterior_lp(y: &PathIncidence, s: &Polyhedron) -> LinearProgram {
    let obj: Vec<f64> = y.y.iter().map(|&v| v as f64).collect();
    s.to_lp(Sense::Maximize, &obj)
}

/// Worst expected loss of path `y` over `s`.
pub fn posterior_value(y: &PathIncidence, s: &Polyhedron) -> Result<f64, FormulationError> {
    if s.lower
        .iter()
        .zip(&s.upper)
        .any(|(l, u)| *l > *u + crate::ambiguity::POLY_TOL)
    {
        return Err(FormulationError::PosteriorInfeasible);
    }
    let sol = solve_lp(&build_posterior_lp(y, s))?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Infeasible => Err(FormulationError::PosteriorInfeasible),
        LpStatus::Unbounded => Err(SolverError::UnboundedRelaxation.into()),
    }
}

/// Outcome of a static solve.
#[derive(Debug, Clone)]
pub struct StaticOutcome {
    pub status: MipStatus,
    pub objective: Option<f64>,
    pub path: Option<PathIncidence>,
    pub elapsed: Duration,
    pub nodes: usize,
}

pub fn solve_static(
    g: &Graph,
    s0: &Polyhedron,
    opts: &MipOptions,
) -> Result<StaticOutcome, FormulationError> {
    if !s0.is_feasible()? {
        return Err(FormulationError::EmptyBase);
    }
    let model = build_static_mip(g, s0);
    let sol = solve_mip_with(&model.mip, opts)?;
    let path = sol.x.as_ref().map(|x| {
        let v: Vec<f64> = model.y.iter().map(|&k| x[k]).collect();
        PathIncidence::from_values(g, &v)
    });
    Ok(StaticOutcome {
        status: sol.status,
        objective: sol.objective,
        path,
        elapsed: sol.elapsed,
        nodes: sol.nodes,
    })
}

/// Optimal value of the max-min LP and a maximizing cost vector.
pub fn solve_maxmin(g: &Graph, s0: &Polyhedron) -> Result<(f64, Vec<f64>), FormulationError> {
    if !s0.is_feasible()? {
        return Err(FormulationError::EmptyBase);
    }
    let model = build_maxmin_lp(g, s0);
    let sol = solve_lp(&model.lp)?;
    match sol.status {
        LpStatus::Optimal => Ok((
            sol.objective,
            model.cbar.iter().map(|&k| sol.x[k]).collect(),
        )),
        LpStatus::Infeasible => Err(FormulationError::EmptyBase),
        LpStatus::Unbounded => Err(SolverError::UnboundedRelaxation.into()),
    }
}

/// A solved multistage model: one path per response vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStagePolicy {
    pub objective: f64,
    pub mode: NaMode,
    /// Path for response index `j` at position `j - 1`.
    pub paths: Vec<PathIncidence>,
    pub labels: Option<Vec<Vec<f64>>>,
    pub lambda: Vec<Vec<f64>>,
}

impl MultiStagePolicy {
    /// Path chosen when the responses are `r`.
    pub fn path_for(&self, r: &ResponseVector) -> &PathIncidence {
        &self.paths[r.index() - 1]
    }
}

/// Outcome of a multistage solve.
#[derive(Debug, Clone)]
pub struct MultiStageOutcome {
    pub status: MipStatus,
    pub policy: Option<MultiStagePolicy>,
    pub bound: f64,
    pub elapsed: Duration,
    pub nodes: usize,
}

pub fn solve_multistage(
    g: &Graph,
    partitions: &[Polyhedron],
    list: &[AuxiliaryConstraint],
    mode: NaMode,
    opts: &MipOptions,
) -> Result<MultiStageOutcome, FormulationError> {
    let start = Instant::now();
    let model = build_multistage_mip(g, partitions, list, mode, DEFAULT_SCENARIO_CAP)?;
    let hint = match common_path(g, partitions, &model.empty, opts)? {
        Some(path) => model
            .y
            .iter()
            .flat_map(|yj| yj.iter().zip(&path.y).map(|(&k, &v)| (k, v as f64)))
            .collect(),
        None => Vec::new(),
    };
    let sol = solve_mip_with_hint(&model.mip, opts, &hint)?;
    let policy = match (&sol.x, sol.objective) {
        (Some(x), Some(objective)) => {
            let pick = |vars: &[VarId]| -> Vec<f64> { vars.iter().map(|&k| x[k]).collect() };
            Some(MultiStagePolicy {
                objective,
                mode,
                paths: model
                    .y
                    .iter()
                    .map(|yj| PathIncidence::from_values(g, &pick(yj)))
                    .collect(),
                labels: model.labels.as_ref().map(|t| {
                    t.iter()
                        .map(|tj| tj[1..].iter().map(|&k| x[k]).collect())
                        .collect()
                }),
                lambda: model.lambda.iter().map(|l| pick(l)).collect(),
            })
        }
        _ => None,
    };
    Ok(MultiStageOutcome {
        status: sol.status,
        policy,
        bound: sol.bound,
        elapsed: start.elapsed(),
        nodes: sol.nodes,
    })
}

/// One path used in every scenario is always non-anticipative. Among the
/// static optima of the non-empty partitions, returns the one with the
/// smallest worst case over all of them.
fn common_path(
    g: &Graph,
    partitions: &[Polyhedron],
    empty: &[bool],
    opts: &MipOptions,
) -> Result<Option<PathIncidence>, FormulationError> {
    let live: Vec<&Polyhedron> = partitions
        .iter()
        .zip(empty)
        .filter(|(_, &e)| !e)
        .map(|(s, _)| s)
        .collect();
    let mut candidates: Vec<PathIncidence> = Vec::new();
    for s in &live {
        let model = build_static_mip(g, s);
        let sol = solve_mip_with(&model.mip, opts)?;
        if let Some(x) = sol.x {
            let v: Vec<f64> = model.y.iter().map(|&k| x[k]).collect();
            let path = PathIncidence::from_values(g, &v);
            if path.nodes(g).last() == Some(&g.sink()) && !candidates.contains(&path) {
                candidates.push(path);
            }
        }
    }
    let mut best: Option<(f64, PathIncidence)> = None;
    for path in candidates {
        let mut worst = f64::NEG_INFINITY;
        for s in &live {
            match posterior_value(&path, s) {
                Ok(v) => worst = worst.max(v),
                Err(FormulationError::PosteriorInfeasible) => {}
                Err(e) => return Err(e),
            }
        }
        if best.as_ref().is_none_or(|(b, _)| worst < *b) {
            best = Some((worst, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}
