//! Non-anticipativity: a user who cannot yet tell two response vectors apart
//! must take the same arcs under both.
//!
//! Two row families are provided. On acyclic graphs reachability decides
//! whether a distinguishing node can still be ahead. On general graphs
//! ordering labels along each scenario path decide whether a distinguishing
//! node was visited before the current one.

use std::collections::{BTreeSet, HashMap};

use drsp_solver::{MixedIntegerProgram, RowSense, VarId};

use crate::ambiguity::{AuxiliaryConstraint, ResponseVector};
use crate::graph::{ArcId, Graph, NodeId, PathIncidence, Reachability};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NonAnticipativityError {
    #[error("the graph has a directed cycle")]
    NotAcyclic,
}

/// Nodes carrying at least one auxiliary constraint answered differently in
/// `rj` and `rl`, in increasing order.
pub fn diff_nodes(
    list: &[AuxiliaryConstraint],
    rj: &ResponseVector,
    rl: &ResponseVector,
) -> Vec<NodeId> {
    assert_eq!(rj.len(), list.len());
    assert_eq!(rl.len(), list.len());
    let set: BTreeSet<NodeId> = list
        .iter()
        .zip(rj.bits.iter().zip(&rl.bits))
        .filter(|(_, (a, b))| a != b)
        .map(|(c, _)| c.node)
        .collect();
    set.into_iter().collect()
}

/// Semantic check: walking both paths from the source, they take the same
/// arc at every node until one of `nodes` is reached.
pub fn prefix_identical(
    g: &Graph,
    yj: &PathIncidence,
    yl: &PathIncidence,
    nodes: &[NodeId],
) -> bool {
    let mut i = g.source();
    for _ in 0..=g.num_nodes() {
        if i == g.sink() || nodes.contains(&i) {
            return true;
        }
        let (a, b) = (yj.next_arc(g, i), yl.next_arc(g, i));
        if a != b {
            return false;
        }
        match a {
            Some(a) => i = g.head(a),
            None => return true,
        }
    }
    true
}

/// Union-find over scenario copies of arc variables, so that each class of
/// equal variables becomes a chain of equalities emitted once.
#[derive(Debug, Clone)]
pub struct EqualityClasses {
    arcs: usize,
    parent: Vec<usize>,
}

impl EqualityClasses {
    pub fn new(scenarios: usize, arcs: usize) -> Self {
        Self {
            arcs,
            parent: (0..scenarios * arcs).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, j: usize, l: usize, a: ArcId) {
        let (x, y) = (self.find(j * self.arcs + a), self.find(l * self.arcs + a));
        if x != y {
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            self.parent[hi] = lo;
        }
    }

    /// Emits `y[j][a] = y[root][a]` for every non-root member; returns the
    /// number of rows added.
    pub fn emit(&mut self, mip: &mut MixedIntegerProgram, y: &[Vec<VarId>]) -> usize {
        let mut rows = 0;
        for x in 0..self.parent.len() {
            let root = self.find(x);
            if root != x {
                let (j, a) = (x / self.arcs, x % self.arcs);
                let (r, _) = (root / self.arcs, root % self.arcs);
                mip.add_row(
                    format!("na_eq[{j}][{r}][{a}]"),
                    [(y[j][a], 1.0), (y[r][a], -1.0)],
                    RowSense::Eq,
                    0.0,
                );
                rows += 1;
            }
        }
        rows
    }
}

/// Adds the acyclic-graph rows for scenarios `j` and `l` (0-based) whose
/// responses differ at `nodes`. Equalities are collected in `eq`; the
/// inequality rows are emitted for both orientations. Returns the number of
/// inequality rows added.
#[allow(clippy::too_many_arguments)]
pub fn add_acyclic_pair(
    mip: &mut MixedIntegerProgram,
    g: &Graph,
    reach: &Reachability,
    nodes: &[NodeId],
    j: usize,
    l: usize,
    y: &[Vec<VarId>],
    eq: &mut EqualityClasses,
) -> usize {
    let mut rows = 0;
    for i in g.nodes() {
        if nodes.contains(&i) || g.forward_star(i).is_empty() {
            continue;
        }
        let unreachable: Vec<NodeId> = nodes
            .iter()
            .copied()
            .filter(|&n| !reach.reaches(i, n))
            .collect();
        if unreachable.is_empty() {
            for &a in g.forward_star(i) {
                eq.union(j, l, a);
            }
            continue;
        }
        for (p, q) in [(j, l), (l, j)] {
            let guard: Vec<(VarId, f64)> = unreachable
                .iter()
                .flat_map(|&n| g.forward_star(n).iter().map(move |&a| (y[p][a], -1.0)))
                .collect();
            for &a in g.forward_star(i) {
                for sign in [1.0, -1.0] {
                    let mut coeffs = vec![(y[p][a], sign), (y[q][a], -sign)];
                    coeffs.extend(guard.iter().copied());
                    mip.add_row(
                        format!("na_reach[{p}][{q}][{i}][{a}]"),
                        coeffs,
                        RowSense::Le,
                        0.0,
                    );
                    rows += 1;
                }
            }
        }
    }
    rows
}

/// Ordering labels per scenario and the indicator variables derived from
/// them. Indicators depend only on (scenario, node, distinguishing node), so
/// they are shared by every pair that needs them.
#[derive(Debug, Clone)]
pub struct LabelModel {
    labels: Vec<Vec<VarId>>,
    indicators: HashMap<(usize, NodeId, NodeId), VarId>,
    m1: f64,
}

impl LabelModel {
    /// Adds labels `t[j][i]` with `t[j][s] = 0`, `0 <= t <= |N| - 1` and
    /// `t[tail] - t[head] <= -1 + |N| (1 - y[j][a])` for every arc.
    pub fn new(mip: &mut MixedIntegerProgram, g: &Graph, y: &[Vec<VarId>]) -> Self {
        let nn = g.num_nodes() as f64;
        let mut labels = Vec::with_capacity(y.len());
        for (j, yj) in y.iter().enumerate() {
            let mut t = vec![usize::MAX; g.num_nodes() + 1];
            for i in g.nodes() {
                let ub = if i == g.source() { 0.0 } else { nn - 1.0 };
                t[i] = mip.add_continuous(format!("t[{j}][{i}]"), 0.0, ub, 0.0);
            }
            for (a, &(tail, head)) in g.arcs().iter().enumerate() {
                mip.add_row(
                    format!("order[{j}][{a}]"),
                    [(t[tail], 1.0), (t[head], -1.0), (yj[a], nn)],
                    RowSense::Le,
                    nn - 1.0,
                );
            }
            labels.push(t);
        }
        Self {
            labels,
            indicators: HashMap::new(),
            m1: nn - 1.0,
        }
    }

    pub fn labels(&self) -> &[Vec<VarId>] {
        &self.labels
    }

    pub fn num_indicators(&self) -> usize {
        self.indicators.len()
    }

    /// `w[j][i][n]`: zero exactly when `i` is on scenario `j`'s path and `n`
    /// is visited after it; at most one when `n` is on the path.
    fn indicator(
        &mut self,
        mip: &mut MixedIntegerProgram,
        g: &Graph,
        y: &[Vec<VarId>],
        j: usize,
        i: NodeId,
        n: NodeId,
    ) -> VarId {
        if let Some(&w) = self.indicators.get(&(j, i, n)) {
            return w;
        }
        let (ti, tn) = (self.labels[j][i], self.labels[j][n]);
        let m1 = self.m1;
        let v = mip.add_continuous(format!("v[{j}][{i}][{n}]"), 0.0, m1, 0.0);
        let vt = mip.add_binary(format!("vt[{j}][{i}][{n}]"), 0.0);
        let w = mip.add_continuous(format!("w[{j}][{i}][{n}]"), 0.0, 1.0, 0.0);
        mip.add_row(
            format!("vmax[{j}][{i}][{n}]"),
            [(v, 1.0), (ti, -1.0), (tn, 1.0)],
            RowSense::Ge,
            0.0,
        );
        mip.add_row(
            format!("vsel0[{j}][{i}][{n}]"),
            [(v, 1.0), (vt, -m1)],
            RowSense::Le,
            0.0,
        );
        mip.add_row(
            format!("vsel1[{j}][{i}][{n}]"),
            [(v, 1.0), (ti, -1.0), (tn, 1.0), (vt, m1)],
            RowSense::Le,
            m1,
        );
        let out_n: Vec<(VarId, f64)> = g.forward_star(n).iter().map(|&a| (y[j][a], 1.0)).collect();
        let out_i: Vec<(VarId, f64)> = g.forward_star(i).iter().map(|&a| (y[j][a], 1.0)).collect();
        let mut coeffs = vec![(w, 1.0), (v, -1.0)];
        coeffs.extend(out_n.iter().copied());
        coeffs.extend(out_i.iter().copied());
        mip.add_row(format!("wmin0[{j}][{i}][{n}]"), coeffs, RowSense::Le, 2.0);
        let mut coeffs = vec![(w, 1.0)];
        coeffs.extend(out_n.iter().map(|&(x, c)| (x, -c)));
        mip.add_row(format!("wmin1[{j}][{i}][{n}]"), coeffs, RowSense::Le, 0.0);
        self.indicators.insert((j, i, n), w);
        w
    }

    /// Adds the label-based rows for scenarios `j` and `l`, both
    /// orientations. Returns the number of arc rows added.
    pub fn add_pair(
        &mut self,
        mip: &mut MixedIntegerProgram,
        g: &Graph,
        nodes: &[NodeId],
        j: usize,
        l: usize,
        y: &[Vec<VarId>],
    ) -> usize {
        let mut rows = 0;
        for i in g.nodes() {
            if nodes.contains(&i) || g.forward_star(i).is_empty() {
                continue;
            }
            for (p, q) in [(j, l), (l, j)] {
                let ws: Vec<VarId> = nodes
                    .iter()
                    .map(|&n| self.indicator(mip, g, y, p, i, n))
                    .collect();
                for &a in g.forward_star(i) {
                    for sign in [1.0, -1.0] {
                        let mut coeffs = vec![(y[p][a], sign), (y[q][a], -sign)];
                        coeffs.extend(ws.iter().map(|&w| (w, -1.0)));
                        mip.add_row(
                            format!("na_order[{p}][{q}][{i}][{a}]"),
                            coeffs,
                            RowSense::Le,
                            0.0,
                        );
                        rows += 1;
                    }
                }
            }
        }
        rows
    }
}
