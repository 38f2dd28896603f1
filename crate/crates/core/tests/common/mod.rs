//! Random instance generators and brute-force oracles shared by the
//! integration suites.
#![allow(dead_code)]

use drsp_core::ambiguity::{
    build_s0, partition, AmbiguitySet, AuxKind, AuxiliaryConstraint, ExpectationRow, Polyhedron,
    ProbabilityConstraint, ResponseVector, RowKind,
};
use drsp_core::datagen::{generate_instance, InstanceConfig};
use drsp_core::graph::{ArcId, Graph, GraphClass, NodeId};
use drsp_core::solver::Sense;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Graph, ambiguity set, base polyhedron and auxiliary list of one test case.
#[derive(Debug, Clone)]
pub struct Case {
    pub graph: Graph,
    pub ambiguity: AmbiguitySet,
    pub s0: Polyhedron,
    pub list: Vec<AuxiliaryConstraint>,
}

impl Case {
    pub fn partitions(&self, k: usize) -> Vec<Polyhedron> {
        let list = &self.list[..k];
        ResponseVector::all(k)
            .iter()
            .map(|r| partition(&self.s0, &self.ambiguity, list, r).unwrap())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CaseSpec {
    pub max_nodes: usize,
    pub max_paths: usize,
    pub max_aux: usize,
    pub allow_cycles: bool,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Longest auxiliary list on graphs with cycles, where the label-based
/// model grows quickly with the number of scenarios.
pub const GENERAL_AUX_CAP: usize = 2;

/// A random test case. Graphs are either random DAGs with random ambiguity
/// data, layered graphs from the instance generator, or (when allowed)
/// digraphs with two-way arcs.
pub fn random_case(seed: u64, spec: CaseSpec) -> Case {
    let mut r = rng(seed);
    for _ in 0..1000 {
        let choice = r.random_range(0..if spec.allow_cycles { 4 } else { 3 });
        let case = match choice {
            0 => layered_case(&mut r, spec),
            3 => {
                let g = random_cyclic(&mut r, spec.max_nodes);
                random_data(&mut r, g, spec.max_aux.min(GENERAL_AUX_CAP))
            }
            _ => {
                let g = random_dag(&mut r, spec.max_nodes);
                random_data(&mut r, g, spec.max_aux)
            }
        };
        if let Some(c) = case {
            if simple_paths(&c.graph).len() <= spec.max_paths {
                return c;
            }
        }
    }
    panic!("no admissible case for seed {seed}");
}

fn layered_case(r: &mut ChaCha8Rng, spec: CaseSpec) -> Option<Case> {
    let h = r.random_range(1..=3);
    let w = r.random_range(1..=3);
    if h * w + 2 > spec.max_nodes {
        return None;
    }
    let class = if spec.allow_cycles && r.random_bool(0.5) {
        GraphClass::General
    } else {
        GraphClass::Acyclic
    };
    let cfg = InstanceConfig {
        h,
        r: w,
        class,
        num_aux: r.random_range(
            0..=if class == GraphClass::General {
                spec.max_aux.min(GENERAL_AUX_CAP)
            } else {
                spec.max_aux
            },
        ),
        kappa: r.random_range(0.3..0.9),
        n_train: 30,
        n_verify: 30,
        seed: r.random(),
        ..InstanceConfig::default()
    };
    let inst = generate_instance(&cfg).ok()?;
    let s0 = build_s0(&inst.ambiguity).ok()?;
    Some(Case {
        graph: inst.graph,
        ambiguity: inst.ambiguity,
        s0,
        list: inst.auxiliary,
    })
}

/// Random DAG on nodes `1..=n` in topological order with source 1 and sink n.
pub fn random_dag(r: &mut ChaCha8Rng, max_nodes: usize) -> Graph {
    let n = r.random_range(3..=max_nodes.max(3));
    let density = r.random_range(0.2..0.6);
    let mut arcs: Vec<(NodeId, NodeId)> = Vec::new();
    for i in 1..n {
        for j in i + 1..=n {
            if (i, j) != (1, n) && r.random_bool(density) {
                arcs.push((i, j));
            }
        }
    }
    for i in 2..n {
        if !arcs.iter().any(|&(_, h)| h == i) {
            arcs.push((r.random_range(1..i), i));
        }
        if !arcs.iter().any(|&(t, _)| t == i) {
            arcs.push((i, r.random_range(i + 1..=n)));
        }
    }
    arcs.sort_unstable();
    Graph::new(n, 1, n, arcs).expect("valid DAG")
}

/// Random DAG plus reversed twins for some arcs between inner nodes.
pub fn random_cyclic(r: &mut ChaCha8Rng, max_nodes: usize) -> Graph {
    let dag = random_dag(r, max_nodes);
    let n = dag.num_nodes();
    let mut arcs = dag.arcs().to_vec();
    for &(t, h) in dag.arcs() {
        if t != 1 && h != n && r.random_bool(0.5) {
            arcs.push((h, t));
        }
    }
    Graph::new(n, 1, n, arcs).expect("valid digraph")
}

fn quarter(r: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    r.random_range(lo..=hi) as f64 / 4.0
}

/// Random supports, interval probabilities, budget rows and auxiliary list.
pub fn random_data(r: &mut ChaCha8Rng, g: Graph, max_aux: usize) -> Option<Case> {
    let m = g.num_arcs();
    let mut prob = Vec::with_capacity(m);
    for a in 0..m {
        let l = quarter(r, 0, 4);
        let u = l + quarter(r, 1, 6);
        let mut list = vec![ProbabilityConstraint::support(a, l, u)];
        if r.random_bool(0.3) {
            let x = l + (u - l) * r.random_range(0.0..0.7);
            let y = x + (u - x) * r.random_range(0.3..1.0);
            let q_lo: f64 = r.random_range(0.0..0.6);
            let q_hi = (q_lo + r.random_range(0.1..0.8)).min(1.0);
            list.push(ProbabilityConstraint {
                arc: a,
                l: x,
                u: y,
                q_lo,
                q_hi,
            });
        }
        prob.push(list);
    }
    let mut amb = AmbiguitySet {
        prob,
        rows: Vec::new(),
    };
    let base = build_s0(&amb).ok()?;
    for _ in 0..r.random_range(0..=2) {
        let mut arcs: Vec<ArcId> = (0..m).collect();
        arcs.shuffle(r);
        arcs.truncate(r.random_range(2..=4).min(m));
        let lo: f64 = arcs.iter().map(|&a| base.lower[a]).sum();
        let hi: f64 = arcs.iter().map(|&a| base.upper[a]).sum();
        amb.rows.push(ExpectationRow {
            coeffs: arcs.iter().map(|&a| (a, 1.0)).collect(),
            rhs: lo + (hi - lo) * r.random_range(0.2..0.8),
            sense: RowKind::Le,
        });
    }
    if m >= 2 && r.random_bool(0.2) {
        let a = r.random_range(0..m);
        let b = (a + 1 + r.random_range(0..m - 1)) % m;
        amb.rows.push(ExpectationRow {
            coeffs: vec![(a, 1.0), (b, -1.0)],
            rhs: 0.0,
            sense: RowKind::Eq,
        });
    }
    let s0 = build_s0(&amb).ok()?;
    if !s0.is_feasible().ok()? {
        return None;
    }
    let k = r.random_range(0..=max_aux);
    let mut list = Vec::new();
    let inner: Vec<NodeId> = g
        .nodes()
        .filter(|&i| !g.forward_star(i).is_empty())
        .collect();
    let mut attempts = 0;
    while list.len() < k {
        attempts += 1;
        if attempts > 50 {
            return None;
        }
        let node = inner[r.random_range(0..inner.len())];
        let fs = g.forward_star(node);
        let kind = if r.random_bool(0.7) {
            let mut arcs = fs.to_vec();
            arcs.shuffle(r);
            arcs.truncate(r.random_range(1..=2).min(arcs.len()));
            let coeffs: Vec<(ArcId, f64)> = arcs
                .iter()
                .map(|&a| (a, if r.random_bool(0.5) { 1.0 } else { -1.0 }))
                .collect();
            let obj = dense(m, &coeffs);
            let (lo, _) = s0.optimize(Sense::Minimize, &obj).ok()??;
            let (hi, _) = s0.optimize(Sense::Maximize, &obj).ok()??;
            if hi - lo < 1e-6 {
                continue;
            }
            AuxKind::Expectation {
                coeffs,
                rhs: lo + (hi - lo) * r.random_range(0.25..0.75),
            }
        } else {
            let arc = fs[r.random_range(0..fs.len())];
            let (l, u) = amb.support(arc);
            AuxKind::Probability {
                arc,
                l: 0.5 * (l + u),
                u,
                threshold: r.random_range(0.2..0.8),
            }
        };
        list.push(AuxiliaryConstraint { node, kind });
    }
    Some(Case {
        graph: g,
        ambiguity: amb,
        s0,
        list,
    })
}

pub fn dense(m: usize, coeffs: &[(ArcId, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; m];
    for &(a, c) in coeffs {
        v[a] += c;
    }
    v
}

/// All simple source-sink paths as arc lists, by depth-first search.
pub fn simple_paths(g: &Graph) -> Vec<Vec<ArcId>> {
    fn dfs(
        g: &Graph,
        i: NodeId,
        seen: &mut Vec<bool>,
        stack: &mut Vec<ArcId>,
        out: &mut Vec<Vec<ArcId>>,
    ) {
        if i == g.sink() {
            out.push(stack.clone());
            return;
        }
        for &a in g.forward_star(i) {
            let j = g.head(a);
            if !seen[j] {
                seen[j] = true;
                stack.push(a);
                dfs(g, j, seen, stack, out);
                stack.pop();
                seen[j] = false;
            }
        }
    }
    let mut seen = vec![false; g.num_nodes() + 1];
    seen[g.source()] = true;
    let mut out = Vec::new();
    dfs(g, g.source(), &mut seen, &mut Vec::new(), &mut out);
    out
}

/// Worst-case expected cost of a path over a polyhedron, `None` if empty.
pub fn worst_case(s: &Polyhedron, path: &[ArcId]) -> Option<f64> {
    let obj = dense(
        s.num_arcs(),
        &path.iter().map(|&a| (a, 1.0)).collect::<Vec<_>>(),
    );
    s.optimize(Sense::Maximize, &obj).unwrap().map(|(v, _)| v)
}

/// Static optimum by enumerating paths and maximizing over `s0` per path.
pub fn static_oracle(g: &Graph, s0: &Polyhedron) -> f64 {
    simple_paths(g)
        .iter()
        .map(|p| worst_case(s0, p).expect("nonempty base"))
        .fold(f64::INFINITY, f64::min)
}

/// Nodes where the auxiliary bits of two response indices differ.
pub fn differing_nodes(list: &[AuxiliaryConstraint], j: usize, l: usize) -> Vec<NodeId> {
    let (a, b) = (j - 1, l - 1);
    let mut out: Vec<NodeId> = list
        .iter()
        .enumerate()
        .filter(|(m, _)| (a >> m & 1) != (b >> m & 1))
        .map(|(_, c)| c.node)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn next_arc(g: &Graph, path: &[ArcId], i: NodeId) -> Option<ArcId> {
    path.iter().copied().find(|&a| g.tail(a) == i)
}

/// Both paths leave every node identically until one of `stop` is reached.
pub fn same_until(g: &Graph, p: &[ArcId], q: &[ArcId], stop: &[NodeId]) -> bool {
    let mut i = g.source();
    loop {
        if stop.contains(&i) || i == g.sink() {
            return true;
        }
        match (next_arc(g, p, i), next_arc(g, q, i)) {
            (Some(a), Some(b)) if a == b => i = g.head(a),
            _ => return false,
        }
    }
}

/// Best non-anticipative policy by exhaustive search over one path per
/// response vector. Empty partitions never bind.
pub fn policy_oracle(g: &Graph, parts: &[Polyhedron], list: &[AuxiliaryConstraint]) -> f64 {
    let paths = simple_paths(g);
    let n = parts.len();
    let values: Vec<Vec<f64>> = parts
        .iter()
        .map(|s| {
            paths
                .iter()
                .map(|p| worst_case(s, p).unwrap_or(f64::NEG_INFINITY))
                .collect()
        })
        .collect();
    let order: Vec<Vec<usize>> = values
        .iter()
        .map(|v| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        })
        .collect();
    let stops: Vec<Vec<Vec<NodeId>>> = (1..=n)
        .map(|j| (1..=n).map(|l| differing_nodes(list, j, l)).collect())
        .collect();

    struct Search<'a> {
        g: &'a Graph,
        paths: &'a [Vec<ArcId>],
        values: &'a [Vec<f64>],
        order: &'a [Vec<usize>],
        stops: &'a [Vec<Vec<NodeId>>],
        pick: Vec<usize>,
        best: f64,
    }
    impl Search<'_> {
        fn go(&mut self, j: usize, current: f64) {
            if j == self.values.len() {
                self.best = self.best.min(current);
                return;
            }
            for &p in &self.order[j] {
                let v = current.max(self.values[j][p]);
                if v >= self.best {
                    break;
                }
                let ok = (0..j).all(|l| {
                    same_until(
                        self.g,
                        &self.paths[p],
                        &self.paths[self.pick[l]],
                        &self.stops[j][l],
                    )
                });
                if ok {
                    self.pick.push(p);
                    self.go(j + 1, v);
                    self.pick.pop();
                }
            }
        }
    }
    let mut s = Search {
        g,
        paths: &paths,
        values: &values,
        order: &order,
        stops: &stops,
        pick: Vec::new(),
        best: f64::INFINITY,
    };
    s.go(0, f64::NEG_INFINITY);
    s.best
}

/// Extreme points of `s` in random directions, used to sample cost vectors.
pub fn random_vertices(s: &Polyhedron, count: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .filter_map(|_| {
            let obj: Vec<f64> = (0..s.num_arcs())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            s.optimize(Sense::Maximize, &obj).unwrap().map(|(_, x)| x)
        })
        .collect()
}

/// Shortest path length under nonnegative costs by Bellman-Ford.
pub fn shortest_path(g: &Graph, costs: &[f64]) -> f64 {
    let mut dist = vec![f64::INFINITY; g.num_nodes() + 1];
    dist[g.source()] = 0.0;
    for _ in 0..g.num_nodes() {
        for (a, &(t, h)) in g.arcs().iter().enumerate() {
            if dist[t] + costs[a] < dist[h] {
                dist[h] = dist[t] + costs[a];
            }
        }
    }
    dist[g.sink()]
}
