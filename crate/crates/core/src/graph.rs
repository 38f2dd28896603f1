//! Directed networks, layered instance graphs, path incidence vectors and
//! reachability.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySet, AuxKind, AuxiliaryConstraint, ExpectationRow, RowKind};

/// Node identifier, 1-based.
pub type NodeId = usize;
/// Arc index, 0-based in construction order.
pub type ArcId = usize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("source and sink must differ")]
    SourceIsSink,
    #[error("node {0} is out of range")]
    NodeOutOfRange(NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("parallel arc ({0}, {1})")]
    ParallelArc(NodeId, NodeId),
    #[error("node {0} does not lie on any source-to-sink walk")]
    Disconnected(NodeId),
    #[error("more than {0} simple paths")]
    CapExceeded(usize),
}

/// Whether a layered graph has reversed arcs between intermediate layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphClass {
    Acyclic,
    General,
}

/// Serialized graph fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphData {
    pub nodes: usize,
    pub source: NodeId,
    pub sink: NodeId,
    pub arcs: Vec<(NodeId, NodeId)>,
}

/// A directed graph with a source and a sink.
///
/// Forward and reverse stars are indexed by node id; index 0 is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphData", into = "GraphData")]
pub struct Graph {
    nodes: usize,
    source: NodeId,
    sink: NodeId,
    arcs: Vec<(NodeId, NodeId)>,
    fs: Vec<Vec<ArcId>>,
    rs: Vec<Vec<ArcId>>,
}

impl TryFrom<GraphData> for Graph {
    type Error = GraphError;
    fn try_from(d: GraphData) -> Result<Self, GraphError> {
        Graph::new(d.nodes, d.source, d.sink, d.arcs)
    }
}

impl From<Graph> for GraphData {
    fn from(g: Graph) -> Self {
        GraphData {
            nodes: g.nodes,
            source: g.source,
            sink: g.sink,
            arcs: g.arcs,
        }
    }
}

impl Graph {
    pub fn new(
        nodes: usize,
        source: NodeId,
        sink: NodeId,
        arcs: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        if source == sink {
            return Err(GraphError::SourceIsSink);
        }
        for id in [source, sink] {
            if id == 0 || id > nodes {
                return Err(GraphError::NodeOutOfRange(id));
            }
        }
        let mut fs = vec![Vec::new(); nodes + 1];
        let mut rs = vec![Vec::new(); nodes + 1];
        let mut seen = std::collections::HashSet::new();
        for (a, &(t, h)) in arcs.iter().enumerate() {
            for id in [t, h] {
                if id == 0 || id > nodes {
                    return Err(GraphError::NodeOutOfRange(id));
                }
            }
            if t == h {
                return Err(GraphError::SelfLoop(t));
            }
            if !seen.insert((t, h)) {
                return Err(GraphError::ParallelArc(t, h));
            }
            fs[t].push(a);
            rs[h].push(a);
        }
        let g = Graph {
            nodes,
            source,
            sink,
            arcs,
            fs,
            rs,
        };
        let from_s = g.bfs(source, false);
        let to_f = g.bfs(sink, true);
        if let Some(i) = (1..=nodes).find(|&i| !from_s[i] || !to_f[i]) {
            return Err(GraphError::Disconnected(i));
        }
        Ok(g)
    }

    fn bfs(&self, start: NodeId, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.nodes + 1];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let star = if reverse { &self.rs[i] } else { &self.fs[i] };
            for &a in star {
                let (t, h) = self.arcs[a];
                let next = if reverse { t } else { h };
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        1..=self.nodes
    }

    pub fn arcs(&self) -> &[(NodeId, NodeId)] {
        &self.arcs
    }

    pub fn arc(&self, a: ArcId) -> (NodeId, NodeId) {
        self.arcs[a]
    }

    pub fn tail(&self, a: ArcId) -> NodeId {
        self.arcs[a].0
    }

    pub fn head(&self, a: ArcId) -> NodeId {
        self.arcs[a].1
    }

    pub fn forward_star(&self, i: NodeId) -> &[ArcId] {
        &self.fs[i]
    }

    pub fn reverse_star(&self, i: NodeId) -> &[ArcId] {
        &self.rs[i]
    }

    pub fn find_arc(&self, tail: NodeId, head: NodeId) -> Option<ArcId> {
        self.fs[tail]
            .iter()
            .copied()
            .find(|&a| self.arcs[a].1 == head)
    }

    /// The arc with tail and head swapped, if present.
    pub fn reverse_of(&self, a: ArcId) -> Option<ArcId> {
        let (t, h) = self.arcs[a];
        self.find_arc(h, t)
    }

    /// Predecessors of `i` in arc order.
    pub fn predecessors(&self, i: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.rs[i].iter().map(|&a| self.arcs[a].0)
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: Vec<usize> = (0..=self.nodes)
            .map(|i| self.rs.get(i).map_or(0, Vec::len))
            .collect();
        let mut queue: VecDeque<NodeId> = self.nodes().filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = queue.pop_front() {
            visited += 1;
            for &a in &self.fs[i] {
                let h = self.arcs[a].1;
                indeg[h] -= 1;
                if indeg[h] == 0 {
                    queue.push_back(h);
                }
            }
        }
        visited == self.nodes
    }

    /// Transitive closure by Floyd-Warshall; every node reaches itself.
    pub fn reachability(&self) -> Reachability {
        let n = self.nodes;
        let mut r = Reachability {
            n,
            bits: vec![false; (n + 1) * (n + 1)],
        };
        for i in self.nodes() {
            r.set(i, i);
        }
        for &(t, h) in &self.arcs {
            r.set(t, h);
        }
        for k in self.nodes() {
            for i in self.nodes() {
                if !r.reaches(i, k) {
                    continue;
                }
                for j in self.nodes() {
                    if r.reaches(k, j) {
                        r.set(i, j);
                    }
                }
            }
        }
        r
    }

    /// All simple source-to-sink paths in lexicographic order of arc index
    /// sequences. Fails when there are more than `cap`.
    pub fn enumerate_simple_paths(&self, cap: usize) -> Result<Vec<PathIncidence>, GraphError> {
        let mut out = Vec::new();
        let mut on_path = vec![false; self.nodes + 1];
        let mut stack: Vec<ArcId> = Vec::new();
        on_path[self.source] = true;
        self.dfs_paths(self.source, &mut on_path, &mut stack, &mut out, cap)?;
        Ok(out)
    }

    fn dfs_paths(
        &self,
        i: NodeId,
        on_path: &mut [bool],
        stack: &mut Vec<ArcId>,
        out: &mut Vec<PathIncidence>,
        cap: usize,
    ) -> Result<(), GraphError> {
        if i == self.sink {
            if out.len() == cap {
                return Err(GraphError::CapExceeded(cap));
            }
            out.push(PathIncidence::from_arcs(self.num_arcs(), stack));
            return Ok(());
        }
        for &a in &self.fs[i] {
            let h = self.arcs[a].1;
            if on_path[h] {
                continue;
            }
            on_path[h] = true;
            stack.push(a);
            self.dfs_paths(h, on_path, stack, out, cap)?;
            stack.pop();
            on_path[h] = false;
        }
        Ok(())
    }
}

/// Node-by-node reachability relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reachability {
    n: usize,
    bits: Vec<bool>,
}

impl Reachability {
    fn set(&mut self, i: NodeId, j: NodeId) {
        self.bits[i * (self.n + 1) + j] = true;
    }

    /// Whether a directed path from `i` to `j` exists.
    pub fn reaches(&self, i: NodeId, j: NodeId) -> bool {
        self.bits[i * (self.n + 1) + j]
    }
}

/// Builds a fully connected layered graph with `h` intermediate layers of
/// `r` nodes each. Node 1 is the source, the intermediate layers follow in
/// order and the sink is the last node. In the general class every arc
/// between intermediate layers is followed by its reversed twin.
pub fn build_layered(h: usize, r: usize, class: GraphClass) -> Graph {
    assert!(h >= 1 && r >= 1, "layered graphs need h >= 1 and r >= 1");
    let node = |layer: usize, k: usize| 1 + (layer - 1) * r + k;
    let sink = h * r + 2;
    let mut arcs = Vec::new();
    for k in 1..=r {
        arcs.push((1, node(1, k)));
    }
    for layer in 1..h {
        for u in 1..=r {
            for v in 1..=r {
                let (a, b) = (node(layer, u), node(layer + 1, v));
                arcs.push((a, b));
                if class == GraphClass::General {
                    arcs.push((b, a));
                }
            }
        }
    }
    for k in 1..=r {
        arcs.push((node(h, k), sink));
    }
    Graph::new(sink, 1, sink, arcs).expect("layered construction is valid")
}

/// A 0/1 vector over arc indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathIncidence {
    pub y: Vec<u8>,
}

impl PathIncidence {
    pub fn from_arcs(num_arcs: usize, arcs: &[ArcId]) -> Self {
        let mut y = vec![0; num_arcs];
        for &a in arcs {
            y[a] = 1;
        }
        PathIncidence { y }
    }

    /// Rounds solver values and keeps only the path reachable from the
    /// source, dropping any disjoint cycles.
    pub fn from_values(g: &Graph, values: &[f64]) -> Self {
        let chosen: Vec<bool> = values.iter().map(|&v| v > 0.5).collect();
        let mut arcs = Vec::new();
        let mut i = g.source();
        let mut steps = 0;
        while i != g.sink() && steps <= g.num_nodes() {
            match g.forward_star(i).iter().copied().find(|&a| chosen[a]) {
                Some(a) => {
                    arcs.push(a);
                    i = g.head(a);
                }
                None => break,
            }
            steps += 1;
        }
        Self::from_arcs(g.num_arcs(), &arcs)
    }

    pub fn contains(&self, a: ArcId) -> bool {
        self.y[a] == 1
    }

    /// Arc indices in the support, in index order.
    pub fn arcs(&self) -> Vec<ArcId> {
        (0..self.y.len()).filter(|&a| self.y[a] == 1).collect()
    }

    /// The arc leaving `i` on this path.
    pub fn next_arc(&self, g: &Graph, i: NodeId) -> Option<ArcId> {
        g.forward_star(i).iter().copied().find(|&a| self.y[a] == 1)
    }

    /// Nodes visited from the source, in order.
    pub fn nodes(&self, g: &Graph) -> Vec<NodeId> {
        let mut out = vec![g.source()];
        let mut i = g.source();
        while let Some(a) = self.next_arc(g, i) {
            i = g.head(a);
            out.push(i);
            if i == g.sink() || out.len() > g.num_nodes() {
                break;
            }
        }
        out
    }

    /// Flow conservation with unit supply at the source and the visit-once
    /// cut on every forward star.
    pub fn satisfies_flow_rows(&self, g: &Graph) -> bool {
        g.nodes().all(|i| {
            let out: u32 = g.forward_star(i).iter().map(|&a| self.y[a] as u32).sum();
            let inn: u32 = g.reverse_star(i).iter().map(|&a| self.y[a] as u32).sum();
            let balance = out as i64 - inn as i64;
            let expected = if i == g.source() {
                1
            } else if i == g.sink() {
                -1
            } else {
                0
            };
            balance == expected && out <= 1
        })
    }

    /// Whether the support is exactly one simple source-to-sink path.
    pub fn is_simple_path(&self, g: &Graph) -> bool {
        if !self.satisfies_flow_rows(g) {
            return false;
        }
        let nodes = self.nodes(g);
        let mut seen = std::collections::HashSet::new();
        nodes.last() == Some(&g.sink())
            && nodes.iter().all(|n| seen.insert(*n))
            && nodes.len() - 1 == self.y.iter().filter(|&&v| v == 1).count()
    }

    pub fn cost(&self, costs: &[f64]) -> f64 {
        self.y.iter().zip(costs).map(|(&y, &c)| y as f64 * c).sum()
    }
}

/// The eight-node network with a budget on the middle arcs and one
/// difference constraint revealed at node 2.
#[derive(Debug, Clone)]
pub struct Example1 {
    pub graph: Graph,
    pub ambiguity: AmbiguitySet,
    pub auxiliary: Vec<AuxiliaryConstraint>,
}

pub fn build_example1() -> Example1 {
    let arcs = vec![
        (1, 2),
        (1, 3),
        (2, 4),
        (2, 5),
        (3, 6),
        (3, 7),
        (4, 8),
        (5, 8),
        (6, 8),
        (7, 8),
    ];
    let graph = Graph::new(8, 1, 8, arcs).expect("valid network");
    let middle: Vec<ArcId> = [(2, 4), (2, 5), (3, 6), (3, 7)]
        .iter()
        .map(|&(t, h)| graph.find_arc(t, h).unwrap())
        .collect();
    let supports: Vec<(f64, f64)> = (0..graph.num_arcs())
        .map(|a| {
            if middle.contains(&a) {
                (0.0, 1.0)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let mut ambiguity = AmbiguitySet::with_supports(&supports);
    ambiguity.rows.push(ExpectationRow {
        coeffs: middle.iter().map(|&a| (a, 1.0)).collect(),
        rhs: 1.0,
        sense: RowKind::Le,
    });
    let auxiliary = vec![AuxiliaryConstraint {
        node: 2,
        kind: AuxKind::Expectation {
            coeffs: vec![(middle[0], 1.0), (middle[1], -1.0)],
            rhs: 0.0,
        },
    }];
    Example1 {
        graph,
        ambiguity,
        auxiliary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layered_sizes() {
        let g = build_layered(2, 2, GraphClass::Acyclic);
        assert_eq!((g.num_nodes(), g.num_arcs()), (6, 8));
        let g = build_layered(2, 2, GraphClass::General);
        assert_eq!((g.num_nodes(), g.num_arcs()), (6, 12));
        assert!(!g.is_acyclic());
        let g = build_layered(1, 1, GraphClass::Acyclic);
        assert_eq!(g.arcs(), &[(1, 2), (2, 3)]);
    }

    #[test]
    fn general_graph_reaches_backwards() {
        let g = build_layered(2, 2, GraphClass::General);
        let r = g.reachability();
        assert!(r.reaches(4, 3));
        assert!(r.reaches(4, 2));
        assert!(!r.reaches(6, 1));
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert_eq!(Graph::new(2, 1, 1, vec![]), Err(GraphError::SourceIsSink));
        assert_eq!(
            Graph::new(2, 1, 2, vec![(1, 1)]),
            Err(GraphError::SelfLoop(1))
        );
        assert_eq!(
            Graph::new(2, 1, 2, vec![(1, 2), (1, 2)]),
            Err(GraphError::ParallelArc(1, 2))
        );
        assert_eq!(
            Graph::new(3, 1, 2, vec![(1, 2)]),
            Err(GraphError::Disconnected(3))
        );
    }

    #[test]
    fn path_helpers() {
        let g = build_layered(2, 2, GraphClass::Acyclic);
        let paths = g.enumerate_simple_paths(10).unwrap();
        assert_eq!(paths.len(), 4);
        assert_eq!(paths[0].nodes(&g), vec![1, 2, 4, 6]);
        assert!(paths.iter().all(|p| p.is_simple_path(&g)));
        assert_eq!(g.enumerate_simple_paths(3), Err(GraphError::CapExceeded(3)));
        let values: Vec<f64> = paths[3].y.iter().map(|&v| v as f64).collect();
        assert_eq!(PathIncidence::from_values(&g, &values), paths[3]);
    }

    #[test]
    fn json_round_trip() {
        let g = build_layered(2, 2, GraphClass::General);
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.starts_with("{\"nodes\":6,\"source\":1,\"sink\":6,\"arcs\":[[1,2]"));
        let back: Graph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
