//! Synthetic instances: beta-distributed nominal costs, sample sets, the
//! data-driven initial ambiguity set, sensor placement and auxiliary
//! constraint generation.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::ambiguity::{
    build_s0, AmbiguityError, AmbiguitySet, AuxKind, AuxiliaryConstraint, ExpectationRow,
    Polyhedron, RowKind,
};
use crate::graph::{build_layered, ArcId, Graph, GraphClass, NodeId};
use crate::verification::hoeffding_epsilon;
use drsp_solver::Sense;

/// Sensor re-placements tolerated before giving up on an auxiliary list.
pub const MAX_REPLACEMENTS: usize = 100;

/// Candidates whose two extreme values differ by less than this are vacuous.
const VACUOUS_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DataGenError {
    #[error("mean {m} is outside the admissible range for standard deviation {sigma}")]
    MeanOutOfRange { m: f64, sigma: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not collect {wanted} auxiliary constraints after {attempts} sensor placements")]
    GenerationStalled { wanted: usize, attempts: usize },
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
}

/// Independent random streams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Means = 1,
    Train = 2,
    Verify = 3,
    Sensors = 4,
    Picks = 5,
    Coins = 6,
}

pub fn stream_rng(root: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream as u64);
    rng
}

/// Open interval of means for which a beta distribution with standard
/// deviation `sigma` on `[0, 1]` exists.
pub fn mean_interval(sigma: f64) -> (f64, f64) {
    let d = (1.0 - 4.0 * sigma * sigma).sqrt();
    (0.5 * (1.0 - d), 0.5 * (1.0 + d))
}

/// Beta shape parameters with mean `m` and standard deviation `sigma`.
pub fn beta_params(m: f64, sigma: f64) -> Result<(f64, f64), DataGenError> {
    let (lo, hi) = mean_interval(sigma);
    if !(sigma > 0.0 && sigma < 0.5 && m > lo && m < hi) {
        return Err(DataGenError::MeanOutOfRange { m, sigma });
    }
    let alpha = m * m * (1.0 - m) / (sigma * sigma) - m;
    let beta = alpha * (1.0 / m - 1.0);
    Ok((alpha, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalMarginal {
    pub arc: ArcId,
    pub mean: f64,
    pub stddev: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Nominal distribution: independent beta marginals, one per arc, where a
/// reversed twin shares the marginal and the draws of its partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nominal {
    pub marginals: Vec<NominalMarginal>,
    /// For every arc, the arc whose draw it copies (itself when it owns one).
    pub owner: Vec<ArcId>,
}

/// Arc owning the draw of `a`: the orientation with the smaller tail.
fn owner_of(g: &Graph, a: ArcId) -> ArcId {
    let (t, h) = g.arc(a);
    match g.reverse_of(a) {
        Some(b) if h < t => b,
        _ => a,
    }
}

pub fn sample_nominal(g: &Graph, sigma: f64, rng: &mut impl Rng) -> Result<Nominal, DataGenError> {
    let (lo, hi) = mean_interval(sigma);
    let owner: Vec<ArcId> = (0..g.num_arcs()).map(|a| owner_of(g, a)).collect();
    let mut marginals: Vec<Option<NominalMarginal>> = vec![None; g.num_arcs()];
    for a in 0..g.num_arcs() {
        if owner[a] != a {
            continue;
        }
        let mut m = rng.random_range(lo..hi);
        while m <= lo {
            m = rng.random_range(lo..hi);
        }
        let (alpha, beta) = beta_params(m, sigma)?;
        marginals[a] = Some(NominalMarginal {
            arc: a,
            mean: m,
            stddev: sigma,
            alpha,
            beta,
        });
    }
    let marginals = (0..g.num_arcs())
        .map(|a| NominalMarginal {
            arc: a,
            ..marginals[owner[a]].expect("owner drawn")
        })
        .collect();
    Ok(Nominal { marginals, owner })
}

impl Nominal {
    pub fn num_arcs(&self) -> usize {
        self.marginals.len()
    }

    /// `n` i.i.d. cost vectors.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> SampleSet {
        let dists: Vec<Option<Beta<f64>>> = self
            .marginals
            .iter()
            .enumerate()
            .map(|(a, m)| {
                (self.owner[a] == a).then(|| Beta::new(m.alpha, m.beta).expect("positive shapes"))
            })
            .collect();
        let rows = (0..n)
            .map(|_| {
                let mut row = vec![0.0; self.num_arcs()];
                for a in 0..self.num_arcs() {
                    if let Some(d) = &dists[a] {
                        row[a] = d.sample(rng);
                    }
                }
                for a in 0..self.num_arcs() {
                    row[a] = row[self.owner[a]];
                }
                row
            })
            .collect();
        SampleSet { rows }
    }

    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.mean).collect()
    }
}

/// Cost observations, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub rows: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The first `n` rows.
    pub fn prefix(&self, n: usize) -> SampleSet {
        SampleSet {
            rows: self.rows[..n.min(self.rows.len())].to_vec(),
        }
    }
}

/// Arcs in the budget of node `i`: its forward and reverse stars, with an
/// outgoing arc dropped when its reversed twin is already counted.
pub fn budget_arcs(g: &Graph, i: NodeId) -> Vec<ArcId> {
    let mut arcs: Vec<ArcId> = g.reverse_star(i).to_vec();
    arcs.extend(
        g.forward_star(i)
            .iter()
            .copied()
            .filter(|&a| g.reverse_of(a).is_none()),
    );
    arcs.sort_unstable();
    arcs
}

/// Supports `[0, 1]`, one budget row per node with a Hoeffding upper
/// confidence bound, and equal expectations for reversed twins.
pub fn build_initial_ambiguity(
    g: &Graph,
    train: &SampleSet,
    eta: f64,
) -> Result<AmbiguitySet, DataGenError> {
    if train.is_empty() {
        return Err(DataGenError::InvalidConfig("empty training sample".into()));
    }
    let mut amb = AmbiguitySet::with_supports(&vec![(0.0, 1.0); g.num_arcs()]);
    let level = 1.0 - (1.0 - eta) / g.num_nodes() as f64;
    for i in g.nodes() {
        let arcs = budget_arcs(g, i);
        if arcs.is_empty() {
            continue;
        }
        let mean = train
            .rows
            .iter()
            .map(|row| arcs.iter().map(|&a| row[a]).sum::<f64>())
            .sum::<f64>()
            / train.len() as f64;
        let gamma = mean + hoeffding_epsilon(train.len(), level, arcs.len() as f64);
        amb.rows.push(ExpectationRow {
            coeffs: arcs.iter().map(|&a| (a, 1.0)).collect(),
            rhs: gamma,
            sense: RowKind::Le,
        });
    }
    for a in 0..g.num_arcs() {
        let (t, h) = g.arc(a);
        if let Some(b) = g.reverse_of(a) {
            if t < h {
                amb.rows.push(ExpectationRow {
                    coeffs: vec![(a, 1.0), (b, -1.0)],
                    rhs: 0.0,
                    sense: RowKind::Eq,
                });
            }
        }
    }
    Ok(amb)
}

/// Independent Bernoulli(`kappa`) sensors; `sensed[i]` for node id `i`.
pub fn place_sensors(g: &Graph, kappa: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut sensed = vec![false; g.num_nodes() + 1];
    for i in g.nodes() {
        sensed[i] = rng.random_bool(kappa.clamp(0.0, 1.0));
    }
    sensed
}

/// Which kind of auxiliary constraints to generate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AuxMode {
    Expectation,
    /// `Q{c_a in [0.5, 1]} <= threshold` on arcs between sensed nodes.
    Probability {
        threshold: f64,
    },
}

/// Candidate auxiliary constraints per node, grouped by family, before
/// thresholds are set. Expectation candidates carry coefficients.
#[derive(Debug, Clone, PartialEq)]
enum Candidate {
    Expectation(Vec<(ArcId, f64)>),
    Probability(ArcId),
}

fn candidates(g: &Graph, sensed: &[bool], mode: AuxMode) -> BTreeMap<NodeId, Vec<Vec<Candidate>>> {
    let mut out: BTreeMap<NodeId, Vec<Vec<Candidate>>> = BTreeMap::new();
    for i in g.nodes() {
        let forward: Vec<ArcId> = g
            .forward_star(i)
            .iter()
            .copied()
            .filter(|&a| g.head(a) > i)
            .collect();
        let mut families: Vec<Vec<Candidate>> = Vec::new();
        match mode {
            AuxMode::Probability { .. } => {
                if sensed[i] {
                    let c: Vec<Candidate> = forward
                        .iter()
                        .filter(|&&a| sensed[g.head(a)])
                        .map(|&a| Candidate::Probability(a))
                        .collect();
                    families.push(c);
                }
            }
            AuxMode::Expectation => {
                if sensed[i] {
                    families.push(
                        forward
                            .iter()
                            .filter(|&&a| sensed[g.head(a)])
                            .map(|&a| Candidate::Expectation(vec![(a, 1.0)]))
                            .collect(),
                    );
                } else {
                    let pairs: Vec<(ArcId, ArcId)> = forward
                        .iter()
                        .enumerate()
                        .flat_map(|(k, &a)| forward[k + 1..].iter().map(move |&b| (a, b)))
                        .filter(|&(a, b)| sensed[g.head(a)] && sensed[g.head(b)])
                        .map(|(a, b)| {
                            if g.head(a) < g.head(b) {
                                (a, b)
                            } else {
                                (b, a)
                            }
                        })
                        .collect();
                    if g.predecessors(i).any(|p| sensed[p]) {
                        families.push(
                            pairs
                                .iter()
                                .map(|&(a, b)| Candidate::Expectation(vec![(a, 1.0), (b, -1.0)]))
                                .collect(),
                        );
                    }
                    families.push(
                        pairs
                            .iter()
                            .filter(|&&(a, b)| {
                                g.reverse_of(a).is_some() || g.reverse_of(b).is_some()
                            })
                            .map(|&(a, b)| Candidate::Expectation(vec![(a, 1.0), (b, 1.0)]))
                            .collect(),
                    );
                }
            }
        }
        families.retain(|f| !f.is_empty());
        if !families.is_empty() {
            out.insert(i, families);
        }
    }
    out
}

/// Midpoint threshold of a linear form over `s0`, or `None` when the form
/// is constant there.
fn midpoint_threshold(
    s0: &Polyhedron,
    coeffs: &[(ArcId, f64)],
) -> Result<Option<f64>, DataGenError> {
    let mut obj = vec![0.0; s0.num_arcs()];
    for &(a, v) in coeffs {
        obj[a] += v;
    }
    let lo = s0
        .optimize(Sense::Minimize, &obj)
        .map_err(AmbiguityError::from)?;
    let hi = s0
        .optimize(Sense::Maximize, &obj)
        .map_err(AmbiguityError::from)?;
    match (lo, hi) {
        (Some((lo, _)), Some((hi, _))) if hi - lo > VACUOUS_TOL => Ok(Some(0.5 * (lo + hi))),
        _ => Ok(None),
    }
}

/// Draws from the candidates at one placement until `count` constraints are
/// collected or the candidates run out.
fn collect(
    g: &Graph,
    s0: &Polyhedron,
    sensed: &[bool],
    count: usize,
    mode: AuxMode,
    rng: &mut impl Rng,
) -> Result<Vec<AuxiliaryConstraint>, DataGenError> {
    let mut pool = candidates(g, sensed, mode);
    let mut list: Vec<AuxiliaryConstraint> = Vec::new();
    while list.len() < count && !pool.is_empty() {
        let nodes: Vec<NodeId> = pool.keys().copied().collect();
        let node = nodes[rng.random_range(0..nodes.len())];
        let families = pool.get_mut(&node).unwrap();
        let f = rng.random_range(0..families.len());
        let k = rng.random_range(0..families[f].len());
        let cand = families[f].swap_remove(k);
        families.retain(|f| !f.is_empty());
        if families.is_empty() {
            pool.remove(&node);
        }
        let kind = match cand {
            Candidate::Expectation(coeffs) => match midpoint_threshold(s0, &coeffs)? {
                Some(rhs) => AuxKind::Expectation { coeffs, rhs },
                None => continue,
            },
            Candidate::Probability(arc) => match mode {
                AuxMode::Probability { threshold } => AuxKind::Probability {
                    arc,
                    l: 0.5,
                    u: 1.0,
                    threshold,
                },
                AuxMode::Expectation => unreachable!(),
            },
        };
        let c = AuxiliaryConstraint { node, kind };
        if !list.contains(&c) {
            list.push(c);
        }
    }
    Ok(list)
}

/// Result of auxiliary constraint generation.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDraw {
    pub list: Vec<AuxiliaryConstraint>,
    pub sensed: Vec<bool>,
    pub replacements: usize,
}

/// Places sensors and collects `count` auxiliary constraints, re-placing
/// the sensors from scratch whenever the candidates run out.
pub fn generate_auxiliary(
    g: &Graph,
    s0: &Polyhedron,
    count: usize,
    mode: AuxMode,
    kappa: f64,
    sensor_rng: &mut impl Rng,
    pick_rng: &mut impl Rng,
) -> Result<AuxiliaryDraw, DataGenError> {
    for replacements in 0..=MAX_REPLACEMENTS {
        let sensed = place_sensors(g, kappa, sensor_rng);
        let list = collect(g, s0, &sensed, count, mode, pick_rng)?;
        if list.len() == count {
            return Ok(AuxiliaryDraw {
                list,
                sensed,
                replacements,
            });
        }
    }
    Err(DataGenError::GenerationStalled {
        wanted: count,
        attempts: MAX_REPLACEMENTS + 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceConfig {
    pub h: usize,
    pub r: usize,
    pub class: GraphClass,
    pub kappa: f64,
    pub n_train: usize,
    pub n_verify: usize,
    pub eta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub num_aux: usize,
    pub aux_mode: AuxMode,
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            h: 3,
            r: 3,
            class: GraphClass::Acyclic,
            kappa: 0.5,
            n_train: 60,
            n_verify: 60,
            eta: 0.95,
            gamma: 0.95,
            sigma: 0.125,
            num_aux: 3,
            aux_mode: AuxMode::Expectation,
            seed: 0,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<(), DataGenError> {
        let bad = |m: &str| Err(DataGenError::InvalidConfig(m.into()));
        if self.h == 0 || self.r == 0 {
            return bad("h and r must be positive");
        }
        if self.n_train == 0 || self.n_verify == 0 {
            return bad("sample sizes must be positive");
        }
        for (name, p) in [
            ("kappa", self.kappa),
            ("eta", self.eta),
            ("gamma", self.gamma),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(&format!("{name} must lie in (0, 1]"));
            }
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return bad("sigma must lie in (0, 0.5)");
        }
        if let AuxMode::Probability { threshold } = self.aux_mode {
            if !(threshold > 0.0 && threshold < 1.0) {
                return bad("probability threshold must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

/// A generated test instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub config: InstanceConfig,
    pub graph: Graph,
    pub ambiguity: AmbiguitySet,
    pub auxiliary: Vec<AuxiliaryConstraint>,
    pub sensors: Vec<NodeId>,
    pub nominal: Nominal,
    pub train: SampleSet,
    pub verify: SampleSet,
}

impl Instance {
    /// The same instance with only the first `k` auxiliary constraints.
    pub fn with_prefix(&self, k: usize) -> Instance {
        let mut out = self.clone();
        out.auxiliary.truncate(k);
        out
    }
}

/// Generates an instance deterministically from its configuration.
pub fn generate_instance(cfg: &InstanceConfig) -> Result<Instance, DataGenError> {
    cfg.validate()?;
    let graph = build_layered(cfg.h, cfg.r, cfg.class);
    let nominal = sample_nominal(&graph, cfg.sigma, &mut stream_rng(cfg.seed, Stream::Means))?;
    let train = nominal.sample(cfg.n_train, &mut stream_rng(cfg.seed, Stream::Train));
    let verify = nominal.sample(cfg.n_verify, &mut stream_rng(cfg.seed, Stream::Verify));
    let ambiguity = build_initial_ambiguity(&graph, &train, cfg.eta)?;
    let s0 = build_s0(&ambiguity)?;
    let draw = generate_auxiliary(
        &graph,
        &s0,
        cfg.num_aux,
        cfg.aux_mode,
        cfg.kappa,
        &mut stream_rng(cfg.seed, Stream::Sensors),
        &mut stream_rng(cfg.seed, Stream::Picks),
    )?;
    let sensors: BTreeSet<NodeId> = graph.nodes().filter(|&i| draw.sensed[i]).collect();
    Ok(Instance {
        config: cfg.clone(),
        graph,
        ambiguity,
        auxiliary: draw.list,
        sensors: sensors.into_iter().collect(),
        nominal,
        train,
        verify,
    })
}
