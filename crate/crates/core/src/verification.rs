//! Online verification of auxiliary constraints from held-out samples,
//! forced resolution of undecided constraints, and the walk that a user
//! following a multistage policy takes once the responses are known.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySet, AuxFamily, AuxKind, AuxiliaryConstraint, ResponseVector};
use crate::datagen::SampleSet;
use crate::formulations::MultiStagePolicy;
use crate::graph::{ArcId, Graph, NodeId, PathIncidence};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VerificationError {
    #[error("response indices {candidates:?} prescribe different arcs at node {node}")]
    NonAnticipativityViolation {
        node: NodeId,
        candidates: Vec<usize>,
    },
    #[error("the walk did not reach the sink within {0} steps")]
    WalkTooLong(usize),
    #[error("policy has {got} paths, expected {expected}")]
    PolicySize { expected: usize, got: usize },
}

/// Radius `range * sqrt(ln(2 / (1 - level)) / (2 n))` of the two-sided
/// Hoeffding interval for a mean of `n` bounded variables.
pub fn hoeffding_epsilon(n: usize, level: f64, range: f64) -> f64 {
    range * ((2.0 / (1.0 - level)).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub index: usize,
    pub verdict: Verdict,
    pub statistic: f64,
    pub epsilon: f64,
    pub threshold: f64,
}

fn verdict(statistic: f64, epsilon: f64, threshold: f64) -> Verdict {
    if statistic + epsilon <= threshold {
        Verdict::Satisfied
    } else if statistic - epsilon > threshold {
        Verdict::Violated
    } else {
        Verdict::Undetermined
    }
}

/// Tests constraint `index` of the list against the sample. Only the
/// columns of the constraint's arcs are read.
pub fn verify_constraint(
    index: usize,
    c: &AuxiliaryConstraint,
    amb: &AmbiguitySet,
    set: &SampleSet,
    gamma: f64,
) -> VerificationResult {
    let n = set.len();
    let (statistic, range, threshold) = match &c.kind {
        AuxKind::Probability {
            arc,
            l,
            u,
            threshold,
        } => {
            let hits = set
                .rows
                .iter()
                .filter(|r| r[*arc] >= *l && r[*arc] <= *u)
                .count();
            (hits as f64 / n as f64, 1.0, *threshold)
        }
        AuxKind::Expectation { coeffs, rhs } => {
            let mean = set
                .rows
                .iter()
                .map(|r| coeffs.iter().map(|&(a, p)| p * r[a]).sum::<f64>())
                .sum::<f64>()
                / n as f64;
            let range: f64 = coeffs
                .iter()
                .map(|&(a, p)| {
                    let (l, u) = amb.support(a);
                    p.abs() * (u - l)
                })
                .sum();
            (mean, range, *rhs)
        }
    };
    let epsilon = hoeffding_epsilon(n, gamma, range);
    VerificationResult {
        index,
        verdict: verdict(statistic, epsilon, threshold),
        statistic,
        epsilon,
        threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Verified,
    ForcedWorstCase,
    ForcedCoin,
}

/// Resolution of an undecided constraint: difference constraints by a fair
/// coin, everything else as violated.
pub fn force_resolution(c: &AuxiliaryConstraint, rng: &mut impl Rng) -> (bool, Provenance) {
    match c.family() {
        AuxFamily::Difference => (rng.random_bool(0.5), Provenance::ForcedCoin),
        _ => (false, Provenance::ForcedWorstCase),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedResponses {
    pub bits: Vec<bool>,
    pub provenance: Vec<Provenance>,
}

impl ResolvedResponses {
    pub fn response(&self) -> ResponseVector {
        ResponseVector {
            bits: self.bits.clone(),
        }
    }
}

/// Verifies every constraint of the list and forces the undecided ones.
pub fn resolve_all(
    list: &[AuxiliaryConstraint],
    amb: &AmbiguitySet,
    set: &SampleSet,
    gamma: f64,
    rng: &mut impl Rng,
) -> (ResolvedResponses, Vec<VerificationResult>) {
    let mut bits = Vec::with_capacity(list.len());
    let mut provenance = Vec::with_capacity(list.len());
    let mut results = Vec::with_capacity(list.len());
    for (m, c) in list.iter().enumerate() {
        let res = verify_constraint(m, c, amb, set, gamma);
        let (bit, prov) = match res.verdict {
            Verdict::Satisfied => (true, Provenance::Verified),
            Verdict::Violated => (false, Provenance::Verified),
            Verdict::Undetermined => force_resolution(c, rng),
        };
        bits.push(bit);
        provenance.push(prov);
        results.push(res);
    }
    (ResolvedResponses { bits, provenance }, results)
}

#[derive(Debug, Serialize)]
struct TraceLine<'a> {
    index: usize,
    node: NodeId,
    family: AuxFamily,
    statistic: f64,
    epsilon: f64,
    threshold: f64,
    verdict: Verdict,
    provenance: Provenance,
    bit: bool,
    arcs: &'a [ArcId],
}

/// One JSON object per constraint, newline separated.
pub fn trace_json_lines(
    list: &[AuxiliaryConstraint],
    resolved: &ResolvedResponses,
    results: &[VerificationResult],
) -> String {
    let mut out = String::new();
    for (m, (c, r)) in list.iter().zip(results).enumerate() {
        let arcs = c.arcs();
        let line = TraceLine {
            index: m,
            node: c.node,
            family: c.family(),
            statistic: r.statistic,
            epsilon: r.epsilon,
            threshold: r.threshold,
            verdict: r.verdict,
            provenance: resolved.provenance[m],
            bit: resolved.bits[m],
            arcs: &arcs,
        };
        out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

/// Result of following a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walk {
    pub path: PathIncidence,
    /// 1-based response index identified at the sink.
    pub scenario: usize,
    pub visited: Vec<NodeId>,
}

/// Follows the policy from the source. At each node the bits of the
/// constraints attached there are revealed and the candidate response
/// indices filtered; all remaining candidates must prescribe the same arc.
pub fn simulate_walk(
    policy: &MultiStagePolicy,
    list: &[AuxiliaryConstraint],
    responses: &ResolvedResponses,
    g: &Graph,
) -> Result<Walk, VerificationError> {
    let count = 1usize << list.len();
    if policy.paths.len() != count {
        return Err(VerificationError::PolicySize {
            expected: count,
            got: policy.paths.len(),
        });
    }
    let mut candidates: Vec<usize> = (1..=count).collect();
    let mut i = g.source();
    let mut visited = vec![i];
    let mut arcs: Vec<ArcId> = Vec::new();
    while i != g.sink() {
        if arcs.len() > g.num_nodes() {
            return Err(VerificationError::WalkTooLong(g.num_nodes()));
        }
        for (m, c) in list.iter().enumerate() {
            if c.node == i {
                let bit = responses.bits[m];
                candidates.retain(|&j| ((j - 1) >> m & 1 == 1) == bit);
            }
        }
        let next: Vec<Option<ArcId>> = candidates
            .iter()
            .map(|&j| policy.paths[j - 1].next_arc(g, i))
            .collect();
        let a = match next.first() {
            Some(&Some(a)) if next.iter().all(|&n| n == Some(a)) => a,
            _ => {
                return Err(VerificationError::NonAnticipativityViolation {
                    node: i,
                    candidates: candidates.clone(),
                })
            }
        };
        arcs.push(a);
        i = g.head(a);
        visited.push(i);
    }
    let scenario = responses.response().index();
    debug_assert!(candidates.contains(&scenario));
    Ok(Walk {
        path: PathIncidence::from_arcs(g.num_arcs(), &arcs),
        scenario,
        visited,
    })
}
