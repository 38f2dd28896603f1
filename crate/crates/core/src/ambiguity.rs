//! Ambiguity sets, auxiliary distributional constraints, attacker response
//! vectors and the expected-cost polyhedra they induce.

use drsp_solver::{solve_lp, LinearProgram, LpStatus, RowSense, Sense, SolverError};
use serde::{Deserialize, Serialize};

use crate::graph::{ArcId, NodeId};

/// Tolerance used when comparing polyhedral rows and boxes.
pub const POLY_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum AmbiguityError {
    #[error("probability constraints on arc {arc} admit no distribution")]
    InfeasibleAmbiguity { arc: ArcId },
    #[error("arc {0} has no support constraint")]
    MissingSupport(ArcId),
    #[error("row references arc {0}, which does not exist")]
    UnknownArc(ArcId),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// `Q{c_a in [l, u]} in [q_lo, q_hi]` for one arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityConstraint {
    pub arc: ArcId,
    pub l: f64,
    pub u: f64,
    pub q_lo: f64,
    pub q_hi: f64,
}

impl ProbabilityConstraint {
    pub fn support(arc: ArcId, l: f64, u: f64) -> Self {
        Self {
            arc,
            l,
            u,
            q_lo: 1.0,
            q_hi: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Le,
    Eq,
}

/// A linear constraint on expected arc costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationRow {
    #[serde(with = "sparse_coeffs")]
    pub coeffs: Vec<(ArcId, f64)>,
    pub rhs: f64,
    pub sense: RowKind,
}

/// Interval probability constraints per arc plus linear expectation rows.
///
/// The first constraint listed for every arc is its support.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguitySet {
    pub prob: Vec<Vec<ProbabilityConstraint>>,
    pub rows: Vec<ExpectationRow>,
}

impl AmbiguitySet {
    /// An ambiguity set with only the given per-arc supports.
    pub fn with_supports(supports: &[(f64, f64)]) -> Self {
        Self {
            prob: supports
                .iter()
                .enumerate()
                .map(|(a, &(l, u))| vec![ProbabilityConstraint::support(a, l, u)])
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn num_arcs(&self) -> usize {
        self.prob.len()
    }

    pub fn support(&self, a: ArcId) -> (f64, f64) {
        let s = &self.prob[a][0];
        (s.l, s.u)
    }

    pub fn validate(&self) -> Result<(), AmbiguityError> {
        for (a, list) in self.prob.iter().enumerate() {
            match list.first() {
                Some(s) if s.q_lo == 1.0 && s.q_hi == 1.0 && s.l <= s.u => {}
                _ => return Err(AmbiguityError::MissingSupport(a)),
            }
        }
        for row in &self.rows {
            if let Some(&(a, _)) = row.coeffs.iter().find(|(a, _)| *a >= self.num_arcs()) {
                return Err(AmbiguityError::UnknownArc(a));
            }
        }
        Ok(())
    }
}

/// One entry of the auxiliary list, attached to the node where it is revealed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryConstraint {
    pub node: NodeId,
    #[serde(flatten)]
    pub kind: AuxKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AuxKind {
    /// `Q{c_arc in [l, u]} <= threshold`.
    Probability {
        arc: ArcId,
        l: f64,
        u: f64,
        threshold: f64,
    },
    /// `E{sum_a coeffs_a c_a} <= rhs`.
    Expectation {
        #[serde(with = "sparse_coeffs")]
        coeffs: Vec<(ArcId, f64)>,
        rhs: f64,
    },
}

/// Shape of an expectation-kind auxiliary constraint, read off its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxFamily {
    Individual,
    Difference,
    Sum,
    Probability,
}

impl AuxiliaryConstraint {
    pub fn family(&self) -> AuxFamily {
        match &self.kind {
            AuxKind::Probability { .. } => AuxFamily::Probability,
            AuxKind::Expectation { coeffs, .. } => {
                let nz: Vec<f64> = coeffs.iter().map(|c| c.1).filter(|&v| v != 0.0).collect();
                if nz.len() <= 1 {
                    AuxFamily::Individual
                } else if nz.iter().any(|&v| v > 0.0) && nz.iter().any(|&v| v < 0.0) {
                    AuxFamily::Difference
                } else {
                    AuxFamily::Sum
                }
            }
        }
    }

    /// Arcs referenced by the constraint.
    pub fn arcs(&self) -> Vec<ArcId> {
        match &self.kind {
            AuxKind::Probability { arc, .. } => vec![*arc],
            AuxKind::Expectation { coeffs, .. } => coeffs.iter().map(|c| c.0).collect(),
        }
    }
}

/// Attacker answers to the auxiliary list; `true` means "satisfied".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResponseVector {
    pub bits: Vec<bool>,
}

impl ResponseVector {
    /// The vector with 1-based index `j`; bit `m` is binary digit `m` of `j - 1`.
    pub fn from_index(j: usize, len: usize) -> Self {
        assert!(j >= 1 && (len >= usize::BITS as usize || j <= 1 << len));
        Self {
            bits: (0..len).map(|m| (j - 1) >> m & 1 == 1).collect(),
        }
    }

    pub fn index(&self) -> usize {
        1 + self
            .bits
            .iter()
            .enumerate()
            .map(|(m, &b)| (b as usize) << m)
            .sum::<usize>()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// All `2^len` vectors in index order.
    pub fn all(len: usize) -> Vec<Self> {
        (1..=1usize << len)
            .map(|j| Self::from_index(j, len))
            .collect()
    }
}

/// A `<=` row over expected arc costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyRow {
    pub coeffs: Vec<(ArcId, f64)>,
    pub rhs: f64,
}

impl PolyRow {
    pub fn value(&self, c: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(a, v)| v * c[a]).sum()
    }

    pub fn negated(&self) -> Self {
        PolyRow {
            coeffs: self.coeffs.iter().map(|&(a, v)| (a, -v)).collect(),
            rhs: -self.rhs,
        }
    }
}

/// `{c : lower <= c <= upper, rows}`. A box with `lower > upper` on some arc
/// denotes the empty set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<PolyRow>,
}

impl Polyhedron {
    pub fn num_arcs(&self) -> usize {
        self.lower.len()
    }

    /// Box and rows as one `<=` system: `c_a <= U_a`, `-c_a <= -L_a`, rows.
    pub fn system(&self) -> Vec<PolyRow> {
        let mut out = Vec::with_capacity(2 * self.num_arcs() + self.rows.len());
        for a in 0..self.num_arcs() {
            out.push(PolyRow {
                coeffs: vec![(a, 1.0)],
                rhs: self.upper[a],
            });
            out.push(PolyRow {
                coeffs: vec![(a, -1.0)],
                rhs: -self.lower[a],
            });
        }
        out.extend(self.rows.iter().cloned());
        out
    }

    fn box_is_empty(&self) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| l > &(u + POLY_TOL))
    }

    /// LP over the polyhedron; arc costs are variables `0..num_arcs`.
    pub fn to_lp(&self, sense: Sense, objective: &[f64]) -> LinearProgram {
        let mut lp = LinearProgram::new(sense);
        for a in 0..self.num_arcs() {
            let (l, u) = (self.lower[a], self.upper[a].max(self.lower[a]));
            lp.add_var(
                format!("c[{a}]"),
                l,
                u,
                objective.get(a).copied().unwrap_or(0.0),
            );
        }
        for (k, row) in self.rows.iter().enumerate() {
            lp.add_row(
                format!("row[{k}]"),
                row.coeffs.iter().copied(),
                RowSense::Le,
                row.rhs,
            );
        }
        lp
    }

    /// Optimizes a linear function; `None` when the polyhedron is empty.
    pub fn optimize(
        &self,
        sense: Sense,
        objective: &[f64],
    ) -> Result<Option<(f64, Vec<f64>)>, SolverError> {
        if self.box_is_empty() {
            return Ok(None);
        }
        let sol = solve_lp(&self.to_lp(sense, objective))?;
        match sol.status {
            LpStatus::Optimal => Ok(Some((sol.objective, sol.x))),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(SolverError::UnboundedRelaxation),
        }
    }

    /// Whether the polyhedron is nonempty.
    pub fn is_feasible(&self) -> Result<bool, SolverError> {
        Ok(self.optimize(Sense::Minimize, &[])?.is_some())
    }

    pub fn contains(&self, c: &[f64], tol: f64) -> bool {
        (0..self.num_arcs()).all(|a| c[a] >= self.lower[a] - tol && c[a] <= self.upper[a] + tol)
            && self.rows.iter().all(|r| r.value(c) <= r.rhs + tol)
    }
}

/// Smallest and largest expected cost over all distributions satisfying the
/// interval probability constraints of one arc.
///
/// The extremal problems are solved as finite LPs. Atoms are placed at every
/// interval endpoint and in every open cell between consecutive endpoints.
/// A cell atom counts towards an interval when the cell lies inside it and
/// is valued at the cell end favorable to the objective, which gives the
/// supremum (or infimum) even when it is not attained.
pub fn marginal_expectation_bounds(
    constraints: &[ProbabilityConstraint],
) -> Result<(f64, f64), AmbiguityError> {
    let support = constraints
        .first()
        .ok_or(AmbiguityError::MissingSupport(0))?;
    let arc = support.arc;
    let (sl, su) = (support.l, support.u);
    let mut points: Vec<f64> = vec![sl, su];
    for c in constraints {
        for p in [c.l, c.u] {
            if p > sl && p < su {
                points.push(p);
            }
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();

    let solve = |sense: Sense| -> Result<f64, AmbiguityError> {
        let mut lp = LinearProgram::new(sense);
        // (value if at the favorable end, membership test)
        let mut atoms: Vec<(f64, f64, f64)> = Vec::new(); // (value, left, right)
        for &p in &points {
            atoms.push((p, p, p));
        }
        for w in points.windows(2) {
            let v = if sense == Sense::Maximize { w[1] } else { w[0] };
            atoms.push((v, w[0], w[1]));
        }
        let vars: Vec<usize> = atoms
            .iter()
            .enumerate()
            .map(|(k, &(v, _, _))| lp.add_var(format!("m{k}"), 0.0, 1.0, v))
            .collect();
        lp.add_row("total", vars.iter().map(|&v| (v, 1.0)), RowSense::Eq, 1.0);
        for (k, c) in constraints.iter().enumerate().skip(1) {
            let members: Vec<(usize, f64)> = atoms
                .iter()
                .zip(&vars)
                .filter(|((_, left, right), _)| c.l <= *left && *right <= c.u)
                .map(|(_, &v)| (v, 1.0))
                .collect();
            if c.q_lo > 0.0 {
                lp.add_row(format!("lo{k}"), members.clone(), RowSense::Ge, c.q_lo);
            }
            if c.q_hi < 1.0 {
                lp.add_row(format!("hi{k}"), members, RowSense::Le, c.q_hi);
            }
        }
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(sol.objective),
            _ => Err(AmbiguityError::InfeasibleAmbiguity { arc }),
        }
    };
    let lo = solve(Sense::Minimize)?;
    let hi = solve(Sense::Maximize)?;
    Ok((lo.max(sl), hi.min(su)))
}

/// The base polyhedron: marginal boxes plus all expectation rows, with
/// equalities split into two opposite rows.
pub fn build_s0(amb: &AmbiguitySet) -> Result<Polyhedron, AmbiguityError> {
    amb.validate()?;
    let mut lower = Vec::with_capacity(amb.num_arcs());
    let mut upper = Vec::with_capacity(amb.num_arcs());
    for list in &amb.prob {
        let (l, u) = marginal_expectation_bounds(list)?;
        lower.push(l);
        upper.push(u);
    }
    let mut rows = Vec::new();
    for r in &amb.rows {
        let row = PolyRow {
            coeffs: r.coeffs.clone(),
            rhs: r.rhs,
        };
        if r.sense == RowKind::Eq {
            rows.push(row.clone());
            rows.push(row.negated());
        } else {
            rows.push(row);
        }
    }
    Ok(Polyhedron { lower, upper, rows })
}

/// The polyhedron of expected costs consistent with `s0` and the responses
/// `r` to the auxiliary list. A violated constraint contributes its
/// opposite, closed, constraint.
pub fn partition(
    s0: &Polyhedron,
    amb: &AmbiguitySet,
    list: &[AuxiliaryConstraint],
    r: &ResponseVector,
) -> Result<Polyhedron, AmbiguityError> {
    assert_eq!(
        r.len(),
        list.len(),
        "response vector length must match the list"
    );
    let mut out = s0.clone();
    let mut prob_extra: Vec<Vec<ProbabilityConstraint>> = vec![Vec::new(); s0.num_arcs()];
    for (c, &bit) in list.iter().zip(&r.bits) {
        match &c.kind {
            AuxKind::Expectation { coeffs, rhs } => {
                let row = PolyRow {
                    coeffs: coeffs.clone(),
                    rhs: *rhs,
                };
                out.rows.push(if bit { row } else { row.negated() });
            }
            AuxKind::Probability {
                arc,
                l,
                u,
                threshold,
            } => {
                let (q_lo, q_hi) = if bit {
                    (0.0, *threshold)
                } else {
                    (*threshold, 1.0)
                };
                prob_extra[*arc].push(ProbabilityConstraint {
                    arc: *arc,
                    l: *l,
                    u: *u,
                    q_lo,
                    q_hi,
                });
            }
        }
    }
    for (a, extra) in prob_extra.into_iter().enumerate() {
        if extra.is_empty() {
            continue;
        }
        let mut all = amb.prob[a].clone();
        all.extend(extra);
        match marginal_expectation_bounds(&all) {
            Ok((l, u)) => {
                out.lower[a] = out.lower[a].max(l);
                out.upper[a] = out.upper[a].min(u);
            }
            Err(AmbiguityError::InfeasibleAmbiguity { .. }) => {
                // No distribution fits: mark the partition empty.
                out.lower[a] = 1.0;
                out.upper[a] = 0.0;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Whether `sj` cuts away part of `s0`. `sj` must extend `s0` as built by
/// [`partition`].
pub fn refines(s0: &Polyhedron, sj: &Polyhedron) -> Result<bool, SolverError> {
    if !s0.is_feasible()? {
        return Ok(false);
    }
    if !sj.is_feasible()? {
        return Ok(true);
    }
    let n = s0.num_arcs();
    for a in 0..n {
        if sj.upper[a] < s0.upper[a] - POLY_TOL || sj.lower[a] > s0.lower[a] + POLY_TOL {
            let mut obj = vec![0.0; n];
            obj[a] = 1.0;
            let (max, _) = s0.optimize(Sense::Maximize, &obj)?.expect("feasible");
            let (min, _) = s0.optimize(Sense::Minimize, &obj)?.expect("feasible");
            if max > sj.upper[a] + POLY_TOL || min < sj.lower[a] - POLY_TOL {
                return Ok(true);
            }
        }
    }
    for row in sj.rows.iter().skip(s0.rows.len()) {
        let mut obj = vec![0.0; n];
        for &(a, v) in &row.coeffs {
            obj[a] += v;
        }
        let (max, _) = s0.optimize(Sense::Maximize, &obj)?.expect("feasible");
        if max > row.rhs + POLY_TOL {
            return Ok(true);
        }
    }
    Ok(false)
}

/// JSON encoding of sparse coefficient lists as `{"arc": value}` objects.
pub(crate) mod sparse_coeffs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(coeffs: &[(usize, f64)], s: S) -> Result<S::Ok, S::Error> {
        // Numeric key order rather than string order.
        let mut ordered: Vec<(usize, f64)> = coeffs.to_vec();
        ordered.sort_by_key(|c| c.0);
        OrderedMap(
            ordered
                .into_iter()
                .map(|(a, v)| (a.to_string(), v))
                .collect(),
        )
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(usize, f64)>, D::Error> {
        let map: BTreeMap<String, f64> = BTreeMap::deserialize(d)?;
        let mut out = Vec::with_capacity(map.len());
        for (k, v) in map {
            let a = k.parse::<usize>().map_err(serde::de::Error::custom)?;
            out.push((a, v));
        }
        out.sort_by_key(|c| c.0);
        Ok(out)
    }

    struct OrderedMap(Vec<(String, f64)>);

    impl Serialize for OrderedMap {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeMap;
            let mut m = s.serialize_map(Some(self.0.len()))?;
            for (k, v) in &self.0 {
                m.serialize_entry(k, v)?;
            }
            m.end()
        }
    }
}
