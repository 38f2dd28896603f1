mod common;

use common::{random_case, random_vertices, rng, CaseSpec};
use drsp_core::ambiguity::{
    marginal_expectation_bounds, AuxKind, ProbabilityConstraint, ResponseVector,
};
use proptest::prelude::*;

const SPEC: CaseSpec = CaseSpec {
    max_nodes: 6,
    max_paths: 12,
    max_aux: 3,
    allow_cycles: true,
};

/// Extremal expectations over distributions on a uniform grid of the
/// support, by enumerating two-point distributions. With a single interval
/// constraint, the extremes are attained by at most two atoms.
fn grid_bounds(c: &[ProbabilityConstraint], steps: usize) -> (f64, f64) {
    let (sl, su) = (c[0].l, c[0].u);
    let pts: Vec<f64> = (0..=steps)
        .map(|i| sl + (su - sl) * i as f64 / steps as f64)
        .collect();
    let inside = |x: f64| c[1..].iter().all(|k| (k.l..=k.u).contains(&x));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let k = &c[1];
    for &a in pts.iter().filter(|&&x| inside(x)) {
        for &b in pts.iter().filter(|&&x| !inside(x)) {
            for q in [k.q_lo, k.q_hi] {
                let e = q * a + (1.0 - q) * b;
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
    }
    if k.q_hi >= 1.0 {
        for &a in pts.iter().filter(|&&x| inside(x)) {
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    if k.q_lo <= 0.0 {
        for &b in pts.iter().filter(|&&x| !inside(x)) {
            lo = lo.min(b);
            hi = hi.max(b);
        }
    }
    (lo, hi)
}

#[test]
fn moment_bounds_match_grid_enumeration() {
    let mut r = rng(11);
    use rand::Rng;
    let mut checked = 0;
    while checked < 100 {
        let sl = r.random_range(0..4) as f64;
        let su = sl + r.random_range(1..5) as f64;
        let x = sl + (su - sl) * r.random_range(0..=10) as f64 / 10.0;
        let y = x + (su - x) * r.random_range(1..=10) as f64 / 10.0;
        if x <= sl && y >= su {
            continue;
        }
        let q_lo = r.random_range(0..=5) as f64 / 10.0;
        let q_hi = q_lo + r.random_range(1..=10 - (q_lo * 10.0) as i32) as f64 / 10.0;
        let c = vec![
            ProbabilityConstraint::support(0, sl, su),
            ProbabilityConstraint {
                arc: 0,
                l: x,
                u: y,
                q_lo,
                q_hi,
            },
        ];
        let (lo, hi) = marginal_expectation_bounds(&c).unwrap();
        let (glo, ghi) = grid_bounds(&c, 1000);
        let step = (su - sl) / 1000.0;
        assert!(
            (lo - glo).abs() <= step + 1e-9,
            "lower {lo} vs grid {glo} for {c:?}"
        );
        assert!(
            (hi - ghi).abs() <= step + 1e-9,
            "upper {hi} vs grid {ghi} for {c:?}"
        );
        checked += 1;
    }
}

#[test]
fn partitions_lie_inside_the_base_set() {
    let mut r = rng(5);
    for seed in 0..60 {
        let case = random_case(seed, SPEC);
        let k = case.list.len();
        for part in case.partitions(k) {
            if !part.is_feasible().unwrap() {
                continue;
            }
            assert_eq!(
                &part.rows[..case.s0.rows.len()],
                &case.s0.rows[..],
                "seed {seed}"
            );
            for a in 0..part.num_arcs() {
                assert!(
                    part.lower[a] >= case.s0.lower[a] - 1e-9
                        && part.upper[a] <= case.s0.upper[a] + 1e-9
                );
            }
            for v in random_vertices(&part, 5, &mut r) {
                assert!(case.s0.contains(&v, 1e-7), "seed {seed}");
            }
        }
    }
}

#[test]
fn expectation_partitions_cover_the_base_set() {
    let mut r = rng(6);
    let mut tested = 0;
    for seed in 0..200 {
        let case = random_case(seed, SPEC);
        if case.list.is_empty()
            || !case
                .list
                .iter()
                .all(|c| matches!(c.kind, AuxKind::Expectation { .. }))
        {
            continue;
        }
        let parts = case.partitions(case.list.len());
        for v in random_vertices(&case.s0, 10, &mut r) {
            assert!(parts.iter().any(|p| p.contains(&v, 1e-7)), "seed {seed}");
        }
        tested += 1;
    }
    assert!(tested >= 20, "only {tested} cases with expectation lists");
}

#[test]
fn response_indices_round_trip() {
    for len in 0..6 {
        let all = ResponseVector::all(len);
        assert_eq!(all.len(), 1 << len);
        for (pos, r) in all.iter().enumerate() {
            assert_eq!(r.index(), pos + 1);
            assert_eq!(&ResponseVector::from_index(pos + 1, len), r);
        }
    }
}

proptest! {
    #[test]
    fn moment_bounds_are_ordered_within_support(
        sl in 0.0f64..5.0,
        width in 0.1f64..5.0,
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
        q_lo in 0.0f64..1.0,
        dq in 0.0f64..1.0,
    ) {
        let su = sl + width;
        let x = sl + width * fx;
        let y = x + (su - x) * fy;
        let q_hi = (q_lo + dq).min(1.0);
        let c = vec![
            ProbabilityConstraint::support(0, sl, su),
            ProbabilityConstraint { arc: 0, l: x, u: y, q_lo, q_hi },
        ];
        if let Ok((lo, hi)) = marginal_expectation_bounds(&c) {
            prop_assert!(lo <= hi + 1e-9);
            prop_assert!(lo >= sl - 1e-9 && hi <= su + 1e-9);
        }
    }
}
