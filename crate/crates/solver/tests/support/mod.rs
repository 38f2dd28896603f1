//! Random model generators and independent oracles for the solver suites.
#![allow(dead_code)]

use drsp_solver::{
    solve_lp, solve_mip, LinearProgram, LpStatus, MipStatus, MixedIntegerProgram, RowSense, Sense,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random LP that is feasible by construction and has a finite optimum.
pub fn random_feasible_lp(seed: u64) -> LinearProgram {
    random_feasible_lp_sized(seed, 12, 10, 0.6)
}

pub fn random_feasible_lp_sized(
    seed: u64,
    max_n: usize,
    max_m: usize,
    density: f64,
) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    let sign = if sense == Sense::Minimize { 1.0 } else { -1.0 };
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let mut lp = LinearProgram::new(sense);
    let mut x0 = Vec::with_capacity(n);
    for j in 0..n {
        let lo = rng.random_range(-3.0..1.0f64).round();
        match rng.random_range(0..4) {
            0 => {
                // Only bounded below; the cost keeps the direction of improvement bounded.
                let c = sign * rng.random_range(0.0..3.0);
                lp.add_var(format!("x{j}"), lo, f64::INFINITY, c);
                x0.push(lo + rng.random_range(0.0..2.0));
            }
            1 => {
                let v = lo;
                let c = rng.random_range(-3.0..3.0);
                lp.add_var(format!("x{j}"), v, v, c);
                x0.push(v);
            }
            _ => {
                let up = lo + rng.random_range(0.5..4.0);
                let c = rng.random_range(-3.0..3.0);
                lp.add_var(format!("x{j}"), lo, up, c);
                x0.push(rng.random_range(lo..=up));
            }
        }
    }
    for i in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(density) {
                coeffs.push((j, rng.random_range(-5.0..5.0f64).round() / 2.0));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let (sense, rhs) = match rng.random_range(0..3) {
            0 => (RowSense::Le, act + rng.random_range(0.0..2.0)),
            1 => (RowSense::Ge, act - rng.random_range(0.0..2.0)),
            _ => (RowSense::Eq, act),
        };
        lp.add_row(format!("r{i}"), coeffs, sense, rhs);
    }
    lp
}

/// Builds the LP dual of a model whose variables all have a finite lower bound.
///
/// For `min c'x, A x (<=,>=,=) b, l <= x <= u` the dual is
/// `max b'pi + l'alpha - u'beta, A'pi + alpha - beta = c, alpha, beta >= 0`
/// with `pi <= 0` on `<=` rows, `pi >= 0` on `>=` rows and `pi` free on
/// equalities. A maximization primal is handled by negating its costs.
pub fn explicit_dual(lp: &LinearProgram) -> (LinearProgram, f64) {
    let sign = if lp.sense == Sense::Minimize {
        1.0
    } else {
        -1.0
    };
    let mut dual = LinearProgram::new(Sense::Maximize);
    let pis: Vec<usize> = lp
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (lo, up) = match r.sense {
                RowSense::Le => (f64::NEG_INFINITY, 0.0),
                RowSense::Ge => (0.0, f64::INFINITY),
                RowSense::Eq => (f64::NEG_INFINITY, f64::INFINITY),
            };
            dual.add_var(format!("pi{i}"), lo, up, r.rhs)
        })
        .collect();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.num_vars()];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            cols[j].push((pis[i], a));
        }
    }
    for (j, v) in lp.vars.iter().enumerate() {
        assert!(v.lower.is_finite());
        let alpha = dual.add_var(format!("alpha{j}"), 0.0, f64::INFINITY, v.lower);
        let mut row = cols[j].clone();
        row.push((alpha, 1.0));
        if v.upper.is_finite() {
            let beta = dual.add_var(format!("beta{j}"), 0.0, f64::INFINITY, -v.upper);
            row.push((beta, -1.0));
        }
        dual.add_row(format!("d{j}"), row, RowSense::Eq, sign * v.objective);
    }
    (dual, sign)
}

/// Checks one random LP against its explicit dual. Returns the largest
/// discrepancy observed among the duality gap, the reported dual objective
/// and the primal feasibility residual.
pub fn lp_duality_discrepancy(seed: u64) -> f64 {
    lp_duality_discrepancy_for(seed, &random_feasible_lp(seed))
}

pub fn lp_duality_discrepancy_for(seed: u64, lp: &LinearProgram) -> f64 {
    let lp = lp.clone();
    let primal = solve_lp(&lp).expect("primal solve");
    assert_eq!(primal.status, LpStatus::Optimal, "seed {seed}");
    let (dual_lp, sign) = explicit_dual(&lp);
    let dual = solve_lp(&dual_lp).expect("dual solve");
    assert_eq!(dual.status, LpStatus::Optimal, "seed {seed}");
    let gap = (primal.objective - sign * dual.objective).abs();
    let reported = (primal.objective - primal.dual_objective).abs();
    let residual = lp.max_violation(&primal.x);
    // Reduced costs must match c - A' pi.
    let mut rc_err = 0.0f64;
    for (j, v) in lp.vars.iter().enumerate() {
        let mut d = v.objective;
        for (i, r) in lp.rows.iter().enumerate() {
            for &(k, a) in &r.coeffs {
                if k == j {
                    d -= a * primal.duals[i];
                }
            }
        }
        rc_err = rc_err.max((d - primal.reduced_costs[j]).abs());
    }
    gap.max(reported).max(residual * 10.0).max(rc_err)
}

/// A random MIP with up to `max_bin` binaries and a few continuous variables.
pub fn random_mip(seed: u64, max_bin: usize) -> MixedIntegerProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    let mut mip = MixedIntegerProgram::new(sense);
    let nb = rng.random_range(1..=max_bin);
    let nc = rng.random_range(0..=3);
    for j in 0..nb {
        mip.add_binary(format!("b{j}"), rng.random_range(-10.0..10.0f64).round());
    }
    for j in 0..nc {
        let c = rng.random_range(-4.0..4.0f64).round() / 2.0;
        mip.add_continuous(
            format!("y{j}"),
            0.0,
            rng.random_range(1.0..4.0f64).round(),
            c,
        );
    }
    let m = rng.random_range(1..=6);
    for i in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..nb + nc {
            if rng.random_bool(0.5) {
                coeffs.push((j, rng.random_range(-6.0..6.0f64).round()));
            }
        }
        let scale: f64 = coeffs.iter().map(|c| c.1.abs()).sum();
        let rhs = (rng.random_range(-0.3..0.6) * scale).round() + 0.5;
        let sense = if rng.random_bool(0.8) {
            RowSense::Le
        } else {
            RowSense::Ge
        };
        mip.add_row(format!("r{i}"), coeffs, sense, rhs);
    }
    mip
}

/// Exhaustive oracle: fix every binary assignment and solve the LP over the
/// continuous part. Returns `None` when no assignment is feasible.
pub fn enumerate_mip(mip: &MixedIntegerProgram) -> Option<f64> {
    let bins: Vec<usize> = (0..mip.lp.num_vars()).filter(|&j| mip.integer[j]).collect();
    let maximize = mip.lp.sense == Sense::Maximize;
    let mut best: Option<f64> = None;
    for mask in 0u64..(1u64 << bins.len()) {
        let mut lp = mip.lp.clone();
        for (k, &j) in bins.iter().enumerate() {
            let v = (mask >> k & 1) as f64;
            lp.vars[j].lower = v;
            lp.vars[j].upper = v;
        }
        let sol = solve_lp(&lp).expect("oracle LP");
        if sol.status != LpStatus::Optimal {
            continue;
        }
        best = Some(match best {
            None => sol.objective,
            Some(b) if maximize => b.max(sol.objective),
            Some(b) => b.min(sol.objective),
        });
    }
    best
}

/// Compares branch-and-bound with enumeration on one random model. Returns
/// an error message on disagreement.
pub fn mip_matches_enumeration(seed: u64) -> Result<(), String> {
    let mip = random_mip(seed, 12);
    let sol = solve_mip(&mip).map_err(|e| format!("seed {seed}: {e}"))?;
    let oracle = enumerate_mip(&mip);
    match (sol.status, sol.objective, oracle) {
        (MipStatus::Infeasible, None, None) => Ok(()),
        (MipStatus::Optimal, Some(v), Some(o)) if (v - o).abs() <= 1e-6 => {
            let x = sol.x.as_ref().unwrap();
            if mip.lp.max_violation(x) > 1e-6 {
                return Err(format!("seed {seed}: incumbent violates rows"));
            }
            if (v - sol.bound).abs() > 1e-6f64.max(1e-9 * v.abs()) {
                return Err(format!(
                    "seed {seed}: bound {} far from objective {v}",
                    sol.bound
                ));
            }
            Ok(())
        }
        other => Err(format!(
            "seed {seed}: solver {:?} vs oracle {:?}",
            (other.0, other.1),
            other.2
        )),
    }
}

/// Runs the same MIP twice and compares everything observable.
pub fn mip_is_deterministic(seed: u64) -> bool {
    let mip = random_mip(seed, 12);
    let a = solve_mip(&mip).unwrap();
    let b = solve_mip(&mip).unwrap();
    let bits = |x: &Option<Vec<f64>>| {
        x.as_ref()
            .map(|v| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>())
    };
    a.status == b.status
        && a.nodes == b.nodes
        && a.lp_iterations == b.lp_iterations
        && a.objective.map(f64::to_bits) == b.objective.map(f64::to_bits)
        && bits(&a.x) == bits(&b.x)
}
