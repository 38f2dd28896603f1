use drsp_core::ambiguity::{AmbiguitySet, AuxKind, AuxiliaryConstraint};
use drsp_core::datagen::{
    beta_params, generate_instance, mean_interval, sample_nominal, stream_rng, AuxMode,
    InstanceConfig, Stream,
};
use drsp_core::graph::{build_layered, GraphClass};
use drsp_core::instance::{from_json, to_json};
use drsp_core::verification::{
    hoeffding_epsilon, resolve_all, verify_constraint, Provenance, Verdict,
};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn beta_parameters_reproduce_mean_and_deviation(sigma in 0.01f64..0.49, t in 0.001f64..0.999) {
        let (lo, hi) = mean_interval(sigma);
        let m = lo + (hi - lo) * t;
        prop_assume!(m > lo && m < hi);
        let (a, b) = beta_params(m, sigma).unwrap();
        prop_assert!(a > 0.0 && b > 0.0);
        let s = a + b;
        prop_assert!((a / s - m).abs() < 1e-12);
        let var = a * b / (s * s * (s + 1.0));
        prop_assert!((var.sqrt() - sigma).abs() < 1e-12 * (1.0 + 1.0 / sigma));
    }
}

#[test]
fn means_outside_the_interval_are_rejected() {
    let (lo, hi) = mean_interval(0.25);
    assert!(beta_params(lo, 0.25).is_err());
    assert!(beta_params(hi, 0.25).is_err());
    assert!(beta_params(0.5, 0.5).is_err());
}

#[test]
fn generation_is_bit_exact() {
    for mode in [
        AuxMode::Expectation,
        AuxMode::Probability { threshold: 0.4 },
    ] {
        for seed in 0..5 {
            let cfg = InstanceConfig {
                class: if seed % 2 == 0 {
                    GraphClass::Acyclic
                } else {
                    GraphClass::General
                },
                aux_mode: mode,
                seed,
                ..InstanceConfig::default()
            };
            let a = generate_instance(&cfg).unwrap();
            let b = generate_instance(&cfg).unwrap();
            assert_eq!(a, b);
            let text = to_json(&a);
            assert_eq!(text, to_json(&b));
            assert_eq!(from_json(&text).unwrap(), a);
        }
    }
}

#[test]
fn auxiliary_thresholds_are_strictly_inside_their_range() {
    for seed in 0..30 {
        let cfg = InstanceConfig {
            seed,
            num_aux: 4,
            ..InstanceConfig::default()
        };
        let inst = generate_instance(&cfg).unwrap();
        for c in &inst.auxiliary {
            match &c.kind {
                AuxKind::Expectation { coeffs, rhs } => {
                    let lo: f64 = coeffs
                        .iter()
                        .map(|&(a, p)| {
                            p.min(0.0) * inst.ambiguity.support(a).1
                                + p.max(0.0) * inst.ambiguity.support(a).0
                        })
                        .sum();
                    let hi: f64 = coeffs
                        .iter()
                        .map(|&(a, p)| {
                            p.max(0.0) * inst.ambiguity.support(a).1
                                + p.min(0.0) * inst.ambiguity.support(a).0
                        })
                        .sum();
                    assert!(
                        lo < *rhs && *rhs < hi,
                        "seed {seed}: {rhs} not in ({lo}, {hi})"
                    );
                }
                AuxKind::Probability { threshold, .. } => {
                    assert!(0.0 < *threshold && *threshold < 1.0)
                }
            }
        }
    }
}

#[test]
fn streams_are_independent() {
    let mut t = stream_rng(7, Stream::Train);
    let mut v = stream_rng(7, Stream::Verify);
    let x: Vec<u64> = (0..4).map(|_| t.random()).collect();
    let y: Vec<u64> = (0..4).map(|_| v.random()).collect();
    assert_ne!(x, y);
    let again: Vec<u64> = {
        let mut t = stream_rng(7, Stream::Train);
        (0..4).map(|_| t.random()).collect()
    };
    assert_eq!(x, again);
}

fn duplicated(set: &drsp_core::datagen::SampleSet) -> drsp_core::datagen::SampleSet {
    let mut rows = set.rows.clone();
    rows.extend(set.rows.iter().cloned());
    drsp_core::datagen::SampleSet { rows }
}

#[test]
fn duplicating_the_sample_only_sharpens_verdicts() {
    for seed in 0..20 {
        let inst = generate_instance(&InstanceConfig {
            seed,
            num_aux: 4,
            ..InstanceConfig::default()
        })
        .unwrap();
        let twice = duplicated(&inst.verify);
        for (m, c) in inst.auxiliary.iter().enumerate() {
            let once = verify_constraint(m, c, &inst.ambiguity, &inst.verify, 0.95);
            let more = verify_constraint(m, c, &inst.ambiguity, &twice, 0.95);
            assert!((once.statistic - more.statistic).abs() < 1e-12);
            assert!(more.epsilon < once.epsilon);
            if once.verdict != Verdict::Undetermined {
                assert_eq!(more.verdict, once.verdict, "seed {seed} constraint {m}");
            }
        }
        let mut coins = stream_rng(seed, Stream::Coins);
        let (resolved, results) = resolve_all(
            &inst.auxiliary,
            &inst.ambiguity,
            &inst.verify,
            0.95,
            &mut coins,
        );
        for (r, p) in results.iter().zip(&resolved.provenance) {
            assert_eq!(
                *p == Provenance::Verified,
                r.verdict != Verdict::Undetermined
            );
        }
    }
}

#[test]
fn verified_bits_agree_with_the_true_mean() {
    let g = build_layered(1, 3, GraphClass::Acyclic);
    let amb = AmbiguitySet::with_supports(&vec![(0.0, 1.0); g.num_arcs()]);
    let gamma = 0.9;
    let n = 200;
    let mut rng = stream_rng(42, Stream::Picks);
    let (mut verified, mut wrong) = (0, 0);
    for trial in 0..500 {
        let nominal = sample_nominal(&g, 0.125, &mut rng).unwrap();
        let means = nominal.means();
        let arc = trial % g.num_arcs();
        let rhs = means[arc] + rng.random_range(-0.1..0.1);
        let c = AuxiliaryConstraint {
            node: g.tail(arc),
            kind: AuxKind::Expectation {
                coeffs: vec![(arc, 1.0)],
                rhs,
            },
        };
        let sample = nominal.sample(n, &mut rng);
        let res = verify_constraint(0, &c, &amb, &sample, gamma);
        assert!((res.epsilon - hoeffding_epsilon(n, gamma, 1.0)).abs() < 1e-15);
        let truth = means[arc] <= rhs;
        match res.verdict {
            Verdict::Undetermined => {}
            v => {
                verified += 1;
                if (v == Verdict::Satisfied) != truth {
                    wrong += 1;
                }
            }
        }
    }
    assert!(verified > 50, "only {verified} verified");
    assert!(
        wrong as f64 <= (1.0 - gamma) * verified as f64,
        "{wrong} wrong out of {verified}"
    );
}
