mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use klsynth::automata::{product_dfa, Dfa, Formula};
use klsynth::conic::ClarabelSolver;
use klsynth::deceptive::{preprocess_finiteness, solve_deceptive};
use klsynth::mdp::{kl_path_divergence, StationaryPolicy};
use klsynth::models::{fork_mdp, mixing_mdp};
use klsynth::reference::{bernoulli_kl_bound, neg_log_flow_gradient, ReferenceProblem};

use common::{deception_problem, dfa, dfa_disagreements, props};

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect()
    })
}

fn with_row(m: &klsynth::mdp::Mdp, row: Vec<f64>) -> StationaryPolicy {
    let mut pi = StationaryPolicy::uniform(m);
    pi.rows[m.initial] = row;
    pi
}

fn formula() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        Just(Formula::atom("a")),
        Just(Formula::atom("b")),
        Just(Formula::NotAtom("a".into())),
        Just(Formula::NotAtom("b".into())),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::next),
            inner.clone().prop_map(Formula::eventually),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::until(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::or(a, b)),
        ]
    })
}

/// Divergence of one-step models by direct summation over outcomes.
fn one_step_kl(m: &klsynth::mdp::Mdp, agent: &[f64], reference: &[f64]) -> f64 {
    let s = m.initial;
    let dist = |row: &[f64]| -> Vec<f64> {
        (0..m.num_states())
            .map(|q| {
                m.actions[s]
                    .iter()
                    .zip(row)
                    .map(|(a, w)| w * a.prob_to(q))
                    .sum()
            })
            .collect()
    };
    let (pa, pr) = (dist(agent), dist(reference));
    pa.iter()
        .zip(&pr)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, r)| a * (a / r).ln())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn automaton_matches_word_semantics(f in formula()) {
        let props = vec!["a".to_string(), "b".to_string()];
        prop_assert_eq!(dfa_disagreements(&f, &props), 0, "{}", f);
    }

    #[test]
    fn flow_gradient_matches_finite_differences(
        x in prop::collection::vec(0.05f64..2.0, 3),
        probs in prop::collection::vec(0.0f64..1.0, 3),
        k in 0usize..3,
    ) {
        prop_assume!(probs.iter().sum::<f64>() > 0.1);
        let f = |x: &[f64]| -x.iter().zip(&probs).map(|(a, b)| a * b).sum::<f64>().ln();
        let (_, grad) = neg_log_flow_gradient(&x, &probs, 1e-12);
        let h = 1e-6;
        let mut up = x.clone();
        up[k] += h;
        let mut down = x.clone();
        down[k] -= h;
        let fd = (f(&up) - f(&down)) / (2.0 * h);
        prop_assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{} vs {}", fd, grad[k]);
    }

    #[test]
    fn bernoulli_bound_is_a_divergence(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let b = bernoulli_kl_bound(p, q);
        prop_assert!(b >= 0.0);
        prop_assert!(bernoulli_kl_bound(p, p).abs() < 1e-12);
        if q > 0.0 && q < 1.0 {
            let direct = if p > 0.0 { p * (p / q).ln() } else { 0.0 }
                + if p < 1.0 { (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln() } else { 0.0 };
            prop_assert!((b - direct.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn path_divergence_matches_enumeration(
        fig in 0usize..2,
        agent in simplex(3),
        reference in simplex(3),
    ) {
        let m = if fig == 0 { fork_mdp() } else { mixing_mdp() };
        let task = if fig == 0 { "F s3" } else { "F q1" };
        let p = deception_problem(&m, with_row(&m, reference.clone()), task, 0.0);
        let pi = {
            let mut pi = p.product.reference.clone();
            pi.rows[p.mdp().initial] = agent.clone();
            pi
        };
        let kl = kl_path_divergence(p.mdp(), &pi, &p.product.ref_chain, &p.product.s_d).unwrap();
        let want = one_step_kl(&m, &agent, &reference);
        prop_assert!((kl.as_f64() - want).abs() < 1e-10, "{:?} vs {}", kl, want);
    }

    #[test]
    fn solutions_conserve_flow_and_respect_the_bound(reference in simplex(3), nu in 0.0f64..0.95) {
        let m = mixing_mdp();
        let p = deception_problem(&m, with_row(&m, reference), "F q1 | F q2", nu);
        let sol = solve_deceptive(&p, &ClarabelSolver::default()).unwrap();
        prop_assert!(sol.residence.flow_residual(p.mdp(), &p.differ_set) < 1e-8);
        prop_assert!(sol.satisfaction_prob >= nu - 1e-6);
        let bound = bernoulli_kl_bound(sol.satisfaction_prob, sol.reference_satisfaction);
        prop_assert!(sol.kl_value >= bound - 1e-6, "{} < {}", sol.kl_value, bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_non_expansive(
        u in prop::collection::vec(-1.0f64..3.0, 3),
        v in prop::collection::vec(-1.0f64..3.0, 3),
    ) {
        let m = fork_mdp();
        let dp = product_dfa(&Dfa::trivial(&props(&m)).unwrap(), &dfa(&m, "F s3")).unwrap();
        let solver = ClarabelSolver::default();
        let p = ReferenceProblem::from_model(&m, &dp, 0.0, 0.2, &solver).unwrap();
        let poly = &p.sup_polytope;
        prop_assert_eq!(poly.num_vars(), 3);
        let pu = poly.project(&u, &solver).unwrap();
        let pv = poly.project(&v, &solver).unwrap();
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d(&pu, &pv) <= d(&u, &v) + 1e-6);
        prop_assert!(poly.violation(&pu) < 1e-7);
        let again = poly.project(&pu, &solver).unwrap();
        prop_assert!(d(&again, &pu) < 1e-6);
    }
}

#[test]
fn unreachable_threshold_is_rejected_before_solving() {
    let m = fork_mdp();
    let mut pi = StationaryPolicy::uniform(&m);
    pi.rows[m.initial] = vec![1.0, 0.0, 0.0];
    let dp = product_dfa(&Dfa::trivial(&props(&m)).unwrap(), &dfa(&m, "F s3")).unwrap();
    let product = klsynth::automata::build_product_mdp(
        &m,
        &dp,
        &klsynth::automata::ReferencePolicy::Base(pi),
    )
    .unwrap();
    assert!(matches!(
        preprocess_finiteness(&product, 0.1),
        Err(klsynth::Error::Infeasible(_))
    ));
}

#[test]
fn witness_checker_basics() {
    let l = |s: &[&str]| {
        s.iter()
            .map(|x| x.to_string())
            .collect::<BTreeSet<String>>()
    };
    let f = Formula::until(Formula::atom("a"), Formula::atom("b"));
    assert!(witnesses_word(&f, &[l(&["a"]), l(&["b"])]));
    assert!(!witnesses_word(&f, &[l(&[]), l(&["b"])]));
    assert!(!witnesses_word(
        &Formula::next(Formula::atom("a")),
        &[l(&["a"])]
    ));
}

fn witnesses_word(f: &Formula, w: &[BTreeSet<String>]) -> bool {
    common::witnesses(f, w)
}

#[test]
fn nested_until_residuals_stay_finite() {
    let props = vec!["a".to_string(), "b".to_string()];
    let f = klsynth::automata::parse_cosafe("((b U (b U !a)) & (X a U F a)) U F a").unwrap();
    assert_eq!(dfa_disagreements(&f, &props), 0);
}
