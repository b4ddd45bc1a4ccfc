use super::*;
use crate::automata::{
    build_product_mdp, formula_to_dfa, parse_cosafe, product_dfa, Dfa, ReferencePolicy,
};
use crate::conic::ClarabelSolver;
use crate::models::fork_mdp;

fn fork_product(reference: [f64; 3]) -> ProductMdp {
    let m = fork_mdp();
    let props: Vec<String> = m.atomic_props.iter().cloned().collect();
    let agent = formula_to_dfa(&parse_cosafe("F s3").unwrap(), &props).unwrap();
    let dp = product_dfa(&Dfa::trivial(&props).unwrap(), &agent).unwrap();
    let mut pi = StationaryPolicy::uniform(&m);
    pi.rows[0] = reference.to_vec();
    build_product_mdp(&m, &dp, &ReferencePolicy::Base(pi)).unwrap()
}

fn solver() -> ClarabelSolver {
    ClarabelSolver::default()
}

#[test]
fn beta_reference_is_feasible() {
    let p = preprocess_finiteness(&fork_product([0.0, 1.0, 0.0]), 0.2).unwrap();
    assert!((p.max_achievable - 1.0).abs() < 1e-12);
    let s0 = p.mdp().initial;
    // every successor of every action has positive reference mass
    assert_eq!(p.allowed[s0], vec![0, 1, 2]);
}

#[test]
fn alpha_reference_is_infeasible() {
    match preprocess_finiteness(&fork_product([1.0, 0.0, 0.0]), 0.1) {
        Err(Error::Infeasible(r)) => assert_eq!(r.max_achievable, 0.0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn program_shape() {
    let p = preprocess_finiteness(&fork_product([0.0, 1.0, 0.0]), 0.2).unwrap();
    let dp = build_conic_program(&p);
    assert_eq!(dp.x_vars.len(), 3);
    assert_eq!(dp.r_vars.len(), 3);
    assert_eq!(dp.num_exp_blocks(), 3);
    dp.program.check().unwrap();
}

#[test]
fn uniform_reference_keeps_all_actions() {
    let p = preprocess_finiteness(&fork_product([1.0 / 3.0; 3]), 0.2).unwrap();
    let dp = build_conic_program(&p);
    assert_eq!(dp.x_vars.len(), 3);
    assert_eq!(dp.num_exp_blocks(), 3);
}

#[test]
fn example_one_optimum() {
    let p = preprocess_finiteness(&fork_product([0.0, 1.0, 0.0]), 0.2).unwrap();
    let sol = solve_deceptive(&p, &solver()).unwrap();
    let want = 0.8 * (8.0f64 / 9.0).ln() + 0.2 * 2f64.ln();
    assert!((sol.kl_value - want).abs() < 1e-6, "{}", sol.kl_value);
    let s0 = p.mdp().initial;
    assert!((sol.policy.rows[s0][1] - 8.0 / 9.0).abs() < 1e-4);
    assert!((sol.policy.rows[s0][2] - 1.0 / 9.0).abs() < 1e-4);
    assert!(verify_solution(&p, &sol).passed());
}

#[test]
fn zero_threshold_returns_reference() {
    let p = preprocess_finiteness(&fork_product([0.0, 1.0, 0.0]), 0.0).unwrap();
    let sol = solve_deceptive(&p, &solver()).unwrap();
    assert_eq!(sol.kl_value, 0.0);
    assert_eq!(sol.policy, p.product.reference);
}

#[test]
fn injected_faults_are_flagged() {
    let p = preprocess_finiteness(&fork_product([0.0, 1.0, 0.0]), 0.2).unwrap();
    let sol = solve_deceptive(&p, &solver()).unwrap();
    let s0 = p.mdp().initial;
    let mut bad = sol.clone();
    bad.residence.values[s0][1] += 0.1;
    assert!(verify_solution(&p, &bad)
        .flags
        .iter()
        .any(|f| f.contains("flow")));
    let mut bad = sol.clone();
    // Pr(◇s3) = 0.1 β + γ = 0.19
    bad.policy.rows[s0] = vec![0.0, 0.9, 0.1];
    assert!(verify_solution(&p, &bad)
        .flags
        .iter()
        .any(|f| f.contains("task")));
}

#[test]
fn norm_candidates_are_feasible_and_no_better() {
    let p = preprocess_finiteness(&fork_product([0.0, 1.0, 0.0]), 0.2).unwrap();
    let best = solve_deceptive(&p, &solver()).unwrap().kl_value;
    for norm in [Norm::One, Norm::Two] {
        let pi = synthesize_norm_candidate(&p, norm, &solver()).unwrap();
        let m = p.mdp();
        let sat = satisfaction(m, &pi, &p.product.c_agent).unwrap();
        assert!(sat >= 0.2 - 1e-6, "{norm:?}: {sat}");
        let kl = kl_path_divergence(m, &pi, &p.product.ref_chain, &p.product.s_d).unwrap();
        assert!(kl.as_f64() >= best - 1e-7);
    }
}
