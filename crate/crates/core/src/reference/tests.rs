use super::*;
use crate::automata::{formula_to_dfa, parse_cosafe, product_dfa, Dfa};
use crate::conic::ClarabelSolver;
use crate::deceptive::build_conic_program;
use crate::models::{fork_mdp, line_mdp, mixing_mdp};

fn problem(
    m: &Mdp,
    sup: Option<&str>,
    agent: &str,
    nu_sup: f64,
    nu_agent: f64,
) -> ReferenceProblem {
    let props: Vec<String> = m.atomic_props.iter().cloned().collect();
    let dfa = |f: &str| formula_to_dfa(&parse_cosafe(f).unwrap(), &props).unwrap();
    let sup = match sup {
        Some(f) => dfa(f),
        None => Dfa::trivial(&props).unwrap(),
    };
    let dp = product_dfa(&sup, &dfa(agent)).unwrap();
    ReferenceProblem::from_model(m, &dp, nu_sup, nu_agent, &ClarabelSolver::default()).unwrap()
}

fn mixing() -> ReferenceProblem {
    problem(&mixing_mdp(), None, "F q1 | F q2", 0.0, 1.0)
}

fn at_initial(p: &ReferenceProblem, row: [f64; 3]) -> StationaryPolicy {
    let mut pi = p.product.reference.clone();
    pi.rows[p.mdp().initial] = row.to_vec();
    pi
}

#[test]
fn bernoulli_bound_values() {
    assert_eq!(bernoulli_kl_bound(0.3, 0.3), 0.0);
    assert!((bernoulli_kl_bound(0.9, 0.28) - 0.8535).abs() < 1e-4);
    assert_eq!(bernoulli_kl_bound(0.5, 0.0), f64::INFINITY);
    assert_eq!(bernoulli_kl_bound(0.0, 0.0), 0.0);
    assert_eq!(bernoulli_kl_bound(1.0, 1.0), 0.0);
}

#[test]
fn mixing_structure() {
    let p = mixing();
    assert_eq!(p.product.s_d.len(), 1);
    assert_eq!(p.sup_polytope.num_vars(), 3);
    assert!(!p.positive_kernel);
}

#[test]
fn mixing_best_responses() {
    let p = mixing();
    let solver = ClarabelSolver::default();
    let alpha = p
        .best_response(&at_initial(&p, [1.0, 0.0, 0.0]), &solver)
        .unwrap();
    let beta = p
        .best_response(&at_initial(&p, [0.0, 1.0, 0.0]), &solver)
        .unwrap();
    let want_alpha = 0.4 * (0.4f64 / 0.32).ln() + 0.6 * (0.6f64 / 0.08).ln();
    let want_beta = 0.4 * (0.4f64 / 0.15).ln() + 0.6 * (0.6f64 / 0.15).ln();
    assert!(
        (alpha.kl.as_f64() - want_alpha).abs() < 1e-6,
        "{:?}",
        alpha.kl
    );
    assert!((beta.kl.as_f64() - want_beta).abs() < 1e-6, "{:?}", beta.kl);
    assert!((alpha.reference_agent_prob - 0.4).abs() < 1e-12);
    assert!((beta.reference_agent_prob - 0.3).abs() < 1e-12);
}

#[test]
fn relaxation_picks_beta() {
    let p = mixing();
    let r = lp_relaxation_reference(&p, &ClarabelSolver::default()).unwrap();
    let s = p.mdp().initial;
    assert!(r.policy.rows[s][1] > 1.0 - 1e-6, "{:?}", r.policy.rows[s]);
    assert!((r.min_agent_prob - 0.3).abs() < 1e-6);
    assert!(!r.globally_optimal);
    assert!((r.bernoulli_bound - (1.0f64 / 0.3).ln()).abs() < 1e-5);
    let best = p
        .best_response(&r.policy, &ClarabelSolver::default())
        .unwrap();
    assert!(r.bernoulli_bound <= best.kl.as_f64() + 1e-9);
}

#[test]
fn relaxation_certifies_unreachable_task() {
    let p = problem(&fork_mdp(), None, "F s3", 0.0, 0.2);
    let r = lp_relaxation_reference(&p, &ClarabelSolver::default()).unwrap();
    assert!(r.min_agent_prob < 1e-9);
    assert!(r.globally_optimal);
    let best = p
        .best_response(&r.policy, &ClarabelSolver::default())
        .unwrap();
    assert_eq!(best.kl, KlValue::Infinite);
}

fn gamma_agent(p: &ReferenceProblem) -> ResidenceTimes {
    let pi = at_initial(p, [0.0, 0.0, 1.0]);
    policy_to_residence_times(p.mdp(), &pi, &p.product.s_d).unwrap()
}

#[test]
fn ccp_finds_both_local_optima() {
    let p = mixing();
    let xa = gamma_agent(&p);
    let cfg = CcpConfig::default();
    let a = ccp_fixed_agent(&p, &xa, &at_initial(&p, [0.9, 0.05, 0.05]), &cfg).unwrap();
    let b = ccp_fixed_agent(&p, &xa, &at_initial(&p, [0.05, 0.9, 0.05]), &cfg).unwrap();
    assert!(a.converged && b.converged);
    assert!(
        (a.trace.last().unwrap() - 1.2982).abs() < 1e-3,
        "{:?}",
        a.trace
    );
    assert!(
        (b.trace.last().unwrap() - 1.2241).abs() < 1e-3,
        "{:?}",
        b.trace
    );
    for r in [&a, &b] {
        assert!(
            r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9),
            "{:?}",
            r.trace
        );
        for (k, s) in r.surrogate.iter().enumerate() {
            assert!(*s <= r.trace[k + 1] + 1e-9);
        }
    }
}

fn right_only_line() -> Mdp {
    let mut m = line_mdp(3);
    for acts in m.actions.iter_mut() {
        acts.retain(|a| a.name == "right");
    }
    m
}

#[test]
fn singleton_polytope() {
    let m = right_only_line();
    let p = problem(&m, None, "F end", 0.0, 1.0);
    assert_eq!(p.sup_polytope.num_vars(), 2);
    let xa = policy_to_residence_times(p.mdp(), &p.product.reference, &p.product.s_d).unwrap();
    let r = ccp_fixed_agent(&p, &xa, &p.product.reference, &CcpConfig::default()).unwrap();
    assert_eq!(r.iterations, 1);
    assert!(r.x_sup.iter().all(|v| (v - 1.0).abs() < 1e-8));
    let cfg = AdmmConfig {
        max_iters: 5,
        ..Default::default()
    };
    let res = admm_reference(&p, &cfg).unwrap();
    assert!(res.state.z_sup.iter().all(|v| (v - 1.0).abs() < 1e-8));
    assert_eq!(res.best_response_kl, 0.0);
}

#[test]
fn fork_dual_matches_primal() {
    let m = fork_mdp();
    let props: Vec<String> = m.atomic_props.iter().cloned().collect();
    let agent = formula_to_dfa(&parse_cosafe("F s3").unwrap(), &props).unwrap();
    let dp = product_dfa(&Dfa::trivial(&props).unwrap(), &agent).unwrap();
    let mut pi = StationaryPolicy::uniform(&m);
    pi.rows[0] = vec![0.0, 1.0, 0.0];
    let product =
        crate::automata::build_product_mdp(&m, &dp, &crate::automata::ReferencePolicy::Base(pi))
            .unwrap();
    let problem = crate::deceptive::preprocess_finiteness(&product, 0.2).unwrap();
    let prog = build_conic_program(&problem).program;
    let solver = ClarabelSolver::default();
    let sol = solver.solve(&prog).unwrap();
    let cert = certify_duality(&prog, &sol, &solver).unwrap();
    let want = 0.8 * (8.0f64 / 9.0).ln() + 0.2 * 2f64.ln();
    assert!((cert.primal_objective - want).abs() < 1e-6);
    assert!((cert.dual_objective - want).abs() < 1e-5, "{cert:?}");
    assert!(cert.weak_duality);
}

#[test]
fn empty_dual() {
    let prog = ConicProgram {
        num_vars: 0,
        c: vec![],
        p: vec![],
        g: vec![],
        h: vec![],
        cones: vec![],
    };
    let d = build_dual_conic_program(&prog).unwrap();
    assert_eq!(d.num_vars, 0);
    let sol = ClarabelSolver::default().solve(&d).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert_eq!(sol.primal_objective, 0.0);
}

#[test]
fn admm_on_mixing_reaches_a_local_optimum() {
    let p = mixing();
    let res = admm_reference(&p, &AdmmConfig::default()).unwrap();
    assert!(!res.history.is_empty());
    for r in &res.history {
        assert!(r.primal_residual.is_finite());
    }
    assert!(p.sup_polytope.violation(&res.state.z_sup) < 1e-8);
    assert!(p.agent_polytope.violation(&res.state.z_agent) < 1e-8);
    // either basin is acceptable for a local method
    let kl = res.best_response_kl;
    assert!(
        (kl - 1.2982).abs() < 1e-3 || (kl - 1.2241).abs() < 1e-3,
        "{kl} {:?}",
        res.history.last()
    );
}
