//! Reference policy synthesis: the supervisor picks a reference whose best
//! deceptive response is as far away as possible.
//!
//! The maximin problem is nonconvex. [`admm_reference`] searches it locally,
//! [`lp_relaxation_reference`] solves the Bernoulli relaxation exactly, and
//! [`ccp_fixed_agent`] finds a local optimum against a fixed agent.

mod admm;
mod ccp;
pub mod maximin;
mod polytope;

use serde::Serialize;

pub use admm::{admm_reference, history_csv, AdmmConfig, AdmmRecord, AdmmResult, AdmmState};
pub use ccp::{ccp_fixed_agent, neg_log_flow_gradient, CcpConfig, CcpResult};
pub use maximin::{LocalMaximin, LocalSolution, MaximinConfig};
pub use polytope::FlowPolytope;

use crate::automata::{build_product_structure, ProductDfa, ProductMdp};
use crate::conic::{ConicProgram, ConicSolution, ConicSolver, SolveStatus};
use crate::deceptive::{policy_rows, preprocess_finiteness, solve_deceptive, DeceptionSolution};
use crate::error::{Error, Result};
use crate::mdp::{
    induce_chain, kl_path_divergence, policy_to_residence_times, reachability_probabilities,
    residence_times_to_policy, KlValue, Mdp, ResidenceTimes, StateSet, StationaryPolicy,
};

/// Supervisor and agent tasks over a product whose closed set is fixed
/// structurally, with both flow polytopes checked nonempty.
#[derive(Debug, Clone)]
pub struct ReferenceProblem {
    pub product: ProductMdp,
    pub nu_sup: f64,
    pub nu_agent: f64,
    /// Supervisor residence times: flow balance on S_d and Pr(◇C_S) ≥ ν^S.
    pub sup_polytope: FlowPolytope,
    /// Agent residence times: flow balance on S_d and Pr(◇C_A) ≥ ν^A.
    pub agent_polytope: FlowPolytope,
    pub sup_max: f64,
    pub agent_max: f64,
    /// Every action at every S_d state reaches every successor of that state
    /// with positive probability (optimal reference guaranteed to exist).
    pub positive_kernel: bool,
}

impl ReferenceProblem {
    pub fn from_model(
        m: &Mdp,
        dp: &ProductDfa,
        nu_sup: f64,
        nu_agent: f64,
        solver: &dyn ConicSolver,
    ) -> Result<Self> {
        Self::new(build_product_structure(m, dp)?, nu_sup, nu_agent, solver)
    }

    pub fn new(
        product: ProductMdp,
        nu_sup: f64,
        nu_agent: f64,
        solver: &dyn ConicSolver,
    ) -> Result<Self> {
        for (name, nu) in [("supervisor", nu_sup), ("agent", nu_agent)] {
            if !(0.0..=1.0).contains(&nu) {
                return Err(Error::InvalidArgument(format!(
                    "{name} threshold {nu} outside [0, 1]"
                )));
            }
        }
        let m = &product.mdp;
        let s_d = &product.s_d;
        let counted: StateSet = s_d.difference(&product.c_sup).copied().collect();
        let sup_polytope = FlowPolytope::new(m, s_d, &product.c_sup, &counted, nu_sup);
        let agent_polytope = FlowPolytope::new(m, s_d, &product.c_agent, s_d, nu_agent);
        let sup_max = sup_polytope.check_nonempty(solver)?;
        let agent_max = agent_polytope.check_nonempty(solver)?;
        let positive_kernel = s_d.iter().all(|&s| {
            let succ = m.successors(s);
            m.actions[s]
                .iter()
                .all(|act| succ.iter().all(|&q| act.prob_to(q) > 0.0))
        });
        Ok(Self {
            product,
            nu_sup,
            nu_agent,
            sup_polytope,
            agent_polytope,
            sup_max,
            agent_max,
            positive_kernel,
        })
    }

    pub fn mdp(&self) -> &Mdp {
        &self.product.mdp
    }

    /// Reference policy from supervisor residence times; rows without mass
    /// and rows outside S_d come from the structural placeholder.
    pub fn policy_from(&self, x_sup: &[f64]) -> StationaryPolicy {
        let x = self.sup_polytope.to_residence(self.mdp(), x_sup);
        residence_times_to_policy(&x, &self.product.reference)
    }

    /// Supervisor residence times of a reference policy on S_d.
    pub fn residence_of(&self, policy: &StationaryPolicy) -> Result<Vec<f64>> {
        let x = policy_to_residence_times(self.mdp(), policy, &self.product.s_d)?;
        Ok(self.sup_polytope.from_residence(&x))
    }

    /// The product with `policy` installed as the reference.
    pub fn with_reference(&self, policy: StationaryPolicy) -> Result<ProductMdp> {
        let mut product = self.product.clone();
        product.set_reference(policy)?;
        Ok(product)
    }

    /// Probability that `policy` reaches `target`.
    pub fn reach(&self, policy: &StationaryPolicy, target: &StateSet) -> Result<f64> {
        if target.is_empty() {
            return Ok(0.0);
        }
        let chain = induce_chain(self.mdp(), policy)?;
        Ok(reachability_probabilities(&chain, target)?[self.mdp().initial])
    }

    /// Path divergence of an agent policy from a reference policy.
    pub fn divergence(
        &self,
        agent: &StationaryPolicy,
        reference: &StationaryPolicy,
    ) -> Result<KlValue> {
        let chain = induce_chain(self.mdp(), reference)?;
        kl_path_divergence(self.mdp(), agent, &chain, &self.product.s_d)
    }

    /// Optimal deceptive response to `policy`. An agent that cannot meet its
    /// threshold at finite divergence yields an infinite value.
    pub fn best_response(
        &self,
        policy: &StationaryPolicy,
        solver: &dyn ConicSolver,
    ) -> Result<BestResponse> {
        let product = self.with_reference(policy.clone())?;
        let reference_agent_prob = product.reference_reach(&product.c_agent)?;
        match preprocess_finiteness(&product, self.nu_agent) {
            Ok(problem) => {
                let sol = solve_deceptive(&problem, solver)?;
                Ok(BestResponse {
                    kl: KlValue::Finite(sol.kl_value),
                    reference_agent_prob,
                    solution: Some(sol),
                })
            }
            Err(Error::Infeasible(_)) => Ok(BestResponse {
                kl: KlValue::Infinite,
                reference_agent_prob,
                solution: None,
            }),
            Err(e) => Err(e),
        }
    }

    /// Checks that the closed classes of `policy` agree with the structural
    /// closed set on the states it reaches.
    pub fn audit(&self, policy: &StationaryPolicy) -> Result<()> {
        self.with_reference(policy.clone())?.audit_closed_set()
    }

    /// Reference policy as JSON rows on S_d.
    pub fn policy_to_json(&self, policy: &StationaryPolicy) -> String {
        #[derive(Serialize)]
        struct Export<'a> {
            policy: Vec<crate::deceptive::PolicyRow<'a>>,
        }
        let export = Export {
            policy: policy_rows(self.mdp(), &policy.rows, &self.product.s_d),
        };
        serde_json::to_string_pretty(&export).expect("policy serializes")
    }
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub kl: KlValue,
    /// Probability that the reference itself satisfies the agent's task.
    pub reference_agent_prob: f64,
    pub solution: Option<DeceptionSolution>,
}

/// KL(Ber(p_agent) ‖ Ber(p_ref)) in nats, with 0·ln 0 = 0 and `+∞` on
/// absolute-continuity failure.
pub fn bernoulli_kl_bound(p_agent: f64, p_ref: f64) -> f64 {
    fn term(p: f64, q: f64) -> f64 {
        if p <= 0.0 {
            0.0
        } else if q <= 0.0 {
            f64::INFINITY
        } else {
            p * (p / q).ln()
        }
    }
    (term(p_agent, p_ref) + term(1.0 - p_agent, 1.0 - p_ref)).max(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxationReport {
    #[serde(skip)]
    pub policy: StationaryPolicy,
    #[serde(skip)]
    pub residence: ResidenceTimes,
    /// Smallest probability of the agent's task over admissible references.
    pub min_agent_prob: f64,
    /// Supervisor task probability of the returned reference.
    pub sup_prob: f64,
    /// Lower bound on the best-response divergence of the returned reference.
    pub bernoulli_bound: f64,
    /// The agent's task is unattainable at finite divergence, so the
    /// reference is optimal for the unrelaxed problem.
    pub globally_optimal: bool,
}

/// Reference minimizing the probability of the agent's task subject to the
/// supervisor's threshold.
pub fn lp_relaxation_reference(
    p: &ReferenceProblem,
    solver: &dyn ConicSolver,
) -> Result<RelaxationReport> {
    let mut x = p.sup_polytope.minimize(&p.agent_polytope.task, solver)?;
    // interior-point residue on actions the optimal vertex does not use
    let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in x.iter_mut() {
        if *v < 1e-8 * scale {
            *v = 0.0;
        }
    }
    let policy = p.policy_from(&x);
    let min_agent_prob = p.reach(&policy, &p.product.c_agent)?;
    let sup_prob = p.reach(&policy, &p.product.c_sup)?;
    let globally_optimal = min_agent_prob <= 1e-9 && p.nu_agent > 0.0;
    Ok(RelaxationReport {
        residence: p.sup_polytope.to_residence(p.mdp(), &x),
        policy,
        min_agent_prob,
        sup_prob,
        bernoulli_bound: if min_agent_prob < p.nu_agent {
            bernoulli_kl_bound(p.nu_agent, min_agent_prob)
        } else {
            0.0
        },
        globally_optimal,
    })
}

/// Dual of a linear-conic program, as a minimization whose optimum is the
/// negated dual optimum.
pub fn build_dual_conic_program(primal: &ConicProgram) -> Result<ConicProgram> {
    primal.dual()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityCertificate {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// |primal − dual| / max(1, |primal|).
    pub relative_gap: f64,
    /// hᵀu of the solver's own dual vector does not exceed the primal value.
    pub weak_duality: bool,
}

/// Solves the explicit dual of `primal` and compares optima.
pub fn certify_duality(
    primal: &ConicProgram,
    primal_solution: &ConicSolution,
    solver: &dyn ConicSolver,
) -> Result<DualityCertificate> {
    let dual = build_dual_conic_program(primal)?;
    let sol = solver.solve(&dual)?;
    if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Inaccurate) {
        return Err(Error::Numerical(format!(
            "dual program stopped with {:?}",
            sol.status
        )));
    }
    let dual_objective = -sol.primal_objective;
    let primal_objective = primal_solution.primal_objective;
    let own_dual: f64 = primal
        .h
        .iter()
        .zip(&primal_solution.dual)
        .map(|(h, u)| h * u)
        .sum();
    let slack = 1e-7 * (1.0 + primal_objective.abs());
    Ok(DualityCertificate {
        primal_objective,
        dual_objective,
        relative_gap: (primal_objective - dual_objective).abs() / primal_objective.abs().max(1.0),
        weak_duality: own_dual <= primal_objective + slack
            && dual_objective <= primal_objective + slack,
    })
}

#[cfg(test)]
mod tests;
