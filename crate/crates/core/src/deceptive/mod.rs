//! Optimal deceptive policies: the agent meets its task with probability at
//! least `nu_agent` while staying as close as possible, in path KL
//! divergence, to the supervisor's reference.
//!
//! The decision variables are expected state-action residence times on the
//! differ set. The objective is a sum of relative-entropy terms, each
//! encoded with one exponential cone.

mod program;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use program::{build_conic_program, DeceptionProgram};

use crate::automata::ProductMdp;
use crate::conic::{ConicSolver, SolveStatus};
use crate::error::{Error, Result};
use crate::mdp::{
    induce_chain, kl_path_divergence, max_reachability, policy_to_residence_times,
    reachability_probabilities, reachable_from, residence_times_to_policy, Action, KlValue, Mdp,
    ResidenceTimes, StateSet, StationaryPolicy,
};

/// Tolerance between the solver objective and the independently evaluated KL.
pub const OBJECTIVE_TOL: f64 = 1e-5;
/// Slack allowed on the task constraint of a returned policy.
pub const TASK_TOL: f64 = 1e-6;
/// Flow-balance tolerance for residence times.
pub const FLOW_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleReport {
    pub max_achievable: f64,
    pub required: f64,
}

impl fmt::Display for InfeasibleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max achievable {} is below the required {}",
            self.max_achievable, self.required
        )
    }
}

/// Preprocessed Problem data: the product with its reference, the states the
/// program optimizes over and the actions that keep the divergence finite.
#[derive(Debug, Clone)]
pub struct DeceptionProblem {
    pub product: ProductMdp,
    pub nu_agent: f64,
    /// States of S_d that the reference can reach; only these carry variables.
    pub differ_set: StateSet,
    /// `allowed[s]`: surviving action indices at `s` (all actions outside the
    /// differ set).
    pub allowed: Vec<Vec<usize>>,
    /// Largest probability of reaching C_A any finite-divergence policy can achieve.
    pub max_achievable: f64,
    /// Probability that the reference itself reaches C_A.
    pub reference_satisfaction: f64,
}

impl DeceptionProblem {
    pub fn mdp(&self) -> &Mdp {
        &self.product.mdp
    }

    pub fn reference_row(&self, s: usize) -> Vec<f64> {
        self.product.ref_chain.dense_row(s)
    }
}

/// Drops actions that put mass on reference-impossible transitions and
/// checks that the task threshold is still attainable.
pub fn preprocess_finiteness(product: &ProductMdp, nu_agent: f64) -> Result<DeceptionProblem> {
    if !(0.0..=1.0).contains(&nu_agent) || nu_agent.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "threshold {nu_agent} outside [0, 1]"
        )));
    }
    let m = &product.mdp;
    let n = m.num_states();
    let reach = reachable_from(&product.ref_chain, m.initial);
    let differ_set: StateSet = product.s_d.intersection(&reach).copied().collect();
    let mut allowed: Vec<Vec<usize>> = (0..n).map(|s| (0..m.actions[s].len()).collect()).collect();
    for &s in &differ_set {
        let row = product.ref_chain.dense_row(s);
        allowed[s] = m.actions[s]
            .iter()
            .enumerate()
            .filter(|(_, act)| {
                act.successors
                    .iter()
                    .all(|&(q, p)| p <= 0.0 || row[q] > 0.0)
            })
            .map(|(a, _)| a)
            .collect();
        debug_assert!(!allowed[s].is_empty(), "reference actions always survive");
    }
    // agent view: pruned actions on the differ set, the reference elsewhere
    let view = agent_view(product, &differ_set, &allowed);
    let max_achievable = if product.c_agent.is_empty() {
        0.0
    } else {
        max_reachability(&view, &product.c_agent)[m.initial]
    };
    let reference_satisfaction = product.reference_reach(&product.c_agent)?;
    if max_achievable + 1e-12 < nu_agent {
        return Err(Error::Infeasible(InfeasibleReport {
            max_achievable,
            required: nu_agent,
        }));
    }
    Ok(DeceptionProblem {
        product: product.clone(),
        nu_agent,
        differ_set,
        allowed,
        max_achievable,
        reference_satisfaction,
    })
}

fn agent_view(product: &ProductMdp, differ_set: &StateSet, allowed: &[Vec<usize>]) -> Mdp {
    let m = &product.mdp;
    let actions = (0..m.num_states())
        .map(|s| {
            if differ_set.contains(&s) {
                allowed[s]
                    .iter()
                    .map(|&a| m.actions[s][a].clone())
                    .collect()
            } else {
                vec![Action {
                    name: "reference".into(),
                    successors: product.ref_chain.rows[s].clone(),
                }]
            }
        })
        .collect();
    Mdp {
        states: m.states.clone(),
        actions,
        initial: m.initial,
        atomic_props: m.atomic_props.clone(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeceptionSolution {
    /// Residence times of the returned policy on S_d (recomputed from the
    /// policy, zero elsewhere).
    pub residence: ResidenceTimes,
    /// Policy on the product; rows outside the differ set are the reference.
    pub policy: StationaryPolicy,
    /// Path KL divergence of `policy` from the reference, in nats.
    pub kl_value: f64,
    pub solver_objective: f64,
    pub dual_objective: f64,
    pub satisfaction_prob: f64,
    pub reference_satisfaction: f64,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
}

/// Solves the residence-time program and certifies the result against
/// independent evaluations of the extracted policy.
pub fn solve_deceptive(
    p: &DeceptionProblem,
    solver: &dyn ConicSolver,
) -> Result<DeceptionSolution> {
    let m = p.mdp();
    let reference = &p.product.reference;
    if p.reference_satisfaction >= p.nu_agent {
        // the reference is feasible and no policy has negative divergence
        return finish(
            p,
            reference.clone(),
            0.0,
            0.0,
            SolveStatus::Optimal,
            0.0,
            0.0,
            0,
        );
    }
    let dp = build_conic_program(p);
    let sol = solver.solve(&dp.program)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Inaccurate => {}
        SolveStatus::PrimalInfeasible => {
            return Err(Error::Infeasible(InfeasibleReport {
                max_achievable: p.max_achievable,
                required: p.nu_agent,
            }))
        }
        other => {
            return Err(Error::Numerical(format!(
                "solver stopped with {other:?} (primal residual {:e}, dual residual {:e})",
                sol.primal_residual, sol.dual_residual
            )))
        }
    }
    let x = dp.residence_from(m, &sol.y);
    let policy = residence_times_to_policy(&x, reference);
    finish(
        p,
        policy,
        sol.primal_objective,
        sol.dual_objective,
        sol.status,
        sol.primal_residual,
        sol.dual_residual,
        sol.iterations,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &DeceptionProblem,
    policy: StationaryPolicy,
    objective: f64,
    dual_objective: f64,
    status: SolveStatus,
    primal_residual: f64,
    dual_residual: f64,
    iterations: u32,
) -> Result<DeceptionSolution> {
    let m = p.mdp();
    let residence = policy_to_residence_times(m, &policy, &p.product.s_d)?;
    let kl = kl_path_divergence(m, &policy, &p.product.ref_chain, &p.product.s_d)?;
    let satisfaction_prob = satisfaction(m, &policy, &p.product.c_agent)?;
    let kl_value = match kl {
        KlValue::Finite(v) => v,
        KlValue::Infinite => {
            return Err(Error::Numerical(
                "extracted policy has infinite divergence".into(),
            ))
        }
    };
    let sol = DeceptionSolution {
        residence,
        policy,
        kl_value,
        solver_objective: objective,
        dual_objective,
        satisfaction_prob,
        reference_satisfaction: p.reference_satisfaction,
        status,
        primal_residual,
        dual_residual,
        iterations,
    };
    let report = verify_solution(p, &sol);
    if !report.passed() {
        return Err(Error::Numerical(format!(
            "solution failed verification: {}",
            report.flags.join("; ")
        )));
    }
    Ok(DeceptionSolution {
        status: SolveStatus::Optimal,
        ..sol
    })
}

fn satisfaction(m: &Mdp, policy: &StationaryPolicy, target: &StateSet) -> Result<f64> {
    if target.is_empty() {
        return Ok(0.0);
    }
    let chain = induce_chain(m, policy)?;
    Ok(reachability_probabilities(&chain, target)?[m.initial])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub flow_residual: f64,
    pub satisfaction_prob: f64,
    pub kl_recomputed: f64,
    pub objective_gap: f64,
    pub flags: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Recomputes flow balance, task satisfaction and divergence of a solution.
pub fn verify_solution(p: &DeceptionProblem, sol: &DeceptionSolution) -> VerificationReport {
    let m = p.mdp();
    let mut flags = Vec::new();
    let flow_residual = sol.residence.flow_residual(m, &p.differ_set);
    if flow_residual > FLOW_TOL {
        flags.push(format!(
            "flow residual {flow_residual:e} exceeds {FLOW_TOL:e}"
        ));
    }
    let satisfaction_prob = satisfaction(m, &sol.policy, &p.product.c_agent).unwrap_or(f64::NAN);
    if !(satisfaction_prob >= p.nu_agent - TASK_TOL) {
        flags.push(format!(
            "task probability {satisfaction_prob} below threshold {}",
            p.nu_agent
        ));
    }
    let kl_recomputed = kl_path_divergence(m, &sol.policy, &p.product.ref_chain, &p.product.s_d)
        .map(|k| k.as_f64())
        .unwrap_or(f64::NAN);
    let objective_gap = (kl_recomputed - sol.solver_objective).abs();
    if !(objective_gap < OBJECTIVE_TOL) {
        flags.push(format!(
            "divergence {kl_recomputed} differs from solver objective {}",
            sol.solver_objective
        ));
    }
    if sol.residence.values.iter().flatten().any(|&v| v < 0.0) {
        flags.push("negative residence time".into());
    }
    VerificationReport {
        flow_residual,
        satisfaction_prob,
        kl_recomputed,
        objective_gap,
        flags,
    }
}

/// Norm used by the residence-distance baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    One,
    Two,
}

/// Baseline deceptive policy: closest residence times to the reference's in
/// the given norm over the same feasible set as the KL program.
pub fn synthesize_norm_candidate(
    p: &DeceptionProblem,
    norm: Norm,
    solver: &dyn ConicSolver,
) -> Result<StationaryPolicy> {
    let m = p.mdp();
    let reference = &p.product.reference;
    if p.reference_satisfaction >= p.nu_agent {
        return Ok(reference.clone());
    }
    let x_ref = policy_to_residence_times(m, reference, &p.product.s_d)?;
    let dp = program::build_norm_program(p, &x_ref, norm);
    let sol = solver.solve(&dp.program)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Inaccurate => {}
        other => {
            return Err(Error::Numerical(format!(
                "norm program stopped with {other:?}"
            )))
        }
    }
    let x = dp.residence_from(m, &sol.y);
    Ok(residence_times_to_policy(&x, reference))
}

#[derive(Debug, Clone, Serialize)]
struct SolutionExport<'a> {
    kl_value: f64,
    kl_bits: f64,
    satisfaction_prob: f64,
    reference_satisfaction: f64,
    status: SolveStatus,
    solver_objective: f64,
    dual_objective: f64,
    primal_residual: f64,
    dual_residual: f64,
    policy: Vec<PolicyRow<'a>>,
    residence: Vec<PolicyRow<'a>>,
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct PolicyRow<'a> {
    pub state: &'a str,
    pub actions: Vec<(&'a str, f64)>,
}

pub(crate) fn policy_rows<'a>(
    m: &'a Mdp,
    rows: &[Vec<f64>],
    states: &BTreeSet<usize>,
) -> Vec<PolicyRow<'a>> {
    states
        .iter()
        .map(|&s| PolicyRow {
            state: m.name(s),
            actions: m.actions[s]
                .iter()
                .zip(&rows[s])
                .map(|(a, &v)| (a.name.as_str(), v))
                .collect(),
        })
        .collect()
}

/// Solution as JSON: divergence, probabilities, certificates, and policy and
/// residence rows on the differ set.
pub fn solution_to_json(p: &DeceptionProblem, sol: &DeceptionSolution) -> String {
    let m = p.mdp();
    let export = SolutionExport {
        kl_value: sol.kl_value,
        kl_bits: sol.kl_value / std::f64::consts::LN_2,
        satisfaction_prob: sol.satisfaction_prob,
        reference_satisfaction: sol.reference_satisfaction,
        status: sol.status,
        solver_objective: sol.solver_objective,
        dual_objective: sol.dual_objective,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        policy: policy_rows(m, &sol.policy.rows, &p.differ_set),
        residence: policy_rows(m, &sol.residence.values, &p.differ_set),
    };
    serde_json::to_string_pretty(&export).expect("solution serializes")
}

/// Per-cell totals of residence times over product states that share a
/// base-model cell, as `(row, col, value)` sorted by cell. States without
/// coordinates are skipped.
pub fn residence_heatmap(m: &Mdp, x: &ResidenceTimes) -> Vec<(usize, usize, f64)> {
    let mut cells: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for (s, st) in m.states.iter().enumerate() {
        if let Some(rc) = st.coords {
            *cells.entry(rc).or_insert(0.0) += x.state_total(s);
        }
    }
    cells.into_iter().map(|((r, c), v)| (r, c, v)).collect()
}

/// Heatmap as CSV with header `row,col,value`; values carry 17 significant digits.
pub fn heatmap_csv(cells: &[(usize, usize, f64)]) -> String {
    let mut out = String::from("row,col,value\n");
    for (r, c, v) in cells {
        out.push_str(&format!("{r},{c},{v:.16e}\n"));
    }
    out
}

#[cfg(test)]
mod tests;
