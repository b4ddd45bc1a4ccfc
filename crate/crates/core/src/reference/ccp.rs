use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ReferenceProblem;
use crate::conic::{ClarabelSolver, Cone, ConicProgram, ConicSolver, SolveStatus, SolverConfig};
use crate::error::{Error, Result};
use crate::mdp::{ResidenceTimes, StationaryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcpConfig {
    pub max_iters: usize,
    /// Stop once the objective improves by less than this.
    pub tol: f64,
    /// Floor applied to successor flows before linearizing.
    pub barrier_shift: f64,
}

impl Default for CcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            barrier_shift: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcpResult {
    pub policy: StationaryPolicy,
    pub x_sup: Vec<f64>,
    /// Divergence of the fixed agent from each iterate, starting with the
    /// initial one.
    pub trace: Vec<f64>,
    /// Surrogate value at each new iterate (one shorter than `trace`).
    pub surrogate: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Diagnostics such as states where the barrier shift was applied.
    pub flags: Vec<String>,
}

/// Agent data at one state: total residence and flow into each successor.
struct StateWeights {
    s: usize,
    total: f64,
    succ: Vec<(usize, f64)>,
}

/// Convex-concave procedure for the reference against a fixed agent.
///
/// With the agent's residence times fixed the divergence is, up to a
/// constant, `Σ_s W_s ln T_s − Σ_{s,q} w_{s,q} ln u_{s,q}` where `T_s` is the
/// supervisor's total residence at `s` and `u_{s,q}` its flow into `q`. The
/// second sum is linearized at the current iterate and the concave remainder
/// is maximized over the supervisor polytope.
pub fn ccp_fixed_agent(
    p: &ReferenceProblem,
    x_agent: &ResidenceTimes,
    init: &StationaryPolicy,
    cfg: &CcpConfig,
) -> Result<CcpResult> {
    let m = p.mdp();
    let poly = &p.sup_polytope;
    if p.agent_polytope
        .violation(&p.agent_polytope.from_residence(x_agent))
        > 1e-6
    {
        return Err(Error::InvalidArgument(
            "agent residence times are not in the agent polytope".into(),
        ));
    }
    let solver = ClarabelSolver::new(SolverConfig {
        tol_feas: 1e-10,
        tol_gap_abs: 1e-11,
        tol_gap_rel: 1e-11,
        max_iter: 400,
        verbose: false,
    });
    let weights: Vec<StateWeights> = p
        .product
        .s_d
        .iter()
        .filter_map(|&s| {
            let total: f64 = x_agent.values[s].iter().sum();
            if total <= 0.0 {
                return None;
            }
            let mut succ: BTreeMap<usize, f64> = BTreeMap::new();
            for (a, act) in m.actions[s].iter().enumerate() {
                for &(q, pr) in &act.successors {
                    *succ.entry(q).or_insert(0.0) += x_agent.values[s][a] * pr;
                }
            }
            Some(StateWeights {
                s,
                total,
                succ: succ.into_iter().filter(|&(_, w)| w > 0.0).collect(),
            })
        })
        .collect();
    let var_of: BTreeMap<(usize, usize), usize> =
        poly.vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let flow = |x: &[f64], s: usize, q: usize| -> f64 {
        m.actions[s]
            .iter()
            .enumerate()
            .map(|(a, act)| x[var_of[&(s, a)]] * act.prob_to(q))
            .sum()
    };
    let state_total =
        |x: &[f64], s: usize| -> f64 { (0..m.actions[s].len()).map(|a| x[var_of[&(s, a)]]).sum() };
    let objective = |x: &[f64]| -> f64 {
        let mut f = 0.0;
        for sw in &weights {
            let t = state_total(x, sw.s);
            if t <= 0.0 {
                continue;
            }
            for &(q, w) in &sw.succ {
                let u = flow(x, sw.s, q);
                if u <= 0.0 {
                    return f64::INFINITY;
                }
                f += w * (w * t / (sw.total * u)).ln();
            }
        }
        f
    };

    let mut x = poly.from_residence(&crate::mdp::policy_to_residence_times(
        m,
        init,
        &p.product.s_d,
    )?);
    if poly.violation(&x) > 1e-9 {
        x = poly.project(&x, &solver)?;
    }
    let mut trace = vec![objective(&x)];
    let mut surrogate = Vec::new();
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let n = poly.num_vars();
    let (g0, h0, cones0) = poly.rows();
    while iterations < cfg.max_iters && trace.last().is_some_and(|v| v.is_finite()) {
        iterations += 1;
        // linearization point
        let nt = weights.len();
        let mut c = vec![0.0; n + nt];
        let mut lin: Vec<(usize, usize, f64, f64)> = Vec::new();
        for sw in &weights {
            let xs: Vec<f64> = (0..m.actions[sw.s].len())
                .map(|a| x[var_of[&(sw.s, a)]])
                .collect();
            for &(q, w) in &sw.succ {
                let probs: Vec<f64> = m.actions[sw.s].iter().map(|act| act.prob_to(q)).collect();
                let (u, grad) = neg_log_flow_gradient(&xs, &probs, cfg.barrier_shift);
                if u <= cfg.barrier_shift {
                    flags.push(format!(
                        "barrier shift at {} -> {}",
                        m.name(sw.s),
                        m.name(q)
                    ));
                }
                // minimizing −w·(tangent of −ln u)
                for (a, ga) in grad.iter().enumerate() {
                    c[var_of[&(sw.s, a)]] -= w * ga;
                }
                lin.push((sw.s, q, w, u));
            }
        }
        let mut g = g0.clone();
        let mut h = h0.clone();
        let mut cones = cones0.clone();
        // (t_s, 1, T_s) ∈ K_exp, i.e. t_s ≤ ln T_s
        for (i, sw) in weights.iter().enumerate() {
            let row = h.len();
            c[n + i] = -sw.total;
            g.push((row, n + i, 1.0));
            for a in 0..m.actions[sw.s].len() {
                g.push((row + 2, var_of[&(sw.s, a)], 1.0));
            }
            h.extend_from_slice(&[0.0, -1.0, 0.0]);
            cones.push(Cone::Exp);
        }
        let prog = ConicProgram {
            num_vars: n + nt,
            c,
            p: Vec::new(),
            g,
            h,
            cones,
        };
        let sol = solver.solve(&prog)?;
        if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Inaccurate) {
            return Err(Error::Numerical(format!(
                "surrogate program stopped with {:?}",
                sol.status
            )));
        }
        let next: Vec<f64> = sol.y[..n].iter().map(|v| v.max(0.0)).collect();
        // surrogate in the same units as the objective
        let constant: f64 = weights
            .iter()
            .flat_map(|sw| sw.succ.iter().map(move |&(_, w)| w * (w / sw.total).ln()))
            .sum();
        let mut sval = constant;
        for sw in &weights {
            sval += sw.total * state_total(&next, sw.s).ln();
        }
        for &(s, q, w, u) in &lin {
            sval -= w * (u.ln() + flow(&next, s, q) / u - 1.0);
        }
        let fval = objective(&next);
        let prev = *trace.last().unwrap();
        if sval > fval + 1e-9 * (1.0 + fval.abs()) {
            flags.push(format!(
                "surrogate {sval} exceeds objective {fval} at iteration {iterations}"
            ));
        }
        if !(fval >= prev - 1e-9 * (1.0 + prev.abs())) {
            flags.push(format!(
                "objective decreased from {prev} to {fval}; keeping the previous iterate"
            ));
            converged = true;
            break;
        }
        surrogate.push(sval);
        trace.push(fval);
        x = next;
        if fval - prev < cfg.tol {
            converged = true;
            break;
        }
    }
    flags.dedup();
    Ok(CcpResult {
        policy: p.policy_from(&x),
        x_sup: x,
        trace,
        surrogate,
        iterations,
        converged,
        flags,
    })
}

/// Flow `u = Σ_a x_a P_a` (floored at `floor`) and the gradient of
/// `x ↦ −ln u` used by the linearization.
pub fn neg_log_flow_gradient(x: &[f64], probs: &[f64], floor: f64) -> (f64, Vec<f64>) {
    let u = x
        .iter()
        .zip(probs)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(floor);
    (u, probs.iter().map(|p| -p / u).collect())
}
