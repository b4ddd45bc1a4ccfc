use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::maximin::{LocalMaximin, MaximinConfig};
use super::polytope::max_abs_diff;
use super::ReferenceProblem;
use crate::conic::{ClarabelSolver, SolverConfig};
use crate::error::Result;
use crate::mdp::{policy_to_residence_times, StationaryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho_sup: f64,
    pub rho_agent: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub maximin: MaximinConfig,
    /// Weight of each polytope's task-maximizing vertex in the starting
    /// point; the rest is the placeholder reference's residence.
    pub start_weight: f64,
    /// Iterations between best-response evaluations; `None` picks every
    /// iteration up to 500 product states and every fifth above.
    pub best_response_every: Option<usize>,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho_sup: 1.0,
            rho_agent: 1.0,
            max_iters: 200,
            primal_tol: 1e-5,
            dual_tol: 1e-5,
            maximin: MaximinConfig::default(),
            start_weight: 0.5,
            best_response_every: None,
        }
    }
}

/// Iterates of the splitting, as flat vectors over the S_d state-action pairs
/// of [`ReferenceProblem::sup_polytope`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x_sup: Vec<f64>,
    pub x_agent: Vec<f64>,
    pub z_sup: Vec<f64>,
    pub z_agent: Vec<f64>,
    pub lambda_sup: Vec<f64>,
    pub lambda_agent: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmRecord {
    pub iteration: usize,
    /// Divergence between the policies of `z_agent` and `z_sup`.
    pub actual_kl: f64,
    /// Divergence of the optimal deceptive response to the `z_sup` policy.
    pub best_response_kl: Option<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// States whose local maximin fell back to the previous iterate.
    pub flagged_states: usize,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub policy: StationaryPolicy,
    pub state: AdmmState,
    pub history: Vec<AdmmRecord>,
    pub converged: bool,
    /// Best-response divergence of the returned policy.
    pub best_response_kl: f64,
    pub diagnostics: Vec<String>,
}

/// Local maximin updates, projections onto both flow polytopes and scaled
/// dual updates, with per-iteration divergence history.
pub fn admm_reference(p: &ReferenceProblem, cfg: &AdmmConfig) -> Result<AdmmResult> {
    let m = p.mdp();
    let solver = ClarabelSolver::new(SolverConfig {
        tol_feas: 1e-10,
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        max_iter: 400,
        verbose: false,
    });
    let poly_s = &p.sup_polytope;
    let poly_a = &p.agent_polytope;
    let n = poly_s.num_vars();

    // a common start is a trivial fixed point whenever it lies in both
    // polytopes, so each copy leans towards its own task
    let placeholder = poly_s.from_residence(&policy_to_residence_times(
        m,
        &p.product.reference,
        &p.product.s_d,
    )?);
    let w = cfg.start_weight.clamp(0.0, 1.0);
    let start = |poly: &super::FlowPolytope| -> Result<Vec<f64>> {
        let c: Vec<f64> = poly.task.iter().map(|v| -v).collect();
        let best = poly.minimize(&c, &solver)?;
        let v: Vec<f64> = placeholder
            .iter()
            .zip(&best)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        poly.project(&v, &solver)
    };
    let z_sup = start(poly_s)?;
    let z_agent = start(poly_a)?;
    let mut st = AdmmState {
        x_sup: z_sup.clone(),
        x_agent: z_agent.clone(),
        z_sup,
        z_agent,
        lambda_sup: vec![0.0; n],
        lambda_agent: vec![0.0; n],
        iteration: 0,
    };

    // per-state blocks: variable range and local kernel over the union of successors
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < n {
        let s = poly_s.vars[k].0;
        let start = k;
        while k < n && poly_s.vars[k].0 == s {
            k += 1;
        }
        let succ = m.successors(s);
        let kernel: Vec<Vec<f64>> = m.actions[s]
            .iter()
            .map(|act| succ.iter().map(|&q| act.prob_to(q)).collect())
            .collect();
        blocks.push((start..k, kernel));
    }

    let every = cfg
        .best_response_every
        .unwrap_or(if p.product.num_states() <= 500 { 1 } else { 5 })
        .max(1);
    let mut history: Vec<AdmmRecord> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut last_best = f64::NAN;

    for it in 1..=cfg.max_iters {
        let results: Vec<_> = blocks
            .par_iter()
            .map(|(range, kernel)| {
                let r = range.clone();
                let center_sup: Vec<f64> =
                    r.clone().map(|i| st.z_sup[i] - st.lambda_sup[i]).collect();
                let center_agent: Vec<f64> = r
                    .clone()
                    .map(|i| st.z_agent[i] - st.lambda_agent[i])
                    .collect();
                let local = LocalMaximin {
                    kernel: kernel.clone(),
                    rho_sup: cfg.rho_sup,
                    rho_agent: cfg.rho_agent,
                    center_sup,
                    center_agent,
                };
                let previous: Vec<f64> = r.clone().map(|i| st.x_sup[i]).collect();
                let reference: Vec<f64> = r.clone().map(|i| st.z_sup[i]).collect();
                let scale = reference
                    .iter()
                    .sum::<f64>()
                    .max(previous.iter().sum::<f64>())
                    .max(1e-3);
                let uniform = vec![scale / r.len() as f64; r.len()];
                local.solve(
                    &[previous.clone(), reference, uniform],
                    &previous,
                    &cfg.maximin,
                )
            })
            .collect();
        let mut flagged = 0;
        for ((range, _), sol) in blocks.iter().zip(results) {
            flagged += sol.flagged as usize;
            for (j, i) in range.clone().enumerate() {
                st.x_sup[i] = sol.x_sup[j];
                st.x_agent[i] = sol.x_agent[j];
            }
        }

        let v_sup: Vec<f64> = (0..n).map(|i| st.x_sup[i] + st.lambda_sup[i]).collect();
        let v_agent: Vec<f64> = (0..n).map(|i| st.x_agent[i] + st.lambda_agent[i]).collect();
        let z_sup = poly_s.project(&v_sup, &solver)?;
        let z_agent = poly_a.project(&v_agent, &solver)?;
        let dual_residual = cfg.rho_sup
            * max_abs_diff(&z_sup, &st.z_sup)
                .max(cfg.rho_agent * max_abs_diff(&z_agent, &st.z_agent));
        st.z_sup = z_sup;
        st.z_agent = z_agent;
        for i in 0..n {
            st.lambda_sup[i] += st.x_sup[i] - st.z_sup[i];
            st.lambda_agent[i] += st.x_agent[i] - st.z_agent[i];
        }
        let primal_residual =
            max_abs_diff(&st.x_sup, &st.z_sup).max(max_abs_diff(&st.x_agent, &st.z_agent));
        st.iteration = it;

        let reference = p.policy_from(&st.z_sup);
        let agent_x = poly_a.to_residence(m, &st.z_agent);
        let agent = crate::mdp::residence_times_to_policy(&agent_x, &reference);
        let actual_kl = p.divergence(&agent, &reference)?.as_f64();
        let done = primal_residual < cfg.primal_tol && dual_residual < cfg.dual_tol;
        let best_response_kl = if it % every == 0 || done || it == cfg.max_iters {
            let b = p.best_response(&reference, &solver)?.kl.as_f64();
            last_best = b;
            Some(b)
        } else {
            None
        };
        if let (Some(prev), Some(b)) = (history.last(), best_response_kl) {
            if let Some(pb) = prev.best_response_kl {
                if actual_kl > prev.actual_kl + 1e-3 && b > pb + 1e-6 {
                    diagnostics.push(format!(
                        "iteration {it}: actual divergence rose to {actual_kl} while the best response rose to {b}"
                    ));
                }
            }
        }
        history.push(AdmmRecord {
            iteration: it,
            actual_kl,
            best_response_kl,
            primal_residual,
            dual_residual,
            flagged_states: flagged,
        });
        if done {
            converged = true;
            break;
        }
    }

    let policy = p.policy_from(&st.z_sup);
    if let Err(e) = p.audit(&policy) {
        diagnostics.push(e.to_string());
    }
    Ok(AdmmResult {
        policy,
        state: st,
        history,
        converged,
        best_response_kl: last_best,
        diagnostics,
    })
}

/// History as CSV with header
/// `iteration,actual_kl,best_response_kl,primal_residual,dual_residual`;
/// skipped best-response evaluations are empty fields.
pub fn history_csv(history: &[AdmmRecord]) -> String {
    let mut out =
        String::from("iteration,actual_kl,best_response_kl,primal_residual,dual_residual\n");
    for r in history {
        let best = r.best_response_kl.map(fmt17).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration,
            fmt17(r.actual_kl),
            best,
            fmt17(r.primal_residual),
            fmt17(r.dual_residual)
        ));
    }
    out
}

fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        format!("{v}")
    }
}
