use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{
    quad_apply, quad_form, Cone, ConicProgram, ConicSolution, ConicSolver, SolveStatus,
    SolverConfig,
};
use crate::error::{Error, Result};

/// Interior-point backend. Our form `G y − h ∈ K` maps to Clarabel's
/// `A x + s = b, s ∈ K` with `A = −G`, `b = −h`. Dual exponential blocks are
/// rewritten through `(u, v, w) ↦ (u − v, −u, w)`, which maps `K*_exp` onto
/// `K_exp` and is its own transpose.
#[derive(Debug, Clone, Default)]
pub struct ClarabelSolver {
    pub config: SolverConfig,
}

impl ClarabelSolver {
    pub fn new(config: SolverConfig) -> Self {
        Self { config }
    }
}

fn dual_exp_rows(cones: &[Cone]) -> Vec<Option<(usize, usize)>> {
    // for each row: Some((block start, position in block)) if in a DualExp block
    let mut out = Vec::new();
    for &c in cones {
        let start = out.len();
        for k in 0..c.width() {
            out.push(match c {
                Cone::DualExp => Some((start, k)),
                _ => None,
            });
        }
    }
    out
}

/// Applies the self-transposed block map to a vector in place.
fn map_block(v: &mut [f64], o: usize) {
    let (u, w) = (v[o], v[o + 1]);
    v[o] = u - w;
    v[o + 1] = -u;
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution> {
        prog.check()?;
        let n = prog.num_vars;
        let m = prog.num_rows();
        if n == 0 {
            let slack: Vec<f64> = prog.h.iter().map(|v| -v).collect();
            let ok = prog.primal_violation(&[]) <= 1e-12;
            return Ok(ConicSolution {
                status: if ok {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::PrimalInfeasible
                },
                y: vec![],
                slack,
                dual: vec![0.0; m],
                primal_objective: 0.0,
                dual_objective: 0.0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                iterations: 0,
            });
        }

        let rows = dual_exp_rows(&prog.cones);
        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut push = |i: usize, j: usize, v: f64| {
            ai.push(i);
            aj.push(j);
            av.push(-v);
        };
        for &(i, j, v) in &prog.g {
            match rows[i] {
                Some((o, 0)) => {
                    push(o, j, v);
                    push(o + 1, j, -v);
                }
                Some((o, 1)) => push(o, j, -v),
                _ => push(i, j, v),
            }
        }
        let mut b: Vec<f64> = prog.h.iter().map(|v| -v).collect();
        let mut off = 0;
        let mut cones = Vec::with_capacity(prog.cones.len());
        for &c in &prog.cones {
            match c {
                Cone::Zero(k) => cones.push(SupportedConeT::ZeroConeT(k)),
                Cone::Nonnegative(k) => cones.push(SupportedConeT::NonnegativeConeT(k)),
                Cone::Exp => cones.push(SupportedConeT::ExponentialConeT()),
                Cone::DualExp => {
                    map_block(&mut b, off);
                    cones.push(SupportedConeT::ExponentialConeT());
                }
            }
            off += c.width();
        }
        let cones: Vec<SupportedConeT<f64>> = cones
            .into_iter()
            .filter(|c| {
                !matches!(
                    c,
                    SupportedConeT::ZeroConeT(0) | SupportedConeT::NonnegativeConeT(0)
                )
            })
            .collect();
        let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);
        let p = if prog.p.is_empty() {
            CscMatrix::zeros((n, n))
        } else {
            let (pi, (pj, pv)): (Vec<usize>, (Vec<usize>, Vec<f64>)) =
                prog.p.iter().map(|&(i, j, v)| (i, (j, v))).unzip();
            CscMatrix::new_from_triplets(n, n, pi, pj, pv)
        };

        // fallbacks for runs that stall short of the tolerances
        let mut best: Option<(SolveStatus, Vec<f64>, Vec<f64>, u32, f64)> = None;
        for variant in 0..4 {
            let mut settings = DefaultSettingsBuilder::default();
            settings
                .verbose(self.config.verbose)
                .tol_feas(self.config.tol_feas)
                .tol_gap_abs(self.config.tol_gap_abs)
                .tol_gap_rel(self.config.tol_gap_rel)
                .max_iter(self.config.max_iter);
            match variant {
                1 => {
                    settings
                        .iterative_refinement_reltol(1e-14)
                        .iterative_refinement_abstol(1e-14)
                        .iterative_refinement_max_iter(50);
                }
                2 => {
                    settings.static_regularization_constant(1e-10);
                }
                3 => {
                    settings.max_step_fraction(0.9);
                }
                _ => {}
            }
            let settings = settings
                .build()
                .map_err(|e| Error::Numerical(format!("solver settings: {e:?}")))?;
            let mut solver = DefaultSolver::new(&p, &prog.c, &a, &b, &cones, settings)
                .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
            solver.solve();
            let sol = &solver.solution;
            let status = match sol.status {
                SolverStatus::Solved => SolveStatus::Optimal,
                SolverStatus::AlmostSolved
                | SolverStatus::MaxIterations
                | SolverStatus::InsufficientProgress => SolveStatus::Inaccurate,
                SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                    SolveStatus::PrimalInfeasible
                }
                SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                    SolveStatus::DualInfeasible
                }
                _ => SolveStatus::NumericalTrouble,
            };
            let residual = sol.r_prim.max(sol.r_dual);
            let better = match &best {
                None => true,
                Some((SolveStatus::Inaccurate, .., r)) => {
                    status == SolveStatus::Optimal
                        || (status == SolveStatus::Inaccurate && residual < *r)
                }
                Some(_) => false,
            };
            if better {
                best = Some((
                    status,
                    sol.x.clone(),
                    sol.z.clone(),
                    sol.iterations,
                    residual,
                ));
            }
            if status != SolveStatus::Inaccurate {
                break;
            }
        }
        let (status, y, mut dual, iterations, _) = best.expect("at least one attempt");
        let mut off = 0;
        for &c in &prog.cones {
            if c == Cone::DualExp {
                map_block(&mut dual, off);
            }
            off += c.width();
        }
        let slack = prog.slack(&y);
        let primal_residual = prog.primal_violation(&y);
        // Gᵀu − c − P y
        let mut r: Vec<f64> = prog.c.iter().map(|v| -v).collect();
        for &(i, j, v) in &prog.g {
            r[j] += v * dual[i];
        }
        for (ri, pyi) in r.iter_mut().zip(quad_apply(&prog.p, &y)) {
            *ri -= pyi;
        }
        let dual_residual = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let quad = quad_form(&prog.p, &y);
        let dual_objective = prog.h.iter().zip(&dual).map(|(a, b)| a * b).sum::<f64>() - 0.5 * quad;
        Ok(ConicSolution {
            status,
            primal_objective: prog.objective(&y),
            y,
            slack,
            dual,
            dual_objective,
            primal_residual,
            dual_residual,
            iterations,
        })
    }
}
