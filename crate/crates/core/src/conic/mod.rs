//! Cone-tagged sparse programs
//!
//! ```text
//! minimize    ½ yᵀ P y + cᵀ y
//! subject to  G y − h ∈ K
//! ```
//!
//! with `K` a product of zero cones, nonnegative orthants, exponential cones
//! `K_exp = cl{(x1, x2, x3) : x2 > 0, x2·exp(x1/x2) ≤ x3}` and their duals.
//! The solver is reached through [`ConicSolver`]; [`ClarabelSolver`] is the
//! interior-point backend.

mod clarabel_backend;

pub use clarabel_backend::ClarabelSolver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    /// Exponential cone, width 3.
    Exp,
    /// Dual exponential cone
    /// `cl{(u, v, w) : u < 0, −u·exp(v/u − 1) ≤ w}`, width 3.
    DualExp,
}

impl Cone {
    pub fn width(&self) -> usize {
        match self {
            Cone::Zero(n) | Cone::Nonnegative(n) => *n,
            Cone::Exp | Cone::DualExp => 3,
        }
    }

    /// Dual cone; `None` for the zero cone, whose dual is the whole space.
    pub fn dual(&self) -> Option<Cone> {
        match self {
            Cone::Zero(_) => None,
            Cone::Nonnegative(n) => Some(Cone::Nonnegative(*n)),
            Cone::Exp => Some(Cone::DualExp),
            Cone::DualExp => Some(Cone::Exp),
        }
    }
}

/// Distance-like violation of cone membership for one block (0 when inside).
pub fn cone_violation(cone: Cone, v: &[f64]) -> f64 {
    match cone {
        Cone::Zero(_) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        Cone::Nonnegative(_) => v.iter().fold(0.0, |m, x| m.max(-x)),
        Cone::Exp => exp_violation(v[0], v[1], v[2]),
        // (u, v, w) ∈ K*_exp  ⟺  (u − v, −u, w) ∈ K_exp
        Cone::DualExp => exp_violation(v[0] - v[1], -v[0], v[2]),
    }
}

fn exp_violation(x1: f64, x2: f64, x3: f64) -> f64 {
    if x2 > 0.0 {
        (x2 * (x1 / x2).exp() - x3).max(0.0)
    } else {
        // closure: x2 = 0 requires x1 ≤ 0 and x3 ≥ 0
        (-x2).max(x1).max(-x3).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub c: Vec<f64>,
    /// Optional quadratic term: upper-triangular `(row, col, value)` triplets
    /// (row ≤ col) of a symmetric `P`; duplicates are summed.
    pub p: Vec<(usize, usize, f64)>,
    /// `G` as `(row, col, value)` triplets.
    pub g: Vec<(usize, usize, f64)>,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn num_rows(&self) -> usize {
        self.h.len()
    }

    pub fn check(&self) -> Result<()> {
        let width: usize = self.cones.iter().map(Cone::width).sum();
        if width != self.h.len() {
            return Err(Error::InvalidArgument(format!(
                "cone widths sum to {width} but the program has {} rows",
                self.h.len()
            )));
        }
        if self.c.len() != self.num_vars {
            return Err(Error::InvalidArgument(
                "objective length differs from variable count".into(),
            ));
        }
        let bad = self
            .g
            .iter()
            .any(|&(i, j, v)| i >= self.h.len() || j >= self.num_vars || !v.is_finite())
            || self
                .p
                .iter()
                .any(|&(i, j, v)| i > j || j >= self.num_vars || !v.is_finite());
        if bad {
            return Err(Error::InvalidArgument(
                "matrix entry out of range or not finite".into(),
            ));
        }
        Ok(())
    }

    /// `G y − h`.
    pub fn slack(&self, y: &[f64]) -> Vec<f64> {
        let mut s: Vec<f64> = self.h.iter().map(|v| -v).collect();
        for &(i, j, v) in &self.g {
            s[i] += v * y[j];
        }
        s
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        let lin: f64 = self.c.iter().zip(y).map(|(a, b)| a * b).sum();
        lin + 0.5 * quad_form(&self.p, y)
    }

    /// Largest cone-membership violation of the slack `G y − h`.
    pub fn primal_violation(&self, y: &[f64]) -> f64 {
        let s = self.slack(y);
        let mut off = 0;
        let mut worst = 0.0f64;
        for &cone in &self.cones {
            let w = cone.width();
            worst = worst.max(cone_violation(cone, &s[off..off + w]));
            off += w;
        }
        worst
    }

    /// Dual of a linear-conic program (no quadratic term):
    ///
    /// ```text
    /// maximize hᵀu  subject to  Gᵀu = c,  u ∈ K*
    /// ```
    ///
    /// returned as a minimization over `u` of `−hᵀu`, so the optimal value of
    /// the returned program is the negated dual optimum.
    pub fn dual(&self) -> Result<ConicProgram> {
        self.check()?;
        if !self.p.is_empty() {
            return Err(Error::InvalidArgument(
                "dual builder expects a linear objective".into(),
            ));
        }
        let m = self.num_rows();
        let mut g = Vec::with_capacity(self.g.len() + m);
        let mut h = Vec::with_capacity(self.num_vars + m);
        let mut cones = Vec::new();
        // Gᵀu − c = 0
        for &(i, j, v) in &self.g {
            g.push((j, i, v));
        }
        h.extend_from_slice(&self.c);
        if self.num_vars > 0 {
            cones.push(Cone::Zero(self.num_vars));
        }
        // u restricted blockwise to the dual cone; zero-cone rows stay free
        let mut row = self.num_vars;
        let mut off = 0;
        for &cone in &self.cones {
            let w = cone.width();
            if let Some(d) = cone.dual() {
                for k in 0..w {
                    g.push((row + k, off + k, 1.0));
                    h.push(0.0);
                }
                row += w;
                cones.push(d);
            }
            off += w;
        }
        Ok(ConicProgram {
            num_vars: m,
            c: self.h.iter().map(|v| -v).collect(),
            p: Vec::new(),
            g,
            h,
            cones: merge_cones(cones),
        })
    }
}

/// `yᵀ P y` for upper-triangular triplets of a symmetric `P`.
pub(crate) fn quad_form(p: &[(usize, usize, f64)], y: &[f64]) -> f64 {
    p.iter()
        .map(|&(i, j, v)| {
            if i == j {
                v * y[i] * y[i]
            } else {
                2.0 * v * y[i] * y[j]
            }
        })
        .sum()
}

/// `P y` for upper-triangular triplets of a symmetric `P`.
pub(crate) fn quad_apply(p: &[(usize, usize, f64)], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for &(i, j, v) in p {
        out[i] += v * y[j];
        if i != j {
            out[j] += v * y[i];
        }
    }
    out
}

/// Joins adjacent zero or nonnegative blocks.
fn merge_cones(cones: Vec<Cone>) -> Vec<Cone> {
    let mut out: Vec<Cone> = Vec::with_capacity(cones.len());
    for c in cones {
        match (out.last_mut(), c) {
            (Some(Cone::Zero(a)), Cone::Zero(b)) => *a += b,
            (Some(Cone::Nonnegative(a)), Cone::Nonnegative(b)) => *a += b,
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Reduced-accuracy solution; callers must verify it themselves.
    Inaccurate,
    PrimalInfeasible,
    DualInfeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub y: Vec<f64>,
    pub slack: Vec<f64>,
    /// Dual vector `u ∈ K*` with `Gᵀu = c + P y`.
    pub dual: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(p: &ConicProgram) -> ConicSolution {
        ClarabelSolver::default().solve(p).unwrap()
    }

    #[test]
    fn exp_cone_orientation() {
        // minimize r subject to (−r, w, π t) ∈ K_exp with w = 0.3, t = 1, π = 0.5
        // gives r = w ln(w / (π t)).
        let (w, t, pi) = (0.3, 1.0, 0.5);
        let prog = ConicProgram {
            num_vars: 1,
            c: vec![1.0],
            p: vec![],
            g: vec![(0, 0, -1.0)],
            h: vec![0.0, -w, -pi * t],
            cones: vec![Cone::Exp],
        };
        let sol = solve(&prog);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let want = w * (w / (pi * t)).ln();
        assert!((sol.y[0] - want).abs() < 1e-7, "{} vs {want}", sol.y[0]);
    }

    #[test]
    fn duality_on_small_exp_program() {
        let (w, t, pi) = (0.3, 1.0, 0.5);
        let prog = ConicProgram {
            num_vars: 1,
            c: vec![1.0],
            p: vec![],
            g: vec![(0, 0, -1.0)],
            h: vec![0.0, -w, -pi * t],
            cones: vec![Cone::Exp],
        };
        let primal = solve(&prog);
        let dual = solve(&prog.dual().unwrap());
        assert_eq!(dual.status, SolveStatus::Optimal);
        assert!((primal.primal_objective + dual.primal_objective).abs() < 1e-7);
        // the solver's own multipliers are dual feasible for the same program
        let d = prog.dual().unwrap();
        assert!(d.primal_violation(&primal.dual) < 1e-7);
    }

    #[test]
    fn linear_program() {
        // minimize −y0 − y1 subject to y0 + 2 y1 ≤ 4, y ≥ 0, y0 ≤ 3
        let prog = ConicProgram {
            num_vars: 2,
            c: vec![-1.0, -1.0],
            p: vec![],
            g: vec![
                (0, 0, -1.0),
                (0, 1, -2.0),
                (1, 0, 1.0),
                (2, 1, 1.0),
                (3, 0, -1.0),
            ],
            h: vec![-4.0, 0.0, 0.0, -3.0],
            cones: vec![Cone::Nonnegative(4)],
        };
        let sol = solve(&prog);
        assert!((sol.y[0] - 3.0).abs() < 1e-7);
        assert!((sol.y[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn empty_program() {
        let prog = ConicProgram::default();
        let sol = solve(&prog);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.primal_objective, 0.0);
        let d = prog.dual().unwrap();
        assert_eq!(d.num_vars, 0);
        assert_eq!(solve(&d).primal_objective, 0.0);
    }

    #[test]
    fn dual_cone_membership() {
        // (−1, v, w) ∈ K*_exp iff exp(−v − 1) ≤ w
        assert_eq!(
            cone_violation(Cone::DualExp, &[-1.0, 0.0, (-1.0f64).exp() + 1e-12]),
            0.0
        );
        assert!(cone_violation(Cone::DualExp, &[-1.0, 0.0, 0.3]) > 0.0);
        assert_eq!(cone_violation(Cone::Exp, &[0.0, 1.0, 1.0]), 0.0);
        assert!(cone_violation(Cone::Exp, &[1.0, 1.0, 2.0]) > 0.0);
    }
}
