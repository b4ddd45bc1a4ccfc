use std::collections::BTreeMap;

use crate::conic::{Cone, ConicProgram, ConicSolver, SolveStatus};
use crate::deceptive::InfeasibleReport;
use crate::error::{Error, Result};
use crate::mdp::{solve_sparse, Mdp, ResidenceTimes, StateSet};

/// Residence-time vectors over `(s, a)` pairs of a state set that satisfy
/// nonnegativity, flow balance and a reachability threshold:
///
/// ```text
/// x ≥ 0,   Σ_a x_{s,a} − Σ_{q,a} x_{q,a} P(q,a,s) = 1{s = s0},   taskᵀx ≥ threshold
/// ```
#[derive(Debug, Clone)]
pub struct FlowPolytope {
    pub vars: Vec<(usize, usize)>,
    /// Flow row `i` belongs to `states[i]`.
    pub states: Vec<usize>,
    /// Probability mass each variable sends into the target.
    pub task: Vec<f64>,
    /// Target already met at the initial state.
    pub base: f64,
    pub nu: f64,
    flow: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

// phase-1 slack for solver accuracy on thresholds at the boundary
const FEAS_TOL: f64 = 1e-7;
/// Entries below this are treated as active bounds when polishing.
const ACTIVE_TOL: f64 = 1e-9;

impl FlowPolytope {
    /// `counted` restricts which states' transitions into `target` count
    /// towards the threshold.
    pub fn new(m: &Mdp, states: &StateSet, target: &StateSet, counted: &StateSet, nu: f64) -> Self {
        let vars: Vec<(usize, usize)> = states
            .iter()
            .flat_map(|&s| (0..m.actions[s].len()).map(move |a| (s, a)))
            .collect();
        let row: BTreeMap<usize, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut flow = Vec::new();
        let mut task = Vec::with_capacity(vars.len());
        for (k, &(s, a)) in vars.iter().enumerate() {
            flow.push((row[&s], k, 1.0));
            let mut into = 0.0;
            for &(t, p) in &m.actions[s][a].successors {
                if let Some(&r) = row.get(&t) {
                    flow.push((r, k, -p));
                }
                if target.contains(&t) {
                    into += p;
                }
            }
            task.push(if counted.contains(&s) { into } else { 0.0 });
        }
        let mut rhs = vec![0.0; states.len()];
        if let Some(&r) = row.get(&m.initial) {
            rhs[r] = 1.0;
        }
        Self {
            vars,
            states: states.iter().copied().collect(),
            task,
            base: if target.contains(&m.initial) {
                1.0
            } else {
                0.0
            },
            nu,
            flow,
            rhs,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn threshold(&self) -> f64 {
        self.nu - self.base
    }

    /// Reachability probability certified by `x`.
    pub fn task_value(&self, x: &[f64]) -> f64 {
        self.base + dot(&self.task, x)
    }

    pub fn flow_residual(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = self.rhs.iter().map(|v| -v).collect();
        for &(i, j, v) in &self.flow {
            r[i] += v * x[j];
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest violation of any constraint.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let neg = x.iter().fold(0.0f64, |m, &v| m.max(-v));
        let task = (self.nu - self.task_value(x)).max(0.0);
        self.flow_residual(x).max(neg).max(task)
    }

    /// Constraint rows over the first `num_vars()` variables: a zero cone for
    /// flow balance and one nonnegative block for `x ≥ 0` and the task row.
    pub fn rows(&self) -> (Vec<(usize, usize, f64)>, Vec<f64>, Vec<Cone>) {
        let nf = self.states.len();
        let n = self.num_vars();
        let mut g = self.flow.clone();
        let mut h = self.rhs.clone();
        for k in 0..n {
            g.push((nf + k, k, 1.0));
            h.push(0.0);
        }
        for (k, &v) in self.task.iter().enumerate() {
            if v != 0.0 {
                g.push((nf + n, k, v));
            }
        }
        h.push(self.threshold());
        let mut cones = Vec::new();
        if nf > 0 {
            cones.push(Cone::Zero(nf));
        }
        cones.push(Cone::Nonnegative(n + 1));
        (g, h, cones)
    }

    /// Solves `min cᵀx` over the flow constraints, without the task row when
    /// `with_task` is false.
    fn linear(
        &self,
        c: &[f64],
        with_task: bool,
        solver: &dyn ConicSolver,
    ) -> Result<(SolveStatus, Vec<f64>)> {
        let (mut g, mut h, mut cones) = self.rows();
        if !with_task {
            let task_row = h.len() - 1;
            g.retain(|&(i, _, _)| i != task_row);
            h.pop();
            if let Some(Cone::Nonnegative(k)) = cones.last_mut() {
                *k -= 1;
            }
        }
        let prog = ConicProgram {
            num_vars: self.num_vars(),
            c: c.to_vec(),
            p: Vec::new(),
            g,
            h,
            cones,
        };
        let sol = solver.solve(&prog)?;
        Ok((sol.status, sol.y.iter().map(|v| v.max(0.0)).collect()))
    }

    /// Phase-1 check: the largest attainable reachability probability over
    /// the flow constraints, erroring when it is below `nu`.
    pub fn check_nonempty(&self, solver: &dyn ConicSolver) -> Result<f64> {
        let best = if self.num_vars() == 0 {
            self.base
        } else {
            let c: Vec<f64> = self.task.iter().map(|v| -v).collect();
            let (status, y) = self.linear(&c, false, solver)?;
            match status {
                SolveStatus::Optimal | SolveStatus::Inaccurate => self.task_value(&y).min(1.0),
                SolveStatus::PrimalInfeasible => {
                    return Err(Error::InfeasibleSet(
                        "flow constraints have no solution".into(),
                    ))
                }
                other => {
                    return Err(Error::Numerical(format!(
                        "phase-1 program stopped with {other:?}"
                    )))
                }
            }
        };
        if best + FEAS_TOL < self.nu {
            return Err(Error::Infeasible(InfeasibleReport {
                max_achievable: best,
                required: self.nu,
            }));
        }
        Ok(best)
    }

    /// Minimizes `cᵀx` over the polytope.
    pub fn minimize(&self, c: &[f64], solver: &dyn ConicSolver) -> Result<Vec<f64>> {
        let (status, y) = self.linear(c, true, solver)?;
        match status {
            SolveStatus::Optimal | SolveStatus::Inaccurate => Ok(y),
            SolveStatus::PrimalInfeasible => Err(Error::Infeasible(InfeasibleReport {
                max_achievable: f64::NAN,
                required: self.nu,
            })),
            other => Err(Error::Numerical(format!(
                "linear program stopped with {other:?}"
            ))),
        }
    }

    /// Euclidean projection `argmin ‖x − v‖²` over the polytope. The interior
    /// point solution is polished by solving the KKT system of its active set.
    pub fn project(&self, v: &[f64], solver: &dyn ConicSolver) -> Result<Vec<f64>> {
        let n = self.num_vars();
        assert_eq!(v.len(), n);
        if n == 0 {
            return Ok(Vec::new());
        }
        let (g, h, cones) = self.rows();
        let prog = ConicProgram {
            num_vars: n,
            c: v.iter().map(|x| -x).collect(),
            p: (0..n).map(|k| (k, k, 1.0)).collect(),
            g,
            h,
            cones,
        };
        let sol = solver.solve(&prog)?;
        match sol.status {
            SolveStatus::Optimal | SolveStatus::Inaccurate => {}
            other => {
                return Err(Error::InfeasibleSet(format!(
                    "projection stopped with {other:?}"
                )))
            }
        }
        let rough: Vec<f64> = sol.y.iter().map(|x| x.max(0.0)).collect();
        let dist = |x: &[f64]| x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        Ok(match self.polish(v, &rough) {
            Some(z)
                if self.violation(&z) <= self.violation(&rough).max(1e-10)
                    && dist(&z) <= dist(&rough) + 1e-12 * (1.0 + dist(&rough)) =>
            {
                z
            }
            _ => rough,
        })
    }

    /// Active-set refinement: fixes the variables the interior point
    /// solution leaves near zero, solves the equality-constrained projection
    /// on the rest, and drops variables that come out negative.
    fn polish(&self, v: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        let n = self.num_vars();
        let task_active = self.task_value(z) - self.nu < ACTIVE_TOL && self.nu > 0.0;
        let mut free: Vec<usize> = (0..n).filter(|&k| z[k] > ACTIVE_TOL).collect();
        for _ in 0..=n {
            let out = self.kkt(v, &free, task_active)?;
            let kept: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&k| out[k] >= -ACTIVE_TOL)
                .collect();
            if kept.len() == free.len() {
                return Some(out.into_iter().map(|x| x.max(0.0)).collect());
            }
            free = kept;
        }
        None
    }

    fn kkt(&self, v: &[f64], free: &[usize], task_active: bool) -> Option<Vec<f64>> {
        let n = self.num_vars();
        let col: BTreeMap<usize, usize> = free.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        // equality rows restricted to the free variables
        let mut rows: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for &(i, j, val) in &self.flow {
            if let Some(&c) = col.get(&j) {
                rows.entry(i).or_default().push((c, val));
            }
        }
        let mut eq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for (i, r) in (0..self.states.len()).map(|i| (i, rows.remove(&i))) {
            match r {
                Some(entries) => eq.push((entries, self.rhs[i])),
                None if self.rhs[i].abs() > 0.0 => return None,
                None => {}
            }
        }
        if task_active {
            let entries: Vec<(usize, f64)> = free
                .iter()
                .enumerate()
                .filter(|(_, &k)| self.task[k] != 0.0)
                .map(|(c, &k)| (c, self.task[k]))
                .collect();
            if entries.is_empty() {
                return None;
            }
            eq.push((entries, self.threshold()));
        }
        // [I Aᵀ; A 0] [z; μ] = [v; b]
        let nf = free.len();
        let dim = nf + eq.len();
        let mut trip = Vec::new();
        let mut rhs = vec![0.0; dim];
        for (c, &k) in free.iter().enumerate() {
            trip.push((c, c, 1.0));
            rhs[c] = v[k];
        }
        for (r, (entries, b)) in eq.iter().enumerate() {
            for &(c, val) in entries {
                trip.push((nf + r, c, val));
                trip.push((c, nf + r, val));
            }
            rhs[nf + r] = *b;
        }
        let sol = solve_sparse(dim, &trip, &rhs).ok()?;
        let mut out = vec![0.0; n];
        for (c, &k) in free.iter().enumerate() {
            out[k] = sol[c];
        }
        Some(out)
    }

    pub fn to_residence(&self, m: &Mdp, x: &[f64]) -> ResidenceTimes {
        let mut r = ResidenceTimes::zeros(m);
        for (k, &(s, a)) in self.vars.iter().enumerate() {
            r.values[s][a] = x[k];
        }
        r
    }

    pub fn from_residence(&self, r: &ResidenceTimes) -> Vec<f64> {
        self.vars.iter().map(|&(s, a)| r.values[s][a]).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
