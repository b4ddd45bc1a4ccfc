use std::collections::BTreeMap;

use super::{DeceptionProblem, Norm};
use crate::conic::{Cone, ConicProgram};
use crate::mdp::{Mdp, ResidenceTimes};

/// Assembled program plus the meaning of its variables.
#[derive(Debug, Clone)]
pub struct DeceptionProgram {
    pub program: ConicProgram,
    /// Variable `k < x_vars.len()` is the residence time of `x_vars[k] = (s, a)`.
    pub x_vars: Vec<(usize, usize)>,
    /// Divergence epigraph variables, one per `(s, q)` with its reference
    /// probability, stored after the residence variables.
    pub r_vars: Vec<(usize, usize, f64)>,
}

impl DeceptionProgram {
    pub fn num_exp_blocks(&self) -> usize {
        self.program
            .cones
            .iter()
            .filter(|c| **c == Cone::Exp)
            .count()
    }

    /// Residence times from a solution vector, clipped at zero.
    pub fn residence_from(&self, m: &Mdp, y: &[f64]) -> ResidenceTimes {
        let mut x = ResidenceTimes::zeros(m);
        for (k, &(s, a)) in self.x_vars.iter().enumerate() {
            x.values[s][a] = y[k].max(0.0);
        }
        x
    }
}

struct Rows {
    g: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    cones: Vec<Cone>,
}

/// Flow balance (zero cone), nonnegativity and the task row (nonnegative
/// orthant) over the residence variables `0..x_vars.len()`.
fn feasible_set_rows(p: &DeceptionProblem, x_vars: &[(usize, usize)]) -> Rows {
    let m = p.mdp();
    let mut state_row = BTreeMap::new();
    for (i, &s) in p.differ_set.iter().enumerate() {
        state_row.insert(s, i);
    }
    let nf = p.differ_set.len();
    let mut g = Vec::new();
    let mut h = vec![0.0; nf];
    if let Some(&r) = state_row.get(&m.initial) {
        h[r] = 1.0;
    }
    // Σ_a x_{s,a} − Σ_{q,a} x_{q,a} P(q,a,s) = 1{s = s0}
    for (k, &(s, a)) in x_vars.iter().enumerate() {
        g.push((state_row[&s], k, 1.0));
        for &(t, prob) in &m.actions[s][a].successors {
            if let Some(&r) = state_row.get(&t) {
                g.push((r, k, -prob));
            }
        }
    }
    let n = x_vars.len();
    // x ≥ 0
    for k in 0..n {
        g.push((nf + k, k, 1.0));
        h.push(0.0);
    }
    // Σ x_{s,a} P(s,a,C_A) ≥ ν
    let task_row = nf + n;
    for (k, &(s, a)) in x_vars.iter().enumerate() {
        let into: f64 = m.actions[s][a]
            .successors
            .iter()
            .filter(|(t, _)| p.product.c_agent.contains(t))
            .map(|(_, prob)| prob)
            .sum();
        if into > 0.0 {
            g.push((task_row, k, into));
        }
    }
    let already = if p.product.c_agent.contains(&m.initial) {
        1.0
    } else {
        0.0
    };
    h.push(p.nu_agent - already);
    let mut cones = Vec::new();
    if nf > 0 {
        cones.push(Cone::Zero(nf));
    }
    cones.push(Cone::Nonnegative(n + 1));
    Rows { g, h, cones }
}

fn residence_vars(p: &DeceptionProblem) -> Vec<(usize, usize)> {
    p.differ_set
        .iter()
        .flat_map(|&s| p.allowed[s].iter().map(move |&a| (s, a)))
        .collect()
}

/// Variables `y = [x, r]`; objective `Σ r`; one exponential cone per
/// `(s, q)` with `q` a successor of `s` under a surviving action:
///
/// ```text
/// (−r_{s,q},  Σ_a P(s,a,q) x_{s,a},  π_{s,q} Σ_a x_{s,a}) ∈ K_exp
/// ```
///
/// which is `r_{s,q} ≥ w log(w / (π_{s,q} t))` with `w` the flow into `q`
/// and `t` the total residence at `s`.
pub fn build_conic_program(p: &DeceptionProblem) -> DeceptionProgram {
    let m = p.mdp();
    let x_vars = residence_vars(p);
    let n = x_vars.len();
    let mut r_vars = Vec::new();
    for &s in &p.differ_set {
        let row = p.reference_row(s);
        let mut succ: Vec<usize> = p.allowed[s]
            .iter()
            .flat_map(|&a| m.actions[s][a].successors.iter())
            .filter(|(_, prob)| *prob > 0.0)
            .map(|(q, _)| *q)
            .collect();
        succ.sort_unstable();
        succ.dedup();
        for q in succ {
            r_vars.push((s, q, row[q]));
        }
    }
    let num_vars = n + r_vars.len();
    let Rows {
        mut g,
        mut h,
        mut cones,
    } = feasible_set_rows(p, &x_vars);
    let mut first_x: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(s, _)) in x_vars.iter().enumerate() {
        first_x.entry(s).or_default().push(k);
    }
    for (j, &(s, q, pi)) in r_vars.iter().enumerate() {
        let row = h.len();
        g.push((row, n + j, -1.0));
        for &k in &first_x[&s] {
            let a = x_vars[k].1;
            let prob = m.actions[s][a].prob_to(q);
            if prob > 0.0 {
                g.push((row + 1, k, prob));
            }
            g.push((row + 2, k, pi));
        }
        h.extend_from_slice(&[0.0, 0.0, 0.0]);
        cones.push(Cone::Exp);
    }
    let mut c = vec![0.0; num_vars];
    for v in c.iter_mut().skip(n) {
        *v = 1.0;
    }
    DeceptionProgram {
        program: ConicProgram {
            num_vars,
            c,
            p: Vec::new(),
            g,
            h,
            cones,
        },
        x_vars,
        r_vars,
    }
}

/// Residence-distance baseline over the same feasible set: L1 via slack
/// variables `t ≥ |x − x_ref|`, L2 as `½‖x − x_ref‖²`.
pub(crate) fn build_norm_program(
    p: &DeceptionProblem,
    x_ref: &ResidenceTimes,
    norm: Norm,
) -> DeceptionProgram {
    let x_vars = residence_vars(p);
    let n = x_vars.len();
    let target: Vec<f64> = x_vars.iter().map(|&(s, a)| x_ref.values[s][a]).collect();
    match norm {
        Norm::One => {
            let Rows {
                mut g,
                mut h,
                mut cones,
            } = feasible_set_rows(p, &x_vars);
            // t − x ≥ −x_ref and t + x ≥ x_ref
            let base = h.len();
            for k in 0..n {
                g.push((base + 2 * k, n + k, 1.0));
                g.push((base + 2 * k, k, -1.0));
                h.push(-target[k]);
                g.push((base + 2 * k + 1, n + k, 1.0));
                g.push((base + 2 * k + 1, k, 1.0));
                h.push(target[k]);
            }
            cones.push(Cone::Nonnegative(2 * n));
            let mut c = vec![0.0; 2 * n];
            for v in c.iter_mut().skip(n) {
                *v = 1.0;
            }
            DeceptionProgram {
                program: ConicProgram {
                    num_vars: 2 * n,
                    c,
                    p: Vec::new(),
                    g,
                    h,
                    cones,
                },
                x_vars,
                r_vars: Vec::new(),
            }
        }
        Norm::Two => {
            let Rows { g, h, cones } = feasible_set_rows(p, &x_vars);
            DeceptionProgram {
                program: ConicProgram {
                    num_vars: n,
                    c: target.iter().map(|v| -v).collect(),
                    p: (0..n).map(|k| (k, k, 1.0)).collect(),
                    g,
                    h,
                    cones,
                },
                x_vars,
                r_vars: Vec::new(),
            }
        }
    }
}
