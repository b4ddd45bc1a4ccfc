//! Per-state maximin subproblem of the ADMM iteration:
//!
//! ```text
//! max_{xs ≥ 0} min_{xa ≥ 0}  D(xa, xs) − ρs/2 ‖xs − cs‖² + ρa/2 ‖xa − ca‖²
//! ```
//!
//! where `D` is the successor divergence of the agent row `xa` from the
//! successor distribution induced by the supervisor row `xs`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::mdp::RESIDENCE_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximinConfig {
    /// Initial step of the outer projected-gradient ascent.
    pub outer_step: f64,
    pub outer_max_iters: usize,
    pub outer_tol: f64,
    /// Accuracy of the inner convex minimization.
    pub inner_tol: f64,
}

impl Default for MaximinConfig {
    fn default() -> Self {
        Self {
            outer_step: 1.0,
            outer_max_iters: 200,
            outer_tol: 1e-10,
            inner_tol: 1e-9,
        }
    }
}

/// Data of one local problem. Successors are indexed locally.
#[derive(Debug, Clone)]
pub struct LocalMaximin {
    /// `kernel[a][j]`: probability of local successor `j` under action `a`.
    pub kernel: Vec<Vec<f64>>,
    pub rho_sup: f64,
    pub rho_agent: f64,
    /// Proximal centres `z − λ`.
    pub center_sup: Vec<f64>,
    pub center_agent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub x_sup: Vec<f64>,
    pub x_agent: Vec<f64>,
    /// Local augmented-Lagrangian value at the solution.
    pub value: f64,
    /// Set when no start produced a usable ascent and the previous iterate
    /// was returned.
    pub flagged: bool,
}

impl LocalMaximin {
    pub fn num_actions(&self) -> usize {
        self.kernel.len()
    }

    fn num_succ(&self) -> usize {
        self.kernel.first().map_or(0, |r| r.len())
    }

    fn flows(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.num_succ()];
        for (a, row) in self.kernel.iter().enumerate() {
            if x[a] != 0.0 {
                for (j, &p) in row.iter().enumerate() {
                    u[j] += x[a] * p;
                }
            }
        }
        u
    }

    /// Successor distribution of a supervisor row, `None` when the row has
    /// no mass.
    pub fn successor_dist(&self, x_sup: &[f64]) -> Option<Vec<f64>> {
        let t: f64 = x_sup.iter().sum();
        if t <= RESIDENCE_THRESHOLD {
            return None;
        }
        Some(self.flows(x_sup).into_iter().map(|u| u / t).collect())
    }

    /// Divergence term of the local objective. Rows without supervisor or
    /// agent mass contribute zero; agent mass on a successor the supervisor
    /// row never produces gives `+∞`.
    pub fn divergence(&self, x_agent: &[f64], x_sup: &[f64]) -> f64 {
        let Some(pi) = self.successor_dist(x_sup) else {
            return 0.0;
        };
        let total: f64 = x_agent.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut d = 0.0;
        for (j, w) in self.flows(x_agent).into_iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if pi[j] <= 0.0 {
                return f64::INFINITY;
            }
            d += w * (w / (total * pi[j])).ln();
        }
        d
    }

    fn agent_value(&self, x_agent: &[f64], x_sup: &[f64]) -> f64 {
        self.divergence(x_agent, x_sup)
            + 0.5 * self.rho_agent * sq_dist(x_agent, &self.center_agent)
    }

    /// Inner minimizer over the agent row. Actions that reach a successor
    /// the supervisor row excludes are held at zero.
    pub fn inner(&self, x_sup: &[f64], tol: f64) -> (Vec<f64>, f64) {
        let k = self.num_actions();
        let Some(pi) = self.successor_dist(x_sup) else {
            let x: Vec<f64> = self.center_agent.iter().map(|v| v.max(0.0)).collect();
            let v = self.agent_value(&x, x_sup);
            return (x, v);
        };
        let free: Vec<usize> = (0..k)
            .filter(|&a| {
                self.kernel[a]
                    .iter()
                    .zip(&pi)
                    .all(|(&p, &q)| p <= 0.0 || q > 0.0)
            })
            .collect();
        let x = barrier_newton(self, &free, &pi, tol);
        let v = self.agent_value(&x, x_sup);
        (x, v)
    }

    /// Outer objective and the inner minimizer it was evaluated with.
    pub fn outer_value(&self, x_sup: &[f64], tol: f64) -> (f64, Vec<f64>) {
        let (xa, v) = self.inner(x_sup, tol);
        (
            v - 0.5 * self.rho_sup * sq_dist(x_sup, &self.center_sup),
            xa,
        )
    }

    /// Envelope gradient of the outer objective with the inner minimizer held
    /// fixed.
    pub fn outer_gradient(&self, x_sup: &[f64], x_agent: &[f64]) -> Vec<f64> {
        let t: f64 = x_sup.iter().sum();
        let u = self.flows(x_sup);
        let w = self.flows(x_agent);
        let total: f64 = x_agent.iter().sum();
        (0..self.num_actions())
            .map(|a| {
                let mut g = if t > RESIDENCE_THRESHOLD {
                    total / t
                } else {
                    0.0
                };
                for (j, &p) in self.kernel[a].iter().enumerate() {
                    if p > 0.0 && w[j] > 0.0 && u[j] > 0.0 {
                        g -= w[j] * p / u[j];
                    }
                }
                g - self.rho_sup * (x_sup[a] - self.center_sup[a])
            })
            .collect()
    }

    /// Projected gradient ascent from `start`; `None` when the start is
    /// unusable.
    pub fn ascend_from(&self, start: &[f64], cfg: &MaximinConfig) -> Option<LocalSolution> {
        let mut x: Vec<f64> = start.iter().map(|v| v.max(0.0)).collect();
        let (mut val, mut xa) = self.outer_value(&x, cfg.inner_tol);
        if !val.is_finite() {
            return None;
        }
        let mut step = cfg.outer_step;
        for _ in 0..cfg.outer_max_iters {
            let g = self.outer_gradient(&x, &xa);
            let mut accepted = false;
            while step > 1e-14 {
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&g)
                    .map(|(xi, gi)| (xi + step * gi).max(0.0))
                    .collect();
                let moved: f64 = cand
                    .iter()
                    .zip(&x)
                    .zip(&g)
                    .map(|((c, xi), gi)| (c - xi) * gi)
                    .sum();
                let (cv, ca) = self.outer_value(&cand, cfg.inner_tol);
                if cv.is_finite() && cv >= val + 1e-4 * moved {
                    let change = cand
                        .iter()
                        .zip(&x)
                        .fold(0.0f64, |m, (c, xi)| m.max((c - xi).abs()));
                    let gain = cv - val;
                    x = cand;
                    val = cv;
                    xa = ca;
                    accepted = true;
                    step *= 2.0;
                    if change < cfg.outer_tol * (1.0 + norm_inf(&x)) || gain < cfg.outer_tol * 1e-2
                    {
                        return Some(LocalSolution {
                            x_sup: x,
                            x_agent: xa,
                            value: val,
                            flagged: false,
                        });
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Some(LocalSolution {
            x_sup: x,
            x_agent: xa,
            value: val,
            flagged: false,
        })
    }

    /// Best ascent over several starts; falls back to `previous` (flagged)
    /// when none is usable.
    pub fn solve(
        &self,
        starts: &[Vec<f64>],
        previous: &[f64],
        cfg: &MaximinConfig,
    ) -> LocalSolution {
        let mut best: Option<LocalSolution> = None;
        for s in starts {
            if let Some(sol) = self.ascend_from(s, cfg) {
                if best.as_ref().is_none_or(|b| sol.value > b.value + 1e-12) {
                    best = Some(sol);
                }
            }
        }
        best.unwrap_or_else(|| {
            let (_, xa) = self.outer_value(previous, cfg.inner_tol);
            LocalSolution {
                x_sup: previous.to_vec(),
                x_agent: xa,
                value: f64::NAN,
                flagged: true,
            }
        })
    }
}

/// Minimizes the agent objective over the `free` coordinates (others zero)
/// with a sequence of log-barrier Newton solves.
fn barrier_newton(lm: &LocalMaximin, free: &[usize], pi: &[f64], tol: f64) -> Vec<f64> {
    let k = lm.num_actions();
    let nf = free.len();
    let mut out = vec![0.0; k];
    if nf == 0 {
        return out;
    }
    let scale = 1.0
        + free
            .iter()
            .fold(0.0f64, |m, &a| m.max(lm.center_agent[a].abs()));
    let mut x: Vec<f64> = free
        .iter()
        .map(|&a| lm.center_agent[a].max(0.0) + 0.1 * scale)
        .collect();
    let expand = |x: &[f64]| {
        let mut full = vec![0.0; k];
        for (i, &a) in free.iter().enumerate() {
            full[a] = x[i];
        }
        full
    };
    let objective = |x: &[f64], mu: f64| -> f64 {
        if x.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        let full = expand(x);
        divergence_with(lm, &full, pi) + 0.5 * lm.rho_agent * sq_dist(&full, &lm.center_agent)
            - mu * x.iter().map(|v| v.ln()).sum::<f64>()
    };
    let mut mu = 0.1 * scale;
    let mu_final = (tol / (nf as f64 * 10.0)).max(1e-14);
    loop {
        for _ in 0..60 {
            let (g, h) = derivatives(lm, free, &x, pi, mu);
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    let reg = h + DMatrix::identity(nf, nf) * 1e-10;
                    match reg.lu().solve(&g) {
                        Some(s) => s,
                        None => break,
                    }
                }
            };
            let decrement = g.dot(&step);
            if decrement.abs() < 1e-16 {
                break;
            }
            let mut t = 1.0f64;
            for i in 0..nf {
                if step[i] > 0.0 {
                    t = t.min(0.99 * x[i] / step[i]);
                }
            }
            let f0 = objective(&x, mu);
            loop {
                let cand: Vec<f64> = (0..nf).map(|i| x[i] - t * step[i]).collect();
                let f1 = objective(&cand, mu);
                if f1 <= f0 - 0.25 * t * decrement || t < 1e-12 {
                    x = cand;
                    break;
                }
                t *= 0.5;
            }
            if decrement < 1e-18 {
                break;
            }
        }
        if mu <= mu_final {
            break;
        }
        mu = (mu * 0.1).max(mu_final);
    }
    for (i, &a) in free.iter().enumerate() {
        out[a] = x[i];
    }
    out
}

fn divergence_with(lm: &LocalMaximin, x_agent: &[f64], pi: &[f64]) -> f64 {
    let total: f64 = x_agent.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut d = 0.0;
    for (j, w) in lm.flows(x_agent).into_iter().enumerate() {
        if w > 0.0 {
            d += w * (w / (total * pi[j])).ln();
        }
    }
    d
}

/// Gradient and Hessian of the barrier objective over the free coordinates.
fn derivatives(
    lm: &LocalMaximin,
    free: &[usize],
    x: &[f64],
    pi: &[f64],
    mu: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let nf = free.len();
    let mut full = vec![0.0; lm.num_actions()];
    for (i, &a) in free.iter().enumerate() {
        full[a] = x[i];
    }
    let w = lm.flows(&full);
    let total: f64 = x.iter().sum();
    let mut g = DVector::zeros(nf);
    let mut h = DMatrix::zeros(nf, nf);
    for (i, &a) in free.iter().enumerate() {
        let mut gi = -total.ln();
        for (j, &p) in lm.kernel[a].iter().enumerate() {
            if p > 0.0 {
                gi += p * (w[j] / pi[j]).ln();
            }
        }
        g[i] = gi + lm.rho_agent * (x[i] - lm.center_agent[a]) - mu / x[i];
        for (l, &b) in free.iter().enumerate() {
            let mut hij = -1.0 / total;
            for (j, &p) in lm.kernel[a].iter().enumerate() {
                let q = lm.kernel[b][j];
                if p > 0.0 && q > 0.0 {
                    hij += p * q / w[j];
                }
            }
            h[(i, l)] = hij;
        }
        h[(i, i)] += lm.rho_agent + mu / (x[i] * x[i]);
    }
    (g, h)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixing_local(
        center_sup: Vec<f64>,
        center_agent: Vec<f64>,
        rho_sup: f64,
        rho_agent: f64,
    ) -> LocalMaximin {
        LocalMaximin {
            kernel: vec![
                vec![0.32, 0.08, 0.6],
                vec![0.15, 0.15, 0.7],
                vec![0.4, 0.6, 0.0],
            ],
            rho_sup,
            rho_agent,
            center_sup,
            center_agent,
        }
    }

    #[test]
    fn single_action_returns_centres() {
        let lm = LocalMaximin {
            kernel: vec![vec![0.5, 0.5]],
            rho_sup: 1.0,
            rho_agent: 1.0,
            center_sup: vec![0.7],
            center_agent: vec![1.3],
        };
        let sol = lm.solve(&[vec![0.2]], &[0.2], &MaximinConfig::default());
        assert!((sol.x_sup[0] - 0.7).abs() < 1e-8, "{sol:?}");
        assert!((sol.x_agent[0] - 1.3).abs() < 1e-8, "{sol:?}");
    }

    #[test]
    fn identical_kernels_follow_the_proximal_term() {
        let lm = LocalMaximin {
            kernel: vec![vec![0.3, 0.7], vec![0.3, 0.7]],
            rho_sup: 1.0,
            rho_agent: 1.0,
            center_sup: vec![0.4, 0.6],
            center_agent: vec![0.5, 0.5],
        };
        let sol = lm.solve(
            &[vec![0.9, 0.1], vec![0.5, 0.5]],
            &[0.5, 0.5],
            &MaximinConfig::default(),
        );
        assert!(
            (sol.x_sup[0] - 0.4).abs() < 1e-6 && (sol.x_sup[1] - 0.6).abs() < 1e-6,
            "{sol:?}"
        );
    }

    #[test]
    fn inner_minimizer_satisfies_kkt() {
        let lm = mixing_local(vec![0.3, 0.3, 0.4], vec![0.2, 0.5, 0.3], 1.0, 0.5);
        let xs = [0.5, 0.2, 0.3];
        let pi = lm.successor_dist(&xs).unwrap();
        let (xa, _) = lm.inner(&xs, 1e-10);
        let (g, _) = derivatives(&lm, &[0, 1, 2], &xa, &pi, 0.0);
        for a in 0..3 {
            if xa[a] > 1e-6 {
                assert!(g[a].abs() < 1e-6, "{a}: {}", g[a]);
            } else {
                assert!(g[a] > -1e-6, "{a}: {}", g[a]);
            }
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let lm = mixing_local(vec![0.3, 0.3, 0.4], vec![0.1, 0.2, 0.7], 0.7, 2.0);
        let xs = vec![0.5, 0.2, 0.3];
        let (_, xa) = lm.outer_value(&xs, 1e-12);
        let g = lm.outer_gradient(&xs, &xa);
        let h = 1e-6;
        for a in 0..3 {
            let mut up = xs.clone();
            up[a] += h;
            let mut dn = xs.clone();
            dn[a] -= h;
            let fd = (lm.outer_value(&up, 1e-12).0 - lm.outer_value(&dn, 1e-12).0) / (2.0 * h);
            assert!(
                (fd - g[a]).abs() < 1e-4 * (1.0 + g[a].abs()),
                "{a}: {fd} vs {}",
                g[a]
            );
        }
    }

    #[test]
    fn pinned_agent_shows_two_basins() {
        // agent held at pure γ; the supervisor row ascends to the nearest vertex
        let lm = mixing_local(vec![1.0 / 3.0; 3], vec![0.0, 0.0, 1.0], 1e-3, 1e5);
        let cfg = MaximinConfig::default();
        let near_alpha = lm.ascend_from(&[0.9, 0.05, 0.05], &cfg).unwrap();
        let near_beta = lm.ascend_from(&[0.05, 0.9, 0.05], &cfg).unwrap();
        let share = |x: &[f64], a: usize| x[a] / x.iter().sum::<f64>();
        assert!(share(&near_alpha.x_sup, 0) > 0.95, "{near_alpha:?}");
        assert!(share(&near_beta.x_sup, 1) > 0.95, "{near_beta:?}");
        assert!(near_alpha.value > near_beta.value);
        let best = lm.solve(
            &[vec![0.05, 0.9, 0.05], vec![0.9, 0.05, 0.05]],
            &[0.3; 3],
            &cfg,
        );
        assert!(share(&best.x_sup, 0) > 0.95);
    }
}
