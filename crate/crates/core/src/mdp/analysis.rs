use super::graph::{can_reach, reachable_from};
use super::linsys::solve_sparse;
use super::{
    KlValue, MarkovChain, Mdp, ResidenceTimes, StateSet, StationaryPolicy, RESIDENCE_THRESHOLD,
    STOCHASTIC_TOL,
};
use crate::error::{Error, Result};

/// A single failed model invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state: Option<String>,
    pub action: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.state, &self.action) {
            (Some(s), Some(a)) => write!(f, "state {s}, action {a}: {}", self.message),
            (Some(s), None) => write!(f, "state {s}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

pub fn validate_mdp(m: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = m.num_states();
    if m.initial >= n {
        out.push(Violation {
            state: None,
            action: None,
            message: format!("initial state index {} out of range", m.initial),
        });
    }
    if m.actions.len() != n {
        out.push(Violation {
            state: None,
            action: None,
            message: format!("{} action lists for {} states", m.actions.len(), n),
        });
    }
    for (s, acts) in m.actions.iter().enumerate().take(n) {
        let sname = Some(m.states[s].name.clone());
        if acts.is_empty() {
            out.push(Violation {
                state: sname.clone(),
                action: None,
                message: "no actions".into(),
            });
        }
        for act in acts {
            let aname = Some(act.name.clone());
            let mut sum = 0.0;
            for &(q, p) in &act.successors {
                if q >= n {
                    out.push(Violation {
                        state: sname.clone(),
                        action: aname.clone(),
                        message: format!("successor index {q} out of range"),
                    });
                }
                if p < 0.0 || !p.is_finite() {
                    out.push(Violation {
                        state: sname.clone(),
                        action: aname.clone(),
                        message: format!("invalid probability {p}"),
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation {
                    state: sname.clone(),
                    action: aname.clone(),
                    message: format!("row sum {sum}"),
                });
            }
        }
        for label in &m.states[s].labels {
            if !m.atomic_props.contains(label) {
                out.push(Violation {
                    state: sname.clone(),
                    action: None,
                    message: format!("label '{label}' is not a declared proposition"),
                });
            }
        }
    }
    out
}

fn check_policy(m: &Mdp, pi: &StationaryPolicy) -> Result<()> {
    if pi.rows.len() < m.num_states() {
        return Err(Error::MissingPolicyRow(m.name(pi.rows.len()).to_string()));
    }
    for (s, acts) in m.actions.iter().enumerate() {
        if pi.rows[s].len() != acts.len() {
            return Err(Error::PolicyShape {
                state: m.name(s).to_string(),
                got: pi.rows[s].len(),
                expected: acts.len(),
            });
        }
    }
    Ok(())
}

/// P^π(s,q) = Σ_a P(s,a,q) π(s,a).
pub fn induce_chain(m: &Mdp, pi: &StationaryPolicy) -> Result<MarkovChain> {
    check_policy(m, pi)?;
    let rows = m
        .actions
        .iter()
        .enumerate()
        .map(|(s, acts)| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (a, act) in acts.iter().enumerate() {
                let w = pi.rows[s][a];
                if w == 0.0 {
                    continue;
                }
                for &(q, p) in &act.successors {
                    if p > 0.0 {
                        row.push((q, w * p));
                    }
                }
            }
            row.sort_by_key(|(q, _)| *q);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (q, p) in row {
                match merged.last_mut() {
                    Some((lq, lp)) if *lq == q => *lp += p,
                    _ => merged.push((q, p)),
                }
            }
            merged
        })
        .collect();
    Ok(MarkovChain {
        rows,
        initial: m.initial,
    })
}

/// Probability of eventually entering `target` from every state.
pub fn reachability_probabilities(c: &MarkovChain, target: &StateSet) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty reachability target".into()));
    }
    let n = c.num_states();
    let reach = can_reach(c, target);
    let mut index = vec![usize::MAX; n];
    let maybe: Vec<usize> = (0..n)
        .filter(|s| reach[*s] && !target.contains(s))
        .collect();
    for (i, &s) in maybe.iter().enumerate() {
        index[s] = i;
    }
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; maybe.len()];
    for (i, &s) in maybe.iter().enumerate() {
        trip.push((i, i, 1.0));
        for &(q, p) in &c.rows[s] {
            if target.contains(&q) {
                rhs[i] += p;
            } else if index[q] != usize::MAX {
                trip.push((i, index[q], -p));
            }
        }
    }
    let sol = solve_sparse(maybe.len(), &trip, &rhs)?;
    let mut out = vec![0.0; n];
    for &t in target {
        out[t] = 1.0;
    }
    for (i, &s) in maybe.iter().enumerate() {
        out[s] = sol[i].clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Expected residence times of `pi` restricted to `transient_set`
/// (flow into states outside the set is discarded).
pub fn policy_to_residence_times(
    m: &Mdp,
    pi: &StationaryPolicy,
    transient_set: &StateSet,
) -> Result<ResidenceTimes> {
    let chain = induce_chain(m, pi)?;
    let mut x = ResidenceTimes::zeros(m);
    if !transient_set.contains(&m.initial) {
        return Ok(x);
    }
    let totals = transient_visits(m, &chain, transient_set)?;
    for (s, y) in totals {
        for (a, v) in x.values[s].iter_mut().enumerate() {
            *v = pi.rows[s][a] * y;
        }
    }
    Ok(x)
}

/// Expected number of visits to each state of `set` before leaving it,
/// starting from the chain's initial state (which must lie in `set`).
fn transient_visits(m: &Mdp, chain: &MarkovChain, set: &StateSet) -> Result<Vec<(usize, f64)>> {
    let n = chain.num_states();
    let inside: Vec<bool> = (0..n).map(|s| set.contains(&s)).collect();
    // reach within the set from the initial state
    let mut local = vec![false; n];
    let mut stack = vec![chain.initial];
    local[chain.initial] = true;
    while let Some(s) = stack.pop() {
        for &(q, p) in &chain.rows[s] {
            if p > 0.0 && inside[q] && !local[q] {
                local[q] = true;
                stack.push(q);
            }
        }
    }
    let states: Vec<usize> = (0..n).filter(|&s| local[s]).collect();
    let exits: StateSet = states
        .iter()
        .copied()
        .filter(|&s| chain.rows[s].iter().any(|&(q, p)| p > 0.0 && !inside[q]))
        .collect();
    // every locally reachable state must be able to leave the set
    let restricted = MarkovChain {
        rows: (0..n)
            .map(|s| {
                if local[s] {
                    chain.rows[s]
                        .iter()
                        .copied()
                        .filter(|(q, _)| local[*q])
                        .collect()
                } else {
                    Vec::new()
                }
            })
            .collect(),
        initial: chain.initial,
    };
    let leaves = can_reach(&restricted, &exits);
    if let Some(&bad) = states.iter().find(|&&s| !leaves[s]) {
        return Err(Error::DivergentResidence(m.name(bad).to_string()));
    }
    let mut index = vec![usize::MAX; n];
    for (i, &s) in states.iter().enumerate() {
        index[s] = i;
    }
    // (I − P_Rᵀ) y = e_{s0}
    let mut trip = Vec::new();
    for (i, &s) in states.iter().enumerate() {
        trip.push((i, i, 1.0));
        for &(q, p) in &chain.rows[s] {
            if local[q] {
                trip.push((index[q], i, -p));
            }
        }
    }
    let mut rhs = vec![0.0; states.len()];
    rhs[index[chain.initial]] = 1.0;
    let y = solve_sparse(states.len(), &trip, &rhs)?;
    Ok(states
        .iter()
        .zip(y)
        .map(|(&s, v)| (s, v.max(0.0)))
        .collect())
}

/// π(s,a) = x_{s,a} / Σ_a' x_{s,a'}; rows with negligible mass come from
/// `fallback`.
pub fn residence_times_to_policy(
    x: &ResidenceTimes,
    fallback: &StationaryPolicy,
) -> StationaryPolicy {
    let rows = x
        .values
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
            if total > RESIDENCE_THRESHOLD {
                row.iter().map(|v| v.max(0.0) / total).collect()
            } else {
                fallback.rows[s].clone()
            }
        })
        .collect();
    StationaryPolicy { rows }
}

/// Per-state KL contribution Σ_q w_q ln(w_q / (π^S_q t)) for residence row `xs`.
pub(crate) fn state_kl(m: &Mdp, s: usize, xs: &[f64], ref_row: &[f64]) -> KlValue {
    let t: f64 = xs.iter().sum();
    if t <= 0.0 {
        return KlValue::Finite(0.0);
    }
    let mut w = vec![0.0; ref_row.len()];
    for (a, act) in m.actions[s].iter().enumerate() {
        if xs[a] == 0.0 {
            continue;
        }
        for &(q, p) in &act.successors {
            w[q] += xs[a] * p;
        }
    }
    let mut total = 0.0;
    for (q, &wq) in w.iter().enumerate() {
        if wq <= 0.0 {
            continue;
        }
        let r = ref_row[q];
        if r <= 0.0 {
            return KlValue::Infinite;
        }
        total += wq * (wq / (r * t)).ln();
    }
    KlValue::Finite(total.max(0.0))
}

/// KL divergence between the path distributions of `pi_a` and the reference
/// chain, via residence-time weighted successor divergences on `differ_set`.
pub fn kl_path_divergence(
    m: &Mdp,
    pi_a: &StationaryPolicy,
    chain_ref: &MarkovChain,
    differ_set: &StateSet,
) -> Result<KlValue> {
    let x = match policy_to_residence_times(m, pi_a, differ_set) {
        Ok(x) => x,
        Err(Error::DivergentResidence(_)) => return Ok(KlValue::Infinite),
        Err(e) => return Err(e),
    };
    let mut total = 0.0;
    for &s in differ_set {
        let ref_row = chain_ref.dense_row(s);
        match state_kl(m, s, &x.values[s], &ref_row) {
            KlValue::Finite(v) => total += v,
            KlValue::Infinite => return Ok(KlValue::Infinite),
        }
    }
    Ok(KlValue::Finite(total))
}

/// States from which `target` is reachable under some action choice.
fn exists_path_to(m: &Mdp, target: &StateSet, allowed: &[bool]) -> Vec<bool> {
    let n = m.num_states();
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        if !allowed[s] {
            continue;
        }
        for act in &m.actions[s] {
            for &(q, p) in &act.successors {
                if p > 0.0 {
                    pred[q].push(s);
                }
            }
        }
    }
    let mut mark = vec![false; n];
    let mut stack: Vec<usize> = target.iter().copied().collect();
    for &t in target {
        mark[t] = true;
    }
    while let Some(q) = stack.pop() {
        for &s in &pred[q] {
            if !mark[s] {
                mark[s] = true;
                stack.push(s);
            }
        }
    }
    mark
}

/// Maximum probability of reaching `target` from every state (value
/// iteration from below after removing states that cannot reach at all).
pub fn max_reachability(m: &Mdp, target: &StateSet) -> Vec<f64> {
    let n = m.num_states();
    let possible = exists_path_to(m, target, &vec![true; n]);
    let mut v: Vec<f64> = (0..n)
        .map(|s| if target.contains(&s) { 1.0 } else { 0.0 })
        .collect();
    let work: Vec<usize> = (0..n)
        .filter(|s| possible[*s] && !target.contains(s))
        .collect();
    for _ in 0..1_000_000 {
        let mut delta = 0.0f64;
        for &s in &work {
            let best = m.actions[s]
                .iter()
                .map(|act| act.successors.iter().map(|&(q, p)| p * v[q]).sum::<f64>())
                .fold(0.0f64, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < 1e-14 {
            break;
        }
    }
    v
}

/// States that can reach `target` with probability one under some policy,
/// together with the actions that keep that guarantee.
fn prob1_states(m: &Mdp, target: &StateSet) -> Vec<bool> {
    let n = m.num_states();
    let mut u = vec![true; n];
    loop {
        let mut r: Vec<bool> = (0..n).map(|s| target.contains(&s)).collect();
        loop {
            let mut changed = false;
            for s in 0..n {
                if r[s] || !u[s] {
                    continue;
                }
                let ok = m.actions[s].iter().any(|act| {
                    let pos = act.successors.iter().filter(|(_, p)| *p > 0.0);
                    pos.clone().all(|(q, _)| u[*q]) && pos.clone().any(|(q, _)| r[*q])
                });
                if ok {
                    r[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if r == u {
            return u;
        }
        u = r;
    }
}

/// Deterministic policy minimising the expected hitting time of `target`
/// (stochastic shortest path, unit cost per step). Target states take a
/// probability-one self-loop when one exists, otherwise their first action.
pub fn min_expected_time_policy(m: &Mdp, target: &StateSet) -> Result<StationaryPolicy> {
    let n = m.num_states();
    let good = prob1_states(m, target);
    if !good[m.initial] {
        let chain = induce_chain(m, &StationaryPolicy::uniform(m))?;
        let bad: Vec<String> = reachable_from(&chain, m.initial)
            .into_iter()
            .filter(|&s| !good[s])
            .map(|s| m.name(s).to_string())
            .collect();
        return Err(Error::TargetNotAlmostSure(bad));
    }
    let allowed: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            (0..m.actions[s].len())
                .filter(|&a| {
                    m.actions[s][a]
                        .successors
                        .iter()
                        .all(|&(q, p)| p == 0.0 || good[q])
                })
                .collect()
        })
        .collect();
    let work: Vec<usize> = (0..n).filter(|s| good[*s] && !target.contains(s)).collect();
    let q_value = |v: &[f64], s: usize, a: usize| -> f64 {
        1.0 + m.actions[s][a]
            .successors
            .iter()
            .map(|&(q, p)| p * v[q])
            .sum::<f64>()
    };
    let mut v = vec![0.0; n];
    for _ in 0..10_000_000 {
        let mut delta = 0.0f64;
        for &s in &work {
            let best = allowed[s]
                .iter()
                .map(|&a| q_value(&v, s, a))
                .fold(f64::INFINITY, f64::min);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < 1e-10 * 1e-2 {
            break;
        }
    }
    let choice: Vec<usize> = (0..n)
        .map(|s| {
            if target.contains(&s) {
                m.actions[s]
                    .iter()
                    .position(|act| act.prob_to(s) >= 1.0 - STOCHASTIC_TOL)
                    .unwrap_or(0)
            } else if good[s] {
                let qs: Vec<f64> = allowed[s].iter().map(|&a| q_value(&v, s, a)).collect();
                let best = qs.iter().copied().fold(f64::INFINITY, f64::min);
                let k = qs.iter().position(|&q| q <= best + 1e-9).unwrap_or(0);
                allowed[s][k]
            } else {
                0
            }
        })
        .collect();
    Ok(StationaryPolicy::deterministic(m, &choice))
}
