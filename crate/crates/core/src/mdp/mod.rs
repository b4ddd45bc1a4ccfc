//! Finite MDPs, stationary policies, induced Markov chains and
//! occupancy-measure (expected residence time) views of policies.
//!
//! States and actions are dense indices; names live in side tables on the
//! model so that linear algebra can work on contiguous index ranges.

mod analysis;
mod graph;
pub mod io;
mod linsys;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use analysis::{
    induce_chain, kl_path_divergence, max_reachability, min_expected_time_policy,
    policy_to_residence_times, reachability_probabilities, residence_times_to_policy, validate_mdp,
    Violation,
};
pub use graph::{can_reach, closed_communicating_classes, reachable_from, ClosedClasses};
pub use linsys::solve_sparse;

/// Row-sum tolerance for kernels and policy rows.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Denominator threshold below which a state's residence is treated as zero.
pub const RESIDENCE_THRESHOLD: f64 = 1e-12;

pub type StateSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub name: String,
    pub labels: BTreeSet<String>,
    /// Optional grid coordinates (row, col), used only for heatmap output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    /// Sparse successor distribution `(state, probability)`.
    pub successors: Vec<(usize, f64)>,
}

impl Action {
    pub fn prob_to(&self, q: usize) -> f64 {
        self.successors
            .iter()
            .filter(|(s, _)| *s == q)
            .map(|(_, p)| *p)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub states: Vec<State>,
    /// `actions[s]` is the ordered action list A(s).
    pub actions: Vec<Vec<Action>>,
    pub initial: usize,
    pub atomic_props: BTreeSet<String>,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn name(&self, s: usize) -> &str {
        &self.states[s].name
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|st| st.name == name)
    }

    pub fn num_state_actions(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }

    /// Succ(s): states reachable in one step under some action.
    pub fn successors(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.actions[s]
            .iter()
            .flat_map(|a| a.successors.iter())
            .filter(|(_, p)| *p > 0.0)
            .map(|(q, _)| *q)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// States carrying the given atomic proposition.
    pub fn labelled(&self, prop: &str) -> StateSet {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, st)| st.labels.contains(prop))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Time-invariant map from states to action distributions; `rows[s]` is
/// aligned with `Mdp::actions[s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    pub rows: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn uniform(m: &Mdp) -> Self {
        let rows = m
            .actions
            .iter()
            .map(|acts| vec![1.0 / acts.len().max(1) as f64; acts.len()])
            .collect();
        Self { rows }
    }

    /// Deterministic policy choosing `choice[s]` at every state.
    pub fn deterministic(m: &Mdp, choice: &[usize]) -> Self {
        let rows = m
            .actions
            .iter()
            .zip(choice)
            .map(|(acts, &c)| {
                let mut row = vec![0.0; acts.len()];
                row[c] = 1.0;
                row
            })
            .collect();
        Self { rows }
    }

    /// Largest absolute entrywise difference over the given states.
    pub fn max_diff_on(&self, other: &Self, states: impl IntoIterator<Item = usize>) -> f64 {
        states
            .into_iter()
            .flat_map(|s| {
                self.rows[s]
                    .iter()
                    .zip(&other.rows[s])
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

/// Row-stochastic kernel induced by a stationary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub initial: usize,
}

impl MarkovChain {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn prob(&self, s: usize, q: usize) -> f64 {
        self.rows[s]
            .iter()
            .filter(|(t, _)| *t == q)
            .map(|(_, p)| *p)
            .sum()
    }

    /// Dense copy of row `s`.
    pub fn dense_row(&self, s: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.rows.len()];
        for &(q, p) in &self.rows[s] {
            row[q] += p;
        }
        row
    }
}

/// Expected state-action residence times, shaped like `Mdp::actions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidenceTimes {
    pub values: Vec<Vec<f64>>,
}

impl ResidenceTimes {
    pub fn zeros(m: &Mdp) -> Self {
        Self {
            values: m.actions.iter().map(|a| vec![0.0; a.len()]).collect(),
        }
    }

    pub fn state_total(&self, s: usize) -> f64 {
        self.values[s].iter().sum()
    }

    /// Flow-balance residual over `states`:
    /// max |Σ_a x_{s,a} − Σ_{q∈states} Σ_a x_{q,a} P(q,a,s) − 1{s=s0}|.
    pub fn flow_residual(&self, m: &Mdp, states: &StateSet) -> f64 {
        let mut inflow = vec![0.0; m.num_states()];
        for &q in states {
            for (a, act) in m.actions[q].iter().enumerate() {
                let xq = self.values[q][a];
                if xq == 0.0 {
                    continue;
                }
                for &(t, p) in &act.successors {
                    inflow[t] += xq * p;
                }
            }
        }
        states
            .iter()
            .map(|&s| {
                let init = if s == m.initial { 1.0 } else { 0.0 };
                (self.state_total(s) - inflow[s] - init).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// KL divergence value; `Infinite` marks absolute-continuity failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlValue {
    Finite(f64),
    Infinite,
}

impl KlValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, KlValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            KlValue::Finite(v) => Some(*v),
            KlValue::Infinite => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            KlValue::Finite(v) => *v,
            KlValue::Infinite => f64::INFINITY,
        }
    }

    /// Value in bits.
    pub fn bits(&self) -> f64 {
        self.as_f64() / std::f64::consts::LN_2
    }
}

impl std::fmt::Display for KlValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KlValue::Finite(v) => write!(f, "{v}"),
            KlValue::Infinite => write!(f, "inf"),
        }
    }
}
