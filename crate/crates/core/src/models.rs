//! Model generators and the small fixed models used throughout the tests.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    induce_chain, reachability_probabilities, Action, Mdp, State, StateSet, StationaryPolicy,
};

fn labelled_state(name: &str, labels: &[&str]) -> State {
    State {
        name: name.to_string(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
        coords: None,
    }
}

fn action(name: &str, successors: &[(usize, f64)]) -> Action {
    Action {
        name: name.to_string(),
        successors: successors.to_vec(),
    }
}

fn stay(s: usize) -> Vec<Action> {
    vec![action("stay", &[(s, 1.0)])]
}

/// Four states; s0 chooses between alpha (to s1), beta (s1/s2/s3 with
/// 0.1/0.8/0.1) and gamma (to s3). The other states are absorbing. Every
/// state is labelled with its own name.
pub fn fork_mdp() -> Mdp {
    let states = (0..4)
        .map(|i| {
            let n = format!("s{i}");
            labelled_state(&n, &[&n])
        })
        .collect();
    let actions = vec![
        vec![
            action("alpha", &[(1, 1.0)]),
            action("beta", &[(1, 0.1), (2, 0.8), (3, 0.1)]),
            action("gamma", &[(3, 1.0)]),
        ],
        stay(1),
        stay(2),
        stay(3),
    ];
    Mdp {
        states,
        actions,
        initial: 0,
        atomic_props: ["s0", "s1", "s2", "s3"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

/// One decision state `s` with three actions over absorbing q1, q2, q3.
pub fn mixing_mdp() -> Mdp {
    let names = ["s", "q1", "q2", "q3"];
    let states = names.iter().map(|n| labelled_state(n, &[n])).collect();
    let actions = vec![
        vec![
            action("alpha", &[(1, 0.32), (2, 0.08), (3, 0.6)]),
            action("beta", &[(1, 0.15), (2, 0.15), (3, 0.7)]),
            action("gamma", &[(1, 0.4), (2, 0.6)]),
        ],
        stay(1),
        stay(2),
        stay(3),
    ];
    Mdp {
        states,
        actions,
        initial: 0,
        atomic_props: names.iter().map(|s| s.to_string()).collect(),
    }
}

/// `n` states on a line with deterministic `left` and `right` actions
/// (clamped at the ends); the last state is labelled `end`.
pub fn line_mdp(n: usize) -> Mdp {
    let states = (0..n)
        .map(|i| {
            let name = format!("s{i}");
            if i + 1 == n {
                labelled_state(&name, &["end"])
            } else {
                labelled_state(&name, &[])
            }
        })
        .collect();
    let actions = (0..n)
        .map(|i| {
            vec![
                action("left", &[(i.saturating_sub(1), 1.0)]),
                action("right", &[((i + 1).min(n - 1), 1.0)]),
            ]
        })
        .collect();
    Mdp {
        states,
        actions,
        initial: 0,
        atomic_props: BTreeSet::from(["end".to_string()]),
    }
}

/// Grid-world description. Cells are `(row, col)` with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// `(proposition, row, col)` placements; several may share a cell.
    pub labels: Vec<(String, usize, usize)>,
    /// Probability of moving in one of the other three directions.
    pub slip: f64,
    /// Cells with an extra probability-one self-loop action.
    pub self_loops: Vec<(usize, usize)>,
    pub initial: (usize, usize),
}

pub const GRID_ACTIONS: [&str; 4] = ["up", "down", "left", "right"];

pub fn grid_state_name(r: usize, c: usize) -> String {
    format!("r{r}c{c}")
}

/// Four moves per cell: the intended direction with probability `1 - slip`,
/// each other direction with `slip / 3`. Mass of directions leaving the grid
/// is spread over the remaining directions in proportion to their weight.
pub fn gridworld(spec: &GridSpec) -> Result<Mdp> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(
            "grid must have at least one cell".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(Error::InvalidArgument(format!(
            "slip {} outside [0, 1]",
            spec.slip
        )));
    }
    let in_bounds = |r: usize, c: usize| r < rows && c < cols;
    for (p, r, c) in &spec.labels {
        if !in_bounds(*r, *c) {
            return Err(Error::InvalidArgument(format!(
                "label {p} at ({r}, {c}) is off the grid"
            )));
        }
    }
    for &(r, c) in spec.self_loops.iter().chain([&spec.initial]) {
        if !in_bounds(r, c) {
            return Err(Error::InvalidArgument(format!(
                "cell ({r}, {c}) is off the grid"
            )));
        }
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut states = Vec::with_capacity(rows * cols);
    let mut actions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let labels = spec
                .labels
                .iter()
                .filter(|(_, lr, lc)| *lr == r && *lc == c)
                .map(|(p, _, _)| p.clone())
                .collect();
            states.push(State {
                name: grid_state_name(r, c),
                labels,
                coords: Some((r, c)),
            });
            // up, down, left, right
            let moves: [Option<usize>; 4] = [
                (r > 0).then(|| idx(r - 1, c)),
                (r + 1 < rows).then(|| idx(r + 1, c)),
                (c > 0).then(|| idx(r, c - 1)),
                (c + 1 < cols).then(|| idx(r, c + 1)),
            ];
            let mut acts = Vec::with_capacity(5);
            for (d, name) in GRID_ACTIONS.iter().enumerate() {
                let weights: Vec<(usize, f64)> = (0..4)
                    .filter_map(|k| {
                        let w = if k == d {
                            1.0 - spec.slip
                        } else {
                            spec.slip / 3.0
                        };
                        moves[k].map(|t| (t, w))
                    })
                    .filter(|(_, w)| *w > 0.0)
                    .collect();
                let total: f64 = weights.iter().map(|(_, w)| w).sum();
                let successors = if total > 0.0 {
                    weights.into_iter().map(|(t, w)| (t, w / total)).collect()
                } else {
                    vec![(idx(r, c), 1.0)]
                };
                acts.push(Action {
                    name: name.to_string(),
                    successors,
                });
            }
            if spec.self_loops.contains(&(r, c)) {
                acts.push(action("stay", &[(idx(r, c), 1.0)]));
            }
            actions.push(acts);
        }
    }
    let atomic_props = spec.labels.iter().map(|(p, _, _)| p.clone()).collect();
    Ok(Mdp {
        states,
        actions,
        initial: idx(spec.initial.0, spec.initial.1),
        atomic_props,
    })
}

/// Labelled cells of the 20×20 deceptive-synthesis world: start top-left,
/// yellow checkpoint, green goal with a self-loop, red agent target.
pub const GRID20_YELLOW: (usize, usize) = (4, 17);
pub const GRID20_GREEN: (usize, usize) = (12, 3);
pub const GRID20_RED: (usize, usize) = (15, 16);

pub fn grid20_spec() -> GridSpec {
    GridSpec {
        rows: 20,
        cols: 20,
        labels: vec![
            ("y".into(), GRID20_YELLOW.0, GRID20_YELLOW.1),
            ("g".into(), GRID20_GREEN.0, GRID20_GREEN.1),
            ("r".into(), GRID20_RED.0, GRID20_RED.1),
        ],
        slip: 0.3,
        self_loops: vec![GRID20_GREEN],
        initial: (0, 0),
    }
}

/// Labelled cells of the 4×4 reference-synthesis world.
pub const GRID4_GREEN: (usize, usize) = (3, 3);
pub const GRID4_RED: [(usize, usize); 2] = [(0, 3), (2, 0)];

pub fn grid4_spec() -> GridSpec {
    let mut labels = vec![("g".to_string(), GRID4_GREEN.0, GRID4_GREEN.1)];
    labels.extend(GRID4_RED.iter().map(|&(r, c)| ("r".to_string(), r, c)));
    GridSpec {
        rows: 4,
        cols: 4,
        labels,
        slip: 0.3,
        self_loops: vec![GRID4_GREEN],
        initial: (0, 0),
    }
}

/// Random model of transient states with a shared absorbing state, the
/// stochastic reference over it, and the chosen agent target.
#[derive(Debug, Clone)]
pub struct RandomModel {
    pub mdp: Mdp,
    pub reference: StationaryPolicy,
    pub target: usize,
    /// Probability that the reference reaches the target.
    pub target_reach: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomMdpConfig {
    pub transient: usize,
    pub successors: usize,
    /// Reference probability of the absorbing action.
    pub exit_prob: f64,
    /// The target is the transient state whose reference reach probability
    /// is closest to this value.
    pub target_reach: f64,
    pub seed: u64,
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        Self {
            transient: 20,
            successors: 4,
            exit_prob: 0.15,
            target_reach: 0.3,
            seed: 7,
        }
    }
}

/// Each transient state gets `successors` deterministic actions to distinct
/// transient states drawn uniformly (itself included) plus an `exit` action
/// to the absorbing state. The reference takes `exit` with `exit_prob` and
/// spreads the rest uniformly. The initial state is the first transient one.
pub fn random_mdp(cfg: &RandomMdpConfig) -> Result<RandomModel> {
    let n = cfg.transient;
    if n < 2 || cfg.successors == 0 || cfg.successors > n {
        return Err(Error::InvalidArgument(
            "need 2+ transient states and 1..=n successors".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.exit_prob) {
        return Err(Error::InvalidArgument(
            "exit probability must lie in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let absorb = n;
    let mut actions = Vec::with_capacity(n + 1);
    for _ in 0..n {
        let mut picks = sample(&mut rng, n, cfg.successors).into_vec();
        picks.sort_unstable();
        let mut acts: Vec<Action> = picks
            .iter()
            .enumerate()
            .map(|(k, &t)| action(&format!("a{k}"), &[(t, 1.0)]))
            .collect();
        acts.push(action("exit", &[(absorb, 1.0)]));
        actions.push(acts);
    }
    actions.push(stay(absorb));
    let mut states: Vec<State> = (0..n)
        .map(|i| labelled_state(&format!("t{i}"), &[]))
        .collect();
    states.push(labelled_state("absorb", &["absorb"]));
    let move_p = (1.0 - cfg.exit_prob) / cfg.successors as f64;
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![move_p; cfg.successors];
            row.push(cfg.exit_prob);
            row
        })
        .collect();
    rows.push(vec![1.0]);
    let reference = StationaryPolicy { rows };
    let mut mdp = Mdp {
        states,
        actions,
        initial: 0,
        atomic_props: ["absorb", "target"].iter().map(|s| s.to_string()).collect(),
    };
    let chain = induce_chain(&mdp, &reference)?;
    let mut best: Option<(usize, f64)> = None;
    for t in 1..n {
        let h = reachability_probabilities(&chain, &StateSet::from([t]))?[0];
        let better = match best {
            None => true,
            Some((_, b)) => (h - cfg.target_reach).abs() < (b - cfg.target_reach).abs(),
        };
        if better {
            best = Some((t, h));
        }
    }
    let (target, target_reach) = best.expect("at least one candidate");
    mdp.states[target].labels.insert("target".into());
    Ok(RandomModel {
        mdp,
        reference,
        target,
        target_reach,
    })
}
