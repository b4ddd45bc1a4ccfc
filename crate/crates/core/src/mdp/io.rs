//! JSON model format.
//!
//! ```json
//! { "states": [{"id": "s0", "label": ["a"], "coords": [0, 0]}],
//!   "initial": "s0",
//!   "atomic_props": ["a"],
//!   "actions": [{"state": "s0", "action": "stay",
//!                "successors": [{"state": "s0", "p": "1.0"}]}] }
//! ```
//!
//! Probabilities may be numbers or decimal strings. `atomic_props` is
//! optional and defaults to the union of all labels.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{validate_mdp, Action, Mdp, State, StationaryPolicy};
use crate::error::{Error, Result};

/// Row sums deviating from 1 by less than this are renormalized on load.
pub const LOAD_NORMALIZE_TOL: f64 = 1e-9;

/// Deviations this small are summation rounding and are kept as written, so
/// that saving and loading a model is exact.
const ROUNDING_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Prob {
    Num(f64),
    Text(String),
}

impl Prob {
    fn value(&self) -> Result<f64> {
        match self {
            Prob::Num(v) => Ok(*v),
            Prob::Text(t) => t
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidModel(format!("bad probability '{t}'"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRec {
    id: String,
    #[serde(default)]
    label: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<(usize, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SuccRec {
    state: String,
    p: Prob,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActionRec {
    state: String,
    action: String,
    successors: Vec<SuccRec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MdpRec {
    states: Vec<StateRec>,
    initial: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atomic_props: Option<Vec<String>>,
    actions: Vec<ActionRec>,
}

pub fn mdp_from_json(text: &str) -> Result<Mdp> {
    let rec: MdpRec = serde_json::from_str(text)?;
    let mut index = HashMap::new();
    let mut states = Vec::with_capacity(rec.states.len());
    for st in rec.states {
        if index.insert(st.id.clone(), states.len()).is_some() {
            return Err(Error::InvalidModel(format!(
                "duplicate state id '{}'",
                st.id
            )));
        }
        states.push(State {
            name: st.id,
            labels: st.label.into_iter().collect(),
            coords: st.coords,
        });
    }
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidModel(format!("unknown state '{id}'")))
    };
    let initial = lookup(&rec.initial)?;
    let mut actions: Vec<Vec<Action>> = vec![Vec::new(); states.len()];
    for a in rec.actions {
        let s = lookup(&a.state)?;
        let mut successors = Vec::with_capacity(a.successors.len());
        for succ in &a.successors {
            successors.push((lookup(&succ.state)?, succ.p.value()?));
        }
        let sum: f64 = successors.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() >= LOAD_NORMALIZE_TOL {
            return Err(Error::InvalidModel(format!(
                "state {}, action {}: row sum {sum}",
                a.state, a.action
            )));
        }
        if (sum - 1.0).abs() > ROUNDING_TOL {
            for (_, p) in successors.iter_mut() {
                *p /= sum;
            }
        }
        actions[s].push(Action {
            name: a.action,
            successors,
        });
    }
    let atomic_props: BTreeSet<String> = match rec.atomic_props {
        Some(p) => p.into_iter().collect(),
        None => states
            .iter()
            .flat_map(|s| s.labels.iter().cloned())
            .collect(),
    };
    let m = Mdp {
        states,
        actions,
        initial,
        atomic_props,
    };
    let violations: Vec<String> = validate_mdp(&m)
        .into_iter()
        .filter(|v| !v.message.starts_with("row sum"))
        .map(|v| v.to_string())
        .collect();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations.join("; ")));
    }
    Ok(m)
}

pub fn mdp_to_json(m: &Mdp) -> String {
    let rec = MdpRec {
        states: m
            .states
            .iter()
            .map(|s| StateRec {
                id: s.name.clone(),
                label: s.labels.iter().cloned().collect(),
                coords: s.coords,
            })
            .collect(),
        initial: m.name(m.initial).to_string(),
        atomic_props: Some(m.atomic_props.iter().cloned().collect()),
        actions: m
            .actions
            .iter()
            .enumerate()
            .flat_map(|(s, acts)| {
                acts.iter().map(move |a| ActionRec {
                    state: m.name(s).to_string(),
                    action: a.name.clone(),
                    successors: a
                        .successors
                        .iter()
                        .map(|&(q, p)| SuccRec {
                            state: m.name(q).to_string(),
                            p: Prob::Num(p),
                        })
                        .collect(),
                })
            })
            .collect(),
    };
    serde_json::to_string_pretty(&rec).expect("model serializes")
}


#[derive(Debug, Deserialize)]
struct PolicyFile {
    #[serde(default)]
    policy: Option<Vec<RowRec>>,
    #[serde(default)]
    residence: Option<Vec<RowRec>>,
}

#[derive(Debug, Deserialize)]
struct RowRec {
    state: String,
    actions: Vec<(String, f64)>,
}

/// Reads a policy given either as action distributions
/// (`{"policy": [{"state": "s0", "actions": [["beta", 1.0]]}]}`) or as
/// residence times under the key `residence`, which are normalized per state.
/// Unlisted actions get zero; unlisted states with one action take it, and
/// unlisted states with several actions are an error for `policy` and
/// uniform for `residence`.
pub fn policy_from_json(m: &Mdp, text: &str) -> Result<StationaryPolicy> {
    let file: PolicyFile = serde_json::from_str(text)?;
    let (rows, is_residence) = match (file.policy, file.residence) {
        (Some(r), None) => (r, false),
        (None, Some(r)) => (r, true),
        _ => {
            return Err(Error::InvalidArgument(
                "policy file needs exactly one of `policy` or `residence`".into(),
            ))
        }
    };
    let mut out: Vec<Option<Vec<f64>>> = vec![None; m.num_states()];
    for row in rows {
        let s = m
            .state_index(&row.state)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown state '{}'", row.state)))?;
        let mut values = vec![0.0; m.actions[s].len()];
        for (name, v) in row.actions {
            let a = m.actions[s]
                .iter()
                .position(|act| act.name == name)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("state {} has no action '{name}'", row.state))
                })?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bad value {v} at {}, {name}",
                    row.state
                )));
            }
            values[a] = v;
        }
        let sum: f64 = values.iter().sum();
        if is_residence {
            if sum > 0.0 {
                values.iter_mut().for_each(|v| *v /= sum);
            } else {
                values = vec![1.0 / values.len() as f64; values.len()];
            }
        } else if (sum - 1.0).abs() > LOAD_NORMALIZE_TOL {
            return Err(Error::InvalidArgument(format!(
                "policy row at {} sums to {sum}",
                row.state
            )));
        }
        out[s] = Some(values);
    }
    let rows = out
        .into_iter()
        .enumerate()
        .map(|(s, row)| match row {
            Some(r) => Ok(r),
            None if m.actions[s].len() == 1 => Ok(vec![1.0]),
            None if is_residence => Ok(vec![1.0 / m.actions[s].len() as f64; m.actions[s].len()]),
            None => Err(Error::MissingPolicyRow(m.name(s).to_string())),
        })
        .collect::<Result<_>>()?;
    Ok(StationaryPolicy { rows })
}
