use std::collections::{HashMap, HashSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::dfa::Dfa;
use crate::error::{Error, Result};
use crate::mdp::{
    closed_communicating_classes, induce_chain, min_expected_time_policy, reachable_from, Action,
    MarkovChain, Mdp, State, StateSet, StationaryPolicy, STOCHASTIC_TOL,
};

/// Synchronous product of the supervisor and agent automata. Pair
/// `(qs, qa)` has index `qs * |Q_A| + qa`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductDfa {
    pub sup: Dfa,
    pub agent: Dfa,
}

impl ProductDfa {
    pub fn num_states(&self) -> usize {
        self.sup.num_states() * self.agent.num_states()
    }

    pub fn pair(&self, q: usize) -> (usize, usize) {
        (q / self.agent.num_states(), q % self.agent.num_states())
    }

    pub fn index(&self, qs: usize, qa: usize) -> usize {
        qs * self.agent.num_states() + qa
    }

    pub fn initial(&self) -> usize {
        self.index(self.sup.initial, self.agent.initial)
    }

    pub fn step(&self, q: usize, letter: usize) -> usize {
        let (qs, qa) = self.pair(q);
        self.index(self.sup.step(qs, letter), self.agent.step(qa, letter))
    }

    pub fn sup_accepting(&self, q: usize) -> bool {
        self.sup.accepting[self.pair(q).0]
    }

    pub fn agent_accepting(&self, q: usize) -> bool {
        self.agent.accepting[self.pair(q).1]
    }

    /// Both components accepting.
    pub fn jointly_accepting(&self, q: usize) -> bool {
        self.sup_accepting(q) && self.agent_accepting(q)
    }
}

pub fn product_dfa(sup: &Dfa, agent: &Dfa) -> Result<ProductDfa> {
    if sup.props != agent.props {
        return Err(Error::AlphabetMismatch);
    }
    Ok(ProductDfa {
        sup: sup.clone(),
        agent: agent.clone(),
    })
}

/// Reachable part of `m` composed with an automaton given by its step
/// function. Returns the product model and the `(state, automaton state)`
/// of every product state.
fn explore(
    m: &Mdp,
    q_init: usize,
    step: impl Fn(usize, usize) -> usize,
    letter_of: impl Fn(usize) -> usize,
    name: impl Fn(usize, usize) -> String,
) -> (Mdp, Vec<(usize, usize)>, HashMap<(usize, usize), usize>) {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut back: Vec<(usize, usize)> = Vec::new();
    let mut queue = VecDeque::new();
    let start = (m.initial, step(q_init, letter_of(m.initial)));
    index.insert(start, 0);
    back.push(start);
    queue.push_back(0);
    let mut actions: Vec<Vec<Action>> = Vec::new();
    while let Some(i) = queue.pop_front() {
        let (s, q) = back[i];
        let mut acts = Vec::with_capacity(m.actions[s].len());
        for act in &m.actions[s] {
            let mut succ = Vec::with_capacity(act.successors.len());
            for &(t, p) in &act.successors {
                let key = (t, step(q, letter_of(t)));
                let j = *index.entry(key).or_insert_with(|| {
                    back.push(key);
                    queue.push_back(back.len() - 1);
                    back.len() - 1
                });
                succ.push((j, p));
            }
            acts.push(Action {
                name: act.name.clone(),
                successors: succ,
            });
        }
        if actions.len() <= i {
            actions.resize_with(i + 1, Vec::new);
        }
        actions[i] = acts;
    }
    actions.resize_with(back.len(), Vec::new);
    let states = back
        .iter()
        .map(|&(s, q)| State {
            name: name(s, q),
            labels: m.states[s].labels.clone(),
            coords: m.states[s].coords,
        })
        .collect();
    let mdp = Mdp {
        states,
        actions,
        initial: 0,
        atomic_props: m.atomic_props.clone(),
    };
    (mdp, back, index)
}

/// Reachable product of a model with a single automaton, used to define
/// references that depend on task progress (such as minimum-time policies).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledProduct {
    pub mdp: Mdp,
    pub dfa: Dfa,
    pub back: Vec<(usize, usize)>,
    pub accepting: StateSet,
    index: HashMap<(usize, usize), usize>,
}

impl LabelledProduct {
    pub fn index_of(&self, s: usize, q: usize) -> Option<usize> {
        self.index.get(&(s, q)).copied()
    }
}

pub fn product_with_dfa(m: &Mdp, dfa: &Dfa) -> Result<LabelledProduct> {
    dfa.check()?;
    let (mdp, back, index) = explore(
        m,
        dfa.initial,
        |q, l| dfa.step(q, l),
        |s| dfa.letter_of(&m.states[s].labels),
        |s, q| format!("{}|{}", m.name(s), q),
    );
    let accepting = (0..back.len())
        .filter(|&i| dfa.accepting[back[i].1])
        .collect();
    Ok(LabelledProduct {
        mdp,
        dfa: dfa.clone(),
        back,
        accepting,
        index,
    })
}

/// Where the supervisor's reference policy is defined.
#[derive(Debug, Clone)]
pub enum ReferencePolicy {
    /// Stationary policy on the base model, lifted state-wise.
    Base(StationaryPolicy),
    /// Stationary policy on the model × supervisor-automaton product.
    Supervisor {
        product: LabelledProduct,
        policy: StationaryPolicy,
    },
}

/// Reference that minimises the expected time until `dfa` accepts, defined
/// on the model × automaton product.
pub fn min_time_reference(m: &Mdp, dfa: &Dfa) -> Result<ReferencePolicy> {
    let product = product_with_dfa(m, dfa)?;
    let policy = min_expected_time_policy(&product.mdp, &product.accepting)?;
    Ok(ReferencePolicy::Supervisor { product, policy })
}

/// Model × supervisor automaton × agent automaton, restricted to its
/// reachable part, together with the sets the synthesis problems need.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    pub mdp: Mdp,
    pub dfa: ProductDfa,
    /// product state → (model state, supervisor automaton state, agent automaton state)
    pub back_map: Vec<(usize, usize, usize)>,
    pub c_sup: StateSet,
    pub c_agent: StateSet,
    pub c_cl: StateSet,
    pub s_d: StateSet,
    pub reference: StationaryPolicy,
    pub ref_chain: MarkovChain,
}

fn product_skeleton(m: &Mdp, dp: &ProductDfa) -> Result<(Mdp, Vec<(usize, usize, usize)>)> {
    dp.sup.check()?;
    dp.agent.check()?;
    let (mdp, back, _) = explore(
        m,
        dp.initial(),
        |q, l| dp.step(q, l),
        |s| dp.sup.letter_of(&m.states[s].labels),
        |s, q| {
            let (qs, qa) = dp.pair(q);
            format!("{}|{},{}", m.name(s), qs, qa)
        },
    );
    let back_map = back
        .iter()
        .map(|&(s, q)| {
            let (qs, qa) = dp.pair(q);
            (s, qs, qa)
        })
        .collect();
    Ok((mdp, back_map))
}

fn lift_reference(
    m: &Mdp,
    mdp: &Mdp,
    back_map: &[(usize, usize, usize)],
    reference: &ReferencePolicy,
) -> Result<StationaryPolicy> {
    let rows = back_map
        .iter()
        .enumerate()
        .map(|(i, &(s, qs, _))| {
            let row =
                match reference {
                    ReferencePolicy::Base(pi) => pi
                        .rows
                        .get(s)
                        .cloned()
                        .ok_or_else(|| Error::MissingPolicyRow(m.name(s).to_string()))?,
                    ReferencePolicy::Supervisor { product, policy } => {
                        let j = product.index_of(s, qs).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "reference product has no state for ({}, {qs})",
                                m.name(s)
                            ))
                        })?;
                        policy.rows.get(j).cloned().ok_or_else(|| {
                            Error::MissingPolicyRow(product.mdp.name(j).to_string())
                        })?
                    }
                };
            if row.len() != mdp.actions[i].len() {
                return Err(Error::PolicyShape {
                    state: mdp.name(i).to_string(),
                    got: row.len(),
                    expected: mdp.actions[i].len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "reference row at {} is not a distribution",
                    mdp.name(i)
                )));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StationaryPolicy { rows })
}

fn accepting_sets(dp: &ProductDfa, back_map: &[(usize, usize, usize)]) -> (StateSet, StateSet) {
    let c_sup = (0..back_map.len())
        .filter(|&i| dp.sup.accepting[back_map[i].1])
        .collect();
    let c_agent = (0..back_map.len())
        .filter(|&i| dp.agent.accepting[back_map[i].2])
        .collect();
    (c_sup, c_agent)
}

/// Product under a given reference: C_cl is the union of closed classes of
/// the reference-induced chain and S_d = all \ (C_cl ∪ C_A).
pub fn build_product_mdp(
    m: &Mdp,
    dp: &ProductDfa,
    reference: &ReferencePolicy,
) -> Result<ProductMdp> {
    let (mdp, back_map) = product_skeleton(m, dp)?;
    let policy = lift_reference(m, &mdp, &back_map, reference)?;
    let ref_chain = induce_chain(&mdp, &policy)?;
    let (c_sup, c_agent) = accepting_sets(dp, &back_map);
    let c_cl = closed_communicating_classes(&ref_chain).union;
    let s_d = (0..mdp.num_states())
        .filter(|s| !c_cl.contains(s) && !c_agent.contains(s))
        .collect();
    Ok(ProductMdp {
        mdp,
        dfa: dp.clone(),
        back_map,
        c_sup,
        c_agent,
        c_cl,
        s_d,
        reference: policy,
        ref_chain,
    })
}

/// Union of the maximal end components of `m` that avoid `exclude`: the
/// states some policy can keep recurrent without entering `exclude`.
pub fn structural_closed_set(m: &Mdp, exclude: &StateSet) -> StateSet {
    end_components(m, exclude).into_iter().flatten().collect()
}

/// Maximal end components avoiding `exclude`, as sorted state lists.
fn end_components(m: &Mdp, exclude: &StateSet) -> Vec<Vec<usize>> {
    let n = m.num_states();
    // component label per state, None once removed
    let mut comp: Vec<Option<usize>> = (0..n)
        .map(|s| (!exclude.contains(&s)).then_some(0))
        .collect();
    loop {
        let allowed: Vec<Vec<usize>> = (0..n).map(|s| internal_actions(m, s, &comp)).collect();
        let mut graph = DiGraph::<usize, ()>::new();
        let nodes: Vec<_> = (0..n).map(|s| graph.add_node(s)).collect();
        for s in 0..n {
            for &a in &allowed[s] {
                for &(q, p) in &m.actions[s][a].successors {
                    if p > STOCHASTIC_TOL {
                        graph.add_edge(nodes[s], nodes[q], ());
                    }
                }
            }
        }
        let mut next: Vec<Option<usize>> = vec![None; n];
        for (id, scc) in tarjan_scc(&graph).into_iter().enumerate() {
            for v in scc {
                let s = graph[v];
                if !allowed[s].is_empty() {
                    next[s] = Some(id);
                }
            }
        }
        // drop states with no action that stays in their new component
        for s in 0..n {
            if next[s].is_some() && internal_actions(m, s, &next).is_empty() {
                next[s] = None;
            }
        }
        // refinement only splits, so equal support and count means a fixed point
        let count = |c: &[Option<usize>]| c.iter().flatten().collect::<HashSet<_>>().len();
        let stable =
            (0..n).all(|s| next[s].is_some() == comp[s].is_some()) && count(&next) == count(&comp);
        comp = next;
        if stable {
            break;
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, c) in comp.iter().enumerate() {
        if let Some(c) = c {
            groups.entry(*c).or_default().push(s);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

/// Actions of `s` whose support lies in the component of `s`.
fn internal_actions(m: &Mdp, s: usize, comp: &[Option<usize>]) -> Vec<usize> {
    let Some(c) = comp[s] else { return Vec::new() };
    (0..m.actions[s].len())
        .filter(|&a| {
            m.actions[s][a]
                .successors
                .iter()
                .all(|&(q, p)| p <= STOCHASTIC_TOL || comp[q] == Some(c))
        })
        .collect()
}

/// Product without a given reference, for reference synthesis. C_cl is the
/// structural closed set; the placeholder reference is uniform over the
/// actions staying inside each end component and uniform elsewhere.
pub fn build_product_structure(m: &Mdp, dp: &ProductDfa) -> Result<ProductMdp> {
    let (mdp, back_map) = product_skeleton(m, dp)?;
    let (c_sup, c_agent) = accepting_sets(dp, &back_map);
    let components = end_components(&mdp, &c_agent);
    let mut comp = vec![None; mdp.num_states()];
    for (id, states) in components.iter().enumerate() {
        for &s in states {
            comp[s] = Some(id);
        }
    }
    let c_cl: StateSet = components.iter().flatten().copied().collect();
    let mut reference = StationaryPolicy::uniform(&mdp);
    for &s in &c_cl {
        let inner = internal_actions(&mdp, s, &comp);
        reference.rows[s] = vec![0.0; mdp.actions[s].len()];
        for &a in &inner {
            reference.rows[s][a] = 1.0 / inner.len() as f64;
        }
    }
    let ref_chain = induce_chain(&mdp, &reference)?;
    let s_d = (0..mdp.num_states())
        .filter(|s| !c_cl.contains(s) && !c_agent.contains(s))
        .collect();
    Ok(ProductMdp {
        mdp,
        dfa: dp.clone(),
        back_map,
        c_sup,
        c_agent,
        c_cl,
        s_d,
        reference,
        ref_chain,
    })
}

impl ProductMdp {
    pub fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    /// Replaces the reference (C_cl and S_d are kept).
    pub fn set_reference(&mut self, policy: StationaryPolicy) -> Result<()> {
        self.ref_chain = induce_chain(&self.mdp, &policy)?;
        self.reference = policy;
        Ok(())
    }

    /// Recomputes the closed classes of the current reference on the states
    /// it reaches and compares them with the stored C_cl.
    pub fn audit_closed_set(&self) -> Result<()> {
        let reach = reachable_from(&self.ref_chain, self.mdp.initial);
        let classes = closed_communicating_classes(&self.ref_chain).union;
        for &s in &reach {
            let now = classes.contains(&s) && !self.c_agent.contains(&s);
            let before = self.c_cl.contains(&s);
            if now != before {
                return Err(Error::ClosedSetMismatch(format!(
                    "state {} is {} under the reference but {} structurally",
                    self.mdp.name(s),
                    if now { "closed" } else { "transient" },
                    if before { "closed" } else { "transient" },
                )));
            }
        }
        Ok(())
    }

    /// Probability that the reference reaches `target` from the initial state.
    pub fn reference_reach(&self, target: &StateSet) -> Result<f64> {
        if target.is_empty() {
            return Ok(0.0);
        }
        Ok(crate::mdp::reachability_probabilities(&self.ref_chain, target)?[self.mdp.initial])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{formula_to_dfa, parse_cosafe};
    use crate::mdp::validate_mdp;
    use crate::models::fork_mdp;

    fn dfa(text: &str, props: &[String]) -> Dfa {
        formula_to_dfa(&parse_cosafe(text).unwrap(), props).unwrap()
    }

    #[test]
    fn product_sizes() {
        let props: Vec<String> = vec!["y".into(), "g".into()];
        let a = dfa("F (y & F g)", &props);
        let b = dfa("F g", &props);
        let p = product_dfa(&a, &b).unwrap();
        assert_eq!(p.num_states(), 6);
        for q in 0..6 {
            assert_eq!(
                p.jointly_accepting(q),
                p.sup_accepting(q) && p.agent_accepting(q)
            );
        }
    }

    #[test]
    fn alphabet_mismatch() {
        let a = dfa("F y", &["y".to_string()]);
        let b = dfa("F y", &["y".to_string(), "g".to_string()]);
        assert!(matches!(product_dfa(&a, &b), Err(Error::AlphabetMismatch)));
    }

    #[test]
    fn fork_product() {
        let m = fork_mdp();
        let props: Vec<String> = m.atomic_props.iter().cloned().collect();
        let dp = product_dfa(&Dfa::trivial(&props).unwrap(), &dfa("F s3", &props)).unwrap();
        let mut beta = StationaryPolicy::uniform(&m);
        beta.rows[0] = vec![0.0, 1.0, 0.0];
        let p = build_product_mdp(&m, &dp, &ReferencePolicy::Base(beta)).unwrap();
        assert!(p.num_states() <= 16);
        assert!(validate_mdp(&p.mdp).is_empty());
        for &s in &p.c_agent {
            assert!(dp.agent.accepting[p.back_map[s].2]);
            assert_eq!(p.back_map[s].0, 3);
        }
        assert_eq!(p.s_d.len(), 1);
        assert!(p.s_d.contains(&p.mdp.initial));
    }
}
