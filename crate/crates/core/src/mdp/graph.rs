use std::collections::VecDeque;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{MarkovChain, StateSet};

/// Closed communicating classes of a chain and their union C_cl.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedClasses {
    pub classes: Vec<Vec<usize>>,
    pub union: StateSet,
}

fn support(c: &MarkovChain) -> Vec<Vec<usize>> {
    c.rows
        .iter()
        .map(|row| {
            let mut out: Vec<usize> = row
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(q, _)| *q)
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect()
}

/// Every SCC of the positive-probability graph with no edge leaving it.
pub fn closed_communicating_classes(c: &MarkovChain) -> ClosedClasses {
    let adj = support(c);
    let n = adj.len();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (s, succ) in adj.iter().enumerate() {
        for &q in succ {
            g.add_edge(nodes[s], nodes[q], ());
        }
    }
    let mut comp_of = vec![usize::MAX; n];
    let sccs = tarjan_scc(&g);
    for (ci, comp) in sccs.iter().enumerate() {
        for v in comp {
            comp_of[v.index()] = ci;
        }
    }
    let mut classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(ci, comp)| {
            comp.iter()
                .all(|v| adj[v.index()].iter().all(|&q| comp_of[q] == *ci))
        })
        .map(|(_, comp)| {
            let mut states: Vec<usize> = comp.iter().map(|v| v.index()).collect();
            states.sort_unstable();
            states
        })
        .collect();
    classes.sort();
    let union = classes.iter().flatten().copied().collect();
    ClosedClasses { classes, union }
}

/// States reachable from `start` (inclusive) along positive-probability edges.
pub fn reachable_from(c: &MarkovChain, start: usize) -> StateSet {
    let adj = support(c);
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        for &q in &adj[s] {
            if !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    (0..adj.len()).filter(|&s| seen[s]).collect()
}

/// States with a positive-probability path into `target` (target included).
pub fn can_reach(c: &MarkovChain, target: &StateSet) -> Vec<bool> {
    let n = c.num_states();
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, row) in c.rows.iter().enumerate() {
        for &(q, p) in row {
            if p > 0.0 {
                pred[q].push(s);
            }
        }
    }
    let mut mark = vec![false; n];
    let mut queue: VecDeque<usize> = target.iter().copied().collect();
    for &t in target {
        mark[t] = true;
    }
    while let Some(q) = queue.pop_front() {
        for &s in &pred[q] {
            if !mark[s] {
                mark[s] = true;
                queue.push_back(s);
            }
        }
    }
    mark
}
