use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::formula::Formula;
use crate::error::{Error, Result};

/// Largest supported alphabet (letters are subsets of the proposition list).
pub const MAX_LETTERS: usize = 1 << 16;

const MAX_RESIDUALS: usize = 200_000;

/// Complete DFA over the power set of `props`. Letter `l` is the subset
/// `{props[i] : bit i of l set}`. Accepting states are absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dfa {
    pub props: Vec<String>,
    /// `delta[q][letter]`
    pub delta: Vec<Vec<usize>>,
    pub initial: usize,
    pub accepting: Vec<bool>,
    /// Human-readable residual formula per state (debug only).
    #[serde(default)]
    pub names: Vec<String>,
}

fn num_letters(props: &[String]) -> Result<usize> {
    if props.len() > 16 {
        return Err(Error::AlphabetTooLarge(
            1usize.checked_shl(props.len() as u32).unwrap_or(usize::MAX),
        ));
    }
    Ok(1 << props.len())
}

impl Dfa {
    /// One-state automaton that accepts immediately (`true`).
    pub fn trivial(props: &[String]) -> Result<Self> {
        let letters = num_letters(props)?;
        Ok(Self {
            props: props.to_vec(),
            delta: vec![vec![0; letters]],
            initial: 0,
            accepting: vec![true],
            names: vec!["true".into()],
        })
    }

    pub fn num_states(&self) -> usize {
        self.delta.len()
    }

    pub fn num_letters(&self) -> usize {
        1 << self.props.len()
    }

    pub fn letter_set(&self, letter: usize) -> BTreeSet<String> {
        self.props
            .iter()
            .enumerate()
            .filter(|(i, _)| letter >> i & 1 == 1)
            .map(|(_, p)| p.clone())
            .collect()
    }

    /// Letter of a label set; labels outside `props` are ignored.
    pub fn letter_of<'a>(&self, labels: impl IntoIterator<Item = &'a String>) -> usize {
        let mut l = 0;
        for lab in labels {
            if let Some(i) = self.props.iter().position(|p| p == lab) {
                l |= 1 << i;
            }
        }
        l
    }

    pub fn step(&self, q: usize, letter: usize) -> usize {
        self.delta[q][letter]
    }

    pub fn run(&self, word: &[usize]) -> usize {
        word.iter().fold(self.initial, |q, &l| self.step(q, l))
    }

    pub fn accepts(&self, word: &[usize]) -> bool {
        self.accepting[self.run(word)]
    }

    /// Structural checks: totality, index bounds, absorbing acceptance.
    pub fn check(&self) -> Result<()> {
        let n = self.num_states();
        if self.accepting.len() != n || self.initial >= n {
            return Err(Error::InvalidArgument("malformed automaton".into()));
        }
        for (q, row) in self.delta.iter().enumerate() {
            if row.len() != self.num_letters() || row.iter().any(|&t| t >= n) {
                return Err(Error::InvalidArgument(format!(
                    "transition row of automaton state {q} is not total"
                )));
            }
            if self.accepting[q] && row.iter().any(|&t| t != q) {
                return Err(Error::InvalidArgument(format!(
                    "accepting automaton state {q} is not absorbing"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("automaton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Dfa = serde_json::from_str(text)?;
        d.check()?;
        Ok(d)
    }
}

/// Builds the automaton of a co-safe formula by exploring residuals under
/// progression, then minimizing. The accepting state is the residual `true`.
pub fn formula_to_dfa(f: &Formula, props: &[String]) -> Result<Dfa> {
    for a in f.atoms() {
        if !props.contains(&a) {
            return Err(Error::UnknownProposition(a));
        }
    }
    let letters = num_letters(props)?;
    let props_vec = props.to_vec();
    let letter_sets: Vec<BTreeSet<String>> = (0..letters)
        .map(|l| {
            props_vec
                .iter()
                .enumerate()
                .filter(|(i, _)| l >> i & 1 == 1)
                .map(|(_, p)| p.clone())
                .collect()
        })
        .collect();

    let mut index: HashMap<Formula, usize> = HashMap::new();
    let mut residuals: Vec<Formula> = Vec::new();
    let mut delta: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    let start = f.dnf();
    index.insert(start.clone(), 0);
    residuals.push(start);
    queue.push_back(0);
    while let Some(q) = queue.pop_front() {
        let cur = residuals[q].clone();
        let mut row = Vec::with_capacity(letters);
        for set in &letter_sets {
            let next = if cur == Formula::True {
                Formula::True
            } else {
                cur.progress(set).dnf()
            };
            let id = match index.get(&next) {
                Some(&id) => id,
                None => {
                    let id = residuals.len();
                    if id >= MAX_RESIDUALS {
                        return Err(Error::InvalidArgument(
                            "formula expands to too many automaton states".into(),
                        ));
                    }
                    index.insert(next.clone(), id);
                    residuals.push(next);
                    queue.push_back(id);
                    id
                }
            };
            row.push(id);
        }
        delta.push(row);
    }
    let accepting: Vec<bool> = residuals.iter().map(|r| *r == Formula::True).collect();
    let names = residuals.iter().map(|r| r.to_string()).collect();
    let raw = Dfa {
        props: props_vec,
        delta,
        initial: 0,
        accepting,
        names,
    };
    Ok(minimize(&raw))
}

/// Partition refinement over the (fully reachable) automaton. Block ids are
/// renumbered in order of first discovery from the initial state.
pub fn minimize(d: &Dfa) -> Dfa {
    let n = d.num_states();
    let mut block: Vec<usize> = d.accepting.iter().map(|&a| usize::from(a)).collect();
    let mut count = block.iter().collect::<BTreeSet<_>>().len();
    loop {
        let mut sig_index: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut next = vec![0; n];
        for q in 0..n {
            let sig = (block[q], d.delta[q].iter().map(|&t| block[t]).collect());
            let len = sig_index.len();
            next[q] = *sig_index.entry(sig).or_insert(len);
        }
        let new_count = sig_index.len();
        block = next;
        if new_count == count {
            break;
        }
        count = new_count;
    }
    // renumber by BFS from the initial block
    let mut order = vec![usize::MAX; count];
    let mut rep = vec![usize::MAX; count];
    for q in 0..n {
        if rep[block[q]] == usize::MAX {
            rep[block[q]] = q;
        }
    }
    let mut queue = VecDeque::from([block[d.initial]]);
    order[block[d.initial]] = 0;
    let mut seen = 1;
    let mut bfs = Vec::new();
    while let Some(b) = queue.pop_front() {
        bfs.push(b);
        for &t in &d.delta[rep[b]] {
            let tb = block[t];
            if order[tb] == usize::MAX {
                order[tb] = seen;
                seen += 1;
                queue.push_back(tb);
            }
        }
    }
    let delta = bfs
        .iter()
        .map(|&b| d.delta[rep[b]].iter().map(|&t| order[block[t]]).collect())
        .collect();
    let accepting = bfs.iter().map(|&b| d.accepting[rep[b]]).collect();
    let names = bfs
        .iter()
        .map(|&b| d.names.get(rep[b]).cloned().unwrap_or_default())
        .collect();
    Dfa {
        props: d.props.clone(),
        delta,
        initial: 0,
        accepting,
        names,
    }
}
