#![allow(dead_code)]

use std::collections::BTreeSet;

use klsynth::automata::{
    build_product_mdp, formula_to_dfa, parse_cosafe, product_dfa, Dfa, Formula, ReferencePolicy,
};
use klsynth::conic::ClarabelSolver;
use klsynth::deceptive::{
    preprocess_finiteness, solve_deceptive, DeceptionProblem, DeceptionSolution,
};
use klsynth::mdp::{induce_chain, Mdp, StateSet, StationaryPolicy};
use klsynth::simulation::{path_log_likelihood, PathSampler};

pub fn props(m: &Mdp) -> Vec<String> {
    m.atomic_props.iter().cloned().collect()
}

pub fn dfa(m: &Mdp, formula: &str) -> Dfa {
    formula_to_dfa(&parse_cosafe(formula).unwrap(), &props(m)).unwrap()
}

/// Deceptive problem against a base-model reference, trivial supervisor task.
pub fn deception_problem(
    m: &Mdp,
    reference: StationaryPolicy,
    agent: &str,
    nu: f64,
) -> DeceptionProblem {
    let dp = product_dfa(&Dfa::trivial(&props(m)).unwrap(), &dfa(m, agent)).unwrap();
    let product = build_product_mdp(m, &dp, &ReferencePolicy::Base(reference)).unwrap();
    preprocess_finiteness(&product, nu).unwrap()
}

pub fn solve(p: &DeceptionProblem) -> DeceptionSolution {
    solve_deceptive(p, &ClarabelSolver::default()).unwrap()
}

/// Policy taking action `a` at the initial state and uniform elsewhere.
pub fn pure_at_initial(m: &Mdp, a: usize) -> StationaryPolicy {
    let mut pi = StationaryPolicy::uniform(m);
    let k = pi.rows[m.initial].len();
    pi.rows[m.initial] = (0..k).map(|j| if j == a { 1.0 } else { 0.0 }).collect();
    pi
}

/// Sample mean and standard error of the path log-likelihood ratio of the
/// solution's chain against the reference chain.
pub fn monte_carlo_kl(
    p: &DeceptionProblem,
    policy: &StationaryPolicy,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let m = p.mdp();
    let agent = induce_chain(m, policy).unwrap();
    let stop: StateSet = (0..m.num_states())
        .filter(|s| !p.product.s_d.contains(s))
        .collect();
    let sampler = PathSampler::new(&agent, &stop, 10_000)
        .unwrap()
        .score_with(&p.product.ref_chain);
    let ratios: Vec<f64> = sampler
        .sample(n, seed)
        .iter()
        .map(|path| path_log_likelihood(&agent, &path.states) - path.log_likelihood_ref)
        .collect();
    let mean = ratios.iter().sum::<f64>() / n as f64;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Finite-word satisfaction: `word` is long enough to witness `f`.
pub fn witnesses(f: &Formula, word: &[BTreeSet<String>]) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(p) => word.first().is_some_and(|l| l.contains(p)),
        Formula::NotAtom(p) => word.first().is_some_and(|l| !l.contains(p)),
        Formula::And(fs) => fs.iter().all(|g| witnesses(g, word)),
        Formula::Or(fs) => fs.iter().any(|g| witnesses(g, word)),
        Formula::Next(g) => word.len() >= 2 && witnesses(g, &word[1..]),
        Formula::Eventually(g) => (0..word.len()).any(|i| witnesses(g, &word[i..])),
        Formula::Until(a, b) => (0..word.len())
            .any(|j| witnesses(b, &word[j..]) && (0..j).all(|i| witnesses(a, &word[i..]))),
    }
}

/// Every word of length at most `max_len`, as letter indices.
pub fn all_words(letters: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for l in 0..letters {
                let mut v: Vec<usize> = w.clone();
                v.push(l);
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Number of words of length at most 5 on which the automaton and
/// `witnesses` disagree.
pub fn dfa_disagreements(f: &Formula, props: &[String]) -> usize {
    let d = formula_to_dfa(f, props).unwrap();
    all_words(d.num_letters(), 5)
        .iter()
        .filter(|w| {
            let letters: Vec<BTreeSet<String>> = w.iter().map(|&l| d.letter_set(l)).collect();
            d.accepts(w) != witnesses(f, &letters)
        })
        .count()
}
