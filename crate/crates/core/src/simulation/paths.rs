use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{MarkovChain, StateSet};

/// A truncated path and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub states: Vec<usize>,
    /// Log-likelihood in nats under the scoring chain.
    pub log_likelihood_ref: f64,
    /// The path entered the target set.
    pub satisfied_agent: bool,
    /// The path hit the length cap before entering a stopping state.
    pub truncated: bool,
}

/// Cumulative row tables for inverse-CDF sampling.
#[derive(Debug, Clone)]
pub(crate) struct RowTable {
    targets: Vec<usize>,
    cumulative: Vec<f64>,
}

impl RowTable {
    fn new(row: &[(usize, f64)]) -> Self {
        let mut targets = Vec::with_capacity(row.len());
        let mut cumulative = Vec::with_capacity(row.len());
        let mut acc = 0.0;
        for &(q, p) in row {
            if p > 0.0 {
                acc += p;
                targets.push(q);
                cumulative.push(acc);
            }
        }
        Self {
            targets,
            cumulative,
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> Option<usize> {
        let total = *self.cumulative.last()?;
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        Some(self.targets[k.min(self.targets.len() - 1)])
    }
}

/// Samples paths of one chain and scores them under another.
#[derive(Debug, Clone)]
pub struct PathSampler<'a> {
    tables: Vec<RowTable>,
    initial: usize,
    score: &'a MarkovChain,
    stop: &'a StateSet,
    target: Option<&'a StateSet>,
    max_len: usize,
}

impl<'a> PathSampler<'a> {
    /// Paths of `chain` scored under `chain`, stopping on entering `stop` or
    /// after `max_len` transitions.
    pub fn new(chain: &'a MarkovChain, stop: &'a StateSet, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        Ok(Self {
            tables: row_tables(chain),
            initial: chain.initial,
            score: chain,
            stop,
            target: None,
            max_len,
        })
    }

    pub fn score_with(mut self, chain: &'a MarkovChain) -> Self {
        self.score = chain;
        self
    }

    pub fn target(mut self, target: &'a StateSet) -> Self {
        self.target = Some(target);
        self
    }

    pub fn sample_one(&self, rng: &mut impl Rng) -> PathSample {
        self.sample_with(&self.tables, rng)
    }

    fn sample_with(&self, tables: &[RowTable], rng: &mut impl Rng) -> PathSample {
        let mut s = self.initial;
        let mut states = vec![s];
        let mut ll = 0.0;
        let hit = |s: usize| self.target.is_some_and(|t| t.contains(&s));
        let mut satisfied = hit(s);
        let mut truncated = false;
        while !self.stop.contains(&s) {
            if states.len() > self.max_len {
                truncated = true;
                break;
            }
            let Some(q) = tables[s].draw(rng) else { break };
            ll += self.score.prob(s, q).ln();
            states.push(q);
            satisfied |= hit(q);
            s = q;
        }
        PathSample {
            states,
            log_likelihood_ref: ll,
            satisfied_agent: satisfied,
            truncated,
        }
    }

    /// `n` paths from a generator seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<PathSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    /// Path generated by `tables` instead of the sampler's own chain.
    pub(crate) fn sample_from(&self, tables: &[RowTable], rng: &mut impl Rng) -> PathSample {
        self.sample_with(tables, rng)
    }
}

pub(crate) fn row_tables(chain: &MarkovChain) -> Vec<RowTable> {
    chain.rows.iter().map(|r| RowTable::new(r)).collect()
}

/// `n` paths of `c` scored under `c` itself, stopping on entering `stop` or
/// after `max_len` transitions.
pub fn sample_paths(
    c: &MarkovChain,
    n: usize,
    stop: &StateSet,
    max_len: usize,
    seed: u64,
) -> Result<Vec<PathSample>> {
    Ok(PathSampler::new(c, stop, max_len)?.sample(n, seed))
}

/// Σ ln P(s_t, s_{t+1}) along `states`.
pub fn path_log_likelihood(c: &MarkovChain, states: &[usize]) -> f64 {
    states.windows(2).map(|w| c.prob(w[0], w[1]).ln()).sum()
}
