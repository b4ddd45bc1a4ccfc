use rand::Rng;

use super::paths::{row_tables, PathSample, PathSampler, RowTable};
use crate::error::{Error, Result};
use crate::mdp::{reachability_probabilities, MarkovChain, StateSet};

/// Paths of a reference chain conditioned on reaching, or on avoiding, a
/// target set, mixed per path.
#[derive(Debug, Clone)]
pub struct RareEventSampler {
    /// Kernel conditioned on reaching the target.
    pub chain_plus: MarkovChain,
    /// Kernel conditioned on never reaching it.
    pub chain_minus: MarkovChain,
    /// Probability of drawing a path from `chain_plus`.
    pub mix_prob: f64,
    /// Probability that the unconditioned chain reaches the target.
    pub target_prob: f64,
    plus: Vec<RowTable>,
    minus: Vec<RowTable>,
}

impl RareEventSampler {
    /// Reweights each row by the reach probability `h` of its successors
    /// (and by `1 − h` for the avoiding kernel). Rows the conditioned chain
    /// cannot visit keep the original kernel.
    pub fn new(reference: &MarkovChain, target: &StateSet, mix: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::InvalidArgument(format!(
                "mix probability {mix} outside [0, 1]"
            )));
        }
        let h = reachability_probabilities(reference, target)?;
        let h0 = h[reference.initial];
        if h0 <= 0.0 || h0 >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "target is reached with probability {h0}; there is no rare event to condition on"
            )));
        }
        let transform = |weight: &dyn Fn(usize) -> f64| MarkovChain {
            rows: reference
                .rows
                .iter()
                .map(|row| {
                    let total: f64 = row.iter().map(|&(q, p)| p * weight(q)).sum();
                    if total <= 0.0 {
                        return row.clone();
                    }
                    row.iter()
                        .map(|&(q, p)| (q, p * weight(q) / total))
                        .filter(|&(_, p)| p > 0.0)
                        .collect()
                })
                .collect(),
            initial: reference.initial,
        };
        let chain_plus = transform(&|q| h[q]);
        let chain_minus = transform(&|q| 1.0 - h[q]);
        Ok(Self {
            plus: row_tables(&chain_plus),
            minus: row_tables(&chain_minus),
            chain_plus,
            chain_minus,
            mix_prob: mix,
            target_prob: h0,
        })
    }

    /// One path: the reaching component with probability `mix_prob`, the
    /// avoiding one otherwise. `sampler` supplies stopping, scoring and the
    /// length cap.
    pub fn sample_one(&self, sampler: &PathSampler<'_>, rng: &mut impl Rng) -> PathSample {
        if rng.random::<f64>() < self.mix_prob {
            sampler.sample_from(&self.plus, rng)
        } else {
            sampler.sample_from(&self.minus, rng)
        }
    }
}
