use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::paths::PathSampler;
use super::rare::RareEventSampler;
use crate::automata::{
    build_product_mdp, formula_to_dfa, parse_cosafe, product_dfa, Dfa, ProductMdp, ReferencePolicy,
};
use crate::conic::ClarabelSolver;
use crate::deceptive::{preprocess_finiteness, solve_deceptive, synthesize_norm_candidate, Norm};
use crate::error::{Error, Result};
use crate::mdp::{induce_chain, kl_path_divergence, Mdp, StateSet, StationaryPolicy};
use crate::models::{random_mdp, RandomMdpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Kl,
    L1,
    L2,
}

impl CandidateKind {
    pub fn tag(self) -> &'static str {
        match self {
            CandidateKind::Kl => "kl",
            CandidateKind::L1 => "l1",
            CandidateKind::L2 => "l2",
        }
    }
}

/// Where the experiment's model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    /// Generated random model with its built-in reference and target.
    Random(RandomMdpConfig),
    /// Model and reference policy files plus the agent's formula; resolved
    /// by the caller into an [`ExperimentModel`].
    File {
        mdp: String,
        reference: String,
        formula: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub candidates: Vec<CandidateKind>,
    pub nu_agent: f64,
    pub batches: usize,
    pub paths_per_batch: usize,
    /// Transition cap per path; `None` is ten times the product size.
    pub max_len: Option<usize>,
    pub seed: u64,
    /// Probability of drawing a rare-event path from the reaching component.
    pub mix: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::Random(RandomMdpConfig::default()),
            candidates: vec![CandidateKind::Kl, CandidateKind::L1, CandidateKind::L2],
            nu_agent: 0.9,
            batches: 100,
            paths_per_batch: 100,
            max_len: None,
            seed: 7,
            mix: 0.9,
        }
    }
}

/// Base model, reference policy on it, and the agent's formula.
#[derive(Debug, Clone)]
pub struct ExperimentModel {
    pub mdp: Mdp,
    pub reference: StationaryPolicy,
    pub formula: String,
}

/// The generated random model with the agent task `F target`.
pub fn prepare_random_experiment(cfg: &RandomMdpConfig) -> Result<ExperimentModel> {
    let rm = random_mdp(cfg)?;
    Ok(ExperimentModel {
        mdp: rm.mdp,
        reference: rm.reference,
        formula: "F target".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub policy_tag: String,
    pub batch_index: usize,
    pub mean_loglik: f64,
    pub empirical_satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentMetadata {
    pub seed: u64,
    pub batches: usize,
    pub paths_per_batch: usize,
    pub max_len: usize,
    pub mix: f64,
    pub nu_agent: f64,
    pub reference_satisfaction: f64,
    /// Path divergence of each candidate from the reference, by tag.
    pub candidate_kl: Vec<(String, f64)>,
    /// Paths cut at the length cap, by tag.
    pub truncated: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    /// Candidates in configured order, then the rare-event rows tagged `rare`.
    pub rows: Vec<BatchRow>,
    pub metadata: ExperimentMetadata,
}

impl ExperimentResult {
    /// Mean over batches of the per-batch mean log-likelihood.
    pub fn mean_loglik(&self, tag: &str) -> Option<f64> {
        mean(
            self.rows
                .iter()
                .filter(|r| r.policy_tag == tag)
                .map(|r| r.mean_loglik),
        )
    }

    pub fn mean_satisfaction(&self, tag: &str) -> Option<f64> {
        mean(
            self.rows
                .iter()
                .filter(|r| r.policy_tag == tag)
                .map(|r| r.empirical_satisfaction),
        )
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = it.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

/// Runs the experiment on a generated model. File models must be resolved
/// with [`run_detection_on`].
pub fn run_detection_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match &cfg.model {
        ModelSpec::Random(rc) => run_detection_on(&prepare_random_experiment(rc)?, cfg),
        ModelSpec::File { .. } => Err(Error::InvalidArgument(
            "file models must be loaded by the caller and passed to run_detection_on".into(),
        )),
    }
}

enum Generator {
    Chain(StationaryPolicy),
    Rare(RareEventSampler),
}

/// Synthesizes each candidate, then samples `batches × paths_per_batch`
/// paths from each candidate and from the rare-event mixture, scoring every
/// path under the reference chain. Batch `b` of the `k`-th generator uses
/// seed `seed + b` on stream `k`.
pub fn run_detection_on(
    model: &ExperimentModel,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !(0.0..=1.0).contains(&cfg.nu_agent) {
        return Err(Error::InvalidArgument(format!(
            "threshold {} outside [0, 1]",
            cfg.nu_agent
        )));
    }
    let product = experiment_product(model)?;
    let solver = ClarabelSolver::default();
    let problem = preprocess_finiteness(&product, cfg.nu_agent)?;
    let m = &product.mdp;
    let ref_chain = &product.ref_chain;
    let stop: StateSet = product.c_cl.union(&product.c_agent).copied().collect();
    let max_len = cfg.max_len.unwrap_or(10 * m.num_states());

    let mut generators: Vec<(String, Generator)> = Vec::new();
    let mut candidate_kl = Vec::new();
    for &kind in &cfg.candidates {
        let policy = match kind {
            CandidateKind::Kl => solve_deceptive(&problem, &solver)?.policy,
            CandidateKind::L1 => synthesize_norm_candidate(&problem, Norm::One, &solver)?,
            CandidateKind::L2 => synthesize_norm_candidate(&problem, Norm::Two, &solver)?,
        };
        let kl = kl_path_divergence(m, &policy, ref_chain, &product.s_d)?.as_f64();
        candidate_kl.push((kind.tag().to_string(), kl));
        generators.push((kind.tag().to_string(), Generator::Chain(policy)));
    }
    generators.push((
        "rare".into(),
        Generator::Rare(RareEventSampler::new(ref_chain, &product.c_agent, cfg.mix)?),
    ));

    let chains: Vec<Option<crate::mdp::MarkovChain>> = generators
        .iter()
        .map(|(_, g)| match g {
            Generator::Chain(p) => induce_chain(m, p).map(Some),
            Generator::Rare(_) => Ok(None),
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..generators.len())
        .flat_map(|k| (0..cfg.batches).map(move |b| (k, b)))
        .collect();
    let outcomes: Vec<Result<(BatchRow, usize)>> = jobs
        .par_iter()
        .map(|&(k, b)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(b as u64));
            rng.set_stream(k as u64);
            let chain = chains[k].as_ref().unwrap_or(ref_chain);
            let sampler = PathSampler::new(chain, &stop, max_len)?
                .score_with(ref_chain)
                .target(&product.c_agent);
            let (mut ll, mut sat, mut cut) = (0.0, 0usize, 0usize);
            for _ in 0..cfg.paths_per_batch {
                let path = match &generators[k].1 {
                    Generator::Chain(_) => sampler.sample_one(&mut rng),
                    Generator::Rare(r) => r.sample_one(&sampler, &mut rng),
                };
                ll += path.log_likelihood_ref;
                sat += path.satisfied_agent as usize;
                cut += path.truncated as usize;
            }
            let n = cfg.paths_per_batch.max(1) as f64;
            Ok((
                BatchRow {
                    policy_tag: generators[k].0.clone(),
                    batch_index: b,
                    mean_loglik: ll / n,
                    empirical_satisfaction: sat as f64 / n,
                },
                cut,
            ))
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len());
    let mut truncated: Vec<(String, usize)> =
        generators.iter().map(|(t, _)| (t.clone(), 0)).collect();
    for (&(k, _), out) in jobs.iter().zip(outcomes) {
        let (row, cut) = out?;
        truncated[k].1 += cut;
        rows.push(row);
    }
    Ok(ExperimentResult {
        rows,
        metadata: ExperimentMetadata {
            seed: cfg.seed,
            batches: cfg.batches,
            paths_per_batch: cfg.paths_per_batch,
            max_len,
            mix: cfg.mix,
            nu_agent: cfg.nu_agent,
            reference_satisfaction: problem.reference_satisfaction,
            candidate_kl,
            truncated,
        },
    })
}

/// Product of the model with the agent's automaton and a trivial
/// supervisor automaton, under the model's reference.
fn experiment_product(model: &ExperimentModel) -> Result<ProductMdp> {
    let props: Vec<String> = model.mdp.atomic_props.iter().cloned().collect();
    let agent = formula_to_dfa(&parse_cosafe(&model.formula)?, &props)?;
    let dp = product_dfa(&Dfa::trivial(&props)?, &agent)?;
    build_product_mdp(
        &model.mdp,
        &dp,
        &ReferencePolicy::Base(model.reference.clone()),
    )
}

/// CSV with header `policy_tag,batch_index,mean_loglik,empirical_satisfaction`.
pub fn experiment_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("policy_tag,batch_index,mean_loglik,empirical_satisfaction\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e}\n",
            r.policy_tag, r.batch_index, r.mean_loglik, r.empirical_satisfaction
        ));
    }
    out
}
