//! Path sampling, rare-event conditioned sampling of a reference chain, and
//! the detection experiment that scores deceptive policies under the
//! reference.

mod experiment;
mod paths;
mod rare;

pub use experiment::{
    experiment_csv, prepare_random_experiment, run_detection_experiment, run_detection_on,
    BatchRow, CandidateKind, ExperimentConfig, ExperimentMetadata, ExperimentModel,
    ExperimentResult, ModelSpec,
};
pub use paths::{path_log_likelihood, sample_paths, PathSample, PathSampler};
pub use rare::RareEventSampler;
