//! Perforated training: dendrite units grown against the frozen network's
//! residual error and folded back in through zero-initialised synapses.

mod candidate;
mod controller;
mod correlation;
pub mod dendrite;
mod residual;

pub use candidate::{
    candidate_step, select_and_integrate, spawn_candidates, target_layers, CandidateInputs, CandidateState,
    DendriteUnit,
};
pub use controller::{
    evaluate, pb_train, EpochRecord, PbConfig, Phase, PhaseState, PhaseSummary, TrainReport, REPORT_HEADER,
};
pub use correlation::{correlation_score, covariances};
pub use dendrite::{cycle_param_count, DendriteBlock, DendriteCycle};
pub use residual::{residual_error, ErrorMatrix};
