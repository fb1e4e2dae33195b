//! Reward-guided evolutionary prompt optimization for text-to-video (and
//! text-to-image) generation, and the preference datasets built from it.

pub mod backends;
pub mod datasets;
pub mod digest;
pub mod evolution;
pub mod fixtures;
pub mod objectives;
pub mod scores;
pub mod templates;

pub use backends::{BackendError, CallCounts, CallStats, ChatClient, Evaluator, Generator, Scorer};
pub use datasets::{DatasetError, DpoConfig, DpoTriplet, NegativePromptRecord, NegativeStrategy, SftPair};
pub use evolution::{EvolutionConfig, EvolutionError, EvolutionRun, Evolver, PromptCandidate};
pub use objectives::{DpoLossInput, ObjectiveError, SftNllInput};
pub use scores::{MetricId, MetricScale, ScoreError, ScoreVector, SelectionRule, ThresholdPolicy};
