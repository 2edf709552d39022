//! Coach skill ranking from season game networks.
//!
//! The pipeline for one season is:
//!
//! 1. [`ingest`]: parse games, coaches and name aliases into a [`ingest::SeasonDataset`].
//! 2. [`network`]: build the winner-to-loser digraph and score teams by
//!    eigenvector centrality.
//! 3. [`model`]: split team skill into coach and player skill and score each
//!    game margin against the model prediction.
//! 4. [`optimize`]: fit coach skills with Powell's method over log-skills.
//! 5. [`rank`]: yearly top-k lists and career values.
//!
//! [`experiments`] holds the perturbation and synthetic-recovery harnesses and
//! [`pipeline`] wires the steps together.

pub mod experiments;
pub mod ingest;
pub mod model;
pub mod network;
pub mod optimize;
pub mod pipeline;
pub mod rank;

pub use ingest::{AliasTable, CoachAssignment, GameRecord, IngestError, SeasonDataset};
pub use model::{CoachRoster, CoachSkillVector, GameObservation, ModelConfig, SkillModelParams};
pub use network::{CentralityConfig, CentralityVector, NetworkError, SeasonNetwork};
pub use optimize::{FitResult, OptimizeError, PowellConfig};
pub use pipeline::{PipelineConfig, PipelineError, SeasonResult};
pub use rank::{CareerRecord, YearlyRanking};
