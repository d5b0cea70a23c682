//! Turns a machine-learning task description into a runnable solution
//! program.
//!
//! The first half produces ranked three-section instructions (extraction from
//! scored solutions, fine-tune dataset export, rank-conditioned inference and
//! critic/decider refinement). The second half turns a chosen instruction into
//! code stage by stage, runs it in a child process, feeds failures back for
//! at most three repairs, and scores the submission.
//!
//! Every model call goes through [`gateway::Gateway`], whose backends can be
//! a live HTTP endpoint, fixtures, or recorded cassettes.

pub mod agent;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod sandbox;
pub mod sections;
pub mod synth;
pub mod template;

pub use error::{Error, Result};
pub use model::{
    DataModality, Direction, FinetuneConfig, FinetunePair, InstructionSet, MetricName, MetricSpec,
    Provenance, SolutionRecord, TaskSpec,
};
pub use parallel::Execution;
