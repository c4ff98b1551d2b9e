//! Simulator-verified LLM pipeline for circuit-analysis problems.
//!
//! A problem (statement plus optional schematic) is recognized and solved by a
//! chat-capable model, independently re-derived through an ngspice netlist, and
//! the two answers are compared numerically. Persistent disagreement opens a
//! review ticket for a human, whose corrections feed the next trial.
//!
//! Module map:
//!
//! - [`model`]: shared domain types and the per-problem workspace on disk
//! - [`vision`]: rule-based rhombus detection and the external detector client
//! - [`llm`]: chat sessions, prompt catalog and the staged conversations
//! - [`netlist`]: SPICE netlist parsing, linting and emission
//! - [`sim`]: ngspice batch runner and printed-table parser
//! - [`compare`]: answer-expression grammar, interpolation and verdicts
//! - [`pipeline`]: the multi-trial state machine, review tickets and batch runs

pub mod compare;
pub mod llm;
pub mod model;
pub mod netlist;
pub mod pipeline;
pub mod sim;
pub mod vision;

pub use compare::{AnswerExpression, ComparisonReport, TolerancePolicy};
pub use model::{Category, CircuitDescription, DetectionBox, Problem, TrialRecord, Workspace};
pub use netlist::{LintReport, Netlist};
pub use pipeline::{PipelineContext, PipelineState, ReviewTicket, Stage};
pub use sim::{SimOutcome, SimulationSeries};
