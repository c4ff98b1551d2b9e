//! The multi-trial state machine: category routing, trial sequencing,
//! cross-verification of the model's answer against the simulator, review
//! tickets, and batch runs.
//!
//! Every transition persists its artifacts first, then appends an event, then
//! rewrites `state.json`. A run interrupted at any point resumes from the last
//! written state; a repeated stage writes versioned artifact siblings.

mod batch;
mod config;
mod review;
mod run;
mod verify;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{MatchedBy, TolerancePolicy};
use crate::llm::{ChatProvider, PromptCatalog, TemperatureSchedule};
use crate::model::{Category, ModelError, TrialOutcome, TrialRecord, Workspace, STATE_FILE};
use crate::sim::{Simulator, DEFAULT_TIMEOUT};
use crate::vision::ExternalDetectorClient;

pub use batch::{batch_run, load_states, report, BatchOptions, Summary, SUMMARY_FILE};
pub use config::{
    build_context, ComparisonConfig, PipelineConfig, ProviderConfig, SimulatorConfig, SimulatorKind,
};
pub use review::{
    list_tickets, override_netlist, resolve_ticket, Resolution, ResolutionKind, ReviewTicket,
    ticket_workspace, TicketStatus, Trigger,
};
pub use run::{run_problem, workspace_problem, PROBLEM_FILE};
pub use verify::{verify_targets, TargetVerdict, Verification};

pub const MAX_LLM_TRIAL: u8 = 4;
pub const MAX_SIM_TRIAL: u8 = 3;
pub const MAX_REVIEWS: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config error: {0}")]
    Config(String),
    /// The problem or ticket is not in a state that allows the request.
    #[error("state error: {0}")]
    State(String),
    #[error("not found: {0}")]
    NotFound(String),
    /// The request itself is malformed or not allowed for this ticket.
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Ingest,
    Recognize,
    SolveLLM,
    GenNetlist,
    Lint,
    Simulate,
    Compare,
    RetryLLM,
    RetrySim,
    AwaitReview,
    Accepted,
    Failed,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Accepted | Stage::Failed)
    }

    /// Edges of the state machine. Any non-terminal stage may fail.
    pub fn can_advance_to(self, next: Stage) -> bool {
        use Stage::*;
        if next == Failed {
            return !self.is_terminal();
        }
        match self {
            Ingest => matches!(next, Recognize | SolveLLM),
            Recognize => next == SolveLLM,
            SolveLLM => matches!(next, GenNetlist | Lint | Compare | AwaitReview),
            GenNetlist => next == Lint,
            Lint => matches!(next, Lint | Simulate),
            Simulate => matches!(next, Compare | RetrySim | AwaitReview),
            Compare => matches!(next, Accepted | RetryLLM | RetrySim | AwaitReview),
            RetryLLM => next == SolveLLM,
            RetrySim => next == GenNetlist,
            AwaitReview => matches!(next, SolveLLM | Accepted),
            Accepted | Failed => false,
        }
    }
}

/// Persisted progress of one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub problem_id: String,
    pub category: Category,
    pub stage: Stage,
    pub llm_trial: u8,
    pub sim_trial: u8,
    /// Number of transitions taken; also the last event's sequence number.
    pub seq: u64,
    pub diagram: Option<String>,
    pub description: Option<String>,
    pub description_version: u32,
    pub solution: Option<String>,
    pub answers: Option<String>,
    pub netlist: Option<String>,
    pub netlist_transcript: Option<String>,
    /// Trials (llm, sim) the current netlist was generated for.
    pub netlist_for: Option<(u8, u8)>,
    pub lint_regenerated: bool,
    pub series: Option<String>,
    pub series_for: Option<(u8, u8)>,
    pub comparison: Option<String>,
    pub matched_by: Option<MatchedBy>,
    pub pending_feedback: Option<String>,
    pub records: Vec<TrialRecord>,
    pub tickets: Vec<ReviewTicket>,
    pub signed_off: bool,
    pub failure: Option<String>,
}

impl PipelineState {
    pub fn new(problem_id: &str, category: Category) -> Self {
        PipelineState {
            problem_id: problem_id.to_string(),
            category,
            stage: Stage::Ingest,
            llm_trial: 1,
            sim_trial: 1,
            seq: 0,
            diagram: None,
            description: None,
            description_version: 0,
            solution: None,
            answers: None,
            netlist: None,
            netlist_transcript: None,
            netlist_for: None,
            lint_regenerated: false,
            series: None,
            series_for: None,
            comparison: None,
            matched_by: None,
            pending_feedback: None,
            records: Vec::new(),
            tickets: Vec::new(),
            signed_off: false,
            failure: None,
        }
    }

    pub fn load(ws: &Workspace) -> Result<Option<Self>, PipelineError> {
        match ws.read_file(STATE_FILE)? {
            None => Ok(None),
            Some(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| PipelineError::State(format!("{}: {e}", ws.root.join(STATE_FILE).display()))),
        }
    }

    pub fn save(&self, ws: &Workspace) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).expect("state serializes");
        Ok(ws.write_file(STATE_FILE, json.as_bytes())?)
    }

    pub fn open_ticket(&self) -> Option<&ReviewTicket> {
        self.tickets.iter().find(|t| t.resolution.is_none())
    }

    /// Whether the stored artifact was produced for the current trials. A
    /// synthesis netlist embeds solved values, so it also tracks the LLM trial.
    fn is_current(&self, made_for: Option<(u8, u8)>) -> bool {
        made_for.is_some_and(|(l, s)| {
            s == self.sim_trial && (!self.category.is_synthesis() || l == self.llm_trial)
        })
    }

    /// Cumulative tier an accepted problem counts toward.
    pub fn accepted_tier(&self) -> Option<u8> {
        (self.stage == Stage::Accepted && !self.signed_off).then(|| self.llm_trial.max(self.sim_trial))
    }
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub problem: String,
    pub from: Stage,
    pub to: Stage,
    pub llm_trial: u8,
    pub sim_trial: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TrialOutcome>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<String>,
}

/// Counting semaphore bounding concurrent simulator processes.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Providers and policies shared by every problem in a run.
pub struct PipelineContext {
    pub provider: Arc<dyn ChatProvider>,
    pub simulator: Arc<dyn Simulator>,
    pub catalog: PromptCatalog,
    pub temperatures: TemperatureSchedule,
    pub tolerance: TolerancePolicy,
    pub detector: Option<ExternalDetectorClient>,
    pub sim_timeout: Duration,
    sim_slots: Slots,
}

impl PipelineContext {
    pub fn new(provider: Arc<dyn ChatProvider>, simulator: Arc<dyn Simulator>) -> Self {
        PipelineContext {
            provider,
            simulator,
            catalog: PromptCatalog::builtin(),
            temperatures: TemperatureSchedule::default(),
            tolerance: TolerancePolicy::default(),
            detector: None,
            sim_timeout: DEFAULT_TIMEOUT,
            sim_slots: Slots::new(4),
        }
    }

    pub fn with_max_simulations(mut self, n: usize) -> Self {
        self.sim_slots = Slots::new(n);
        self
    }

    pub fn with_tolerance(mut self, tolerance: TolerancePolicy) -> Self {
        self.tolerance = tolerance;
        self
    }
}

/// Marks a workspace busy for as long as the guard lives. Runs and
/// resolutions on one problem never overlap.
pub(crate) struct BusyGuard(PathBuf);

fn busy_set() -> &'static Mutex<HashSet<PathBuf>> {
    static BUSY: OnceLock<Mutex<HashSet<PathBuf>>> = OnceLock::new();
    BUSY.get_or_init(|| Mutex::new(HashSet::new()))
}

impl BusyGuard {
    pub(crate) fn acquire(ws: &Workspace) -> Result<Self, PipelineError> {
        let key = ws.root.canonicalize().unwrap_or_else(|_| ws.root.clone());
        if !busy_set().lock().unwrap().insert(key.clone()) {
            return Err(PipelineError::State(format!("problem at {} is busy", ws.root.display())));
        }
        Ok(BusyGuard(key))
    }
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        busy_set().lock().unwrap().remove(&self.0);
    }
}

/// Whether a workspace currently has a run or resolution in progress.
pub fn is_busy(ws: &Workspace) -> bool {
    let key = ws.root.canonicalize().unwrap_or_else(|_| ws.root.clone());
    busy_set().lock().unwrap().contains(&key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges() {
        use Stage::*;
        assert!(Ingest.can_advance_to(Recognize));
        assert!(Lint.can_advance_to(Lint));
        assert!(Compare.can_advance_to(RetryLLM));
        assert!(!Compare.can_advance_to(GenNetlist));
        assert!(!Accepted.can_advance_to(Failed));
        assert!(AwaitReview.can_advance_to(Failed));
        assert!(!AwaitReview.can_advance_to(Compare));
    }

    #[test]
    fn slots_bound_concurrency() {
        let slots = Arc::new(Slots::new(2));
        let peak = Arc::new(Mutex::new((0usize, 0usize)));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let slots = slots.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _g = slots.acquire();
                    {
                        let mut p = peak.lock().unwrap();
                        p.0 += 1;
                        p.1 = p.1.max(p.0);
                    }
                    std::thread::sleep(Duration::from_millis(10));
                    peak.lock().unwrap().0 -= 1;
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(peak.lock().unwrap().1, 2);
    }

    #[test]
    fn busy_guard_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let g = BusyGuard::acquire(&ws).unwrap();
        assert!(is_busy(&ws));
        assert!(matches!(BusyGuard::acquire(&ws), Err(PipelineError::State(_))));
        drop(g);
        assert!(BusyGuard::acquire(&ws).is_ok());
    }
}
