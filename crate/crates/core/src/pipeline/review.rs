//! Review tickets and their resolutions.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::commit_transition;
use super::{BusyGuard, PipelineError, PipelineState, Stage, MAX_LLM_TRIAL, MAX_SIM_TRIAL};
use crate::model::{
    valid_name, CircuitDescription, ModelError, Provenance, TrialOutcome, TrialRecord, Workspace,
};
use crate::netlist::parse_netlist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    PersistentMismatch,
    ExtractionError,
    NotSimulable,
    SimFailureExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "kebab-case")]
pub enum Resolution {
    /// Full corrected circuit description; becomes the next version.
    CircuitCorrection(String),
    /// Comments on the latest solution.
    SolutionFeedback(String),
    Accept,
    Reject,
    /// Expert path: a hand-written netlist replaces generation for trial 3.
    NetlistOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionKind {
    CircuitCorrection,
    SolutionFeedback,
    Accept,
    Reject,
    NetlistOverride,
}

impl FromStr for ResolutionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown resolution kind `{s}`"))
    }
}

impl Resolution {
    pub fn kind(&self) -> ResolutionKind {
        match self {
            Resolution::CircuitCorrection(_) => ResolutionKind::CircuitCorrection,
            Resolution::SolutionFeedback(_) => ResolutionKind::SolutionFeedback,
            Resolution::Accept => ResolutionKind::Accept,
            Resolution::Reject => ResolutionKind::Reject,
            Resolution::NetlistOverride(_) => ResolutionKind::NetlistOverride,
        }
    }

    /// Builds a resolution from a kind and optional text, as submitted by a
    /// reviewer. Text kinds need nonempty text.
    pub fn from_parts(kind: ResolutionKind, text: Option<&str>) -> Result<Self, PipelineError> {
        let text = text.map(str::trim).filter(|t| !t.is_empty());
        let need = |t: Option<&str>| {
            t.map(str::to_string)
                .ok_or_else(|| PipelineError::Invalid(format!("{kind:?} needs nonempty text")))
        };
        Ok(match kind {
            ResolutionKind::CircuitCorrection => Resolution::CircuitCorrection(need(text)?),
            ResolutionKind::SolutionFeedback => Resolution::SolutionFeedback(need(text)?),
            ResolutionKind::NetlistOverride => Resolution::NetlistOverride(need(text)?),
            ResolutionKind::Accept => Resolution::Accept,
            ResolutionKind::Reject => Resolution::Reject,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TicketStatus {
    Open,
    Closed,
}

impl FromStr for TicketStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "open" => Ok(TicketStatus::Open),
            "closed" => Ok(TicketStatus::Closed),
            other => Err(format!("unknown ticket status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTicket {
    /// `<problem>-r<n>`.
    pub id: String,
    pub problem_id: String,
    pub trigger: Trigger,
    pub created_at: String,
    pub llm_trial: u8,
    pub sim_trial: u8,
    pub artifacts: Vec<String>,
    /// Reviewer hints, such as insets the model said were misdetected.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub allowed: Vec<ResolutionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<String>,
}

impl ReviewTicket {
    pub fn status(&self) -> TicketStatus {
        if self.resolution.is_some() {
            TicketStatus::Closed
        } else {
            TicketStatus::Open
        }
    }
}

/// Resolutions a reviewer may choose for a ticket raised in `st`.
fn allowed_for(st: &PipelineState, trigger: Trigger) -> Vec<ResolutionKind> {
    let mut out = Vec::new();
    if trigger == Trigger::NotSimulable {
        out.push(ResolutionKind::Accept);
    } else if st.llm_trial < 3 && st.category.is_simulable() {
        out.push(ResolutionKind::CircuitCorrection);
        out.push(ResolutionKind::NetlistOverride);
    } else if st.llm_trial == 3 {
        out.push(ResolutionKind::SolutionFeedback);
    }
    out.push(ResolutionKind::Reject);
    out
}

fn ticket_notes(ws: &Workspace) -> Result<Vec<String>, ModelError> {
    let Some(name) = ws.latest("recognition.json")? else {
        return Ok(Vec::new());
    };
    let v: serde_json::Value = serde_json::from_str(&ws.read_text(&name)?)
        .map_err(|e| ModelError::Input(format!("{name}: {e}")))?;
    let mut notes = Vec::new();
    for inset in v["insets"].as_array().into_iter().flatten() {
        if inset["rejected"].as_bool() == Some(true) {
            notes.push(format!(
                "model rejected the inset at {} as {}: {}",
                inset["bbox"]["x1"],
                inset["bbox"]["kind"].as_str().unwrap_or("?"),
                inset["reply"].as_str().unwrap_or("").trim()
            ));
        }
    }
    for w in v["warnings"].as_array().into_iter().flatten() {
        notes.extend(w.as_str().map(str::to_string));
    }
    Ok(notes)
}

pub(crate) fn new_ticket(ws: &Workspace, st: &PipelineState, trigger: Trigger) -> Result<ReviewTicket, ModelError> {
    let mut artifacts: Vec<String> = ws
        .index()?
        .into_iter()
        .filter(|e| e.requested.starts_with("desc_v"))
        .map(|e| e.name)
        .collect();
    for a in [&st.diagram, &st.solution, &st.answers, &st.netlist, &st.series, &st.comparison]
        .into_iter()
        .flatten()
    {
        if !artifacts.contains(a) {
            artifacts.push(a.clone());
        }
    }
    Ok(ReviewTicket {
        id: format!("{}-r{}", st.problem_id, st.tickets.len() + 1),
        problem_id: st.problem_id.clone(),
        trigger,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        llm_trial: st.llm_trial,
        sim_trial: st.sim_trial,
        artifacts,
        notes: ticket_notes(ws)?,
        allowed: allowed_for(st, trigger),
        resolution: None,
        resolved_at: None,
    })
}

/// Applies a reviewer's decision to an open ticket. The caller reruns the
/// problem afterwards when the returned stage is not terminal.
pub fn resolve_ticket(ws: &Workspace, ticket_id: &str, resolution: Resolution) -> Result<PipelineState, PipelineError> {
    let _busy = BusyGuard::acquire(ws)
        .map_err(|_| PipelineError::State(format!("problem for ticket {ticket_id} is busy")))?;
    let mut st = PipelineState::load(ws)?
        .ok_or_else(|| PipelineError::NotFound(format!("no state in {}", ws.root.display())))?;
    let idx = st
        .tickets
        .iter()
        .position(|t| t.id == ticket_id)
        .ok_or_else(|| PipelineError::NotFound(format!("ticket {ticket_id}")))?;
    let ticket = &st.tickets[idx];
    if ticket.resolution.is_some() {
        return Err(PipelineError::State(format!("ticket {ticket_id} is already resolved")));
    }
    if st.stage != Stage::AwaitReview {
        return Err(PipelineError::State(format!("problem is in {:?}, not awaiting review", st.stage)));
    }
    if !ticket.allowed.contains(&resolution.kind()) {
        return Err(PipelineError::Invalid(format!(
            "{:?} is not allowed for ticket {ticket_id} (allowed: {:?})",
            resolution.kind(),
            ticket.allowed
        )));
    }
    let from = st.stage;
    let mut artifacts = Vec::new();
    let (to, outcome, detail) = match &resolution {
        Resolution::CircuitCorrection(text) => {
            let desc = CircuitDescription {
                version: st.description_version + 1,
                text: format!("{}\n", text.trim_end()),
                provenance: Provenance::HumanCorrected,
            };
            st.llm_trial = 3;
            st.sim_trial = MAX_SIM_TRIAL;
            let r = ws.persist_for_trial(&desc.artifact_name(), desc.text.as_bytes(), Some((st.llm_trial, st.sim_trial)))?;
            artifacts.push(r.name.clone());
            st.description = Some(r.name);
            st.description_version = desc.version;
            (Stage::SolveLLM, None, format!("circuit corrected (v{}); trial 3 scheduled", desc.version))
        }
        Resolution::NetlistOverride(text) => {
            parse_netlist(text).map_err(|e| PipelineError::Invalid(format!("netlist does not parse: {e}")))?;
            st.llm_trial = 3;
            st.sim_trial = MAX_SIM_TRIAL;
            let name = format!("netlist_sim{}.cir", st.sim_trial);
            let r = ws.persist_for_trial(&name, format!("{}\n", text.trim_end()).as_bytes(), Some((st.llm_trial, st.sim_trial)))?;
            artifacts.push(r.name.clone());
            st.netlist = Some(r.name);
            st.netlist_transcript = None;
            st.netlist_for = Some((st.llm_trial, st.sim_trial));
            st.lint_regenerated = true;
            (Stage::SolveLLM, None, "netlist overridden by reviewer; trial 3 scheduled".to_string())
        }
        Resolution::SolutionFeedback(text) => {
            st.llm_trial = MAX_LLM_TRIAL;
            let r = ws.persist_for_trial("feedback.txt", text.as_bytes(), Some((st.llm_trial, st.sim_trial)))?;
            artifacts.push(r.name);
            st.pending_feedback = Some(text.clone());
            (Stage::SolveLLM, None, "solution feedback; trial 4 scheduled".to_string())
        }
        Resolution::Accept => {
            st.signed_off = true;
            push_record(&mut st, TrialOutcome::Accepted);
            (Stage::Accepted, Some(TrialOutcome::Accepted), "signed off by reviewer".to_string())
        }
        Resolution::Reject => {
            st.failure = Some("rejected by reviewer".into());
            push_record(&mut st, TrialOutcome::Failed);
            (Stage::Failed, Some(TrialOutcome::Failed), "rejected by reviewer".to_string())
        }
    };
    let ticket = &mut st.tickets[idx];
    ticket.resolution = Some(resolution);
    ticket.resolved_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true));
    let detail = format!("{ticket_id}: {detail}");
    commit_transition(ws, from, st, to, outcome, detail, artifacts)
}

/// Convenience for the expert endpoint.
pub fn override_netlist(ws: &Workspace, ticket_id: &str, netlist: &str) -> Result<PipelineState, PipelineError> {
    resolve_ticket(ws, ticket_id, Resolution::NetlistOverride(netlist.to_string()))
}

fn push_record(st: &mut PipelineState, outcome: TrialOutcome) {
    let temperature = st.records.last().map(|r| r.temperature).unwrap_or(0.0);
    st.records.push(TrialRecord {
        llm_trial: st.llm_trial,
        sim_trial: st.sim_trial,
        temperature,
        outcome,
    });
}

/// Every ticket under a batch root, ordered by creation time then id.
pub fn list_tickets(root: &Path) -> Result<Vec<ReviewTicket>, PipelineError> {
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(ModelError::from)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(crate::model::STATE_FILE).is_file())
        .collect();
    dirs.sort();
    for dir in dirs {
        let ws = Workspace { root: dir };
        if let Some(st) = PipelineState::load(&ws)? {
            out.extend(st.tickets);
        }
    }
    out.sort_by(|a, b| (&a.created_at, &a.id).cmp(&(&b.created_at, &b.id)));
    Ok(out)
}

/// Workspace of the problem a ticket id refers to.
pub fn ticket_workspace(root: &Path, ticket_id: &str) -> Result<Workspace, PipelineError> {
    let problem = ticket_id
        .rsplit_once("-r")
        .map(|(p, _)| p)
        .filter(|p| valid_name(p))
        .ok_or_else(|| PipelineError::NotFound(format!("ticket {ticket_id}")))?;
    let dir = root.join(problem);
    if !dir.join(crate::model::STATE_FILE).is_file() {
        return Err(PipelineError::NotFound(format!("ticket {ticket_id}")));
    }
    Ok(Workspace { root: dir })
}
