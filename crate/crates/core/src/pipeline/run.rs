//! Stage execution for one problem.

use std::cell::RefCell;
use std::path::PathBuf;

use image::DynamicImage;
use serde::Serialize;
use serde_json::json;

use super::review::{new_ticket, Trigger};
use super::verify::verify_targets;
use super::{
    BusyGuard, Event, PipelineContext, PipelineError, PipelineState, Stage, MAX_REVIEWS,
};
use crate::compare::Outcome;
use crate::llm::{
    extract_answer_expression, generate_netlist, recognize_circuit, regenerate_after_lint,
    solve_problem, Attachment, ChatSession, ExtractedAnswer, Inset, InsetSource, LlmError,
    NetlistRequest, Recognition, SolutionText, SolveRequest,
};
use crate::model::{
    ModelError, Problem, SourceKind, TrialOutcome, TrialRecord, Workspace,
};
use crate::netlist::{lint_for, parse_netlist, Analysis};
use crate::sim::{series_from_json, series_to_json, SimStatus};
use crate::vision::{decode_image, detect_dependent_sources, detect_independent_sources, encode_png, ExternalDetectorClient};

/// Snapshot of the problem definition in the workspace root.
pub const PROBLEM_FILE: &str = "problem.json";

/// Error inside a stage: storage problems abort the run, anything else
/// moves the problem to Failed with the cause.
enum StageError {
    Fatal(String),
    Storage(PipelineError),
}

impl From<ModelError> for StageError {
    fn from(e: ModelError) -> Self {
        StageError::Storage(e.into())
    }
}

impl From<LlmError> for StageError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Storage(e) => StageError::Storage(e.into()),
            other => StageError::Fatal(other.to_string()),
        }
    }
}

struct Step {
    to: Stage,
    outcome: Option<TrialOutcome>,
    detail: String,
    artifacts: Vec<String>,
}

impl Step {
    fn to(to: Stage) -> Self {
        Step {
            to,
            outcome: None,
            detail: String::new(),
            artifacts: Vec::new(),
        }
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    fn outcome(mut self, outcome: TrialOutcome) -> Self {
        self.outcome = Some(outcome);
        self
    }
}

type StageResult = Result<Step, StageError>;

/// Reads the problem snapshot written when the run started.
pub fn workspace_problem(ws: &Workspace) -> Result<Problem, PipelineError> {
    let text = ws
        .read_file(PROBLEM_FILE)?
        .ok_or_else(|| PipelineError::NotFound(format!("{} has no {PROBLEM_FILE}", ws.root.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::State(format!("{PROBLEM_FILE}: {e}")))
}

/// Advances the problem until it is accepted, failed or waiting for review.
/// Resumes from `state.json` when present.
pub fn run_problem(ctx: &PipelineContext, problem: &Problem, ws: &Workspace) -> Result<PipelineState, PipelineError> {
    let _busy = BusyGuard::acquire(ws)?;
    let mut state = match PipelineState::load(ws)? {
        Some(s) => {
            if s.problem_id != problem.id {
                return Err(PipelineError::State(format!(
                    "workspace {} belongs to problem `{}`",
                    ws.root.display(),
                    s.problem_id
                )));
            }
            s
        }
        None => {
            let snapshot = serde_json::to_string_pretty(problem).expect("problem serializes");
            ws.write_file(PROBLEM_FILE, snapshot.as_bytes())?;
            PipelineState::new(&problem.id, problem.category.clone())
        }
    };
    while !state.stage.is_terminal() && state.stage != Stage::AwaitReview {
        let mut next = state.clone();
        let step = match execute(ctx, problem, ws, &mut next) {
            Ok(step) => step,
            Err(StageError::Storage(e)) => return Err(e),
            Err(StageError::Fatal(cause)) => {
                next = state.clone();
                fail(&mut next, ctx, cause)
            }
        };
        commit(ws, &state, next, step).map(|s| state = s)?;
    }
    Ok(state)
}

/// Appends the event, then replaces `state.json`.
pub(crate) fn commit_transition(
    ws: &Workspace,
    from: Stage,
    mut next: PipelineState,
    to: Stage,
    outcome: Option<TrialOutcome>,
    detail: String,
    artifacts: Vec<String>,
) -> Result<PipelineState, PipelineError> {
    debug_assert!(from.can_advance_to(to), "{from:?} -> {to:?}");
    next.stage = to;
    next.seq += 1;
    ws.append_event(&Event {
        seq: next.seq,
        problem: next.problem_id.clone(),
        from,
        to,
        llm_trial: next.llm_trial,
        sim_trial: next.sim_trial,
        outcome,
        detail,
        artifacts,
    })?;
    next.save(ws)?;
    Ok(next)
}

fn commit(ws: &Workspace, current: &PipelineState, next: PipelineState, step: Step) -> Result<PipelineState, PipelineError> {
    commit_transition(ws, current.stage, next, step.to, step.outcome, step.detail, step.artifacts)
}

fn fail(st: &mut PipelineState, ctx: &PipelineContext, cause: String) -> Step {
    record(st, TrialOutcome::Failed, ctx.temperatures.for_trial(st.llm_trial));
    st.failure = Some(cause.clone());
    Step::to(Stage::Failed).outcome(TrialOutcome::Failed).detail(cause)
}

fn record(st: &mut PipelineState, outcome: TrialOutcome, temperature: f64) {
    st.records.push(TrialRecord {
        llm_trial: st.llm_trial,
        sim_trial: st.sim_trial,
        temperature,
        outcome,
    });
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_string_pretty(value).expect("artifact serializes").into_bytes()
}

/// Writes an artifact tagged with the current trials and notes it for the
/// event; returns the stored name.
fn persist(ws: &Workspace, st: &PipelineState, name: &str, bytes: &[u8], arts: &mut Vec<String>) -> Result<String, ModelError> {
    let r = ws.persist_for_trial(name, bytes, Some((st.llm_trial, st.sim_trial)))?;
    arts.push(r.name.clone());
    Ok(r.name)
}

fn required<'a>(field: &'a Option<String>, what: &str) -> Result<&'a str, StageError> {
    field
        .as_deref()
        .ok_or_else(|| StageError::Fatal(format!("internal: no {what} recorded in state")))
}

fn execute(ctx: &PipelineContext, problem: &Problem, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    match st.stage {
        Stage::Ingest => ingest(problem, ws, st),
        Stage::Recognize => recognize(ctx, problem, ws, st),
        Stage::SolveLLM => solve(ctx, problem, ws, st),
        Stage::GenNetlist => gen_netlist(ctx, problem, ws, st),
        Stage::Lint => lint_stage(ctx, ws, st),
        Stage::Simulate => simulate(ctx, ws, st),
        Stage::Compare => compare_stage(ctx, problem, ws, st),
        Stage::RetryLLM => {
            st.llm_trial += 1;
            Ok(Step::to(Stage::SolveLLM).detail(format!("LLM trial {}", st.llm_trial)))
        }
        Stage::RetrySim => {
            st.sim_trial += 1;
            Ok(Step::to(Stage::GenNetlist).detail(format!("simulation trial {}", st.sim_trial)))
        }
        Stage::AwaitReview | Stage::Accepted | Stage::Failed => unreachable!("not runnable"),
    }
}

fn ingest(problem: &Problem, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let mut arts = Vec::new();
    persist(ws, st, "statement.txt", problem.statement.as_bytes(), &mut arts)?;
    if let Some(path) = &problem.diagram {
        let bytes = std::fs::read(path).map_err(|e| StageError::Fatal(format!("{}: {e}", path.display())))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_else(|| "png".into());
        st.diagram = Some(persist(ws, st, &format!("diagram.{ext}"), &bytes, &mut arts)?);
    }
    let to = if st.diagram.is_some() { Stage::Recognize } else { Stage::SolveLLM };
    let mut step = Step::to(to).detail(problem.category.slug());
    step.artifacts = arts;
    Ok(step)
}

fn kind_slug(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::IndependentVoltage => "vsource",
        SourceKind::IndependentCurrent => "isource",
        SourceKind::Dependent => "dependent",
    }
}

/// Runs detection only when a gate asks for it and stores each inset.
struct VisionInsets<'a> {
    ws: &'a Workspace,
    st: &'a PipelineState,
    image: DynamicImage,
    diagram_path: PathBuf,
    detector: Option<&'a ExternalDetectorClient>,
    artifacts: RefCell<Vec<String>>,
    warnings: RefCell<Vec<String>>,
}

impl InsetSource for VisionInsets<'_> {
    fn insets(&self, kinds: &[SourceKind]) -> Result<Vec<Inset>, LlmError> {
        let mut found = Vec::new();
        if kinds.contains(&SourceKind::Dependent) {
            found.extend(detect_dependent_sources(&self.image));
        }
        if kinds.iter().any(|k| *k != SourceKind::Dependent) {
            match self.detector {
                Some(d) => found.extend(detect_independent_sources(&self.diagram_path, d).map_err(|e| {
                    LlmError::Provider {
                        context: "detector".into(),
                        message: e.to_string(),
                    }
                })?),
                None => self
                    .warnings
                    .borrow_mut()
                    .push("no external detector configured; independent-source insets skipped".into()),
            }
        }
        found.retain(|d| kinds.contains(&d.bbox.kind));
        let mut out = Vec::new();
        for (i, d) in found.into_iter().enumerate() {
            let name = format!("inset_{}_{}.png", kind_slug(d.bbox.kind), i + 1);
            let bytes = encode_png(&d.inset);
            let stored = persist(self.ws, self.st, &name, &bytes, &mut self.artifacts.borrow_mut())?;
            out.push(Inset {
                bbox: d.bbox,
                image: Attachment::png(stored, bytes),
            });
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct RecognitionArtifact<'a> {
    #[serde(flatten)]
    recognition: &'a Recognition,
    warnings: Vec<String>,
}

fn diagram_attachment(ws: &Workspace, st: &PipelineState) -> Result<Option<Attachment>, StageError> {
    match &st.diagram {
        None => Ok(None),
        Some(name) => Ok(Some(Attachment::from_file_name(name, ws.read_artifact(name)?))),
    }
}

fn recognize(ctx: &PipelineContext, problem: &Problem, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let diagram = diagram_attachment(ws, st)?.ok_or_else(|| StageError::Fatal("no diagram to recognize".into()))?;
    let image = decode_image(&diagram.bytes).map_err(|e| StageError::Fatal(e.to_string()))?;
    let diagram_path = ws
        .artifact_path(&diagram.name)
        .ok_or_else(|| StageError::Fatal(format!("bad diagram name {}", diagram.name)))?;
    let snapshot = st.clone();
    let source = VisionInsets {
        ws,
        st: &snapshot,
        image,
        diagram_path,
        detector: ctx.detector.as_ref(),
        artifacts: RefCell::new(Vec::new()),
        warnings: RefCell::new(Vec::new()),
    };
    let mut session = ChatSession::new(
        ctx.provider.clone(),
        ctx.temperatures.for_trial(1),
        format!("{}/recognize", problem.id),
    );
    let result = recognize_circuit(&mut session, &ctx.catalog, diagram, &source);
    let mut arts = source.artifacts.take();
    persist(ws, st, "transcript_recognize.json", session.transcript_json().as_bytes(), &mut arts)?;
    let r = result?;
    persist(ws, st, &r.v1.artifact_name(), r.v1.text.as_bytes(), &mut arts)?;
    let v2 = persist(ws, st, &r.v2.artifact_name(), r.v2.text.as_bytes(), &mut arts)?;
    let warnings = source.warnings.take();
    persist(
        ws,
        st,
        "recognition.json",
        &pretty(&RecognitionArtifact {
            recognition: &r,
            warnings: warnings.clone(),
        }),
        &mut arts,
    )?;
    st.description = Some(v2);
    st.description_version = r.v2.version;
    let mut detail = format!("{} inset(s), {} rejected", r.insets.len(), r.rejected_insets().count());
    for w in warnings {
        detail.push_str("; ");
        detail.push_str(&w);
    }
    let mut step = Step::to(Stage::SolveLLM).detail(detail);
    step.artifacts = arts;
    Ok(step)
}

/// Opens a ticket, or fails once the review budget is spent.
fn escalate(ctx: &PipelineContext, ws: &Workspace, st: &mut PipelineState, trigger: Trigger, mut arts: Vec<String>) -> StageResult {
    if st.tickets.len() >= MAX_REVIEWS {
        let mut step = fail(st, ctx, format!("{trigger:?} after {MAX_REVIEWS} reviews"));
        step.artifacts = arts;
        return Ok(step);
    }
    let ticket = new_ticket(ws, st, trigger)?;
    let detail = format!("ticket {} ({trigger:?})", ticket.id);
    st.tickets.push(ticket);
    record(st, TrialOutcome::AwaitingHuman, ctx.temperatures.for_trial(st.llm_trial));
    let mut step = Step::to(Stage::AwaitReview).outcome(TrialOutcome::AwaitingHuman).detail(detail);
    step.artifacts.append(&mut arts);
    Ok(step)
}

fn solve(ctx: &PipelineContext, problem: &Problem, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let n = st.llm_trial;
    let statement = problem.full_statement();
    let description = match &st.description {
        Some(name) => Some(ws.read_text(name)?),
        None => None,
    };
    let diagram = diagram_attachment(ws, st)?;
    let previous: Option<SolutionText> = match (&st.pending_feedback, &st.solution) {
        (Some(_), Some(name)) => Some(
            serde_json::from_str(&ws.read_text(name)?)
                .map_err(|e| StageError::Fatal(format!("{name}: {e}")))?,
        ),
        _ => None,
    };
    let feedback = match (&previous, &st.pending_feedback) {
        (Some(prev), Some(fb)) => Some((prev.full.as_str(), fb.as_str())),
        _ => None,
    };
    let mut session = ChatSession::new(
        ctx.provider.clone(),
        ctx.temperatures.for_trial(n),
        format!("{}/llm{n}", problem.id),
    );
    let result = solve_problem(
        &mut session,
        &ctx.catalog,
        &SolveRequest {
            statement: &statement,
            description: description.as_deref(),
            diagram: diagram.as_ref(),
            feedback,
        },
    );
    let mut arts = Vec::new();
    persist(ws, st, &format!("transcript_llm{n}.json"), session.transcript_json().as_bytes(), &mut arts)?;
    let solution = result?;
    st.solution = Some(persist(ws, st, &format!("solution_llm{n}.json"), &pretty(&solution), &mut arts)?);
    st.pending_feedback = None;

    if !problem.category.is_simulable() {
        return escalate(ctx, ws, st, Trigger::NotSimulable, arts);
    }

    let mut session = ChatSession::new(ctx.provider.clone(), 0.0, format!("{}/extract{n}", problem.id));
    let extracted = extract_answer_expression(&mut session, &ctx.catalog, &solution, &problem.targets);
    persist(ws, st, &format!("transcript_extract_llm{n}.json"), session.transcript_json().as_bytes(), &mut arts)?;
    let answers = match extracted {
        Ok(a) => a,
        Err(LlmError::Extraction { target, message }) => {
            let note = format!("extraction failed for `{target}`: {message}");
            persist(ws, st, &format!("extraction_error_llm{n}.txt"), note.as_bytes(), &mut arts)?;
            return escalate(ctx, ws, st, Trigger::ExtractionError, arts);
        }
        Err(e) => return Err(e.into()),
    };
    st.answers = Some(persist(ws, st, &format!("answers_llm{n}.json"), &pretty(&answers), &mut arts)?);

    let to = if st.is_current(st.series_for) {
        Stage::Compare
    } else if st.is_current(st.netlist_for) {
        Stage::Lint
    } else {
        Stage::GenNetlist
    };
    let mut step = Step::to(to).detail(solution.concise.lines().next().unwrap_or("").to_string());
    step.artifacts = arts;
    Ok(step)
}

fn gen_netlist(ctx: &PipelineContext, problem: &Problem, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let n = st.sim_trial;
    let description = ws.read_text(required(&st.description, "circuit description")?)?;
    let solution: Option<SolutionText> = match (&st.solution, problem.category.is_synthesis()) {
        (Some(name), true) => Some(
            serde_json::from_str(&ws.read_text(name)?).map_err(|e| StageError::Fatal(format!("{name}: {e}")))?,
        ),
        _ => None,
    };
    let statement = problem.full_statement();
    let mut session = ChatSession::new(
        ctx.provider.clone(),
        ctx.temperatures.for_trial(n),
        format!("{}/sim{n}", problem.id),
    );
    let result = generate_netlist(
        &mut session,
        &ctx.catalog,
        &NetlistRequest {
            statement: &statement,
            description: &description,
            category: &problem.category,
            solution: solution.as_ref(),
            targets: &problem.targets,
        },
    );
    let mut arts = Vec::new();
    let transcript = persist(ws, st, &format!("transcript_sim{n}.json"), session.transcript_json().as_bytes(), &mut arts)?;
    let generated = result?;
    st.netlist = Some(persist(ws, st, &format!("netlist_sim{n}.cir"), generated.text().as_bytes(), &mut arts)?);
    st.netlist_transcript = Some(transcript);
    st.netlist_for = Some((st.llm_trial, st.sim_trial));
    st.lint_regenerated = false;
    let mut step = Step::to(Stage::Lint);
    step.artifacts = arts;
    Ok(step)
}

fn lint_stage(ctx: &PipelineContext, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let n = st.sim_trial;
    let text = ws.read_text(required(&st.netlist, "netlist")?)?;
    let analysis = if st.category.is_network_function() { Analysis::Ac } else { Analysis::Tran };
    let (findings, has_errors, report) = match parse_netlist(&text) {
        Ok(netlist) => {
            let r = lint_for(&netlist, analysis);
            (r.to_string(), r.has_errors(), r.to_json().into_bytes())
        }
        Err(e) => {
            let msg = format!("netlist does not parse: {e}");
            let report = pretty(&json!({ "parse_error": msg }));
            (msg, true, report)
        }
    };
    let mut arts = Vec::new();
    persist(ws, st, &format!("lint_sim{n}.json"), &report, &mut arts)?;
    if !has_errors {
        let mut step = Step::to(Stage::Simulate).detail("lint clean");
        step.artifacts = arts;
        return Ok(step);
    }
    let transcript = match (&st.netlist_transcript, st.lint_regenerated) {
        (Some(t), false) => t.clone(),
        _ => {
            let mut step = Step::to(Stage::Simulate).detail(format!("lint errors remain; simulating anyway: {}", findings.trim()));
            step.artifacts = arts;
            return Ok(step);
        }
    };
    let mut session = ChatSession::restore(ctx.provider.clone(), &ws.read_text(&transcript)?)?;
    let result = regenerate_after_lint(&mut session, &ctx.catalog, &findings);
    let t = persist(ws, st, &format!("transcript_sim{n}.json"), session.transcript_json().as_bytes(), &mut arts)?;
    let fixed = result?;
    st.netlist = Some(persist(ws, st, &format!("netlist_sim{n}.cir"), fixed.as_bytes(), &mut arts)?);
    st.netlist_transcript = Some(t);
    st.lint_regenerated = true;
    let mut step = Step::to(Stage::Lint).detail(format!("regenerated after lint errors: {}", findings.trim()));
    step.artifacts = arts;
    Ok(step)
}

fn simulate(ctx: &PipelineContext, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let n = st.sim_trial;
    let name = required(&st.netlist, "netlist")?.to_string();
    let path = ws
        .artifact_path(&name)
        .ok_or_else(|| StageError::Fatal(format!("bad netlist name {name}")))?;
    let outcome = {
        let _slot = ctx.sim_slots.acquire();
        ctx.simulator
            .run(&path, ctx.sim_timeout)
            .map_err(|e| StageError::Fatal(e.to_string()))?
    };
    let mut arts = Vec::new();
    persist(ws, st, &format!("sim_stdout_sim{n}.txt"), outcome.stdout.as_bytes(), &mut arts)?;
    let summary = match &outcome.status {
        SimStatus::Ok { warnings, .. } => json!({ "status": outcome.label(), "warnings": warnings, "stderr": outcome.stderr }),
        SimStatus::ExecFailure { exit_code, timed_out, errors } => json!({
            "status": outcome.label(), "exit_code": exit_code, "timed_out": timed_out, "errors": errors, "stderr": outcome.stderr
        }),
        SimStatus::NoData { diagnostics } => json!({ "status": outcome.label(), "diagnostics": diagnostics, "stderr": outcome.stderr }),
    };
    persist(ws, st, &format!("sim_outcome_sim{n}.json"), &pretty(&summary), &mut arts)?;
    if let Some(series) = outcome.series() {
        st.series = Some(persist(ws, st, &format!("series_sim{n}.json"), series_to_json(series).as_bytes(), &mut arts)?);
        st.series_for = Some((st.llm_trial, st.sim_trial));
        let mut step = Step::to(Stage::Compare).detail(format!("{} rows", series.len()));
        step.artifacts = arts;
        return Ok(step);
    }
    record(st, TrialOutcome::SimFailure, ctx.temperatures.for_trial(n));
    let detail = format!("simulation {}", outcome.label());
    if st.sim_trial < 2 {
        let mut step = Step::to(Stage::RetrySim).outcome(TrialOutcome::SimFailure).detail(detail);
        step.artifacts = arts;
        return Ok(step);
    }
    let mut step = escalate(ctx, ws, st, Trigger::SimFailureExhausted, arts)?;
    if step.to == Stage::AwaitReview {
        step.detail = format!("{detail}; {}", step.detail);
    }
    Ok(step)
}

fn compare_stage(ctx: &PipelineContext, problem: &Problem, ws: &Workspace, st: &mut PipelineState) -> StageResult {
    let series_name = required(&st.series, "series")?;
    let series = series_from_json(&ws.read_text(series_name)?)
        .map_err(|e| StageError::Fatal(format!("{series_name}: {e}")))?;
    let answers_name = required(&st.answers, "answers")?;
    let answers: Vec<ExtractedAnswer> = serde_json::from_str(&ws.read_text(answers_name)?)
        .map_err(|e| StageError::Fatal(format!("{answers_name}: {e}")))?;
    let policy = problem.tolerance.unwrap_or(ctx.tolerance);
    let v = verify_targets(&series, &answers, &problem.targets, &policy);
    let (sim_for, llm) = (st.series_for.map(|s| s.1).unwrap_or(st.sim_trial), st.llm_trial);
    let mut arts = Vec::new();
    st.comparison = Some(persist(ws, st, &format!("compare_llm{llm}_sim{sim_for}.json"), &pretty(&v), &mut arts)?);
    let temperature = ctx.temperatures.for_trial(llm);
    if v.outcome == Outcome::Match {
        record(st, TrialOutcome::Match, temperature);
        record(st, TrialOutcome::Accepted, temperature);
        st.matched_by = v.matched_by;
        let mut step = Step::to(Stage::Accepted)
            .outcome(TrialOutcome::Match)
            .detail(format!("matched by {:?}", v.matched_by.expect("match has provenance")));
        step.artifacts = arts;
        return Ok(step);
    }
    record(st, TrialOutcome::Mismatch, temperature);
    let detail = v
        .targets
        .iter()
        .filter(|t| t.outcome == Outcome::Mismatch)
        .map(|t| match &t.error {
            Some(e) => format!("{}: {e}", t.target),
            None => format!(
                "{}: max deviation {:.3e}",
                t.target,
                t.reports.iter().map(|r| r.max_deviation).fold(0.0, f64::max)
            ),
        })
        .collect::<Vec<_>>()
        .join("; ");
    let to = match (st.llm_trial, st.sim_trial) {
        (1, _) => Stage::RetryLLM,
        (2, 1) => Stage::RetrySim,
        (2, _) | (3, _) => {
            let mut step = escalate(ctx, ws, st, Trigger::PersistentMismatch, arts)?;
            step.outcome = Some(TrialOutcome::Mismatch);
            step.detail = format!("{detail}; {}", step.detail);
            return Ok(step);
        }
        _ => {
            let mut step = fail(st, ctx, format!("mismatch persists after solution feedback: {detail}"));
            step.artifacts = arts;
            return Ok(step);
        }
    };
    let mut step = Step::to(to).outcome(TrialOutcome::Mismatch).detail(detail);
    step.artifacts = arts;
    Ok(step)
}
