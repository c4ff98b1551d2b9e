mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use common::scenario::{self, Kind, Spec, CORRECTED};
use verispice::llm::{ChatProvider, RecordingProvider, ReplayProvider, ScriptRule};
use verispice::model::{TrialOutcome, Workspace};
use verispice::pipeline::{
    batch_run, report, resolve_ticket, run_problem, BatchOptions, Event, PipelineContext,
    PipelineError, PipelineState, Resolution, Stage, Trigger, SUMMARY_FILE,
};

fn run_one(root: &Path, spec: Spec) -> (Workspace, PipelineState, PipelineContext) {
    let specs = [spec];
    let problem = scenario::write_problems(&root.join("in"), &specs).pop().unwrap();
    let ctx = scenario::context(&specs);
    let ws = Workspace::open(root.join("out").join(&problem.id)).unwrap();
    let st = run_problem(&ctx, &problem, &ws).unwrap();
    (ws, st, ctx)
}

fn events(ws: &Workspace) -> Vec<Event> {
    ws.events().unwrap()
}

fn path(ws: &Workspace) -> Vec<(Stage, Stage)> {
    events(ws).iter().map(|e| (e.from, e.to)).collect()
}

fn outcomes(ws: &Workspace, want: TrialOutcome) -> Vec<(u8, u8)> {
    events(ws)
        .iter()
        .filter(|e| e.outcome == Some(want))
        .map(|e| (e.llm_trial, e.sim_trial))
        .collect()
}

fn rerun(ctx: &PipelineContext, ws: &Workspace) -> PipelineState {
    let problem = verispice::pipeline::workspace_problem(ws).unwrap();
    run_problem(ctx, &problem, ws).unwrap()
}

#[test]
fn first_trial_match_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("p1", Some(1)));
    assert_eq!(st.stage, Stage::Accepted, "{:?}", st.failure);
    assert_eq!((st.llm_trial, st.sim_trial), (1, 1));
    use Stage::*;
    assert_eq!(
        path(&ws),
        [
            (Ingest, Recognize),
            (Recognize, SolveLLM),
            (SolveLLM, GenNetlist),
            (GenNetlist, Lint),
            (Lint, Simulate),
            (Simulate, Compare),
            (Compare, Accepted),
        ]
    );
    for name in ["desc_v1.txt", "desc_v2.txt", "solution_llm1.json", "answers_llm1.json", "netlist_sim1.cir", "series_sim1.json", "compare_llm1_sim1.json"] {
        assert!(ws.artifact_path(name).unwrap().is_file(), "{name}");
    }
    assert_eq!(st.seq, 7);
}

#[test]
fn scenario_a_trial_two_recovers_without_ticket() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pa", Some(2)));
    assert_eq!(st.stage, Stage::Accepted);
    assert_eq!((st.llm_trial, st.sim_trial), (2, 1));
    assert!(st.tickets.is_empty());
    assert_eq!(outcomes(&ws, TrialOutcome::Mismatch), [(1, 1)]);
    assert_eq!(outcomes(&ws, TrialOutcome::Match), [(2, 1)]);
    let p = path(&ws);
    assert!(p.contains(&(Stage::Compare, Stage::RetryLLM)));
    assert!(p.contains(&(Stage::SolveLLM, Stage::Compare)), "trial 2 reuses the trial-1 series");
    let temps: Vec<f64> = st.records.iter().map(|r| r.temperature).collect();
    assert_eq!(temps, [0.0, 0.2, 0.2]);
}

#[test]
fn scenario_b_three_mismatches_open_one_ticket() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pb", None));
    assert_eq!(st.stage, Stage::AwaitReview);
    assert_eq!(outcomes(&ws, TrialOutcome::Mismatch), [(1, 1), (2, 1), (2, 2)]);
    assert_eq!(st.tickets.len(), 1);
    let t = &st.tickets[0];
    assert_eq!(t.trigger, Trigger::PersistentMismatch);
    assert_eq!(t.id, "pb-r1");
    assert!(t.artifacts.iter().any(|a| a == "desc_v2.txt"));
    assert!(t.artifacts.iter().any(|a| a == "compare_llm2_sim2.json"));
    let to_review: Vec<_> = events(&ws).into_iter().filter(|e| e.to == Stage::AwaitReview).collect();
    assert_eq!(to_review.len(), 1);
    assert_eq!(to_review[0].outcome, Some(TrialOutcome::Mismatch));
    let seq = st.seq;
    let again = rerun(&scenario::context(&[Spec::new("pb", None)]), &ws);
    assert_eq!(again.seq, seq, "a waiting problem does not advance on rerun");
}

#[test]
fn scenario_c_circuit_correction_schedules_trial_three() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pc", Some(3)));
    assert_eq!(st.stage, Stage::AwaitReview);
    let ticket = st.tickets[0].id.clone();

    let corrected = format!("{CORRECTED}: V1 10 V, + at node 1. R1 8 kOhm 1-2. C1 10 uF 2-0.");
    let st = resolve_ticket(&ws, &ticket, Resolution::CircuitCorrection(corrected.clone())).unwrap();
    assert_eq!(st.stage, Stage::SolveLLM);
    assert_eq!((st.llm_trial, st.sim_trial), (3, 3));
    assert_eq!(st.description.as_deref(), Some("desc_v3.txt"));
    assert_eq!(ws.read_text("desc_v3.txt").unwrap().trim(), corrected);

    let st = rerun(&scenario::context(&[Spec::new("pc", Some(3))]), &ws);
    assert_eq!(st.stage, Stage::Accepted, "{:?}", st.failure);
    assert_eq!((st.llm_trial, st.sim_trial), (3, 3));
    assert_eq!(outcomes(&ws, TrialOutcome::Match), [(3, 3)]);
    let ev = events(&ws);
    let resumed = ev.iter().position(|e| e.from == Stage::AwaitReview).unwrap();
    assert!(ev[resumed..].iter().all(|e| e.to != Stage::Recognize), "recognition is skipped");
    assert_eq!(ev[resumed].to, Stage::SolveLLM);
    assert!(ev[resumed + 1..].iter().any(|e| e.to == Stage::GenNetlist && e.sim_trial == 3));
    let closed = &st.tickets[0];
    assert!(matches!(closed.resolution, Some(Resolution::CircuitCorrection(_))));

    let err = resolve_ticket(&ws, &ticket, Resolution::Reject).unwrap_err();
    assert!(matches!(err, PipelineError::State(_)), "{err}");
}

#[test]
fn solution_feedback_runs_trial_four() {
    let dir = tempfile::tempdir().unwrap();
    let spec = Spec::new("pf", Some(4));
    let (ws, st, ctx) = run_one(dir.path(), spec.clone());
    let fix = format!("{CORRECTED}: same circuit.");
    resolve_ticket(&ws, &st.tickets[0].id, Resolution::CircuitCorrection(fix)).unwrap();
    let st = rerun(&ctx, &ws);
    assert_eq!(st.stage, Stage::AwaitReview);
    assert_eq!(st.tickets.len(), 2);
    let second = st.tickets[1].clone();
    assert_eq!(second.trigger, Trigger::PersistentMismatch);
    assert_eq!(second.llm_trial, 3);

    let err = resolve_ticket(&ws, &second.id, Resolution::CircuitCorrection("again".into())).unwrap_err();
    assert!(matches!(err, PipelineError::Invalid(_)), "{err}");
    let err = resolve_ticket(&ws, &second.id, Resolution::Accept).unwrap_err();
    assert!(matches!(err, PipelineError::Invalid(_)), "{err}");

    let st = resolve_ticket(&ws, &second.id, Resolution::SolutionFeedback("The final value is 10 V, not 9 V.".into())).unwrap();
    assert_eq!((st.stage, st.llm_trial), (Stage::SolveLLM, 4));
    let st = rerun(&ctx, &ws);
    assert_eq!(st.stage, Stage::Accepted, "{:?}", st.failure);
    assert_eq!((st.llm_trial, st.sim_trial), (4, 3));
    let transcript = ws.read_text("transcript_llm4.json").unwrap();
    assert!(transcript.contains("The final value is 10 V"));
    assert!(transcript.contains("SOLUTION pf-3:"), "previous solution is replayed");
    assert_eq!(outcomes(&ws, TrialOutcome::Match), [(4, 3)]);
}

#[test]
fn exhausted_after_feedback_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, ctx) = run_one(dir.path(), Spec::new("px", None));
    resolve_ticket(&ws, &st.tickets[0].id, Resolution::CircuitCorrection(format!("{CORRECTED}."))).unwrap();
    let st = rerun(&ctx, &ws);
    resolve_ticket(&ws, &st.tickets[1].id, Resolution::SolutionFeedback("check the sign".into())).unwrap();
    let st = rerun(&ctx, &ws);
    assert_eq!(st.stage, Stage::Failed);
    assert!(st.failure.as_ref().unwrap().contains("mismatch persists"));
    assert_eq!(st.tickets.len(), 2);
    assert_eq!(outcomes(&ws, TrialOutcome::Mismatch), [(1, 1), (2, 1), (2, 2), (3, 3)]);
    assert_eq!(outcomes(&ws, TrialOutcome::Failed), [(4, 3)]);
    let recorded: Vec<_> = st.records.iter().filter(|r| r.outcome == TrialOutcome::Mismatch).map(|r| (r.llm_trial, r.sim_trial)).collect();
    assert_eq!(recorded, [(1, 1), (2, 1), (2, 2), (3, 3), (4, 3)]);
}

#[test]
fn lint_error_gets_one_regeneration_before_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pl", Some(1)).lint_error());
    assert_eq!(st.stage, Stage::Accepted, "{:?}", st.failure);
    let ev = events(&ws);
    let stages: Vec<(Stage, Stage, u8)> = ev.iter().map(|e| (e.from, e.to, e.sim_trial)).collect();
    let gen = stages.iter().position(|s| s.1 == Stage::Lint).unwrap();
    assert_eq!(
        &stages[gen..gen + 4],
        [
            (Stage::GenNetlist, Stage::Lint, 1),
            (Stage::Lint, Stage::Lint, 1),
            (Stage::Lint, Stage::Simulate, 1),
            (Stage::Simulate, Stage::Compare, 1),
        ]
    );
    assert!(ev[gen + 1].detail.contains("NODE_NAME_LEN"));
    assert_eq!(st.netlist.as_deref(), Some("netlist_sim1~2.cir"));
    assert!(!ws.read_text("netlist_sim1~2.cir").unwrap().contains("1 out"));
    assert!(ws.read_text("netlist_sim1.cir").unwrap().contains("R1 1 out 8k"));
    let lint1 = ws.read_text("lint_sim1.json").unwrap();
    assert!(lint1.contains("NODE_NAME_LEN"));
}

#[test]
fn sim_failure_consumes_a_sim_trial() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("ps", Some(1)).sim_fail(1));
    assert_eq!(st.stage, Stage::Accepted, "{:?}", st.failure);
    assert_eq!((st.llm_trial, st.sim_trial), (1, 2));
    assert_eq!(outcomes(&ws, TrialOutcome::SimFailure), [(1, 1)]);
    assert!(path(&ws).contains(&(Stage::Simulate, Stage::RetrySim)));
    let outcome = ws.read_text("sim_outcome_sim1.json").unwrap();
    assert!(outcome.contains("exec-failure") && outcome.contains("unknown subckt"));
}

#[test]
fn repeated_sim_failure_opens_ticket() {
    let dir = tempfile::tempdir().unwrap();
    let (_, st, _) = run_one(dir.path(), Spec::new("pq", Some(1)).sim_fail(1).sim_fail(2));
    assert_eq!(st.stage, Stage::AwaitReview);
    assert_eq!(st.tickets[0].trigger, Trigger::SimFailureExhausted);
}

#[test]
fn no_diagram_needs_sign_off() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pn", Some(1)).kind(Kind::NoDiagram));
    assert_eq!(st.stage, Stage::AwaitReview);
    assert_eq!(path(&ws)[..2], [(Stage::Ingest, Stage::SolveLLM), (Stage::SolveLLM, Stage::AwaitReview)]);
    let t = &st.tickets[0];
    assert_eq!(t.trigger, Trigger::NotSimulable);
    let err = resolve_ticket(&ws, &t.id, Resolution::CircuitCorrection("x".into())).unwrap_err();
    assert!(matches!(err, PipelineError::Invalid(_)));
    let st = resolve_ticket(&ws, &t.id, Resolution::Accept).unwrap();
    assert_eq!(st.stage, Stage::Accepted);
    assert!(st.signed_off && st.solution.is_some());
    assert_eq!(st.accepted_tier(), None);
    let err = resolve_ticket(&ws, &t.id, Resolution::Accept).unwrap_err();
    assert!(matches!(err, PipelineError::State(_)));
}

#[test]
fn not_simulable_is_recognized_then_reviewed() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pv", Some(1)).kind(Kind::NotSimulable));
    assert_eq!(st.stage, Stage::AwaitReview);
    assert!(path(&ws).contains(&(Stage::Recognize, Stage::SolveLLM)));
    let st = resolve_ticket(&ws, &st.tickets[0].id, Resolution::Reject).unwrap();
    assert_eq!(st.stage, Stage::Failed);
}

#[test]
fn unparseable_answer_opens_extraction_ticket() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pe", Some(1)).bad_extraction());
    assert_eq!(st.stage, Stage::AwaitReview);
    assert_eq!(st.tickets[0].trigger, Trigger::ExtractionError);
    assert!(ws.read_text("extraction_error_llm1.txt").unwrap().contains("vout"));
}

#[test]
fn provider_error_fails_with_cause() {
    let dir = tempfile::tempdir().unwrap();
    let problem = scenario::write_problems(dir.path(), &[Spec::new("orphan", Some(1))]).pop().unwrap();
    let ctx = scenario::context(&[]);
    let ws = Workspace::open(dir.path().join("out/orphan")).unwrap();
    let st = run_problem(&ctx, &problem, &ws).unwrap();
    assert_eq!(st.stage, Stage::Failed);
    let cause = st.failure.unwrap();
    assert!(cause.contains("orphan/llm1") && cause.contains("no scripted reply"), "{cause}");
}

#[test]
fn dependent_source_inset_is_sent_and_stored() {
    let dir = tempfile::tempdir().unwrap();
    let specs = [Spec::new("pd", Some(1)).dependent()];
    let problem = scenario::write_problems(&dir.path().join("in"), &specs).pop().unwrap();
    let mut provider = scenario::provider(&specs);
    provider.rules.insert(0, ScriptRule::new("at least one DEPENDENT source", "Yes"));
    let ctx = PipelineContext::new(Arc::new(provider), Arc::new(scenario::simulator(&specs)));
    let ws = Workspace::open(dir.path().join("out/pd")).unwrap();
    let st = run_problem(&ctx, &problem, &ws).unwrap();
    assert_eq!(st.stage, Stage::Accepted, "{:?}", st.failure);
    let rec = ws.read_text("recognition.json").unwrap();
    assert!(ws.artifact_path("inset_dependent_1.png").unwrap().is_file(), "{rec}");
    assert!(rec.contains("Dependent"), "{rec}");
    assert!(!rec.contains("no external detector configured"));
    let transcript = ws.read_text("transcript_recognize.json").unwrap();
    assert!(transcript.contains("inset_dependent_1.png"));
}

#[test]
fn concurrent_resolutions_exactly_one_wins() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, st, _) = run_one(dir.path(), Spec::new("pz", None));
    let id = st.tickets[0].id.clone();
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let ws = ws.clone();
                let id = id.clone();
                s.spawn(move || resolve_ticket(&ws, &id, Resolution::CircuitCorrection(format!("{CORRECTED} {i}"))))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().filter_map(|r| r.as_ref().err()).all(|e| matches!(e, PipelineError::State(_))));
    let st = PipelineState::load(&ws).unwrap().unwrap();
    assert_eq!(st.description_version, 3);
    assert_eq!(st.seq, events(&ws).len() as u64);
}

fn batch_specs() -> Vec<Spec> {
    vec![
        Spec::new("b1", Some(1)),
        Spec::new("b2", Some(1)),
        Spec::new("b3", Some(1)),
        Spec::new("b4", Some(2)),
        Spec::new("b5", None),
    ]
}

#[test]
fn batch_summary_counts_cumulative_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let specs = batch_specs();
    let problems = scenario::write_problems(&dir.path().join("in"), &specs);
    let ctx = scenario::context(&specs);
    let out = dir.path().join("out");
    let s = batch_run(&ctx, &problems, &out, BatchOptions { parallel: 3, resume: false }).unwrap();
    assert_eq!((s.problems, s.t1, s.t2, s.t3, s.t4, s.tickets), (5, 3, 4, 4, 4, 1));
    assert_eq!(s.awaiting_review, 1);
    assert_eq!(s.reasons, BTreeMap::from([("PersistentMismatch".to_string(), 1)]));
    assert_eq!(s.steps, BTreeMap::from([("llm1/sim1".to_string(), 3), ("llm2/sim1".to_string(), 1)]));
    let on_disk: verispice::pipeline::Summary = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, s);
    assert_eq!(report(&out).unwrap(), s);
    assert!(s.render().contains("2nd trial"));

    let err = batch_run(&ctx, &problems, &out, BatchOptions { parallel: 3, resume: false }).unwrap_err();
    assert!(matches!(err, PipelineError::State(_)));

    let before: Vec<u64> = problems
        .iter()
        .map(|p| PipelineState::load(&Workspace { root: out.join(&p.id) }).unwrap().unwrap().seq)
        .collect();
    let again = batch_run(&ctx, &problems, &out, BatchOptions { parallel: 2, resume: true }).unwrap();
    assert_eq!(again, s);
    let after: Vec<u64> = problems
        .iter()
        .map(|p| PipelineState::load(&Workspace { root: out.join(&p.id) }).unwrap().unwrap().seq)
        .collect();
    assert_eq!(before, after, "resume leaves settled problems untouched");
}

#[test]
fn empty_batch_is_all_zeros_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let s = batch_run(&scenario::context(&[]), &[], dir.path(), BatchOptions::default()).unwrap();
    assert_eq!((s.problems, s.t1, s.t4, s.tickets), (0, 0, 0, 0));
    assert_eq!(s.warnings, ["no problems to run"]);
}

fn artifact_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for problem in fs::read_dir(root).unwrap().flatten().filter(|e| e.path().is_dir()) {
        for f in fs::read_dir(problem.path().join("artifacts")).unwrap().flatten() {
            let key = format!("{}/{}", problem.file_name().to_string_lossy(), f.file_name().to_string_lossy());
            out.insert(key, fs::read(f.path()).unwrap());
        }
    }
    out
}

#[test]
fn replayed_run_reproduces_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let specs = batch_specs();
    let problems = scenario::write_problems(&dir.path().join("in"), &specs);
    let transcript = dir.path().join("rec.jsonl");
    let scripted: Arc<dyn ChatProvider> = Arc::new(scenario::provider(&specs));
    let recording = PipelineContext::new(
        Arc::new(RecordingProvider::new(scripted, &transcript)),
        Arc::new(scenario::simulator(&specs)),
    );
    let first = batch_run(&recording, &problems, &dir.path().join("a"), BatchOptions { parallel: 4, resume: false }).unwrap();
    let replay = PipelineContext::new(
        Arc::new(ReplayProvider::from_file(&transcript).unwrap()),
        Arc::new(scenario::simulator(&specs)),
    );
    let second = batch_run(&replay, &problems, &dir.path().join("b"), BatchOptions { parallel: 1, resume: false }).unwrap();
    assert_eq!(first, second);
    let a = artifact_bytes(&dir.path().join("a"));
    assert!(a.len() > 40);
    assert_eq!(a, artifact_bytes(&dir.path().join("b")));
}
