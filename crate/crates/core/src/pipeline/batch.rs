//! Batch runs and the cumulative per-trial summary.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_problem, PipelineContext, PipelineError, PipelineState, Stage};
use crate::model::{write_atomic, ModelError, Problem, Workspace, STATE_FILE};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub parallel: usize,
    /// Continue problems that already have a workspace; otherwise such a
    /// problem is an error.
    pub resume: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            parallel: 4,
            resume: false,
        }
    }
}

/// Cumulative acceptance counts per trial tier plus review statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problems: usize,
    /// Problems accepted by simulator match at or before each tier.
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub t4: usize,
    pub accepted: usize,
    pub signed_off: usize,
    pub awaiting_review: usize,
    pub in_progress: usize,
    pub failed: usize,
    pub tickets: usize,
    pub open_tickets: usize,
    pub tail_only_matches: usize,
    /// Ticket triggers.
    pub reasons: BTreeMap<String, usize>,
    /// Matches by `llm<i>/sim<j>` trial pair.
    pub steps: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn from_states(states: &[PipelineState]) -> Self {
        let mut s = Summary {
            problems: states.len(),
            ..Summary::default()
        };
        if states.is_empty() {
            s.warnings.push("no problems to run".into());
        }
        for st in states {
            match st.stage {
                Stage::Accepted if st.signed_off => s.signed_off += 1,
                Stage::Accepted => s.accepted += 1,
                Stage::AwaitReview => s.awaiting_review += 1,
                Stage::Failed => s.failed += 1,
                _ => s.in_progress += 1,
            }
            if let Some(tier) = st.accepted_tier() {
                for (t, count) in [&mut s.t1, &mut s.t2, &mut s.t3, &mut s.t4].into_iter().enumerate() {
                    if tier as usize <= t + 1 {
                        *count += 1;
                    }
                }
                *s.steps.entry(format!("llm{}/sim{}", st.llm_trial, st.sim_trial)).or_default() += 1;
                if st.matched_by == Some(crate::compare::MatchedBy::TailOnly) {
                    s.tail_only_matches += 1;
                }
            }
            for t in &st.tickets {
                s.tickets += 1;
                if t.resolution.is_none() {
                    s.open_tickets += 1;
                }
                *s.reasons.entry(format!("{:?}", t.trigger)).or_default() += 1;
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Plain-text table: cumulative correct counts and ratios per tier.
    pub fn render(&self) -> String {
        let ratio = |n: usize| {
            if self.problems == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.problems as f64
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<34}{:>8}{:>12}", "", "count", "cumulative");
        for (label, n) in [
            ("1st trial", self.t1),
            ("2nd trial", self.t2),
            ("3rd trial (circuit proofread)", self.t3),
            ("4th trial (solution feedback)", self.t4),
        ] {
            let _ = writeln!(out, "{label:<34}{n:>8}{:>11.1}%", ratio(n));
        }
        let _ = writeln!(out, "{:<34}{:>8}", "problems", self.problems);
        let _ = writeln!(out, "{:<34}{:>8}", "signed off (not simulated)", self.signed_off);
        let _ = writeln!(out, "{:<34}{:>8}", "awaiting review", self.awaiting_review);
        let _ = writeln!(out, "{:<34}{:>8}", "failed", self.failed);
        if self.in_progress > 0 {
            let _ = writeln!(out, "{:<34}{:>8}", "in progress", self.in_progress);
        }
        let _ = writeln!(out, "{:<34}{:>8}", "review tickets", self.tickets);
        for (reason, n) in &self.reasons {
            let _ = writeln!(out, "  {reason:<32}{n:>8}");
        }
        if self.tail_only_matches > 0 {
            let _ = writeln!(out, "{:<34}{:>8}", "matches on tail window only", self.tail_only_matches);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// States of every problem workspace under `root`, sorted by directory.
pub fn load_states(root: &Path) -> Result<Vec<PipelineState>, PipelineError> {
    let mut dirs: Vec<_> = match fs::read_dir(root) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.join(STATE_FILE).is_file())
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(ModelError::from(e).into()),
    };
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        if let Some(st) = PipelineState::load(&Workspace { root: dir })? {
            out.push(st);
        }
    }
    Ok(out)
}

/// Summary of whatever is on disk under `root`.
pub fn report(root: &Path) -> Result<Summary, PipelineError> {
    Ok(Summary::from_states(&load_states(root)?))
}

/// Runs every problem to a resting state with up to `parallel` workers,
/// one workspace per problem under `root`, and writes `summary.json`.
/// Problems already accepted or failed are left as they are.
pub fn batch_run(ctx: &PipelineContext, problems: &[Problem], root: &Path, opts: BatchOptions) -> Result<Summary, PipelineError> {
    let mut seen = HashSet::new();
    for p in problems {
        if !seen.insert(p.id.as_str()) {
            return Err(PipelineError::Config(format!("duplicate problem id `{}`", p.id)));
        }
        if !opts.resume && root.join(&p.id).join(STATE_FILE).exists() {
            return Err(PipelineError::State(format!(
                "{} already has a workspace; resume to continue it",
                p.id
            )));
        }
    }
    fs::create_dir_all(root).map_err(ModelError::from)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<(String, Result<PipelineState, PipelineError>)> = pool.install(|| {
        problems
            .par_iter()
            .map(|p| {
                let r = Workspace::open(root.join(&p.id))
                    .map_err(PipelineError::from)
                    .and_then(|ws| run_problem(ctx, p, &ws));
                (p.id.clone(), r)
            })
            .collect()
    });
    let mut states = Vec::new();
    let mut warnings = Vec::new();
    for (id, r) in results {
        match r {
            Ok(st) => states.push(st),
            Err(e) => warnings.push(format!("{id}: {e}")),
        }
    }
    let mut summary = Summary::from_states(&states);
    summary.problems += warnings.len();
    summary.warnings.extend(warnings);
    write_atomic(&root.join(SUMMARY_FILE), summary.to_json().as_bytes()).map_err(ModelError::from)?;
    Ok(summary)
}
