//! The staged conversations: recognition, solving, netlist generation and
//! answer extraction.

use serde::{Deserialize, Serialize};

use super::prompts::{ids, PromptCatalog};
use super::{normalize_gate, Attachment, ChatSession, LlmError, Message, Role};
use crate::compare::{parse_expression, AnswerExpression, AxisKind, Gate, Shape};
use crate::model::{
    Category, CircuitDescription, DetectionBox, Provenance, SourceKind, Target, TargetKind,
};

/// A detected source and its cropped image.
#[derive(Debug, Clone)]
pub struct Inset {
    pub bbox: DetectionBox,
    pub image: Attachment,
}

/// Supplies insets on demand, so detection only runs after a Yes gate.
pub trait InsetSource {
    fn insets(&self, kinds: &[SourceKind]) -> Result<Vec<Inset>, LlmError>;
}

impl InsetSource for [Inset] {
    fn insets(&self, kinds: &[SourceKind]) -> Result<Vec<Inset>, LlmError> {
        Ok(self.iter().filter(|i| kinds.contains(&i.bbox.kind)).cloned().collect())
    }
}

impl InsetSource for Vec<Inset> {
    fn insets(&self, kinds: &[SourceKind]) -> Result<Vec<Inset>, LlmError> {
        self.as_slice().insets(kinds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsetResult {
    pub bbox: DetectionBox,
    pub reply: String,
    /// The model said the inset is not the claimed kind; its reply does not
    /// override anything and the inset is flagged for review.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub v1: CircuitDescription,
    pub v2: CircuitDescription,
    pub independent_sources: bool,
    pub dependent_sources: bool,
    pub insets: Vec<InsetResult>,
}

impl Recognition {
    pub fn rejected_insets(&self) -> impl Iterator<Item = &InsetResult> {
        self.insets.iter().filter(|i| i.rejected)
    }
}

fn recognition_content(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::IndependentVoltage => "positive and negative terminals of this independent voltage source",
        SourceKind::IndependentCurrent => "current direction through this independent current source",
        SourceKind::Dependent => "polarity/direction of this dependent source",
    }
}

fn is_rejection(reply: &str) -> bool {
    let upper = reply.trim_start().to_ascii_uppercase();
    upper.starts_with("NOT A") || upper.contains("NOT TRULY")
}

fn gate(session: &mut ChatSession, catalog: &PromptCatalog, id: &str) -> Result<bool, LlmError> {
    let reply = session.send(catalog.render(id, &[])?)?;
    normalize_gate(&reply)
        .ok_or_else(|| session.protocol_error(format!("{id} expects Yes or No, got {reply:?}")))
}

/// Diagram input, components and nodes, labeled currents, the two source
/// gates, one turn per inset, then the summary. The summary is v2; the
/// component and current replies together are v1.
pub fn recognize_circuit(
    session: &mut ChatSession,
    catalog: &PromptCatalog,
    diagram: Attachment,
    detections: &dyn InsetSource,
) -> Result<Recognition, LlmError> {
    session.send_with_image(catalog.render(ids::C1_S1, &[])?, diagram)?;
    let components = session.send(catalog.render(ids::C1_S2, &[])?)?;
    let currents = session.send(catalog.render(ids::C1_S3, &[])?)?;
    let v1 = CircuitDescription {
        version: 1,
        text: format!("{}\n\n{}\n", components.trim(), currents.trim()),
        provenance: Provenance::InitialRecognition,
    };

    let independent = gate(session, catalog, ids::C1_S4)?;
    let dependent = gate(session, catalog, ids::C1_S5)?;

    let mut groups: Vec<&[SourceKind]> = Vec::new();
    if independent {
        groups.push(&[SourceKind::IndependentVoltage, SourceKind::IndependentCurrent]);
    }
    if dependent {
        groups.push(&[SourceKind::Dependent]);
    }
    let mut insets = Vec::new();
    for kinds in groups {
        let found = detections.insets(kinds)?;
        for &kind in kinds {
            let of_kind: Vec<&Inset> = found.iter().filter(|i| i.bbox.kind == kind).collect();
            let count = of_kind.len().to_string();
            for inset in of_kind {
                let prompt = catalog.render(
                    ids::C1_S6,
                    &[
                        ("NUM_COMPONENTS", &count),
                        ("TYPE_COMPONENT", kind.describe()),
                        ("BBOX_XYXY", &inset.bbox.xyxy()),
                        ("RECOGNITION_CONTENT", recognition_content(kind)),
                    ],
                )?;
                let reply = session.send_with_image(prompt, inset.image.clone())?;
                insets.push(InsetResult {
                    bbox: inset.bbox,
                    rejected: is_rejection(&reply),
                    reply,
                });
            }
        }
    }

    let summary = session.send(catalog.render(ids::C1_S7, &[])?)?;
    if summary.trim().is_empty() {
        return Err(session.protocol_error("empty recognition summary"));
    }
    Ok(Recognition {
        v1,
        v2: CircuitDescription {
            version: 2,
            text: format!("{}\n", summary.trim()),
            provenance: Provenance::PolarityCorrected,
        },
        independent_sources: independent,
        dependent_sources: dependent,
        insets,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionText {
    pub full: String,
    pub concise: String,
}

pub struct SolveRequest<'a> {
    pub statement: &'a str,
    /// `None` selects the statement-only prompt.
    pub description: Option<&'a str>,
    pub diagram: Option<&'a Attachment>,
    /// Earlier full solution and the reviewer's comments on it.
    pub feedback: Option<(&'a str, &'a str)>,
}

/// Full solution, then the concise final answer.
pub fn solve_problem(
    session: &mut ChatSession,
    catalog: &PromptCatalog,
    req: &SolveRequest<'_>,
) -> Result<SolutionText, LlmError> {
    let prompt = match req.description {
        Some(desc) => catalog.render(
            ids::C2_S1,
            &[("PROBLEM_STATEMENT", req.statement.trim()), ("CIRCUIT_INFORMATION", desc.trim())],
        )?,
        None => catalog.render(ids::C2_S1_NODIAGRAM, &[("PROBLEM_STATEMENT", req.statement.trim())])?,
    };
    let first = Message {
        role: Role::User,
        text: prompt,
        image: req.diagram.cloned(),
    };
    let full = match req.feedback {
        Some((previous, comments)) => {
            session.replay(first, previous);
            session.send(catalog.render(ids::FEEDBACK, &[("FEEDBACK", comments.trim())])?)?
        }
        None => match first.image {
            Some(img) => session.send_with_image(first.text, img)?,
            None => session.send(first.text)?,
        },
    };
    let concise = session.send(catalog.render(ids::C2_S2, &[])?)?;
    if concise.trim().is_empty() {
        return Err(session.protocol_error("empty final answer"));
    }
    Ok(SolutionText {
        full,
        concise: concise.trim().to_string(),
    })
}

pub struct NetlistRequest<'a> {
    pub statement: &'a str,
    pub description: &'a str,
    pub category: &'a Category,
    /// Needed for synthesis categories, where solved values are substituted.
    pub solution: Option<&'a SolutionText>,
    pub targets: &'a [Target],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedNetlist {
    /// Netlist after generation, format correction and verification.
    pub drafts: Vec<String>,
}

impl GeneratedNetlist {
    pub fn text(&self) -> &str {
        self.drafts.last().map(String::as_str).unwrap_or("")
    }
}

/// Whether the text calls for the switch and op-amp boilerplate.
pub fn mentions_advanced_modules(text: &str) -> bool {
    let lower = text.to_lowercase();
    ["switch", "op-amp", "op amp", "opamp", "operational amplifier"]
        .iter()
        .any(|k| lower.contains(k))
}

/// Column names the control block must print for `targets`.
pub fn target_variables(targets: &[Target]) -> String {
    let mut names = Vec::new();
    for t in targets {
        match t.kind {
            TargetKind::NetworkFunction => {
                names.push(format!("{} (magnitude)", t.magnitude_column()));
                if let Some(p) = &t.phase {
                    names.push(format!("{p} (phase in degrees)"));
                }
            }
            _ => names.push(t.name.clone()),
        }
    }
    names.join(", ")
}

/// Body of the last fenced code block, or the whole reply without fences.
pub fn extract_code(reply: &str) -> String {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in reply.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    let body = blocks
        .iter()
        .rev()
        .find(|b| b.to_ascii_lowercase().contains(".end"))
        .or(blocks.last())
        .cloned()
        .unwrap_or_else(|| reply.to_string());
    format!("{}\n", body.trim())
}

/// Initial generation, format correction, accuracy verification.
pub fn generate_netlist(
    session: &mut ChatSession,
    catalog: &PromptCatalog,
    req: &NetlistRequest<'_>,
) -> Result<GeneratedNetlist, LlmError> {
    if !req.category.is_simulable() {
        return Err(session.protocol_error(format!(
            "category {} is not simulable",
            req.category.slug()
        )));
    }
    let advanced = if mentions_advanced_modules(req.description) || mentions_advanced_modules(req.statement) {
        format!("{}\n\n", catalog.render(ids::ADVANCED_MODULES, &[])?)
    } else {
        String::new()
    };
    let control = if req.category.is_network_function() {
        catalog.render(ids::CONTROL_AC, &[])?
    } else {
        catalog.render(ids::CONTROL_TRAN, &[])?
    };
    let notes = catalog.render(
        ids::C3_NOTES,
        &[
            ("ADVANCED_MODULES", &advanced),
            ("CONTROL_TEMPLATE", &control),
            ("TARGET_VARIABLES", &target_variables(req.targets)),
        ],
    )?;
    let solution = req
        .solution
        .map(|s| s.concise.clone())
        .unwrap_or_else(|| "(none)".to_string());
    let id = if req.category.is_network_function() {
        ids::C3_S1_NETFN
    } else if req.category.is_synthesis() {
        ids::C3_S1_SYNTH
    } else {
        ids::C3_S1
    };
    let first = catalog.render(
        id,
        &[
            ("CIRCUIT_INFORMATION", req.description.trim()),
            ("PROBLEM_STATEMENT", req.statement.trim()),
            ("SOLUTION", &solution),
            ("GENERATION_NOTES", &notes),
        ],
    )?;
    let mut drafts = vec![extract_code(&session.send(first)?)];
    drafts.push(extract_code(&session.send(catalog.render(ids::C3_S2, &[])?)?));
    drafts.push(extract_code(&session.send(catalog.render(ids::C3_S3, &[])?)?));
    Ok(GeneratedNetlist { drafts })
}

/// Feeds lint findings (or a parse error) back and returns the corrected
/// netlist.
pub fn regenerate_after_lint(
    session: &mut ChatSession,
    catalog: &PromptCatalog,
    findings: &str,
) -> Result<String, LlmError> {
    let reply = session.send(catalog.render(ids::C3_LINT, &[("LINT_FINDINGS", findings.trim())])?)?;
    Ok(extract_code(&reply))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub target: String,
    pub text: String,
    pub expression: AnswerExpression,
}

fn kind_hint(kind: TargetKind) -> &'static str {
    match kind {
        TargetKind::TimeSeries => "time-domain expression in t",
        TargetKind::Scalar => "constant",
        TargetKind::NetworkFunction => "network function of s",
    }
}

fn check_kind(target: &Target, expr: &AnswerExpression) -> Result<(), String> {
    match (target.kind, expr) {
        (TargetKind::NetworkFunction, AnswerExpression::Rational { .. }) => Ok(()),
        (TargetKind::NetworkFunction, _) => Err("expected a network function `H = (...) / (...)` in s".into()),
        (_, AnswerExpression::Rational { .. }) => Err("expected an expression in t, not a function of s".into()),
        (TargetKind::Scalar, AnswerExpression::TermSum { terms }) => {
            if terms.iter().all(|t| t.shape == Shape::Const && t.gate == Gate::None) {
                Ok(())
            } else {
                Err("expected a constant".into())
            }
        }
        (TargetKind::TimeSeries, e) => {
            debug_assert_eq!(e.axis_kind(), AxisKind::Time);
            Ok(())
        }
    }
}

fn clean_line(line: &str) -> &str {
    let l = line.trim();
    let l = l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")).unwrap_or(l);
    l.trim().trim_matches('`').trim()
}

fn label_matches(label: &str, name: &str) -> bool {
    let l = clean_line(label).trim_matches('*').trim();
    let l = ["(t)", "(s)", "(jw)", "(jω)"]
        .iter()
        .find_map(|suffix| l.strip_suffix(suffix))
        .unwrap_or(l)
        .trim();
    l.eq_ignore_ascii_case(name)
}

/// One result per target: the expression, or the reason it is missing or
/// malformed.
pub fn parse_extraction(reply: &str, targets: &[Target]) -> Vec<Result<ExtractedAnswer, String>> {
    let lines: Vec<&str> = reply
        .lines()
        .map(clean_line)
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .collect();
    targets
        .iter()
        .map(|target| {
            let labeled = lines.iter().find_map(|l| {
                let (label, rest) = l.split_once(':')?;
                label_matches(label, &target.name).then_some(rest.trim())
            });
            let text = match labeled {
                Some(t) => t,
                None if targets.len() == 1 && lines.len() == 1 => lines[0],
                None => return Err(format!("no line of the form `{}: <expression>`", target.name)),
            };
            let text = text.trim_matches('`').trim();
            let expression = parse_expression(text).map_err(|e| e.to_string())?;
            check_kind(target, &expression)?;
            Ok(ExtractedAnswer {
                target: target.name.clone(),
                text: text.to_string(),
                expression,
            })
        })
        .collect()
}

/// Asks for every target in the closed grammar; each target that fails to
/// parse gets one reprompt carrying the grammar error.
pub fn extract_answer_expression(
    session: &mut ChatSession,
    catalog: &PromptCatalog,
    solution: &SolutionText,
    targets: &[Target],
) -> Result<Vec<ExtractedAnswer>, LlmError> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let list = targets
        .iter()
        .map(|t| format!("- {} ({})", t.name, kind_hint(t.kind)))
        .collect::<Vec<_>>()
        .join("\n");
    let reply = session.send(catalog.render(
        ids::EXTRACT,
        &[
            ("SOLUTION", solution.full.trim()),
            ("CONCISE_ANSWER", solution.concise.trim()),
            ("TARGET_LIST", &list),
        ],
    )?)?;
    let first = parse_extraction(&reply, targets);
    let mut out = Vec::with_capacity(targets.len());
    for (target, result) in targets.iter().zip(first) {
        let answer = match result {
            Ok(a) => a,
            Err(message) => {
                let retry = session.send(catalog.render(
                    ids::EXTRACT_RETRY,
                    &[("TARGET_NAME", &target.name), ("GRAMMAR_ERROR", &message)],
                )?)?;
                parse_extraction(&retry, std::slice::from_ref(target))
                    .pop()
                    .expect("one result per target")
                    .map_err(|message| LlmError::Extraction {
                        target: target.name.clone(),
                        message,
                    })?
            }
        };
        out.push(answer);
    }
    Ok(out)
}
