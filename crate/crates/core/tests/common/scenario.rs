//! Scripted problems for the state-machine scenarios: problem directories,
//! provider rules and simulator rules, all keyed by a `[P:<id>]` tag.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use verispice::compare::AxisKind;
use verispice::llm::{ScriptRule, ScriptedProvider};
use verispice::model::{load_problem, Problem};
use verispice::pipeline::PipelineContext;
use verispice::sim::{render_table, ScriptedSimulator, SimRule, SimulationSeries};

use super::synth::{rhombus, Canvas};

pub const TRUE_ANSWER: &str = "10 - 5*exp(-12.5*t)";
pub const WRONG_ANSWER: &str = "9 - 5*exp(-12.5*t)";
/// Marker a reviewer's circuit correction carries into later prompts.
pub const CORRECTED: &str = "HUMAN-CORRECTED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Simulable,
    NoDiagram,
    NotSimulable,
}

#[derive(Debug, Clone)]
pub struct Spec {
    pub id: String,
    pub kind: Kind,
    /// First LLM trial whose answer is right; `None` for never.
    pub correct_from: Option<u8>,
    /// Trial-1 netlist breaks a lint rule until the lint turn fixes it.
    pub lint_error: bool,
    /// Simulation trials whose netlist fails to run.
    pub sim_fail: Vec<u8>,
    pub sim_delay_ms: u64,
    /// Draw a dependent source in the diagram.
    pub dependent: bool,
    /// Extraction never yields a parseable line.
    pub bad_extraction: bool,
}

impl Spec {
    pub fn new(id: &str, correct_from: Option<u8>) -> Self {
        Spec {
            id: id.into(),
            kind: Kind::Simulable,
            correct_from,
            lint_error: false,
            sim_fail: Vec::new(),
            sim_delay_ms: 0,
            dependent: false,
            bad_extraction: false,
        }
    }

    pub fn kind(mut self, kind: Kind) -> Self {
        self.kind = kind;
        self
    }

    pub fn lint_error(mut self) -> Self {
        self.lint_error = true;
        self
    }

    pub fn sim_fail(mut self, trial: u8) -> Self {
        self.sim_fail.push(trial);
        self
    }

    pub fn delay(mut self, ms: u64) -> Self {
        self.sim_delay_ms = ms;
        self
    }

    pub fn dependent(mut self) -> Self {
        self.dependent = true;
        self
    }

    pub fn bad_extraction(mut self) -> Self {
        self.bad_extraction = true;
        self
    }

    pub fn tag(&self) -> String {
        format!("[P:{}]", self.id)
    }

    fn answer(&self, trial: u8) -> &'static str {
        match self.correct_from {
            Some(k) if trial >= k => TRUE_ANSWER,
            _ => WRONG_ANSWER,
        }
    }
}

pub fn netlist(id: &str, sim: u8, lint_error: bool) -> String {
    let node = if lint_error { "out" } else { "2" };
    format!(
        "* NETLIST {id} s{sim}\n.PARAM pi = 3.141592653589793\nV1 1 0 10\nR1 1 {node} 8k\nC1 {node} 0 10u\n.control\ntran 5e-3 0.5\nlet vout = v({node})\nprint vout\nplot vout\n.endc\n.end"
    )
}

fn fenced(body: &str) -> String {
    format!("```\n{body}\n```")
}

pub fn diagram(dependent: bool) -> Vec<u8> {
    let mut c = Canvas::new(400, 300);
    c.polyline(&[(40.0, 40.0), (360.0, 40.0), (360.0, 260.0), (40.0, 260.0), (40.0, 40.0)], 2.0);
    c.circle((40.0, 150.0), 18.0, 2.0);
    if dependent {
        c.polygon(&rhombus((200.0, 150.0), 60.0, 90.0, 45.0), 2.0);
    }
    let mut buf = std::io::Cursor::new(Vec::new());
    c.into_dynamic().write_to(&mut buf, image::ImageFormat::Png).unwrap();
    buf.into_inner()
}

/// Writes `<root>/<id>/` with statement, optional diagram and meta.
pub fn write_problem(root: &Path, spec: &Spec) -> PathBuf {
    let dir = root.join(&spec.id);
    fs::create_dir_all(&dir).unwrap();
    fs::write(
        dir.join("statement.txt"),
        format!("{} The switch opens at t = 0. Find vout(t) for t > 0.\n", spec.tag()),
    )
    .unwrap();
    let meta = match spec.kind {
        Kind::Simulable => "category = \"circuit-analysis\"\n\n[[targets]]\nname = \"vout\"\nkind = \"time-series\"\n".to_string(),
        Kind::NoDiagram => "category = \"no-diagram\"\n".to_string(),
        Kind::NotSimulable => "category = \"not-simulable\"\nreason = \"asks for a symbolic proof\"\n".to_string(),
    };
    fs::write(dir.join("meta.toml"), meta).unwrap();
    if spec.kind != Kind::NoDiagram {
        fs::write(dir.join("diagram.png"), diagram(spec.dependent)).unwrap();
    }
    dir
}

pub fn write_problems(root: &Path, specs: &[Spec]) -> Vec<Problem> {
    specs
        .iter()
        .map(|s| load_problem(&write_problem(root, s)).unwrap())
        .collect()
}

fn problem_rules(spec: &Spec, rules: &mut Vec<ScriptRule>) {
    let tag = spec.tag();
    let id = &spec.id;
    let solution = |k: u8| format!("SOLUTION {id}-{k}: the capacitor charges with tau = 0.08 s, so vout(t) = {}.", spec.answer(k));

    rules.push(ScriptRule::new("human reviewer checked", &solution(4)).with_history(&tag));
    rules.push(ScriptRule::new("tasked with solving", &solution(3)).and(&tag).and(CORRECTED));
    rules.push(ScriptRule::new("tasked with solving", &solution(2)).and(&tag).at_temperature(0.2));
    rules.push(ScriptRule::new("tasked with solving", &solution(1)).and(&tag).at_temperature(0.0));
    for k in (1..=4).rev() {
        let marker = format!("SOLUTION {id}-{k}:");
        rules.push(
            ScriptRule::new("summarize the final answer", &format!("vout(t) = {} V", spec.answer(k)))
                .with_history(&marker),
        );
        let extraction = if spec.bad_extraction {
            "vout: ten minus five e to the minus t".to_string()
        } else {
            format!("vout: {}", spec.answer(k))
        };
        rules.push(ScriptRule::new("Restate the final answer", &extraction).and(&marker));
        rules.push(ScriptRule::new("could not be parsed", &extraction).with_history(&marker));
    }

    for (sim, extra, temperature) in [(3, Some(CORRECTED), None), (2, None, Some(0.2)), (1, None, Some(0.0))] {
        let text = fenced(&netlist(id, sim, spec.lint_error && sim == 1));
        let mut r = ScriptRule::new("I am using ngspice", &text).and(&tag);
        if let Some(e) = extra {
            r = r.and(e);
        }
        if let Some(t) = temperature {
            r = r.at_temperature(t);
        }
        rules.push(r);
        let marker = format!("NETLIST {id} s{sim}");
        rules.push(ScriptRule::new("Please double-check", &text).with_history(&marker));
        rules.push(ScriptRule::new("A static check", &fenced(&netlist(id, sim, false))).with_history(&marker));
    }
}

/// Provider rules for every spec plus the shared recognition turns.
pub fn provider(specs: &[Spec]) -> ScriptedProvider {
    let mut rules = Vec::new();
    for s in specs {
        problem_rules(s, &mut rules);
    }
    rules.extend([
        ScriptRule::new("Please reply \"Yes\" if you are ready", "Yes"),
        ScriptRule::new("recognizing the components and nodes", "V1: 10 V between 1 and 0. R1: 8 kOhm between 1 and 2. C1: 10 uF between 2 and 0."),
        ScriptRule::new("recognizing the labeled current(s)", "No labeled currents."),
        ScriptRule::new("at least one INDEPENDENT source", "No"),
        ScriptRule::new("at least one DEPENDENT source", "No"),
        ScriptRule::new("polarity/direction of this dependent source", "The arrow points up, toward node 2."),
        ScriptRule::new(
            "Check if the polarities/directions",
            "V1: 10 V, + terminal at node 1, - at node 0. R1: 8 kOhm between 1 and 2. C1: 10 uF between 2 and 0.",
        ),
    ]);
    ScriptedProvider::new(rules)
}

pub fn truth_table(title: &str) -> String {
    let t: Vec<f64> = (0..=100).map(|i| i as f64 * 5e-3).collect();
    let v = t.iter().map(|&t| 10.0 - 5.0 * (-12.5 * t).exp()).collect();
    let s = SimulationSeries::new(AxisKind::Time, t, vec![("vout".into(), v)]).unwrap();
    render_table(&s, title)
}

pub fn simulator(specs: &[Spec]) -> ScriptedSimulator {
    let mut sim = ScriptedSimulator::default();
    for s in specs {
        for &k in &s.sim_fail {
            sim = sim.failing(
                &format!("NETLIST {} s{k}\n", s.id),
                "Error: unknown subckt: opamp_ideal",
            );
        }
        sim.rules.push(SimRule {
            contains: format!("NETLIST {}", s.id),
            stdout: truth_table(&format!("* NETLIST {}", s.id)),
            stdout_file: None,
            stderr: String::new(),
            exit_code: 0,
            delay_ms: s.sim_delay_ms,
        });
    }
    sim
}

pub fn context(specs: &[Spec]) -> PipelineContext {
    PipelineContext::new(Arc::new(provider(specs)), Arc::new(simulator(specs)))
}

/// Writes the provider and simulator scripts plus a run config for the CLI.
pub fn write_config(dir: &Path, specs: &[Spec]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("provider.json"), serde_json::to_string_pretty(&provider(specs)).unwrap()).unwrap();
    fs::write(dir.join("simulator.json"), serde_json::to_string_pretty(&simulator(specs)).unwrap()).unwrap();
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "[provider]\nkind = \"scripted\"\npath = \"provider.json\"\n\n[simulator]\nkind = \"scripted\"\npath = \"simulator.json\"\ntimeout_secs = 60\n",
    )
    .unwrap();
    cfg
}
