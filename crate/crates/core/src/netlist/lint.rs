//! Static checks for the netlist generation contract.
//!
//! Only rules that can be decided from the text are here. Sign conventions
//! for measured currents and powers, controlling-current directions and
//! connection fidelity need circuit understanding and stay with the model's
//! verification turns.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{parse_spice_number, CardKind, Element, Netlist, PI_PARAM_VALUE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LintRule {
    PiParam,
    NodeNameLen,
    Ground,
    ControlTemplate,
    TwoArgVoltage,
    ReservedLetName,
    BPrefix,
    ParamInControl,
    PwlMonotonic,
    ExplicitV0,
}

impl LintRule {
    pub const ALL: [LintRule; 10] = [
        LintRule::PiParam,
        LintRule::NodeNameLen,
        LintRule::Ground,
        LintRule::ControlTemplate,
        LintRule::TwoArgVoltage,
        LintRule::ReservedLetName,
        LintRule::BPrefix,
        LintRule::ParamInControl,
        LintRule::PwlMonotonic,
        LintRule::ExplicitV0,
    ];

    pub fn id(self) -> &'static str {
        match self {
            LintRule::PiParam => "PI_PARAM",
            LintRule::NodeNameLen => "NODE_NAME_LEN",
            LintRule::Ground => "GROUND",
            LintRule::ControlTemplate => "CONTROL_TEMPLATE",
            LintRule::TwoArgVoltage => "TWO_ARG_VOLTAGE",
            LintRule::ReservedLetName => "RESERVED_LET_NAME",
            LintRule::BPrefix => "B_PREFIX",
            LintRule::ParamInControl => "PARAM_IN_CONTROL",
            LintRule::PwlMonotonic => "PWL_MONOTONIC",
            LintRule::ExplicitV0 => "EXPLICIT_V0",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            LintRule::PwlMonotonic | LintRule::ExplicitV0 => Severity::Warn,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for LintRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: LintRule,
    pub severity: Severity,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub findings: Vec<Finding>,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn contains(&self, rule: LintRule) -> bool {
        self.findings.iter().any(|f| f.rule == rule)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lint report serializes")
    }
}

impl fmt::Display for LintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "no findings");
        }
        for x in &self.findings {
            let sev = match x.severity {
                Severity::Error => "error",
                Severity::Warn => "warning",
            };
            writeln!(f, "line {}: {sev} [{}] {}", x.line, x.rule, x.message)?;
        }
        Ok(())
    }
}

struct Linter {
    findings: Vec<Finding>,
}

impl Linter {
    fn push(&mut self, rule: LintRule, line: usize, message: impl Into<String>) {
        self.findings.push(Finding {
            rule,
            severity: rule.severity(),
            line,
            message: message.into(),
        });
    }
}

/// The single analysis command the control template allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    /// `tran <step> <stop> [uic]`, for time-domain targets.
    #[default]
    Tran,
    /// `ac dec|oct|lin <n> <fstart> <fstop>`, for network-function targets.
    Ac,
}

impl Analysis {
    pub fn verb(self) -> &'static str {
        match self {
            Analysis::Tran => "tran",
            Analysis::Ac => "ac",
        }
    }

    fn keyword(self, tok: &str) -> bool {
        let t = tok.to_ascii_lowercase();
        match self {
            Analysis::Tran => t == "uic",
            Analysis::Ac => matches!(t.as_str(), "dec" | "oct" | "lin"),
        }
    }
}

/// Runs every rule against the transient template.
pub fn lint(netlist: &Netlist) -> LintReport {
    lint_for(netlist, Analysis::Tran)
}

/// Runs every rule. Findings are ordered by line, then rule.
pub fn lint_for(netlist: &Netlist, analysis: Analysis) -> LintReport {
    let mut l = Linter {
        findings: Vec::new(),
    };
    check_pi_param(netlist, &mut l);
    check_elements(netlist, &mut l);
    check_ground(netlist, &mut l);
    check_control(netlist, analysis, &mut l);
    l.findings
        .sort_by(|a, b| (a.line, a.rule, &a.message).cmp(&(b.line, b.rule, &b.message)));
    LintReport {
        findings: l.findings,
    }
}

fn check_pi_param(n: &Netlist, l: &mut Linter) {
    let ok = n.params().any(|(_, name, value)| {
        name.eq_ignore_ascii_case("pi")
            && (value == PI_PARAM_VALUE
                || value.parse::<f64>().ok() == Some(std::f64::consts::PI))
    });
    if !ok {
        l.push(
            LintRule::PiParam,
            1,
            format!("missing `.PARAM pi = {PI_PARAM_VALUE}`"),
        );
    }
}

/// Every element card, including those inside subcircuits.
fn all_elements(n: &Netlist) -> Vec<(usize, &Element)> {
    let mut out: Vec<(usize, &Element)> = n.elements().collect();
    for (_, s) in n.subckts() {
        for c in &s.cards {
            if let CardKind::Element(e) = &c.kind {
                out.push((c.line, e));
            }
        }
    }
    out
}

fn check_elements(n: &Netlist, l: &mut Linter) {
    for (line, s) in n.subckts() {
        for p in &s.ports {
            if p.chars().count() != 1 {
                l.push(
                    LintRule::NodeNameLen,
                    line,
                    format!("subcircuit port `{p}` of `{}` must be one character", s.name),
                );
            }
        }
    }
    for (line, e) in all_elements(n) {
        for node in &e.nodes {
            if node.chars().count() != 1 {
                l.push(
                    LintRule::NodeNameLen,
                    line,
                    format!("node `{node}` of `{}` must be exactly one character", e.name),
                );
            }
        }
        if is_behavioral(e) && e.kind_letter() != 'B' {
            l.push(
                LintRule::BPrefix,
                line,
                format!("behavioral source `{}` must be named with a leading `B`", e.name),
            );
        }
        for span in two_arg_voltages(&e.value) {
            l.push(
                LintRule::TwoArgVoltage,
                line,
                format!("`{span}` in `{}`: write v(a) - v(b) instead", e.name),
            );
        }
        if mentions_v0(&e.value) {
            l.push(
                LintRule::ExplicitV0,
                line,
                format!("`{}` references v(0); use 0", e.name),
            );
        }
        if let Some(points) = pwl_times(&e.value) {
            if points.windows(2).any(|w| w[1] < w[0]) {
                l.push(
                    LintRule::PwlMonotonic,
                    line,
                    format!("PWL time points of `{}` are not monotonic", e.name),
                );
            }
        }
    }
}

fn check_ground(n: &Netlist, l: &mut Linter) {
    let grounded = n.elements().any(|(_, e)| e.nodes.iter().any(|x| x == "0"));
    if !grounded {
        l.push(LintRule::Ground, 1, "no element connects to ground node `0`");
    }
}

fn check_control(n: &Netlist, analysis: Analysis, l: &mut Linter) {
    let av = analysis.verb();
    let blocks: Vec<_> = n.control_blocks().collect();
    let Some(&(start, block)) = blocks.first() else {
        l.push(
            LintRule::ControlTemplate,
            1,
            "missing `.control` block with the standard simulation template",
        );
        return;
    };
    for (line, _) in blocks.iter().skip(1) {
        l.push(LintRule::ControlTemplate, *line, "more than one `.control` block");
    }

    let params: HashSet<String> = n
        .params()
        .map(|(_, name, _)| name.to_ascii_lowercase())
        .filter(|name| !name.is_empty())
        .collect();
    let mut defined: HashSet<String> = HashSet::new();
    let mut tran_line: Option<usize> = None;
    let (mut prints, mut plots) = (0usize, 0usize);

    for cl in &block.lines {
        let Some(cmd) = cl.command() else { continue };
        let verb = cl.verb().unwrap_or_default();
        let args = cmd[cmd.split_whitespace().next().unwrap_or("").len()..].trim();
        let line = cl.line;

        for span in two_arg_voltages(cmd) {
            l.push(
                LintRule::TwoArgVoltage,
                line,
                format!("`{span}`: write v(a) - v(b) instead"),
            );
        }
        if mentions_v0(cmd) {
            l.push(LintRule::ExplicitV0, line, "v(0) used; use 0");
        }

        match verb.as_str() {
            v if v == av => {
                if tran_line.is_some() {
                    l.push(LintRule::ControlTemplate, line, format!("more than one `{av}` command"));
                }
                tran_line = Some(line);
                for tok in args.split_whitespace() {
                    if analysis.keyword(tok) {
                        continue;
                    }
                    if parse_spice_number(tok).is_none() {
                        l.push(
                            LintRule::ParamInControl,
                            line,
                            format!("`{av}` argument `{tok}` must be a plain number"),
                        );
                    }
                }
            }
            "let" => {
                let Some((lhs, rhs)) = args.split_once('=') else {
                    l.push(LintRule::ControlTemplate, line, "malformed `let` command");
                    continue;
                };
                let name = lhs.trim();
                if matches!(name, "v" | "V" | "i" | "I") {
                    l.push(
                        LintRule::ReservedLetName,
                        line,
                        format!("`let {name}` shadows a reserved vector name"),
                    );
                }
                if tran_line.is_none() {
                    l.push(
                        LintRule::ControlTemplate,
                        line,
                        format!("`let {name}` must come after the `{av}` command"),
                    );
                }
                for ident in free_identifiers(rhs) {
                    if params.contains(&ident) && !defined.contains(&ident) {
                        l.push(
                            LintRule::ParamInControl,
                            line,
                            format!("`.PARAM` symbol `{ident}` used in control block; redefine it with `let` using its numeric value"),
                        );
                    }
                }
                defined.insert(name.to_ascii_lowercase());
            }
            "print" | "plot" => {
                if verb == "print" {
                    prints += 1;
                } else {
                    plots += 1;
                }
                if tran_line.is_none() {
                    l.push(
                        LintRule::ControlTemplate,
                        line,
                        format!("`{verb}` must come after the `{av}` command"),
                    );
                }
                let targets: Vec<&str> = args.split_whitespace().collect();
                if targets.is_empty() {
                    l.push(LintRule::ControlTemplate, line, format!("`{verb}` without variables"));
                }
                for t in targets {
                    let key = t.to_ascii_lowercase();
                    if key == "tran" || key == "ac" {
                        l.push(
                            LintRule::ControlTemplate,
                            line,
                            format!("use `{verb} <var>`, not `{verb} {key}`"),
                        );
                    } else if !defined.contains(&key) {
                        if params.contains(&key) {
                            l.push(
                                LintRule::ParamInControl,
                                line,
                                format!("`.PARAM` symbol `{t}` printed without a `let` definition"),
                            );
                        } else {
                            l.push(
                                LintRule::ControlTemplate,
                                line,
                                format!("`{verb}` target `{t}` must be a variable defined earlier with `let`"),
                            );
                        }
                    }
                }
            }
            other => {
                let hint = if other == ".let" {
                    "; use `let` without a dot"
                } else {
                    ""
                };
                l.push(
                    LintRule::ControlTemplate,
                    line,
                    format!("command `{other}` is not part of the simulation template{hint}"),
                );
            }
        }
    }

    if tran_line.is_none() {
        l.push(
            LintRule::ControlTemplate,
            start,
            format!("control block has no `{av}` command"),
        );
    }
    if prints == 0 {
        l.push(LintRule::ControlTemplate, start, "control block has no `print` command");
    }
    if plots == 0 {
        l.push(LintRule::ControlTemplate, start, "control block has no `plot` command");
    }
}

/// `V = {...}` / `I = {...}` value syntax marks a behavioral source.
fn is_behavioral(e: &Element) -> bool {
    let v = e.value.trim_start();
    let mut chars = v.chars();
    match chars.next() {
        Some('V' | 'v' | 'I' | 'i') => chars.as_str().trim_start().starts_with('='),
        _ => false,
    }
}

/// Byte ranges of `v(...)` calls, as (start, end-exclusive of ')').
fn v_calls(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < bytes.len() {
        let is_v = bytes[i] == b'v' || bytes[i] == b'V';
        let boundary = i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
        if is_v && boundary {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j] == b' ' {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'(' {
                let mut depth = 0;
                let mut k = j;
                while k < bytes.len() {
                    match bytes[k] {
                        b'(' => depth += 1,
                        b')' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    k += 1;
                }
                out.push((i, k.min(bytes.len())));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn two_arg_voltages(text: &str) -> Vec<String> {
    v_calls(text)
        .into_iter()
        .filter_map(|(s, e)| {
            let inner_start = text[s..].find('(').map(|p| s + p + 1)?;
            let inner = &text[inner_start..e.max(inner_start)];
            let mut depth = 0;
            let has_comma = inner.chars().any(|c| {
                match c {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    _ => {}
                }
                c == ',' && depth == 0
            });
            has_comma.then(|| text[s..(e + 1).min(text.len())].to_string())
        })
        .collect()
}

fn mentions_v0(text: &str) -> bool {
    v_calls(text).into_iter().any(|(s, e)| {
        let inner_start = match text[s..].find('(') {
            Some(p) => s + p + 1,
            None => return false,
        };
        text.get(inner_start..e).map(str::trim) == Some("0")
    })
}

/// Identifiers in an expression that are not function names and not inside
/// `v(...)` / `i(...)` node references.
fn free_identifiers(expr: &str) -> Vec<String> {
    let bytes = expr.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'#') {
                i += 1;
            }
            let word = &expr[start..i];
            let mut j = i;
            while j < bytes.len() && bytes[j] == b' ' {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'(' {
                let lw = word.to_ascii_lowercase();
                if lw == "v" || lw == "i" {
                    // skip the node/device reference
                    let mut depth = 0;
                    while j < bytes.len() {
                        match bytes[j] {
                            b'(' => depth += 1,
                            b')' => {
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                            }
                            _ => {}
                        }
                        j += 1;
                    }
                    i = j + 1;
                }
                continue;
            }
            out.push(word.to_ascii_lowercase());
        } else if c.is_ascii_digit() || c == b'.' {
            // numbers, including exponents and scale suffixes
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Time points of a `PWL(...)` value, if present and numeric.
fn pwl_times(value: &str) -> Option<Vec<f64>> {
    let lower = value.to_ascii_lowercase();
    let start = lower.find("pwl")?;
    let open = start + lower[start..].find('(')?;
    let close = open + lower[open..].find(')')?;
    let nums: Vec<f64> = value[open + 1..close]
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(parse_spice_number)
        .collect::<Option<_>>()?;
    Some(nums.iter().step_by(2).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;

    const GOOD: &str = "\
* rc
.PARAM pi = 3.141592653589793
.PARAM r = 1k
V1 1 0 5
R1 1 2 {r}
C1 2 0 1u
.control
tran 1e-4 0.01
let vc = v(2)
print vc
plot vc
.endc
.end
";

    fn report(text: &str) -> LintReport {
        lint(&parse_netlist(text).unwrap())
    }

    fn rules(text: &str) -> Vec<LintRule> {
        report(text).findings.iter().map(|f| f.rule).collect()
    }

    #[test]
    fn clean_netlist_has_no_findings() {
        assert!(report(GOOD).is_clean(), "{}", report(GOOD));
    }

    #[test]
    fn pi_param() {
        let bad = GOOD.replace(".PARAM pi = 3.141592653589793\n", "");
        assert_eq!(rules(&bad), [LintRule::PiParam]);
        let wrong = GOOD.replace("3.141592653589793", "3.14");
        assert_eq!(rules(&wrong), [LintRule::PiParam]);
    }

    #[test]
    fn node_name_length() {
        let bad = GOOD.replace("R1 1 2 {r}", "R1 1 in {r}");
        let r = report(&bad);
        assert!(r.contains(LintRule::NodeNameLen));
        assert_eq!(r.findings[0].line, 5);
        let port = GOOD.replace(".control", ".subckt A ab c\nR9 c 0 1\n.ends\n.control");
        assert_eq!(rules(&port), [LintRule::NodeNameLen]);
    }

    #[test]
    fn ground() {
        let bad = GOOD
            .replace("V1 1 0 5", "V1 1 3 5")
            .replace("C1 2 0 1u", "C1 2 3 1u");
        assert_eq!(rules(&bad), [LintRule::Ground]);
    }

    #[test]
    fn control_template() {
        let no_plot = GOOD.replace("plot vc\n", "");
        assert_eq!(rules(&no_plot), [LintRule::ControlTemplate]);
        let expr_print = GOOD.replace("print vc", "print v(2)");
        assert_eq!(rules(&expr_print), [LintRule::ControlTemplate]);
        let extra = GOOD.replace("plot vc\n", "plot vc\nfourier 50 vc\n");
        assert_eq!(rules(&extra), [LintRule::ControlTemplate]);
        let two = GOOD.replace("let vc", "tran 1 2\nlet vc");
        assert_eq!(rules(&two), [LintRule::ControlTemplate]);
        let missing = GOOD.replace(".control\n", "").replace(
            "tran 1e-4 0.01\nlet vc = v(2)\nprint vc\nplot vc\n.endc\n",
            "",
        );
        assert_eq!(rules(&missing), [LintRule::ControlTemplate]);
        let print_tran = GOOD.replace("print vc", "print tran vc");
        assert!(rules(&print_tran).contains(&LintRule::ControlTemplate));
    }

    #[test]
    fn ac_profile() {
        let ac = GOOD.replace("tran 1e-4 0.01", "ac dec 20 1 1e4");
        let n = parse_netlist(&ac).unwrap();
        assert!(lint_for(&n, Analysis::Ac).is_clean());
        assert!(lint(&n).contains(LintRule::ControlTemplate));
        let n = parse_netlist(GOOD).unwrap();
        assert!(lint_for(&n, Analysis::Ac).contains(LintRule::ControlTemplate));
        let bad = GOOD.replace("tran 1e-4 0.01", "ac dec 20 1 {fmax}");
        let n = parse_netlist(&bad).unwrap();
        assert!(lint_for(&n, Analysis::Ac).contains(LintRule::ParamInControl));
    }

    #[test]
    fn two_arg_voltage() {
        let bad = GOOD.replace("let vc = v(2)", "let vc = v(1,2)");
        assert_eq!(rules(&bad), [LintRule::TwoArgVoltage]);
        let in_element = GOOD.replace("V1 1 0 5", "V1 1 0 5\nB1 3 0 V = {v(1, 2)}\nR3 3 0 1");
        assert_eq!(rules(&in_element), [LintRule::TwoArgVoltage]);
        let ok = GOOD.replace("let vc = v(2)", "let vc = v(1) - v(2)");
        assert!(report(&ok).is_clean());
    }

    #[test]
    fn reserved_let_name() {
        let bad = GOOD.replace("vc", "v");
        assert_eq!(rules(&bad), [LintRule::ReservedLetName]);
        let upper = GOOD.replace("vc", "I");
        assert_eq!(rules(&upper), [LintRule::ReservedLetName]);
    }

    #[test]
    fn b_prefix() {
        let bad = GOOD.replace("V1 1 0 5", "Vx 1 0 V = {5*sin(2*pi*time)}");
        assert_eq!(rules(&bad), [LintRule::BPrefix]);
        let ok = GOOD.replace("V1 1 0 5", "Bx 1 0 V = {5*sin(2*pi*time)}");
        assert!(report(&ok).is_clean());
    }

    #[test]
    fn param_in_control() {
        let raw = GOOD.replace("let vc = v(2)", "let vc = v(2) * r");
        assert_eq!(rules(&raw), [LintRule::ParamInControl]);
        let redefined = GOOD.replace("let vc = v(2)", "let r = 1000\nlet vc = v(2) * r");
        assert!(report(&redefined).is_clean(), "{}", report(&redefined));
        let tran = GOOD.replace("tran 1e-4 0.01", "tran {0.1/r} 0.01");
        assert_eq!(rules(&tran), [LintRule::ParamInControl]);
        let symbolic_rhs = GOOD.replace("let vc = v(2)", "let r = r\nlet vc = v(2)");
        assert_eq!(rules(&symbolic_rhs), [LintRule::ParamInControl]);
    }

    #[test]
    fn warnings() {
        let pwl = GOOD.replace("V1 1 0 5", "V1 1 0 PWL(0 0 2m 1 1m 0)");
        let r = report(&pwl);
        assert_eq!(rules(&pwl), [LintRule::PwlMonotonic]);
        assert!(!r.has_errors());
        let ok = GOOD.replace("V1 1 0 5", "V1 1 0 PWL(0 0 1m 1 2m 0)");
        assert!(report(&ok).is_clean());
        let v0 = GOOD.replace("let vc = v(2)", "let vc = v(2) - v(0)");
        assert_eq!(rules(&v0), [LintRule::ExplicitV0]);
    }

    #[test]
    fn findings_sorted_by_line() {
        let bad = GOOD
            .replace(".PARAM pi = 3.141592653589793\n", "")
            .replace("R1 1 2", "R1 1 ab")
            .replace("vc", "v");
        let lines: Vec<usize> = report(&bad).findings.iter().map(|f| f.line).collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert_eq!(report(&bad), report(&bad));
    }
}
