//! ngspice batch runner and printed-table parser.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use crate::compare::AxisKind;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const NGSPICE_ENV: &str = "VERISPICE_NGSPICE";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulator configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no `Index time|frequency ...` table header found")]
    NoHeader,
    #[error("table header found but no data rows")]
    NoRows,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSeries {
    pub axis_kind: AxisKind,
    pub axis: Vec<f64>,
    pub variables: Vec<(String, Vec<f64>)>,
}

impl SimulationSeries {
    pub fn new(
        axis_kind: AxisKind,
        axis: Vec<f64>,
        variables: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, ParseError> {
        if axis_kind == AxisKind::Time && axis.len() < 2 {
            return Err(ParseError::Invalid(format!(
                "transient series needs at least 2 samples, got {}",
                axis.len()
            )));
        }
        if axis.is_empty() {
            return Err(ParseError::NoRows);
        }
        if variables.is_empty() {
            return Err(ParseError::Invalid("no variables".into()));
        }
        if let Some(i) = axis.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ParseError::Invalid(format!(
                "axis is not strictly increasing at sample {}",
                i + 1
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&axis) {
            return Err(ParseError::Invalid("axis contains NaN or Inf".into()));
        }
        for (name, values) in &variables {
            if values.len() != axis.len() {
                return Err(ParseError::Invalid(format!(
                    "`{name}` has {} samples, axis has {}",
                    values.len(),
                    axis.len()
                )));
            }
            if !finite(values) {
                return Err(ParseError::Invalid(format!("`{name}` contains NaN or Inf")));
            }
        }
        Ok(SimulationSeries {
            axis_kind,
            axis,
            variables,
        })
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// Case-insensitive lookup.
    pub fn variable(&self, name: &str) -> Option<&[f64]> {
        self.variables
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().map(|(n, _)| n.as_str())
    }
}

fn axis_key(kind: AxisKind) -> &'static str {
    match kind {
        AxisKind::Time => "time",
        AxisKind::Frequency => "frequency",
    }
}

/// `{"time"|"frequency": [...], "<var>": [...], ...}` in column order.
pub fn series_to_json(series: &SimulationSeries) -> String {
    let mut obj = Map::new();
    obj.insert(axis_key(series.axis_kind).into(), Value::from(series.axis.clone()));
    for (name, values) in &series.variables {
        obj.insert(name.clone(), Value::from(values.clone()));
    }
    serde_json::to_string_pretty(&Value::Object(obj)).expect("finite series serializes")
}

pub fn series_from_json(text: &str) -> Result<SimulationSeries, ParseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ParseError::Invalid(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ParseError::Invalid("series JSON must be an object".into()));
    };
    let numbers = |key: &str, v: &Value| -> Result<Vec<f64>, ParseError> {
        v.as_array()
            .ok_or_else(|| ParseError::Invalid(format!("`{key}` is not an array")))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| ParseError::Invalid(format!("`{key}` has a non-number")))
            })
            .collect()
    };
    let mut kind = None;
    let mut axis = Vec::new();
    let mut variables = Vec::new();
    for (key, v) in &obj {
        let k = match key.as_str() {
            "time" => Some(AxisKind::Time),
            "frequency" => Some(AxisKind::Frequency),
            _ => None,
        };
        match (k, kind) {
            (Some(_), Some(_)) => {
                return Err(ParseError::Invalid("both `time` and `frequency` present".into()))
            }
            (Some(k), None) => {
                kind = Some(k);
                axis = numbers(key, v)?;
            }
            (None, _) => variables.push((key.clone(), numbers(key, v)?)),
        }
    }
    let kind = kind.ok_or(ParseError::NoHeader)?;
    SimulationSeries::new(kind, axis, variables)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub series: SimulationSeries,
    pub declared_rows: Option<usize>,
    pub warnings: Vec<String>,
}

struct Block {
    names: Vec<String>,
    rows: Vec<(usize, f64, Vec<f64>)>,
}

fn parse_header(line: &str) -> Option<(AxisKind, Vec<String>)> {
    let mut toks = line.split_whitespace();
    if toks.next()? != "Index" {
        return None;
    }
    let kind = match toks.next()?.to_ascii_lowercase().as_str() {
        "time" => AxisKind::Time,
        "frequency" => AxisKind::Frequency,
        _ => return None,
    };
    let names: Vec<String> = toks.map(str::to_string).collect();
    (!names.is_empty()).then_some((kind, names))
}

fn parse_row(line: &str, width: usize) -> Option<(usize, f64, Vec<f64>)> {
    let mut toks = line.split_whitespace();
    let index: usize = toks.next()?.parse().ok()?;
    let axis: f64 = toks.next()?.parse().ok()?;
    let values: Vec<f64> = toks.map(|t| t.parse::<f64>()).collect::<Result<_, _>>().ok()?;
    (values.len() == width).then_some((index, axis, values))
}

fn declared_rows(line: &str) -> Option<usize> {
    let rest = line.trim().strip_prefix("No. of Data Rows")?;
    rest.trim_start().strip_prefix(':')?.trim().parse().ok()
}

/// Parses the tables written by `print` in batch mode.
///
/// Page breaks repeat the header; wide prints split columns into several
/// tables that restart at index 0. Both are merged into one series.
pub fn parse_output(stdout: &str) -> Result<ParsedOutput, ParseError> {
    let mut kind: Option<AxisKind> = None;
    let mut declared: Option<usize> = None;
    let mut blocks: Vec<Block> = Vec::new();
    let mut current: Option<usize> = None;
    let mut warnings = Vec::new();

    for line in stdout.lines() {
        if let Some(n) = declared_rows(line) {
            if declared.is_some_and(|d| d != n) {
                warnings.push(format!("conflicting declared row counts {} and {n}", declared.unwrap()));
            }
            declared = Some(n);
            continue;
        }
        if let Some((k, names)) = parse_header(line) {
            if kind.is_some_and(|x| x != k) {
                return Err(ParseError::Invalid("mixed time and frequency tables".into()));
            }
            kind = Some(k);
            let at = match blocks.iter().position(|b| b.names == names) {
                Some(i) => i,
                None => {
                    blocks.push(Block {
                        names,
                        rows: Vec::new(),
                    });
                    blocks.len() - 1
                }
            };
            current = Some(at);
            continue;
        }
        let Some(at) = current else { continue };
        let width = blocks[at].names.len();
        if let Some(row) = parse_row(line, width) {
            blocks[at].rows.push(row);
        }
    }

    let kind = kind.ok_or(ParseError::NoHeader)?;
    let first = &blocks[0];
    if first.rows.is_empty() {
        return Err(ParseError::NoRows);
    }
    for (pos, (index, _, _)) in first.rows.iter().enumerate() {
        if *index != pos {
            return Err(ParseError::Invalid(format!(
                "row index {index} found where {pos} was expected"
            )));
        }
    }
    let axis: Vec<f64> = first.rows.iter().map(|r| r.1).collect();
    let mut variables: Vec<(String, Vec<f64>)> = Vec::new();
    for block in &blocks {
        if block.rows.len() != axis.len() {
            return Err(ParseError::Invalid(format!(
                "column block {:?} has {} rows, expected {}",
                block.names,
                block.rows.len(),
                axis.len()
            )));
        }
        for (pos, (index, x, _)) in block.rows.iter().enumerate() {
            if *index != pos || *x != axis[pos] {
                return Err(ParseError::Invalid(format!(
                    "column block {:?} disagrees with the axis at row {pos}",
                    block.names
                )));
            }
        }
        for (c, name) in block.names.iter().enumerate() {
            if variables.iter().any(|(n, _)| n == name) {
                continue;
            }
            variables.push((name.clone(), block.rows.iter().map(|r| r.2[c]).collect()));
        }
    }
    if let Some(n) = declared {
        if n != axis.len() {
            warnings.push(format!("declared {n} data rows but parsed {}", axis.len()));
        }
    }
    let series = SimulationSeries::new(kind, axis, variables)?;
    Ok(ParsedOutput {
        series,
        declared_rows: declared,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimStatus {
    Ok {
        series: SimulationSeries,
        warnings: Vec<String>,
    },
    ExecFailure {
        exit_code: Option<i32>,
        timed_out: bool,
        errors: Vec<String>,
    },
    NoData {
        diagnostics: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub status: SimStatus,
    pub stdout: String,
    pub stderr: String,
}

impl SimOutcome {
    pub fn series(&self) -> Option<&SimulationSeries> {
        match &self.status {
            SimStatus::Ok { series, .. } => Some(series),
            _ => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.series().is_some()
    }

    /// Short label for logs and reports.
    pub fn label(&self) -> &'static str {
        match self.status {
            SimStatus::Ok { .. } => "ok",
            SimStatus::ExecFailure { .. } => "exec-failure",
            SimStatus::NoData { .. } => "no-data",
        }
    }
}

fn error_lines(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(str::trim)
        .filter(|l| l.starts_with("Error"))
        .map(str::to_string)
}

/// Applies the outcome rules to captured process output.
pub fn classify(stdout: String, stderr: String, exit_code: Option<i32>, timed_out: bool) -> SimOutcome {
    let errors: Vec<String> = error_lines(&stderr).chain(error_lines(&stdout)).collect();
    let status = if timed_out || exit_code != Some(0) || !errors.is_empty() {
        let mut errors = errors;
        if timed_out {
            errors.insert(0, "timed out".into());
        }
        SimStatus::ExecFailure {
            exit_code,
            timed_out,
            errors,
        }
    } else {
        match parse_output(&stdout) {
            Ok(p) => SimStatus::Ok {
                series: p.series,
                warnings: p.warnings,
            },
            Err(e) => SimStatus::NoData {
                diagnostics: e.to_string(),
            },
        }
    };
    SimOutcome {
        status,
        stdout,
        stderr,
    }
}

pub trait Simulator: Send + Sync {
    fn run(&self, netlist_path: &Path, timeout: Duration) -> Result<SimOutcome, SimError>;
}

/// Runs `ngspice -b <file>`.
#[derive(Debug, Clone)]
pub struct Ngspice {
    pub program: PathBuf,
}

impl Default for Ngspice {
    fn default() -> Self {
        Ngspice {
            program: std::env::var_os(NGSPICE_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("ngspice")),
        }
    }
}

impl Ngspice {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Ngspice {
            program: program.into(),
        }
    }

    /// True when the configured executable can be spawned.
    pub fn available(&self) -> bool {
        Command::new(&self.program)
            .arg("--version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok()
    }
}

impl Simulator for Ngspice {
    fn run(&self, netlist_path: &Path, timeout: Duration) -> Result<SimOutcome, SimError> {
        if !netlist_path.is_file() {
            return Err(SimError::Io(io::Error::new(
                io::ErrorKind::NotFound,
                format!("netlist {} not found", netlist_path.display()),
            )));
        }
        let mut cmd = Command::new(&self.program);
        cmd.arg("-b").arg(netlist_path);
        if let Some(dir) = netlist_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            cmd.current_dir(dir);
        }
        run_with_timeout(cmd, timeout).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => SimError::Config(format!(
                "ngspice executable `{}` not found; set {NGSPICE_ENV} or [simulator].program",
                self.program.display()
            )),
            _ => SimError::Io(e),
        })
    }
}

/// Spawns `cmd`, captures both streams and kills it after `timeout`.
pub fn run_with_timeout(mut cmd: Command, timeout: Duration) -> io::Result<SimOutcome> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let drain = |mut r: Box<dyn Read + Send>| {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            let _ = tx.send(String::from_utf8_lossy(&buf).into_owned());
        });
        rx
    };
    let out = drain(Box::new(child.stdout.take().expect("piped stdout")));
    let err = drain(Box::new(child.stderr.take().expect("piped stderr")));
    let deadline = Instant::now() + timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break s;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            let _ = child.kill();
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(10));
    };
    // a killed child's descendants may keep the pipes open
    let grace = if timed_out {
        Duration::from_millis(500)
    } else {
        Duration::from_secs(3600)
    };
    let stdout = out.recv_timeout(grace).unwrap_or_default();
    let stderr = err.recv_timeout(grace).unwrap_or_default();
    Ok(classify(stdout, stderr, status.code(), timed_out))
}

/// Canned simulator output selected by netlist content.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedSimulator {
    pub rules: Vec<SimRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRule {
    /// Substring the netlist must contain; empty matches everything.
    #[serde(default)]
    pub contains: String,
    #[serde(default)]
    pub stdout: String,
    /// Read stdout from this file instead, relative to the script file.
    #[serde(default)]
    pub stdout_file: Option<PathBuf>,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub exit_code: i32,
    #[serde(default)]
    pub delay_ms: u64,
}

impl ScriptedSimulator {
    /// Reads `{"rules": [...]}` from `.json`, otherwise `[[rules]]` TOML.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let mut sim: ScriptedSimulator =
            parsed.map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &mut sim.rules {
            if let Some(f) = r.stdout_file.take() {
                r.stdout = fs::read_to_string(base.join(&f))?;
            }
        }
        Ok(sim)
    }

    pub fn rule(mut self, contains: &str, stdout: impl Into<String>) -> Self {
        self.rules.push(SimRule {
            contains: contains.into(),
            stdout: stdout.into(),
            stdout_file: None,
            stderr: String::new(),
            exit_code: 0,
            delay_ms: 0,
        });
        self
    }

    pub fn failing(mut self, contains: &str, stderr: &str) -> Self {
        self.rules.push(SimRule {
            contains: contains.into(),
            stdout: String::new(),
            stdout_file: None,
            stderr: stderr.into(),
            exit_code: 1,
            delay_ms: 0,
        });
        self
    }
}

impl Simulator for ScriptedSimulator {
    fn run(&self, netlist_path: &Path, timeout: Duration) -> Result<SimOutcome, SimError> {
        let text = fs::read_to_string(netlist_path)?;
        let Some(rule) = self.rules.iter().find(|r| text.contains(&r.contains)) else {
            return Ok(classify(
                String::new(),
                format!("Error: no scripted output for {}", netlist_path.display()),
                Some(1),
                false,
            ));
        };
        if rule.delay_ms > 0 {
            let d = Duration::from_millis(rule.delay_ms);
            if d > timeout {
                thread::sleep(timeout);
                return Ok(classify(String::new(), String::new(), None, true));
            }
            thread::sleep(d);
        }
        Ok(classify(
            rule.stdout.clone(),
            rule.stderr.clone(),
            Some(rule.exit_code),
            false,
        ))
    }
}

/// Renders a series in the batch `print` table format.
pub fn render_table(series: &SimulationSeries, title: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("No. of Data Rows : {}\n", series.len()));
    out.push_str(title);
    out.push('\n');
    out.push_str("Index   ");
    out.push_str(axis_key(series.axis_kind));
    for name in series.names() {
        out.push_str(&format!("            {name}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(71));
    out.push('\n');
    for i in 0..series.len() {
        out.push_str(&format!("{i}\t{:.6e}", series.axis[i]));
        for (_, v) in &series.variables {
            out.push_str(&format!("\t{:.6e}", v[i]));
        }
        out.push_str("\t\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
Circuit: * rc

No. of Data Rows : 3
* rc
Transient Analysis  Mon Jan  1 00:00:00  2025
------------------------------------------
Index   time            vout
------------------------------------------
0\t0.000000e+00\t1.000000e+00\t
1\t1.000000e-03\t2.000000e+00\t

* rc
Index   time            vout
------------------------------------------
2\t2.000000e-03\t3.000000e+00\t
";

    #[test]
    fn parses_paged_table() {
        let p = parse_output(SMALL).unwrap();
        assert_eq!(p.series.axis, [0.0, 1e-3, 2e-3]);
        assert_eq!(p.series.variable("VOUT").unwrap(), [1.0, 2.0, 3.0]);
        assert!(p.warnings.is_empty());
        assert_eq!(p.declared_rows, Some(3));
    }

    #[test]
    fn row_count_mismatch_is_a_warning() {
        let text = SMALL.replace("Rows : 3", "Rows : 4");
        let p = parse_output(&text).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert_eq!(p.series.len(), 3);
    }

    #[test]
    fn merges_column_blocks() {
        let text = "\
Index   time   a
0 0 1
1 1 2
Index   time   b
0 0 10
1 1 20
";
        let s = parse_output(text).unwrap().series;
        assert_eq!(s.names().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(s.variable("b").unwrap(), [10.0, 20.0]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert_eq!(parse_output("no table here\n"), Err(ParseError::NoHeader));
        assert_eq!(parse_output("Index time v\n---\n"), Err(ParseError::NoRows));
        let backwards = "Index time v\n0 1 0\n1 0.5 0\n";
        assert!(matches!(parse_output(backwards), Err(ParseError::Invalid(_))));
        let nan = "Index time v\n0 0 nan\n1 1 0\n";
        assert!(matches!(parse_output(nan), Err(ParseError::Invalid(_))));
        let single = "Index time v\n0 0 1\n";
        assert!(matches!(parse_output(single), Err(ParseError::Invalid(_))));
        let freq = "Index frequency h\n0 1 1\n";
        assert_eq!(parse_output(freq).unwrap().series.axis_kind, AxisKind::Frequency);
    }

    #[test]
    fn json_round_trip() {
        let s = SimulationSeries::new(
            AxisKind::Time,
            vec![0.0, 0.5, 1.0],
            vec![("vout".into(), vec![4.999995, 9.892478, 1.0 / 3.0])],
        )
        .unwrap();
        let json = series_to_json(&s);
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["time"].as_array().unwrap().len(), 3);
        assert_eq!(v["vout"].as_array().unwrap().len(), 3);
        assert!(json.find("\"time\"").unwrap() < json.find("\"vout\"").unwrap());
        assert_eq!(series_from_json(&json).unwrap(), s);
    }

    #[test]
    fn classification() {
        let ok = classify(SMALL.into(), String::new(), Some(0), false);
        assert!(ok.is_ok());
        let err = classify(SMALL.into(), "Error: unknown node\n".into(), Some(0), false);
        assert_eq!(err.label(), "exec-failure");
        let exit = classify(SMALL.into(), String::new(), Some(1), false);
        assert_eq!(exit.label(), "exec-failure");
        let none = classify("nothing".into(), String::new(), Some(0), false);
        assert_eq!(none.label(), "no-data");
        let slow = classify(String::new(), String::new(), None, true);
        assert!(matches!(slow.status, SimStatus::ExecFailure { timed_out: true, .. }));
    }

    #[test]
    fn missing_executable_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cir = dir.path().join("a.cir");
        fs::write(&cir, "* t\n.end\n").unwrap();
        let sim = Ngspice::new("/nonexistent/ngspice-binary");
        assert!(matches!(sim.run(&cir, DEFAULT_TIMEOUT), Err(SimError::Config(_))));
    }

    #[cfg(unix)]
    #[test]
    fn timeout_kills_child() {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg("sleep 5");
        let t0 = Instant::now();
        let out = run_with_timeout(cmd, Duration::from_millis(200)).unwrap();
        assert!(t0.elapsed() < Duration::from_secs(3));
        assert!(matches!(out.status, SimStatus::ExecFailure { timed_out: true, .. }));
    }

    #[test]
    fn render_table_reparses() {
        let s = parse_output(SMALL).unwrap().series;
        let again = parse_output(&render_table(&s, "* rc")).unwrap().series;
        assert_eq!(again, s);
    }
}
