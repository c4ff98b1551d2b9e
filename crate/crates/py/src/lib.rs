//! Python bindings: netlist parsing and linting, simulator output parsing,
//! answer comparison, source detection and batch runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use verispice::compare::{self, evaluate, parse_expression, AnswerExpression, AxisKind, Evaluated, TolerancePolicy};
use verispice::model::load_problems;
use verispice::netlist::{self, lint_for, parse_netlist, Analysis};
use verispice::pipeline::{self, batch_run, build_context, list_tickets, BatchOptions, PipelineConfig, TicketStatus};
use verispice::sim::{self, series_from_json, series_to_json};
use verispice::vision::{detect_dependent_sources, open_image};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Netlist", module = "verispice", frozen)]
struct PyNetlist {
    inner: netlist::Netlist,
}

#[pymethods]
impl PyNetlist {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_netlist(text).map(|inner| PyNetlist { inner }).map_err(value_err)
    }

    fn emit(&self) -> String {
        self.inner.emit()
    }

    #[pyo3(signature = (ac = false))]
    fn lint(&self, ac: bool) -> PyLintReport {
        PyLintReport {
            inner: lint_for(&self.inner, if ac { Analysis::Ac } else { Analysis::Tran }),
        }
    }

    fn element_names(&self) -> Vec<String> {
        self.inner.elements().map(|(_, e)| e.name.clone()).collect()
    }
}

#[pyclass(name = "LintReport", module = "verispice", frozen)]
struct PyLintReport {
    inner: netlist::LintReport,
}

#[pymethods]
impl PyLintReport {
    #[getter]
    fn is_clean(&self) -> bool {
        self.inner.is_clean()
    }

    #[getter]
    fn has_errors(&self) -> bool {
        self.inner.has_errors()
    }

    /// (rule id, severity, line, message) per finding.
    fn findings(&self) -> Vec<(String, String, usize, String)> {
        self.inner
            .findings
            .iter()
            .map(|f| (f.rule.id().to_string(), format!("{:?}", f.severity).to_lowercase(), f.line, f.message.clone()))
            .collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.findings.len()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }
}

#[pyclass(name = "SimulationSeries", module = "verispice", frozen)]
struct PySeries {
    inner: sim::SimulationSeries,
}

#[pymethods]
impl PySeries {
    /// Parses printed tables from ngspice batch output.
    #[staticmethod]
    fn from_stdout(text: &str) -> PyResult<Self> {
        sim::parse_output(text).map(|p| PySeries { inner: p.series }).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        series_from_json(text).map(|inner| PySeries { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        series_to_json(&self.inner)
    }

    #[getter]
    fn axis_kind(&self) -> &'static str {
        match self.inner.axis_kind {
            AxisKind::Time => "time",
            AxisKind::Frequency => "frequency",
        }
    }

    #[getter]
    fn axis(&self) -> Vec<f64> {
        self.inner.axis.clone()
    }

    fn names(&self) -> Vec<String> {
        self.inner.variables.iter().map(|(n, _)| n.clone()).collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .variables
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no column `{name}`")))
    }

    fn __len__(&self) -> usize {
        self.inner.axis.len()
    }
}

#[pyclass(name = "AnswerExpression", module = "verispice", frozen)]
struct PyExpression {
    inner: AnswerExpression,
}

#[pymethods]
impl PyExpression {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_expression(text)
            .map(|inner| PyExpression { inner })
            .map_err(|e| PyValueError::new_err(format!("at {}: {}", e.pos, e.message)))
    }

    #[getter]
    fn is_network_function(&self) -> bool {
        self.inner.axis_kind() == AxisKind::Frequency
    }

    /// Real values for time-domain sums; (magnitude, phase in degrees) for
    /// network functions evaluated at the given frequencies in hertz.
    fn evaluate<'py>(&self, py: Python<'py>, axis: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        match evaluate(&self.inner, &axis, self.inner.axis_kind()).map_err(value_err)? {
            Evaluated::Real(v) => v.into_pyobject(py).map(Bound::into_any),
            Evaluated::Polar { magnitude, phase_deg } => (magnitude, phase_deg).into_pyobject(py).map(Bound::into_any),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }
}

#[pyclass(name = "ComparisonReport", module = "verispice", frozen)]
struct PyReport {
    inner: compare::ComparisonReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn is_match(&self) -> bool {
        self.inner.is_match()
    }

    #[getter]
    fn max_deviation(&self) -> f64 {
        self.inner.max_deviation
    }

    #[getter]
    fn worst_index(&self) -> Option<usize> {
        self.inner.worst_index
    }

    #[getter]
    fn tail_window(&self) -> usize {
        self.inner.tail_window
    }

    #[getter]
    fn matched_by(&self) -> Option<String> {
        self.inner.matched_by.map(|m| format!("{m:?}"))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Compares simulator values with expression values sampled on the same grid.
#[pyfunction]
#[pyo3(signature = (sim, expr, rel = None, abs = None))]
fn compare_values(sim: Vec<f64>, expr: Vec<f64>, rel: Option<f64>, abs: Option<f64>) -> PyResult<PyReport> {
    if sim.len() != expr.len() {
        return Err(PyValueError::new_err(format!("length mismatch: {} vs {}", sim.len(), expr.len())));
    }
    let d = TolerancePolicy::default();
    let policy = TolerancePolicy {
        rel: rel.unwrap_or(d.rel),
        abs: abs.unwrap_or(d.abs),
        ..d
    };
    Ok(PyReport {
        inner: compare::compare(&sim, &expr, &policy),
    })
}

#[pyfunction]
fn tail_window(n: usize) -> usize {
    compare::tail_window(n)
}

/// Dependent-source boxes found by the rule-based detector.
#[pyfunction]
fn detect<'py>(py: Python<'py>, image: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let img = open_image(&image).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let boxes: Vec<_> = detect_dependent_sources(&img).iter().map(|d| d.bbox).collect();
    to_py(py, &boxes)
}

/// Runs every problem under `problems` and returns the batch summary.
#[pyfunction]
#[pyo3(signature = (problems, workspace, config, parallel = 4, resume = false))]
fn run_batch<'py>(
    py: Python<'py>,
    problems: PathBuf,
    workspace: PathBuf,
    config: PathBuf,
    parallel: usize,
    resume: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let summary = py.detach(|| {
        let ctx = build_context(&PipelineConfig::load(&config)?)?;
        let problems = load_problems(&problems).map_err(pipeline::PipelineError::from)?;
        batch_run(&ctx, &problems, &workspace, BatchOptions { parallel, resume })
    });
    to_py(py, &summary.map_err(value_err)?)
}

#[pyfunction]
fn report<'py>(py: Python<'py>, workspace: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &pipeline::report(&workspace).map_err(value_err)?)
}

#[pyfunction]
#[pyo3(signature = (workspace, status = None))]
fn tickets<'py>(py: Python<'py>, workspace: PathBuf, status: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let want: Option<TicketStatus> = status.map(str::parse).transpose().map_err(PyValueError::new_err)?;
    let all = list_tickets(&workspace).map_err(value_err)?;
    let picked: Vec<_> = all.into_iter().filter(|t| want.is_none_or(|s| t.status() == s)).collect();
    to_py(py, &picked)
}

#[pymodule]
#[pyo3(name = "verispice")]
fn verispice_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetlist>()?;
    m.add_class::<PyLintReport>()?;
    m.add_class::<PySeries>()?;
    m.add_class::<PyExpression>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(compare_values, m)?)?;
    m.add_function(wrap_pyfunction!(tail_window, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(tickets, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    const RC: &str = include_str!("../../core/tests/fixtures/lint/ground.pass.cir");

    fn with_module<F: for<'py> FnOnce(Python<'py>, Bound<'py, PyDict>)>(f: F) {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "verispice").unwrap();
            verispice_module(&m).unwrap();
            let scope = PyDict::new(py);
            scope.set_item("vs", m).unwrap();
            f(py, scope)
        });
    }

    fn run(py: Python<'_>, scope: &Bound<'_, PyDict>, code: &str) {
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(scope), None) {
            panic!("{e}\n{}", e.traceback(py).map(|t| t.format().unwrap()).unwrap_or_default());
        }
    }

    #[test]
    fn netlist_round_trip_and_lint() {
        with_module(|py, scope| {
            scope.set_item("rc", RC).unwrap();
            run(
                py,
                &scope,
                r#"
n = vs.Netlist.parse(rc)
assert n.element_names() == ["V1", "R1", "C1"]
assert vs.Netlist.parse(n.emit()).emit() == n.emit()
assert n.lint().is_clean
bad = vs.Netlist.parse(rc.replace("1 0 5", "1 3 5").replace("2 0 1u", "2 3 1u"))
r = bad.lint()
assert r.has_errors and "GROUND" in [f[0] for f in r.findings()], str(r)
try:
    vs.Netlist.parse("")
    raise AssertionError("empty netlist parsed")
except ValueError:
    pass
"#,
            );
        });
    }

    #[test]
    fn expression_and_comparison() {
        with_module(|py, scope| {
            run(
                py,
                &scope,
                r#"
import math
e = vs.AnswerExpression.parse("10 - 5*exp(-12.5*t)")
assert not e.is_network_function
t = [i * 5e-3 for i in range(101)]
v = e.evaluate(t)
assert all(abs(a - (10 - 5 * math.exp(-12.5 * x))) < 1e-12 for a, x in zip(v, t))
assert vs.compare_values(v, v).is_match
off = [x * 1.01 for x in v]
assert vs.compare_values(off, v).is_match
assert not vs.compare_values(off, v, rel=0.005).is_match
assert vs.tail_window(101) == 6
h = vs.AnswerExpression.parse("1/(1+0.001*s)")
mag, ph = h.evaluate([1000 / (2 * math.pi)])
assert abs(mag[0] - 1 / math.sqrt(2)) < 1e-12 and abs(ph[0] + 45) < 1e-9
d = vs.compare_values([1.0, 2.0], [1.0, 2.0]).to_dict()
assert d["outcome"] == "Match" and d["points"] == 2
"#,
            );
        });
    }

    #[test]
    fn series_parse_and_json() {
        with_module(|py, scope| {
            run(
                py,
                &scope,
                r#"
out = """No. of Data Rows : 3
                      * rc
Index   time            v(2)
--------------------------------------------------------------------------------
0	0.000000e+00	5.000000e+00
1	1.000000e-03	5.500000e+00
2	2.000000e-03	6.000000e+00
"""
s = vs.SimulationSeries.from_stdout(out)
assert len(s) == 3 and s.axis_kind == "time" and s.names() == ["v(2)"]
assert s.column("V(2)") == [5.0, 5.5, 6.0]
assert vs.SimulationSeries.from_json(s.to_json()).column("v(2)") == s.column("v(2)")
"#,
            );
        });
    }
}
