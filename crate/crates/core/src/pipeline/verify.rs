//! Comparison of every extracted answer against its simulator column.

use serde::{Deserialize, Serialize};

use crate::compare::{
    compare_channel, evaluate, Channel, ComparisonReport, Evaluated, MatchedBy, Outcome,
    TolerancePolicy,
};
use crate::llm::ExtractedAnswer;
use crate::model::{Target, TargetKind};
use crate::sim::SimulationSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVerdict {
    pub target: String,
    pub outcome: Outcome,
    pub reports: Vec<ComparisonReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub outcome: Outcome,
    /// `TailOnly` if any channel matched only on its tail window.
    pub matched_by: Option<MatchedBy>,
    pub targets: Vec<TargetVerdict>,
}

impl Verification {
    pub fn is_match(&self) -> bool {
        self.outcome == Outcome::Match
    }
}

fn column<'a>(series: &'a SimulationSeries, name: &str) -> Result<&'a [f64], String> {
    series
        .variable(name)
        .ok_or_else(|| format!("simulator output has no column `{name}`"))
}

fn verdict(target: &Target, answer: Option<&ExtractedAnswer>, series: &SimulationSeries, policy: &TolerancePolicy) -> TargetVerdict {
    let fail = |error: String| TargetVerdict {
        target: target.name.clone(),
        outcome: Outcome::Mismatch,
        reports: Vec::new(),
        error: Some(error),
    };
    let Some(answer) = answer else {
        return fail("no extracted answer".into());
    };
    let evaluated = match evaluate(&answer.expression, &series.axis, series.axis_kind) {
        Ok(e) => e,
        Err(e) => return fail(e.to_string()),
    };
    let mut reports = Vec::new();
    match (target.kind, evaluated) {
        (TargetKind::NetworkFunction, Evaluated::Polar { magnitude, phase_deg }) => {
            let mag_name = target.magnitude_column();
            match column(series, mag_name) {
                Ok(sim) => reports.push(compare_channel(mag_name, Channel::Value, sim, &magnitude, policy)),
                Err(e) => return fail(e),
            }
            if let Some(p) = &target.phase {
                match column(series, p) {
                    Ok(sim) => reports.push(compare_channel(p, Channel::Phase, sim, &phase_deg, policy)),
                    Err(e) => return fail(e),
                }
            }
        }
        (TargetKind::TimeSeries | TargetKind::Scalar, Evaluated::Real(values)) => match column(series, &target.name) {
            Ok(sim) => reports.push(compare_channel(&target.name, Channel::Value, sim, &values, policy)),
            Err(e) => return fail(e),
        },
        (kind, _) => return fail(format!("answer type does not fit a {kind:?} target")),
    }
    let outcome = if reports.iter().all(ComparisonReport::is_match) {
        Outcome::Match
    } else {
        Outcome::Mismatch
    };
    TargetVerdict {
        target: target.name.clone(),
        outcome,
        reports,
        error: None,
    }
}

/// Evaluates each answer on the simulator's own grid and compares it with
/// the matching column. The problem matches only if every target does.
pub fn verify_targets(
    series: &SimulationSeries,
    answers: &[ExtractedAnswer],
    targets: &[Target],
    policy: &TolerancePolicy,
) -> Verification {
    let targets: Vec<TargetVerdict> = targets
        .iter()
        .map(|t| verdict(t, answers.iter().find(|a| a.target == t.name), series, policy))
        .collect();
    let is_match = !targets.is_empty() && targets.iter().all(|t| t.outcome == Outcome::Match);
    let matched_by = is_match.then(|| {
        let tail = targets
            .iter()
            .flat_map(|t| &t.reports)
            .any(|r| r.matched_by == Some(MatchedBy::TailOnly));
        if tail {
            MatchedBy::TailOnly
        } else {
            MatchedBy::Global
        }
    });
    Verification {
        outcome: if is_match { Outcome::Match } else { Outcome::Mismatch },
        matched_by,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compare::{parse_expression, AxisKind};

    fn answer(target: &str, text: &str) -> ExtractedAnswer {
        ExtractedAnswer {
            target: target.into(),
            text: text.into(),
            expression: parse_expression(text).unwrap(),
        }
    }

    fn rc_series() -> SimulationSeries {
        let t: Vec<f64> = (0..=50).map(|i| i as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|&t| 10.0 - 5.0 * (-12.5 * t).exp()).collect();
        SimulationSeries::new(AxisKind::Time, t, vec![("vout".into(), v)]).unwrap()
    }

    #[test]
    fn matching_time_series() {
        let v = verify_targets(
            &rc_series(),
            &[answer("vout", "10 - 5*exp(-12.5*t)")],
            &[Target::time_series("vout")],
            &TolerancePolicy::default(),
        );
        assert!(v.is_match());
        assert_eq!(v.matched_by, Some(MatchedBy::Global));
    }

    #[test]
    fn wrong_answer_and_missing_column_mismatch() {
        let policy = TolerancePolicy::default();
        let v = verify_targets(&rc_series(), &[answer("vout", "9 - 5*exp(-12.5*t)")], &[Target::time_series("vout")], &policy);
        assert!(!v.is_match());
        let v = verify_targets(&rc_series(), &[answer("ix", "1")], &[Target::time_series("ix")], &policy);
        assert!(v.targets[0].error.as_ref().unwrap().contains("no column `ix`"));
    }

    #[test]
    fn network_function_on_time_axis_is_a_type_error() {
        let v = verify_targets(
            &rc_series(),
            &[answer("vout", "H = (1) / (1 + 0.08*s)")],
            &[Target::time_series("vout")],
            &TolerancePolicy::default(),
        );
        assert_eq!(v.outcome, Outcome::Mismatch);
        assert!(v.targets[0].error.is_some());
    }

    #[test]
    fn network_function_magnitude_and_phase() {
        let f: Vec<f64> = (0..40).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let h: Vec<num_complex::Complex64> = f
            .iter()
            .map(|&f| 1.0 / (num_complex::Complex64::new(1.0, 0.08 * 2.0 * std::f64::consts::PI * f)))
            .collect();
        let series = SimulationSeries::new(
            AxisKind::Frequency,
            f,
            vec![
                ("hmag".into(), h.iter().map(|z| z.norm()).collect()),
                ("hph".into(), h.iter().map(|z| z.arg().to_degrees()).collect()),
            ],
        )
        .unwrap();
        let target = Target {
            name: "H".into(),
            kind: TargetKind::NetworkFunction,
            magnitude: Some("hmag".into()),
            phase: Some("hph".into()),
        };
        let v = verify_targets(&series, &[answer("H", "H = (1) / (1 + 0.08*s)")], std::slice::from_ref(&target), &TolerancePolicy::default());
        assert!(v.is_match(), "{v:?}");
        assert_eq!(v.targets[0].reports.len(), 2);
        let v = verify_targets(&series, &[answer("H", "H = (1) / (1 + 0.8*s)")], &[target], &TolerancePolicy::default());
        assert!(!v.is_match());
    }
}
