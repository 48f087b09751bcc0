use serde::{Deserialize, Serialize};

use crate::data::{Column, DataTable};
use crate::error::{EconError, Result};
use crate::regression::{panel_ols, FitResult, RegressionSpec, VcovSpec};

/// Two-way fixed-effects difference-in-differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidSpec {
    pub outcome: String,
    /// 0/1 indicator switched on for treated units in post-treatment periods.
    pub treatment: String,
    pub unit: String,
    pub time: String,
    #[serde(default)]
    pub controls: Vec<String>,
    /// Defaults to clustering by unit.
    #[serde(default)]
    pub vcov: Option<VcovSpec>,
}

/// Regresses the outcome on the treatment indicator and controls with unit and
/// time fixed effects.
pub fn did_static(table: &DataTable, spec: &DidSpec) -> Result<FitResult> {
    let vcov = spec.vcov.clone().unwrap_or_else(|| VcovSpec::cluster(spec.unit.clone()));
    let mut regressors = vec![spec.treatment.clone()];
    regressors.extend(spec.controls.iter().cloned());
    let reg = RegressionSpec {
        outcome: spec.outcome.clone(),
        regressors,
        include_intercept: false,
        fixed_effect_factors: vec![spec.unit.clone(), spec.time.clone()],
        vcov,
        weights: None,
    };
    let mut fit = panel_ols(table, &reg)?;
    fit.method = "did_static".into();
    Ok(fit)
}

/// How the first post-adoption dummy is numbered: `Lag_D0` or `Lag_D1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagIndexing {
    #[default]
    ZeroBased,
    OneBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudySpec {
    pub outcome: String,
    pub unit: String,
    pub time: String,
    /// Period in which the unit is first treated; missing for never-treated units.
    pub adoption_time: String,
    pub see_back: usize,
    pub see_forward: usize,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub vcov: Option<VcovSpec>,
    #[serde(default)]
    pub lag_indexing: LagIndexing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub fit: FitResult,
    pub see_back: usize,
    pub see_forward: usize,
    /// Relative period of the omitted reference dummy.
    pub reference_period: i64,
    pub lag_indexing: LagIndexing,
    /// Dummies dropped because no observation fell in their window.
    pub dropped_terms: Vec<String>,
}

pub fn lead_name(k: usize) -> String {
    format!("Lead_D{k}")
}

pub fn lag_name(k: usize, indexing: LagIndexing) -> String {
    match indexing {
        LagIndexing::ZeroBased => format!("Lag_D{k}"),
        LagIndexing::OneBased => format!("Lag_D{}", k + 1),
    }
}

/// Relative-time dummies as (name, relative-period predicate). Endpoints are
/// binned; relative period −1 is the omitted reference.
fn dummy_windows(spec: &EventStudySpec) -> Vec<(String, Box<dyn Fn(i64) -> bool>)> {
    let back = spec.see_back as i64;
    let fwd = spec.see_forward as i64;
    let mut out: Vec<(String, Box<dyn Fn(i64) -> bool>)> = Vec::new();
    for k in (2..=back).rev() {
        let f: Box<dyn Fn(i64) -> bool> =
            if k == back { Box::new(move |r| r <= -k) } else { Box::new(move |r| r == -k) };
        out.push((lead_name(k as usize), f));
    }
    for k in 0..=fwd {
        let f: Box<dyn Fn(i64) -> bool> =
            if k == fwd { Box::new(move |r| r >= k) } else { Box::new(move |r| r == k) };
        out.push((lag_name(k as usize, spec.lag_indexing), f));
    }
    out
}

/// Event-study regression with binned lead and lag dummies, unit and time
/// fixed effects, and clustering by unit unless another covariance is given.
pub fn did_event_study(table: &DataTable, spec: &EventStudySpec) -> Result<EventStudyResult> {
    if spec.see_back < 1 {
        return Err(EconError::InvalidArgument("see_back must be at least 1".into()));
    }
    let time = table.numeric(&spec.time)?;
    let adopt = table.numeric(&spec.adoption_time)?;
    if adopt.iter().all(Option::is_none) {
        return Err(EconError::NoTreatedUnits(spec.adoption_time.clone()));
    }
    let rel: Vec<Option<i64>> = time
        .iter()
        .zip(&adopt)
        .map(|(t, a)| match (t, a) {
            (Some(t), Some(a)) => Some((t - a).round() as i64),
            _ => None,
        })
        .collect();

    let mut augmented = table.clone();
    let mut terms = Vec::new();
    let mut dropped = Vec::new();
    for (name, hit) in dummy_windows(spec) {
        let values: Vec<Option<f64>> = rel
            .iter()
            .zip(&time)
            .map(|(r, t)| match (r, t) {
                (Some(r), _) => Some(if hit(*r) { 1.0 } else { 0.0 }),
                (None, Some(_)) => Some(0.0),
                (None, None) => None,
            })
            .collect();
        if values.iter().all(|v| *v != Some(1.0)) {
            dropped.push(name);
            continue;
        }
        augmented = augmented.with_column(Column::real_opt(name.clone(), values))?;
        terms.push(name);
    }
    if terms.is_empty() {
        return Err(EconError::NoTreatedUnits(spec.adoption_time.clone()));
    }
    terms.extend(spec.controls.iter().cloned());
    let reg = RegressionSpec {
        outcome: spec.outcome.clone(),
        regressors: terms,
        include_intercept: false,
        fixed_effect_factors: vec![spec.unit.clone(), spec.time.clone()],
        vcov: spec.vcov.clone().unwrap_or_else(|| VcovSpec::cluster(spec.unit.clone())),
        weights: None,
    };
    let mut fit = panel_ols(&augmented, &reg)?;
    fit.method = "did_event_study".into();
    fit.notes.push("reference period: relative time -1 (omitted)".into());
    if !dropped.is_empty() {
        fit.notes.push(format!("no observations for {}; dropped", dropped.join(", ")));
    }
    Ok(EventStudyResult {
        fit,
        see_back: spec.see_back,
        see_forward: spec.see_forward,
        reference_period: -1,
        lag_indexing: spec.lag_indexing,
        dropped_terms: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(back: usize, fwd: usize, idx: LagIndexing) -> EventStudySpec {
        EventStudySpec {
            outcome: "y".into(),
            unit: "u".into(),
            time: "t".into(),
            adoption_time: "a".into(),
            see_back: back,
            see_forward: fwd,
            controls: vec![],
            vcov: None,
            lag_indexing: idx,
        }
    }

    #[test]
    fn window_names_and_binning() {
        let w = dummy_windows(&spec(3, 2, LagIndexing::ZeroBased));
        let names: Vec<&str> = w.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["Lead_D3", "Lead_D2", "Lag_D0", "Lag_D1", "Lag_D2"]);
        assert!(w[0].1(-7));
        assert!(!w[1].1(-3));
        assert!(w.iter().all(|(_, f)| !f(-1)));
        assert!(w[4].1(9));
    }

    #[test]
    fn one_based_lags() {
        let w = dummy_windows(&spec(1, 1, LagIndexing::OneBased));
        let names: Vec<&str> = w.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["Lag_D1", "Lag_D2"]);
    }
}
