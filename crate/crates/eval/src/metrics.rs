use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::suite::RunRecord;
use crate::task::{Expected, TaskSpec};

/// `|got - expected| / |expected|`; the absolute error when `expected` is 0.
pub fn relative_error(got: f64, expected: f64) -> f64 {
    let diff = (got - expected).abs();
    if expected == 0.0 {
        diff
    } else {
        diff / expected.abs()
    }
}

/// Star level of a p-value: 3 below 0.01, 2 below 0.05, 1 below 0.10, else 0.
pub fn significance_level(p: f64) -> u8 {
    if p < 0.01 {
        3
    } else if p < 0.05 {
        2
    } else if p < 0.10 {
        1
    } else {
        0
    }
}

fn same_direction(got: f64, expected: f64) -> bool {
    got.signum() == expected.signum() || (got == 0.0 && expected == 0.0)
}

/// How the p-value enters the perfect-replication test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PPerfectMode {
    /// Absolute distance below 0.01.
    #[default]
    Absolute,
    /// Relative error below 1%, like the coefficient and standard error.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationClass {
    Perfect,
    PartialOnly,
    Neither,
    Failed,
}

pub fn classify_replication(record: &RunRecord, expected: &Expected, mode: PPerfectMode) -> ReplicationClass {
    let Some(got) = record.extracted.filter(|_| record.completed) else {
        return ReplicationClass::Failed;
    };
    let coef = relative_error(got.coefficient, expected.coefficient);
    let se = relative_error(got.standard_error, expected.standard_error);
    let p = match mode {
        PPerfectMode::Absolute => (got.p_value - expected.p_value).abs(),
        PPerfectMode::Relative => relative_error(got.p_value, expected.p_value),
    };
    if coef < 0.01 && se < 0.01 && p < 0.01 {
        ReplicationClass::Perfect
    } else if coef < 0.05 && se < 0.05 {
        ReplicationClass::PartialOnly
    } else {
        ReplicationClass::Neither
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub count: usize,
    pub total: usize,
    pub rate: f64,
}

impl Rate {
    pub fn new(count: usize, total: usize) -> Self {
        let rate = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        Self { count, total, rate }
    }
}

/// Every row of the replication table for one set of runs. Rates are over
/// all tasks (a failed run counts against every row); medians and means are
/// over completed runs and absent when none completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task_count: usize,
    pub perfect: usize,
    pub partial_only: usize,
    pub neither: usize,
    pub failed: usize,
    pub p_perfect_mode: PPerfectMode,
    pub compilation_success: Rate,
    pub perfect_replication: Rate,
    pub partial_replication: Rate,
    pub correct_direction: Rate,
    pub coefficient_median_error: Option<f64>,
    pub coefficient_error_below_1pct: Rate,
    pub coefficient_error_below_10pct: Rate,
    pub standard_error_median_error: Option<f64>,
    pub standard_error_error_below_1pct: Rate,
    pub standard_error_error_below_10pct: Rate,
    pub p_value_mean_abs_error: Option<f64>,
    pub p_value_median_abs_error: Option<f64>,
    pub p_value_abs_error_below_1pct: Rate,
    pub p_value_abs_error_below_10pct: Rate,
    pub significance_level_correct: Rate,
    pub significance_level_error_1: Rate,
    pub significance_level_error_2: Rate,
    pub significance_level_error_3: Rate,
    /// Partial-replication rate per method family.
    pub partial_by_method: BTreeMap<String, Rate>,
    /// Partial-replication rate per task tag.
    pub partial_by_tag: BTreeMap<String, Rate>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates records aligned index-wise with `tasks`.
pub fn aggregate_metrics(records: &[RunRecord], tasks: &[TaskSpec], mode: PPerfectMode) -> MetricReport {
    let n = tasks.len();
    let mut classes = Vec::with_capacity(n);
    let (mut coef_err, mut se_err, mut p_err) = (Vec::new(), Vec::new(), Vec::new());
    let mut direction = 0;
    let mut sig = [0usize; 4];
    for (i, task) in tasks.iter().enumerate() {
        let record = records.get(i).filter(|r| r.task_id == task.id);
        let class = record.map_or(ReplicationClass::Failed, |r| classify_replication(r, &task.expected, mode));
        classes.push(class);
        if class == ReplicationClass::Failed {
            continue;
        }
        let Some(got) = record.and_then(|r| r.extracted) else { continue };
        let e = task.expected;
        coef_err.push(relative_error(got.coefficient, e.coefficient));
        se_err.push(relative_error(got.standard_error, e.standard_error));
        p_err.push((got.p_value - e.p_value).abs());
        if same_direction(got.coefficient, e.coefficient) {
            direction += 1;
        }
        let gap = significance_level(got.p_value).abs_diff(significance_level(e.p_value));
        sig[gap as usize] += 1;
    }
    let count = |c: ReplicationClass| classes.iter().filter(|x| **x == c).count();
    let (perfect, partial_only, neither, failed) = (
        count(ReplicationClass::Perfect),
        count(ReplicationClass::PartialOnly),
        count(ReplicationClass::Neither),
        count(ReplicationClass::Failed),
    );
    let below = |v: &[f64], t: f64| Rate::new(v.iter().filter(|x| **x < t).count(), n);
    let is_partial = |c: &ReplicationClass| matches!(c, ReplicationClass::Perfect | ReplicationClass::PartialOnly);

    let mut by_method: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut by_tag: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (task, class) in tasks.iter().zip(&classes) {
        let hit = usize::from(is_partial(class));
        let m = by_method.entry(task.method.as_str().to_string()).or_default();
        m.0 += hit;
        m.1 += 1;
        for tag in &task.tags {
            let t = by_tag.entry(tag.as_str().to_string()).or_default();
            t.0 += hit;
            t.1 += 1;
        }
    }
    let rates = |m: BTreeMap<String, (usize, usize)>| m.into_iter().map(|(k, (c, t))| (k, Rate::new(c, t))).collect();

    MetricReport {
        task_count: n,
        perfect,
        partial_only,
        neither,
        failed,
        p_perfect_mode: mode,
        compilation_success: Rate::new(n - failed, n),
        perfect_replication: Rate::new(perfect, n),
        partial_replication: Rate::new(perfect + partial_only, n),
        correct_direction: Rate::new(direction, n),
        coefficient_median_error: median(coef_err.clone()),
        coefficient_error_below_1pct: below(&coef_err, 0.01),
        coefficient_error_below_10pct: below(&coef_err, 0.10),
        standard_error_median_error: median(se_err.clone()),
        standard_error_error_below_1pct: below(&se_err, 0.01),
        standard_error_error_below_10pct: below(&se_err, 0.10),
        p_value_mean_abs_error: mean(&p_err),
        p_value_median_abs_error: median(p_err.clone()),
        p_value_abs_error_below_1pct: below(&p_err, 0.01),
        p_value_abs_error_below_10pct: below(&p_err, 0.10),
        significance_level_correct: Rate::new(sig[0], n),
        significance_level_error_1: Rate::new(sig[1], n),
        significance_level_error_2: Rate::new(sig[2], n),
        significance_level_error_3: Rate::new(sig[3], n),
        partial_by_method: rates(by_method),
        partial_by_tag: rates(by_tag),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_and_errors() {
        assert_eq!(significance_level(0.04), 2);
        assert_eq!(significance_level(0.10), 0);
        assert_eq!(significance_level(0.009), 3);
        assert!((relative_error(-207.8559, -207.7272) - 0.000620).abs() < 5e-7);
        assert_eq!(relative_error(-5.0, 5.0), 2.0);
        assert_eq!(relative_error(0.3, 0.0), 0.3);
        assert!(!same_direction(-5.0, 5.0));
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
