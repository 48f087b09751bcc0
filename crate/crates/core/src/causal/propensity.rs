use serde::{Deserialize, Serialize};

use crate::data::{one_hot_encode, Column, DataTable};
use crate::error::{EconError, Result};
use crate::regression::{logit_fit, ols, predict_proba, FitResult, RegressionSpec, VcovSpec};

/// Column name given to the estimated score in second-stage regressions.
pub const SCORE_COLUMN: &str = "pscore";

/// Fitted propensity model together with the encoded table it was fitted on.
#[derive(Debug, Clone)]
pub struct PropensityScores {
    /// One entry per input row; `None` for rows outside the estimation sample.
    pub scores: Vec<Option<f64>>,
    pub model: FitResult,
    /// Input table with categorical covariates replaced by indicators.
    pub encoded: DataTable,
    /// Regressors that entered the logit, after encoding.
    pub regressors: Vec<String>,
}

/// Expands `covariates`, replacing each categorical one by its indicator columns.
pub(crate) fn encode_covariates(
    table: &DataTable,
    covariates: &[String],
    categorical: &[String],
) -> Result<(DataTable, Vec<String>)> {
    if let Some(c) = categorical.iter().find(|c| !covariates.contains(c)) {
        return Err(EconError::InvalidArgument(format!(
            "categorical column '{c}' is not among the covariates"
        )));
    }
    let encoded = one_hot_encode(table, categorical, true)?;
    let mut regressors = Vec::new();
    for c in covariates {
        if categorical.contains(c) {
            let prefix = format!("{c}__");
            regressors.extend(
                encoded
                    .column_names()
                    .into_iter()
                    .filter(|n| n.starts_with(&prefix) && !table.has_column(n))
                    .map(str::to_string),
            );
        } else {
            table.column(c)?;
            regressors.push(c.clone());
        }
    }
    Ok((encoded, regressors))
}

/// Logit propensity model of `treatment` on the covariates (categorical ones
/// one-hot encoded with a dropped reference level).
pub fn estimate_propensity_scores(
    table: &DataTable,
    treatment: &str,
    covariates: &[String],
    categorical: &[String],
) -> Result<PropensityScores> {
    let (encoded, regressors) = encode_covariates(table, covariates, categorical)?;
    let refs: Vec<&str> = regressors.iter().map(String::as_str).collect();
    let model = logit_fit(&encoded, &RegressionSpec::new(treatment, &refs), 100, 1e-8)?;
    let predicted = predict_proba(&model, &encoded)?;
    let mut scores = vec![None; table.row_count()];
    for &r in &model.rows {
        scores[r] = predicted[r];
    }
    Ok(PropensityScores { scores, model, encoded, regressors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimMode {
    Quantile,
    Threshold,
}

/// Which scores survive trimming. Quantile mode reads (lower, upper) as score
/// quantiles, threshold mode as raw cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimRule {
    pub mode: TrimMode,
    pub lower: f64,
    pub upper: f64,
}

impl TrimRule {
    pub fn quantile(lower: f64, upper: f64) -> Self {
        Self { mode: TrimMode::Quantile, lower, upper }
    }

    pub fn threshold(lower: f64, upper: f64) -> Self {
        Self { mode: TrimMode::Threshold, lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..0.5).contains(&self.lower)
            && self.upper > 0.5
            && self.upper <= 1.0
            && self.lower < self.upper;
        if ok {
            Ok(())
        } else {
            Err(EconError::InvalidArgument(format!(
                "trim bounds must satisfy 0 <= lower < 0.5 < upper <= 1, got ({}, {})",
                self.lower, self.upper
            )))
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Keep-mask for `scores`. Quantile mode keeps scores strictly between the two
/// empirical quantiles; threshold mode keeps `lower <= score <= upper`.
pub fn trim_by_score(scores: &[f64], rule: &TrimRule) -> Result<Vec<bool>> {
    rule.validate()?;
    if scores.is_empty() {
        return Err(EconError::InvalidArgument("no scores to trim".into()));
    }
    let mask: Vec<bool> = match rule.mode {
        TrimMode::Quantile => {
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let lo = quantile(&sorted, rule.lower);
            let hi = quantile(&sorted, rule.upper);
            scores.iter().map(|&s| s > lo && s < hi).collect()
        }
        TrimMode::Threshold => {
            scores.iter().map(|&s| s >= rule.lower && s <= rule.upper).collect()
        }
    };
    if !mask.iter().any(|&k| k) {
        return Err(EconError::AllTrimmed);
    }
    Ok(mask)
}

/// Arguments of [`ps_regression_adjustment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsRegressionSpec {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub trim: Option<TrimRule>,
    #[serde(default)]
    pub include_covariates_second_stage: bool,
    #[serde(default)]
    pub vcov: VcovSpec,
}

/// Propensity-score regression adjustment: fit scores on the full sample,
/// trim, then regress the outcome on treatment and score over the survivors.
/// The treatment coefficient is the effect.
pub fn ps_regression_adjustment(table: &DataTable, spec: &PsRegressionSpec) -> Result<FitResult> {
    let ps = estimate_propensity_scores(table, &spec.treatment, &spec.covariates, &spec.categorical)?;
    let score_name = if ps.encoded.has_column(SCORE_COLUMN) {
        format!("{SCORE_COLUMN}_")
    } else {
        SCORE_COLUMN.to_string()
    };
    let with_score = ps.encoded.with_column(Column::real_opt(score_name.clone(), ps.scores.clone()))?;

    let scored: Vec<usize> = (0..table.row_count()).filter(|&r| ps.scores[r].is_some()).collect();
    let mut keep = vec![false; table.row_count()];
    let mut note = None;
    match &spec.trim {
        Some(rule) => {
            let s: Vec<f64> = scored.iter().map(|&r| ps.scores[r].unwrap()).collect();
            let mask = trim_by_score(&s, rule)?;
            let kept = mask.iter().filter(|&&k| k).count();
            for (&r, k) in scored.iter().zip(mask) {
                keep[r] = k;
            }
            note = Some(format!(
                "trimmed {} of {} scored row(s) ({:?} rule [{}, {}])",
                scored.len() - kept,
                scored.len(),
                rule.mode,
                rule.lower,
                rule.upper
            ));
        }
        None => scored.iter().for_each(|&r| keep[r] = true),
    }
    let sample = with_score.filter_rows(&keep)?;

    let mut regressors = vec![spec.treatment.clone(), score_name];
    if spec.include_covariates_second_stage {
        regressors.extend(ps.regressors.iter().cloned());
    }
    let second = RegressionSpec {
        outcome: spec.outcome.clone(),
        regressors,
        include_intercept: true,
        fixed_effect_factors: Vec::new(),
        vcov: spec.vcov.clone(),
        weights: None,
    };
    let mut fit = ols(&sample, &second)?;
    let kept_rows: Vec<usize> = (0..table.row_count()).filter(|&r| keep[r]).collect();
    fit.rows = fit.rows.iter().map(|&i| kept_rows[i]).collect();
    fit.method = "ps_regression_adjustment".into();
    let mut notes = vec![format!(
        "propensity logit on {} row(s), {} regressor(s)",
        ps.model.n_obs,
        ps.regressors.len()
    )];
    notes.extend(note);
    notes.append(&mut fit.notes);
    fit.notes = notes;
    Ok(fit)
}
