use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{EconError, Result};
use crate::linalg::PivotedQr;
use crate::regression::{
    assemble, covariance, group_ids, vcov_note, weighted_ls, CovInput, FitParts, FitResult,
    VcovSpec, INTERCEPT,
};

/// First-stage F below this value triggers a weak-instrument note.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvSpec {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default = "yes")]
    pub include_intercept: bool,
    #[serde(default)]
    pub vcov: VcovSpec,
}

fn yes() -> bool {
    true
}

impl IvSpec {
    pub fn new(outcome: &str, endogenous: &[&str], instruments: &[&str], exogenous: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            outcome: outcome.into(),
            endogenous: own(endogenous),
            instruments: own(instruments),
            exogenous: own(exogenous),
            include_intercept: true,
            vcov: VcovSpec::classical(),
        }
    }

    pub fn with_vcov(mut self, vcov: VcovSpec) -> Self {
        self.vcov = vcov;
        self
    }
}

fn matrix(cols: &[&Vec<f64>], n: usize, intercept: bool) -> DMatrix<f64> {
    let off = usize::from(intercept);
    let mut m = DMatrix::zeros(n, cols.len() + off);
    if intercept {
        m.column_mut(0).fill(1.0);
    }
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j + off).copy_from_slice(c);
    }
    m
}

fn rss(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    if x.ncols() == 0 {
        return y.iter().map(|v| v * v).sum();
    }
    let beta = PivotedQr::new(x).solve(y);
    let fitted = x * DVector::from_column_slice(&beta);
    y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Two-stage least squares. Standard errors use the structural residuals
/// y − Xβ with the projected regressors in the bread and scores.
pub fn iv_2sls(table: &DataTable, spec: &IvSpec) -> Result<FitResult> {
    spec.vcov.validate()?;
    if spec.endogenous.is_empty() {
        return Err(EconError::InvalidArgument("no endogenous regressor given".into()));
    }
    if spec.instruments.len() < spec.endogenous.len() {
        return Err(EconError::UnderIdentified {
            instruments: spec.instruments.len(),
            endogenous: spec.endogenous.len(),
        });
    }
    if let Some(e) = spec.endogenous.iter().find(|e| spec.exogenous.contains(e)) {
        return Err(EconError::InvalidArgument(format!(
            "'{e}' is listed as both endogenous and exogenous"
        )));
    }

    let mut needed: Vec<&str> = vec![spec.outcome.as_str()];
    for name in spec.endogenous.iter().chain(&spec.instruments).chain(&spec.exogenous) {
        if !needed.contains(&name.as_str()) {
            needed.push(name);
        }
    }
    if let Some(c) = &spec.vcov.cluster_column {
        needed.push(c);
    }
    let rows = table.complete_rows(&needed)?;
    let n = rows.len();
    let get = |name: &str| -> Result<Vec<f64>> {
        let col = table.numeric(name)?;
        Ok(rows.iter().map(|&r| col[r].expect("complete row")).collect())
    };
    let y = get(&spec.outcome)?;
    let endog: Vec<Vec<f64>> = spec.endogenous.iter().map(|c| get(c)).collect::<Result<_>>()?;
    let exog: Vec<Vec<f64>> = spec.exogenous.iter().map(|c| get(c)).collect::<Result<_>>()?;
    let excluded: Vec<Vec<f64>> = spec
        .instruments
        .iter()
        .filter(|z| !spec.exogenous.contains(z))
        .map(|c| get(c))
        .collect::<Result<_>>()?;
    if excluded.len() < endog.len() {
        return Err(EconError::UnderIdentified { instruments: excluded.len(), endogenous: endog.len() });
    }

    let mut x_names: Vec<String> = Vec::new();
    if spec.include_intercept {
        x_names.push(INTERCEPT.into());
    }
    x_names.extend(spec.endogenous.iter().cloned());
    x_names.extend(spec.exogenous.iter().cloned());
    let k = x_names.len();
    if n < k + 1 {
        return Err(EconError::TooFewRows { needed: k + 1, got: n });
    }

    let x_cols: Vec<&Vec<f64>> = endog.iter().chain(&exog).collect();
    let x = matrix(&x_cols, n, spec.include_intercept);
    let z_cols: Vec<&Vec<f64>> = exog.iter().chain(&excluded).collect();
    let z = matrix(&z_cols, n, spec.include_intercept);
    let z_names: Vec<String> = x_names
        .iter()
        .filter(|nm| !spec.endogenous.contains(nm))
        .cloned()
        .chain(spec.instruments.iter().filter(|z| !spec.exogenous.contains(z)).cloned())
        .collect();
    let zqr = PivotedQr::new(&z);
    if !zqr.is_full_rank() {
        return Err(EconError::RankDeficient {
            columns: zqr.deficient_columns().into_iter().map(|j| z_names[j].clone()).collect(),
        });
    }

    let off = usize::from(spec.include_intercept);
    let mut x_hat = x.clone();
    for (j, e) in endog.iter().enumerate() {
        let g = zqr.solve(e);
        let fitted = &z * DVector::from_column_slice(&g);
        x_hat.column_mut(off + j).copy_from(&fitted);
    }
    let second = weighted_ls(&x_hat, &y, None, &x_names)?;
    let fitted = &x * DVector::from_column_slice(&second.beta);
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();

    let clusters = match &spec.vcov.cluster_column {
        Some(c) => {
            let keys = table.column(c)?.keys();
            let sel: Vec<String> = rows.iter().map(|&r| keys[r].clone().unwrap_or_default()).collect();
            Some(group_ids(&sel))
        }
        None => None,
    };
    let dof_resid = n - k;
    let (cov, reference) = covariance(
        spec.vcov.kind,
        &CovInput {
            bread: &second.bread,
            x: &x_hat,
            residuals: &residuals,
            weights: None,
            clusters: clusters.as_ref().map(|c| c.0.as_slice()),
            dof_resid,
        },
    )?;

    let mut notes = Vec::new();
    if rows.len() < table.row_count() {
        notes.push(format!("{} row(s) dropped for missing values", table.row_count() - n));
    }
    notes.push(vcov_note(&spec.vcov, clusters.as_ref().map_or(0, |c| c.1)));
    let restricted = matrix(&exog.iter().collect::<Vec<_>>(), n, spec.include_intercept);
    let m = excluded.len() as f64;
    let dof_u = (n - z.ncols()) as f64;
    for (name, e) in spec.endogenous.iter().zip(&endog) {
        let rss_u = rss(&z, e);
        let rss_r = rss(&restricted, e);
        let f = if rss_u <= 1e-12 * rss_r.max(f64::MIN_POSITIVE) {
            f64::INFINITY
        } else {
            ((rss_r - rss_u) / m) / (rss_u / dof_u)
        };
        notes.push(format!("first-stage F({name}) = {f:.4}"));
        if f < WEAK_INSTRUMENT_F {
            notes.push(format!(
                "weak instruments: first-stage F for {name} is below {WEAK_INSTRUMENT_F}"
            ));
        }
    }

    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = if spec.include_intercept {
        y.iter().map(|v| (v - ybar).powi(2)).sum()
    } else {
        y.iter().map(|v| v * v).sum()
    };
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    Ok(assemble(FitParts {
        method: "iv_2sls".into(),
        names: x_names,
        beta: second.beta,
        cov,
        reference,
        n_obs: n,
        dof_resid,
        r_squared: (tss > 0.0).then(|| 1.0 - ssr / tss),
        log_likelihood: None,
        notes,
        residuals,
        rows,
    }))
}

/// First-stage F statistics parsed back out of the notes of an [`iv_2sls`] fit.
pub fn first_stage_f(fit: &FitResult) -> Vec<(String, f64)> {
    fit.notes
        .iter()
        .filter_map(|n| {
            let rest = n.strip_prefix("first-stage F(")?;
            let (name, value) = rest.split_once(") = ")?;
            Some((name.to_string(), value.parse().ok()?))
        })
        .collect()
}
