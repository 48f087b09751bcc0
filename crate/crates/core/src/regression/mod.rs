//! Linear and logistic regression with classical, HC1 and cluster-robust covariance.

mod logit;
mod ols;
mod panel;

pub use logit::{logit_fit, predict_proba};
pub use ols::ols;
pub use panel::panel_ols;

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::DataTable;
use crate::error::{EconError, Result};
use crate::linalg::PivotedQr;

/// Coefficient name used for the intercept.
pub const INTERCEPT: &str = "const";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcovKind {
    Classical,
    RobustHc1,
    Cluster,
}

/// Covariance estimator choice; `cluster_column` is set exactly when clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcovSpec {
    pub kind: VcovKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_column: Option<String>,
}

impl VcovSpec {
    pub fn classical() -> Self {
        Self { kind: VcovKind::Classical, cluster_column: None }
    }

    pub fn robust() -> Self {
        Self { kind: VcovKind::RobustHc1, cluster_column: None }
    }

    pub fn cluster(column: impl Into<String>) -> Self {
        Self { kind: VcovKind::Cluster, cluster_column: Some(column.into()) }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.cluster_column) {
            (VcovKind::Cluster, Some(_)) | (VcovKind::Classical | VcovKind::RobustHc1, None) => {
                Ok(())
            }
            (VcovKind::Cluster, None) => {
                Err(EconError::InvalidArgument("cluster covariance needs a cluster column".into()))
            }
            (_, Some(c)) => Err(EconError::InvalidArgument(format!(
                "cluster column '{c}' given for non-cluster covariance"
            ))),
        }
    }
}

impl Default for VcovSpec {
    fn default() -> Self {
        Self::classical()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: String,
    pub regressors: Vec<String>,
    pub include_intercept: bool,
    #[serde(default)]
    pub fixed_effect_factors: Vec<String>,
    #[serde(default)]
    pub vcov: VcovSpec,
    #[serde(default)]
    pub weights: Option<String>,
}

impl RegressionSpec {
    pub fn new(outcome: impl Into<String>, regressors: &[&str]) -> Self {
        Self {
            outcome: outcome.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            include_intercept: true,
            fixed_effect_factors: Vec::new(),
            vcov: VcovSpec::classical(),
            weights: None,
        }
    }

    pub fn no_intercept(mut self) -> Self {
        self.include_intercept = false;
        self
    }

    pub fn with_vcov(mut self, vcov: VcovSpec) -> Self {
        self.vcov = vcov;
        self
    }

    pub fn with_fixed_effects(mut self, factors: &[&str]) -> Self {
        self.fixed_effect_factors = factors.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_weights(mut self, column: impl Into<String>) -> Self {
        self.weights = Some(column.into());
        self
    }

    fn validate(&self) -> Result<()> {
        if self.regressors.iter().any(|r| r == &self.outcome) {
            return Err(EconError::InvalidArgument(format!(
                "outcome '{}' also appears among the regressors",
                self.outcome
            )));
        }
        if let Some(f) = self.fixed_effect_factors.iter().find(|f| self.regressors.contains(f)) {
            return Err(EconError::InvalidArgument(format!(
                "'{f}' is both a regressor and a fixed-effect factor"
            )));
        }
        self.vcov.validate()
    }
}

/// Reference distribution used for p-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum Reference {
    StudentT { dof: f64 },
    Normal,
}

impl Reference {
    pub fn two_sided_p(&self, coef: f64, se: f64) -> f64 {
        if se == 0.0 || !se.is_finite() {
            return if coef == 0.0 || se.is_nan() { 1.0 } else { 0.0 };
        }
        let t = (coef / se).abs();
        let sf = match self {
            Reference::StudentT { dof } => StudentsT::new(0.0, 1.0, *dof)
                .map(|d| d.sf(t))
                .unwrap_or(f64::NAN),
            Reference::Normal => Normal::new(0.0, 1.0).map(|d| d.sf(t)).unwrap_or(f64::NAN),
        };
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

/// Universal estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub standard_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_obs: usize,
    pub dof_resid: usize,
    pub r_squared: Option<f64>,
    pub reference: Reference,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    pub notes: Vec<String>,
    /// Unweighted residuals on the estimation rows.
    #[serde(default, skip_serializing)]
    pub residuals: Vec<f64>,
    /// Indices into the input table of the rows that entered estimation.
    #[serde(default, skip_serializing)]
    pub rows: Vec<usize>,
}

impl FitResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coefficient_names.iter().position(|n| n == name)
    }

    /// (coefficient, standard error, p-value) for the named term.
    pub fn term(&self, name: &str) -> Option<(f64, f64, f64)> {
        self.index_of(name)
            .map(|i| (self.coefficients[i], self.standard_errors[i], self.p_values[i]))
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.0)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.1)
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.2)
    }
}

/// Numeric design after listwise deletion.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub weights: Option<Vec<f64>>,
    pub clusters: Option<Vec<usize>>,
    pub rows: Vec<usize>,
    pub dropped: usize,
}

impl Design {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.as_ref().map_or(0, |c| c.iter().max().map_or(0, |m| m + 1))
    }

    pub fn notes(&self) -> Vec<String> {
        if self.dropped > 0 {
            vec![format!("{} row(s) dropped for missing values", self.dropped)]
        } else {
            Vec::new()
        }
    }
}

/// Dense integer ids for the distinct keys, in order of first appearance.
pub(crate) fn group_ids(keys: &[String]) -> (Vec<usize>, usize) {
    let mut map: HashMap<&str, usize> = HashMap::new();
    let ids = keys
        .iter()
        .map(|k| {
            let next = map.len();
            *map.entry(k.as_str()).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

/// Builds y and X over complete rows. `extra` columns take part in listwise
/// deletion without entering X (fixed-effect factors, for instance).
pub(crate) fn build_design(
    table: &DataTable,
    spec: &RegressionSpec,
    extra: &[&str],
) -> Result<Design> {
    spec.validate()?;
    let mut needed: Vec<&str> = vec![spec.outcome.as_str()];
    needed.extend(spec.regressors.iter().map(String::as_str));
    needed.extend(extra.iter().copied());
    if let Some(c) = &spec.vcov.cluster_column {
        needed.push(c.as_str());
    }
    if let Some(w) = &spec.weights {
        needed.push(w.as_str());
    }
    let y_all = table.numeric(&spec.outcome)?;
    let x_all: Vec<Vec<Option<f64>>> =
        spec.regressors.iter().map(|r| table.numeric(r)).collect::<Result<_>>()?;
    let w_all = spec.weights.as_ref().map(|w| table.numeric(w)).transpose()?;
    let mut rows = table.complete_rows(&needed)?;
    if let Some(w) = &w_all {
        rows.retain(|&r| w[r].is_some_and(|v| v > 0.0));
    }
    let dropped = table.row_count() - rows.len();

    let k = spec.regressors.len() + usize::from(spec.include_intercept);
    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, k);
    let mut names = Vec::with_capacity(k);
    let mut col = 0;
    if spec.include_intercept {
        x.column_mut(0).fill(1.0);
        names.push(INTERCEPT.to_string());
        col = 1;
    }
    for (j, xs) in x_all.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            x[(i, col + j)] = xs[r].expect("complete row");
        }
        names.push(spec.regressors[j].clone());
    }
    let y = rows.iter().map(|&r| y_all[r].expect("complete row")).collect();
    let weights = w_all.map(|w| rows.iter().map(|&r| w[r].expect("complete row")).collect());
    let clusters = match &spec.vcov.cluster_column {
        Some(c) => {
            let keys = table.column(c)?.keys();
            let sel: Vec<String> = rows.iter().map(|&r| keys[r].clone().unwrap_or_default()).collect();
            Some(group_ids(&sel).0)
        }
        None => None,
    };
    Ok(Design { y, x, names, weights, clusters, rows, dropped })
}

pub(crate) struct LinearFit {
    pub beta: Vec<f64>,
    /// (XᵀWX)⁻¹
    pub bread: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

/// Weighted least squares by pivoted QR on √w·X.
pub(crate) fn weighted_ls(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    names: &[String],
) -> Result<LinearFit> {
    let (xs, ys) = match w {
        Some(w) => {
            let mut xs = x.clone();
            let mut ys = y.to_vec();
            for (i, wi) in w.iter().enumerate() {
                let s = wi.sqrt();
                xs.row_mut(i).scale_mut(s);
                ys[i] *= s;
            }
            (xs, ys)
        }
        None => (x.clone(), y.to_vec()),
    };
    let qr = PivotedQr::new(&xs);
    if !qr.is_full_rank() {
        return Err(EconError::RankDeficient {
            columns: qr.deficient_columns().into_iter().map(|j| names[j].clone()).collect(),
        });
    }
    let beta = qr.solve(&ys);
    let fitted = x * nalgebra::DVector::from_column_slice(&beta);
    let residuals = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    Ok(LinearFit { beta, bread: qr.xtx_inverse(), residuals })
}

pub(crate) struct CovInput<'a> {
    pub bread: &'a DMatrix<f64>,
    /// Rows used to form the scores (X for OLS, fitted X̂ for 2SLS).
    pub x: &'a DMatrix<f64>,
    pub residuals: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub clusters: Option<&'a [usize]>,
    pub dof_resid: usize,
}

/// Covariance under `kind` with HC1 and Stata-style cluster small-sample factors.
/// Returns the covariance and the reference distribution for inference.
pub(crate) fn covariance(kind: VcovKind, input: &CovInput<'_>) -> Result<(DMatrix<f64>, Reference)> {
    let n = input.residuals.len();
    let k = input.bread.nrows();
    let dof = input.dof_resid as f64;
    let w = |i: usize| input.weights.map_or(1.0, |w| w[i]);
    match kind {
        VcovKind::Classical => {
            let ssr: f64 = input.residuals.iter().enumerate().map(|(i, e)| w(i) * e * e).sum();
            Ok((input.bread * (ssr / dof), Reference::StudentT { dof }))
        }
        VcovKind::RobustHc1 => {
            let mut meat = DMatrix::<f64>::zeros(k, k);
            for i in 0..n {
                let s = w(i) * input.residuals[i];
                let xi = input.x.row(i);
                meat += (xi.transpose() * xi) * (s * s);
            }
            let factor = n as f64 / dof;
            Ok((input.bread * meat * input.bread * factor, Reference::StudentT { dof }))
        }
        VcovKind::Cluster => {
            let clusters = input.clusters.ok_or_else(|| {
                EconError::InvalidArgument("cluster covariance without cluster ids".into())
            })?;
            let g = clusters.iter().max().map_or(0, |m| m + 1);
            if g < 2 {
                return Err(EconError::InvalidArgument(
                    "cluster covariance needs at least two clusters".into(),
                ));
            }
            let mut sums = DMatrix::<f64>::zeros(g, k);
            for i in 0..n {
                let s = w(i) * input.residuals[i];
                let mut row = sums.row_mut(clusters[i]);
                row += input.x.row(i) * s;
            }
            let meat = sums.transpose() * &sums;
            let gf = g as f64;
            let factor = gf / (gf - 1.0) * (n as f64 - 1.0) / dof;
            Ok((input.bread * meat * input.bread * factor, Reference::StudentT { dof: gf - 1.0 }))
        }
    }
}

pub(crate) struct FitParts {
    pub method: String,
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub reference: Reference,
    pub n_obs: usize,
    pub dof_resid: usize,
    pub r_squared: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub notes: Vec<String>,
    pub residuals: Vec<f64>,
    pub rows: Vec<usize>,
}

pub(crate) fn assemble(parts: FitParts) -> FitResult {
    let k = parts.beta.len();
    let mut covariance = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            covariance[i][j] = 0.5 * (parts.cov[(i, j)] + parts.cov[(j, i)]);
        }
    }
    let standard_errors: Vec<f64> = (0..k).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let p_values = parts
        .beta
        .iter()
        .zip(&standard_errors)
        .map(|(b, s)| parts.reference.two_sided_p(*b, *s))
        .collect();
    FitResult {
        method: parts.method,
        coefficient_names: parts.names,
        coefficients: parts.beta,
        covariance,
        standard_errors,
        p_values,
        n_obs: parts.n_obs,
        dof_resid: parts.dof_resid,
        r_squared: parts.r_squared,
        reference: parts.reference,
        log_likelihood: parts.log_likelihood,
        notes: parts.notes,
        residuals: parts.residuals,
        rows: parts.rows,
    }
}

pub(crate) fn vcov_note(vcov: &VcovSpec, n_clusters: usize) -> String {
    match vcov.kind {
        VcovKind::Classical => "covariance: classical".into(),
        VcovKind::RobustHc1 => "covariance: heteroskedasticity-robust (HC1)".into(),
        VcovKind::Cluster => format!(
            "covariance: clustered by {} ({} clusters)",
            vcov.cluster_column.as_deref().unwrap_or("?"),
            n_clusters
        ),
    }
}
