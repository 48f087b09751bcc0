use super::{
    assemble, build_design, covariance, vcov_note, weighted_ls, CovInput, FitParts, FitResult,
    RegressionSpec,
};
use crate::data::DataTable;
use crate::error::{EconError, Result};

/// Ordinary (optionally weighted) least squares.
pub fn ols(table: &DataTable, spec: &RegressionSpec) -> Result<FitResult> {
    if !spec.fixed_effect_factors.is_empty() {
        return Err(EconError::InvalidArgument(
            "ols does not absorb fixed effects; use panel_ols".into(),
        ));
    }
    let d = build_design(table, spec, &[])?;
    let k = d.x.ncols();
    let n = d.n();
    if n < k + 1 {
        return Err(EconError::TooFewRows { needed: k + 1, got: n });
    }
    let fit = weighted_ls(&d.x, &d.y, d.weights.as_deref(), &d.names)?;
    let dof_resid = n - k;
    let (cov, reference) = covariance(
        spec.vcov.kind,
        &CovInput {
            bread: &fit.bread,
            x: &d.x,
            residuals: &fit.residuals,
            weights: d.weights.as_deref(),
            clusters: d.clusters.as_deref(),
            dof_resid,
        },
    )?;

    let w = |i: usize| d.weights.as_ref().map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(w).sum();
    let ybar = if spec.include_intercept {
        (0..n).map(|i| w(i) * d.y[i]).sum::<f64>() / wsum
    } else {
        0.0
    };
    let tss: f64 = (0..n).map(|i| w(i) * (d.y[i] - ybar).powi(2)).sum();
    let ssr: f64 = (0..n).map(|i| w(i) * fit.residuals[i].powi(2)).sum();
    let r_squared = (tss > 0.0).then(|| 1.0 - ssr / tss);

    let mut notes = d.notes();
    notes.push(vcov_note(&spec.vcov, d.n_clusters()));
    Ok(assemble(FitParts {
        method: "ols".into(),
        names: d.names,
        beta: fit.beta,
        cov,
        reference,
        n_obs: n,
        dof_resid,
        r_squared,
        log_likelihood: None,
        notes,
        residuals: fit.residuals,
        rows: d.rows,
    }))
}
