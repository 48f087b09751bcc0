use nalgebra::DMatrix;

use super::{
    assemble, build_design, covariance, group_ids, vcov_note, weighted_ls, CovInput, FitParts,
    FitResult, RegressionSpec,
};
use crate::data::DataTable;
use crate::error::{EconError, Result};

const DEMEAN_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

struct Factor {
    ids: Vec<usize>,
    levels: usize,
}

/// Subtracts (weighted) group means for every factor in turn until the largest
/// cell change in a sweep drops below the tolerance. One factor converges in a
/// single sweep; several factors use alternating projections.
fn demean(columns: &mut [Vec<f64>], factors: &[Factor], w: Option<&[f64]>) -> Result<usize> {
    let n = columns.first().map_or(0, Vec::len);
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let scale = columns
        .iter()
        .flat_map(|c| c.iter())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    for sweep in 1..=MAX_SWEEPS {
        let mut max_change = 0.0_f64;
        for f in factors {
            let mut wsum = vec![0.0; f.levels];
            for i in 0..n {
                wsum[f.ids[i]] += weight(i);
            }
            for col in columns.iter_mut() {
                let mut sums = vec![0.0; f.levels];
                for i in 0..n {
                    sums[f.ids[i]] += weight(i) * col[i];
                }
                for g in 0..f.levels {
                    sums[g] /= wsum[g];
                    max_change = max_change.max(sums[g].abs());
                }
                for i in 0..n {
                    col[i] -= sums[f.ids[i]];
                }
            }
        }
        if max_change < DEMEAN_TOL * scale || factors.len() == 1 {
            return Ok(sweep);
        }
    }
    Err(EconError::NoConvergence(MAX_SWEEPS))
}

/// Linear regression absorbing one or more fixed-effect factors by the
/// within transformation.
pub fn panel_ols(table: &DataTable, spec: &RegressionSpec) -> Result<FitResult> {
    if spec.fixed_effect_factors.is_empty() {
        return Err(EconError::InvalidArgument(
            "panel_ols needs at least one fixed-effect factor".into(),
        ));
    }
    let mut inner = spec.clone();
    inner.include_intercept = false;
    let extra: Vec<&str> = spec.fixed_effect_factors.iter().map(String::as_str).collect();
    let d = build_design(table, &inner, &extra)?;
    let n = d.n();
    let k = d.x.ncols();

    let mut factors = Vec::new();
    for name in &spec.fixed_effect_factors {
        let keys = table.column(name)?.keys();
        let sel: Vec<String> = d.rows.iter().map(|&r| keys[r].clone().unwrap_or_default()).collect();
        let (ids, levels) = group_ids(&sel);
        if levels < 2 {
            return Err(EconError::DegenerateFactor(name.clone()));
        }
        factors.push(Factor { ids, levels });
    }
    let absorbed: usize =
        factors.iter().map(|f| f.levels).sum::<usize>() - (factors.len() - 1);
    let needed = k + absorbed + 1;
    if n < needed {
        return Err(EconError::TooFewRows { needed, got: n });
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    columns.push(d.y.clone());
    for j in 0..k {
        columns.push(d.x.column(j).iter().copied().collect());
    }
    let original_norms: Vec<f64> =
        columns.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let sweeps = demean(&mut columns, &factors, d.weights.as_deref())?;

    for j in 0..k {
        let norm = columns[j + 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-8 * original_norms[j + 1].max(f64::MIN_POSITIVE) {
            return Err(EconError::NoVariationAfterDemeaning(d.names[j].clone()));
        }
    }

    let y_dm = columns[0].clone();
    let mut x_dm = DMatrix::<f64>::zeros(n, k);
    for j in 0..k {
        x_dm.column_mut(j).copy_from_slice(&columns[j + 1]);
    }
    let fit = weighted_ls(&x_dm, &y_dm, d.weights.as_deref(), &d.names)?;
    let dof_resid = n - k - absorbed;
    let (cov, reference) = covariance(
        spec.vcov.kind,
        &CovInput {
            bread: &fit.bread,
            x: &x_dm,
            residuals: &fit.residuals,
            weights: d.weights.as_deref(),
            clusters: d.clusters.as_deref(),
            dof_resid,
        },
    )?;

    let w = |i: usize| d.weights.as_ref().map_or(1.0, |w| w[i]);
    let tss: f64 = (0..n).map(|i| w(i) * y_dm[i] * y_dm[i]).sum();
    let ssr: f64 = (0..n).map(|i| w(i) * fit.residuals[i].powi(2)).sum();
    let r_squared = (tss > 0.0).then(|| 1.0 - ssr / tss);

    let mut notes = d.notes();
    if spec.include_intercept {
        notes.push("intercept absorbed by fixed effects".into());
    }
    notes.push(format!(
        "absorbed {} level(s) from {} ({} demeaning sweep(s))",
        absorbed,
        spec.fixed_effect_factors.join(", "),
        sweeps
    ));
    notes.push(vcov_note(&spec.vcov, d.n_clusters()));
    Ok(assemble(FitParts {
        method: "panel_ols".into(),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;

    fn panel() -> DataTable {
        DataTable::new(
            "p",
            vec![
                Column::real("id", vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]),
                Column::real("y", vec![1.0, 2.0, 3.0, 5.0, 2.0, 2.5]),
                Column::real("x", vec![0.0, 1.0, 0.5, 2.0, 1.0, 1.5]),
                Column::real("z", vec![7.0, 7.0, 3.0, 3.0, 1.0, 1.0]),
                Column::real("one", vec![1.0; 6]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_within_entity_is_rejected() {
        let spec = RegressionSpec::new("y", &["x", "z"]).with_fixed_effects(&["id"]);
        assert_eq!(
            panel_ols(&panel(), &spec).unwrap_err(),
            EconError::NoVariationAfterDemeaning("z".into())
        );
    }

    #[test]
    fn single_level_factor_is_degenerate() {
        let spec = RegressionSpec::new("y", &["x"]).with_fixed_effects(&["one"]);
        assert_eq!(
            panel_ols(&panel(), &spec).unwrap_err(),
            EconError::DegenerateFactor("one".into())
        );
    }

    #[test]
    fn one_way_dof_subtracts_levels() {
        let spec = RegressionSpec::new("y", &["x"]).with_fixed_effects(&["id"]);
        let fit = panel_ols(&panel(), &spec).unwrap();
        assert_eq!(fit.dof_resid, 6 - 1 - 3);
        assert_eq!(fit.coefficient_names, vec!["x"]);
    }
}
