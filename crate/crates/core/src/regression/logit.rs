use nalgebra::{DMatrix, DVector};

use super::{assemble, build_design, FitParts, FitResult, Reference, RegressionSpec, INTERCEPT};
use crate::data::DataTable;
use crate::error::{EconError, Result};
use crate::linalg::PivotedQr;

/// Coefficient magnitude beyond which the fit is declared separated.
const SEPARATION_BOUND: f64 = 30.0;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn scaled_qr(x: &DMatrix<f64>, w: &[f64]) -> PivotedQr {
    let mut xs = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xs.row_mut(i).scale_mut(wi.sqrt());
    }
    PivotedQr::new(&xs)
}

/// Binary logit by iteratively reweighted least squares.
///
/// Converges when the largest coefficient change falls below `tol`; the
/// covariance is the inverse observed information at the solution.
pub fn logit_fit(
    table: &DataTable,
    spec: &RegressionSpec,
    max_iter: usize,
    tol: f64,
) -> Result<FitResult> {
    if !spec.fixed_effect_factors.is_empty() {
        return Err(EconError::InvalidArgument("logit does not absorb fixed effects".into()));
    }
    let d = build_design(table, spec, &[])?;
    let n = d.n();
    let k = d.x.ncols();
    if d.y.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(EconError::NonBinaryOutcome(spec.outcome.clone()));
    }
    if n < k + 1 {
        return Err(EconError::TooFewRows { needed: k + 1, got: n });
    }
    let fw = |i: usize| d.weights.as_ref().map_or(1.0, |w| w[i]);

    let mut beta = vec![0.0; k];
    let mut converged = None;
    for iter in 1..=max_iter {
        let eta = &d.x * DVector::from_column_slice(&beta);
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let v = (p * (1.0 - p)).max(1e-12);
            w[i] = fw(i) * v;
            z[i] = eta[i] + (d.y[i] - p) / v;
        }
        let qr = scaled_qr(&d.x, &w);
        if !qr.is_full_rank() {
            let cols: Vec<String> =
                qr.deficient_columns().into_iter().map(|j| d.names[j].clone()).collect();
            return Err(if iter == 1 {
                EconError::RankDeficient { columns: cols }
            } else {
                EconError::Separation(cols.join(", "))
            });
        }
        let zs: Vec<f64> = z.iter().zip(&w).map(|(z, w)| z * w.sqrt()).collect();
        let next = qr.solve(&zs);
        if let Some(j) = next.iter().position(|b| !b.is_finite() || b.abs() > SEPARATION_BOUND) {
            return Err(EconError::Separation(d.names[j].clone()));
        }
        let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        if change < tol {
            converged = Some(iter);
            break;
        }
    }

    let eta = &d.x * DVector::from_column_slice(&beta);
    let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let Some(iterations) = converged else {
        if probs.iter().zip(&d.y).all(|(p, y)| (p - y).abs() < 1e-6) {
            return Err(EconError::Separation("all fitted probabilities are 0 or 1".into()));
        }
        return Err(EconError::NoConvergence(max_iter));
    };
    let w: Vec<f64> = probs.iter().enumerate().map(|(i, p)| fw(i) * p * (1.0 - p)).collect();
    let qr = scaled_qr(&d.x, &w);
    if !qr.is_full_rank() {
        return Err(EconError::Separation("information matrix is singular".into()));
    }
    let cov = qr.xtx_inverse();
    let log_likelihood: f64 =
        (0..n).map(|i| fw(i) * (d.y[i] * eta[i] - softplus(eta[i]))).sum();
    let residuals = d.y.iter().zip(&probs).map(|(y, p)| y - p).collect();

    let mut notes = d.notes();
    notes.push(format!("IRLS converged in {iterations} iteration(s)"));
    Ok(assemble(FitParts {
        method: "logit".into(),
        names: d.names,
        beta,
        cov,
        reference: Reference::Normal,
        n_obs: n,
        dof_resid: n - k,
        r_squared: None,
        log_likelihood: Some(log_likelihood),
        notes,
        residuals,
        rows: d.rows,
    }))
}

/// Fitted probabilities for every row of `table`; rows with a missing
/// regressor get `None`.
pub fn predict_proba(fit: &FitResult, table: &DataTable) -> Result<Vec<Option<f64>>> {
    let n = table.row_count();
    let mut eta = vec![Some(0.0); n];
    for (name, b) in fit.coefficient_names.iter().zip(&fit.coefficients) {
        if name == INTERCEPT {
            eta.iter_mut().for_each(|e| *e = e.map(|v| v + b));
            continue;
        }
        let col = table.numeric(name)?;
        for (e, x) in eta.iter_mut().zip(col) {
            *e = match (*e, x) {
                (Some(v), Some(x)) => Some(v + b * x),
                _ => None,
            };
        }
    }
    Ok(eta.into_iter().map(|e| e.map(sigmoid)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;

    fn tbl(x: Vec<f64>, y: Vec<f64>) -> DataTable {
        DataTable::new("t", vec![Column::real("x", x), Column::real("y", y)]).unwrap()
    }

    #[test]
    fn symmetric_data_gives_zero_intercept() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..10 {
            x.extend([-1.0, 1.0, -1.0, 1.0]);
            y.extend([0.0, 1.0, 1.0, 0.0]);
        }
        // a few informative rows so the slope is finite and nonzero
        x.extend([-1.0, 1.0]);
        y.extend([0.0, 1.0]);
        let fit = logit_fit(&tbl(x, y), &RegressionSpec::new("y", &["x"]), 100, 1e-8).unwrap();
        assert!(fit.coefficient(INTERCEPT).unwrap().abs() < 1e-6);
        assert!(fit.coefficient("x").unwrap() > 0.0);
    }

    #[test]
    fn separated_data_is_rejected() {
        let x: Vec<f64> = (-5..5).map(|v| v as f64 + 0.5).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        assert!(matches!(
            logit_fit(&tbl(x, y), &RegressionSpec::new("y", &["x"]), 100, 1e-8).unwrap_err(),
            EconError::Separation(_)
        ));
    }

    #[test]
    fn non_binary_outcome() {
        let err = logit_fit(
            &tbl(vec![1.0, 2.0, 3.0], vec![0.0, 2.0, 1.0]),
            &RegressionSpec::new("y", &["x"]),
            100,
            1e-8,
        )
        .unwrap_err();
        assert_eq!(err, EconError::NonBinaryOutcome("y".into()));
    }

    #[test]
    fn zero_coefficients_predict_one_half() {
        let t = tbl(vec![1.0, -3.0, 7.0], vec![0.0, 1.0, 0.0]);
        let fit = FitResult {
            method: "logit".into(),
            coefficient_names: vec![INTERCEPT.into(), "x".into()],
            coefficients: vec![0.0, 0.0],
            covariance: vec![vec![0.0; 2]; 2],
            standard_errors: vec![0.0; 2],
            p_values: vec![1.0; 2],
            n_obs: 3,
            dof_resid: 1,
            r_squared: None,
            reference: Reference::Normal,
            log_likelihood: None,
            notes: vec![],
            residuals: vec![],
            rows: vec![],
        };
        let p = predict_proba(&fit, &t).unwrap();
        assert!(p.iter().all(|p| *p == Some(0.5)));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
