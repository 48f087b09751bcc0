use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::DataTable;
use crate::error::{EconError, Result};
use crate::linalg::PivotedQr;

/// Jumps in the first stage smaller than this are treated as zero.
pub const ZERO_FIRST_STAGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Triangular,
    Uniform,
}

impl Kernel {
    /// Weight at normalized distance `u = |x − c| / h`.
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Triangular if u < 1.0 => 1.0 - u,
            Kernel::Uniform if u <= 1.0 => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RddDesign {
    Sharp,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RddSpec {
    pub outcome: String,
    pub running: String,
    pub cutoff: f64,
    /// Rule-of-thumb bandwidth when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub kernel: Kernel,
    /// Polynomial order of the local fit on each side (0, 1 or 2).
    #[serde(default = "one")]
    pub order: usize,
}

fn one() -> usize {
    1
}

impl RddSpec {
    pub fn new(outcome: &str, running: &str, cutoff: f64) -> Self {
        Self {
            outcome: outcome.into(),
            running: running.into(),
            cutoff,
            bandwidth: None,
            kernel: Kernel::Triangular,
            order: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RddResult {
    pub design: RddDesign,
    pub effect: f64,
    pub standard_error: f64,
    pub p_value: f64,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub order: usize,
    pub n_left: usize,
    pub n_right: usize,
    /// Jump in treatment take-up at the cutoff (fuzzy design only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<f64>,
    pub notes: Vec<String>,
}

/// Rule-of-thumb bandwidth 1.84·sd·n^(−1/5).
pub fn rule_of_thumb_bandwidth(running: &[f64]) -> f64 {
    let n = running.len() as f64;
    let mean = running.iter().sum::<f64>() / n;
    let var = running.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.84 * var.sqrt() * n.powf(-0.2)
}

/// Weighted local polynomial fits of several series on one side of the cutoff.
struct SideFit {
    /// Intercept (value at the cutoff) per series.
    at_cutoff: Vec<f64>,
    /// HC1 covariance of the intercepts across series.
    cov: DMatrix<f64>,
    n: usize,
}

fn fit_side(dx: &[f64], w: &[f64], series: &[Vec<f64>], order: usize, side: &str) -> Result<SideFit> {
    let n = dx.len();
    let p = order + 1;
    if n < p + 1 {
        return Err(EconError::InsufficientSupport { side: side.into(), got: n, needed: p + 1 });
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = dx[i].powi(j as i32);
        }
    }
    let mut xs = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xs.row_mut(i).scale_mut(wi.sqrt());
    }
    let qr = PivotedQr::new(&xs);
    if !qr.is_full_rank() {
        return Err(EconError::InsufficientSupport { side: side.into(), got: n, needed: p + 1 });
    }
    let bread = qr.xtx_inverse();
    let mut at_cutoff = Vec::new();
    let mut scores = Vec::new();
    for y in series {
        let ys: Vec<f64> = y.iter().zip(w).map(|(y, w)| y * w.sqrt()).collect();
        let beta = qr.solve(&ys);
        let fitted = &x * DVector::from_column_slice(&beta);
        // influence of each row on the intercept: e_0' bread x_i w_i e_i
        let b0 = bread.row(0).clone_owned();
        let infl: Vec<f64> = (0..n)
            .map(|i| (b0.clone() * x.row(i).transpose())[0] * w[i] * (y[i] - fitted[i]))
            .collect();
        at_cutoff.push(beta[0]);
        scores.push(infl);
    }
    let dof = (n - p) as f64;
    let factor = n as f64 / dof;
    let s = series.len();
    let mut cov = DMatrix::zeros(s, s);
    for a in 0..s {
        for b in 0..s {
            cov[(a, b)] = factor * scores[a].iter().zip(&scores[b]).map(|(u, v)| u * v).sum::<f64>();
        }
    }
    Ok(SideFit { at_cutoff, cov, n })
}

struct Window {
    bandwidth: f64,
    left: SideFit,
    right: SideFit,
    notes: Vec<String>,
}

fn local_fits(table: &DataTable, spec: &RddSpec, extra: Option<&str>) -> Result<Window> {
    if spec.order > 2 {
        return Err(EconError::InvalidArgument(format!(
            "polynomial order must be 0, 1 or 2, got {}",
            spec.order
        )));
    }
    let mut needed = vec![spec.outcome.as_str(), spec.running.as_str()];
    needed.extend(extra);
    let rows = table.complete_rows(&needed)?;
    let grab = |name: &str| -> Result<Vec<f64>> {
        let c = table.numeric(name)?;
        Ok(rows.iter().map(|&r| c[r].expect("complete row")).collect())
    };
    let x = grab(&spec.running)?;
    let mut series = vec![grab(&spec.outcome)?];
    if let Some(d) = extra {
        series.push(grab(d)?);
    }
    if x.len() < 2 {
        return Err(EconError::TooFewRows { needed: 2, got: x.len() });
    }
    let mut notes = Vec::new();
    let h = match spec.bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(EconError::BandwidthNonpositive(h)),
        None => {
            let h = rule_of_thumb_bandwidth(&x);
            notes.push(format!("bandwidth {h:.6} from the rule of thumb 1.84*sd*n^(-1/5)"));
            h
        }
    };
    if !(h > 0.0) {
        return Err(EconError::BandwidthNonpositive(h));
    }

    let mut sides: [(Vec<f64>, Vec<f64>, Vec<Vec<f64>>); 2] = Default::default();
    for (i, &xi) in x.iter().enumerate() {
        let d = xi - spec.cutoff;
        let w = spec.kernel.weight(d.abs() / h);
        if w <= 0.0 {
            continue;
        }
        let s = &mut sides[usize::from(d >= 0.0)];
        s.0.push(d);
        s.1.push(w);
        if s.2.is_empty() {
            s.2 = vec![Vec::new(); series.len()];
        }
        for (k, ser) in series.iter().enumerate() {
            s.2[k].push(ser[i]);
        }
    }
    for s in sides.iter_mut() {
        if s.2.is_empty() {
            s.2 = vec![Vec::new(); series.len()];
        }
    }
    let [l, r] = sides;
    let left = fit_side(&l.0, &l.1, &l.2, spec.order, "left")?;
    let right = fit_side(&r.0, &r.1, &r.2, spec.order, "right")?;
    notes.push(format!(
        "{:?} kernel, order {} local polynomial, {} left / {} right observation(s) in window",
        spec.kernel, spec.order, left.n, right.n
    ));
    Ok(Window { bandwidth: h, left, right, notes })
}

/// Two-sided p-value of `effect / se` against the standard normal.
pub(crate) fn normal_p(effect: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if effect == 0.0 { 1.0 } else { 0.0 };
    }
    let sf = Normal::new(0.0, 1.0).expect("standard normal").sf((effect / se).abs());
    (2.0 * sf).clamp(0.0, 1.0)
}

/// Sharp regression discontinuity: difference of the two one-sided local
/// polynomial intercepts at the cutoff; observations at the cutoff count as
/// treated.
pub fn rdd_sharp(table: &DataTable, spec: &RddSpec) -> Result<RddResult> {
    let w = local_fits(table, spec, None)?;
    let effect = w.right.at_cutoff[0] - w.left.at_cutoff[0];
    let se = (w.right.cov[(0, 0)] + w.left.cov[(0, 0)]).sqrt();
    Ok(RddResult {
        design: RddDesign::Sharp,
        effect,
        standard_error: se,
        p_value: normal_p(effect, se),
        bandwidth: w.bandwidth,
        kernel: spec.kernel,
        order: spec.order,
        n_left: w.left.n,
        n_right: w.right.n,
        first_stage: None,
        notes: w.notes,
    })
}

/// Fuzzy regression discontinuity: ratio of the outcome jump to the jump in
/// `treatment`, with a delta-method standard error that accounts for the
/// covariance between the two jumps.
pub fn rdd_fuzzy(table: &DataTable, spec: &RddSpec, treatment: &str) -> Result<RddResult> {
    let w = local_fits(table, spec, Some(treatment))?;
    let jy = w.right.at_cutoff[0] - w.left.at_cutoff[0];
    let jd = w.right.at_cutoff[1] - w.left.at_cutoff[1];
    if jd.abs() < ZERO_FIRST_STAGE {
        return Err(EconError::ZeroFirstStage(jd));
    }
    let v = &w.right.cov + &w.left.cov;
    let tau = jy / jd;
    let var = v[(0, 0)] / (jd * jd) + jy * jy * v[(1, 1)] / jd.powi(4)
        - 2.0 * jy * v[(0, 1)] / jd.powi(3);
    let se = var.max(0.0).sqrt();
    let mut notes = w.notes;
    notes.push(format!("first-stage jump in {treatment}: {jd:.6}"));
    Ok(RddResult {
        design: RddDesign::Fuzzy,
        effect: tau,
        standard_error: se,
        p_value: normal_p(tau, se),
        bandwidth: w.bandwidth,
        kernel: spec.kernel,
        order: spec.order,
        n_left: w.left.n,
        n_right: w.right.n,
        first_stage: Some(jd),
        notes,
    })
}
